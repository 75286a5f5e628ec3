"""Manifests, folds, end-to-end evaluation runs, metrics and ablation reports.

A run goes: load manifest -> make folds -> per fold, calibrate on the
calibration split -> per test utterance, build (or load) its Emotion Graph,
prompt the model with the chosen strategy, parse the option letter -> score.
Outputs are written in a fixed order so that a run against a replay store is
byte-reproducible.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from . import PIPELINE_VERSION
from .audio_io import ANALYSIS_RATE, load_audio
from .calibration import CalibrationStats, discretize, fit_calibration
from .crossmodal import RuleTable, infer_relations
from .emotion_graph import EmotionGraph, Provenance, assemble_graph, parse_graph, serialize_canonical, write_graph
from .errors import (
    CCoTEmoError,
    ConfigError,
    DuplicateId,
    EmptyCorpus,
    ManifestError,
    MissingAudio,
    MissingSessionKey,
    MissingTranscript,
    ParseFailure,
    UnknownLabel,
)
from .model_client import GenerationParams, ModelClient, ModelRequest, parse_option_letter, sha256_file
from .prompting import (
    STRATEGIES,
    AblationConfig,
    LabelSet,
    apply_ablation,
    build_ccot_prompt,
    build_describe_prompt,
    build_direct_prompt,
    build_zscot_prompts,
)
from .prosody_dsp import AcousticProfile, DSPConfig, extract_acoustic_profile
from .resources import PROMPT_VERSION, load_template
from .text_attributes import DEFAULT_K, LexiconBackend, analyze_text

logger = logging.getLogger(__name__)

FOLD_SCHEMES = ("single_test", "leave_one_session_out")
PARSE_FAILURE = "PARSE_FAILURE"
ERROR = "ERROR"


# --------------------------------------------------------------------------- #
# manifests
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class ManifestEntry:
    utterance_id: str
    audio_path: Path
    transcript: str
    label: str
    session: str | None = None
    language: str = "en"
    raw_label: str = ""


@dataclass(frozen=True)
class DatasetManifest:
    dataset_id: str
    entries: tuple[ManifestEntry, ...]
    labelset: LabelSet
    path: Path | None = None
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def sessions(self) -> list[str]:
        return sorted({e.session for e in self.entries if e.session is not None})


def _read_transcripts(path: str | Path) -> dict[str, str]:
    """``.jsonl``: rows with ``utterance_id``/``transcript``; anything else: a JSON object ``{id: text}``."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix != ".jsonl":
        return {str(k): str(v) for k, v in json.loads(text).items()}
    out = {}
    for line in text.splitlines():
        if line.strip():
            row = json.loads(line)
            out[str(row["utterance_id"])] = str(row["transcript"])
    return out


def _labelset_with_map(labelset: LabelSet, map_file: str | Path | None) -> LabelSet:
    if map_file is None:
        return labelset
    data = json.loads(Path(map_file).read_text(encoding="utf-8"))
    merged = dict(labelset.label_map)
    merged.update({k.lower(): v.lower() for k, v in data.get("map", {}).items()})
    drop = tuple(sorted(set(labelset.drop) | {d.lower() for d in data.get("drop", ())}))
    return replace(labelset, label_map=tuple(sorted(merged.items())), drop=drop)


def load_manifest(
    path: str | Path,
    dataset_id: str | None = None,
    labelset: LabelSet | None = None,
    label_map_file: str | Path | None = None,
    transcripts_file: str | Path | None = None,
    check_audio: bool = True,
) -> DatasetManifest:
    """Read a JSON Lines manifest; relative audio paths resolve against the manifest's directory.

    Each line: ``utterance_id``, ``audio_path``, ``label``, and optionally
    ``transcript``, ``session``, ``language``. Labels go through the label
    set's mapping (e.g. excited -> happy); rows with a dropped label are
    skipped.
    """
    path = Path(path)
    dataset_id = dataset_id or path.stem
    labelset = _labelset_with_map(labelset or LabelSet.for_dataset(dataset_id), label_map_file)
    extra = _read_transcripts(transcripts_file) if transcripts_file else {}
    entries, seen, dropped = [], set(), 0
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            uid = str(row["utterance_id"])
            audio = Path(row["audio_path"])
            raw = str(row["label"])
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ManifestError(f"{path}:{lineno}: malformed entry ({exc})") from exc
        if uid in seen:
            raise DuplicateId(f"{path}:{lineno}: duplicate utterance_id {uid!r}")
        seen.add(uid)
        label = labelset.map_label(raw)
        if label is None:
            dropped += 1
            continue
        if label not in labelset.names:
            raise UnknownLabel(f"{path}:{lineno}: label {raw!r} is not in {labelset.names}")
        transcript = row.get("transcript")
        if transcript is None:
            transcript = extra.get(uid)
        if transcript is None:
            raise MissingTranscript(f"{path}:{lineno}: {uid} has no transcript and no transcript file covers it")
        if not audio.is_absolute():
            audio = path.parent / audio
        if check_audio and not audio.exists():
            raise MissingAudio(f"{path}:{lineno}: {audio} does not exist")
        session = row.get("session")
        entries.append(
            ManifestEntry(uid, audio, str(transcript), label, None if session is None else str(session), row.get("language", "en"), raw)
        )
    if dropped:
        logger.info("%s: dropped %d rows by label rule", path, dropped)
    return DatasetManifest(dataset_id, tuple(entries), labelset, path, dropped)


def write_manifest(path: str | Path, rows: Iterable[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows), encoding="utf-8")
    return path


# --------------------------------------------------------------------------- #
# folds
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class Fold:
    fold_id: str
    calibration: tuple[ManifestEntry, ...]
    test: tuple[ManifestEntry, ...]


def make_folds(manifest: DatasetManifest, scheme: str = "single_test") -> list[Fold]:
    if scheme == "single_test":
        return [Fold("all", manifest.entries, manifest.entries)]
    if scheme != "leave_one_session_out":
        raise ConfigError(f"fold scheme must be one of {FOLD_SCHEMES}, got {scheme!r}")
    missing = [e.utterance_id for e in manifest.entries if e.session is None]
    if missing:
        raise MissingSessionKey(f"{len(missing)} entries lack a session key, e.g. {missing[0]!r}")
    folds = []
    for s in manifest.sessions:
        test = tuple(e for e in manifest.entries if e.session == s)
        cal = tuple(e for e in manifest.entries if e.session != s)
        folds.append(Fold(f"session-{s}", cal, test))
    return folds


# --------------------------------------------------------------------------- #
# records and metrics
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class PredictionRecord:
    utterance_id: str
    fold: str
    strategy: str
    ablation: str
    raw_response: str | None
    parsed: str | None
    gold: str
    parse_failure: bool = False
    error: str | None = None
    timing_ms: float = 0.0

    @property
    def correct(self) -> bool:
        return self.parsed is not None and not self.parse_failure and self.parsed == self.gold

    def to_dict(self) -> dict:
        """Persisted form; timing is left out so replayed runs are byte-identical."""
        d = asdict(self)
        d.pop("timing_ms")
        d["correct"] = self.correct
        return d


@dataclass(frozen=True)
class Metrics:
    n: int
    n_correct: int
    accuracy: float
    macro_recall: float
    parse_failure_rate: float
    n_parse_failures: int
    n_errors: int
    confusion: dict
    empty: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def compute_accuracy(records: Sequence[PredictionRecord], labels: Sequence[str] | None = None) -> Metrics:
    """Strict scoring: parse failures and per-utterance errors count as wrong."""
    labels = list(labels) if labels else sorted({r.gold for r in records})
    columns = labels + [PARSE_FAILURE, ERROR]
    confusion = {g: {c: 0 for c in columns} for g in labels}
    for r in records:
        row = confusion.setdefault(r.gold, {c: 0 for c in columns})
        if r.error is not None:
            col = ERROR
        elif r.parse_failure:
            col = PARSE_FAILURE
        else:
            col = r.parsed
        row[col] = row.get(col, 0) + 1
    n = len(records)
    if n == 0:
        return Metrics(0, 0, 0.0, 0.0, 0.0, 0, 0, confusion, empty=True)
    n_correct = sum(r.correct for r in records)
    recalls = []
    for g, row in confusion.items():
        total = sum(row.values())
        if total:
            recalls.append(row.get(g, 0) / total)
    n_pf = sum(1 for r in records if r.parse_failure)
    n_err = sum(1 for r in records if r.error is not None)
    return Metrics(n, n_correct, n_correct / n, sum(recalls) / len(recalls), n_pf / n, n_pf, n_err, confusion)


# --------------------------------------------------------------------------- #
# evaluation run
# --------------------------------------------------------------------------- #


@dataclass
class EvalConfig:
    out_dir: Path | None = None
    fold_scheme: str = "single_test"
    dsp: DSPConfig = field(default_factory=DSPConfig)
    sample_rate: int = ANALYSIS_RATE
    keyword_k: int = DEFAULT_K
    text_backend: object = field(default_factory=LexiconBackend)
    relation_backend: object = field(default_factory=RuleTable)
    params: GenerationParams = field(default_factory=GenerationParams)
    workers: int = 4
    eg_cache_dir: Path | None = None
    strict: bool = True
    include_silent: bool = False
    prompt_dir: Path | None = None
    calibration_created_at: str = ""

    def snapshot(self) -> dict:
        return {
            "fold_scheme": self.fold_scheme,
            "dsp": self.dsp.to_dict(),
            "sample_rate": self.sample_rate,
            "keyword_k": self.keyword_k,
            "text_backend": self.text_backend.backend_id,
            "relation_backend": self.relation_backend.backend_id,
            "params": asdict(self.params),
            "strict": self.strict,
            "include_silent": self.include_silent,
            "prompt_version": PROMPT_VERSION,
            "prompt_dir": str(self.prompt_dir) if self.prompt_dir else None,
        }


@dataclass
class ResultSet:
    dataset_id: str
    strategy: str
    ablation: AblationConfig
    records: list[PredictionRecord]
    metrics: Metrics
    folds: list[dict]
    config: dict

    @property
    def partial(self) -> bool:
        return any(r.error is not None for r in self.records)

    def report_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "strategy": self.strategy,
            "ablation": self.ablation.to_dict(),
            "ablation_fingerprint": self.ablation.fingerprint,
            "pipeline_version": PIPELINE_VERSION,
            "metrics": self.metrics.to_dict(),
            "folds": self.folds,
        }


class _ProfileCache:
    """Acoustic profiles keyed by audio content hash, shared across folds."""

    def __init__(self, cfg: EvalConfig):
        self.cfg = cfg
        self._profiles: dict[str, AcousticProfile | Exception] = {}

    def warm(self, entries: Iterable[ManifestEntry]) -> None:
        todo = {}
        for e in entries:
            todo.setdefault(str(e.audio_path), e)
        with ThreadPoolExecutor(max_workers=max(1, self.cfg.workers)) as pool:
            for key, value in zip(todo, pool.map(self._compute, todo.values())):
                self._profiles[key] = value

    def _compute(self, e: ManifestEntry):
        try:
            if not e.audio_path.exists():
                raise MissingAudio(f"{e.audio_path} does not exist")
            clip = load_audio(e.audio_path, self.cfg.sample_rate, e.utterance_id)
            return extract_acoustic_profile(clip, self.cfg.dsp)
        except CCoTEmoError as exc:
            return exc

    def get(self, e: ManifestEntry) -> AcousticProfile:
        value = self._profiles.get(str(e.audio_path))
        if value is None:
            value = self._profiles[str(e.audio_path)] = self._compute(e)
        if isinstance(value, Exception):
            raise value
        return value


def _calibrate_fold(manifest: DatasetManifest, fold: Fold, profiles: _ProfileCache, cfg: EvalConfig) -> CalibrationStats:
    usable = []
    for e in fold.calibration:
        try:
            usable.append(profiles.get(e))
        except CCoTEmoError as exc:
            logger.warning("%s excluded from calibration: %s", e.utterance_id, exc)
    corpus_id = manifest.dataset_id if fold.fold_id == "all" else f"{manifest.dataset_id}/{fold.fold_id}"
    try:
        return fit_calibration(usable, corpus_id, cfg.include_silent, cfg.calibration_created_at)
    except EmptyCorpus as exc:
        raise ConfigError(f"fold {fold.fold_id}: {exc}") from exc


def calibrate_folds(manifest: DatasetManifest, cfg: EvalConfig | None = None) -> dict[str, CalibrationStats]:
    """Thresholds per fold, each fitted on that fold's calibration split only."""
    cfg = cfg or EvalConfig()
    profiles = _ProfileCache(cfg)
    profiles.warm(manifest.entries)
    return {f.fold_id: _calibrate_fold(manifest, f, profiles, cfg) for f in make_folds(manifest, cfg.fold_scheme)}


def _eg_cache_key(audio_sha: str, stats: CalibrationStats, transcript: str, cfg: EvalConfig) -> str:
    payload = {
        "audio": audio_sha,
        "pipeline": PIPELINE_VERSION,
        "calibration": stats.calibration_id,
        "transcript": hashlib.sha256(transcript.encode("utf-8")).hexdigest(),
        "text_backend": cfg.text_backend.backend_id,
        "relation_backend": cfg.relation_backend.backend_id,
        "k": cfg.keyword_k,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:32]


def build_emotion_graph(
    entry: ManifestEntry,
    profile: AcousticProfile,
    stats: CalibrationStats,
    cfg: EvalConfig,
    audio_sha: str | None = None,
) -> EmotionGraph:
    """Build one utterance's graph, reading and filling the on-disk cache when configured."""
    cache_path = None
    if cfg.eg_cache_dir is not None:
        audio_sha = audio_sha or sha256_file(entry.audio_path)
        cache_path = Path(cfg.eg_cache_dir) / f"{_eg_cache_key(audio_sha, stats, entry.transcript, cfg)}.json"
        if cache_path.exists():
            return parse_graph(cache_path.read_text(encoding="utf-8"))
    attrs = discretize(profile, stats)
    text = analyze_text(entry.transcript, cfg.text_backend, k=cfg.keyword_k)
    rels = infer_relations(attrs, text.sentiment, cfg.relation_backend)
    prov = Provenance(stats.corpus_id, stats.calibration_id, text.backend_id, cfg.relation_backend.backend_id, text.transcript_hash)
    eg = assemble_graph(attrs, text, rels, prov)
    if cache_path is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        tmp = cache_path.with_suffix(f".{entry.utterance_id}.tmp")
        tmp.write_text(serialize_canonical(eg), encoding="utf-8")
        tmp.replace(cache_path)
    return eg


def _ask(client: ModelClient, text: str, entry: ManifestEntry, params: GenerationParams) -> str:
    return client.query(ModelRequest.build(text, entry.audio_path, params)).text


def _predict(
    entry: ManifestEntry,
    fold: Fold,
    eg: EmotionGraph | None,
    strategy: str,
    ablation: AblationConfig,
    labelset: LabelSet,
    client: ModelClient,
    cfg: EvalConfig,
) -> PredictionRecord:
    uid = entry.utterance_id
    if strategy == "ccot":
        description = None
        if ablation.attribute_source == "model_described":
            description = _ask(client, build_describe_prompt(uid, cfg.prompt_dir).flatten(), entry, cfg.params)
        eg_text = apply_ablation(eg, ablation, description)
        bundle = build_ccot_prompt(eg_text, labelset, uid, ablation, cfg.prompt_dir)
    elif strategy == "direct":
        bundle = build_direct_prompt(labelset, uid, cfg.prompt_dir)
    else:
        stage1, stage2 = build_zscot_prompts(labelset, uid, cfg.prompt_dir)
        rationale = _ask(client, stage1.flatten(), entry, cfg.params)
        bundle = stage2(rationale)
    raw = _ask(client, bundle.flatten(), entry, cfg.params)
    try:
        parsed = parse_option_letter(raw, labelset)
    except ParseFailure:
        if cfg.strict:
            return PredictionRecord(uid, fold.fold_id, strategy, ablation.fingerprint, raw, None, entry.label, parse_failure=True)
        clarify = load_template("clarify", override_dir=cfg.prompt_dir).format(options=labelset.options_text())
        raw = _ask(client, bundle.flatten() + "\n" + raw + "\n" + clarify, entry, cfg.params)
        try:
            parsed = parse_option_letter(raw, labelset)
        except ParseFailure:
            return PredictionRecord(uid, fold.fold_id, strategy, ablation.fingerprint, raw, None, entry.label, parse_failure=True)
    return PredictionRecord(uid, fold.fold_id, strategy, ablation.fingerprint, raw, parsed, entry.label)


def run_eval(
    manifest: DatasetManifest,
    strategy: str,
    ablation: AblationConfig | None,
    client: ModelClient,
    cfg: EvalConfig | None = None,
) -> ResultSet:
    """Evaluate one strategy/ablation over every fold of ``manifest``.

    Per-utterance failures (bad audio, client errors, budget overflow) are
    recorded on the utterance and the run continues; configuration problems
    raise.
    """
    cfg = cfg or EvalConfig()
    if strategy not in STRATEGIES:
        raise ConfigError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    ablation = (ablation or AblationConfig()).validate()
    folds = make_folds(manifest, cfg.fold_scheme)
    profiles = _ProfileCache(cfg)
    profiles.warm(manifest.entries)
    eg_dir = Path(cfg.out_dir) / "eg" if cfg.out_dir else None

    records: list[PredictionRecord] = []
    fold_info = []
    for fold in folds:
        stats = _calibrate_fold(manifest, fold, profiles, cfg)
        if cfg.out_dir:
            cal_dir = Path(cfg.out_dir) / "calibration"
            cal_dir.mkdir(parents=True, exist_ok=True)
            stats.save(cal_dir / f"{fold.fold_id}.json")

        def one(entry: ManifestEntry, fold=fold, stats=stats) -> PredictionRecord:
            t0 = time.perf_counter()
            try:
                eg = None
                if strategy == "ccot":
                    eg = build_emotion_graph(entry, profiles.get(entry), stats, cfg)
                    if eg_dir is not None:
                        write_graph(eg_dir, entry.utterance_id, eg)
                rec = _predict(entry, fold, eg, strategy, ablation, manifest.labelset, client, cfg)
            except CCoTEmoError as exc:
                logger.warning("%s: %s: %s", entry.utterance_id, type(exc).__name__, exc)
                rec = PredictionRecord(
                    entry.utterance_id, fold.fold_id, strategy, ablation.fingerprint, None, None, entry.label,
                    error=f"{type(exc).__name__}: {exc}",
                )
            return replace(rec, timing_ms=(time.perf_counter() - t0) * 1000.0)

        with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as pool:
            fold_records = list(pool.map(one, fold.test))
        records.extend(fold_records)
        fold_metrics = compute_accuracy(fold_records, manifest.labelset.names)
        fold_info.append(
            {
                "fold": fold.fold_id,
                "calibration_id": stats.calibration_id,
                "n_calibration": len(fold.calibration),
                "n_test": len(fold.test),
                "accuracy": fold_metrics.accuracy,
            }
        )

    records.sort(key=lambda r: r.utterance_id)
    config = {
        "dataset_id": manifest.dataset_id,
        "manifest": str(manifest.path) if manifest.path else None,
        "strategy": strategy,
        "ablation": ablation.to_dict(),
        "model_id": getattr(client, "model_id", "unknown"),
        "pipeline_version": PIPELINE_VERSION,
        **cfg.snapshot(),
    }
    result = ResultSet(manifest.dataset_id, strategy, ablation, records, compute_accuracy(records, manifest.labelset.names), fold_info, config)
    if cfg.out_dir:
        write_results(result, cfg.out_dir)
    return result


# --------------------------------------------------------------------------- #
# persistence and reports
# --------------------------------------------------------------------------- #


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def render_result_markdown(result: ResultSet) -> str:
    m = result.metrics
    lines = [
        f"# {result.dataset_id}: {result.strategy} ({result.ablation.fingerprint})",
        "",
        f"- utterances: {m.n}",
        f"- accuracy: {100 * m.accuracy:.2f}%",
        f"- macro recall: {100 * m.macro_recall:.2f}%",
        f"- parse failures: {m.n_parse_failures} ({100 * m.parse_failure_rate:.2f}%)",
        f"- errors: {m.n_errors}",
        "",
        "## Confusion (rows = gold)",
        "",
    ]
    cols = list(result.metrics.confusion and next(iter(result.metrics.confusion.values())).keys())
    lines.append("| gold | " + " | ".join(cols) + " |")
    lines.append("|---" * (len(cols) + 1) + "|")
    for gold, row in m.confusion.items():
        lines.append(f"| {gold} | " + " | ".join(str(row.get(c, 0)) for c in cols) + " |")
    if len(result.folds) > 1:
        lines += ["", "## Folds", "", "| fold | calibration id | n test | accuracy |", "|---|---|---|---|"]
        for f in result.folds:
            lines.append(f"| {f['fold']} | {f['calibration_id']} | {f['n_test']} | {100 * f['accuracy']:.2f}% |")
    return "\n".join(lines) + "\n"


def write_results(result: ResultSet, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "predictions": out / "predictions.jsonl",
        "report_json": out / "report.json",
        "report_md": out / "report.md",
        "config": out / "config.json",
    }
    paths["predictions"].write_text(
        "".join(json.dumps(r.to_dict(), sort_keys=True, ensure_ascii=False) + "\n" for r in result.records),
        encoding="utf-8",
    )
    paths["report_json"].write_text(_dump(result.report_dict()), encoding="utf-8")
    paths["report_md"].write_text(render_result_markdown(result), encoding="utf-8")
    paths["config"].write_text(_dump(result.config), encoding="utf-8")
    return paths


@dataclass(frozen=True)
class MatrixCell:
    name: str
    strategy: str = "ccot"
    ablation: AblationConfig = field(default_factory=AblationConfig)


def overall_mean(values: Iterable[float | None]) -> float | None:
    """Unweighted mean over datasets; missing cells are skipped."""
    present = [v for v in values if v is not None]
    return sum(present) / len(present) if present else None


def build_report_table(rows: Sequence[tuple[str, Mapping[str, float | None]]], datasets: Sequence[str] | None = None) -> dict:
    """Rows of per-dataset accuracy (%) -> table dict with an Overall column."""
    if datasets is None:
        datasets = []
        for _, vals in rows:
            datasets += [d for d in vals if d not in datasets]
    table_rows = []
    for name, vals in rows:
        cells = {d: vals.get(d) for d in datasets}
        table_rows.append(
            {
                "name": name,
                "values": cells,
                "overall": overall_mean(cells.values()),
                "missing": [d for d, v in cells.items() if v is None],
            }
        )
    return {"datasets": list(datasets), "rows": table_rows}


def render_report_markdown(table: dict, decimals: int = 2) -> str:
    fmt = lambda v: "n/a" if v is None else f"{v:.{decimals}f}"  # noqa: E731
    head = ["Method"] + table["datasets"] + ["Overall"]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for row in table["rows"]:
        cells = [row["name"]] + [fmt(row["values"][d]) for d in table["datasets"]] + [fmt(row["overall"])]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def write_report(table: dict, out_dir: str | Path, stem: str = "ablation") -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jpath, mpath = out / f"{stem}.json", out / f"{stem}.md"
    jpath.write_text(_dump(table), encoding="utf-8")
    mpath.write_text(render_report_markdown(table), encoding="utf-8")
    return jpath, mpath


def run_ablation_matrix(
    manifests: Mapping[str, DatasetManifest],
    cells: Sequence[MatrixCell],
    client: ModelClient,
    cfg: EvalConfig | None = None,
    fold_schemes: Mapping[str, str] | None = None,
) -> dict:
    """One evaluation per (cell, dataset); a failing cell is reported, not fatal."""
    cfg = cfg or EvalConfig()
    if not cells or not manifests:
        logger.warning("empty ablation matrix; report has no rows")
    rows, errors, partial = [], {}, []
    for cell in cells:
        values = {}
        for ds, manifest in manifests.items():
            sub = replace(cfg, out_dir=Path(cfg.out_dir) / _slug(cell.name) / ds if cfg.out_dir else None)
            if fold_schemes and ds in fold_schemes:
                sub.fold_scheme = fold_schemes[ds]
            try:
                res = run_eval(manifest, cell.strategy, cell.ablation, client, sub)
                values[ds] = 100.0 * res.metrics.accuracy
                if res.partial:
                    partial.append(f"{cell.name}/{ds}")
            except CCoTEmoError as exc:
                logger.error("cell %r on %s failed: %s", cell.name, ds, exc)
                errors[f"{cell.name}/{ds}"] = f"{type(exc).__name__}: {exc}"
                values[ds] = None
        rows.append((cell.name, values))
    table = build_report_table(rows, list(manifests))
    table["errors"] = errors
    table["partial"] = partial
    table["pipeline_version"] = PIPELINE_VERSION
    if cfg.out_dir:
        write_report(table, cfg.out_dir)
    return table


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name).strip("_") or "cell"


# --------------------------------------------------------------------------- #
# mock responders
# --------------------------------------------------------------------------- #


def oracle_responder(manifest: DatasetManifest) -> Callable[[ModelRequest], str]:
    """Answers every request with the gold label's letter, keyed by audio content."""
    by_audio = {sha256_file(e.audio_path): manifest.labelset.letter_for(e.label) for e in manifest.entries}

    def respond(req: ModelRequest) -> str:
        return f"The answer is ({by_audio[req.audio_sha256]})."

    return respond


def constant_responder(text: str) -> Callable[[ModelRequest], str]:
    return lambda _req: text
