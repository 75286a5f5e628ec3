"""Command-line entry point: ``ccot-emo <subcommand> ...``.

Exit codes: 0 success, 1 configuration/usage error, 2 run finished with
per-utterance failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import jsonschema

from . import PIPELINE_VERSION
from .audio_io import ANALYSIS_RATE, load_audio
from .calibration import CalibrationStats, discretize, fit_calibration
from .crossmodal import RemoteRelationBackend, RuleTable, infer_relations
from .emotion_graph import Provenance, assemble_graph, read_graph, serialize_canonical, write_graph
from .errors import CCoTEmoError, ConfigError, InvalidAblation, ManifestError
from .evaluation import (
    EvalConfig,
    MatrixCell,
    build_report_table,
    load_manifest,
    oracle_responder,
    render_report_markdown,
    run_ablation_matrix,
    run_eval,
    write_report,
)
from .model_client import (
    GenerationParams,
    HTTPChatClient,
    MockClient,
    ModelRequest,
    RateLimiter,
    ReplayClient,
    disable_network,
)
from .prompting import (
    STRATEGIES,
    AblationConfig,
    LabelSet,
    apply_ablation,
    build_ccot_prompt,
    build_direct_prompt,
    build_zscot_prompts,
)
from .prosody_dsp import DSPConfig, extract_acoustic_profile
from .resources import load_json
from .text_attributes import DEFAULT_K, LexiconBackend, RemoteTextBackend, analyze_text

logger = logging.getLogger("ccot_emo")

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------- #
# config handling
# --------------------------------------------------------------------------- #


def load_config(path: str | Path) -> dict:
    """Read and schema-validate an experiment TOML; relative paths are made absolute."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML ({exc})") from exc
    schema = load_json("experiment.schema.json")
    errors = sorted(jsonschema.Draft202012Validator(schema).iter_errors(cfg), key=lambda e: list(e.path))
    if errors:
        lines = [f"  {'/'.join(map(str, e.path)) or '<root>'}: {e.message}" for e in errors]
        raise ConfigError(f"{path}: config does not match the schema:\n" + "\n".join(lines))
    base = path.resolve().parent

    def absolute(p: str) -> str:
        q = Path(p).expanduser()
        return str(q if q.is_absolute() else base / q)

    exp = cfg["experiment"]
    for key in ("output_dir", "eg_cache_dir", "prompt_dir"):
        if key in exp:
            exp[key] = absolute(exp[key])
    for ds in cfg["datasets"]:
        for key in ("manifest", "label_map", "transcripts"):
            if key in ds:
                ds[key] = absolute(ds[key])
        if not Path(ds["manifest"]).exists():
            raise ConfigError(f"dataset {ds['id']!r}: manifest {ds['manifest']} does not exist")
    client = cfg.setdefault("client", {"kind": "replay"})
    for key in ("cache_dir", "record_dir", "replay_dir"):
        if key in client:
            client[key] = absolute(client[key])
    cfg["_path"] = str(path.resolve())
    return cfg


def _params(client_cfg: dict) -> GenerationParams:
    return GenerationParams(
        model_id=client_cfg.get("model_id", "mock"),
        temperature=float(client_cfg.get("temperature", 0.0)),
        max_output_tokens=int(client_cfg.get("max_output_tokens", 256)),
    )


def make_client(client_cfg: dict, manifests=None, offline: bool = False):
    kind = client_cfg.get("kind", "replay")
    if offline and kind == "http":
        store = client_cfg.get("replay_dir") or client_cfg.get("record_dir") or client_cfg.get("cache_dir")
        if not store:
            raise ConfigError("--offline with an http client needs client.replay_dir (or record_dir/cache_dir)")
        kind = "replay"
        client_cfg = dict(client_cfg, replay_dir=store)
    if kind == "replay":
        if "replay_dir" not in client_cfg:
            raise ConfigError("replay client needs client.replay_dir")
        return ReplayClient(client_cfg["replay_dir"])
    if kind == "mock":
        return MockClient(client_cfg["mock_response"], client_cfg.get("model_id", "mock"), client_cfg.get("cache_dir"))
    if kind == "mock-oracle":
        responders = [oracle_responder(m) for m in manifests or ()]

        def respond(req: ModelRequest) -> str:
            for r in responders:
                try:
                    return r(req)
                except KeyError:
                    continue
            return "unknown"

        return MockClient(respond, client_cfg.get("model_id", "mock-oracle"), client_cfg.get("cache_dir"))
    limiter = RateLimiter(int(client_cfg.get("max_in_flight", 4)), client_cfg.get("requests_per_minute"))
    return HTTPChatClient(
        client_cfg["endpoint"],
        client_cfg["model_id"],
        api_key_env=client_cfg.get("api_key_env", "CCOT_EMO_API_KEY"),
        timeout_s=float(client_cfg.get("timeout_s", 60.0)),
        limiter=limiter,
        cache_dir=client_cfg.get("cache_dir"),
        record_dir=client_cfg.get("record_dir"),
    )


def make_eval_config(cfg: dict, client, offline: bool, out_dir: str | None = None) -> EvalConfig:
    exp = cfg["experiment"]
    backends = cfg.get("backends", {})
    params = _params(cfg.get("client", {}))
    if offline or backends.get("text", "offline") == "offline":
        text_backend = LexiconBackend()
    else:
        text_backend = RemoteTextBackend(client, params, exp.get("prompt_dir"))
    if offline or backends.get("relations", "rules") == "rules":
        relation_backend = RuleTable()
    else:
        fallback = RuleTable() if backends.get("relation_fallback", True) else None
        relation_backend = RemoteRelationBackend(client, params, fallback, exp.get("prompt_dir"))
    return EvalConfig(
        out_dir=Path(out_dir or exp["output_dir"]),
        dsp=DSPConfig.from_mapping(cfg.get("dsp", {})),
        sample_rate=int(exp.get("sample_rate", ANALYSIS_RATE)),
        keyword_k=int(backends.get("keyword_k", DEFAULT_K)),
        text_backend=text_backend,
        relation_backend=relation_backend,
        params=params,
        workers=int(exp.get("workers", 4)),
        eg_cache_dir=Path(exp["eg_cache_dir"]) if "eg_cache_dir" in exp else None,
        strict=bool(exp.get("strict", True)),
        include_silent=bool(exp.get("include_silent", False)),
        prompt_dir=Path(exp["prompt_dir"]) if "prompt_dir" in exp else None,
    )


def _load_manifests(cfg: dict) -> list:
    out = []
    for ds in cfg["datasets"]:
        out.append(
            load_manifest(
                ds["manifest"],
                ds["id"],
                label_map_file=ds.get("label_map"),
                transcripts_file=ds.get("transcripts"),
                check_audio=ds.get("check_audio", True),
            )
        )
    return out


def _ablation(data: dict | None) -> AblationConfig:
    return AblationConfig.from_mapping(dict(data or {}))


def _write_snapshot(cfg: dict, out_dir: Path, offline: bool) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    snap = {k: v for k, v in cfg.items() if not k.startswith("_")}
    snap["pipeline_version"] = PIPELINE_VERSION
    snap["offline"] = offline
    snap["config_path"] = cfg.get("_path")
    (out_dir / "experiment_config.json").write_text(json.dumps(snap, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------- #
# subcommands
# --------------------------------------------------------------------------- #


def _emit(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=2, ensure_ascii=False)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _dsp(args) -> DSPConfig:
    return DSPConfig.from_file(args.dsp_config) if getattr(args, "dsp_config", None) else DSPConfig()


def cmd_extract(args) -> int:
    clip = load_audio(args.input, args.sample_rate)
    profile = extract_acoustic_profile(clip, _dsp(args))
    _emit({"source": str(args.input), **profile.to_dict(), "audit": profile.audit()}, args.out)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    manifest = load_manifest(args.manifest, args.dataset_id)
    cfg = _dsp(args)
    profiles = []
    for e in manifest.entries:
        try:
            profiles.append(extract_acoustic_profile(load_audio(e.audio_path, args.sample_rate, e.utterance_id), cfg))
        except CCoTEmoError as exc:
            logger.warning("%s skipped: %s", e.utterance_id, exc)
    stats = fit_calibration(profiles, manifest.dataset_id, include_silent=args.include_silent)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    stats.save(args.out)
    logger.info("calibration %s written to %s", stats.calibration_id, args.out)
    return EXIT_OK


def cmd_build_graph(args) -> int:
    if args.transcript is None and args.transcript_file is None:
        raise UsageError("build-graph needs --transcript or --transcript-file")
    transcript = args.transcript if args.transcript is not None else Path(args.transcript_file).read_text(encoding="utf-8").strip()
    stats = CalibrationStats.load(args.calibration)
    clip = load_audio(args.input, args.sample_rate)
    attrs = discretize(extract_acoustic_profile(clip, _dsp(args)), stats)
    text = analyze_text(transcript, LexiconBackend(), k=args.k)
    rules = RuleTable()
    rels = infer_relations(attrs, text.sentiment, rules)
    prov = Provenance(stats.corpus_id, stats.calibration_id, text.backend_id, rules.backend_id, text.transcript_hash)
    eg = assemble_graph(attrs, text, rels, prov)
    if args.eg_out:
        out = Path(args.eg_out)
        if out.suffix == ".json":
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_bytes(serialize_canonical(eg).encode("utf-8"))
        else:
            write_graph(out, Path(args.input).stem, eg)
    else:
        print(serialize_canonical(eg))
    return EXIT_OK


def cmd_prompt(args) -> int:
    labelset = LabelSet.for_dataset(args.dataset)
    audio_ref = args.audio_ref or (Path(args.eg).stem if args.eg else "")
    if args.strategy == "ccot":
        if not args.eg:
            raise UsageError("--strategy ccot needs --eg")
        ablation = AblationConfig(args.drop_acoustic, args.drop_text, args.drop_relations, args.format, args.budget).validate()
        eg_text = apply_ablation(read_graph(args.eg), ablation)
        bundles = [build_ccot_prompt(eg_text, labelset, audio_ref, ablation, args.prompt_dir)]
    elif args.strategy == "direct":
        bundles = [build_direct_prompt(labelset, audio_ref, args.prompt_dir)]
    else:
        stage1, stage2 = build_zscot_prompts(labelset, audio_ref, args.prompt_dir)
        bundles = [stage1, stage2("<stage-one rationale>")]
    blocks = []
    for b in bundles:
        blocks.append("\n".join(f"[{tag}]\n{text}" for tag, text in b.segments))
    print("\n\n".join(blocks))
    if not args.dry_run:
        logger.info("prompt only renders text; use eval to query a model (treated as --dry-run)")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    if args.offline:
        disable_network()
    manifests = _load_manifests(cfg)
    client = make_client(cfg.get("client", {}), manifests, args.offline)
    out_root = Path(args.out_dir or cfg["experiment"]["output_dir"])
    _write_snapshot(cfg, out_root, args.offline)
    strategy = args.strategy or cfg["experiment"].get("strategy", "ccot")
    ablation = _ablation(cfg.get("ablation"))
    partial = False
    for m, ds in zip(manifests, cfg["datasets"]):
        ecfg = make_eval_config(cfg, client, args.offline, str(out_root / m.dataset_id))
        ecfg.fold_scheme = ds.get("fold_scheme", "single_test")
        if args.sample_rate:
            ecfg.sample_rate = args.sample_rate
        if args.eg_out:
            ecfg.eg_cache_dir = Path(args.eg_out)
        result = run_eval(m, strategy, ablation, client, ecfg)
        met = result.metrics
        print(f"{m.dataset_id}\t{strategy}\taccuracy={100 * met.accuracy:.2f}%\tparse_failures={met.n_parse_failures}\terrors={met.n_errors}")
        partial = partial or result.partial
    return EXIT_PARTIAL if partial else EXIT_OK


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    if args.offline:
        disable_network()
    matrix = cfg.get("matrix", [])
    cells = []
    for item in matrix:
        item = dict(item)
        name = item.pop("name")
        strategy = item.pop("strategy", cfg["experiment"].get("strategy", "ccot"))
        cells.append(MatrixCell(name, strategy, _ablation(item)))
    manifests = _load_manifests(cfg)
    client = make_client(cfg.get("client", {}), manifests, args.offline)
    out_root = Path(args.out_dir or cfg["experiment"]["output_dir"])
    _write_snapshot(cfg, out_root, args.offline)
    ecfg = make_eval_config(cfg, client, args.offline, str(out_root))
    schemes = {ds["id"]: ds.get("fold_scheme", "single_test") for ds in cfg["datasets"]}
    table = run_ablation_matrix({m.dataset_id: m for m in manifests}, cells, client, ecfg, schemes)
    print(render_report_markdown(table), end="")
    return EXIT_PARTIAL if table["errors"] or table["partial"] else EXIT_OK


def cmd_report(args) -> int:
    if args.table:
        data = json.loads(Path(args.table).read_text(encoding="utf-8"))
        rows = [(r["name"], r["values"]) for r in data["rows"]]
        table = build_report_table(rows, data.get("datasets"))
    else:
        if not args.runs:
            raise UsageError("report needs --table or --runs")
        grouped: dict[str, dict] = {}
        order = []
        for spec in args.runs:
            name, _, path = spec.rpartition("=")
            rep = json.loads((Path(path) / "report.json").read_text(encoding="utf-8"))
            name = name or f"{rep['strategy']}-{rep['ablation_fingerprint']}"
            if name not in grouped:
                grouped[name] = {}
                order.append(name)
            grouped[name][rep["dataset_id"]] = 100.0 * rep["metrics"]["accuracy"]
        table = build_report_table([(n, grouped[n]) for n in order])
    if args.out_dir:
        write_report(table, args.out_dir, args.stem)
    print(render_report_markdown(table, args.decimals), end="")
    return EXIT_OK


def cmd_make_fixture(args) -> int:
    from .fixture_corpus import make_fixture_corpus

    path = make_fixture_corpus(args.out_dir, per_label=args.per_label, n_sessions=args.sessions, seed=args.seed)
    print(path)
    return EXIT_OK


# --------------------------------------------------------------------------- #
# parser
# --------------------------------------------------------------------------- #


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ccot-emo", description="Emotion-graph prompting pipeline for speech emotion recognition.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--version", action="version", version=PIPELINE_VERSION)
    sub = p.add_subparsers(dest="command", required=True)

    def audio_opts(sp):
        sp.add_argument("--sample-rate", type=int, default=ANALYSIS_RATE, help="analysis rate in Hz (default 16000)")
        sp.add_argument("--dsp-config", help="TOML file with DSP parameters (optional [dsp] table)")

    sp = sub.add_parser("extract", help="audio file -> acoustic profile JSON")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out")
    audio_opts(sp)
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("calibrate", help="manifest -> tertile thresholds JSON")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--dataset-id")
    sp.add_argument("--include-silent", action="store_true")
    audio_opts(sp)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("build-graph", help="utterance -> Emotion Graph JSON (offline backends)")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--calibration", required=True)
    sp.add_argument("--transcript")
    sp.add_argument("--transcript-file")
    sp.add_argument("-k", type=int, default=DEFAULT_K, help="number of keywords")
    sp.add_argument("--eg-out", help="output .json file or directory")
    audio_opts(sp)
    sp.set_defaults(func=cmd_build_graph)

    sp = sub.add_parser("prompt", help="render a prompt without calling any model")
    sp.add_argument("--eg")
    sp.add_argument("--strategy", choices=STRATEGIES, default="ccot")
    sp.add_argument("--dataset", default="default", help="label set to use (default five options)")
    sp.add_argument("--audio-ref")
    sp.add_argument("--format", choices=("json", "freeform", "unstructured_no_json"), default="json")
    sp.add_argument("--budget", type=int, default=256)
    sp.add_argument("--drop-acoustic", action="store_true")
    sp.add_argument("--drop-text", action="store_true")
    sp.add_argument("--drop-relations", action="store_true")
    sp.add_argument("--prompt-dir")
    sp.add_argument("--dry-run", action="store_true")
    sp.set_defaults(func=cmd_prompt)

    for name, func, helptext in (("eval", cmd_eval, "run one strategy over the configured datasets"), ("ablate", cmd_ablate, "run the configured ablation matrix")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--config", required=True)
        sp.add_argument("--offline", action="store_true", help="offline backends, replay client, no network")
        sp.add_argument("--out-dir")
        if name == "eval":
            sp.add_argument("--strategy", choices=STRATEGIES)
            sp.add_argument("--sample-rate", type=int)
            sp.add_argument("--eg-out", help="directory for the Emotion Graph cache")
        sp.set_defaults(func=func)

    sp = sub.add_parser("report", help="build a Markdown/JSON table with an Overall column")
    sp.add_argument("--table", help="JSON with rows of per-dataset accuracies (%%)")
    sp.add_argument("--runs", nargs="*", help="run dirs, optionally NAME=DIR")
    sp.add_argument("--out-dir")
    sp.add_argument("--stem", default="report")
    sp.add_argument("--decimals", type=int, default=2)
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("make-fixture", help="write the synthetic tone corpus and its manifest")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--per-label", type=int, default=11)
    sp.add_argument("--sessions", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_make_fixture)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (ConfigError, InvalidAblation, ManifestError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc, ConfigError) and "schema" in str(exc):
            print("see ccot_emo/data/experiment.schema.json for the config layout", file=sys.stderr)
        return EXIT_CONFIG
    except (CCoTEmoError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
