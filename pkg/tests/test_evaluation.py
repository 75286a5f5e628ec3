import json
from pathlib import Path

import pytest

from ccot_emo.errors import DuplicateId, MissingAudio, MissingSessionKey, MissingTranscript, UnknownLabel
from ccot_emo.evaluation import (
    EvalConfig,
    MatrixCell,
    PredictionRecord,
    build_report_table,
    calibrate_folds,
    compute_accuracy,
    load_manifest,
    make_folds,
    oracle_responder,
    render_report_markdown,
    run_ablation_matrix,
    run_eval,
    write_manifest,
)
from ccot_emo.fixture_corpus import make_fixture_corpus
from ccot_emo.model_client import MockClient
from ccot_emo.prompting import AblationConfig


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("fx")
    return load_manifest(make_fixture_corpus(root, per_label=4, n_sessions=4))


def rec(uid, parsed, gold, pf=False, error=None):
    return PredictionRecord(uid, "all", "ccot", "x", "raw", parsed, gold, parse_failure=pf, error=error)


# manifests -----------------------------------------------------------------------


def small_manifest(tmp_path, rows, name="iemocap.jsonl", touch=True):
    if touch:
        for r in rows:
            (tmp_path / r["audio_path"]).write_bytes(b"")
    return write_manifest(tmp_path / name, rows)


def row(uid, label, **kw):
    return {"utterance_id": uid, "audio_path": f"{uid}.wav", "transcript": "hello", "label": label, **kw}


def test_label_merge(tmp_path):
    path = small_manifest(tmp_path, [row("a", "neutral"), row("b", "excited"), row("c", "sad")])
    m = load_manifest(path, "iemocap")
    assert [e.label for e in m.entries] == ["neutral", "happy", "sad"]
    assert m.entries[1].raw_label == "excited"
    assert m.entries[0].audio_path == tmp_path / "a.wav"


def test_drop_rule_shrinks_manifest(tmp_path):
    path = small_manifest(tmp_path, [row("a", "joy"), row("b", "disgust"), row("c", "anger")], "meld.jsonl")
    m = load_manifest(path, "meld")
    assert len(m) == 2 and m.dropped == 1
    assert [e.label for e in m.entries] == ["happy", "angry"]


def test_label_map_file(tmp_path):
    path = small_manifest(tmp_path, [row("a", "content"), row("b", "bored")], "esd.jsonl")
    (tmp_path / "map.json").write_text(json.dumps({"map": {"content": "happy"}, "drop": ["bored"]}))
    m = load_manifest(path, "esd", label_map_file=tmp_path / "map.json")
    assert [e.label for e in m.entries] == ["happy"]


def test_manifest_errors(tmp_path):
    with pytest.raises(DuplicateId):
        load_manifest(small_manifest(tmp_path, [row("a", "sad"), row("a", "sad")]))
    with pytest.raises(UnknownLabel):
        load_manifest(small_manifest(tmp_path, [row("a", "bored")]))
    with pytest.raises(MissingAudio):
        load_manifest(small_manifest(tmp_path, [row("zz", "sad")], touch=False))
    assert len(load_manifest(small_manifest(tmp_path, [row("zz", "sad")], touch=False), check_audio=False)) == 1


def test_missing_transcript_needs_file(tmp_path):
    r = row("a", "sad")
    del r["transcript"]
    path = small_manifest(tmp_path, [r])
    with pytest.raises(MissingTranscript):
        load_manifest(path)
    (tmp_path / "tx.jsonl").write_text('{"utterance_id": "a", "transcript": "so sad"}\n')
    assert load_manifest(path, transcripts_file=tmp_path / "tx.jsonl").entries[0].transcript == "so sad"


# folds -------------------------------------------------------------------------------


def test_loso_partition(corpus):
    folds = make_folds(corpus, "leave_one_session_out")
    assert len(folds) == 4
    tests = [e.utterance_id for f in folds for e in f.test]
    assert sorted(tests) == sorted(e.utterance_id for e in corpus.entries)
    for f in folds:
        test_sessions = {e.session for e in f.test}
        assert len(test_sessions) == 1
        assert test_sessions.isdisjoint(e.session for e in f.calibration)
        assert len(f.calibration) + len(f.test) == len(corpus)


def test_single_test_fold(corpus):
    (f,) = make_folds(corpus, "single_test")
    assert f.test == corpus.entries == f.calibration


def test_loso_requires_sessions(tmp_path):
    m = load_manifest(small_manifest(tmp_path, [row("a", "sad", session="1"), row("b", "sad")]))
    with pytest.raises(MissingSessionKey):
        make_folds(m, "leave_one_session_out")


# metrics --------------------------------------------------------------------------------


def test_accuracy_hand_count():
    m = compute_accuracy([rec("1", "a", "a"), rec("2", "a", "b"), rec("3", "b", "b")])
    assert m.accuracy == pytest.approx(2 / 3)
    assert m.confusion["b"]["a"] == 1
    assert m.macro_recall == pytest.approx((1 + 0.5) / 2)


def test_all_correct_diagonal():
    m = compute_accuracy([rec(str(i), g, g) for i, g in enumerate("aabbc")])
    assert m.accuracy == 1.0
    for g, r in m.confusion.items():
        assert all(v == 0 for k, v in r.items() if k != g)


def test_parse_failure_strict():
    recs = [rec("1", "a", "a"), rec("2", "b", "b"), rec("3", "a", "a"), rec("4", None, "b", pf=True)]
    m = compute_accuracy(recs)
    assert m.accuracy == 0.75 and m.parse_failure_rate == 0.25
    assert sum(sum(r.values()) for r in m.confusion.values()) == 4


def test_empty_metrics():
    m = compute_accuracy([])
    assert m.empty and m.accuracy == 0.0 and m.n == 0


# end to end ------------------------------------------------------------------------------


@pytest.mark.parametrize("strategy", ["ccot", "direct", "zscot"])
def test_oracle_run(corpus, strategy, tmp_path):
    client = MockClient(oracle_responder(corpus))
    res = run_eval(corpus, strategy, None, client, EvalConfig(out_dir=tmp_path, fold_scheme="leave_one_session_out"))
    assert res.metrics.accuracy == 1.0 and res.metrics.parse_failure_rate == 0.0
    assert [r.utterance_id for r in res.records] == sorted(e.utterance_id for e in corpus.entries)
    assert (tmp_path / "predictions.jsonl").exists() and (tmp_path / "config.json").exists()
    snap = json.loads((tmp_path / "config.json").read_text())
    assert snap["pipeline_version"].startswith("ccot-emo/")
    if strategy == "ccot":
        assert len(list((tmp_path / "eg").glob("*.json"))) == len(corpus)
    calls_per_utt = {"ccot": 1, "direct": 1, "zscot": 2}[strategy]
    assert client.calls == calls_per_utt * len(corpus)


def test_adversarial_run(corpus):
    res = run_eval(corpus, "ccot", None, MockClient("Z"))
    assert res.metrics.accuracy == 0.0 and res.metrics.parse_failure_rate == 1.0


def test_lenient_mode_reasks(corpus):
    oracle = oracle_responder(corpus)
    client = MockClient(lambda req: oracle(req) if "option letter of your answer" in req.text else "hmm")
    res = run_eval(corpus, "direct", None, client, EvalConfig(strict=False))
    assert res.metrics.accuracy == 1.0
    assert client.calls == 2 * len(corpus)


def test_per_utterance_errors_do_not_abort(corpus, tmp_path):
    broken = corpus.entries[0].audio_path.with_name("broken.wav")
    broken.write_bytes(b"not a wav at all")
    from dataclasses import replace

    entries = (replace(corpus.entries[0], audio_path=broken),) + corpus.entries[1:]
    m = replace(corpus, entries=entries)
    res = run_eval(m, "ccot", None, MockClient(lambda req: "(A)"))
    assert res.partial
    assert res.records[0].error is not None or any(r.error for r in res.records)
    assert res.metrics.n == len(corpus)


def test_eg_cache_reused(corpus, tmp_path):
    cfg = EvalConfig(eg_cache_dir=tmp_path / "cache")
    run_eval(corpus, "ccot", None, MockClient("(A)"), cfg)
    files = sorted((tmp_path / "cache").glob("*.json"))
    assert len(files) == len(corpus)
    stamps = [f.stat().st_mtime_ns for f in files]
    run_eval(corpus, "ccot", AblationConfig(drop_relations=True), MockClient("(A)"), cfg)
    assert [f.stat().st_mtime_ns for f in sorted((tmp_path / "cache").glob("*.json"))] == stamps


def test_model_described_precall(corpus):
    oracle = oracle_responder(corpus)
    seen = []

    def respond(req):
        seen.append(req.text)
        return "Loud and fast." if "describe the speaker" in req.text else oracle(req)

    res = run_eval(corpus, "ccot", AblationConfig(attribute_source="model_described"), MockClient(respond))
    assert res.metrics.accuracy == 1.0
    assert sum("Loud and fast." in t for t in seen) == len(corpus)


def test_fold_calibration_excludes_test_session(corpus):
    cals = calibrate_folds(corpus, EvalConfig(fold_scheme="leave_one_session_out"))
    assert len(cals) == 4
    assert len({c.calibration_id for c in cals.values()}) == 4
    for fold_id, stats in cals.items():
        assert stats.features["pitch"].n == 3 * 5


# reports ---------------------------------------------------------------------------------


def test_overall_is_plain_mean():
    t = build_report_table([("row", {"a": 64.7, "b": 57.0, "c": 59.3, "d": 54.3, "e": 50.1})])
    assert t["rows"][0]["overall"] == pytest.approx(57.08)
    assert "57.08" in render_report_markdown(t)


def test_missing_cell_skipped_in_overall():
    t = build_report_table([("r", {"a": 50.0, "b": None})], ["a", "b"])
    assert t["rows"][0]["overall"] == 50.0 and t["rows"][0]["missing"] == ["b"]
    assert "n/a" in render_report_markdown(t)


def test_matrix_two_configs(corpus, tmp_path):
    cells = [MatrixCell("full"), MatrixCell("no text", ablation=AblationConfig(drop_text=True))]
    table = run_ablation_matrix({"synthetic": corpus}, cells, MockClient(oracle_responder(corpus)), EvalConfig(out_dir=tmp_path))
    assert [r["overall"] for r in table["rows"]] == [100.0, 100.0]
    assert (tmp_path / "ablation.md").exists()


def test_matrix_isolates_failing_cell(corpus):
    cells = [MatrixCell("ok"), MatrixCell("bad", strategy="nope")]
    table = run_ablation_matrix({"synthetic": corpus}, cells, MockClient(oracle_responder(corpus)))
    assert table["rows"][0]["overall"] == 100.0
    assert table["rows"][1]["overall"] is None and "bad/synthetic" in table["errors"]


def test_empty_matrix(corpus, caplog):
    table = run_ablation_matrix({"synthetic": corpus}, [], MockClient("A"))
    assert table["rows"] == [] and "empty" in caplog.text
