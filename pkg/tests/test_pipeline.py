import json
import math
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from wpctc.ctc import Posteriorgram
from wpctc.decoder import DecodeConfig, decode
from wpctc.errors import ConfigError
from wpctc.fst import TROPICAL, SymbolTable, Wfst
from wpctc.pipeline import (BenchCase, Manifest, StageError, bench_rtf, decode_many, format_bench_table,
                            load_graph, run_pipeline, save_graph)

SCHEMA = json.loads((Path(__file__).parent.parent / "docs" / "report.schema.json").read_text())


def test_missing_lm_path_is_named(small_manifest):
    _, d = small_manifest
    del d["paths"]["lm"]
    with pytest.raises(ConfigError, match="paths.lm"):
        Manifest.from_dict(d)


def test_unknown_field_rejected(small_manifest):
    _, d = small_manifest
    d["colour"] = "red"
    with pytest.raises(ConfigError, match="colour"):
        Manifest.from_dict(d)


def test_manifest_resolves_paths(small_manifest, tmp_path):
    path, _ = small_manifest
    m = Manifest.load(path)
    assert m.path("lm") == str(tmp_path / "work" / "lm.arpa")
    assert m.train_config().seed == 3
    with pytest.raises(ConfigError, match="does not exist"):
        Manifest.load(tmp_path / "nope.json")


def test_pipeline_report_and_determinism(small_manifest, tmp_path):
    path, d = small_manifest
    reports, nbests = [], []
    for run in ("a", "b"):
        d["workdir"] = str(tmp_path / run)
        m = Manifest.from_dict(d, str(tmp_path))
        reports.append(run_pipeline(m))
        nbests.append(Path(m.path("nbest")).read_bytes())
        on_disk = json.loads(Path(m.path("report")).read_text())
        jsonschema.validate(on_disk, SCHEMA)
    assert nbests[0] == nbests[1]
    strip = lambda r: {k: v for k, v in r.items() if k not in ("wall_time", "rtf")}  # noqa: E731
    assert strip(reports[0]) == strip(reports[1])
    r = reports[0]
    assert r["num_utterances"] == 30
    assert 0.0 <= r["oracle_wer"] <= r["wer"]
    assert set(r["wall_time"]) >= {"synth-data", "train-wp", "build-graph", "train-am", "decode", "total"}


def test_stage_failure_names_stage(small_manifest, tmp_path):
    _, d = small_manifest
    d["wordpiece"]["vocab_size"] = 3  # below the alphabet size
    with pytest.raises(StageError, match="train-wp") as err:
        run_pipeline(Manifest.from_dict(d, str(tmp_path)))
    assert isinstance(err.value.cause, ConfigError)


def loop_graph():
    g = Wfst(TROPICAL, SymbolTable(["<blk>", "a", "b"]), SymbolTable(["a", "b"]))
    g.add_state()
    g.set_start(0)
    g.set_final(0)
    g.add_arc(0, 1, 0, 0.0, 0)
    g.add_arc(0, 2, 1, 0.5, 0)
    g.add_arc(0, 3, 2, 0.5, 0)
    return g


def random_posts(n, T=30, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        x = rng.normal(size=(T, 3))
        x[:, 0] += 3.0
        out.append(Posteriorgram(x - np.logaddexp.reduce(x, axis=1, keepdims=True)))
    return out


def test_parallel_decoding_keeps_order(tmp_path):
    g = loop_graph()
    save_graph(g, tmp_path / "g.fst")
    posts = random_posts(6)
    cfg = DecodeConfig(nbest=2)
    serial = decode_many(posts, g, cfg, 1)
    parallel = decode_many(posts, load_graph(tmp_path / "g.fst"), cfg, 2, str(tmp_path / "g.fst"))
    assert [[h.words for h in nb] for nb, _ in serial] == [[h.words for h in nb] for nb, _ in parallel]
    assert [nb[0].words for nb, _ in serial] == [decode(p, g, cfg)[0][0].words for p in posts]


def test_graph_roundtrip(tmp_path):
    g = loop_graph()
    save_graph(g, tmp_path / "g.fst")
    back = load_graph(tmp_path / "g.fst")
    assert back.num_arcs() == g.num_arcs()
    assert back.isymbols.find(2) == "a" and back.osymbols.find(2) == "b"


def test_bench_rows():
    case = BenchCase("toy", 4, "wordpiece", loop_graph(), random_posts(3, seed=1))
    rows = bench_rtf([case], [("skip", DecodeConfig()), ("noskip", DecodeConfig(blank_skip_threshold=None))])
    assert [r["config"] for r in rows] == ["skip", "noskip"]
    assert rows[1]["frames_skipped_pct"] == 0.0
    assert rows[0]["frames_decoded"] == rows[1]["frames_decoded"] == 90
    assert all(math.isfinite(r["rtf"]) and r["rtf"] >= 0 for r in rows)
    table = format_bench_table(rows)
    assert table.splitlines()[0].split("\t")[:3] == ["case", "config", "stride"]
    assert len(table.splitlines()) == 3
