"""End-to-end pipeline driven by a JSON manifest, and the RTF benchmark.

Stages run in order: synth-data, train-wp, train-lm, build-graph,
train-am, decode, score.  Relative paths in the manifest resolve against
its ``workdir``.  Every random draw derives from the manifest ``seed``.
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .am import StreamingAdapter, ToyModel, TrainConfig, train
from .ctc import Posteriorgram
from .decoder import DecodeConfig, DecodeStats, Hypothesis, decode, oracle_wer, wer, write_nbest
from .errors import ConfigError, DataError, WpctcError
from .fst import SymbolTable, Wfst, read_text_file, write_text
from .graph import Lexicon, build_decoding_graph
from .lm import estimate, read_arpa
from .streaming import StreamConfig, stream
from .synth import SynthCorpus, spec_from_dict, synth_generate
from .wordpiece import WordpieceModel, train_wordpiece

log = logging.getLogger(__name__)

PATH_FIELDS = ("corpus", "wordpiece_model", "lexicon", "lm", "graph", "am_checkpoint")
OUTPUT_FIELDS = ("nbest", "report")
REPORT_VERSION = 1


class StageError(WpctcError):
    """A pipeline stage failed; ``cause`` is the original exception."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class Manifest:
    seed: int
    workdir: str
    paths: dict[str, str]
    synth: dict[str, Any] = field(default_factory=dict)
    wordpiece: dict[str, Any] = field(default_factory=dict)
    lm: dict[str, Any] = field(default_factory=dict)
    am: dict[str, Any] = field(default_factory=dict)
    decode: dict[str, Any] = field(default_factory=dict)
    stream: dict[str, Any] | None = None
    workers: int = 1

    def path(self, name: str) -> str:
        p = self.paths[name]
        return p if os.path.isabs(p) else os.path.join(self.workdir, p)

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> Manifest:
        if "seed" not in d:
            raise ConfigError("manifest is missing required field 'seed'")
        paths = dict(d.get("paths", {}))
        for name in PATH_FIELDS:
            if name not in paths:
                raise ConfigError(f"manifest is missing required field 'paths.{name}'")
        paths.setdefault("nbest", "nbest.txt")
        paths.setdefault("report", "report.json")
        known = {"seed", "workdir", "paths", "synth", "wordpiece", "lm", "am", "decode", "stream", "workers"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown manifest fields: {sorted(unknown)}")
        workdir = d.get("workdir", ".")
        if not os.path.isabs(workdir):
            workdir = os.path.join(base_dir, workdir)
        m = cls(int(d["seed"]), workdir, paths, dict(d.get("synth", {})), dict(d.get("wordpiece", {})),
                dict(d.get("lm", {})), dict(d.get("am", {})), dict(d.get("decode", {})),
                d.get("stream"), int(d.get("workers", 1)))
        m.decode_config()
        m.stream_config()
        if m.workers < 1:
            raise ConfigError("workers must be >= 1")
        return m

    @classmethod
    def load(cls, path) -> Manifest:
        try:
            with open(path, encoding="utf-8") as f:
                d = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"manifest {path} does not exist") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"manifest {path} is not valid JSON: {e}") from None
        return cls.from_dict(d, os.path.dirname(os.path.abspath(path)))

    def decode_config(self) -> DecodeConfig:
        try:
            return DecodeConfig(**self.decode)
        except TypeError as e:
            raise ConfigError(f"bad decode options: {e}") from None

    def stream_config(self) -> StreamConfig | None:
        if not self.stream:
            return None
        try:
            return StreamConfig(**self.stream)
        except TypeError as e:
            raise ConfigError(f"bad stream options: {e}") from None

    def train_config(self) -> TrainConfig:
        opts = {k: v for k, v in self.am.items() if k in TrainConfig.__dataclass_fields__}
        opts["seed"] = self.seed
        if "stage_fractions" in opts:
            opts["stage_fractions"] = tuple(opts["stage_fractions"])
        return TrainConfig(**opts)


def save_graph(graph: Wfst, path) -> None:
    path = os.fspath(path)
    with open(path, "w", encoding="utf-8") as f:
        write_text(graph, f)
    graph.isymbols.write(path + ".isyms")
    graph.osymbols.write(path + ".osyms")


def load_graph(path) -> Wfst:
    path = os.fspath(path)
    for p in (path, path + ".isyms", path + ".osyms"):
        if not os.path.exists(p):
            raise DataError(f"graph file {p} does not exist")
    return read_text_file(path, SymbolTable.read(path + ".isyms"), SymbolTable.read(path + ".osyms"))


def wordpiece_targets(model: WordpieceModel, transcripts: Sequence[Sequence[str]]) -> list[list[int]]:
    return [[uid for w in words for uid in model.segment(w).pieces] for words in transcripts]


def posteriors_for(model: ToyModel, features: np.ndarray, stream_cfg: StreamConfig | None) -> Posteriorgram:
    if stream_cfg is None:
        return model.forward(features)
    if stream_cfg.right_context < model.context:
        log.warning("right context %d is shorter than the model's splice context %d; "
                    "streaming output will differ from full-sequence output",
                    stream_cfg.right_context, model.context)
    per_frame = stream(features, StreamingAdapter(model), stream_cfg)
    return Posteriorgram(per_frame[::model.stride], frame_shift_ms=10.0 * model.stride)


_worker_graph: Wfst | None = None


def _init_worker(graph_path):
    global _worker_graph
    _worker_graph = load_graph(graph_path)


def _decode_one(args):
    post, cfg = args
    return decode(post, _worker_graph, cfg)


def decode_many(posts: Sequence[Posteriorgram], graph: Wfst, cfg: DecodeConfig, workers: int = 1,
                graph_path: str | None = None) -> list[tuple[list[Hypothesis], DecodeStats]]:
    """Decode utterances, optionally in worker processes; results keep input order.

    Workers re-read the graph from ``graph_path``, so it is required when
    ``workers > 1``.
    """
    if workers <= 1 or len(posts) < 2:
        return [decode(p, graph, cfg) for p in posts]
    if graph_path is None:
        raise ConfigError("parallel decoding needs the graph on disk")
    with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(graph_path,)) as pool:
        return list(pool.map(_decode_one, [(p, cfg) for p in posts], chunksize=8))


def _stage(name: str, fn: Callable, timings: dict):
    log.info("stage %s", name)
    started = time.perf_counter()
    try:
        out = fn()
    except Exception as e:
        raise StageError(name, e) from e
    timings[name] = time.perf_counter() - started
    return out


def run_pipeline(manifest: Manifest) -> dict:
    """Run all stages and write the n-best file and JSON report; returns the report."""
    m = manifest
    os.makedirs(m.workdir, exist_ok=True)
    timings: dict[str, float] = {}
    started = time.perf_counter()

    def synth_stage():
        spec = spec_from_dict({**m.synth, "seed": m.seed})
        corpus = synth_generate(spec)
        corpus.save(m.path("corpus"))
        return corpus

    corpus: SynthCorpus = _stage("synth-data", synth_stage, timings)
    transcripts = corpus.transcripts()

    def wp_stage():
        opts = dict(m.wordpiece)
        vocab = opts.pop("vocab_size", 64)
        model = train_wordpiece(corpus.word_counts(), int(vocab), **opts)
        model.save(m.path("wordpiece_model"))
        lex = Lexicon.from_wordpiece(model, sorted(corpus.word_counts()))
        lex.write(m.path("lexicon"))
        return model

    wp = _stage("train-wp", wp_stage, timings)

    def lm_stage():
        lm = estimate(transcripts, **m.lm)
        with open(m.path("lm"), "w", encoding="utf-8") as f:
            f.write(lm.to_arpa())

    _stage("train-lm", lm_stage, timings)

    def graph_stage():
        lm = read_arpa(m.path("lm"))
        lex = Lexicon.read(m.path("lexicon"))
        g = build_decoding_graph("wordpiece", wordpiece=WordpieceModel.load(m.path("wordpiece_model")),
                                 lexicon=lex, lm=lm)
        save_graph(g, m.path("graph"))
        return g

    graph = _stage("build-graph", graph_stage, timings)

    def am_stage():
        opts = m.am
        model = ToyModel.init(corpus.feat_dim, len(wp) + 1, context=int(opts.get("context", 4)),
                              stride=int(opts.get("stride", 4)), hidden=tuple(opts.get("hidden", (128,))),
                              seed=m.seed)
        targets = wordpiece_targets(wp, transcripts)
        res = train(model, [u.features for u in corpus.utterances], targets, m.train_config())
        model.save(m.path("am_checkpoint"))
        return res

    train_res = _stage("train-am", am_stage, timings)

    def decode_stage():
        model = ToyModel.load(m.path("am_checkpoint"))
        scfg = m.stream_config()
        posts = [posteriors_for(model, u.features, scfg) for u in corpus.utterances]
        return decode_many(posts, graph, m.decode_config(), m.workers, m.path("graph"))

    decoded = _stage("decode", decode_stage, timings)

    def score_stage():
        errors = oracle_errors = ref_words = 0
        frames = skipped = 0
        decode_time = audio = 0.0
        with open(m.path("nbest"), "w", encoding="utf-8") as f:
            for utt, (nbest, stats) in zip(corpus.utterances, decoded):
                write_nbest(f, utt.utt_id, nbest)
                n = max(1, len(utt.words))
                best = nbest[0].words if nbest else []
                errors += wer(utt.words, best) * n
                oracle_errors += (oracle_wer(nbest, utt.words) if nbest else 1.0) * n
                ref_words += n
                frames += stats.frames_total
                skipped += stats.frames_skipped
                decode_time += stats.wall_time
                audio += stats.audio_duration
        return {
            "wer": round(errors / ref_words, 6),
            "oracle_wer": round(oracle_errors / ref_words, 6),
            "rtf": decode_time / audio if audio else 0.0,
            "frames_skipped_fraction": round(skipped / frames, 6) if frames else 0.0,
            "num_utterances": len(corpus.utterances),
            "num_words": ref_words,
            "frames_decoded": frames,
            "frames_skipped": skipped,
        }

    report = _stage("score", score_stage, timings)
    report.update({
        "version": REPORT_VERSION,
        "seed": m.seed,
        "stride": int(m.am.get("stride", 4)),
        "vocab_size": len(wp),
        "graph_states": graph.num_states,
        "graph_arcs": graph.num_arcs(),
        "training_skipped_utterances": train_res.skipped,
        "final_train_loss": round(train_res.epoch_losses[-1], 6),
        "wall_time": {**{k: round(v, 3) for k, v in timings.items()},
                      "total": round(time.perf_counter() - started, 3)},
    })
    with open(m.path("report"), "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    return report


@dataclass
class BenchCase:
    name: str
    stride: int
    unit_type: str
    graph: Wfst
    posteriors: list[Posteriorgram]


def bench_rtf(cases: Sequence[BenchCase], configs: Sequence[tuple[str, DecodeConfig]],
              repeats: int = 1, workers: int = 1) -> list[dict]:
    """One row per (case, config): decode all posteriors and time them.

    RTF is total decode wall time over total audio duration; with
    ``repeats > 1`` the fastest repeat is reported.
    """
    if workers > 1:
        log.info("bench timing runs single-process; ignoring workers=%d", workers)
    rows = []
    for case in cases:
        audio = sum(p.duration_ms for p in case.posteriors) / 1000.0
        for label, cfg in configs:
            best = None
            for _ in range(max(1, repeats)):
                results = [decode(p, case.graph, cfg) for p in case.posteriors]
                wall = sum(s.wall_time for _, s in results)
                if best is None or wall < best[0]:
                    best = (wall, results)
            wall, results = best
            frames = sum(s.frames_total for _, s in results)
            skipped = sum(s.frames_skipped for _, s in results)
            rows.append({
                "case": case.name,
                "config": label,
                "stride": case.stride,
                "unit_type": case.unit_type,
                "blank_skip": cfg.blank_skip_threshold is not None,
                "frames_decoded": frames,
                "frames_skipped_pct": 100.0 * skipped / frames if frames else 0.0,
                "wall_time": wall,
                "rtf": wall / audio if audio else 0.0,
                "hypotheses": [r[0].words if r else [] for r, _ in results],
            })
    return rows


def format_bench_table(rows: Sequence[dict]) -> str:
    header = ["case", "config", "stride", "unit_type", "blank_skip", "frames", "skipped%", "rtf"]
    lines = ["\t".join(header)]
    for r in rows:
        lines.append("\t".join([r["case"], r["config"], str(r["stride"]), r["unit_type"],
                                "on" if r["blank_skip"] else "off", str(r["frames_decoded"]),
                                f"{r['frames_skipped_pct']:.1f}", f"{r['rtf']:.4f}"]))
    return "\n".join(lines) + "\n"
