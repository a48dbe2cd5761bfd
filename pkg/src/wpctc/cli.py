"""Command-line entry point: ``wpctc <subcommand> ...``.

Each subcommand takes its settings from flags, falling back to an optional
``--manifest`` file and then to built-in defaults.  Exit codes: 0 success,
2 configuration error, 3 data error, 4 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .am import ToyModel, TrainConfig, train
from .ctc import read_posteriorgram
from .decoder import DecodeConfig, Hypothesis, read_nbest, rescore_nbest, wer, write_nbest
from .errors import ConfigError, DataError, WpctcError
from .fst import SymbolTable, read_text_file
from .graph import Lexicon, build_decoding_graph
from .lm import read_arpa
from .pipeline import (BenchCase, Manifest, StageError, bench_rtf, decode_many, format_bench_table,
                       load_graph, posteriors_for, run_pipeline, save_graph, wordpiece_targets)
from .streaming import StreamConfig
from .synth import SynthCorpus, spec_from_dict, synth_generate
from .wordpiece import WordpieceModel, parse_vocab_size, read_corpus, train_wordpiece

log = logging.getLogger("wpctc")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4


def _manifest_dict(args) -> dict:
    if not getattr(args, "manifest", None):
        return {}
    try:
        with open(args.manifest, encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"manifest {args.manifest} does not exist") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"manifest {args.manifest} is not valid JSON: {e}") from None


def _manifest_path(args, name):
    d = _manifest_dict(args)
    if name not in d.get("paths", {}):
        return None
    base = os.path.dirname(os.path.abspath(args.manifest))
    workdir = os.path.join(base, d.get("workdir", "."))
    p = d["paths"][name]
    return p if os.path.isabs(p) else os.path.join(workdir, p)


def _pick(flag, fallback, default=None):
    if flag is not None:
        return flag
    return fallback if fallback is not None else default


def _require(value, flag):
    if value is None:
        raise ConfigError(f"missing {flag} (give the flag or a manifest that defines it)")
    return value


def _blank_skip(text):
    if text is None:
        return None
    if text.lower() in ("off", "none", "0"):
        return "off"
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"blank skip threshold must be a number or 'off', got {text!r}")


def cmd_synth_data(args) -> int:
    m = _manifest_dict(args)
    opts = dict(m.get("synth", {}))
    if args.words:
        opts["words"] = args.words.split(",")
    for key in ("n_utts", "noise", "feat_dim"):
        if getattr(args, key) is not None:
            opts[key] = getattr(args, key)
    opts["seed"] = _pick(args.seed, m.get("seed"), 0)
    if "words" not in opts:
        raise ConfigError("missing --words (comma separated) or a manifest synth.words list")
    out = _require(_pick(args.out, _manifest_path(args, "corpus") if args.manifest else None), "--out")
    corpus = synth_generate(spec_from_dict(opts))
    corpus.save(out)
    log.info("wrote %d utterances to %s", len(corpus.utterances), out)
    return EXIT_OK


def _word_counts(path) -> dict[str, int]:
    if os.path.isdir(path):
        return SynthCorpus.load(path).word_counts()
    return read_corpus(path)


def cmd_train_wp(args) -> int:
    m = _manifest_dict(args)
    wp_opts = m.get("wordpiece", {})
    corpus_path = _require(_pick(args.corpus, _manifest_path(args, "corpus") if args.manifest else None),
                           "--corpus")
    out = _require(_pick(args.out, _manifest_path(args, "wordpiece_model") if args.manifest else None),
                   "--out")
    vocab = _pick(args.vocab_size, wp_opts.get("vocab_size"))
    vocab = parse_vocab_size(str(_require(vocab, "--vocab-size")))
    counts = _word_counts(corpus_path)
    model = train_wordpiece(counts, vocab,
                            seed_multiplier=_pick(args.seed_multiplier, wp_opts.get("seed_multiplier"), 10),
                            prune_fraction=_pick(args.prune_fraction, wp_opts.get("prune_fraction"), 0.2),
                            em_iterations=_pick(args.em_iterations, wp_opts.get("em_iterations"), 2))
    model.save(out)
    lex_out = _pick(args.lexicon_out, _manifest_path(args, "lexicon") if args.manifest else None)
    if lex_out:
        Lexicon.from_wordpiece(model, sorted(counts)).write(lex_out)
    log.info("trained %d pieces", len(model))
    return EXIT_OK


def cmd_build_graph(args) -> int:
    out = _require(_pick(args.out, _manifest_path(args, "graph") if args.manifest else None), "--out")
    if args.mode == "chenone":
        src = _require(args.input_graph, "--input-graph")
        isyms = SymbolTable.read(_require(args.isymbols, "--isymbols"))
        osyms = SymbolTable.read(_require(args.osymbols, "--osymbols"))
        g = build_decoding_graph("chenone", graph=read_text_file(src, isyms, osyms))
    else:
        wp_path = _require(_pick(args.wordpiece, _manifest_path(args, "wordpiece_model") if args.manifest else None),
                           "--wordpiece")
        lm_path = _require(_pick(args.lm, _manifest_path(args, "lm") if args.manifest else None), "--lm")
        lex_path = _pick(args.lexicon, _manifest_path(args, "lexicon") if args.manifest else None)
        lex = Lexicon.read(lex_path) if lex_path and os.path.exists(lex_path) else None
        g = build_decoding_graph("wordpiece", wordpiece=WordpieceModel.load(wp_path), lexicon=lex,
                                 lm=read_arpa(lm_path), exact_lm=args.exact_lm)
    save_graph(g, out)
    log.info("graph: %d states, %d arcs", g.num_states, g.num_arcs())
    return EXIT_OK


def cmd_train_am(args) -> int:
    m = _manifest_dict(args)
    am = m.get("am", {})
    corpus_path = _require(_pick(args.corpus, _manifest_path(args, "corpus") if args.manifest else None),
                           "--corpus")
    wp_path = _require(_pick(args.wordpiece, _manifest_path(args, "wordpiece_model") if args.manifest else None),
                       "--wordpiece")
    out = _require(_pick(args.out, _manifest_path(args, "am_checkpoint") if args.manifest else None), "--out")
    seed = _pick(args.seed, m.get("seed"), 0)
    corpus = SynthCorpus.load(corpus_path)
    wp = WordpieceModel.load(wp_path)
    model = ToyModel.init(corpus.feat_dim, len(wp) + 1,
                          context=_pick(args.context, am.get("context"), 4),
                          stride=_pick(args.stride, am.get("stride"), 4),
                          hidden=tuple(_pick(args.hidden, am.get("hidden"), [128])), seed=seed)
    cfg = TrainConfig(epochs=_pick(args.epochs, am.get("epochs"), 20),
                      batch_size=_pick(args.batch_size, am.get("batch_size"), 4),
                      peak_lr=_pick(args.peak_lr, am.get("peak_lr"), 1e-3), seed=seed)
    res = train(model, [u.features for u in corpus.utterances], wordpiece_targets(wp, corpus.transcripts()), cfg)
    model.save(out)
    for epoch, loss in enumerate(res.epoch_losses, 1):
        log.info("epoch %d loss %.5f", epoch, loss)
    if res.skipped:
        log.warning("%d utterances skipped as infeasible", res.skipped)
    return EXIT_OK


def _decode_config(args, m) -> DecodeConfig:
    d = dict(m.get("decode", {}))
    for key in ("beam", "max_active", "nbest", "acoustic_scale"):
        if getattr(args, key) is not None:
            d[key] = getattr(args, key)
    if args.blank_skip is not None:
        d["blank_skip_threshold"] = None if args.blank_skip == "off" else args.blank_skip
    try:
        return DecodeConfig(**d)
    except TypeError as e:
        raise ConfigError(f"bad decode options: {e}") from None


def cmd_decode(args) -> int:
    m = _manifest_dict(args)
    graph_path = _require(_pick(args.graph, _manifest_path(args, "graph") if args.manifest else None), "--graph")
    graph = load_graph(graph_path)
    cfg = _decode_config(args, m)
    workers = _pick(args.workers, m.get("workers"), 1)
    refs = None
    if args.posteriors:
        if args.streaming:
            raise ConfigError("--streaming needs --am and features, not precomputed posteriors")
        names = [os.path.splitext(os.path.basename(p))[0] for p in args.posteriors]
        posts = [read_posteriorgram(p) for p in args.posteriors]
    else:
        am_path = _require(_pick(args.am, _manifest_path(args, "am_checkpoint") if args.manifest else None), "--am")
        corpus_path = _require(_pick(args.corpus, _manifest_path(args, "corpus") if args.manifest else None),
                               "--corpus or --posteriors")
        model = ToyModel.load(am_path)
        corpus = SynthCorpus.load(corpus_path)
        scfg = None
        stream_opts = dict(m.get("stream") or {})
        if args.streaming or stream_opts:
            cs = _require(_pick(args.chunk_size, stream_opts.get("chunk_size")), "--chunk-size")
            rc = _pick(args.right_context, stream_opts.get("right_context"), 0)
            scfg = StreamConfig(cs, rc)
        names = [u.utt_id for u in corpus.utterances]
        refs = corpus.transcripts()
        posts = [posteriors_for(model, u.features, scfg) for u in corpus.utterances]
    results = decode_many(posts, graph, cfg, workers, graph_path)
    out = _pick(args.out, _manifest_path(args, "nbest") if args.manifest else None)
    f = open(out, "w", encoding="utf-8") if out else sys.stdout
    try:
        for name, (nbest, _) in zip(names, results):
            write_nbest(f, name, nbest)
    finally:
        if out:
            f.close()
    frames = sum(s.frames_total for _, s in results)
    skipped = sum(s.frames_skipped for _, s in results)
    summary = {"utterances": len(results), "frames": frames,
               "frames_skipped_fraction": skipped / frames if frames else 0.0}
    if refs is not None:
        errs = sum(wer(r, nb[0].words if nb else []) * max(1, len(r)) for r, (nb, _) in zip(refs, results))
        summary["wer"] = errs / sum(max(1, len(r)) for r in refs)
    log.info("decode summary: %s", json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _read_scores(path) -> dict[str, float]:
    scores = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            fields = line.split()
            if not fields:
                continue
            try:
                scores[" ".join(fields[1:])] = float(fields[0])
            except ValueError:
                raise DataError(f"{path}:{lineno}: expected 'score word1 word2 ...'") from None
    return scores


def cmd_rescore(args) -> int:
    if (args.scores is None) == (args.lm is None):
        raise ConfigError("give exactly one of --scores or --lm")
    nbest = read_nbest(args.nbest)
    if args.scores:
        scores = _read_scores(args.scores)
    else:
        lm = read_arpa(args.lm)
        scores = {" ".join(words): -lm.sentence_logprob(words)
                  for hyps in nbest.values() for _, words in hyps}
    f = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for utt, hyps in nbest.items():
            hs = [Hypothesis(words, score, 0.0) for score, words in hyps]
            write_nbest(f, utt, rescore_nbest(hs, scores, args.weight))
    finally:
        if args.out:
            f.close()
    return EXIT_OK


def cmd_bench_rtf(args) -> int:
    try:
        with open(args.spec, encoding="utf-8") as f:
            spec = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"bench spec {args.spec} does not exist") from None
    base = os.path.dirname(os.path.abspath(args.spec))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    cases = []
    for c in spec.get("cases", []):
        try:
            posts = [read_posteriorgram(resolve(p), frame_shift_ms=10.0 * c["stride"]) for p in c["posteriors"]]
            cases.append(BenchCase(c["name"], int(c["stride"]), c.get("unit_type", "wordpiece"),
                                   load_graph(resolve(c["graph"])), posts))
        except KeyError as e:
            raise ConfigError(f"bench case is missing field {e.args[0]!r}") from None
    if not cases:
        raise ConfigError("bench spec lists no cases")
    configs = []
    for entry in spec.get("configs", [{"label": "skip", "blank_skip_threshold": 0.99},
                                       {"label": "noskip", "blank_skip_threshold": None}]):
        entry = dict(entry)
        label = entry.pop("label", f"cfg{len(configs)}")
        configs.append((label, DecodeConfig(**entry)))
    rows = bench_rtf(cases, configs, repeats=args.repeats, workers=args.workers or 1)
    table = format_bench_table(rows)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(table)
    else:
        sys.stdout.write(table)
    return EXIT_OK


def cmd_run(args) -> int:
    d = _manifest_dict(args)
    if not d:
        raise ConfigError("run needs --manifest")
    if args.seed is not None:
        d["seed"] = args.seed
    if args.workdir is not None:
        d["workdir"] = os.path.abspath(args.workdir)
    if args.workers is not None:
        d["workers"] = args.workers
    if args.stride is not None:
        d.setdefault("am", {})["stride"] = args.stride
    if args.epochs is not None:
        d.setdefault("am", {})["epochs"] = args.epochs
    if args.vocab_size is not None:
        d.setdefault("wordpiece", {})["vocab_size"] = parse_vocab_size(args.vocab_size)
    if args.n_utts is not None:
        d.setdefault("synth", {})["n_utts"] = args.n_utts
    if args.noise is not None:
        d.setdefault("synth", {})["noise"] = args.noise
    dec = d.setdefault("decode", {})
    for key in ("beam", "nbest"):
        if getattr(args, key) is not None:
            dec[key] = getattr(args, key)
    if args.blank_skip is not None:
        dec["blank_skip_threshold"] = None if args.blank_skip == "off" else args.blank_skip
    if args.chunk_size is not None:
        d["stream"] = {"chunk_size": args.chunk_size,
                       "right_context": args.right_context if args.right_context is not None else 0}
    manifest = Manifest.from_dict(d, os.path.dirname(os.path.abspath(args.manifest)))
    report = run_pipeline(manifest)
    print(json.dumps({k: report[k] for k in ("wer", "oracle_wer", "rtf", "frames_skipped_fraction")},
                     sort_keys=True))
    return EXIT_OK


def _decode_flags(p):
    p.add_argument("--beam", type=float)
    p.add_argument("--max-active", type=int)
    p.add_argument("--nbest", type=int)
    p.add_argument("--acoustic-scale", type=float)
    p.add_argument("--blank-skip", type=_blank_skip, help="blank posterior threshold, or 'off'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wpctc", description="Wordpiece CTC toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic corpus")
    p.add_argument("--manifest")
    p.add_argument("--words", help="comma separated word list")
    p.add_argument("--n-utts", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--feat-dim", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="corpus directory")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train-wp", help="train a wordpiece model")
    p.add_argument("--manifest")
    p.add_argument("--corpus", help="corpus directory, word-count file or raw text")
    p.add_argument("--vocab-size", help="piece count or a preset such as 1K")
    p.add_argument("--seed-multiplier", type=int)
    p.add_argument("--prune-fraction", type=float)
    p.add_argument("--em-iterations", type=int)
    p.add_argument("--out")
    p.add_argument("--lexicon-out")
    p.set_defaults(func=cmd_train_wp)

    p = sub.add_parser("build-graph", help="build a blank-aware decoding graph")
    p.add_argument("--manifest")
    p.add_argument("--mode", choices=["wordpiece", "chenone"], default="wordpiece")
    p.add_argument("--wordpiece")
    p.add_argument("--lexicon")
    p.add_argument("--lm", help="ARPA file")
    p.add_argument("--exact-lm", action="store_true", help="expand back-off instead of epsilon arcs")
    p.add_argument("--input-graph", help="chenone mode: AT&T text graph with shifted input labels")
    p.add_argument("--isymbols")
    p.add_argument("--osymbols")
    p.add_argument("--out")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train-am", help="train the toy acoustic model")
    p.add_argument("--manifest")
    p.add_argument("--corpus")
    p.add_argument("--wordpiece")
    p.add_argument("--stride", type=int)
    p.add_argument("--context", type=int)
    p.add_argument("--hidden", type=int, nargs="+")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--peak-lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train_am)

    p = sub.add_parser("decode", help="decode posteriors or corpus features")
    p.add_argument("--manifest")
    p.add_argument("--graph")
    p.add_argument("--posteriors", nargs="+", help="posteriorgram files")
    p.add_argument("--am", help="acoustic model checkpoint (with --corpus)")
    p.add_argument("--corpus")
    _decode_flags(p)
    p.add_argument("--streaming", action="store_true")
    p.add_argument("--chunk-size", type=int)
    p.add_argument("--right-context", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="n-best output file (default stdout)")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("rescore", help="rerank an n-best file with external scores")
    p.add_argument("--nbest", required=True)
    p.add_argument("--scores", help="lines of 'cost word1 word2 ...'")
    p.add_argument("--lm", help="ARPA LM used as the external scorer")
    p.add_argument("--weight", type=float, default=0.5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_rescore)

    p = sub.add_parser("bench-rtf", help="decode timing table")
    p.add_argument("--spec", required=True, help="JSON listing cases and configs")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench_rtf)

    p = sub.add_parser("run", help="run the whole pipeline from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--workdir")
    p.add_argument("--workers", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--vocab-size")
    p.add_argument("--n-utts", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--beam", type=float)
    p.add_argument("--nbest", type=int)
    p.add_argument("--blank-skip", type=_blank_skip)
    p.add_argument("--chunk-size", type=int)
    p.add_argument("--right-context", type=int)
    p.set_defaults(func=cmd_run)
    return parser


def _exit_code(e: BaseException) -> int:
    if isinstance(e, StageError):
        return _exit_code(e.cause)
    if isinstance(e, ConfigError):
        return EXIT_CONFIG
    if isinstance(e, (DataError, OSError)):
        return EXIT_DATA
    return EXIT_INTERNAL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (WpctcError, OSError) as e:
        print(f"wpctc {args.command}: error: {e}", file=sys.stderr)
        return _exit_code(e)
    except Exception as e:  # noqa: BLE001
        print(f"wpctc {args.command}: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
