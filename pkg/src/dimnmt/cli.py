"""Command-line entry point: ``dimnmt <command> ...`` or ``python -m dimnmt``.

Exit codes: 0 success, 1 usage error, 2 data error (missing or malformed
files, invalid config, vocabulary/checkpoint mismatch), 3 numeric abort.
Set ``DIMNMT_LOG_LEVEL`` (DEBUG, INFO, WARNING, ...) to control verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .config import ConfigError, RunConfig
from .decoding import translate
from .evaluation import ablation_suite, bleu, export_heatmap
from .text import BpeModel, Vocabulary, bpe_decode, bpe_encode, bpe_train, iter_parallel
from .training import CheckpointError, NumericAbort, load_model, train_loop

log = logging.getLogger("dimnmt")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- config ----------------------------------------------------------------------


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, "rb") as fh:
            tree = tomllib.load(fh)
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise DataError(f"{path}: {exc}") from None
    return RunConfig.from_dict(tree)


def resolve_config(args) -> RunConfig:
    """Config file first, then command-line overrides."""
    run = load_config(getattr(args, "config", None))
    overrides = {
        ("train", "seed"): getattr(args, "seed", None),
        ("train", "max_steps"): getattr(args, "steps", None),
        ("train", "agreement"): getattr(args, "lam", None),
        ("model", "heads"): getattr(args, "heads", None),
        ("decode", "beam"): getattr(args, "beam", None),
        ("decode", "alpha"): getattr(args, "alpha", None),
    }
    for (section, key), value in overrides.items():
        if value is not None:
            setattr(getattr(run, section), key, value)
    for flag in ("no_dim", "no_update", "no_agreement"):
        if getattr(args, flag, False):
            setattr(run.train, flag, True)
    return run


def _read_lines(path) -> list[str]:
    if path is None or str(path) == "-":
        return sys.stdin.read().splitlines()
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise DataError(f"file not found: {path}") from None


def _write_lines(path, lines) -> None:
    text = "".join(line + "\n" for line in lines)
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _load_bpe(path) -> BpeModel | None:
    if not path:
        return None
    try:
        return BpeModel.load(path)
    except FileNotFoundError:
        raise DataError(f"BPE model not found: {path}") from None


def _segment(lines, bpe: BpeModel | None) -> list[list[str]]:
    return [bpe_encode(bpe, line) if bpe is not None else line.split() for line in lines]


def _parallel(src, tgt) -> list[tuple[str, str]]:
    for p in (src, tgt):
        if not p or not Path(p).exists():
            raise DataError(f"file not found: {p}")
    try:
        return list(iter_parallel(src, tgt))
    except ValueError:
        raise DataError(f"{src} and {tgt} have different line counts") from None


def _data_path(args, run: RunConfig, name: str):
    value = getattr(args, name, None)
    return value if value is not None else run.data.get(name)


# -- commands --------------------------------------------------------------------


def cmd_bpe_train(args) -> int:
    model = bpe_train(_read_lines(args.input), args.merges)
    model.save(args.output)
    log.info("wrote %d merge rules to %s", len(model.merges), args.output)
    return EXIT_OK


def cmd_bpe_apply(args) -> int:
    if not args.decode and not args.model:
        raise UsageError("bpe-apply needs --model unless --decode is given")
    model = _load_bpe(args.model)
    lines = _read_lines(args.input)
    if args.decode:
        out = [bpe_decode(line.split()) for line in lines]
    else:
        out = [" ".join(bpe_encode(model, line)) for line in lines]
    _write_lines(args.output, out)
    return EXIT_OK


def cmd_train(args) -> int:
    run = resolve_config(args)
    for name in ("train_src", "train_tgt", "bpe_src", "bpe_tgt"):
        if getattr(args, name, None) is not None:
            run.data[name] = str(Path(getattr(args, name)).resolve())
    pairs = _parallel(run.data.get("train_src"), run.data.get("train_tgt"))
    bpe_src, bpe_tgt = _load_bpe(run.data.get("bpe_src")), _load_bpe(run.data.get("bpe_tgt"))
    src_tok = _segment([s for s, _ in pairs], bpe_src)
    tgt_tok = _segment([t for _, t in pairs], bpe_tgt)
    max_vocab = run.data.get("max_vocab")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.resume:
        src_vocab, tgt_vocab = Vocabulary.load(out / "src.vocab"), Vocabulary.load(out / "tgt.vocab")
    else:
        src_vocab = Vocabulary.build(src_tok, max_vocab)
        tgt_vocab = Vocabulary.build(tgt_tok, max_vocab)
        src_vocab.save(out / "src.vocab")
        tgt_vocab.save(out / "tgt.vocab")
    run.model.src_vocab, run.model.tgt_vocab = len(src_vocab), len(tgt_vocab)
    run.validate()
    ids = [(src_vocab.encode(s), tgt_vocab.encode(t)) for s, t in zip(src_tok, tgt_tok)]
    log.info("training on %d pairs, seed %d, vocab %d/%d", len(ids), run.train.seed,
             len(src_vocab), len(tgt_vocab))
    result = train_loop(ids, run, out, resume=args.resume)
    if result.metrics:
        last = result.metrics[-1]
        log.info("step %d loss %.4f", last["step"], last["loss"])
    print(result.checkpoints[-1] if result.checkpoints else out)
    return EXIT_OK


def _load_for_decoding(args):
    try:
        model, run, _ = load_model(args.checkpoint)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {args.checkpoint}") from None
    folder = Path(args.checkpoint).parent
    vocabs = []
    for side, given in (("src", args.src_vocab), ("tgt", args.tgt_vocab)):
        path = Path(given) if given else folder / f"{side}.vocab"
        try:
            vocabs.append(Vocabulary.load(path))
        except FileNotFoundError:
            raise DataError(f"vocabulary not found: {path}") from None
    src_vocab, tgt_vocab = vocabs
    if (len(src_vocab), len(tgt_vocab)) != (run.model.src_vocab, run.model.tgt_vocab):
        raise CheckpointError(
            f"vocabulary sizes {len(src_vocab)}/{len(tgt_vocab)} do not match checkpoint "
            f"{run.model.src_vocab}/{run.model.tgt_vocab}"
        )
    return model, run, src_vocab, tgt_vocab


def cmd_translate(args) -> int:
    model, run, src_vocab, tgt_vocab = _load_for_decoding(args)
    beam = args.beam if args.beam is not None else run.decode.beam
    alpha = args.alpha if args.alpha is not None else run.decode.alpha
    bpe = _load_bpe(args.bpe_src or run.data.get("bpe_src"))
    tgt_bpe = _load_bpe(args.bpe_tgt or run.data.get("bpe_tgt"))
    lines = _read_lines(args.input)
    outputs, traces = [], []
    for k, line in enumerate(lines):
        t = translate(model, line, src_vocab, tgt_vocab, bpe, tgt_bpe, beam, alpha,
                      with_attention=args.attention is not None)
        outputs.append(t.text)
        if args.attention is not None:
            traces.append({
                "index": k, "source": line, "output": t.tokens, "memory": t.r2l_tokens + ["</s>"],
                "score": t.score,
                "tgt_attention": None if t.tgt_attention is None else t.tgt_attention.tolist(),
                "src_attention": None if t.src_attention is None else t.src_attention.tolist(),
            })
    _write_lines(args.output, outputs)
    if args.attention is not None:
        header = {"header": True, "checkpoint": str(args.checkpoint), "beam": beam, "alpha": alpha,
                  "config": run.to_dict()}
        _write_lines(args.attention, [json.dumps(header, sort_keys=True)]
                     + [json.dumps(tr, sort_keys=True) for tr in traces])
    return EXIT_OK


def cmd_score(args) -> int:
    hyps = _read_lines(args.hyp)
    refs = [_read_lines(r) for r in args.ref]
    for r, path in zip(refs, args.ref):
        if len(r) != len(hyps):
            raise DataError(f"{path}: {len(r)} lines vs {len(hyps)} hypotheses")
    if not hyps:
        raise DataError("no hypotheses to score")
    print(bleu(hyps, refs, case_insensitive=args.lc))
    return EXIT_OK


def cmd_ablate(args) -> int:
    run = resolve_config(args)
    train = _parallel(_data_path(args, run, "train_src"), _data_path(args, run, "train_tgt"))
    valid = _parallel(_data_path(args, run, "valid_src"), _data_path(args, run, "valid_tgt"))
    train_tok = [(s.split(), t.split()) for s, t in train]
    valid_tok = [(s.split(), t.split()) for s, t in valid]
    src_vocab = Vocabulary.build([s for s, _ in train_tok])
    tgt_vocab = Vocabulary.build([t for _, t in train_tok])
    run.model.src_vocab, run.model.tgt_vocab = len(src_vocab), len(tgt_vocab)
    run.validate()
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [run.train.seed]
    table = ablation_suite(train_tok, valid_tok, src_vocab, tgt_vocab, run, seeds)
    print(table.text())
    if args.jsonl:
        Path(args.jsonl).write_text(table.jsonl(), encoding="utf-8")
    return EXIT_OK


def cmd_heatmap(args) -> int:
    lines = _read_lines(args.trace)
    records = [json.loads(line) for line in lines if line.strip()]
    records = [r for r in records if not r.get("header")]
    match = [r for r in records if r.get("index") == args.index]
    if not match:
        raise DataError(f"{args.trace}: no trace with index {args.index}")
    rec = match[0]
    key = "src_attention" if args.source else "tgt_attention"
    weights = rec.get(key)
    if not weights:
        raise DataError(f"{args.trace}: trace {args.index} has no {key} (empty output or no memory)")
    cols = rec["source"].split() + ["</s>"] if args.source else rec["memory"]
    width = len(weights[0])
    cols = (list(cols) + [""] * width)[:width]
    img, tsv = export_heatmap(weights, rec["output"], cols, args.out)
    print(img)
    print(tsv)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int, help="override train.max_steps")
    p.add_argument("--heads", type=int)
    p.add_argument("--lambda", dest="lam", type=float, help="agreement weight")
    p.add_argument("--no-dim", action="store_true", help="drop the dynamic interaction module")
    p.add_argument("--no-update", action="store_true", help="keep memory reads, skip rewrites")
    p.add_argument("--no-agreement", action="store_true", help="drop the agreement term")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dimnmt", description="Bidirectional NMT with a dynamic interaction memory.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("bpe-train", help="learn BPE merges from a text file")
    p.add_argument("--input", required=True)
    p.add_argument("--merges", type=int, required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_bpe_train)

    p = sub.add_parser("bpe-apply", help="segment (or with --decode, join) text with a BPE model")
    p.add_argument("--model")
    p.add_argument("--input", help="default: stdin")
    p.add_argument("--output", help="default: stdout")
    p.add_argument("--decode", action="store_true")
    p.set_defaults(func=cmd_bpe_apply)

    p = sub.add_parser("train", help="train a model; writes vocabularies, metrics.jsonl and checkpoints")
    _model_flags(p)
    p.add_argument("--train-src")
    p.add_argument("--train-tgt")
    p.add_argument("--bpe-src")
    p.add_argument("--bpe-tgt")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="decode source sentences with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", help="default: stdin")
    p.add_argument("--output", help="default: stdout")
    p.add_argument("--beam", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--src-vocab")
    p.add_argument("--tgt-vocab")
    p.add_argument("--bpe-src")
    p.add_argument("--bpe-tgt")
    p.add_argument("--attention", help="write per-sentence attention traces (JSON lines) here")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("score", help="corpus BLEU of a hypothesis file")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True, action="append", help="repeat for multiple references")
    p.add_argument("--lc", action="store_true", help="case-insensitive")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("ablate", help="train the full model and its ablations; print the comparison")
    _model_flags(p)
    p.add_argument("--beam", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--train-src")
    p.add_argument("--train-tgt")
    p.add_argument("--valid-src")
    p.add_argument("--valid-tgt")
    p.add_argument("--seeds", help="comma-separated, e.g. 1,2,3,4,5")
    p.add_argument("--jsonl", help="also write the rows as JSON lines")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("heatmap", help="render one saved attention trace as PGM + TSV")
    p.add_argument("--trace", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--source", action="store_true", help="plot source attention instead of memory attention")
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=cmd_heatmap)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("DIMNMT_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"dimnmt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericAbort as exc:
        print(f"dimnmt: numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ConfigError, CheckpointError, FileNotFoundError, UnicodeDecodeError) as exc:
        print(f"dimnmt: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
