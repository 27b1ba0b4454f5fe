"""Command-line surface for the stroke recognition pipeline.

Commands: gen-lexicon, lexicon-stats, gen-data, train, eval, decode,
grad-check, export-attn. Machine-readable output is CSV by default;
``--json`` switches result files to the key=value structured-text block.
Report paths write a matplotlib figure next to the delimited output.
All randomness flows from ``--seed`` (fallback: the STROKEZS_SEED
environment variable), and identical invocations produce byte-identical
outputs. Exit codes: 0 success, 1 usage, 2 data error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

from . import figures, records
from .alphabet import synthetic_alphabet
from .evaluation import (
    RESULT_CSV_HEADER,
    ExperimentResult,
    ModelConfig,
    ProtocolError,
    SplitSpec,
    TrainConfig,
    _confusion_summary,
    _trace_counts,
    audit_split_hygiene,
    build_candidate_set,
    cacc,
    char_zero_shot_split,
    cross_alphabet_split,
    evaluate_model,
    load_samples,
    radical_zero_shot_split,
    result_to_csv_row,
    result_to_text,
    seen_split,
    train_model,
)
from .glyphgen import RenderConfig, generate_dataset
from .lexicon import (
    Lexicon,
    LexiconError,
    build_confusable_set,
    load_lexicon,
    one_to_n_histogram,
    write_lexicon_tsv,
)
from .matcher import MatchError, build_support_bank, stroke_to_character
from .model import (
    DecoderConfig,
    EncoderConfig,
    attention_maps,
    checkpoint_load,
    checkpoint_save,
    encode,
    greedy_decode,
)
from .records import RecordError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _seed(args) -> int:
    seed = args.seed
    if seed is None:
        env = os.environ.get("STROKEZS_SEED")
        if env is not None:
            try:
                seed = int(env)
            except ValueError:
                raise UsageError(f"STROKEZS_SEED must be an integer, got {env!r}") from None
    if seed is None:
        return 0
    if seed < 0:
        raise UsageError("seed must be non-negative")
    return seed


def _render_config(args, seed: int) -> RenderConfig:
    return RenderConfig(
        image_size=getattr(args, "image_size", 32),
        jitter_translate=getattr(args, "jitter_translate", 0.04),
        jitter_rotate=getattr(args, "jitter_rotate", 0.10),
        jitter_thickness=getattr(args, "jitter_thickness", 0.5),
        noise_std=getattr(args, "noise_std", 0.05),
        seed=seed,
    )


def _split_from_args(args, lexicon: Lexicon) -> SplitSpec:
    ids = [e.char_id for e in lexicon.entries]
    kind = args.split
    if kind == "char-zs":
        return char_zero_shot_split(ids, args.m, args.test_count)
    if kind == "radical-zs":
        return radical_zero_shot_split(lexicon, args.n)
    if kind == "seen":
        return seen_split(ids)
    if kind == "cross":
        return cross_alphabet_split(lexicon)
    if kind == "all":
        return SplitSpec("seen", ids, ids)
    raise UsageError(f"unknown split {kind!r}")


def cmd_gen_lexicon(args) -> int:
    seed = _seed(args)
    entries = synthetic_alphabet(
        args.size, seed, confusable_fraction=args.confusable_frac, radical_pool=args.radical_pool
    )
    Lexicon(entries)  # validates before writing
    write_lexicon_tsv(entries, args.out)
    print(f"wrote {len(entries)} characters to {args.out}")
    return EXIT_OK


def cmd_lexicon_stats(args) -> int:
    lexicon = load_lexicon(args.lexicon)
    hist = one_to_n_histogram(lexicon)
    keys = sum(hist.values())
    entries = sum(n * c for n, c in hist.items())
    max_n = max(hist) if hist else 0
    one_frac = (hist.get(1, 0) / keys) if keys else 0.0
    out = Path(args.out)
    if args.json:
        lines = [
            f"entries={entries}",
            f"keys={keys}",
            f"max_n={max_n}",
            f"one_to_one_fraction={one_frac:.6f}",
            "[histogram]",
        ]
        lines += [f"{n}={c}" for n, c in sorted(hist.items())]
        out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        rows = ["n,count"] + [f"{n},{c}" for n, c in sorted(hist.items())]
        out.write_text("\n".join(rows) + "\n", encoding="utf-8")
    if args.fig:
        figures.save_histogram_figure(hist, args.fig)
    print(
        f"entries={entries} keys={keys} max_n={max_n} one_to_one_fraction={one_frac:.6f}"
    )
    return EXIT_OK


def cmd_gen_data(args) -> int:
    seed = _seed(args)
    lexicon = load_lexicon(args.lexicon)
    split = _split_from_args(args, lexicon)
    if args.part == "train":
        chars, tag = split.train_classes, "train"
    elif args.part == "test":
        chars, tag = split.test_classes, "test"
    else:
        chars, tag = [e.char_id for e in lexicon.entries], "all"
    if not chars:
        raise ProtocolError(f"split selects no {args.part!r} classes")
    config = _render_config(args, seed)
    manifest = generate_dataset(lexicon, chars, args.samples_per_char, config, args.out, split_tag=tag)
    print(f"wrote {len(manifest)} samples for {len(chars)} classes to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    seed = _seed(args)
    lexicon = load_lexicon(args.lexicon)
    model_config = ModelConfig(
        encoder=EncoderConfig(channels=args.channels, num_blocks=args.blocks),
        decoder=DecoderConfig(
            d_model=args.d_model, heads=args.heads, layers=args.layers, max_len=args.max_len
        ),
    )
    train_config = TrainConfig(
        steps=args.steps, batch_size=args.batch, seed=seed, weight_decay=args.weight_decay
    )
    samples = load_samples(args.data)
    if not samples:
        raise ProtocolError(f"no samples under {args.data}")
    started = time.perf_counter()
    params, state, losses = train_model(samples, lexicon, train_config, model_config)
    checkpoint_save(params, state, args.out, model_config.encoder, model_config.decoder)
    if args.report:
        report = Path(args.report)
        report.mkdir(parents=True, exist_ok=True)
        csv = ["step,loss"] + [f"{i + 1},{loss:.6f}" for i, loss in enumerate(losses)]
        (report / "loss.csv").write_text("\n".join(csv) + "\n", encoding="utf-8")
        figures.save_loss_curve(losses, report / "loss.png")
    final = f"{losses[-1]:.6f}" if losses else "n/a"
    print(f"trained {len(losses)} steps on {len(samples)} samples, final loss {final}, saved {args.out}")
    if args.verbose:
        print(f"wall clock {time.perf_counter() - started:.1f}s", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args) -> int:
    seed = _seed(args)
    lexicon = load_lexicon(args.lexicon)
    split = _split_from_args(args, lexicon)
    if args.train_data:
        audit_split_hygiene(split, args.train_data, "train")
    audit_split_hygiene(split, args.test_data, "test")
    params, _, enc, dec = checkpoint_load(args.checkpoint)
    model_config = ModelConfig(encoder=enc, decoder=dec)
    candidates = build_candidate_set(split, args.candidates)
    test_samples = load_samples(args.test_data, set(split.test_classes))
    started = time.perf_counter()
    preds, golds, traces, bank_size = evaluate_model(
        lexicon, candidates, test_samples, params, model_config, args.metric,
        support_config=RenderConfig(seed=seed).without_jitter(), workers=args.workers,
    )
    result = ExperimentResult(
        kind=split.kind,
        metric=args.metric,
        cacc=cacc(preds, golds),
        n_test=len(test_samples),
        n_candidates=len(candidates),
        n_train_classes=len(split.train_classes),
        n_test_classes=len(split.test_classes),
        trace_counts=_trace_counts(traces),
        confusions=_confusion_summary(preds, golds),
        config_echo={"bank_size": str(bank_size), **{k: str(v) for k, v in split.params.items()}},
        seed=seed,
        wall_clock_seconds=time.perf_counter() - started,
    )
    out = Path(args.out)
    if args.json:
        out.write_text(result_to_text(result), encoding="utf-8")
    else:
        out.write_text(RESULT_CSV_HEADER + "\n" + result_to_csv_row(result) + "\n", encoding="utf-8")
    if args.fig:
        figures.save_trace_figure(result.trace_counts, args.fig)
    print(f"cacc={result.cacc:.6f} n_test={result.n_test} candidates={result.n_candidates}")
    if args.verbose:
        print(f"wall clock {result.wall_clock_seconds:.1f}s", file=sys.stderr)
    return EXIT_OK


def cmd_decode(args) -> int:
    seed = _seed(args)
    lexicon = load_lexicon(args.lexicon)
    if not lexicon.entries:
        raise LexiconError("empty lexicon")
    params, _, enc, dec = checkpoint_load(args.checkpoint)
    image = records.read_image(args.image)
    confusable = build_confusable_set(lexicon)
    bank = build_support_bank(
        confusable.all_char_ids(), lexicon, params, enc, RenderConfig(seed=seed).without_jitter()
    )
    fmap = encode(image, params, enc)
    p, _, _ = greedy_decode(fmap, params, dec)
    char_id, trace = stroke_to_character(p, lexicon, confusable, fmap, bank, args.metric)
    print(f"{char_id}\t{p}\t{trace}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from .diagnostics import composed_model_grad_check, primitive_grad_checks

    seed = _seed(args)
    rows = primitive_grad_checks(seed if args.seed is not None else 57)
    rows += composed_model_grad_check(seed if args.seed is not None else 2)
    failures = 0
    lines = ["op,max_relative_error,tolerance,status"]
    for name, err, tol in rows:
        ok = err < tol
        failures += not ok
        lines.append(f"{name},{err:.3e},{tol:g},{'pass' if ok else 'FAIL'}")
        print(f"{name:28s} {err:.3e}  {'pass' if ok else 'FAIL'} (tol {tol:g})")
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if failures:
        print(f"{failures} gradient checks failed", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_export_attn(args) -> int:
    params, _, enc, dec = checkpoint_load(args.checkpoint)
    image = records.read_image(args.image)
    fmap = encode(image, params, enc)
    p, _, _ = greedy_decode(fmap, params, dec)
    maps = attention_maps(fmap, p, params, dec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = ["step,head,row,col,weight"]
    steps, heads, h, w = maps.shape
    for s in range(steps):
        for head in range(heads):
            for i in range(h):
                for j in range(w):
                    rows.append(f"{s},{head},{i},{j},{maps[s, head, i, j]:.6e}")
    (out / "attention.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    figures.save_attention_figure(maps, p, out / "attention.png")
    print(f"decoded {p!r}; wrote {steps} step maps to {out}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="strokezs", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="base seed (fallback: STROKEZS_SEED, then 0)")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("gen-lexicon", help="emit a synthetic alphabet as lexicon TSV")
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--radical-pool", type=int, default=40)
    p.add_argument("--confusable-frac", type=float, default=0.08)
    common(p)
    p.set_defaults(func=cmd_gen_lexicon)

    p = sub.add_parser("lexicon-stats", help="one-to-n histogram as CSV or structured text")
    p.add_argument("--lexicon", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fig", default=None, help="also render a histogram figure (PNG)")
    p.add_argument("--json", action="store_true", help="structured text instead of CSV")
    common(p)
    p.set_defaults(func=cmd_lexicon_stats)

    p = sub.add_parser("gen-data", help="render a dataset for a split part")
    p.add_argument("--lexicon", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--samples-per-char", type=int, required=True)
    p.add_argument("--split", default="all", choices=["char-zs", "radical-zs", "seen", "cross", "all"])
    p.add_argument("--part", default="all", choices=["train", "test", "all"])
    p.add_argument("--m", type=int, default=0)
    p.add_argument("--test-count", type=int, default=0)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--jitter-translate", type=float, default=0.04)
    p.add_argument("--jitter-rotate", type=float, default=0.10)
    p.add_argument("--jitter-thickness", type=float, default=0.5)
    p.add_argument("--noise-std", type=float, default=0.05)
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train on a generated dataset and write a checkpoint")
    p.add_argument("--lexicon", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=600)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--blocks", type=int, default=4)
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--max-len", type=int, default=48)
    p.add_argument("--report", default=None, help="directory for loss.csv and loss.png")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint under a split protocol")
    p.add_argument("--lexicon", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test-data", required=True)
    p.add_argument("--train-data", default=None, help="audit hygiene of the training data too")
    p.add_argument("--split", required=True, choices=["char-zs", "radical-zs", "seen", "cross"])
    p.add_argument("--m", type=int, default=0)
    p.add_argument("--test-count", type=int, default=0)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--metric", default="cosine", choices=["cosine", "euclidean"])
    p.add_argument("--candidates", default="union", choices=["union", "intersection"])
    p.add_argument("--out", required=True)
    p.add_argument("--json", action="store_true", help="structured text instead of CSV")
    p.add_argument("--fig", default=None, help="also render a trace-count figure (PNG)")
    p.add_argument("--workers", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("decode", help="decode one image record to a character")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--metric", default="cosine", choices=["cosine", "euclidean"])
    common(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("grad-check", help="finite-difference checks of every primitive")
    p.add_argument("--out", default=None, help="write results as CSV")
    common(p)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("export-attn", help="export per-step attention maps (CSV + PNG)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_export_attn)

    return parser


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"strokezs: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"strokezs: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LexiconError, RecordError, ProtocolError, MatchError, FileNotFoundError) as exc:
        print(f"strokezs: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"strokezs: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"strokezs: internal error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
