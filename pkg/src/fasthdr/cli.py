"""Command line: convert, train, eval, macs, bench, selftest, synth.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Results go to standard output or files; diagnostics go to standard error.
"""
from __future__ import annotations

import argparse
import os
import sys
from typing import List, Optional

from threadpoolctl import threadpool_limits

from .errors import DataError, NonFiniteError, ShapeError, UsageError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _log(msg: str):
    print(msg, file=sys.stderr, flush=True)


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return v


def _non_negative(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text!r}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fasthdr", description="SDR to HDR image translation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("convert", help="translate one 8-bit SDR PNG to a 16-bit HDR PNG")
    c.add_argument("--input", required=True, help="8-bit RGB PNG (BT.709 gamma)")
    c.add_argument("--output", required=True, help="16-bit RGB PNG to write (BT.2020 PQ)")
    c.add_argument("--checkpoint", required=True, help="trained model checkpoint")
    c.add_argument("--tile", type=_positive, help="tile size in pixels (rounded up to a multiple of 4)")
    c.add_argument("--halo", type=_non_negative, help="tile overlap for the local stage (needs --tile)")
    c.add_argument("--stage", choices=("auct", "full"), default="full",
                   help="'auct' stops after the global colour transform")

    t = sub.add_parser("train", help="train a model")
    src = t.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="dataset root with sdr/ and hdr/ subdirectories")
    src.add_argument("--synthetic", type=_positive, metavar="N", help="train on N generated pairs")
    t.add_argument("--size", type=_positive, default=64, help="generated pair size (with --synthetic)")
    t.add_argument("--data-seed", type=int, default=0, help="generator seed (with --synthetic)")
    t.add_argument("--config", help="key = value training configuration file")
    t.add_argument("--out", required=True, help="output directory for checkpoint and loss curve")
    t.add_argument("--resume", help="checkpoint to continue from")

    e = sub.add_parser("eval", help="score predicted HDR PNGs against references")
    e.add_argument("--pred", required=True, help="directory of predicted PNGs")
    e.add_argument("--ref", required=True, help="directory of reference PNGs with matching names")
    e.add_argument("--report", required=True, help="text report path; a .json twin is written beside it")
    e.add_argument("--checkpoint", help="include MAC and parameter counts for this model")

    m = sub.add_parser("macs", help="print multiply-accumulate and parameter counts")
    m.add_argument("--height", type=_positive, required=True)
    m.add_argument("--width", type=_positive, required=True)
    m.add_argument("--checkpoint", help="model to count (default configuration otherwise)")
    m.add_argument("--stage", choices=("auct", "full"), default="full")
    m.add_argument("--layers", action="store_true", help="also list every convolution")

    b = sub.add_parser("bench", help="time inference on a random image")
    b.add_argument("--height", type=_positive, required=True)
    b.add_argument("--width", type=_positive, required=True)
    b.add_argument("--runs", type=_positive, default=3, help="timed runs after 2 warm-up runs")
    b.add_argument("--checkpoint", help="model to time (default initialisation otherwise)")
    b.add_argument("--tile", type=_positive, help="also time tiled inference with this tile size")
    b.add_argument("--halo", type=_non_negative, help="tile overlap (needs --tile)")
    b.add_argument("--stage", choices=("auct", "full"), default="full")

    sub.add_parser("selftest", help="run internal consistency checks")

    s = sub.add_parser("synth", help="write a synthetic paired dataset")
    s.add_argument("--count", type=_positive, required=True)
    s.add_argument("--size", type=_positive, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    return p


def _check_combinations(args):
    if getattr(args, "halo", None) is not None and getattr(args, "tile", None) is None:
        raise UsageError("--halo needs --tile")
    if args.command == "train" and args.data is not None and (args.size != 64 or args.data_seed != 0):
        raise UsageError("--size and --data-seed only apply to --synthetic")


def cmd_convert(args) -> int:
    from .checkpoint import load_model
    from .imageio import read_png, write_png
    from .le import LE_STRIDE
    from .model import predict_image

    model = load_model(args.checkpoint)
    sdr, _ = read_png(args.input, bits=8)
    h, w = sdr.shape[1:]
    if args.stage == "full" and model.le is not None and min(h, w) < LE_STRIDE:
        raise DataError(f"{args.input}: {h}x{w} is too small; the local stage needs at least {LE_STRIDE}x{LE_STRIDE}")
    need = model.cfg.auct.min_condition_size * model.cfg.auct.cond_downscale
    if min(h, w) < need:
        raise DataError(f"{args.input}: {h}x{w} is too small; the condition network needs at least {need}x{need}")
    out = predict_image(model, sdr, stage=args.stage, tile=args.tile, halo=args.halo)
    write_png(args.output, out, 16)
    return EXIT_OK


def cmd_train(args) -> int:
    from .data import PairedDataset, load_pairs, synth_dataset
    from .training import PRESETS, load_config, train
    from .model import ModelConfig

    cfg, mcfg = load_config(args.config) if args.config else (PRESETS["desk"], ModelConfig())
    if args.data:
        samples = load_pairs(args.data)
    else:
        samples = synth_dataset(args.synthetic, args.size, args.data_seed)
    trainer = train(PairedDataset(samples, mcfg.auct.cond_downscale), mcfg, cfg, args.out,
                    resume=args.resume, log=lambda msg: print(msg, flush=True))
    print(f"done: {trainer.iteration} iterations, checkpoint {os.path.join(args.out, 'checkpoint.fhdr')}")
    return EXIT_OK


def _png_names(d: str) -> List[str]:
    if not os.path.isdir(d):
        raise DataError(f"{d}: not a directory")
    return sorted(f for f in os.listdir(d) if f.lower().endswith(".png"))


def cmd_eval(args) -> int:
    from .imageio import read_png
    from .metrics import MetricReport, score_pair

    names = _png_names(args.pred)
    if not names:
        raise DataError(f"{args.pred}: no PNG files")
    ref_names = set(_png_names(args.ref))
    missing = [n for n in names if n not in ref_names]
    if missing:
        raise DataError(f"{args.ref}: no reference for {', '.join(missing[:5])}")
    report = MetricReport()
    first_shape = None
    for n in names:
        pred, _ = read_png(os.path.join(args.pred, n))
        ref, _ = read_png(os.path.join(args.ref, n))
        if pred.shape != ref.shape:
            raise DataError(f"{n}: prediction {pred.shape[1:]} and reference {ref.shape[1:]} differ in size")
        first_shape = first_shape or pred.shape
        report.add(score_pair(os.path.splitext(n)[0], pred, ref))
    if args.checkpoint:
        from .checkpoint import load_model
        from .cost import count_macs

        model = load_model(args.checkpoint)
        report.params = model.num_parameters()
        report.macs = count_macs(model.cfg, first_shape[1], first_shape[2])
    base, _ = os.path.splitext(args.report)
    report.write(args.report, base + ".json")
    sys.stdout.write(report.to_text())
    return EXIT_OK


def _model_for(args):
    from .checkpoint import load_model
    from .model import build_model

    return load_model(args.checkpoint) if args.checkpoint else build_model()


def cmd_macs(args) -> int:
    from .cost import count_macs, layer_costs

    model = _model_for(args)
    if args.layers:
        for layer in layer_costs(model.cfg, args.height, args.width, args.stage):
            print(f"{layer.name:<28} {layer.macs}")
    macs = count_macs(model.cfg, args.height, args.width, args.stage)
    print(f"macs {macs}")
    print(f"macs_g {macs / 1e9:.2f}")
    print(f"params {model.num_parameters()}")
    return EXIT_OK


def cmd_bench(args, threads: int) -> int:
    from .cost import bench_inference, count_macs

    model = _model_for(args)
    print(f"macs_g {count_macs(model.cfg, args.height, args.width, args.stage) / 1e9:.2f}")
    print(f"params {model.num_parameters()}")
    res = bench_inference(model, args.height, args.width, args.runs, stage=args.stage, workers=1)
    print(f"untiled_median_s {res.median:.4f}")
    if args.tile:
        res = bench_inference(model, args.height, args.width, args.runs, tile=args.tile, halo=args.halo,
                              workers=threads, stage=args.stage)
        print(f"tiled_median_s {res.median:.4f} (tile {args.tile}, {threads} threads)")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run

    results = run()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_NUMERIC


def cmd_synth(args) -> int:
    from .data import synth_dataset, write_dataset

    samples = synth_dataset(args.count, args.size, args.seed)
    write_dataset(samples, args.out)
    print(f"wrote {len(samples)} pairs to {args.out}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _check_combinations(args)
        from .model import default_threads

        threads = default_threads()
    except (UsageError, ValueError) as e:
        _log(f"fasthdr {args.command}: {e}")
        return EXIT_USAGE
    try:
        with threadpool_limits(limits=threads):
            if args.command == "bench":
                return cmd_bench(args, threads)
            return {"convert": cmd_convert, "train": cmd_train, "eval": cmd_eval, "macs": cmd_macs,
                    "selftest": cmd_selftest, "synth": cmd_synth}[args.command](args)
    except UsageError as e:
        _log(f"fasthdr {args.command}: {e}")
        return EXIT_USAGE
    except (DataError, ShapeError) as e:
        _log(f"fasthdr {args.command}: {e}")
        return EXIT_DATA
    except (NonFiniteError, FloatingPointError) as e:
        _log(f"fasthdr {args.command}: numeric failure: {e}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
