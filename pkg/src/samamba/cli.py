"""``samamba`` command line: generate, train, eval, predict, verify, bench.

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 IO error.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _common(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", type=Path, default=d, help="run config file (key = value lines)")
    parser.add_argument("--seed", type=int, default=d, help="unsigned 64-bit seed")
    parser.add_argument("--precision", choices=("f32", "f64"), default=d)
    parser.add_argument("--out", type=Path, default=d, help="output directory")


def _pair_list(text: str, n: int, cast=int):
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated values, got {text!r}")
    return tuple(cast(p) for p in parts)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="samamba", description="Small-target segmentation toolkit")
    _common(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    _common(g, suppress=True)
    g.add_argument("--n", type=lambda s: _pair_list(s, 3), default=(8, 2, 2), help="train,val,test counts")
    g.add_argument("--size", type=int, default=256, help="square image extent (multiple of 32)")
    g.add_argument("--background", default="blob-clutter", choices=("gradient", "blob-clutter", "banded-noise"))
    g.add_argument("--targets", type=lambda s: _pair_list(s, 2), default=(1, 3), help="min,max targets per image")
    g.add_argument("--noise", type=float, default=0.02)
    g.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")

    t = sub.add_parser("train", help="train a model on a generated dataset")
    _common(t, suppress=True)
    t.add_argument("--data", type=Path, help="dataset root")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--max-steps", type=int)
    t.add_argument("--no-augment", action="store_true")
    t.add_argument("--model-config", type=Path, help="model config file")
    t.add_argument("--sweep", choices=("heads", "segments", "fusion", "all"), help="run a sensitivity sweep")
    t.add_argument("--ablation", action="store_true", help="train full / concat-fusion / no-CSI variants")

    e = sub.add_parser("eval", help="evaluate a checkpoint or saved predictions")
    _common(e, suppress=True)
    e.add_argument("--checkpoint", type=Path)
    e.add_argument("--model-config", type=Path, help="expected model config; mismatches are reported")
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--predictions", action="store_true", help="score <image>.pred.pgm files instead of running a model")

    pr = sub.add_parser("predict", help="write <image>.pred.pgm masks next to the inputs")
    _common(pr, suppress=True)
    pr.add_argument("--checkpoint", type=Path, required=True)
    pr.add_argument("images", nargs="+", type=Path)

    v = sub.add_parser("verify", help="run the invariant battery")
    _common(v, suppress=True)
    v.add_argument("--suite", action="append", help="restrict to named suites (repeatable)")

    b = sub.add_parser("bench", help="parameter/MAC counts, forward time, scan scaling")
    _common(b, suppress=True)
    b.add_argument("--size", type=int, default=256)
    b.add_argument("--csi-width", type=int)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--scan-length", type=int, default=4096)
    return p


def _resolve_run(args):
    from .model.config import ModelConfig
    from .training import RunConfig

    run = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {}
    if getattr(args, "model_config", None):
        changes["model"] = ModelConfig.load(args.model_config)
    for flag, key in (
        ("data", "data_root"),
        ("epochs", "epochs"),
        ("batch_size", "batch_size"),
        ("lr", "lr"),
        ("max_steps", "max_steps"),
        ("seed", "seed"),
        ("precision", "precision"),
        ("out", "out_dir"),
    ):
        v = getattr(args, flag, None)
        if v is not None:
            changes[key] = str(v) if isinstance(v, Path) else v
    if getattr(args, "no_augment", False):
        changes["augment"] = False
    run = run.replace(**changes)
    if args.seed is not None:
        run = run.replace(model=run.model.replace(seed=args.seed))
    return run


def cmd_generate(args, out) -> int:
    from .data import SceneConfig, build_dataset, manifest_hash

    if args.size % 32:
        raise UsageError(f"--size {args.size} is not divisible by 32")
    if args.out is None:
        raise UsageError("generate needs --out DIR")
    cfg = SceneConfig(
        height=args.size,
        width=args.size,
        targets=tuple(args.targets),
        background=args.background,
        noise_sigma=args.noise,
        seed=args.seed or 0,
    )
    manifest = build_dataset(cfg, *args.n, args.out, force=args.force)
    out.write(f"manifest={manifest}\nsha256={manifest_hash(manifest)}\n")
    return EXIT_OK


def cmd_train(args, out) -> int:
    from .data.dataset import load_split
    from .training import ablation, format_sweep, sweep, train

    run = _resolve_run(args)
    if not run.data_root:
        raise UsageError("train needs --data ROOT (or data_root in --config)")
    outdir = Path(run.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    run.save(outdir / "run.cfg")
    ti, tm, _ = load_split(run.data_root, run.train_split)
    if args.sweep or args.ablation:
        ei, em, _ = load_split(run.data_root, "test")
        data = (ti, tm, ei, em)
        if args.sweep:
            which = ("heads", "segments", "fusion") if args.sweep == "all" else (args.sweep,)
            rows = sweep(run, data, which, out_dir=outdir)
            out.write(format_sweep(rows))
        if args.ablation:
            from .metrics import format_table

            res = ablation(run, data)
            table = format_table(res)
            (outdir / "ablation.tsv").write_text(table)
            out.write(table)
        return EXIT_OK
    try:
        vi, vm, _ = load_split(run.data_root, run.val_split)
    except ValueError:
        vi = vm = None
    res = train(run, ti, tm, vi, vm, out_dir=outdir, callback=lambda r: out.write(_kv(r)))
    out.write(f"checkpoint={res.checkpoint}\nsteps={res.steps}\nbest_val_iou={res.best_val_iou:.6f}\n")
    return EXIT_OK


def _kv(rec) -> str:
    return " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in rec.items()) + "\n"


def _pred_path(image_path: Path) -> Path:
    return image_path.with_name(image_path.stem + ".pred.pgm")


def cmd_eval(args, out) -> int:
    from . import metrics
    from .data.dataset import load_split
    from .data.pgm import load_mask
    from .model.config import ModelConfig
    from .training import load_checkpoint, predict_masks

    images, masks, entries = load_split(args.data, args.split)
    if args.predictions:
        preds = np.stack([load_mask(_pred_path(args.data / e.image)) for e in entries])
    else:
        if args.checkpoint is None:
            raise UsageError("eval needs --checkpoint or --predictions")
        cfg = ModelConfig.load(args.model_config) if args.model_config else None
        dtype = None if args.precision is None else {"f32": np.float32, "f64": np.float64}[args.precision]
        model = load_checkpoint(args.checkpoint, cfg, dtype=dtype)
        preds = predict_masks(model, images)
    report = metrics.evaluate_masks(preds, masks)
    out.write(metrics.format_table(report))
    if args.out is not None:
        metrics.write_report(report, args.out, stem=f"eval_{args.split}")
    return EXIT_OK


def cmd_predict(args, out) -> int:
    from .data.dataset import to_model_input
    from .data.pgm import load_image, save_pgm
    from .training import load_checkpoint

    model = load_checkpoint(args.checkpoint)
    failed = 0
    for path in args.images:
        try:
            img = load_image(path)
            h, w = img.shape
            if h % 32 or w % 32:
                raise ValueError(f"extents {h}x{w} are not multiples of 32")
            logits = model.predict_logits(to_model_input(img[None], model.dtype))[0, 0]
            dest = _pred_path(path)
            save_pgm(dest, (logits > 0).astype(np.uint8), "mask")
            out.write(f"{dest}\n")
        except (OSError, ValueError) as exc:
            failed += 1
            sys.stderr.write(f"error: {path}: {exc}\n")
    return EXIT_IO if failed else EXIT_OK


def cmd_verify(args, out) -> int:
    from .verify import run_all

    results = run_all(args.seed or 0, only=args.suite, stream=out)
    for r in results:
        if r.name == "scan_duality":
            out.write(f"scan_duality_max_rel_err={r.max_err:.3e}\n")
    failed = [r for r in results if not r.passed]
    out.write(f"suites={len(results)} failed={len(failed)}\n")
    return EXIT_VERIFY if failed else EXIT_OK


def scan_ratio(M: int, D: int = 16, N: int = 16, repeats: int = 5, seed: int = 0, min_time: float = 0.05) -> float:
    """Best-of-``repeats`` time(2M) / time(M) for the compiled selective scan.

    Each timing averages enough back-to-back calls to last ``min_time`` seconds
    at length M, so short scans are not dominated by timer and call overhead.
    """
    from .engine.tensor import Tensor, no_grad
    from .ssm import selective_scan_core

    rng = np.random.default_rng(seed)

    def inputs(m):
        args = (
            rng.standard_normal((1, 1, m, D)),
            rng.uniform(0.01, 0.1, (1, 1, m, D)),
            -rng.uniform(0.5, 2, (1, D, N)),
            rng.standard_normal((1, 1, m, N)),
            rng.standard_normal((1, 1, m, N)),
        )
        return [Tensor(a) for a in args]

    def timed(ts, calls):
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            for _ in range(calls):
                selective_scan_core(*ts)
            best = min(best, (time.perf_counter() - t0) / calls)
        return best

    short, long_ = inputs(M), inputs(2 * M)
    with no_grad():
        selective_scan_core(*short)
        t0 = time.perf_counter()
        selective_scan_core(*short)
        calls = max(1, int(min_time / max(time.perf_counter() - t0, 1e-7)))
        return timed(long_, calls) / timed(short, calls)


def cmd_bench(args, out) -> int:
    from .engine.tensor import Tensor
    from .model.network import SAMamba, count_params_flops

    if args.size % 32:
        raise UsageError(f"--size {args.size} is not divisible by 32")
    run = _resolve_run(args)
    cfg = run.model
    if args.csi_width:
        cfg = cfg.replace(csi_width=args.csi_width)
    model = SAMamba(cfg, dtype=run.dtype)
    params, macs = count_params_flops(model, (args.size, args.size))
    x = Tensor(np.zeros((1, 3, args.size, args.size), dtype=run.dtype))
    model.predict_logits(x)
    best = np.inf
    for _ in range(max(1, args.repeats)):
        t0 = time.perf_counter()
        model.predict_logits(x)
        best = min(best, time.perf_counter() - t0)
    ratio = scan_ratio(args.scan_length)
    out.write(
        f"params={params}\nmacs={macs}\nflops={2 * macs}\nforward_s={best:.4f}\n"
        f"scan_M={args.scan_length}\nscan_ratio={ratio:.3f}\n"
    )
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "verify": cmd_verify,
    "bench": cmd_bench,
}


def main(argv=None, out=None) -> int:
    from .data.pgm import PGMError
    from .engine.checkpoint import CheckpointError
    from .nn import StateMismatchError

    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    for name in ("config", "seed", "precision", "out"):
        if not hasattr(args, name):
            setattr(args, name, None)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        sys.stderr.write("error: --seed must be an unsigned 64-bit integer\n")
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return EXIT_USAGE
    except StateMismatchError as exc:
        sys.stderr.write(f"checkpoint/config mismatch: {exc}\n")
        return EXIT_USAGE
    except (OSError, PGMError, CheckpointError) as exc:
        sys.stderr.write(f"io error: {exc}\n")
        return EXIT_IO
    except ValueError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
