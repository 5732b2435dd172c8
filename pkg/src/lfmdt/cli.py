"""``lfmdt`` command-line tool.

Every failure prints a single ``error: <Kind>: <message>`` line on stderr and
exits nonzero; see ``EXIT_CODES``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .complexity import network_analytic, parameter_count, verify_against_instrumented
from .config import load_config, load_scene, write_manifest
from .errors import CheckpointError, ConfigError, FormatError, LfmdtError, NumericError, SizeError, UsageError
from .lightfield import LightField, degrade, rgb_to_ycbcr, read_lfb, upsample, write_lfb, ycbcr_to_rgb
from .metrics import psnr_y, ssim_y
from .network import init_params, lf_mdtnet_forward, load_checkpoint, save_checkpoint, zero_params
from .autograd import no_grad
from .training import evaluate_pairs, network_gradcheck, synth_lightfield, train_toy

log = logging.getLogger("lfmdt")

EXIT_CODES = {
    UsageError: 2,
    ConfigError: 3,
    OSError: 4,
    FormatError: 5,
    CheckpointError: 5,
    NumericError: 6,
    SizeError: 7,
}


def _config(args, preset_default: str = "paper"):
    return load_config(args.config, args.set or (), seed=args.seed, preset=args.preset or preset_default)


def _clamped(data: np.ndarray) -> LightField:
    return LightField(np.clip(data, 0.0, 1.0).astype(np.float32))


def cmd_synth(args) -> int:
    spec = load_scene(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    write_lfb(synth_lightfield(spec), args.out)
    write_manifest(args.out, "synth", scene=spec.to_dict(), inputs=[args.spec])
    print(f"wrote {args.out}")
    return 0


def cmd_degrade(args) -> int:
    write_lfb(degrade(read_lfb(args.input), args.r), args.out)
    write_manifest(args.out, "degrade", r=args.r, inputs=[args.input])
    print(f"wrote {args.out}")
    return 0


def cmd_upsample(args) -> int:
    write_lfb(_clamped(upsample(read_lfb(args.input), args.r).data), args.out)
    write_manifest(args.out, "upsample", r=args.r, inputs=[args.input])
    print(f"wrote {args.out}")
    return 0


def cmd_init(args) -> int:
    run = _config(args)
    store = zero_params(run.network) if args.zero else init_params(run.network, run.seed)
    save_checkpoint(store, args.out)
    write_manifest(args.out, "init", run.raw, zero=args.zero)
    print(f"wrote {args.out} ({store.count()} parameters)")
    return 0


def cmd_train(args) -> int:
    from .plotting import plot_loss_curve

    run = _config(args)
    scenes = [load_scene(p) for p in args.scene]
    t = run.train
    steps = args.steps if args.steps is not None else t["steps"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train_toy(
        run.network, scenes, steps, seed=run.seed, lr=t["lr"], lr_drop_step=t["lr_drop_step"],
        lr_after=t["lr_after"], batch_size=t["batch_size"], patch=t["patch"], log_every=t["log_every"],
    )
    save_checkpoint(result.params, out / "weights.lfmw")
    with open(out / "curve.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["step", "loss", "psnr", "lr"], lineterminator="\n")
        w.writeheader()
        for row in result.curve:
            w.writerow({"step": row["step"], "loss": f"{row['loss']:.8g}", "psnr": f"{row['psnr']:.4f}", "lr": f"{row['lr']:.3g}"})
    preds = evaluate_pairs(run.network, result.params, result.pairs)
    sr = float(np.mean([psnr_y(p.data, hr) for p, (_, hr) in zip(preds, result.pairs)]))
    bic = float(np.mean([psnr_y(upsample(lr, run.network.r), hr) for lr, hr in result.pairs]))
    l1_first, l1_last = result.curve[0]["loss"], result.curve[-1]["loss"]
    summary = (
        f"steps: {steps}\n"
        f"L1 first: {l1_first:.6f}\nL1 last: {l1_last:.6f}\n"
        f"PSNR SR: {sr:.2f} dB\nPSNR bicubic: {bic:.2f} dB\n"
    )
    (out / "summary.txt").write_text(summary)
    plot_loss_curve(result.curve, out / "loss.png", bicubic_psnr=bic)
    write_manifest(out, "train", run.raw, inputs=args.scene, steps=steps)
    print(summary, end="")
    return 0


def _network_on_y(run, store, y: np.ndarray) -> np.ndarray:
    with no_grad():
        return lf_mdtnet_forward(y.astype(store.dtype), run.network, store).data


def cmd_infer(args) -> int:
    run = _config(args)
    store = load_checkpoint(args.weights, run.network)
    lf = read_lfb(args.input)
    if lf.C == 1:
        out = _network_on_y(run, store, lf.data)
    elif lf.C == 3:
        ycc = rgb_to_ycbcr(lf.data.astype(np.float64))
        y = _network_on_y(run, store, ycc[..., :1]).astype(np.float64)
        cbcr = upsample(LightField(ycc[..., 1:]), run.network.r).data
        out = ycbcr_to_rgb(np.concatenate([y, cbcr], axis=-1))
    else:
        raise UsageError(f"infer: expected 1 (Y) or 3 (RGB) channels, got {lf.C}")
    write_lfb(_clamped(out), args.out)
    write_manifest(args.out, "infer", run.raw, inputs=[args.weights, args.input])
    print(f"wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    pred, gt = read_lfb(args.pred), read_lfb(args.gt)
    if pred.shape != gt.shape:
        raise SizeError(f"eval: prediction {pred.shape} and ground truth {gt.shape} differ")
    if pred.C == 3:
        pred = LightField(rgb_to_ycbcr(pred.data.astype(np.float64))[..., :1])
        gt = LightField(rgb_to_ycbcr(gt.data.astype(np.float64))[..., :1])
    elif pred.C != 1:
        raise UsageError(f"eval: expected 1 (Y) or 3 (RGB) channels, got {pred.C}")
    print(f"PSNR: {psnr_y(pred, gt):.2f} dB, SSIM: {ssim_y(pred, gt):.4f}")
    return 0


def cmd_profile(args) -> int:
    run = _config(args)
    report = network_analytic(run.network, args.H, args.W)
    text = report.render_text()
    text += f"parameter store count: {parameter_count(run.network)}\n"
    status = 0
    if args.verify:
        v = verify_against_instrumented(
            run.network, np.random.default_rng(run.seed).uniform(size=(run.network.U, run.network.V, args.H, args.W, 1))
        )
        text += f"instrumented MACs: {'match' if v.passed else 'MISMATCH'} ({sum(v.instrumented.values())})\n"
        if not v.passed:
            key, a, i = v.diffs[0]
            text += f"first divergence: {key} analytic={a} instrumented={i}\n"
            status = 1
    print(text, end="")
    if args.out:
        from .plotting import plot_complexity

        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(text)
        (out / "report.csv").write_text(report.to_csv())
        plot_complexity(report, out / "complexity.png")
        write_manifest(out, "profile", run.raw, H=args.H, W=args.W)
    return status


def cmd_gradcheck(args) -> int:
    run = _config(args, preset_default="toy")
    g = run.gradcheck
    h = args.h if args.h is not None else g["h"]
    tol = args.tol if args.tol is not None else g["tol"]
    res = network_gradcheck(run.network, H=g["H"], W=g["W"], seed=run.seed, n_samples=g["samples"], h=h)
    name, idx, a, n, _ = res.worst
    verdict = "PASS" if res.max_rel_err <= tol else "FAIL"
    print(
        f"gradcheck: max_rel_err={res.max_rel_err:.3e} samples={res.n_samples} arrays={len(res.families)} "
        f"h={h:g} tol={tol:g} worst={name}[{idx}] analytic={a:.6e} numeric={n:.6e} {verdict}"
    )
    return 0 if verdict == "PASS" else 1


def cmd_dump_features(args) -> int:
    from .plotting import plot_feature_maps

    run = _config(args)
    store = load_checkpoint(args.weights, run.network)
    lf = read_lfb(args.input)
    if lf.C != 1:
        raise UsageError(f"dump-features: expected a 1-channel (Y) field, got {lf.C} channels")
    capture: dict = {}
    with no_grad():
        lf_mdtnet_forward(lf.data.astype(store.dtype), run.network, store, capture=capture)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    maps, labels = [], []
    uc, vc = run.network.U // 2, run.network.V // 2
    for j, branch in enumerate(capture["branches"]):
        # raw activations, not clamped; read back with clamp disabled
        write_lfb(LightField(branch.data.astype(np.float32)), out / f"branch{j}.lfb")
        maps.append(branch.data[uc, vc].mean(axis=-1))
        labels.append(f"branch {j}")
    plot_feature_maps(maps, labels, out / "features.png")
    write_manifest(out, "dump-features", run.raw, inputs=[args.weights, args.input])
    print(f"wrote {len(maps)} branch tensors to {out}")
    return 0


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--preset", choices=["paper", "toy", "demo"], help="base configuration before the file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted override, e.g. network.C=16")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lfmdt", description="Light field super-resolution toolkit")
    parser.add_argument("--version", action="version", version=f"lfmdt {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic HR light field")
    p.add_argument("spec")
    p.add_argument("out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    for name, func, help_ in (
        ("degrade", cmd_degrade, "bicubic downscale by r"),
        ("upsample", cmd_upsample, "bicubic upscale by r"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("input")
        p.add_argument("r", type=int)
        p.add_argument("out")
        p.set_defaults(func=func)

    p = sub.add_parser("init", help="write initial (or all-zero) weights")
    _add_config_args(p)
    p.add_argument("out")
    p.add_argument("--zero", action="store_true", help="zero weights, unit gains and alphas")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("train", help="train on synthetic scenes")
    _add_config_args(p)
    p.add_argument("--scene", action="append", required=True, help="scene spec JSON (repeatable)")
    p.add_argument("--steps", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="super-resolve an LR field")
    _add_config_args(p)
    p.add_argument("--weights", required=True)
    p.add_argument("input")
    p.add_argument("out")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="PSNR/SSIM on the Y channel")
    p.add_argument("pred")
    p.add_argument("gt")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("profile", help="parameter and MAC report")
    _add_config_args(p)
    p.add_argument("--H", type=int, default=32)
    p.add_argument("--W", type=int, default=32)
    p.add_argument("--verify", action="store_true", help="compare with an instrumented forward pass")
    p.add_argument("--out")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full network (toy preset by default)")
    _add_config_args(p)
    p.add_argument("--h", type=float)
    p.add_argument("--tol", type=float)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("dump-features", help="write last-block MDT branch outputs")
    _add_config_args(p)
    p.add_argument("--weights", required=True)
    p.add_argument("input")
    p.add_argument("out")
    p.set_defaults(func=cmd_dump_features)
    return parser


def _exit_code(exc: BaseException) -> int:
    for kind, code in EXIT_CODES.items():
        if isinstance(exc, kind):
            return code
    return 1


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except (LfmdtError, OSError, ValueError, ArithmeticError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
