"""Synthetic light fields, L1 loss, Adam and the toy training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import ops
from .autograd import Tensor, backward, finite_diff_report, no_grad
from .errors import ConfigError, DimensionError, NumericError
from .lightfield import LightField, extract_patch_pairs
from .metrics import psnr_y
from .network import NetworkConfig, ParameterStore, init_params, lf_mdtnet_forward

log = logging.getLogger(__name__)


@dataclass
class Layer:
    """One fronto-parallel plane.

    ``texture`` rows are ``(freq_y, freq_x, phase, amplitude)`` with
    frequencies in cycles per HR pixel. ``mask`` is ``None`` (opaque
    everywhere) or ``(y0, x0, y1, x1, softness)`` in layer coordinates.
    """

    disparity: float
    texture: list[tuple[float, float, float, float]]
    mask: tuple[float, float, float, float, float] | None = None

    def to_dict(self) -> dict:
        return {"disparity": self.disparity, "texture": [list(t) for t in self.texture], "mask": None if self.mask is None else list(self.mask)}


@dataclass
class SceneSpec:
    layers: list[Layer]
    H: int = 64
    W: int = 64
    U: int = 5
    V: int = 5
    seed: int = 0

    def __post_init__(self):
        self.layers = [l if isinstance(l, Layer) else Layer(**l) for l in self.layers]
        if not self.layers:
            raise ConfigError("scene needs at least one layer")
        limit = min(self.H, self.W) / 4
        for i, layer in enumerate(self.layers):
            if abs(layer.disparity) * max(self.U, self.V) / 2 >= limit:
                raise ConfigError(f"layer {i}: disparity {layer.disparity} shifts too far for a {self.H}x{self.W} field")
            for fy, fx, _, _ in layer.texture:
                if math.hypot(fy, fx) >= 0.25:
                    raise ConfigError(f"layer {i}: frequency ({fy}, {fx}) is not below a quarter cycle per pixel")
            if sum(abs(t[3]) for t in layer.texture) > 0.5 + 1e-12:
                raise ConfigError(f"layer {i}: amplitudes sum above 0.5 would leave [0, 1]")

    def to_dict(self) -> dict:
        return {"H": self.H, "W": self.W, "U": self.U, "V": self.V, "seed": self.seed, "layers": [l.to_dict() for l in self.layers]}


def random_texture(rng: np.random.Generator, k: int = 6, max_freq: float = 0.2, amplitude: float = 0.45):
    """``k`` sinusoids with random orientation, |f| <= max_freq, amplitudes summing to ``amplitude``."""
    freq = rng.uniform(0.02, max_freq, size=k)
    angle = rng.uniform(0, np.pi, size=k)
    weights = rng.uniform(0.5, 1.0, size=k)
    amps = amplitude * weights / weights.sum()
    phase = rng.uniform(0, 2 * np.pi, size=k)
    return [
        (float(f * np.sin(a)), float(f * np.cos(a)), float(p), float(m))
        for f, a, p, m in zip(freq, angle, phase, amps)
    ]


def two_layer_scene(
    d_back: float = 0.5,
    d_front: float = 2.0,
    size: int = 64,
    seed: int = 0,
    max_freq: float = 0.2,
    softness: float = 1.0,
) -> SceneSpec:
    """Full-frame background plus a soft-edged central rectangle in front."""
    rng = np.random.default_rng(seed)
    q = size / 4
    return SceneSpec(
        layers=[
            Layer(d_back, random_texture(rng, max_freq=max_freq)),
            Layer(d_front, random_texture(rng, max_freq=max_freq), mask=(q, q, size - q, size - q, softness)),
        ],
        H=size,
        W=size,
        seed=seed,
    )


def _texture(layer: Layer, y: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.full(np.broadcast(y, x).shape, 0.5)
    for fy, fx, phase, amp in layer.texture:
        out += amp * np.sin(2 * np.pi * (fy * y + fx * x) + phase)
    return out


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def _mask(layer: Layer, y: np.ndarray, x: np.ndarray) -> np.ndarray:
    if layer.mask is None:
        return np.ones(np.broadcast(y, x).shape)
    y0, x0, y1, x1, soft = layer.mask
    return _sigmoid((y - y0) / soft) * _sigmoid((y1 - y) / soft) * _sigmoid((x - x0) / soft) * _sigmoid((x1 - x) / soft)


def synth_lightfield(spec: SceneSpec) -> LightField:
    """Render the scene analytically; SAI ``(u, v)`` samples layer coordinates
    ``(y + d (v - v_c), x + d (u - u_c))``. Layers are composited back to front.
    """
    uc, vc = (spec.U - 1) / 2, (spec.V - 1) / 2
    yy, xx = np.meshgrid(np.arange(spec.H, dtype=np.float64), np.arange(spec.W, dtype=np.float64), indexing="ij")
    out = np.zeros((spec.U, spec.V, spec.H, spec.W, 1))
    for u in range(spec.U):
        for v in range(spec.V):
            img = np.zeros((spec.H, spec.W))
            for layer in spec.layers:
                y = yy + layer.disparity * (v - vc)
                x = xx + layer.disparity * (u - uc)
                m = _mask(layer, y, x)
                img = img * (1 - m) + m * _texture(layer, y, x)
            out[u, v, :, :, 0] = img
    return LightField(np.clip(out, 0.0, 1.0).astype(np.float32))


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise DimensionError(f"l1_loss: shapes {pred.shape} and {target.shape} differ")
    return ops.mean_all(ops.abs_(ops.sub(pred, target)))


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update; ``params`` and ``grads`` map names to tensors/arrays."""
    state.step += 1
    t = state.step
    c1 = 1 - state.beta1 ** t
    c2 = 1 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g is None:
            continue
        if g.shape != p.shape:
            raise DimensionError(f"adam_step: grad {g.shape} does not match {name} {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data, dtype=np.float64)
            state.v[name] = np.zeros_like(p.data, dtype=np.float64)
        v = state.v[name]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * (g * g)
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.dtype)
    return params, state


@dataclass
class TrainResult:
    params: ParameterStore
    curve: list[dict]
    pairs: list[tuple[LightField, LightField]]


def train_toy(
    cfg: NetworkConfig,
    scenes: Sequence[SceneSpec],
    steps: int,
    seed: int = 0,
    lr: float = 2e-4,
    lr_drop_step: int | None = None,
    lr_after: float = 2e-5,
    batch_size: int = 1,
    patch: int = 32,
    log_every: int = 10,
) -> TrainResult:
    """Train on LR/HR patch pairs cut from synthetic scenes.

    Samples are visited in a seeded permutation per epoch. With
    ``lr_drop_step`` the learning rate switches to ``lr_after`` from that
    step on. Every logged row holds ``step, loss, psnr, lr``; PSNR is
    measured on the batch just trained on.
    """
    pairs = []
    for spec in scenes:
        if (spec.U, spec.V) != (cfg.U, cfg.V):
            raise ConfigError(f"scene is {spec.U}x{spec.V}, network expects {cfg.U}x{cfg.V}")
        pairs.extend(extract_patch_pairs(synth_lightfield(spec), cfg.r, patch=patch, stride=patch))
    params = init_params(cfg, seed)
    state = AdamState(lr=lr)
    rng = np.random.default_rng(seed)
    order: list[int] = []
    curve: list[dict] = []
    for step in range(steps):
        state.lr = lr_after if lr_drop_step is not None and step >= lr_drop_step else lr
        batch = []
        while len(batch) < batch_size:
            if not order:
                order = list(rng.permutation(len(pairs)))
            batch.append(order.pop(0))
        for p in params.values():
            p.grad = None
        total = 0.0
        preds = []
        for idx in batch:
            lr_patch, hr_patch = pairs[idx]
            pred = lf_mdtnet_forward(lr_patch, cfg, params)
            loss = ops.scale(l1_loss(pred, Tensor(hr_patch.data)), 1.0 / len(batch))
            backward(loss)
            total += loss.item()
            preds.append(pred.data)
        if not math.isfinite(total):
            raise NumericError(f"training diverged: loss is {total} at step {step}")
        adam_step(params, {n: p.grad for n, p in params.items()}, state)
        if step % log_every == 0 or step == steps - 1:
            psnr = float(np.mean([psnr_y(pr, pairs[i][1]) for pr, i in zip(preds, batch)]))
            curve.append({"step": step, "loss": total, "psnr": psnr, "lr": state.lr})
            log.info("step %d loss %.6f psnr %.2f lr %.1e", step, total, psnr, state.lr)
    return TrainResult(params, curve, pairs)


def evaluate_pairs(cfg: NetworkConfig, params: ParameterStore, pairs) -> list[Tensor]:
    with no_grad():
        return [lf_mdtnet_forward(lr, cfg, params) for lr, _ in pairs]


@dataclass
class GradcheckResult:
    max_rel_err: float
    worst: tuple[str, int, float, float, float]
    n_samples: int
    families: set[str]
    n_skipped: int = 0
    errors: list = field(default_factory=list)


def network_gradcheck(
    cfg: NetworkConfig,
    H: int = 8,
    W: int = 8,
    seed: int = 0,
    n_samples: int = 200,
    h: float = 1e-3,
    skip_kinks: bool = False,
) -> GradcheckResult:
    """Finite-difference check of the full network plus L1 loss in f64.

    Inputs and target are seeded uniform noise; parameters use the normal
    initializer with biases, betas and alphas jittered away from their
    constant starting values so every family has a generic operating point.
    """
    params = init_params(cfg, seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    for name, t in params.items():
        if name.endswith(("bias", "beta", "gamma", "alpha")):
            t.data = t.data + rng.uniform(-0.1, 0.1, size=t.shape)
    lr_in = rng.uniform(size=(cfg.U, cfg.V, H, W, 1))
    target = Tensor(rng.uniform(size=(cfg.U, cfg.V, H * cfg.r, W * cfg.r, 1)))

    def loss() -> Tensor:
        return l1_loss(lf_mdtnet_forward(lr_in, cfg, params), target)

    report = finite_diff_report(loss, dict(params.items()), h=h, n_samples=n_samples, seed=seed, skip_kinks=skip_kinks)
    errs = report.errors
    worst = max(errs, key=lambda e: e[4])
    families = {name.split(".", 2)[-1] if name.startswith("blocks.") else name for name, *_ in errs}
    return GradcheckResult(worst[4], worst, len(errs), families, len(report.skipped), errs)
