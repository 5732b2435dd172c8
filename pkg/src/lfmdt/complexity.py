"""Analytic parameter and multiply-accumulate (MAC) accounting.

One MAC is one multiply plus one add. Biases, normalisation, softmax and
other elementwise work are excluded, which matches what
:class:`~lfmdt.autograd.MacCounter` records, so analytic and instrumented
counts can be compared with integer equality.

The baseline spatial Transformer used for ratios treats every SAI as a
separate batch item with ``H*W`` tokens of width ``C``: Q, K, V
projections ``C -> C``, full attention and a ``C -> 2C -> C`` FFN.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction

import numpy as np

from .autograd import MacCounter, no_grad
from .errors import ConfigError
from .network import NetworkConfig, init_params, lf_mdtnet_forward, parameter_shapes

CATEGORIES = ("projection", "qk", "av", "ffn")

# Reference figures quoted for the MDT against the authors' own baseline; not
# comparable to the ratios computed here because that baseline is not defined.
QUOTED_RATIOS = {"projection": "33%", "qk": "32%"}


@dataclass
class Counts:
    params: int = 0
    macs: dict[str, int] = field(default_factory=lambda: {c: 0 for c in CATEGORIES})

    @property
    def total_macs(self) -> int:
        return sum(self.macs.values())


def mdt_analytic(U: int, V: int, H: int, W: int, C: int, N_b: int, subset_sizes, C_D: int, C_QK: int) -> Counts:
    """Parameters and MACs of one MDT (no biases) at spatial size ``H x W``."""
    sizes = list(subset_sizes)
    if N_b < 1 or C % N_b:
        raise ConfigError(f"C={C} is not divisible by N_b={N_b}")
    if len(sizes) != N_b or min(sizes) < 1:
        raise ConfigError(f"need {N_b} non-empty SAI subsets, got sizes {sizes}")
    g, hw = C // N_b, H * W
    out = Counts()
    for s in sizes:
        out.params += s * g * C_D + 2 * C_D * C_QK
        out.macs["projection"] += hw * s * g * C_D + 2 * hw * C_D * C_QK
        out.macs["qk"] += hw * hw * C_QK
        out.macs["av"] += hw * hw * U * V * g
    return out


def mdt_branch_analytic(U, V, H, W, g, S, C_D, C_QK) -> dict[str, int]:
    hw = H * W
    return {
        "projection": hw * S * g * C_D + 2 * hw * C_D * C_QK,
        "qk": hw * hw * C_QK,
        "av": hw * hw * U * V * g,
    }


def st_baseline_analytic(U: int, V: int, H: int, W: int, C: int) -> Counts:
    """Conventional spatial Transformer baseline (weights only, no biases)."""
    hw, uv = H * W, U * V
    out = Counts(params=3 * C * C + 4 * C * C)
    out.macs["projection"] = 3 * uv * hw * C * C
    out.macs["qk"] = uv * hw * hw * C
    out.macs["av"] = uv * hw * hw * C
    out.macs["ffn"] = 4 * uv * hw * C * C
    return out


def angular_analytic(U, V, H, W, C, C_QK, C_V) -> dict[str, int]:
    t, hw = U * V, H * W
    return {
        "qkv": hw * t * C * (2 * C_QK + C_V),
        "qk": hw * t * t * C_QK,
        "av": hw * t * t * C_V,
        "out": hw * t * C_V * C,
        "ffn": hw * t * 4 * C * C,
    }


def angular_params(C, C_QK, C_V) -> int:
    return 4 * C + C * (2 * C_QK + C_V) + C_V * C + C + (2 * C * C + 2 * C) + (2 * C * C + C)


def conv_params(cin: int, cout: int) -> int:
    return 9 * cin * cout + cout


def conv_macs(U, V, H, W, cin, cout) -> int:
    return U * V * H * W * 9 * cin * cout


def block_params(cfg: NetworkConfig) -> int:
    C, m = cfg.C, cfg.mdt
    mdt = mdt_analytic(1, 1, 1, 1, C, m.N_b, [len(b) for b in m.branches], m.C_D, m.C_QK).params
    return mdt + angular_params(C, cfg.angular.C_QK, cfg.angular.C_V) + 2 * conv_params(C, C) + C


def macs_by_scope(cfg: NetworkConfig, H: int, W: int) -> dict[str, int]:
    """Analytic MACs keyed exactly like the scopes the forward pass opens."""
    U, V, C, m = cfg.U, cfg.V, cfg.C, cfg.mdt
    out = {"shallow.0": conv_macs(U, V, H, W, 1, C)}
    for k in range(1, 4):
        out[f"shallow.{k}"] = conv_macs(U, V, H, W, C, C)
    for i in range(cfg.N_a):
        b = f"blocks.{i}"
        for j, subset in enumerate(m.branches):
            for cat, n in mdt_branch_analytic(U, V, H, W, m.group, len(subset), m.C_D, m.C_QK).items():
                out[f"{b}.mdt.branch{j}.{cat}"] = n
        for cat, n in angular_analytic(U, V, H, W, C, cfg.angular.C_QK, cfg.angular.C_V).items():
            out[f"{b}.angular.{cat}"] = n
        out[f"{b}.conv1"] = conv_macs(U, V, H, W, C, C)
        out[f"{b}.conv2"] = conv_macs(U, V, H, W, C, C)
    out["recon.fuse"] = conv_macs(U, V, H, W, C + 1, C)
    out["recon.up"] = conv_macs(U, V, H, W, C, cfg.r * cfg.r)
    return out


@dataclass
class ReportRow:
    component: str
    params: int
    macs: int
    formula: str


@dataclass
class ComplexityReport:
    rows: list[ReportRow]
    ratios: dict[str, Fraction | None]
    mdt: Counts
    baseline: Counts
    setting: dict

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    def render_text(self) -> str:
        width = max(len(r.component) for r in self.rows + [ReportRow("TOTAL", 0, 0, "")])
        lines = [
            "setting: " + ", ".join(f"{k}={v}" for k, v in self.setting.items()),
            f"{'component':<{width}}  {'params':>12}  {'MACs':>16}  formula",
        ]
        for r in self.rows:
            lines.append(f"{r.component:<{width}}  {r.params:>12d}  {r.macs:>16d}  {r.formula}")
        lines.append(f"{'TOTAL':<{width}}  {self.total_params:>12d}  {self.total_macs:>16d}")
        lines.append("")
        lines.append("MDT vs baseline spatial Transformer (one layer, same U, V, H, W, C):")
        lines.append(f"  {'part':<12} {'MDT MACs':>16} {'baseline MACs':>16} {'ratio':>8}  quoted")
        for cat in CATEGORIES:
            ratio = self.ratios[cat]
            text = "n/a" if ratio is None else format_ratio(ratio)
            quoted = QUOTED_RATIOS.get(cat, "")
            lines.append(
                f"  {cat:<12} {self.mdt.macs[cat]:>16d} {self.baseline.macs[cat]:>16d} {text:>8}  {quoted}"
            )
        lines.append("  quoted figures use a different, unpublished baseline and are shown for reference only")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["component", "params", "macs", "formula"])
        for r in self.rows:
            w.writerow([r.component, r.params, r.macs, r.formula])
        w.writerow(["TOTAL", self.total_params, self.total_macs, ""])
        return buf.getvalue()


def format_ratio(ratio: Fraction) -> str:
    """Percentage with exactly three significant digits, e.g. ``8.00%``."""
    pct = ratio * 100
    if pct == 0:
        return "0.00%"
    digits = max(0, 2 - math.floor(math.log10(pct)))
    rounded = round(pct, digits)
    if rounded >= 10 ** (3 - digits) and digits > 0:
        digits -= 1
        rounded = round(pct, digits)
    text = Decimal(rounded.numerator) / Decimal(rounded.denominator)
    return f"{text:.{digits}f}%"


def network_analytic(cfg: NetworkConfig, H: int = 32, W: int = 32) -> ComplexityReport:
    """Per-component report for the whole network on ``H x W`` LR inputs."""
    U, V, C, m = cfg.U, cfg.V, cfg.C, cfg.mdt
    scopes = macs_by_scope(cfg, H, W)
    rows = [ReportRow("shallow.0", conv_params(1, C), scopes["shallow.0"], "UV*H*W*9*1*C")]
    for k in range(1, 4):
        rows.append(ReportRow(f"shallow.{k}", conv_params(C, C), scopes[f"shallow.{k}"], "UV*H*W*9*C*C"))
    sizes = [len(b) for b in m.branches]
    mdt = mdt_analytic(U, V, H, W, C, m.N_b, sizes, m.C_D, m.C_QK)
    for i in range(cfg.N_a):
        b = f"blocks.{i}"
        rows.append(ReportRow(
            f"{b}.mdt", mdt.params, mdt.total_macs,
            "sum_i HW*S_i*(C/N_b)*C_D + 2HW*C_D*C_QK + (HW)^2*C_QK + (HW)^2*UV*C/N_b",
        ))
        ang = sum(angular_analytic(U, V, H, W, C, cfg.angular.C_QK, cfg.angular.C_V).values())
        rows.append(ReportRow(
            f"{b}.angular", angular_params(C, cfg.angular.C_QK, cfg.angular.C_V), ang,
            "HW*[T*C*(2C_QK+C_V) + T^2*(C_QK+C_V) + T*C_V*C + 4T*C^2], T=UV",
        ))
        rows.append(ReportRow(f"{b}.conv1", conv_params(C, C), scopes[f"{b}.conv1"], "UV*H*W*9*C*C"))
        rows.append(ReportRow(f"{b}.conv2", conv_params(C, C), scopes[f"{b}.conv2"], "UV*H*W*9*C*C"))
        rows.append(ReportRow(f"{b}.alpha", C, 0, "C (elementwise)"))
    rows.append(ReportRow("recon.fuse", conv_params(C + 1, C), scopes["recon.fuse"], "UV*H*W*9*(C+1)*C"))
    rows.append(ReportRow("recon.up", conv_params(C, cfg.r ** 2), scopes["recon.up"], "UV*H*W*9*C*r^2"))
    baseline = st_baseline_analytic(U, V, H, W, C)
    ratios = {
        cat: (Fraction(mdt.macs[cat], baseline.macs[cat]) if baseline.macs[cat] else None) for cat in CATEGORIES
    }
    setting = {"U": U, "V": V, "H": H, "W": W, "C": C, "N_a": cfg.N_a, "N_b": m.N_b, "S": sizes,
               "C_D": m.C_D, "C_QK": m.C_QK, "r": cfg.r}
    return ComplexityReport(rows, ratios, mdt, baseline, setting)


def parameter_count(cfg: NetworkConfig) -> int:
    return sum(int(np.prod(s)) for s in parameter_shapes(cfg).values())


@dataclass
class Verification:
    passed: bool
    analytic: dict[str, int]
    instrumented: dict[str, int]
    diffs: list[tuple[str, int, int]]

    @property
    def first_divergence(self) -> str | None:
        return self.diffs[0][0] if self.diffs else None


def verify_against_instrumented(cfg: NetworkConfig, I_LR=None, params=None, seed: int = 0) -> Verification:
    """Run one forward pass under a MAC counter and compare per scope with the analytic counts."""
    if params is None:
        params = init_params(cfg, seed)
    if I_LR is None:
        I_LR = np.random.default_rng(seed).uniform(size=(cfg.U, cfg.V, 8, 8, 1)).astype(params.dtype)
    data = np.asarray(getattr(I_LR, "data", I_LR))
    H, W = data.shape[2:4]
    with no_grad(), MacCounter() as counter:
        lf_mdtnet_forward(data, cfg, params)
    analytic = macs_by_scope(cfg, H, W)
    instrumented = dict(counter.by_scope)
    diffs = [
        (key, analytic.get(key, 0), instrumented.get(key, 0))
        for key in list(analytic) + [k for k in instrumented if k not in analytic]
        if analytic.get(key, 0) != instrumented.get(key, 0)
    ]
    return Verification(not diffs, analytic, instrumented, diffs)
