"""LF-MDTNet: shallow convolutions, correlation blocks, reconstruction.

All feature tensors are laid out ``(U, V, H, W, C)``. Spatial convolutions
run on every SAI independently by folding the angular axes into the batch.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import ops
from .autograd import Tensor, mac_scope
from .errors import CheckpointError, ConfigError, DimensionError, FormatError, LengthError
from .lightfield import resize_field
from .mdt import DsaBranchParams, MdtConfig, default_subsets, mdt_forward


@dataclass
class AngularConfig:
    C_QK: int = 48
    C_V: int = 96


@dataclass
class NetworkConfig:
    U: int = 5
    V: int = 5
    r: int = 2
    C: int = 48
    N_a: int = 16
    mdt: MdtConfig | None = None
    angular: AngularConfig = field(default_factory=AngularConfig)
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.r not in (2, 4):
            raise ConfigError(f"r must be 2 or 4, got {self.r}")
        if self.N_a < 1:
            raise ConfigError(f"N_a must be >= 1, got {self.N_a}")
        if min(self.U, self.V, self.C, self.angular.C_QK, self.angular.C_V) < 1:
            raise ConfigError("U, V, C and angular widths must be >= 1")
        if self.mdt is None:
            self.mdt = MdtConfig(N_b=2, C=self.C, C_D=96, C_QK=48, branches=default_subsets(self.U, self.V))
        if self.mdt.C != self.C:
            raise ConfigError(f"mdt.C={self.mdt.C} differs from C={self.C}")
        for subset in self.mdt.branches:
            try:
                subset.validate(self.U, self.V)
            except IndexError as exc:
                raise ConfigError(f"mdt.branches: {exc}") from None

    def to_dict(self) -> dict:
        return {
            "U": self.U,
            "V": self.V,
            "r": self.r,
            "C": self.C,
            "N_a": self.N_a,
            "leaky_slope": self.leaky_slope,
            "mdt": {
                "N_b": self.mdt.N_b,
                "C_D": self.mdt.C_D,
                "C_QK": self.mdt.C_QK,
                "branches": [b.to_list() for b in self.mdt.branches],
            },
            "angular": {"C_QK": self.angular.C_QK, "C_V": self.angular.C_V},
        }


def toy_config(**overrides) -> NetworkConfig:
    """The small 3x3 configuration used for gradient checks."""
    opts = dict(U=3, V=3, r=2, C=8, N_a=1, C_D=16, C_QK=8, C_V=16)
    opts.update(overrides)
    branches = opts.pop("branches", [[(0, 0), (0, 2), (2, 0), (2, 2)], [(1, 1)]])
    mdt = MdtConfig(N_b=len(branches), C=opts["C"], C_D=opts.pop("C_D"), C_QK=opts["C_QK"], branches=branches)
    angular = AngularConfig(C_QK=opts.pop("C_QK"), C_V=opts.pop("C_V"))
    return NetworkConfig(mdt=mdt, angular=angular, **opts)


class ParameterStore:
    """Ordered name -> Tensor map holding every trainable array."""

    def __init__(self, items=None):
        self._items: dict[str, Tensor] = {}
        for name, t in (items.items() if isinstance(items, dict) else items or []):
            self[name] = t

    def __setitem__(self, name: str, t: Tensor) -> None:
        if name in self._items:
            raise KeyError(f"duplicate parameter name {name!r}")
        t.name = name
        self._items[name] = t

    def __getitem__(self, name: str) -> Tensor:
        return self._items[name]

    def __contains__(self, name: str) -> bool:
        return name in self._items

    def __iter__(self) -> Iterator[str]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def items(self):
        return self._items.items()

    def names(self) -> list[str]:
        return list(self._items)

    def values(self):
        return self._items.values()

    def count(self) -> int:
        return sum(t.size for t in self._items.values())

    def astype(self, dtype) -> "ParameterStore":
        return ParameterStore({n: Tensor(t.data.astype(dtype), requires_grad=True) for n, t in self.items()})

    def copy(self) -> "ParameterStore":
        return self.astype(self.dtype)

    @property
    def dtype(self):
        return next(iter(self._items.values())).dtype

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {n: t.shape for n, t in self.items()}


def parameter_shapes(cfg: NetworkConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every trainable array, in canonical order."""
    C, r = cfg.C, cfg.r
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(prefix, cin, cout):
        shapes[f"{prefix}.weight"] = (cout, cin, 3, 3)
        shapes[f"{prefix}.bias"] = (cout,)

    conv("shallow.0", 1, C)
    for k in range(1, 4):
        conv(f"shallow.{k}", C, C)
    g = cfg.mdt.group
    aqk, av = cfg.angular.C_QK, cfg.angular.C_V
    for i in range(cfg.N_a):
        b = f"blocks.{i}"
        for j, subset in enumerate(cfg.mdt.branches):
            shapes[f"{b}.mdt.branch{j}.D"] = (len(subset) * g, cfg.mdt.C_D)
            shapes[f"{b}.mdt.branch{j}.W_Q"] = (cfg.mdt.C_D, cfg.mdt.C_QK)
            shapes[f"{b}.mdt.branch{j}.W_K"] = (cfg.mdt.C_D, cfg.mdt.C_QK)
        a = f"{b}.angular"
        shapes[f"{a}.ln1.gamma"] = (C,)
        shapes[f"{a}.ln1.beta"] = (C,)
        shapes[f"{a}.W_q"] = (C, aqk)
        shapes[f"{a}.W_k"] = (C, aqk)
        shapes[f"{a}.W_v"] = (C, av)
        shapes[f"{a}.out.weight"] = (av, C)
        shapes[f"{a}.out.bias"] = (C,)
        shapes[f"{a}.ln2.gamma"] = (C,)
        shapes[f"{a}.ln2.beta"] = (C,)
        shapes[f"{a}.ffn1.weight"] = (C, 2 * C)
        shapes[f"{a}.ffn1.bias"] = (2 * C,)
        shapes[f"{a}.ffn2.weight"] = (2 * C, C)
        shapes[f"{a}.ffn2.bias"] = (C,)
        conv(f"{b}.conv1", C, C)
        conv(f"{b}.conv2", C, C)
        shapes[f"{b}.alpha"] = (C,)
    conv("recon.fuse", C + 1, C)
    conv("recon.up", C, r * r)
    return shapes


def _fan_in(shape: tuple[int, ...]) -> int:
    return shape[1] * 9 if len(shape) == 4 else shape[0]


def init_params(cfg: NetworkConfig, seed: int = 0, dtype=np.float32) -> ParameterStore:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit gains and alphas."""
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    for name, shape in parameter_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("bias", "beta"):
            arr = np.zeros(shape)
        elif leaf in ("gamma", "alpha"):
            arr = np.ones(shape)
        else:
            bound = 1.0 / math.sqrt(_fan_in(shape))
            arr = rng.uniform(-bound, bound, size=shape)
        store[name] = Tensor(arr.astype(dtype), requires_grad=True)
    return store


def zero_params(cfg: NetworkConfig, dtype=np.float32) -> ParameterStore:
    """All weights zero except layer-norm gains and block alphas (one)."""
    store = ParameterStore()
    for name, shape in parameter_shapes(cfg).items():
        fill = 1.0 if name.endswith(("gamma", "alpha")) else 0.0
        store[name] = Tensor(np.full(shape, fill, dtype=dtype), requires_grad=True)
    return store


def branch_params(cfg: NetworkConfig, p: ParameterStore, block: int) -> list[DsaBranchParams]:
    pre = f"blocks.{block}.mdt"
    return [
        DsaBranchParams(subset, p[f"{pre}.branch{j}.D"], p[f"{pre}.branch{j}.W_Q"], p[f"{pre}.branch{j}.W_K"])
        for j, subset in enumerate(cfg.mdt.branches)
    ]


# -- forward pieces --------------------------------------------------------------

def conv_per_sai(X: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """3x3 convolution of every SAI of ``(U, V, H, W, C)`` features."""
    U, V, H, W, C = X.shape
    y = ops.conv2d_same_nhwc(ops.reshape(X, (U * V, H, W, C)), w, b)
    return ops.reshape(y, (U, V, H, W, w.shape[0]))


def shallow_extract(I: Tensor, p: ParameterStore, cfg: NetworkConfig) -> Tensor:
    if I.shape[-1] != 1:
        raise DimensionError(f"shallow_extract expects single-channel input, got {I.shape}")
    x = I
    with mac_scope("shallow"):
        for k in range(4):
            with mac_scope(str(k)):
                x = ops.leaky_relu(conv_per_sai(x, p[f"shallow.{k}.weight"], p[f"shallow.{k}.bias"]), cfg.leaky_slope)
    return x


def angular_transformer_forward(X: Tensor, p: ParameterStore, prefix: str, cfg: NetworkConfig) -> Tensor:
    """Pre-norm Transformer over the U*V SAI tokens at each spatial position."""
    U, V, H, W, C = X.shape
    T = U * V
    x = ops.reshape(ops.permute(X, (2, 3, 0, 1, 4)), (H * W, T, C))
    h = ops.layer_norm_lastdim(x, p[f"{prefix}.ln1.gamma"], p[f"{prefix}.ln1.beta"])
    with mac_scope("qkv"):
        q = ops.linear(h, p[f"{prefix}.W_q"])
        k = ops.linear(h, p[f"{prefix}.W_k"])
        v = ops.linear(h, p[f"{prefix}.W_v"])
    with mac_scope("qk"):
        s = ops.bmm(q, ops.permute(k, (0, 2, 1)))
    a = ops.softmax_rows(ops.scale(s, 1.0 / math.sqrt(cfg.angular.C_QK)))
    with mac_scope("av"):
        o = ops.bmm(a, v)
    with mac_scope("out"):
        o = ops.linear(o, p[f"{prefix}.out.weight"], p[f"{prefix}.out.bias"])
    x = ops.add(x, o)
    h = ops.layer_norm_lastdim(x, p[f"{prefix}.ln2.gamma"], p[f"{prefix}.ln2.beta"])
    with mac_scope("ffn"):
        h = ops.linear(h, p[f"{prefix}.ffn1.weight"], p[f"{prefix}.ffn1.bias"])
        h = ops.linear(ops.gelu(h), p[f"{prefix}.ffn2.weight"], p[f"{prefix}.ffn2.bias"])
    x = ops.add(x, h)
    return ops.permute(ops.reshape(x, (H, W, U, V, C)), (2, 3, 0, 1, 4))


def correlation_block_forward(
    X: Tensor, p: ParameterStore, block: int, cfg: NetworkConfig, capture: dict | None = None
) -> Tensor:
    pre = f"blocks.{block}"
    with mac_scope(pre):
        with mac_scope("mdt"):
            Y, branches = mdt_forward(X, cfg.mdt, branch_params(cfg, p, block), return_branches=True)
        if capture is not None:
            capture["branches"] = branches
        with mac_scope("angular"):
            Y = angular_transformer_forward(Y, p, f"{pre}.angular", cfg)
        with mac_scope("conv1"):
            Y = ops.leaky_relu(conv_per_sai(Y, p[f"{pre}.conv1.weight"], p[f"{pre}.conv1.bias"]), cfg.leaky_slope)
        with mac_scope("conv2"):
            Y = conv_per_sai(Y, p[f"{pre}.conv2.weight"], p[f"{pre}.conv2.bias"])
    return ops.add(ops.scale_channels(X, p[f"{pre}.alpha"]), Y)


def bicubic_skip(I_LR: np.ndarray, r: int) -> np.ndarray:
    return resize_field(I_LR, float(r))


def reconstruct(F: Tensor, I_LR: Tensor, p: ParameterStore, cfg: NetworkConfig) -> Tensor:
    U, V, h, w, _ = F.shape
    r = cfg.r
    G = ops.concat_lastdim([F, I_LR])
    with mac_scope("recon"):
        with mac_scope("fuse"):
            G = ops.leaky_relu(conv_per_sai(G, p["recon.fuse.weight"], p["recon.fuse.bias"]), cfg.leaky_slope)
        with mac_scope("up"):
            x = ops.conv2d_same_nhwc(ops.reshape(G, (U * V, h, w, cfg.C)), p["recon.up.weight"], p["recon.up.bias"])
    x = ops.pixel_shuffle(ops.permute(x, (0, 3, 1, 2)), r)
    x = ops.reshape(x, (U, V, r * h, r * w, 1))
    return ops.add(x, Tensor(bicubic_skip(I_LR.data, r)))


def as_input(I_LR, dtype) -> Tensor:
    data = I_LR.data if hasattr(I_LR, "data") else np.asarray(I_LR)
    return Tensor(np.ascontiguousarray(data, dtype=dtype))


def lf_mdtnet_forward(I_LR, cfg: NetworkConfig, p: ParameterStore, capture: dict | None = None) -> Tensor:
    """Super-resolve a ``(U, V, h, w, 1)`` light field to ``(U, V, r*h, r*w, 1)``.

    ``capture`` (optional dict) receives the per-branch MDT outputs of the
    last correlation block under ``"branches"``.
    """
    I = as_input(I_LR, p.dtype)
    if I.ndim != 5 or I.shape[:2] != (cfg.U, cfg.V) or I.shape[-1] != 1:
        raise DimensionError(f"input {I.shape} does not match ({cfg.U}, {cfg.V}, h, w, 1)")
    x = shallow_extract(I, p, cfg)
    for i in range(cfg.N_a):
        x = correlation_block_forward(x, p, i, cfg, capture if i == cfg.N_a - 1 else None)
    return reconstruct(x, I, p, cfg)


# -- checkpoints ---------------------------------------------------------------

CKPT_MAGIC = b"LFMW"
CKPT_VERSION = 1


def encode_checkpoint(store: ParameterStore) -> bytes:
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(store))]
    for name, t in store.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_checkpoint(buf: bytes) -> ParameterStore:
    if len(buf) < 12 or buf[:4] != CKPT_MAGIC:
        raise FormatError("checkpoint: bad magic")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"checkpoint: unsupported version {version}")
    pos = 12
    store = ParameterStore()

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise LengthError("checkpoint: truncated")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(take(4 * n), dtype="<f4").astype(np.float32).reshape(shape)
        store[name] = Tensor(data, requires_grad=True)
    if pos != len(buf):
        raise LengthError(f"checkpoint: {len(buf) - pos} trailing bytes")
    return store


def save_checkpoint(store: ParameterStore, path) -> None:
    Path(path).write_bytes(encode_checkpoint(store))


def load_checkpoint(path, cfg: NetworkConfig | None = None) -> ParameterStore:
    store = decode_checkpoint(Path(path).read_bytes())
    if cfg is not None:
        check_store(store, cfg)
    return store


def check_store(store: ParameterStore, cfg: NetworkConfig) -> None:
    expected = parameter_shapes(cfg)
    if list(expected) != store.names():
        missing = [n for n in expected if n not in store]
        extra = [n for n in store if n not in expected]
        raise CheckpointError(f"parameter names differ from config: missing={missing[:3]} extra={extra[:3]}")
    for name, shape in expected.items():
        if store[name].shape != shape:
            raise CheckpointError(f"{name}: checkpoint shape {store[name].shape} != config shape {shape}")
