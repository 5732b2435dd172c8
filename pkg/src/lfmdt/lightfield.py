"""Light-field container, ``.lfb`` files, colour conversion and resampling.

Fields are stored as ``(U, V, H, W, C)`` arrays so each sub-aperture image
(SAI) is one contiguous block.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, FormatError, LengthError, RangeWarning, SizeError

LFB_MAGIC = b"LFB1"
LFB_VERSION = 1
_LFB_HEADER = struct.Struct("<4s6I")


@dataclass
class LightField:
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 5 or min(arr.shape) < 1:
            raise DimensionError(f"light field must be (U, V, H, W, C) with extents >= 1, got {arr.shape}")
        self.data = arr

    @property
    def U(self) -> int:
        return self.data.shape[0]

    @property
    def V(self) -> int:
        return self.data.shape[1]

    @property
    def H(self) -> int:
        return self.data.shape[2]

    @property
    def W(self) -> int:
        return self.data.shape[3]

    @property
    def C(self) -> int:
        return self.data.shape[4]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def sai(self, u: int, v: int) -> np.ndarray:
        return self.data[u, v]


@dataclass(frozen=True)
class SaiSubset:
    """Ordered set of angular coordinates, kept sorted by ``(u, v)``."""

    coords: tuple[tuple[int, int], ...]

    def __init__(self, coords: Iterable[Sequence[int]]):
        pts = [(int(u), int(v)) for u, v in coords]
        if not pts:
            raise ValueError("SAI subset must hold at least one coordinate")
        if len(set(pts)) != len(pts):
            raise ValueError(f"SAI subset has duplicate coordinates: {pts}")
        object.__setattr__(self, "coords", tuple(sorted(pts)))

    def __len__(self) -> int:
        return len(self.coords)

    def __iter__(self):
        return iter(self.coords)

    def validate(self, U: int, V: int) -> None:
        for u, v in self.coords:
            if not (0 <= u < U and 0 <= v < V):
                raise IndexError(f"SAI ({u}, {v}) outside the {U}x{V} angular grid")

    def flat_indices(self, U: int, V: int) -> list[int]:
        self.validate(U, V)
        return [u * V + v for u, v in self.coords]

    def to_list(self) -> list[list[int]]:
        return [list(c) for c in self.coords]


# -- .lfb files --------------------------------------------------------------

def encode_lfb(lf: LightField) -> bytes:
    U, V, H, W, C = lf.shape
    header = _LFB_HEADER.pack(LFB_MAGIC, LFB_VERSION, U, V, H, W, C)
    return header + np.ascontiguousarray(lf.data, dtype="<f4").tobytes()


def decode_lfb(buf: bytes, clamp: bool = True) -> LightField:
    if len(buf) < _LFB_HEADER.size:
        raise FormatError(f"lfb: {len(buf)} bytes is shorter than the {_LFB_HEADER.size}-byte header")
    magic, version, U, V, H, W, C = _LFB_HEADER.unpack_from(buf)
    if magic != LFB_MAGIC:
        raise FormatError(f"lfb: bad magic {magic!r}")
    if version != LFB_VERSION:
        raise FormatError(f"lfb: unsupported version {version}")
    count = U * V * H * W * C
    payload = len(buf) - _LFB_HEADER.size
    if count == 0 or payload != 4 * count:
        raise LengthError(f"lfb: header declares {count} values ({4 * count} bytes), payload has {payload} bytes")
    data = np.frombuffer(buf, dtype="<f4", offset=_LFB_HEADER.size).astype(np.float32).reshape(U, V, H, W, C)
    if clamp:
        if data.size and (data.min() < -0.001 or data.max() > 1.001):
            warnings.warn(
                f"lfb: values span [{data.min():.4f}, {data.max():.4f}], clamping to [0, 1]",
                RangeWarning,
                stacklevel=3,
            )
        data = np.clip(data, 0.0, 1.0)
    return LightField(data)


def write_lfb(lf: LightField, path) -> None:
    Path(path).write_bytes(encode_lfb(lf))


def read_lfb(path, clamp: bool = True) -> LightField:
    """Read an ``.lfb`` file; with ``clamp`` the values are forced into [0, 1]."""
    return decode_lfb(Path(path).read_bytes(), clamp=clamp)


def write_sai_png(lf: LightField, u: int, v: int, path) -> None:
    """Save one SAI as an 8-bit PNG (round half up)."""
    from PIL import Image

    img = np.floor(np.clip(lf.data[u, v], 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(img[..., 0] if lf.C == 1 else img).save(path)


def read_sai_png(path) -> np.ndarray:
    from PIL import Image

    img = np.asarray(Image.open(path), dtype=np.float32) / 255.0
    return img[..., None] if img.ndim == 2 else img


# -- colour -----------------------------------------------------------------

_YCBCR = np.array(
    [[65.481, 128.553, 24.966], [-37.797, -74.203, 112.0], [112.0, -93.786, -18.214]]
)
_YCBCR_OFFSET = np.array([16.0, 128.0, 128.0])


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    """BT.601 studio-swing YCbCr, inputs and outputs scaled to [0, 1]."""
    return ((rgb.astype(np.float64) @ _YCBCR.T) + _YCBCR_OFFSET) / 255.0


def ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    return (ycc.astype(np.float64) * 255.0 - _YCBCR_OFFSET) @ np.linalg.inv(_YCBCR).T


def rgb_to_y(lf: LightField) -> LightField:
    if lf.C != 3:
        raise DimensionError(f"rgb_to_y needs 3 channels, got {lf.C}")
    y = rgb_to_ycbcr(lf.data)[..., :1]
    return LightField(y.astype(lf.data.dtype if lf.data.dtype == np.float64 else np.float32))


# -- bicubic resampling ------------------------------------------------------

def cubic_kernel(x, a: float = -0.5):
    """Keys cubic convolution kernel."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def output_length(n: int, scale: float) -> int:
    return int(math.ceil(n * scale - 1e-9))


def resize_weights(n_in: int, scale: float) -> np.ndarray:
    """Dense ``(n_out, n_in)`` resampling matrix for one axis.

    Downscaling widens the kernel by ``1/scale``. Rows are normalised to sum
    to one and out-of-range taps are clamped to the border sample.
    """
    n_out = output_length(n_in, scale)
    width = 4.0 / scale if scale < 1 else 4.0
    stretch = min(scale, 1.0)
    centres = (np.arange(n_out) + 0.5) / scale - 0.5
    taps = int(math.ceil(width)) + 2
    left = np.floor(centres - width / 2).astype(np.int64)
    idx = left[:, None] + np.arange(taps)[None, :]
    w = stretch * cubic_kernel(stretch * (centres[:, None] - idx))
    w /= w.sum(axis=1, keepdims=True)
    M = np.zeros((n_out, n_in))
    rows = np.repeat(np.arange(n_out), taps)
    np.add.at(M, (rows, np.clip(idx, 0, n_in - 1).ravel()), w.ravel())
    return M


def bicubic_resize(img: np.ndarray, scale: float) -> np.ndarray:
    """Resize a 2-D plane by ``scale`` (e.g. 2 or 0.5)."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise DimensionError(f"bicubic_resize expects a 2-D plane, got {img.shape}")
    if scale <= 0:
        raise ValueError("scale must be positive")
    if min(img.shape) < 4:
        raise SizeError(f"bicubic_resize needs extents >= 4, got {img.shape}")
    out_dtype = img.dtype if img.dtype in (np.float32, np.float64) else np.float64
    out = resize_weights(img.shape[0], scale) @ img.astype(np.float64) @ resize_weights(img.shape[1], scale).T
    return out.astype(out_dtype)


def resize_field(data: np.ndarray, scale: float) -> np.ndarray:
    """Apply :func:`bicubic_resize` to every SAI and channel of a ``(U, V, H, W, C)`` array."""
    U, V, H, W, C = data.shape
    h, w = output_length(H, scale), output_length(W, scale)
    out = np.empty((U, V, h, w, C), dtype=data.dtype)
    for u in range(U):
        for v in range(V):
            for c in range(C):
                out[u, v, :, :, c] = bicubic_resize(data[u, v, :, :, c], scale)
    return out


def degrade(lf: LightField, r: int) -> LightField:
    """Bicubic downsampling of every SAI by an integer factor ``r``."""
    if r < 1 or lf.H % r or lf.W % r:
        raise SizeError(f"degrade: spatial extents {lf.H}x{lf.W} not divisible by {r}")
    if r == 1:
        return LightField(lf.data.copy())
    return LightField(resize_field(lf.data, 1.0 / r))


def upsample(lf: LightField, r: int) -> LightField:
    return LightField(resize_field(lf.data, float(r)))


def extract_patch_pairs(
    hr: LightField, r: int, patch: int = 32, stride: int = 32
) -> list[tuple[LightField, LightField]]:
    """Tile ``hr`` into aligned (LR, HR) pairs; LR patches are ``patch`` pixels square.

    Each LR patch is the degradation of its own HR crop.
    """
    hp = patch * r
    if hr.H < hp or hr.W < hp:
        raise SizeError(f"extract_patch_pairs: field {hr.H}x{hr.W} smaller than HR patch {hp}")
    pairs = []
    for y in range(0, hr.H - hp + 1, stride * r):
        for x in range(0, hr.W - hp + 1, stride * r):
            crop = LightField(np.ascontiguousarray(hr.data[:, :, y:y + hp, x:x + hp]))
            pairs.append((degrade(crop, r), crop))
    return pairs


def patch_origins(hr: LightField, r: int, patch: int = 32, stride: int = 32) -> list[tuple[int, int]]:
    """HR-pixel origins of the crops returned by :func:`extract_patch_pairs`, same order."""
    hp = patch * r
    return [
        (y, x)
        for y in range(0, hr.H - hp + 1, stride * r)
        for x in range(0, hr.W - hp + 1, stride * r)
    ]


def gather_sais(lf, subset: SaiSubset):
    """Stack the subset's SAIs in sorted order: ``(S, H, W, C)``.

    Accepts a :class:`LightField`, a ``(U, V, H, W, C)`` array or a tensor
    (in which case the gather is differentiable).
    """
    from .autograd import Tensor

    if isinstance(lf, Tensor):
        from . import ops

        U, V = lf.shape[:2]
        flat = ops.reshape(lf, (U * V,) + lf.shape[2:])
        return ops.take_rows(flat, subset.flat_indices(U, V))
    data = lf.data if isinstance(lf, LightField) else np.asarray(lf)
    U, V = data.shape[:2]
    idx = subset.flat_indices(U, V)
    return data.reshape((U * V,) + data.shape[2:])[idx]


def extract_epi(lf: LightField, v: int, y: int) -> np.ndarray:
    """Horizontal EPI ``plane[u, x] = lf[u, v, y, x, 0]``."""
    if not (0 <= v < lf.V and 0 <= y < lf.H):
        raise IndexError(f"extract_epi: (v={v}, y={y}) outside V={lf.V}, H={lf.H}")
    return np.array(lf.data[:, v, y, :, 0])


def epi_disparity(epi: np.ndarray, x_range: tuple[int, int] | None = None, max_shift: int = 4) -> float:
    """Estimate EPI slope (pixels per angular step) from row-to-row correlation.

    Each pair of neighbouring rows is matched by normalised cross-correlation
    over integer shifts; the peak is refined with a parabola. ``x_range``
    restricts the comparison window (in the coordinates of the later row).
    """
    U, W = epi.shape
    if U < 2:
        raise DimensionError("epi_disparity needs at least two angular rows")
    lo, hi = x_range if x_range is not None else (0, W)
    lo, hi = max(lo, max_shift + 1), min(hi, W - max_shift - 1)
    if hi - lo < 4:
        raise SizeError("epi_disparity: comparison window too small")
    shifts = np.arange(-max_shift, max_shift + 1)
    estimates = []
    for u in range(U - 1):
        ref = epi[u + 1, lo:hi] - epi[u + 1, lo:hi].mean()
        scores = []
        for s in shifts:
            seg = epi[u, lo + s:hi + s]
            seg = seg - seg.mean()
            scores.append(float(ref @ seg) / (np.linalg.norm(ref) * np.linalg.norm(seg) + 1e-12))
        k = int(np.argmax(scores))
        k = min(max(k, 1), len(shifts) - 2)
        a, b, c = scores[k - 1], scores[k], scores[k + 1]
        denom = a - 2 * b + c
        offset = 0.5 * (a - c) / denom if denom < 0 else 0.0
        estimates.append(shifts[k] + offset)
    return float(np.mean(estimates))
