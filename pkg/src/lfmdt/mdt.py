"""Multi-scale disparity Transformer.

Features are split into ``N_b`` contiguous channel groups. Group ``i``
attends over spatial tokens: queries and keys are built from a small set of
SAIs (``subset``) merged into the embedding axis and compressed by ``D``,
while the values are the unprojected features of every SAI.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .autograd import Tensor, mac_scope
from .errors import ConfigError, DimensionError, NumericError
from .lightfield import SaiSubset, gather_sais

CORNERS_5x5 = SaiSubset([(0, 0), (0, 4), (4, 0), (4, 4)])
INNER_DIAGONAL_5x5 = SaiSubset([(1, 1), (1, 3), (3, 1), (3, 3)])
INNER_CROSS_5x5 = SaiSubset([(1, 2), (2, 1), (2, 3), (3, 2)])
EDGE_MIDPOINTS_5x5 = SaiSubset([(0, 2), (2, 0), (2, 4), (4, 2)])


def default_subsets(U: int, V: int) -> list[SaiSubset]:
    """Corner SAIs and the inner diagonal ring of a 5x5 grid."""
    if (U, V) != (5, 5):
        raise ConfigError(f"no default SAI subsets for a {U}x{V} grid; list mdt.branches explicitly")
    return [CORNERS_5x5, INNER_DIAGONAL_5x5]


@dataclass
class MdtConfig:
    N_b: int = 2
    C: int = 48
    C_D: int = 96
    C_QK: int = 48
    branches: list[SaiSubset] = field(default_factory=lambda: list(default_subsets(5, 5)))

    def __post_init__(self):
        self.branches = [b if isinstance(b, SaiSubset) else SaiSubset(b) for b in self.branches]
        if self.N_b != len(self.branches):
            raise ConfigError(f"mdt.N_b={self.N_b} but {len(self.branches)} branches are listed")
        if min(self.N_b, self.C, self.C_D, self.C_QK) < 1:
            raise ConfigError("mdt widths and branch count must be >= 1")
        if self.C % self.N_b:
            raise ConfigError(f"C={self.C} is not divisible by N_b={self.N_b}")

    @property
    def group(self) -> int:
        return self.C // self.N_b


@dataclass
class DsaBranchParams:
    subset: SaiSubset
    D: Tensor
    W_Q: Tensor
    W_K: Tensor

    def check(self, group: int) -> None:
        s = len(self.subset)
        c_d = self.D.shape[1]
        if self.D.shape != (s * group, c_d):
            raise DimensionError(f"D has shape {self.D.shape}, expected ({s * group}, {c_d})")
        if self.W_Q.shape != self.W_K.shape or self.W_Q.shape[0] != c_d:
            raise DimensionError(f"W_Q {self.W_Q.shape} / W_K {self.W_K.shape} do not follow D {self.D.shape}")


def dsa_attention(X: Tensor, params: DsaBranchParams) -> Tensor:
    """Attention weights ``(HW, HW)`` of one disparity self-attention branch."""
    U, V, H, W, c = X.shape
    params.check(c)
    S = len(params.subset)
    with mac_scope("projection"):
        sub = gather_sais(X, params.subset)                           # (S, H, W, c)
        tokens = ops.reshape(ops.permute(sub, (1, 2, 0, 3)), (H * W, S * c))
        emb = ops.matmul(tokens, params.D)
        q = ops.matmul(emb, params.W_Q)
        k = ops.matmul(emb, params.W_K)
    with mac_scope("qk"):
        scores = ops.matmul(q, ops.transpose2d(k))
    scores = ops.scale(scores, 1.0 / math.sqrt(params.W_Q.shape[1]))
    return ops.softmax_rows(scores)


def dsa_forward(X: Tensor, params: DsaBranchParams, return_attention: bool = False):
    """One branch on ``X`` of shape ``(U, V, H, W, c)``; output has the same shape."""
    U, V, H, W, c = X.shape
    A = dsa_attention(X, params)
    values = ops.reshape(ops.permute(X, (2, 3, 0, 1, 4)), (H * W, U * V * c))
    with mac_scope("av"):
        out = ops.matmul(A, values)
    out = ops.permute(ops.reshape(out, (H, W, U, V, c)), (2, 3, 0, 1, 4))
    if not np.isfinite(out.data).all():
        raise NumericError("dsa_forward produced non-finite activations")
    return (out, A) if return_attention else out


def mdt_forward(
    X: Tensor, cfg: MdtConfig, branch_params: list[DsaBranchParams], return_branches: bool = False
):
    """Split channels, run each branch, concatenate in branch order."""
    if X.ndim != 5 or X.shape[-1] != cfg.C:
        raise DimensionError(f"mdt_forward: expected (U, V, H, W, {cfg.C}), got {X.shape}")
    if len(branch_params) != cfg.N_b:
        raise DimensionError(f"mdt_forward: {len(branch_params)} parameter sets for {cfg.N_b} branches")
    outs = []
    for i, (part, params) in enumerate(zip(ops.split_lastdim(X, cfg.N_b), branch_params)):
        with mac_scope(f"branch{i}"):
            outs.append(dsa_forward(part, params))
    Y = ops.concat_lastdim(outs)
    return (Y, outs) if return_branches else Y


def ablation_variants() -> dict[str, list[SaiSubset]]:
    """Branch layouts for the nine SAI-subset ablation rows on a 5x5 grid."""
    corners_diag = SaiSubset([(0, 0), (4, 4)])
    inner_diag = SaiSubset([(1, 1), (3, 3)])
    every = SaiSubset([(u, v) for u in range(5) for v in range(5)])
    return {
        "a": [CORNERS_5x5, INNER_DIAGONAL_5x5],
        "b": [CORNERS_5x5],
        "c": [INNER_DIAGONAL_5x5],
        "d": [corners_diag, inner_diag],
        "e": [corners_diag],
        "f": [inner_diag],
        "g": [SaiSubset([(2, 2)])],
        "h": [CORNERS_5x5, INNER_DIAGONAL_5x5, EDGE_MIDPOINTS_5x5],
        "i": [every],
    }
