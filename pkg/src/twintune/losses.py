"""Barlow Twins loss kernel.

Pure tensor functions: branch normalization, cross-correlation, the
redundancy-reduction loss and its sparse-projector variant. Everything is
built from differentiable torch ops, so gradients of the composed loss are
available through autograd. Math runs in the input's native precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

SIGMA_FLOOR = 1e-5


class ShapeError(ValueError):
    """Raised when tensor shapes violate an operation's contract."""


@dataclass
class LossConfig:
    """Loss hyperparameters: off-diagonal trade-off and sparsity weight."""

    lambd: float = 1.0 / 8192
    alpha: float = 0.01

    def __post_init__(self):
        if self.lambd < 0 or self.alpha < 0:
            raise ValueError("lambd and alpha must be nonnegative")


@dataclass
class EmbeddingBatch:
    """An (n, d) matrix of projector outputs for one branch.

    ``normalized`` records whether columns have been standardized along the
    batch dimension; cross-correlation requires it.
    """

    values: torch.Tensor
    normalized: bool = False

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass
class CrossCorrelation:
    """A (d, d) cross-correlation matrix between two normalized branches."""

    values: torch.Tensor


def normalize_batch(z: EmbeddingBatch, sigma_floor: float = SIGMA_FLOOR) -> EmbeddingBatch:
    """Standardize each column to zero mean and unit population std.

    Uses the population (1/n) standard deviation. Constant columns map to
    zeros via the std floor instead of raising.
    """
    v = z.values
    if v.ndim != 2:
        raise ShapeError(f"expected an (n, d) matrix, got shape {tuple(v.shape)}")
    if v.shape[0] < 2:
        raise ShapeError(f"batch dimension must be >= 2, got {v.shape[0]}")
    if z.normalized:
        raise ValueError("batch is already normalized")
    mu = v.mean(dim=0)
    sigma = v.std(dim=0, unbiased=False)
    out = (v - mu) / torch.clamp(sigma, min=sigma_floor)
    return EmbeddingBatch(out, normalized=True)


def cross_correlation(z: EmbeddingBatch, z_prime: EmbeddingBatch) -> CrossCorrelation:
    """Cross-correlation of two normalized branches: (1/n) z'^T z."""
    if not (z.normalized and z_prime.normalized):
        raise ValueError("both branches must be normalized first")
    if z.values.shape != z_prime.values.shape:
        raise ShapeError(
            f"branch shapes differ: {tuple(z.values.shape)} vs {tuple(z_prime.values.shape)}"
        )
    n = z.values.shape[0]
    return CrossCorrelation(z_prime.values.t() @ z.values / n)


def _off_diagonal(m: torch.Tensor) -> torch.Tensor:
    # flattened view of all off-diagonal elements of a square matrix
    n, k = m.shape
    assert n == k
    return m.flatten()[:-1].view(n - 1, n + 1)[:, 1:].flatten()


def barlow_twins_loss(c: CrossCorrelation, cfg: LossConfig) -> torch.Tensor:
    """Invariance term plus lambda-weighted redundancy-reduction term.

    sum_i (C_ii - 1)^2 + lambd * sum_{i != j} C_ij^2. Zero iff C is the
    identity.
    """
    m = c.values
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"cross-correlation must be square, got {tuple(m.shape)}")
    on_diag = (torch.diagonal(m) - 1).pow(2).sum()
    off_diag = _off_diagonal(m).pow(2).sum()
    return on_diag + cfg.lambd * off_diag


def l21_norm(w: torch.Tensor, groups: str = "rows") -> torch.Tensor:
    """Sum of Euclidean norms over rows (or columns) of a weight matrix.

    Rows are the default grouping: each output unit's incoming weights form
    one group. Column grouping is kept available because the convention is
    not universal.
    """
    if w.numel() == 0:
        raise ShapeError("weight matrix must be non-empty")
    if groups == "rows":
        return torch.linalg.vector_norm(w, dim=1).sum()
    if groups == "columns":
        return torch.linalg.vector_norm(w, dim=0).sum()
    raise ValueError(f"unknown grouping {groups!r}, expected 'rows' or 'columns'")


def sparse_bt_loss(
    c: CrossCorrelation,
    w_final: torch.Tensor,
    cfg: LossConfig,
    groups: str = "rows",
) -> torch.Tensor:
    """Barlow Twins loss plus alpha-scaled L2,1 penalty on the final weights."""
    return barlow_twins_loss(c, cfg) + cfg.alpha * l21_norm(w_final, groups=groups)
