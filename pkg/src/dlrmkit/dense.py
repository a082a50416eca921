"""Dense numeric kernel: deterministic matrix products, activations, seeded RNG
streams, and partition-invariant cross-sample reductions.

Everything here is float64. Two determinism guarantees matter to the rest of
the package:

* ``matmul`` computes each output row with an independent vector-matrix
  product, so the rows of ``matmul(a, b)`` are bit-identical whether ``a`` is
  the full mini-batch or any row-slice of it. (Whole-matrix BLAS GEMM does
  not have this property; its small-matrix kernels sum in different orders.)

* ``outer_sum_components`` / ``col_sum_components`` reduce over the sample
  axis using grid-snapped splits whose products and partial sums are exact in
  float64. Exact arithmetic is associative, so the reduction result is
  bit-identical for any contiguous partition of the samples, the property
  that makes data-parallel gradient allreduce match serial training exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Matrix",
    "RngStream",
    "matmul",
    "dot",
    "activation",
    "activation_grad",
    "rng_uniform",
    "rng_normal",
    "ACTIVATION_KINDS",
    "CROSS_TERMS",
    "reduction_bits",
    "grid_components",
    "outer_sum_components",
    "col_sum_components",
    "sum_components",
]

# A Matrix is a 2-D float64 ndarray (row-major). Helpers below validate shape.
Matrix = np.ndarray


class ShapeError(ValueError):
    """Dimension mismatch between operands; message names both shapes."""


def _as_matrix(a, name: str) -> Matrix:
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {out.shape}")
    return out


# ---------------------------------------------------------------------------
# products

def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product with per-row determinism.

    result[i] depends only on a[i] and b, so row-slicing ``a`` never changes
    the bits of the surviving rows. Raises ShapeError on an inner-dimension
    mismatch.
    """
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul inner dimensions differ: {a.shape} x {b.shape}"
        )
    out = np.empty((a.shape[0], b.shape[1]), dtype=np.float64)
    for i in range(a.shape[0]):
        np.matmul(a[i], b, out=out[i])
    return out


def dot(u, v) -> float:
    """Inner product, defined as the 1 x n by n x 1 matmul (same reduction)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.ndim != 1 or v.ndim != 1:
        raise ShapeError(f"dot expects vectors, got {u.shape} and {v.shape}")
    if u.shape[0] != v.shape[0]:
        raise ShapeError(f"dot length mismatch: {u.shape[0]} vs {v.shape[0]}")
    return float(matmul(u[None, :], v[:, None])[0, 0])


# ---------------------------------------------------------------------------
# activations

ACTIVATION_KINDS = ("relu", "sigmoid", "identity")


def activation(x: np.ndarray, kind: str) -> np.ndarray:
    """Componentwise activation map."""
    x = np.asarray(x, dtype=np.float64)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "sigmoid":
        return _sigmoid(x)
    if kind == "identity":
        return x.copy()
    raise ValueError(f"unknown activation kind: {kind!r}")


def activation_grad(x: np.ndarray, kind: str) -> np.ndarray:
    """Derivative of the activation, evaluated at pre-activation ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if kind == "relu":
        return np.where(x > 0.0, 1.0, 0.0)
    if kind == "sigmoid":
        s = _sigmoid(x)
        return s * (1.0 - s)
    if kind == "identity":
        return np.ones_like(x)
    raise ValueError(f"unknown activation kind: {kind!r}")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Evaluate on the side that never overflows exp().
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# seeded RNG streams

@dataclass
class RngStream:
    """Seedable, portable random stream (numpy Philox, counter-based).

    The same (seed, key) always reproduces the same sequence. Substreams for
    independent consumers come from ``derive``, which maps a tuple of integer
    keys through SeedSequence spawn keys, so stream layout is stable no matter
    the draw order elsewhere.
    """

    seed: int
    key: tuple[int, ...] = ()
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def derive(self, *key: int) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(key))

    def uniform(self, rows: int, cols: int) -> Matrix:
        """Matrix of draws from [0, 1)."""
        return self._gen.random((rows, cols), dtype=np.float64)

    def normal(self, rows: int, cols: int) -> Matrix:
        """Matrix of standard-normal draws."""
        return self._gen.standard_normal((rows, cols), dtype=np.float64)

    def integers(self, low: int, high: int, size) -> np.ndarray:
        """Uniform integers in [low, high)."""
        return self._gen.integers(low, high, size=size, dtype=np.int64)

    def random_scalar(self) -> float:
        return float(self._gen.random())


def rng_uniform(stream: RngStream, rows: int, cols: int) -> Matrix:
    return stream.uniform(rows, cols)


def rng_normal(stream: RngStream, rows: int, cols: int) -> Matrix:
    return stream.normal(rows, cols)


# ---------------------------------------------------------------------------
# partition-invariant cross-sample reductions
#
# To sum f64 values over the sample axis with a result that does not depend
# on how samples are grouped, each factor column is split into LEVELS
# magnitude slices snapped to power-of-two grids anchored at the column's
# batch-wide abs-max. Slice quotients carry at most `bits` significant bits,
# so slice products carry at most 2*bits, and sums of up to n of them stay
# below 2^53 grid units: every add is exact, hence order- and
# partition-independent. Only the final recombination of the (few) slice
# totals rounds, and that happens identically everywhere.

LEVELS = 3
# (p, q) slice pairs kept for weight-gradient products, in recombination
# order; dropped pairs contribute below ~2^-80 relative to the column scale.
CROSS_TERMS = ((1, 1), (1, 2), (2, 1), (1, 3), (2, 2), (3, 1))


def reduction_bits(n_total: int) -> int:
    """Significand bits per slice so that n_total exact products sum exactly."""
    if n_total < 1:
        raise ValueError("n_total must be >= 1")
    return (53 - max(2, math.ceil(math.log2(max(n_total, 2))))) // 2


def grid_components(a: Matrix, col_max: np.ndarray, n_total: int):
    """Split columns of ``a`` into LEVELS grid-snapped slices.

    col_max must be the abs-max of each column over the FULL sample set (all
    shards), so the grids are identical no matter which row-slice ``a`` is.
    Values above col_max (never the case when col_max is computed correctly)
    or non-finite inputs void the exactness guarantee.
    """
    a = np.asarray(a, dtype=np.float64)
    col_max = np.asarray(col_max, dtype=np.float64)
    bits = reduction_bits(n_total)
    nz = col_max > 0.0
    # col_max <= 2^e
    e = np.frexp(col_max)[1]
    comps = []
    rem = a
    for p in range(1, LEVELS + 1):
        grid = np.ldexp(1.0, e - p * bits)
        # round-to-nearest-even onto the grid via the 1.5*2^52 magic constant
        c = np.where(nz, np.ldexp(1.5, 52) * grid, 0.0)
        snapped = (rem + c) - c
        snapped = np.where(nz, snapped, 0.0)
        comps.append(snapped)
        rem = rem - snapped
    return comps


def outer_sum_components(gy: Matrix, x: Matrix, gy_max, x_max, n_total: int):
    """Exact-slice components of sum_b outer(gy[b], x[b]).

    Returns one (gy_cols x x_cols) matrix per CROSS_TERMS pair. Each is an
    exact value: summing the per-shard components elementwise and then
    ``sum_components`` gives bits identical to computing over the full batch.
    """
    gs = grid_components(gy, gy_max, n_total)
    xs = grid_components(x, x_max, n_total)
    return [gs[p - 1].T @ xs[q - 1] for p, q in CROSS_TERMS]


def col_sum_components(a: Matrix, col_max, n_total: int):
    """Exact-slice components of the per-column sum over samples."""
    return [c.sum(axis=0) for c in grid_components(a, col_max, n_total)]


def sum_components(components):
    """Recombine slice totals in fixed order (the only rounding site)."""
    out = np.array(components[0], dtype=np.float64, copy=True)
    for c in components[1:]:
        out = out + c
    return out
