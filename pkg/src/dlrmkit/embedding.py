"""Embedding tables and pooled multi-hot lookups in offsets/indices form.

A mini-batch of t lookups against one table is a CSR-like triple: ``offsets``
of length t+1 (terminal entry equals len(indices)), flat ``indices`` into the
table, and optional per-index ``weights``. Segment j of a batch is
``indices[offsets[j]:offsets[j+1]]``; its pooled output is the weighted sum
of the referenced rows, accumulated in ascending flat-index order (a strict
fold, so results are reproducible and independent of everything outside the
segment).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dense import Matrix, RngStream

__all__ = [
    "EmbeddingTable",
    "SparseBatch",
    "SparseRowGrad",
    "LookupIndexError",
    "offsets_from_lengths",
    "lengths_from_offsets",
    "lookup_batch",
    "lookup_backward",
]


class LookupIndexError(IndexError):
    """An index falls outside the table; carries table id, position, index."""

    def __init__(self, table_id, position, index, num_rows):
        self.table_id = table_id
        self.position = position
        self.index = index
        super().__init__(
            f"table {table_id}: index {index} at flat position {position} "
            f"out of range [0, {num_rows})"
        )


@dataclass
class EmbeddingTable:
    """An m x d parameter matrix whose rows embed m categories."""

    weights: Matrix
    table_id: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError(f"weights must be m x d, got {self.weights.shape}")

    @property
    def num_rows(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def initialize(cls, num_rows: int, dim: int, stream: RngStream,
                   table_id: int = 0) -> "EmbeddingTable":
        """Rows uniform in (-1/sqrt(d), +1/sqrt(d))."""
        bound = 1.0 / np.sqrt(dim)
        w = (stream.uniform(num_rows, dim) * 2.0 - 1.0) * bound
        return cls(w, table_id)


@dataclass
class SparseBatch:
    """offsets/indices(/weights) encoding of t pooled lookups."""

    offsets: np.ndarray
    indices: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=np.int64)
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float64)
        self.validate()

    def validate(self):
        o = self.offsets
        if o.ndim != 1 or o.shape[0] < 1:
            raise ValueError("offsets must be 1-D with at least the leading 0")
        if o[0] != 0:
            raise ValueError(f"offsets[0] must be 0, got {o[0]}")
        if np.any(np.diff(o) < 0):
            raise ValueError("offsets must be nondecreasing")
        if o[-1] != self.indices.shape[0]:
            raise ValueError(
                f"terminal offset {o[-1]} != len(indices) {self.indices.shape[0]}"
            )
        if self.weights is not None and self.weights.shape != self.indices.shape:
            raise ValueError(
                f"weights shape {self.weights.shape} does not align with "
                f"indices shape {self.indices.shape}"
            )

    @property
    def num_segments(self) -> int:
        return self.offsets.shape[0] - 1

    def lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    def segment_slice(self, j: int) -> slice:
        return slice(int(self.offsets[j]), int(self.offsets[j + 1]))

    def check_bounds(self, table: EmbeddingTable):
        bad = np.nonzero(
            (self.indices < 0) | (self.indices >= table.num_rows)
        )[0]
        if bad.size:
            k = int(bad[0])
            raise LookupIndexError(table.table_id, k, int(self.indices[k]),
                                   table.num_rows)


@dataclass
class SparseRowGrad:
    """Coalesced sparse gradient: ascending unique row ids + one d-vector each."""

    rows: np.ndarray
    values: Matrix

    def to_dense(self, num_rows: int) -> Matrix:
        out = np.zeros((num_rows, self.values.shape[1]))
        out[self.rows] = self.values
        return out


def offsets_from_lengths(lengths) -> np.ndarray:
    """Prefix sums with the leading 0 and the terminal total (CSR style)."""
    lengths = np.asarray(lengths, dtype=np.int64)
    if np.any(lengths < 0):
        raise ValueError("lengths must be nonnegative")
    out = np.zeros(lengths.shape[0] + 1, dtype=np.int64)
    np.cumsum(lengths, out=out[1:])
    return out


def lengths_from_offsets(offsets) -> np.ndarray:
    offsets = np.asarray(offsets, dtype=np.int64)
    return np.diff(offsets)


def lookup_batch(table: EmbeddingTable, batch: SparseBatch) -> Matrix:
    """Pooled lookup: row j = sum over segment j of w[index] * weight.

    Empty segments produce zero rows. Accumulation is a strict ascending fold
    over the flat index positions of each segment.
    """
    batch.check_bounds(table)
    t = batch.num_segments
    d = table.dim
    gathered = table.weights[batch.indices]
    if batch.weights is not None:
        gathered = gathered * batch.weights[:, None]
    out = np.zeros((t, d))
    lens = batch.lengths()
    if t and lens.size and np.all(lens == lens[0]) and lens[0] > 0:
        # uniform segment length: one fused strict fold along the middle axis
        k = int(lens[0])
        np.add.reduce(gathered.reshape(t, k, d), axis=1, out=out)
        return out
    offs = batch.offsets
    for j in range(t):
        lo, hi = int(offs[j]), int(offs[j + 1])
        if hi > lo:
            np.add.reduce(gathered[lo:hi], axis=0, out=out[j])
    return out


def lookup_backward(table: EmbeddingTable, batch: SparseBatch,
                    grad_out: Matrix) -> SparseRowGrad:
    """Adjoint of lookup_batch: scatter-accumulate grad rows onto table rows.

    Row r receives sum of grad_out[segment(k)] * weight[k] over every flat
    position k with indices[k] == r, folded in ascending k. Untouched rows are
    absent from the result; output rows are sorted ascending.
    """
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != (batch.num_segments, table.dim):
        raise ValueError(
            f"grad_out shape {grad_out.shape} does not match "
            f"(segments, dim) = {(batch.num_segments, table.dim)}"
        )
    batch.check_bounds(table)
    nnz = batch.indices.shape[0]
    if nnz == 0:
        return SparseRowGrad(np.empty(0, dtype=np.int64),
                             np.empty((0, table.dim)))
    seg_of = np.repeat(np.arange(batch.num_segments), batch.lengths())
    contrib = grad_out[seg_of]
    if batch.weights is not None:
        contrib = contrib * batch.weights[:, None]
    # unbuffered scatter-add visits flat positions in ascending order, so
    # each row accumulates its contributions as a strict ascending fold
    uniq, inverse = np.unique(batch.indices, return_inverse=True)
    values = np.zeros((uniq.shape[0], table.dim))
    np.add.at(values, inverse, contrib)
    return SparseRowGrad(uniq, values)
