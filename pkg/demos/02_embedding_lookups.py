"""Pooled embedding lookups in the offsets/indices (CSR-like) format.

Walks the canonical three-lookup example -- segments {0,2}, {0,1,5}, {3}
encoded as lengths {2,3,1} / offsets {0,2,5} -- through encode, pooled
forward, and the sparse backward pass.
"""

import numpy as np

from dlrmkit.dense import RngStream
from dlrmkit.embedding import (
    EmbeddingTable,
    SparseBatch,
    lookup_backward,
    lookup_batch,
    offsets_from_lengths,
)

print("== encoding ==")
lookups = [[0, 2], [0, 1, 5], [3]]
lengths = [len(s) for s in lookups]
offsets = offsets_from_lengths(lengths)
indices = np.concatenate(lookups)
print(f"lookups      : {lookups}")
print(f"lengths      : {lengths}")
print(f"offsets      : {offsets[:-1].tolist()} (terminal {offsets[-1]} kept "
      "internally)")
print(f"flat indices : {indices.tolist()}")

table = EmbeddingTable(np.array([
    [1.0, 0.0],   # row 0
    [0.0, 1.0],   # row 1
    [2.0, 2.0],   # row 2
    [3.0, 3.0],   # row 3
    [9.0, 9.0],   # row 4 (never referenced)
    [1.0, 1.0],   # row 5
]))
batch = SparseBatch(offsets, indices)

print("\n== pooled forward (sum of referenced rows per segment) ==")
out = lookup_batch(table, batch)
for j, seg in enumerate(lookups):
    print(f"segment {j} {seg} -> {out[j]}")

print("\n== weighted multi-hot ==")
weighted = SparseBatch(offsets, indices,
                       np.array([1.0, 0.5, 2.0, 2.0, -1.0, 0.0]))
print(lookup_batch(table, weighted))

print("\n== sparse backward ==")
grad_out = np.ones((3, 2))
grad = lookup_backward(table, batch, grad_out)
print("touched rows:", grad.rows.tolist(), "(row 4 absent, never referenced)")
for r, v in zip(grad.rows, grad.values):
    print(f"  row {r}: {v}")

print("\n== random batch at scale ==")
rng = RngStream(5)
big = EmbeddingTable.initialize(10_000, 16, rng)
idx = rng.integers(0, 10_000, 64 * 20)
sb = SparseBatch(offsets_from_lengths([20] * 64), idx)
print("lookup_batch(10k x 16 table, batch 64, 20 ids each):",
      lookup_batch(big, sb).shape)
