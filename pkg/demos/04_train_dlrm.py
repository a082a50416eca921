"""Train a small model end to end on teacher-generated labels.

A frozen random "teacher" model (weights scaled up so its click
probabilities are confident) labels randomly drawn feature batches; a fresh
student learns them with SGD and with Adagrad. Loss falling far below ln 2
shows the full pipeline -- lookups, interaction, MLPs, loss, sparse and
dense updates -- fits signal, not noise.
"""

import dataclasses

import numpy as np

from dlrmkit.dense import RngStream
from dlrmkit.embedding import SparseBatch, offsets_from_lengths
from dlrmkit.model import DlrmConfig, dlrm_forward, init_model, param_count
from dlrmkit.optim import make_optimizer
from dlrmkit.parallel import train_step

BATCH = 32
STEPS = 800

cfg = DlrmConfig(embedding_sizes=[60, 40], sparse_dim=8,
                 bottom_mlp_dims=[8, 16, 8], top_mlp_dims=[16, 8, 1], seed=0)
print(f"model: {param_count(cfg):,} parameters "
      f"({cfg.num_tables} tables, interaction width {cfg.top_in_dim})")

teacher = init_model(dataclasses.replace(cfg, seed=1))
for mlp in (teacher.bottom, teacher.top):
    for layer in mlp.layers:
        layer.weight *= 3.0


def batches(seed):
    rng = RngStream(seed)
    while True:
        dense = rng.uniform(BATCH, 8)
        sparse = [SparseBatch(offsets_from_lengths([2] * BATCH),
                              rng.integers(0, m, 2 * BATCH))
                  for m in cfg.embedding_sizes]
        tprob, _ = dlrm_forward(teacher, dense, sparse)
        labels = (rng.uniform(1, BATCH)[0] < tprob).astype(np.float64)
        yield dense, sparse, labels


for optname in ("sgd", "adagrad"):
    student = init_model(cfg)
    opt = make_optimizer(optname, 0.1)
    feed = batches(seed=2)
    print(f"\n== {optname}, lr 0.1, batch {BATCH} ==")
    for step in range(STEPS):
        dense, sparse, labels = next(feed)
        res = train_step(student, dense, sparse, labels, opt)
        if step % 100 == 0 or step == STEPS - 1:
            print(f"step {step:4d}  loss {res.loss:.4f}  "
                  f"accuracy {res.accuracy:.3f}")
