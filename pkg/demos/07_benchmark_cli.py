"""The benchmark CLI, driven programmatically: parse a flag string, run a
small profiled benchmark, and print the per-operator report.

The same run from a shell:

    dlrmkit --arch-embedding-size=2000-2000-2000-2000 \
            --arch-sparse-feature-size=16 --arch-mlp-bot=32-64-16 \
            --arch-mlp-top=64-32-1 --data-generation=random \
            --mini-batch-size=64 --num-batches=20 \
            --num-indices-per-lookup=10 --mode=benchmark \
            --enable-profiling --seed=5
"""

from dlrmkit.cli import format_report, parse_args, run_benchmark, run_training

ARGS = ("--arch-embedding-size=2000-2000-2000-2000 "
        "--arch-sparse-feature-size=16 --arch-mlp-bot=32-64-16 "
        "--arch-mlp-top=64-32-1 --data-generation=random "
        "--mini-batch-size=64 --num-batches=20 --num-indices-per-lookup=10 "
        "--mode=benchmark --enable-profiling --seed=5").split()

config, options = parse_args(ARGS)
print(f"parsed: {config.num_tables} tables x {config.embedding_sizes[0]} "
      f"rows, d={config.sparse_dim}, bottom {config.bottom_mlp_dims}, "
      f"top {config.top_mlp_dims}")

report, _ = run_benchmark(config, options)
print("\n" + format_report(report, "text"))

print("\n== same config as a short training run, json metric log ==")
options.mode = "train"
options.num_batches = 5
options.emit = "json"
options.enable_profiling = False
_, lines = run_training(config, options)
for line in lines:
    print(line)
