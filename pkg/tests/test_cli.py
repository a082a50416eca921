import json

import numpy as np
import pytest

from dlrmkit.cli import (
    CliError,
    config_to_args,
    load_checkpoint,
    main,
    parse_args,
    run_benchmark,
    run_training,
    save_checkpoint,
)
from dlrmkit.datagen import profile_trace, save_profile
from dlrmkit.model import DlrmConfig, init_model


FOOTNOTE_CMD = (
    "--arch-embedding-size=1000000-1000000-1000000-1000000-1000000-1000000"
    "-1000000-1000000 --arch-sparse-feature-size=64 --arch-mlp-bot=512-512-64 "
    "--arch-mlp-top=1024-1024-1024-1 --data-generation=random "
    "--mini-batch-size=2048 --num-batches=1000 --num-indices-per-lookup=100"
)


class TestParse:
    def test_benchmark_footnote_command(self):
        config, options = parse_args(FOOTNOTE_CMD.split())
        assert config.embedding_sizes == [1_000_000] * 8
        assert config.sparse_dim == 64
        assert config.bottom_mlp_dims == [512, 512, 64]
        assert config.top_mlp_dims == [1024, 1024, 1024, 1]
        assert options.mini_batch_size == 2048
        assert options.num_batches == 1000
        assert options.num_indices_per_lookup == 100

    def test_footnote_command_with_gpu_and_profiling_flags(self):
        argv = FOOTNOTE_CMD.split() + ["--use-gpu", "--enable-profiling"]
        config, options = parse_args(argv)
        assert options.use_gpu and options.enable_profiling

    def test_bottom_dim_constraint_satisfied(self):
        config, _ = parse_args(
            ["--arch-mlp-bot=512-512-64", "--arch-sparse-feature-size=64",
             "--arch-embedding-size=100-100", "--num-indices-per-lookup=2"])
        assert config.sparse_dim == 64

    def test_bottom_dim_constraint_violated(self):
        with pytest.raises(CliError, match="arch-sparse-feature-size"):
            parse_args(["--arch-mlp-bot=512-512-32",
                        "--arch-sparse-feature-size=64"])

    def test_malformed_list(self):
        with pytest.raises(Exception):
            parse_args(["--arch-mlp-bot=512-ab-64"])

    def test_k_bounded_by_table_size(self):
        with pytest.raises(CliError, match="num-indices-per-lookup"):
            parse_args(["--arch-embedding-size=8-8",
                        "--num-indices-per-lookup=9"])

    def test_round_trip_identity(self):
        config, options = parse_args(
            FOOTNOTE_CMD.split() + ["--optimizer=adagrad", "--seed=7",
                                    "--emit=json", "--num-devices=4",
                                    "--num-indices-per-lookup-fixed"])
        config2, options2 = parse_args(config_to_args(config, options))
        assert config == config2
        assert options == options2

    def test_criteo_requires_path_and_shape(self):
        with pytest.raises(CliError, match="criteo-path"):
            parse_args(["--data-generation=criteo"])
        with pytest.raises(CliError, match="26 embedding tables"):
            parse_args(["--data-generation=criteo", "--criteo-path=x",
                        "--arch-embedding-size=10-10"])


def tiny_args(extra=()):
    return ["--arch-embedding-size=12-9", "--arch-sparse-feature-size=4",
            "--arch-mlp-bot=5-4", "--arch-mlp-top=6-1",
            "--mini-batch-size=8", "--num-batches=10",
            "--num-indices-per-lookup=3", "--seed=3", *extra]


class TestRunTraining:
    def test_record_accounting(self):
        config, options = parse_args(tiny_args())
        report, lines = run_training(config, options)
        assert len(report.records) == 10
        assert len(lines) == 10

    def test_metric_schema(self):
        config, options = parse_args(tiny_args(["--emit=json"]))
        _, lines = run_training(config, options)
        for line in lines:
            record = json.loads(line)
            assert set(record) == {"iteration", "split", "loss", "accuracy"}

    def test_byte_for_byte_determinism(self):
        config, options = parse_args(tiny_args(["--emit=json"]))
        _, lines1 = run_training(config, options)
        _, lines2 = run_training(config, options)
        assert lines1 == lines2

    def test_parallel_matches_serial_run(self):
        config, options = parse_args(tiny_args(["--emit=json"]))
        _, serial_lines = run_training(config, options)
        config2, options2 = parse_args(
            tiny_args(["--emit=json", "--num-devices=2"]))
        report, par_lines = run_training(config2, options2)
        assert serial_lines == par_lines
        assert report.comm_report is not None

    def test_validation_records(self):
        config, options = parse_args(
            tiny_args(["--eval-interval=5", "--val-batches=2"]))
        report, _ = run_training(config, options)
        splits = [r["split"] for r in report.records]
        assert splits.count("validation") == 2

    def test_teacher_student_loss_decreases(self):
        # planted-model smoke: labels from a frozen, confident random model
        config, options = parse_args(
            ["--arch-embedding-size=40-40", "--arch-sparse-feature-size=6",
             "--arch-mlp-bot=6-8-6", "--arch-mlp-top=8-1",
             "--mini-batch-size=32", "--num-batches=300",
             "--num-indices-per-lookup=2", "--num-indices-per-lookup-fixed",
             "--seed=9", "--learning-rate=0.1"])
        from dlrmkit.cli import make_source
        from dlrmkit.model import dlrm_forward
        from dlrmkit.optim import make_optimizer
        from dlrmkit.parallel import train_step

        teacher_cfg = DlrmConfig(config.embedding_sizes, config.sparse_dim,
                                 config.bottom_mlp_dims, config.top_mlp_dims,
                                 seed=config.seed + 1)
        teacher = init_model(teacher_cfg)
        for mlp in (teacher.bottom, teacher.top):
            for layer in mlp.layers:
                layer.weight *= 3.0
        student = init_model(config)
        opt = make_optimizer("sgd", 0.1)
        source = make_source(config, options)
        first = last = None
        for _ in range(options.num_batches):
            dense, sparse, _ = source.next_batch()
            tprob, _ = dlrm_forward(teacher, dense, sparse)
            labels = (source.stream.uniform(1, 32)[0] < tprob).astype(float)
            r = train_step(student, dense, sparse, labels, opt)
            first = r.loss if first is None else first
            last = r.loss
        assert last < first


class TestRunBenchmark:
    def test_profiling_disabled_no_operator_table(self):
        config, options = parse_args(tiny_args(["--mode=benchmark"]))
        report, _ = run_benchmark(config, options)
        assert report.operator_seconds == {}
        assert report.wall_seconds > 0.0

    def test_profiling_attribution(self):
        config, options = parse_args(
            tiny_args(["--mode=benchmark", "--enable-profiling",
                       "--num-batches=20"]))
        report, _ = run_benchmark(config, options)
        assert report.operator_seconds
        total = sum(report.operator_seconds.values())
        assert total <= report.wall_seconds * 1.0001
        assert report.attributed_fraction() >= 0.9
        names = set(report.operator_seconds)
        assert "embedding_lookup" in names
        assert "bottom_mlp" in names and "top_mlp" in names

    def test_ranked_operators_sorted(self):
        config, options = parse_args(
            tiny_args(["--mode=benchmark", "--enable-profiling"]))
        report, _ = run_benchmark(config, options)
        shares = [s for _, s in report.ranked_operators()]
        assert shares == sorted(shares, reverse=True)

    def test_report_structure_deterministic(self):
        # same config -> same categories and record count (timings vary)
        config, options = parse_args(
            tiny_args(["--mode=benchmark", "--enable-profiling"]))
        r1, _ = run_benchmark(config, options)
        r2, _ = run_benchmark(config, options)
        assert set(r1.operator_seconds) == set(r2.operator_seconds)
        assert len(r1.records) == len(r2.records)
        assert [r["loss"] for r in r1.records] == \
            [r["loss"] for r in r2.records]


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        config, options = parse_args(tiny_args())
        model = init_model(config)
        path = tmp_path / "model.ckpt"
        save_checkpoint(str(path), model)
        back = load_checkpoint(str(path))
        assert back.config == model.config
        for ref, got in ((model.bottom, back.bottom), (model.top, back.top)):
            for lr, lg in zip(ref.layers, got.layers):
                assert np.array_equal(lr.weight, lg.weight)
                assert np.array_equal(lr.bias, lg.bias)
        for rt, gt in zip(model.tables, back.tables):
            assert np.array_equal(rt.weights, gt.weights)

    def test_header_tamper_detected(self, tmp_path):
        config, _ = parse_args(tiny_args())
        model = init_model(config)
        path = tmp_path / "model.ckpt"
        save_checkpoint(str(path), model)
        blob = path.read_bytes()
        tampered = blob.replace(b" v1 ", b" v9 ", 1)
        path.write_bytes(tampered)
        with pytest.raises(CliError, match="version"):
            load_checkpoint(str(path))

    def test_training_resume_flags(self, tmp_path):
        ckpt = tmp_path / "m.ckpt"
        config, options = parse_args(
            tiny_args([f"--save-checkpoint={ckpt}", "--num-batches=2"]))
        run_training(config, options)
        config2, options2 = parse_args(
            tiny_args([f"--load-checkpoint={ckpt}", "--num-batches=2"]))
        report, _ = run_training(config2, options2)
        assert len(report.records) == 2

    def test_checkpoint_config_mismatch(self, tmp_path):
        ckpt = tmp_path / "m.ckpt"
        config, options = parse_args(
            tiny_args([f"--save-checkpoint={ckpt}", "--num-batches=1"]))
        run_training(config, options)
        other = tiny_args([f"--load-checkpoint={ckpt}"])
        other[0] = "--arch-embedding-size=12-10"
        config2, options2 = parse_args(other)
        with pytest.raises(CliError, match="architecture does not match"):
            run_training(config2, options2)


class TestSyntheticMode:
    def test_bootstrap_two_phase(self):
        config, options = parse_args(
            tiny_args(["--data-generation=synthetic", "--num-batches=5"]))
        report, _ = run_training(config, options)
        assert len(report.records) == 5

    def test_profile_directory(self, tmp_path):
        rng = np.random.default_rng(3)
        for t, m in enumerate([12, 9]):
            prof = profile_trace(rng.integers(0, m, 400).tolist())
            save_profile(prof, tmp_path / f"table_{t}.profile")
        config, options = parse_args(
            tiny_args(["--data-generation=synthetic",
                       f"--synthetic-profiles={tmp_path}", "--num-batches=4"]))
        report, _ = run_training(config, options)
        assert len(report.records) == 4

    def test_profile_ids_bounded(self, tmp_path):
        prof = profile_trace([50, 51, 50])
        for t in range(2):
            save_profile(prof, tmp_path / f"table_{t}.profile")
        config, options = parse_args(
            tiny_args(["--data-generation=synthetic",
                       f"--synthetic-profiles={tmp_path}"]))
        with pytest.raises(CliError, match="outside"):
            run_training(config, options)


class TestCriteoMode:
    def _write_file(self, path, n=64):
        rng = np.random.default_rng(5)
        lines = []
        for i in range(n):
            label = str(int(rng.integers(0, 2)))
            dense = [str(int(rng.integers(0, 50))) if rng.random() > 0.2
                     else "" for _ in range(13)]
            cats = [f"{int(rng.integers(0, 1 << 32)):08x}" if
                    rng.random() > 0.1 else "" for _ in range(26)]
            lines.append("\t".join([label] + dense + cats))
        path.write_text("\n".join(lines) + "\n")

    def test_end_to_end(self, tmp_path):
        data = tmp_path / "train.txt"
        self._write_file(data)
        sizes = "-".join(["40"] * 26)
        config, options = parse_args(
            [f"--arch-embedding-size={sizes}", "--arch-sparse-feature-size=4",
             "--arch-mlp-bot=13-4", "--arch-mlp-top=6-1",
             "--data-generation=criteo", f"--criteo-path={data}",
             "--mini-batch-size=16", "--num-batches=3", "--seed=1"])
        report, _ = run_training(config, options)
        assert len(report.records) == 3

    def test_validation_split(self, tmp_path):
        data = tmp_path / "train.txt"
        val = tmp_path / "val.txt"
        self._write_file(data)
        self._write_file(val, n=16)
        sizes = "-".join(["40"] * 26)
        config, options = parse_args(
            [f"--arch-embedding-size={sizes}", "--arch-sparse-feature-size=4",
             "--arch-mlp-bot=13-4", "--arch-mlp-top=6-1",
             "--data-generation=criteo", f"--criteo-path={data}",
             f"--criteo-val-path={val}", "--mini-batch-size=16",
             "--num-batches=4", "--eval-interval=2", "--seed=1"])
        report, _ = run_training(config, options)
        assert [r["split"] for r in report.records].count("validation") == 2


class TestMain:
    def test_happy_path(self, capsys):
        code = main(tiny_args(["--num-batches=2", "--emit=json"]))
        assert code == 0
        out = capsys.readouterr().out.strip().split("\n")
        assert len(out) == 3  # 2 metric lines + report
        json.loads(out[0])

    def test_unknown_flag_exits_2(self, capsys):
        assert main(["--no-such-flag"]) == 2
        assert "error" in capsys.readouterr().err

    def test_constraint_violation_exits_2(self, capsys):
        code = main(["--arch-mlp-bot=4-5", "--arch-sparse-feature-size=3"])
        assert code == 2
        err = capsys.readouterr().err
        assert "arch-sparse-feature-size" in err

    def test_missing_data_file_exits_1(self, capsys):
        sizes = "-".join(["40"] * 26)
        code = main([f"--arch-embedding-size={sizes}",
                     "--arch-sparse-feature-size=4", "--arch-mlp-bot=13-4",
                     "--arch-mlp-top=6-1", "--data-generation=criteo",
                     "--criteo-path=/no/such/file", "--num-batches=1"])
        assert code == 1
        assert "error" in capsys.readouterr().err

    def test_report_and_metric_files(self, tmp_path, capsys):
        metrics = tmp_path / "metrics.jsonl"
        report = tmp_path / "report.txt"
        code = main(tiny_args(["--num-batches=2", "--emit=json",
                               f"--metrics-file={metrics}",
                               f"--report-file={report}",
                               "--enable-profiling"]))
        assert code == 0
        assert len(metrics.read_text().strip().split("\n")) == 2
        assert "operator" in report.read_text()
