"""
Tests for the command-line interface.
"""

from pathlib import Path

import pytest

from deepfpc.cli import _experiment_config, main, parse_args
from deepfpc.config import RUN_CONFIG_NAME, THREADS_ENV, load_config
from deepfpc.experiments import ExperimentConfig
from deepfpc.formats import read_dataset, read_model

DEFAULT_CONF = Path(__file__).resolve().parents[1] / "configs" / "default.conf"

SMALL_DATA = ["--n", "20", "--m", "60", "--k", "3"]
SMALL_EXPERIMENT = [
    "--n", "20", "--m", "60", "--k", "3", "--l-train", "20", "--l-test", "10",
    "--fpc-iters", "10", "--layers", "3", "--epochs", "2", "--batch-size", "5", "--threads", "1",
]


@pytest.fixture(autouse=True)
def no_thread_env(monkeypatch):
    """Keep a worker count from the environment out of the tests."""
    monkeypatch.delenv(THREADS_ENV, raising=False)


@pytest.fixture
def data_file(tmp_path):
    """A small generated dataset."""
    path = tmp_path / "d.bin"
    assert main(["gen-data", *SMALL_DATA, "--l", "20", "--seed", "3", "--out", str(path)]) == 0
    return path


class TestGenData:
    """Tests for gen-data."""

    def test_header(self, tmp_path):
        """The file header records the requested problem."""
        out = tmp_path / "d.bin"
        code = main(["gen-data", "--n", "100", "--m", "300", "--k", "10", "--l", "100", "--seed", "7", "--out", str(out)])
        assert code == 0
        head = out.read_bytes().split(b"\n\n", 1)[0].decode("ascii").splitlines()
        assert head[:7] == ["magic=DFPC-DATA", "version=1", "n=100", "m=300", "k=10", "l=100", "seed=7"]
        assert (tmp_path / RUN_CONFIG_NAME).exists()

    def test_stream(self, tmp_path):
        """--stream test draws the test signals."""
        out = tmp_path / "t.bin"
        assert main(["gen-data", *SMALL_DATA, "--l", "4", "--stream", "test", "--out", str(out)]) == 0
        assert read_dataset(out).stream.name == "TEST"

    def test_run_config(self, tmp_path):
        """run-config mirrors every flag."""
        out = tmp_path / "d.bin"
        main(["gen-data", *SMALL_DATA, "--l", "4", "--seed", "9", "--out", str(out)])
        values = load_config(tmp_path / RUN_CONFIG_NAME)
        assert values["seed"] == "9"
        assert values["l"] == "4"
        assert values["threads"] == "1"
        assert "config" not in values


class TestUsage:
    """Tests for usage errors and help."""

    def test_unknown_command(self, capsys):
        """An unknown subcommand exits with 1."""
        assert main(["bogus"]) == 1
        assert "error" in capsys.readouterr().err

    def test_unknown_flag(self):
        """An unknown flag exits with 1."""
        assert main(["gen-data", "--nope", "1"]) == 1

    def test_missing_command(self):
        """A command is required."""
        assert main([]) == 1

    def test_help(self, capsys):
        """--help exits with 0 and lists defaults."""
        assert main(["fpc-run", "--help"]) == 0
        out = capsys.readouterr().out
        assert "--iters" in out
        assert "default: 150" in out

    def test_version(self):
        """--version exits with 0."""
        assert main(["--version"]) == 0

    def test_invalid_threads(self, data_file):
        """A non-positive worker count is a usage error."""
        assert main(["fpc-run", "--data", str(data_file), "--threads", "0"]) == 1

    def test_missing_file_is_runtime_error(self, tmp_path):
        """A missing input file exits with 2."""
        assert main(["fpc-run", "--data", str(tmp_path / "absent.bin")]) == 2


class TestFpcRun:
    """Tests for fpc-run."""

    def test_outputs(self, data_file, tmp_path):
        """Per-sample, summary and meta files use the --out stem."""
        out = tmp_path / "runs" / "l2.csv"
        assert main(["fpc-run", "--data", str(data_file), "--iters", "5", "--out", str(out)]) == 0
        assert out.exists()
        assert (tmp_path / "runs" / "l2-summary.csv").exists()
        assert (tmp_path / "runs" / "l2-meta.conf").exists()
        assert (tmp_path / "runs" / RUN_CONFIG_NAME).exists()
        assert len(out.read_text().splitlines()) == 1 + 20

    def test_config_file_defaults(self, data_file, tmp_path):
        """Config file values act as defaults and explicit flags win."""
        conf = tmp_path / "fpc.conf"
        conf.write_text(f"data={data_file}\nvariant=l1\niters=7\n")
        out = tmp_path / "o" / "r.csv"
        assert main(["fpc-run", "--config", str(conf), "--iters", "3", "--out", str(out)]) == 0
        values = load_config(tmp_path / "o" / RUN_CONFIG_NAME)
        assert values["variant"] == "l1"
        assert values["iters"] == "3"

    def test_unknown_config_key(self, data_file, tmp_path):
        """A config key that is not a flag of the command is a usage error."""
        conf = tmp_path / "bad.conf"
        conf.write_text("layers=3\n")
        assert main(["fpc-run", "--config", str(conf), "--data", str(data_file)]) == 1


class TestTrainEval:
    """Tests for train and eval."""

    @pytest.fixture
    def model_file(self, data_file, tmp_path):
        out = tmp_path / "m" / "model.bin"
        code = main([
            "train", "--data", str(data_file), "--layers", "2", "--epochs", "2",
            "--batch-size", "5", "--nu0", "0.01", "--out", str(out),
        ])
        assert code == 0
        return out

    def test_train_outputs(self, model_file):
        """train writes the model, the history and the run-config."""
        model = read_model(model_file)
        assert model.num_layers == 2
        history = (model_file.parent / "train-history.csv").read_text().splitlines()
        assert history[0] == "step,epoch,effective_lr,train_loss,val_nmse_db"
        assert len(history) == 3
        assert (model_file.parent / RUN_CONFIG_NAME).exists()

    def test_eval_is_deterministic(self, model_file, data_file, tmp_path):
        """Evaluating twice gives identical bytes."""
        first, second = tmp_path / "e1" / "eval.csv", tmp_path / "e2" / "eval.csv"
        assert main(["eval", "--model", str(model_file), "--data", str(data_file), "--out", str(first)]) == 0
        assert main(["eval", "--model", str(model_file), "--data", str(data_file), "--out", str(second)]) == 0
        assert first.read_bytes() == second.read_bytes()
        assert (first.parent / "eval-summary.csv").read_bytes() == (second.parent / "eval-summary.csv").read_bytes()

    def test_eval_with_noise(self, model_file, data_file, tmp_path):
        """--flip-ratio evaluates on flipped measurements."""
        out = tmp_path / "noisy" / "eval.csv"
        code = main([
            "eval", "--model", str(model_file), "--data", str(data_file),
            "--flip-ratio", "0.1", "--out", str(out),
        ])
        assert code == 0
        assert ",flip_ratio,0.1," in out.read_text()

    def test_eval_rejects_two_channels(self, model_file, data_file):
        """At most one noise channel may be chosen."""
        code = main([
            "eval", "--model", str(model_file), "--data", str(data_file),
            "--snr-db", "20", "--flip-ratio", "0.1",
        ])
        assert code == 1

    def test_eval_rejects_infinite_noise(self, model_file, data_file, tmp_path, caplog):
        """--snr-db -inf is a runtime error, not a crash."""
        code = main([
            "eval", "--model", str(model_file), "--data", str(data_file),
            "--snr-db=-inf", "--out", str(tmp_path / "e.csv"),
        ])
        assert code == 2
        assert "snr_db" in caplog.text

    def test_train_loss_choice(self, data_file, tmp_path):
        """--loss selects the training loss and is recorded."""
        out = tmp_path / "f" / "model.bin"
        code = main([
            "train", "--data", str(data_file), "--layers", "3", "--epochs", "1",
            "--batch-size", "5", "--loss", "mse_normalized", "--out", str(out),
        ])
        assert code == 0
        assert load_config(out.parent / RUN_CONFIG_NAME)["loss"] == "mse_normalized"
        assert main(["train", "--data", str(data_file), "--loss", "hinge"]) == 1


class TestExperiments:
    """Tests for the experiment subcommands."""

    def test_table1_is_byte_identical(self, tmp_path):
        """Two table1 runs with one seed write identical CSVs."""
        for name in ("a", "b"):
            assert main(["table1", *SMALL_EXPERIMENT, "--seed", "4", "--out-dir", str(tmp_path / name)]) == 0
        for fname in ("table1.csv", "table1-summary.csv", "table1-meta.conf"):
            assert (tmp_path / "a" / fname).read_bytes() == (tmp_path / "b" / fname).read_bytes()

    def test_run_config_replays(self, tmp_path):
        """Passing run-config back with --config reproduces the results."""
        first = tmp_path / "first"
        assert main(["table1", *SMALL_EXPERIMENT, "--seed", "6", "--out-dir", str(first)]) == 0
        replay = tmp_path / "replay"
        assert main(["table1", "--config", str(first / RUN_CONFIG_NAME), "--out-dir", str(replay)]) == 0
        assert (first / "table1.csv").read_bytes() == (replay / "table1.csv").read_bytes()

    def test_compare_fpc(self, tmp_path):
        """compare-fpc writes both FPC variants."""
        code = main([
            "compare-fpc", "--n", "20", "--m", "60", "--k", "3", "--l-test", "5", "--fpc-iters", "5",
            "--snr-list", "20", "--ratio-list", "0.1", "--out-dir", str(tmp_path),
        ])
        assert code == 0
        text = (tmp_path / "compare-fpc-summary.csv").read_text()
        assert "fpc-l1" in text and "fpc-l2" in text

    def test_sweep_flip_rejects_bad_ratio(self, tmp_path):
        """A ratio above 1 is a runtime error."""
        code = main([
            "sweep-flip", *SMALL_EXPERIMENT, "--ratio-list", "1.5", "--out-dir", str(tmp_path),
        ])
        assert code == 2

    def test_calibrate(self, tmp_path, capsys):
        """calibrate-fpc reports the chosen threshold."""
        code = main([
            "calibrate-fpc", "--n", "20", "--m", "60", "--k", "3", "--l-test", "5",
            "--nu-grid", "0.01,0.02", "--out-dir", str(tmp_path),
        ])
        assert code == 0
        assert "best nu=" in capsys.readouterr().out


class TestShippedConfig:
    """Tests for configs/default.conf."""

    def test_matches_library_defaults(self):
        """The shipped file reproduces ExperimentConfig defaults."""
        args = parse_args(["table1", "--config", str(DEFAULT_CONF), "--threads", "1"])
        assert _experiment_config(args) == ExperimentConfig()

    def test_flags_override_file(self):
        """Explicit flags win over the shipped file."""
        args = parse_args(["sweep-flip", "--config", str(DEFAULT_CONF), "--nu0", "0.005"])
        assert args.nu0 == 0.005
        assert args.nu == 0.001
