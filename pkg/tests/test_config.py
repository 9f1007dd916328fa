"""
Tests for config files, thread resolution and run provenance.
"""

import pytest

from deepfpc.config import (
    RUN_CONFIG_NAME,
    THREADS_ENV,
    RunConfig,
    load_config,
    parse_bool,
    parse_config_text,
    resolve_threads,
)
from deepfpc.errors import FormatError, UsageError


class TestParseConfig:
    """Tests for key=value parsing."""

    def test_basic(self):
        """Comments and blank lines are skipped; order is kept."""
        values = parse_config_text("# header\nseed=7\n\nbatch-size = 25  # trailing\n")
        assert list(values.items()) == [("seed", "7"), ("batch-size", "25")]

    def test_malformed(self):
        """A line without '=' is a format error naming the line."""
        with pytest.raises(FormatError, match="line 2"):
            parse_config_text("seed=1\nnonsense\n")

    def test_empty_key(self):
        """An empty key is rejected."""
        with pytest.raises(FormatError):
            parse_config_text("=3\n")

    def test_missing_file(self, tmp_path):
        """A missing config file is a usage error."""
        with pytest.raises(UsageError):
            load_config(tmp_path / "absent.conf")

    def test_load(self, tmp_path):
        """load_config reads from disk."""
        path = tmp_path / "a.conf"
        path.write_text("nu=0.02\n")
        assert load_config(path)["nu"] == "0.02"


class TestParseBool:
    """Tests for boolean values."""

    @pytest.mark.parametrize("text,expected", [("1", True), ("yes", True), ("0", False), ("false", False)])
    def test_values(self, text, expected):
        """Common spellings are understood."""
        assert parse_bool(text) is expected

    def test_invalid(self):
        """Anything else is a usage error."""
        with pytest.raises(UsageError):
            parse_bool("maybe")


class TestResolveThreads:
    """Tests for the worker count."""

    def test_default(self, monkeypatch):
        """Without flag or environment the count is 1."""
        monkeypatch.delenv(THREADS_ENV, raising=False)
        assert resolve_threads(None) == 1

    def test_environment(self, monkeypatch):
        """The environment variable is the fallback."""
        monkeypatch.setenv(THREADS_ENV, "4")
        assert resolve_threads(None) == 4

    def test_flag_wins(self, monkeypatch):
        """An explicit flag overrides the environment."""
        monkeypatch.setenv(THREADS_ENV, "4")
        assert resolve_threads(2) == 2

    @pytest.mark.parametrize("value", ["0", "abc"])
    def test_invalid_environment(self, monkeypatch, value):
        """Non-positive or non-numeric values are usage errors."""
        monkeypatch.setenv(THREADS_ENV, value)
        with pytest.raises(UsageError):
            resolve_threads(None)


class TestRunConfig:
    """Tests for run provenance."""

    def test_from_mapping(self):
        """Keys are sorted and dashed, booleans become 0/1, None is dropped."""
        rc = RunConfig.from_mapping("train", {"seed": 3, "tied": True, "history": None, "batch_size": 25})
        assert list(rc.values.items()) == [("batch-size", "25"), ("seed", "3"), ("tied", "1")]
        assert rc.seed == 3
        assert rc.out_dir is None

    def test_write_and_reload(self, tmp_path):
        """A written run-config parses back to the same values."""
        rc = RunConfig.from_mapping("table1", {"seed": 5, "out_dir": str(tmp_path)})
        path = rc.write(tmp_path)
        assert path.name == RUN_CONFIG_NAME
        text = path.read_text()
        assert text.startswith("# deepfpc table1\n")
        assert load_config(path) == rc.values
        assert rc.out_dir == tmp_path

    def test_to_dict(self):
        """to_dict includes the command."""
        rc = RunConfig.from_mapping("eval", {"seed": 1})
        assert rc.to_dict() == {"command": "eval", "seed": "1"}
