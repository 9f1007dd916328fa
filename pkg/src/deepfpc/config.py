"""
Run configuration and provenance.

Config files are plain text: one key=value pair per line, '#' starts a
comment, blank lines are ignored. Keys use the command-line flag
spelling without the leading dashes (e.g. ``batch-size=25``).
"""

import os
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

from .errors import FormatError, UsageError

RUN_CONFIG_NAME = "run-config"
THREADS_ENV = "DFPC_THREADS"


def parse_config_text(text: str) -> "OrderedDict[str, str]":
    """
    Parse key=value lines.

    Args:
        text: Config file contents

    Returns:
        Ordered mapping of keys to raw string values

    Raises:
        FormatError: On a line without '=' or an empty key
    """
    values: "OrderedDict[str, str]" = OrderedDict()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise FormatError(f"line {lineno}: expected key=value, got {raw!r}")
        values[key] = value.strip()
    return values


def load_config(path: Union[str, Path]) -> "OrderedDict[str, str]":
    """Read and parse a config file."""
    path = Path(path).expanduser()
    try:
        return parse_config_text(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")


def parse_bool(value: Union[str, bool]) -> bool:
    """Interpret 1/0, true/false, yes/no, on/off."""
    if isinstance(value, bool):
        return value
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off", ""):
        return False
    raise UsageError(f"not a boolean: {value!r}")


def resolve_threads(flag: Optional[int] = None) -> int:
    """
    Worker count: the flag if given, else $DFPC_THREADS, else 1.

    Raises:
        UsageError: If the resolved value is not a positive integer
    """
    if flag is not None:
        value: Union[int, str] = flag
        source = "--threads"
    elif os.environ.get(THREADS_ENV):
        value = os.environ[THREADS_ENV]
        source = THREADS_ENV
    else:
        return 1
    try:
        threads = int(value)
    except ValueError:
        raise UsageError(f"{source} must be an integer, got {value!r}")
    if threads < 1:
        raise UsageError(f"{source} must be at least 1, got {threads}")
    return threads


@dataclass
class RunConfig:
    """
    Resolved settings of one command invocation.

    values mirrors every flag; it is written next to the outputs so that
    `--config run-config` replays the run.
    """
    command: str
    values: "OrderedDict[str, str]" = field(default_factory=OrderedDict)

    @property
    def seed(self) -> Optional[int]:
        raw = self.values.get("seed")
        return None if raw is None else int(raw)

    @property
    def out_dir(self) -> Optional[Path]:
        raw = self.values.get("out-dir")
        return None if raw is None else Path(raw)

    @classmethod
    def from_mapping(cls, command: str, mapping: Mapping[str, object]) -> "RunConfig":
        """Build from resolved options; None values are dropped, booleans become 0/1."""
        values: "OrderedDict[str, str]" = OrderedDict()
        for key in sorted(mapping):
            value = mapping[key]
            if value is None:
                continue
            if isinstance(value, bool):
                value = int(value)
            values[key.replace("_", "-")] = str(value)
        return cls(command=command, values=values)

    def to_dict(self) -> Dict[str, str]:
        """Convert to a plain dictionary (includes the command)."""
        return {"command": self.command, **self.values}

    def to_text(self) -> str:
        """Render as a config file."""
        lines = [f"# deepfpc {self.command}"]
        lines += [f"{key}={value}" for key, value in self.values.items()]
        return "\n".join(lines) + "\n"

    def write(self, out_dir: Union[str, Path]) -> Path:
        """Write run-config into out_dir and return its path."""
        out_dir = Path(out_dir).expanduser()
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / RUN_CONFIG_NAME
        path.write_text(self.to_text(), encoding="utf-8")
        return path
