"""Run directories, deterministic JSON/CSV writers and the reproducibility manifest.

A run lives in ``<out>/<command>/<config-hash>/``. Files are staged in a
sibling temporary directory and moved into place in one rename, so a reader
never sees a half-written run.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import shutil
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from mottlab import __version__
from mottlab.config import RunConfig
from mottlab.errors import UsageError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
CONFIG_NAME = "config.json"
HASH_LENGTH = 12


def jsonable(value: Any) -> Any:
    """Plain JSON types; non-finite floats become "inf", "-inf" or "nan"."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return value


def dumps(data: Any) -> str:
    return json.dumps(jsonable(data), indent=2, sort_keys=True, ensure_ascii=False, allow_nan=False) + "\n"


def write_json(path: Path, data: Any) -> Path:
    tmp_path = path.with_suffix(path.suffix + ".tmp")
    with open(tmp_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(data))
    tmp_path.replace(path)
    return path


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    tmp_path = path.with_suffix(path.suffix + ".tmp")
    with open(tmp_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter=",", lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    tmp_path.replace(path)
    return path


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_directory(out_dir: str | Path, command: str, config: RunConfig) -> Path:
    return Path(out_dir).expanduser() / command / config.config_hash(command)[:HASH_LENGTH]


class RunWriter:
    """Stage the artifacts of one command and publish them atomically.

    Use as a context manager; the run directory appears on a clean exit and the
    staging directory is removed on error.
    """

    def __init__(self, config: RunConfig, command: str, *, force: bool = False) -> None:
        self.config = config
        self.command = command
        self.force = force
        self.path = run_directory(config.out_dir, command, config)
        self.staging = self.path.with_name(f".{self.path.name}.staging-{os.getpid()}")
        self.seeds: dict[str, Any] = {"seed": config.seed}
        self._files: list[str] = []

    def __enter__(self) -> "RunWriter":
        if self.path.exists() and not self.force:
            raise UsageError(f"run directory {self.path} exists; rerun with --force to replace it")
        if self.staging.exists():
            shutil.rmtree(self.staging)
        self.staging.mkdir(parents=True)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is None:
            self.commit()
        elif self.staging.exists():
            shutil.rmtree(self.staging)

    def write_json(self, name: str, data: Any) -> Path:
        self._files.append(name)
        return write_json(self.staging / name, data)

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        self._files.append(name)
        return write_csv(self.staging / name, header, rows)

    def manifest(self) -> dict[str, Any]:
        return {
            "command": self.command,
            "config_hash": self.config.config_hash(self.command),
            "version": __version__,
            "seeds": self.seeds,
            "files": {name: sha256_file(self.staging / name) for name in sorted(set(self._files))},
        }

    def commit(self) -> Path:
        write_json(self.staging / CONFIG_NAME, self.config.resolved_dict())
        self._files.append(CONFIG_NAME)
        write_json(self.staging / MANIFEST_NAME, self.manifest())
        previous = None
        if self.path.exists():
            previous = self.path.with_name(f".{self.path.name}.old-{os.getpid()}")
            self.path.replace(previous)
        self.staging.replace(self.path)
        if previous is not None:
            shutil.rmtree(previous)
        logger.info("wrote %s", self.path)
        return self.path
