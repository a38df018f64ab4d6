from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from mottlab.core.env_model import GAP_KINDS, MARK_KINDS, U_KINDS, EnvModel, GapLaw, MarkLaw
from mottlab.core.stats import MIN_BATCHES
from mottlab.core.walker import KINDS, MODES, RECORDS, Horizon
from mottlab.errors import ConfigError

DEFAULT_OUT_DIR = "runs"
# keys that never change results
RUNTIME_KEYS = ("jobs", "out_dir")


def _default_lambda_grid() -> list[float]:
    return [round(0.1 * k, 10) for k in range(9)]


# ---------------------------------------------------------------------------
# RunConfig: one flat table; the defaults below are the documented defaults
# ---------------------------------------------------------------------------

@dataclass(slots=True)
class RunConfig:
    # environment
    gap_law: str = "shifted_exponential"
    gap_d: float = 1.0
    gap_c: float = 2.0
    gap_tail: float = 3.0
    mark_law: str = "point_mass"
    mark_value: float = 0.0
    mark_alpha: float = 0.0
    mark_amplitude: float = 1.0
    u_kind: str = "zero"
    beta: float = 1.0

    # bias and sweep grids
    lam: float = 0.3
    lambda_grid: list[float] = field(default_factory=_default_lambda_grid)
    beta_grid: list[float] = field(default_factory=lambda: [1.0, 2.0, 3.0, 4.0, 5.0])
    c_grid: list[float] = field(default_factory=lambda: [0.3, 0.4, 0.6, 0.8, 1.0])

    # sizes and horizons
    n_sites: int = 2048
    horizons: list[float] = field(default_factory=lambda: [1e5, 1e6])
    kind: str = "discrete"
    mode: str = "annealed"
    record: str = "endpoints"
    env_range: list[int] = field(default_factory=lambda: [-50, 50])
    n_environments: int = 8
    n_walkers: int = 16
    seed: int = 0

    # numerics
    eps_tail: float = 1e-10
    solver_tol: float = 1e-12
    residual_tol: float = 1e-8
    fd_step: float = 1e-3
    rn_p: float = 2.0
    n_batches: int = 16
    burn_in: float = 0.05
    periodic: bool = False

    # output
    write_vectors: bool = False
    write_paths: bool = False
    out_dir: str = DEFAULT_OUT_DIR
    jobs: int = 1

    # ── Derived objects ───────────────────────────────────────────

    def resolved_model(self) -> EnvModel:
        if self.gap_law == "deterministic":
            gap = GapLaw.deterministic(self.gap_d)
        elif self.gap_law == "shifted_exponential":
            gap = GapLaw.shifted_exponential(self.gap_d, self.gap_c)
        else:
            gap = GapLaw.shifted_pareto(self.gap_d, self.gap_tail)
        if self.mark_law == "point_mass":
            mark = MarkLaw.point_mass(self.mark_value)
        else:
            mark = MarkLaw.power_uniform(self.mark_alpha, self.mark_amplitude)
        return EnvModel(gap_law=gap, mark_law=mark, beta=self.beta, u_kind=self.u_kind).validate()

    def resolved_horizons(self) -> list[Horizon]:
        return [Horizon(self.kind, float(h)) for h in self.horizons]

    def resolved_dict(self) -> dict[str, Any]:
        """The config without the runtime-only keys; this is what a run records."""
        return {k: v for k, v in self.to_dict().items() if k not in RUNTIME_KEYS}

    def config_hash(self, command: str = "") -> str:
        payload = json.dumps({"command": command, "config": self.resolved_dict()}, sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    # ── Serialisation ─────────────────────────────────────────────

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        defaults = cls()
        kwargs: dict[str, Any] = {}
        for name, value in data.items():
            kwargs[name] = _coerce(name, value, getattr(defaults, name))
        obj = cls(**kwargs)
        obj.validate()
        return obj

    def updated(self, overrides: dict[str, Any]) -> "RunConfig":
        """Copy with ``overrides`` applied (None values are ignored)."""
        merged = self.to_dict()
        merged.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_dict(merged)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        config_path = Path(path).expanduser()
        if not config_path.exists():
            raise ConfigError(f"config file not found: {config_path}")
        try:
            raw = json.loads(config_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {config_path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(raw)

    def save(self, path: str | Path) -> Path:
        config_path = Path(path).expanduser()
        config_path.parent.mkdir(parents=True, exist_ok=True)
        config_path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return config_path

    def validate(self) -> None:
        if self.gap_law not in GAP_KINDS:
            raise ConfigError(f"gap_law must be one of {GAP_KINDS}")
        if self.mark_law not in MARK_KINDS:
            raise ConfigError(f"mark_law must be one of {MARK_KINDS}")
        if self.u_kind not in U_KINDS:
            raise ConfigError(f"u_kind must be one of {U_KINDS}")
        self.resolved_model()
        if not 0.0 <= self.lam < 1.0:
            raise ConfigError("lam must lie in [0, 1)")
        if any(not 0.0 <= v < 1.0 for v in self.lambda_grid):
            raise ConfigError("lambda_grid values must lie in [0, 1)")
        if not self.beta_grid or any(not (math.isfinite(b) and b >= 0) for b in self.beta_grid):
            raise ConfigError("beta_grid must hold finite values >= 0")
        if not self.c_grid or any(not c > 0 for c in self.c_grid):
            raise ConfigError("c_grid values must be > 0")
        if self.n_sites < 16:
            raise ConfigError("n_sites must be >= 16")
        if not self.horizons or any(not (math.isfinite(h) and h > 0) for h in self.horizons):
            raise ConfigError("horizons must be positive and finite")
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.record not in RECORDS:
            raise ConfigError(f"record must be one of {RECORDS}")
        if len(self.env_range) != 2 or not self.env_range[0] <= 0 <= self.env_range[1]:
            raise ConfigError("env_range must be [lo, hi] with lo <= 0 <= hi")
        if self.n_environments <= 0:
            raise ConfigError("n_environments must be > 0")
        if self.n_walkers <= 0:
            raise ConfigError("n_walkers must be > 0")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        for name in ("eps_tail", "solver_tol", "residual_tol"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if not 0.0 < self.fd_step <= 0.05:
            raise ConfigError("fd_step must lie in (0, 0.05]")
        if self.rn_p < 2:
            raise ConfigError("rn_p must be >= 2")
        if self.n_batches < MIN_BATCHES:
            raise ConfigError(f"n_batches must be >= {MIN_BATCHES}")
        if not 0.0 <= self.burn_in < 1.0:
            raise ConfigError("burn_in must lie in [0, 1)")
        if self.jobs <= 0:
            raise ConfigError("jobs must be > 0")
        if not self.out_dir:
            raise ConfigError("out_dir is required")


def _coerce(name: str, value: Any, default: Any) -> Any:
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or float(value) != int(float(value)):
                raise TypeError
            return int(float(value))
        if isinstance(default, float):
            return float(value)
        if isinstance(default, list):
            kind = type(default[0]) if default else float
            return [kind(float(v)) if kind is int else kind(v) for v in value]
        return str(value)
    except (TypeError, ValueError, OverflowError) as exc:
        raise ConfigError(f"config key {name!r} has invalid value {value!r}") from exc
