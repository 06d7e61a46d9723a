"""Run configuration: JSON schema, defaults, validation and seed streams."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .core import NoiseSchedule, TimeGrid, grid_from_dict, grid_to_dict, schedule_from_dict
from .edict import CbdiaConfig
from .models import GaussianMixture, MixturePredictor

SOLVERS = ("ddim", "bdia-ddim", "edict", "cbdia", "edm", "bdia-edm", "dpmpp-2m", "bdia-dpmpp-2m")
ROUNDTRIP_SOLVERS = ("bdia-ddim", "edict", "cbdia", "ddim-naive")
EDM_SOLVERS = ("edm", "bdia-edm")
GAMMA_SOLVERS = ("bdia-ddim", "bdia-edm", "bdia-dpmpp-2m")

CONFIG_KEYS = frozenset(
    {"schedule", "grid", "mixture", "solver", "params", "seed", "batch", "edit", "out", "format", "workers"}
)
PARAM_KEYS = frozenset({"gamma", "p", "gamma1", "gamma2", "rho"})
DEFAULT_PARAMS = {"gamma": 1.0, "p": 0.93, "gamma1": 0.0, "gamma2": 1.0}

# Named random substreams; every draw in a run comes from one of these.
STREAMS = {"data": 0, "noise": 1, "projections": 2, "batch": 3, "pairs": 4}


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration (CLI exit status 2)."""


def substream(seed: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=(STREAMS[name],))


def default_mixture(dim: int = 2) -> GaussianMixture:
    return GaussianMixture.from_params([(0.5, [2.0] * dim, 0.25), (0.5, [-2.0] * dim, 0.25)])


def default_grid(solver: str, schedule_kind: str) -> dict:
    if solver in EDM_SOLVERS or schedule_kind == "edm":
        return grid_to_dict("power_law", 10, 0.002, 80.0, 7.0, terminal_zero=True)
    return grid_to_dict("uniform", 10, 1e-3, 0.999)


def _check_unit(name: str, v: float, open_low: bool = False) -> float:
    v = float(v)
    lo_ok = v > 0.0 if open_low else v >= 0.0
    if not (math.isfinite(v) and lo_ok and v <= 1.0):
        raise ConfigError(f"{name} must lie in {'(0' if open_low else '[0'}, 1], got {v}")
    return v


@dataclass(frozen=True)
class RunConfig:
    schedule: NoiseSchedule = field(default_factory=lambda: NoiseSchedule("vp"))
    grid: dict = field(default_factory=lambda: default_grid("bdia-ddim", "vp"))
    mixture: GaussianMixture = field(default_factory=default_mixture)
    solver: str = "bdia-ddim"
    params: dict = field(default_factory=lambda: dict(DEFAULT_PARAMS))
    seed: int = 0
    batch: int = 1000
    edit: Optional[float] = None
    out: Optional[str] = None
    format: str = "csv"
    workers: int = 1

    def __post_init__(self):
        self.validate()

    # -- construction -------------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            solver = str(d.get("solver", "bdia-ddim"))
            sched_d = d.get("schedule")
            if sched_d is None:
                sched_d = {"kind": "edm" if solver in EDM_SOLVERS else "vp"}
            schedule = schedule_from_dict(sched_d)
            grid = dict(d["grid"]) if "grid" in d else default_grid(solver, schedule.kind)
            grid.setdefault("kind", "uniform")
            grid.setdefault("rho", 7.0)
            grid.setdefault("terminal_zero", False)
            mixture = GaussianMixture.from_dict(d["mixture"]) if "mixture" in d else default_mixture()
            params = dict(d.get("params", {}))
            unknown_p = set(params) - PARAM_KEYS
            if unknown_p:
                raise ConfigError(f"unknown params keys: {sorted(unknown_p)}")
            params = {**DEFAULT_PARAMS, **params}
            return cls(
                schedule=schedule,
                grid=grid,
                mixture=mixture,
                solver=solver,
                params=params,
                seed=d.get("seed", 0),
                batch=d.get("batch", 1000),
                edit=d.get("edit"),
                out=d.get("out"),
                format=d.get("format", "csv"),
                workers=d.get("workers", 1),
            )
        except ConfigError:
            raise
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON config: {exc}") from exc
        return cls.from_dict(d)

    def replace(self, **changes: Any) -> "RunConfig":
        """Copy with overrides; ``n``, ``gamma``, ``p``, ``gamma1``, ``gamma2`` and ``rho`` are routed into nested fields.

        Switching between the EDM family and the DDIM family also switches the
        default schedule and grid, keeping any explicitly overridden step count.
        """
        grid = dict(self.grid)
        params = dict(self.params)
        if "n" in changes:
            grid["n"] = changes.pop("n")
        for k in ("gamma", "p", "gamma1", "gamma2", "rho"):
            if k in changes:
                params[k] = changes.pop(k)
        solver = changes.get("solver", self.solver)
        if (solver in EDM_SOLVERS) != (self.solver in EDM_SOLVERS) and "schedule" not in changes:
            kind = "edm" if solver in EDM_SOLVERS else "vp"
            changes["schedule"] = NoiseSchedule(kind)
            n = grid["n"]
            grid = default_grid(solver, kind)
            grid["n"] = n
        try:
            return dataclasses.replace(self, grid=grid, params=params, **changes)
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    # -- validation ---------------------------------------------------------

    def validate(self) -> None:
        try:
            self._validate()
        except ConfigError:
            raise
        except (ValueError, TypeError, KeyError, IndexError) as exc:
            raise ConfigError(str(exc)) from exc

    def _validate(self) -> None:
        if self.solver not in SOLVERS + ("ddim-naive",):
            raise ConfigError(f"unknown solver {self.solver!r}; expected one of {SOLVERS + ('ddim-naive',)}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        if isinstance(self.batch, bool) or not isinstance(self.batch, (int, np.integer)) or self.batch < 1:
            raise ConfigError(f"batch must be a positive integer, got {self.batch!r}")
        if isinstance(self.workers, bool) or not isinstance(self.workers, (int, np.integer)) or self.workers < 1:
            raise ConfigError(f"workers must be a positive integer, got {self.workers!r}")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"format must be 'csv' or 'json', got {self.format!r}")
        if self.edit is not None and not math.isfinite(float(self.edit)):
            raise ConfigError("edit shift must be finite")
        unknown_p = set(self.params) - PARAM_KEYS
        if unknown_p:
            raise ConfigError(f"unknown params keys: {sorted(unknown_p)}")
        p = self.params
        _check_unit("gamma", p["gamma"])
        _check_unit("p", p["p"], open_low=True)
        g1, g2 = _check_unit("gamma1", p["gamma1"]), _check_unit("gamma2", p["gamma2"])
        if self.solver == "cbdia":
            CbdiaConfig(g1, g2)
        grid = self.time_grid
        for t in grid.times:
            self.schedule.alpha(t)
        if self.solver in EDM_SOLVERS and self.schedule.kind != "edm":
            raise ConfigError(f"{self.solver} integrates in EDM time and needs schedule kind 'edm'")
        if self.solver == "cbdia" and self.schedule.sigma(grid.t(0)) == 0.0:
            raise ConfigError("cbdia evaluates the predictor at t_0; the grid must end at sigma(t_0) > 0")
        if self.solver == "ddim-naive" and grid.N < 1:
            raise ConfigError("ddim-naive needs at least one step")
        if self.solver == "bdia-ddim" and grid.N < 2 and self.params["gamma"] != 0.0:
            raise ConfigError("bdia-ddim needs at least two steps")

    # -- derived objects ----------------------------------------------------

    @property
    def time_grid(self) -> TimeGrid:
        g = dict(self.grid)
        if "rho" in self.params:
            g["rho"] = self.params["rho"]
        return grid_from_dict(g)

    @property
    def n_steps(self) -> int:
        return int(self.grid["n"])

    @property
    def predictor(self) -> MixturePredictor:
        return MixturePredictor(self.mixture, self.schedule)

    @property
    def cbdia(self) -> CbdiaConfig:
        return CbdiaConfig(float(self.params["gamma1"]), float(self.params["gamma2"]))

    def to_dict(self) -> dict:
        d = {
            "schedule": self.schedule.to_dict(),
            "grid": dict(self.grid),
            "mixture": self.mixture.to_dict(),
            "solver": self.solver,
            "params": dict(self.params),
            "seed": int(self.seed),
            "batch": int(self.batch),
            "format": self.format,
            "workers": int(self.workers),
        }
        if self.edit is not None:
            d["edit"] = float(self.edit)
        if self.out is not None:
            d["out"] = self.out
        return d
