"""Run-configuration parsing: JSON documents with matrices as nested arrays."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .model import CostWeights, SystemModel, validate_model
from .simulator import SimConfig
from .upper_bound import SolverOptions

_SYSTEM_KEYS = {"F", "G", "H", "J", "W", "V", "L", "Sigma1"}
_COST_KEYS = {"Q", "R"}
_SOLVER_KEYS = {"tol", "max_iter"}
_SIM_KEYS = {"seed", "trajectories", "horizon", "burn_in"}
_SWEEP_KEYS = {"min", "max", "points", "scale"}
_PARAM_KEYS = {"name", "min", "max", "points", "scale"}
_TOP_KEYS = {"system", "cost", "budget", "solver", "sim", "units",
             "param_sweep", "horizons"}


@dataclass(frozen=True)
class SweepSpec:
    lo: float
    hi: float
    points: int
    scale: str = "linear"

    def grid(self) -> np.ndarray:
        if self.scale == "log":
            return np.geomspace(self.lo, self.hi, self.points)
        return np.linspace(self.lo, self.hi, self.points)


@dataclass(frozen=True)
class ParamSweep:
    name: str
    spec: SweepSpec


@dataclass(frozen=True)
class RunConfig:
    model: SystemModel
    weights: CostWeights
    budget: float | None
    budget_sweep: SweepSpec | None
    solver: SolverOptions
    sim: SimConfig | None
    units: str
    param_sweep: ParamSweep | None
    horizons: tuple[int, ...] | None
    solver_set: bool = False     # tol/max_iter came from the config file


def _matrix(field: str, raw) -> np.ndarray:
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        return np.array([[float(raw)]])
    if not isinstance(raw, list) or not raw:
        raise ConfigError(field, "expected a number or a non-empty nested array")
    if not all(isinstance(row, list) and row for row in raw):
        raise ConfigError(field, "matrix rows must be non-empty arrays")
    width = len(raw[0])
    if any(len(row) != width for row in raw):
        raise ConfigError(field, "ragged rows")
    try:
        mat = np.array(raw, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(field, "non-numeric entry") from None
    if not np.all(np.isfinite(mat)):
        raise ConfigError(field, "non-finite entry")
    return mat


def _check_keys(field: str, block: dict, allowed: set[str], lax: bool):
    if not isinstance(block, dict):
        raise ConfigError(field, "expected an object")
    unknown = set(block) - allowed
    if unknown and not lax:
        raise ConfigError(field, f"unknown keys: {sorted(unknown)} "
                          "(use --lax to ignore)")


def _sweep_spec(field: str, block: dict, lax: bool) -> SweepSpec:
    _check_keys(field, block, _SWEEP_KEYS, lax)
    try:
        lo = float(block["min"])
        hi = float(block["max"])
        points = int(block["points"])
    except KeyError as e:
        raise ConfigError(field, f"missing key {e.args[0]!r}") from None
    scale = block.get("scale", "linear")
    if scale not in ("linear", "log"):
        raise ConfigError(f"{field}.scale", f"unknown scale {scale!r}")
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo < 0 or hi < lo:
        raise ConfigError(field, "need 0 <= min <= max, finite")
    if points < 1:
        raise ConfigError(f"{field}.points", "need at least one point")
    if scale == "log" and lo <= 0:
        raise ConfigError(field, "log scale needs min > 0")
    return SweepSpec(lo=lo, hi=hi, points=points, scale=scale)


def load_config(path: str, lax: bool = False) -> RunConfig:
    """Parse and fully validate a run configuration file."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as e:
        raise ConfigError(path, f"cannot read: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(path, f"invalid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError(path, "top level must be an object")
    _check_keys("<top>", doc, _TOP_KEYS, lax)

    if "system" not in doc:
        raise ConfigError("system", "missing block")
    if "cost" not in doc:
        raise ConfigError("cost", "missing block")
    _check_keys("system", doc["system"], _SYSTEM_KEYS, lax)
    _check_keys("cost", doc["cost"], _COST_KEYS, lax)
    sysblock = doc["system"]
    for key in ("F", "G", "H", "J", "W", "V", "L"):
        if key not in sysblock:
            raise ConfigError(f"system.{key}", "missing matrix")
    mats = {key: _matrix(f"system.{key}", sysblock[key])
            for key in sysblock if key in _SYSTEM_KEYS}
    costblock = doc["cost"]
    for key in ("Q", "R"):
        if key not in costblock:
            raise ConfigError(f"cost.{key}", "missing matrix")
    try:
        model = SystemModel(F=mats["F"], G=mats["G"], H=mats["H"], J=mats["J"],
                            W=mats["W"], V=mats["V"], L=mats["L"],
                            Sigma1=mats.get("Sigma1"))
        weights = CostWeights(Q=_matrix("cost.Q", costblock["Q"]),
                              R=_matrix("cost.R", costblock["R"]))
    except Exception as e:
        raise ConfigError("system", str(e)) from None
    report = validate_model(model, weights)
    if not report.ok:
        raise ConfigError("system", f"invalid model: {report}")

    budget = None
    budget_sweep = None
    raw_budget = doc.get("budget")
    if isinstance(raw_budget, dict):
        budget_sweep = _sweep_spec("budget", raw_budget, lax)
    elif raw_budget is not None:
        try:
            budget = float(raw_budget)
        except (TypeError, ValueError):
            raise ConfigError("budget", "expected a number or sweep object") from None
        if not math.isfinite(budget) or budget < 0:
            raise ConfigError("budget", "must be finite and nonnegative")

    solver = SolverOptions()
    if "solver" in doc:
        _check_keys("solver", doc["solver"], _SOLVER_KEYS, lax)
        try:
            solver = SolverOptions(
                tol=float(doc["solver"].get("tol", solver.tol)),
                max_iter=int(doc["solver"].get("max_iter", solver.max_iter)))
        except (TypeError, ValueError):
            raise ConfigError("solver", "bad tol/max_iter") from None
        if solver.tol <= 0:
            raise ConfigError("solver.tol", "must be positive")

    sim = None
    if "sim" in doc:
        _check_keys("sim", doc["sim"], _SIM_KEYS, lax)
        blk = doc["sim"]
        try:
            sim = SimConfig(horizon=int(blk["horizon"]),
                            trajectories=int(blk["trajectories"]),
                            seed=int(blk["seed"]),
                            burn_in=(int(blk["burn_in"])
                                     if "burn_in" in blk else None))
        except KeyError as e:
            raise ConfigError(f"sim.{e.args[0]}", "missing") from None
        except (TypeError, ValueError) as e:
            raise ConfigError("sim", str(e)) from None

    units = doc.get("units", "bits")
    if units not in ("bits", "nats"):
        raise ConfigError("units", f"unknown units {units!r}")

    param_sweep = None
    if "param_sweep" in doc:
        blk = doc["param_sweep"]
        _check_keys("param_sweep", blk, _PARAM_KEYS, lax)
        if "name" not in blk:
            raise ConfigError("param_sweep.name", "missing")
        spec = _sweep_spec("param_sweep",
                           {k: v for k, v in blk.items() if k != "name"}, lax)
        param_sweep = ParamSweep(name=str(blk["name"]), spec=spec)

    horizons = None
    if "horizons" in doc:
        raw = doc["horizons"]
        if (not isinstance(raw, list) or not raw
                or not all(isinstance(h, int) and h >= 1 for h in raw)):
            raise ConfigError("horizons", "expected a list of positive integers")
        horizons = tuple(raw)

    return RunConfig(model=model, weights=weights, budget=budget,
                     budget_sweep=budget_sweep, solver=solver, sim=sim,
                     units=units, param_sweep=param_sweep, horizons=horizons,
                     solver_set="solver" in doc)


def set_system_entry(model: SystemModel, name: str, value: float) -> SystemModel:
    """Return a copy of the model with one named scalar entry replaced.

    Accepts "G" (entry [0, 0]) or an indexed form like "F[1,2]".
    """
    field = name
    i = j = 0
    if "[" in name:
        field, idx = name.split("[", 1)
        idx = idx.rstrip("]")
        try:
            i, j = (int(t) for t in idx.split(","))
        except ValueError:
            raise ConfigError("param_sweep.name", f"bad index in {name!r}") from None
    if field not in _SYSTEM_KEYS:
        raise ConfigError("param_sweep.name", f"unknown system entry {field!r}")
    mats = {key: getattr(model, key).copy()
            for key in ("F", "G", "H", "J", "W", "V", "L", "Sigma1")}
    if not (0 <= i < mats[field].shape[0] and 0 <= j < mats[field].shape[1]):
        raise ConfigError("param_sweep.name", f"index out of range in {name!r}")
    mats[field][i, j] = value
    return SystemModel(**mats)
