"""Scenario files: JSON schema validation, loading, and the resolved echo.

A scenario file fully determines an experiment.  Randomized parts
(per-agent noise parameters drawn from intervals, boxed initial states)
are resolved from dedicated seeded substreams and echoed back in explicit
form, so the echo re-runs byte-identically as a config of its own.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import jsonschema

from .errors import ConfigError
from .graphs import Graph, make_topology
from .noise import NoiseSchedule, PURPOSE_PARAMS, RngSpec, uniform_block
from .plant import FullObserver, GainSet, LtiPlant, ReducedForm, canonicalize_output
from .privacy import AdjacencySpec
from .sim import ScenarioConfig

_MATRIX = {"type": "array", "minItems": 1,
           "items": {"type": "array", "minItems": 1, "items": {"type": "number"}}}

_SCHEDULE_FIELDS = {
    "c": {"type": "number", "minimum": 0},
    "kind": {"enum": ["exponential", "polynomial", "custom"]},
    "g": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    "power": {"type": "integer", "minimum": 1},
    "p": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0}},
}

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["graph", "plant", "observer", "gains", "noise", "sim"],
    "additionalProperties": False,
    "properties": {
        "graph": {
            "type": "object",
            "required": ["kind", "N"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["complete", "ring", "circulant", "star", "explicit"]},
                "N": {"type": "integer", "minimum": 2},
                "offsets": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "edges": {"type": "array",
                          "items": {"type": "array", "minItems": 2, "maxItems": 2,
                                    "items": {"type": "integer", "minimum": 0}}},
            },
        },
        "plant": {
            "type": "object",
            "required": ["A", "B", "C"],
            "additionalProperties": False,
            "properties": {"A": _MATRIX, "B": _MATRIX, "C": _MATRIX},
        },
        "observer": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["full", "reduced"]},
                "L": _MATRIX,
                "P": _MATRIX,
                "Lbar": _MATRIX,
            },
        },
        "gains": {
            "type": "object",
            "required": ["K"],
            "additionalProperties": False,
            "properties": {"K": _MATRIX},
        },
        "noise": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "interval": {
                    "type": "object",
                    "required": ["c", "g"],
                    "additionalProperties": False,
                    "properties": {
                        "c": {"type": "array", "minItems": 2, "maxItems": 2,
                              "items": {"type": "number", "minimum": 0}},
                        "g": {"type": "array", "minItems": 2, "maxItems": 2,
                              "items": {"type": "number", "exclusiveMinimum": 0,
                                        "exclusiveMaximum": 1}},
                    },
                },
                "per_agent": {"type": "array", "minItems": 1,
                              "items": {"type": "object", "required": ["c", "kind"],
                                        "additionalProperties": False,
                                        "properties": _SCHEDULE_FIELDS}},
                "shared": {"type": "object", "required": ["c", "kind"],
                           "additionalProperties": False,
                           "properties": _SCHEDULE_FIELDS},
            },
        },
        "adjacency": {
            "type": "object",
            "required": ["i0", "k0", "m", "alpha"],
            "additionalProperties": False,
            "properties": {
                "i0": {"type": "integer", "minimum": 0},
                "k0": {"type": "integer", "minimum": 0},
                "m": {"type": "number", "minimum": 0},
                "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
        "sim": {
            "type": "object",
            "required": ["seed"],
            "additionalProperties": False,
            "properties": {
                "H": {"type": "integer", "minimum": 1, "default": 200},
                "R": {"type": "integer", "minimum": 2, "default": 500},
                "seed": {"type": "integer", "minimum": 0},
                "x0": {
                    "type": "object",
                    "required": ["kind"],
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["uniform", "explicit"]},
                        "low": {"type": "number"},
                        "high": {"type": "number"},
                        "values": _MATRIX,
                    },
                },
            },
        },
        "privacy": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eps_star": {"type": "number", "exclusiveMinimum": 0},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "strict_paper": {"type": "boolean"},
                "audit_horizon": {"type": "integer", "minimum": 1},
            },
        },
    },
}


@dataclass(frozen=True, eq=False)
class LoadedScenario:
    """A validated scenario plus side information the CLI needs."""

    cfg: ScenarioConfig
    echo: dict
    runs: int
    seed: int
    tol: float
    strict: bool
    eps_star: float | None
    audit_horizon: int


def load_scenario(path, seed_override: int | None = None,
                  tol_override: float | None = None,
                  strict_override: bool = False) -> LoadedScenario:
    """Load, validate, and resolve a scenario file.

    Seed precedence: explicit override, then the DPC_SEED environment
    variable, then the file's sim.seed.
    """
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario file {path} is not valid JSON: {exc}") from exc
    return scenario_from_dict(raw, seed_override=seed_override,
                              tol_override=tol_override,
                              strict_override=strict_override)


def scenario_from_dict(raw: dict, seed_override: int | None = None,
                       tol_override: float | None = None,
                       strict_override: bool = False) -> LoadedScenario:
    validator = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        pointer = "/" + "/".join(str(p) for p in e.absolute_path)
        raise ConfigError(f"scenario schema violation at {pointer}: {e.message}")

    seed = _resolve_seed(raw, seed_override)
    rng = RngSpec(master_seed=seed)

    graph = _build_graph(raw["graph"])
    plant = _build_plant(raw["plant"])
    gains = _build_gains(raw["gains"], plant)
    kind, observer, reduced, obs_echo = _build_observer(raw["observer"], plant)
    schedules, noise_echo = _build_noise(raw["noise"], graph.n, rng)
    adjacency = _build_adjacency(raw.get("adjacency"), graph.n)

    sim_raw = raw["sim"]
    horizon = int(sim_raw.get("H", 200))
    runs = int(sim_raw.get("R", 500))
    x0_raw = sim_raw.get("x0", {"kind": "uniform", "low": -5.0, "high": 5.0})
    x0, x0_box, x0_echo = _build_x0(x0_raw, graph.n, plant.n)

    priv = raw.get("privacy", {})
    tol = float(tol_override if tol_override is not None else priv.get("tol", 1e-10))
    strict = bool(strict_override or priv.get("strict_paper", False))
    eps_star = priv.get("eps_star")
    audit_horizon = int(priv.get("audit_horizon", 500))

    cfg = ScenarioConfig(
        graph=graph, plant=plant, gains=gains, schedules=schedules, rng=rng,
        horizon=horizon, observer_kind=kind, observer=observer, reduced=reduced,
        x0=x0, x0_box=x0_box, adjacency=adjacency, runs=runs,
    )

    echo = {
        "graph": dict(raw["graph"]),
        "plant": {"A": _mat(plant.a), "B": _mat(plant.b), "C": _mat(plant.c)},
        "observer": obs_echo,
        "gains": {"K": _mat(gains.k)},
        "noise": noise_echo,
        "sim": {"H": horizon, "R": runs, "seed": seed, "x0": x0_echo},
        "privacy": {"tol": tol, "strict_paper": strict,
                    **({"eps_star": float(eps_star)} if eps_star is not None else {}),
                    "audit_horizon": audit_horizon},
    }
    if adjacency is not None:
        echo["adjacency"] = {"i0": adjacency.i0, "k0": adjacency.k0,
                             "m": adjacency.m, "alpha": adjacency.alpha}
    return LoadedScenario(cfg=cfg, echo=echo, runs=runs, seed=seed, tol=tol,
                          strict=strict,
                          eps_star=float(eps_star) if eps_star is not None else None,
                          audit_horizon=audit_horizon)


def _resolve_seed(raw: dict, seed_override) -> int:
    if seed_override is not None:
        return int(seed_override)
    env = os.environ.get("DPC_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"DPC_SEED must be an integer, got {env!r}") from exc
    return int(raw["sim"]["seed"])


def _build_graph(g: dict) -> Graph:
    return make_topology(g["kind"], int(g["N"]), offsets=g.get("offsets"),
                         edges=g.get("edges"))


def _build_plant(p: dict) -> LtiPlant:
    a, b, c = _np(p["A"], "plant/A"), _np(p["B"], "plant/B"), _np(p["C"], "plant/C")
    if a.shape[0] != a.shape[1]:
        raise ConfigError(f"plant/A must be square, got {a.shape[0]}x{a.shape[1]}")
    if b.shape[0] != a.shape[0]:
        raise ConfigError(
            f"plant/B has {b.shape[0]} rows but A is {a.shape[0]}x{a.shape[0]}")
    if c.shape[1] != a.shape[0]:
        raise ConfigError(
            f"plant/C has {c.shape[1]} columns but A is {a.shape[0]}x{a.shape[0]}")
    return LtiPlant(a=a, b=b, c=c)


def _build_gains(g: dict, plant: LtiPlant) -> GainSet:
    k = _np(g["K"], "gains/K")
    if k.shape != (plant.r, plant.n):
        raise ConfigError(
            f"gains/K must be {plant.r}x{plant.n} (inputs x states), got "
            f"{k.shape[0]}x{k.shape[1]}")
    return GainSet(k=k)


def _build_observer(o: dict, plant: LtiPlant):
    if o["kind"] == "full":
        if "L" not in o:
            raise ConfigError("observer/L is required for the full-order kind")
        l = _np(o["L"], "observer/L")
        if l.shape != (plant.n, plant.q):
            raise ConfigError(
                f"observer/L must be {plant.n}x{plant.q}, got {l.shape[0]}x{l.shape[1]}")
        return "full", FullObserver(l=l), None, {"kind": "full", "L": _mat(l)}
    if "Lbar" not in o:
        raise ConfigError("observer/Lbar is required for the reduced-order kind")
    p = _np(o["P"], "observer/P") if "P" in o else None
    rf = canonicalize_output(plant, p=p).with_gain(_np(o["Lbar"], "observer/Lbar"))
    echo = {"kind": "reduced", "P": _mat(rf.p), "Lbar": _mat(rf.lbar)}
    return "reduced", None, rf, echo


def _build_noise(noise: dict, n_agents: int, rng: RngSpec):
    forms = [k for k in ("interval", "per_agent", "shared") if k in noise]
    if len(forms) != 1:
        raise ConfigError(
            "noise must have exactly one of interval, per_agent, shared; "
            f"got {forms or 'none'}")
    if "interval" in noise:
        lo_c, hi_c = (float(v) for v in noise["interval"]["c"])
        lo_g, hi_g = (float(v) for v in noise["interval"]["g"])
        if hi_c < lo_c or hi_g < lo_g:
            raise ConfigError("noise interval bounds must be ordered lo <= hi")
        draws = uniform_block(rng, PURPOSE_PARAMS, 0, np.arange(n_agents), 0, 2)
        schedules = tuple(
            NoiseSchedule.exponential(lo_c + (hi_c - lo_c) * float(draws[i, 0]),
                                      lo_g + (hi_g - lo_g) * float(draws[i, 1]))
            for i in range(n_agents))
    elif "per_agent" in noise:
        entries = noise["per_agent"]
        if len(entries) != n_agents:
            raise ConfigError(
                f"noise/per_agent has {len(entries)} entries for {n_agents} agents")
        schedules = tuple(_schedule_from(e) for e in entries)
    else:
        schedules = tuple(_schedule_from(noise["shared"]) for _ in range(n_agents))
    echo = {"per_agent": [_schedule_echo(s) for s in schedules]}
    return schedules, echo


def _schedule_from(e: dict) -> NoiseSchedule:
    kind = e["kind"]
    if kind == "exponential":
        if "g" not in e:
            raise ConfigError("exponential schedule needs g")
        return NoiseSchedule.exponential(float(e["c"]), float(e["g"]))
    if kind == "polynomial":
        if "power" not in e:
            raise ConfigError("polynomial schedule needs power")
        return NoiseSchedule.polynomial(float(e["c"]), int(e["power"]))
    if "p" not in e:
        raise ConfigError("custom schedule needs the sequence p")
    return NoiseSchedule.custom(float(e["c"]), [float(v) for v in e["p"]])


def _schedule_echo(s: NoiseSchedule) -> dict:
    if s.kind == "exponential":
        return {"c": s.c, "kind": "exponential", "g": s.g}
    if s.kind == "polynomial":
        return {"c": s.c, "kind": "polynomial", "power": s.power}
    return {"c": s.c, "kind": "custom", "p": list(s.seq)}


def _build_adjacency(adj: dict | None, n_agents: int):
    if adj is None:
        return None
    if adj["i0"] >= n_agents:
        raise ConfigError(f"adjacency/i0 = {adj['i0']} out of range for N={n_agents}")
    return AdjacencySpec(i0=int(adj["i0"]), k0=int(adj["k0"]), m=float(adj["m"]),
                         alpha=float(adj["alpha"]))


def _build_x0(x0: dict, n_agents: int, n: int):
    if x0["kind"] == "uniform":
        low = float(x0.get("low", -5.0))
        high = float(x0.get("high", 5.0))
        if high < low:
            raise ConfigError("x0 box needs low <= high")
        return None, (low, high), {"kind": "uniform", "low": low, "high": high}
    if "values" not in x0:
        raise ConfigError("explicit x0 needs values")
    vals = _np(x0["values"], "sim/x0/values")
    if vals.shape != (n_agents, n):
        raise ConfigError(
            f"sim/x0/values must be {n_agents}x{n} (agents x states), got "
            f"{vals.shape[0]}x{vals.shape[1]}")
    return vals, None, {"kind": "explicit", "values": _mat(vals)}


def _np(rows, where: str) -> np.ndarray:
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ConfigError(f"{where} is not rectangular (row lengths {sorted(widths)})")
    a = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ConfigError(f"{where} has non-finite entries")
    return a


def _mat(a: np.ndarray) -> list:
    return [[float(v) for v in row] for row in np.asarray(a)]
