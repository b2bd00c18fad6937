"""Nominal runs, perturbation sweeps and the built-in experiments.

Robustness is assessed empirically: a sweep samples perturbed plants inside
a semimetric ball and records, per sample, boundedness and the steady-state
property.  A clean sweep means "no violation found within the sampled
radius", nothing stronger.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Sequence

import jsonschema
import numpy as np
from scipy.linalg import expm

from . import expr as ex
from .dynamics import (ClosedLoopSystem, DimensionError, ExtendedPlant, InitialSet,
                       LinearIMRegulator, Regulator, compose_closed_loop)
from .expr import ExprError
from .harmonics import (PropertySpec, PropertyVerdict, evaluate_property, fourier_coeff,
                        PropertyError)
from .internal_model import (InternalModelError, InternalModelPair, LinearPlantSS,
                             LinearRegulatorDesign, SynthesisError, build_frequency_im,
                             build_periodic_im, design_linear_regulator)
from .perturbations import (CompactGrid, TrigPolynomial, delta_for_ball, lift_to_c0,
                            perturb_linear, sample_trig_ball, weak_ck_semimetric)
from .simulate import (IntegrationError, SteadyStateEstimate, Trajectory, check_uub,
                       estimate_steady_state, integrate)

__all__ = [
    "ScenarioError", "NominalInstabilityError", "Scenario", "LoopResult",
    "RobustnessReport", "run_nominal", "run_sweep", "run_counterexample",
    "counterexample_scenario", "dimension_probe", "ProbeResult", "canonical_json",
    "digest", "SCENARIO_SCHEMA", "PROBE_NOTE",
]

TWO_PI = 2 * math.pi
PROBE_NOTE = ("illustrative only: the probe fixes a modal generator matrix and fits the "
              "output map; it does not bound arbitrary C1 generators")


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario description."""


class NominalInstabilityError(RuntimeError):
    """The nominal loop of an experiment is not stable."""


# ---------------------------------------------------------------------------
# scenario description

_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_vector = {"type": "array", "items": {"type": "number"}}
_exprs = {"type": "array", "items": {"type": "string"}}
_box = {
    "oneOf": [
        _vector,
        {"type": "object", "required": ["lower", "upper"],
         "properties": {"lower": _vector, "upper": _vector}, "additionalProperties": False},
    ]
}

SCENARIO_SCHEMA: dict = {
    "type": "object",
    "required": ["plant", "regulator", "property"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "plant": {
            "oneOf": [
                {"type": "object", "required": ["kind", "S", "A", "B", "P", "C_e", "C_y"],
                 "additionalProperties": False,
                 "properties": {"kind": {"const": "linear"}, "S": _matrix, "A": _matrix,
                                "B": _matrix, "P": _matrix, "C_e": _matrix, "C_y": _matrix,
                                "error_in_output": {"type": "boolean"}}},
                {"type": "object",
                 "required": ["kind", "n_w", "n_p", "n_u", "s", "f_p", "h_p", "h_e"],
                 "additionalProperties": False,
                 "properties": {"kind": {"const": "expr"},
                                "n_w": {"type": "integer", "minimum": 0},
                                "n_p": {"type": "integer", "minimum": 1},
                                "n_u": {"type": "integer", "minimum": 1},
                                "s": _exprs, "f_p": _exprs, "h_p": _exprs, "h_e": _exprs,
                                "error_in_output": {"type": "boolean"}}},
            ]
        },
        "regulator": {
            "oneOf": [
                {"type": "object", "required": ["synthesize"], "additionalProperties": False,
                 "properties": {
                     "synthesize": {"const": "linear-regulator"},
                     "internal_model": {
                         "type": "object", "additionalProperties": False,
                         "properties": {"T": {"type": "number", "exclusiveMinimum": 0},
                                        "d": {"type": "integer", "minimum": 0},
                                        "freqs": _vector}}}},
                {"type": "object", "required": ["n_c", "f_c", "h_c"],
                 "additionalProperties": False,
                 "properties": {"n_c": {"type": "integer", "minimum": 0},
                                "f_c": _exprs, "h_c": _exprs,
                                "phi": _matrix, "g": _matrix}},
            ]
        },
        "initial_sets": {
            "type": "object", "additionalProperties": False,
            "properties": {"w": _box, "x": _box, "x_c": _box},
        },
        "simulation": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "horizon": {"type": "number", "exclusiveMinimum": 0},
                "rtol": {"type": "number", "exclusiveMinimum": 0},
                "atol": {"type": "number", "exclusiveMinimum": 0},
                "tail_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "period": {"type": "number", "exclusiveMinimum": 0},
                "periodicity_tol": {"type": "number", "exclusiveMinimum": 0},
                "uub_bound": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "property": {
            "oneOf": [
                {"$ref": "#/definitions/property"},
                {"type": "array", "minItems": 1, "items": {"$ref": "#/definitions/property"}},
            ]
        },
        "perturbation": {
            "type": "object", "required": ["kind"], "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["none", "linear-matrix", "trig-ball"]},
                "epsilon": {"type": "number", "minimum": 0},
                "N": {"type": "integer", "minimum": 1},
                "freeze_S": {"type": "boolean"},
                "target": {"type": "integer", "minimum": 1},
                "grid": {"type": "object", "additionalProperties": False,
                         "properties": {"shape": {"enum": ["disk", "box"]},
                                        "count": {"type": "integer", "minimum": 1},
                                        "lower": _vector, "upper": _vector}},
                "distance_grid": {"type": "object", "additionalProperties": False,
                                  "properties": {"count": {"type": "integer", "minimum": 1},
                                                 "lower": {"type": "number"},
                                                 "upper": {"type": "number"}}},
            },
        },
    },
    "definitions": {
        "property": {
            "type": "object", "required": ["kind"],
            "properties": {
                "kind": {"enum": ["P_A", "P_eq", "P_0", "P_eps", "P_DC", "P_T_weak", "P_T",
                                  "P_nu_weak", "P_nu"]},
                "tol": {"type": "number", "exclusiveMinimum": 0},
            },
        },
    },
}


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=True,
                      allow_nan=False)


def digest(data: Any) -> str:
    return hashlib.sha256(canonical_json(data).encode("ascii")).hexdigest()


def _clean(obj: Any) -> Any:
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _initial_set(spec, n: int, what: str) -> InitialSet:
    if spec is None:
        return InitialSet.zeros(n)
    if isinstance(spec, dict):
        s = InitialSet(tuple(spec["lower"]), tuple(spec["upper"]))
    else:
        s = InitialSet.point(spec)
    if s.dim != n:
        raise ScenarioError(f"initial set for {what} has dimension {s.dim}, expected {n}")
    return s


@dataclass(frozen=True)
class SimulationSettings:
    horizon: float
    rtol: float = 1e-10
    atol: float = 1e-12
    tail_fraction: float = 0.5
    period: float | None = None
    periodicity_tol: float = 1e-6
    uub_bound: float = 1e3

    def to_json(self) -> dict:
        return {"horizon": self.horizon, "rtol": self.rtol, "atol": self.atol,
                "tail_fraction": self.tail_fraction, "period": self.period,
                "periodicity_tol": self.periodicity_tol, "uub_bound": self.uub_bound}


@dataclass(frozen=True, eq=False)
class Scenario:
    """A complete experiment description (immutable)."""

    name: str
    plant: ExtendedPlant | LinearPlantSS
    regulator: Regulator
    design: LinearRegulatorDesign | None
    x0_w: InitialSet
    x0_p: InitialSet
    x0_c: InitialSet
    sim: SimulationSettings
    properties: tuple[PropertySpec, ...]
    perturbation: dict
    seed: int
    raw: dict = field(repr=False)

    @property
    def extended_plant(self) -> ExtendedPlant:
        p = self.plant
        return p.to_extended() if isinstance(p, LinearPlantSS) else p

    @property
    def primary(self) -> PropertySpec:
        return self.properties[0]

    @property
    def digest(self) -> str:
        return digest(self.raw)

    def closed_loop(self, plant: ExtendedPlant | LinearPlantSS | None = None) -> ClosedLoopSystem:
        p = self.plant if plant is None else plant
        if isinstance(p, LinearPlantSS):
            p = p.to_extended()
        return compose_closed_loop(p, self.regulator)

    def initial_conditions(self) -> list[np.ndarray]:
        box = InitialSet(self.x0_w.lower + self.x0_p.lower + self.x0_c.lower,
                         self.x0_w.upper + self.x0_p.upper + self.x0_c.upper)
        return box.lattice()

    def with_overrides(self, **sim_changes) -> "Scenario":
        raw = copy.deepcopy(self.raw)
        sim = raw.setdefault("simulation", {})
        for k, v in sim_changes.items():
            if v is not None:
                sim[k] = v
        return Scenario.from_dict(raw)

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        """Validate and build a scenario.

        Raises
        ------
        ScenarioError
            Schema violations, unparsable expressions, inconsistent dimensions.
        SynthesisError
            When a requested Linear Regulator cannot be built.
        """
        try:
            jsonschema.validate(data, SCENARIO_SCHEMA)
        except jsonschema.ValidationError as exc:
            path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ScenarioError(f"invalid scenario at {path}: {exc.message}") from None
        raw = copy.deepcopy(data)
        return _build_scenario(raw)

    @classmethod
    def from_file(cls, path) -> "Scenario":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: malformed JSON: {exc}") from None
        except OSError as exc:
            raise ScenarioError(f"{path}: {exc.strerror}") from None
        try:
            return cls.from_dict(data)
        except ScenarioError as exc:
            raise ScenarioError(f"{path}: {exc}") from None


def _build_plant(spec: dict) -> ExtendedPlant | LinearPlantSS:
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == "linear":
        return LinearPlantSS(**{k: spec[k] for k in ("S", "A", "B", "P", "C_e", "C_y")},
                             error_in_output=spec.get("error_in_output", True))
    return ExtendedPlant(spec["n_w"], spec["n_p"], spec["n_u"], spec["s"], spec["f_p"],
                         spec["h_p"], spec["h_e"],
                         error_in_output=spec.get("error_in_output", True))


def _build_im(spec: dict | None) -> InternalModelPair | None:
    if not spec:
        return None
    if "freqs" in spec:
        return build_frequency_im(spec["freqs"])
    if "T" in spec:
        return build_periodic_im(spec["T"], spec.get("d", 0))
    raise ScenarioError("internal_model needs 'freqs' or 'T'")


def _build_scenario(raw: dict) -> Scenario:
    try:
        plant = _build_plant(raw["plant"])
        rspec = raw["regulator"]
        design = None
        if "synthesize" in rspec:
            design = design_linear_regulator(plant, _build_im(rspec.get("internal_model")))
            reg: Regulator = design.regulator
        else:
            n_y = plant.n_y
            if "phi" in rspec:
                reg = LinearIMRegulator(rspec["n_c"], n_y, rspec["f_c"], rspec["h_c"],
                                        phi=rspec["phi"], g=rspec["g"])
            else:
                reg = Regulator(rspec["n_c"], n_y, rspec["f_c"], rspec["h_c"])
        ext = plant.to_extended() if isinstance(plant, LinearPlantSS) else plant
        compose_closed_loop(ext, reg)  # dimension check
        isets = raw.get("initial_sets", {})
        x0_w = _initial_set(isets.get("w"), ext.n_w, "w")
        x0_p = _initial_set(isets.get("x"), ext.n_p, "x")
        x0_c = _initial_set(isets.get("x_c"), reg.n_c, "x_c") if "x_c" in isets else reg.x_c0
        props_raw = raw["property"]
        props_raw = props_raw if isinstance(props_raw, list) else [props_raw]
        props = tuple(PropertySpec.from_dict(p) for p in props_raw)
        simd = dict(raw.get("simulation", {}))
        period = simd.get("period")
        if period is None:
            for p in props:
                if "T" in p.params:
                    period = float(p.params["T"])
                    break
        if "horizon" not in simd:
            if period is None:
                raise ScenarioError("simulation.horizon is required when no period is known")
            simd["horizon"] = 100 * period
        simd["period"] = period
        sim = SimulationSettings(**simd)
        if period is not None and sim.horizon < 10 * period * (1 - 1e-12):
            raise ScenarioError(f"horizon {sim.horizon:g} is shorter than 10 periods "
                                f"({10 * period:g})")
        for p in props:
            if p.kind in ("P_nu", "P_nu_weak"):
                slow = min([float(v) for v in p.params["freqs"] if float(v) > 0] or [math.inf])
                if math.isfinite(slow) and sim.horizon * sim.tail_fraction < 20 / slow * (1 - 1e-12):
                    raise ScenarioError(f"{p.kind} needs a tail of at least {20 / slow:g} "
                                        "(20 periods of the slowest frequency)")
        pert = dict(raw.get("perturbation", {"kind": "none"}))
        if pert["kind"] == "linear-matrix" and not isinstance(plant, LinearPlantSS):
            raise ScenarioError("linear-matrix perturbations need a linear plant")
        if pert["kind"] == "trig-ball" and ext.n_w < 2:
            raise ScenarioError("trig-ball perturbations need a rotation exosystem (n_w >= 2)")
        if pert["kind"] != "none" and "epsilon" not in pert:
            raise ScenarioError("perturbation.epsilon is required")
        if pert.get("target", 1) > ext.n_p:
            raise ScenarioError("perturbation.target exceeds n_p")
    except (DimensionError, ExprError, PropertyError, InternalModelError, TypeError,
            KeyError) as exc:
        raise ScenarioError(str(exc)) from None
    return Scenario(name=raw.get("name", "scenario"), plant=plant, regulator=reg,
                    design=design, x0_w=x0_w, x0_p=x0_p, x0_c=x0_c, sim=sim,
                    properties=props, perturbation=pert, seed=int(raw.get("seed", 0)),
                    raw=raw)


# ---------------------------------------------------------------------------
# evaluation of one closed loop

@dataclass(eq=False)
class LoopResult:
    stable: bool
    max_tail_norm: float | None
    failure: str | None
    verdicts: list[dict]
    periodic: list[str] = field(default_factory=list)
    trajectories: list[Trajectory] = field(default_factory=list, repr=False)
    steady_states: list[SteadyStateEstimate] = field(default_factory=list, repr=False)

    def holds(self, i: int = 0) -> bool:
        return bool(self.stable and self.verdicts[i]["holds"])

    def to_json(self, properties: Sequence[PropertySpec]) -> dict:
        return {
            "stable": self.stable, "max_tail_norm": self.max_tail_norm,
            "failure": self.failure,
            "periodic": list(self.periodic),
            "properties": [dict(kind=p.kind, **v) for p, v in zip(properties, self.verdicts)],
        }


def _merge_verdicts(vs: Sequence[PropertyVerdict]) -> dict:
    metrics: dict = {}
    for v in vs:
        for k, val in v.metrics.items():
            if isinstance(val, bool):
                metrics[k] = metrics.get(k, True) and val
            else:
                metrics[k] = max(metrics.get(k, -math.inf), val)
    return {"evaluated": True, "holds": all(v.holds for v in vs),
            "vacuous": all(v.vacuous for v in vs),
            "metric": max(v.metric for v in vs),
            "threshold": min(v.threshold for v in vs), "metrics": metrics}


def _unevaluated() -> dict:
    return {"evaluated": False, "holds": False, "vacuous": False, "metric": None,
            "threshold": None, "metrics": {}}


def evaluate_loop(cl: ClosedLoopSystem, ics: Sequence[np.ndarray], sim: SimulationSettings,
                  props: Sequence[PropertySpec], keep: bool = False) -> LoopResult:
    """Integrate every initial condition, check UUB, extract steady states, test properties.

    Integration failures make the loop unstable; they are recorded, not raised.
    """
    trajs = []
    try:
        for x0 in ics:
            trajs.append(integrate(cl, x0, sim.horizon, rtol=sim.rtol, atol=sim.atol))
    except IntegrationError as exc:
        return LoopResult(False, None, f"{type(exc).__name__}: {exc}",
                          [_unevaluated() for _ in props])
    t_discard = sim.horizon * (1 - sim.tail_fraction)
    uub = check_uub(trajs, t_discard, sim.uub_bound)
    if not uub.bounded:
        return LoopResult(False, uub.max_tail_norm, "bound exceeded",
                          [_unevaluated() for _ in props], [], trajs if keep else [])
    sss = [estimate_steady_state(tr, T_hint=sim.period, tol=sim.periodicity_tol,
                                 tail_fraction=sim.tail_fraction) for tr in trajs]
    err = cl.error_fn
    verdicts = []
    for p in props:
        vs = [evaluate_property(p, ss, err, eta_slice=cl.eta_slice) for ss in sss]
        verdicts.append(_merge_verdicts(vs))
    return LoopResult(True, uub.max_tail_norm, None, verdicts, [ss.verdict for ss in sss],
                      trajs if keep else [], sss if keep else [])


def run_nominal(sc: Scenario, keep: bool = False) -> LoopResult:
    """Nominal verdict over the initial-condition lattice (corners plus center)."""
    return evaluate_loop(sc.closed_loop(), sc.initial_conditions(), sc.sim, sc.properties,
                         keep=keep)


# ---------------------------------------------------------------------------
# sweeps

def _trig_setup(sc: Scenario) -> tuple[float, CompactGrid]:
    pert = sc.perturbation
    g = pert.get("grid", {})
    if g.get("shape", "disk") == "disk":
        K = CompactGrid.unit_disk(g.get("count", 201))
    else:
        K = CompactGrid.box(g.get("lower", [-1, -1]), g.get("upper", [1, 1]),
                            g.get("count", 201))
    return delta_for_ball(float(pert["epsilon"]), int(pert["N"]), K), K


def _add_to_component(plant: ExtendedPlant, idx: int, q: ex.Expr) -> ExtendedPlant:
    f = list(plant.f_p)
    f[idx] = ex.add(f[idx], q)
    return plant.replace(f_p=f)


def perturbed_plant(sc: Scenario, index: int) -> tuple[ExtendedPlant | LinearPlantSS, dict]:
    """Plant of sample ``index`` and a JSON summary of the perturbation."""
    pert = sc.perturbation
    kind = pert["kind"]
    eps = float(pert.get("epsilon", 0.0))
    if kind == "none" or eps == 0.0:
        return sc.plant, {"kind": kind}
    if kind == "linear-matrix":
        p = perturb_linear(sc.plant, eps, sc.seed, freeze_S=pert.get("freeze_S", True),
                           index=index)
        return p, {"kind": kind}
    delta, K = _trig_setup(sc)
    sigma = sample_trig_ball(int(pert["N"]), delta, sc.seed, index=index)
    lift = lift_to_c0(sigma, K)
    plant = _add_to_component(sc.extended_plant, pert.get("target", 1) - 1, lift.expr)
    return plant, {"kind": kind, "sigma": sigma.coeffs, "phi_norm": sigma.norm(),
                   "sup_K_c_sigma": lift.sup_on_grid}


def _distance(sc: Scenario, plant) -> float:
    nom = sc.extended_plant
    per = plant.to_extended() if isinstance(plant, LinearPlantSS) else plant
    variables = nom.input_names
    dg = sc.perturbation.get("distance_grid", {})
    count = dg.get("count", 5 if len(variables) <= 5 else 3)
    lo, hi = dg.get("lower", -1.0), dg.get("upper", 1.0)
    grid = CompactGrid.box([lo] * len(variables), [hi] * len(variables), count)
    return weak_ck_semimetric(nom.function_exprs(), per.function_exprs(), 1, grid, variables)


def run_sample(sc: Scenario, index: int) -> dict:
    plant, summary = perturbed_plant(sc, index)
    res = evaluate_loop(sc.closed_loop(plant), sc.initial_conditions(), sc.sim,
                        sc.properties)
    rec = {"index": index, "seed": [sc.seed, index], "distance": _distance(sc, plant),
           "perturbation": summary}
    rec.update(res.to_json(sc.properties))
    return _clean(rec)


@lru_cache(maxsize=4)
def _scenario_from_canonical(text: str) -> Scenario:
    return Scenario.from_dict(json.loads(text))


def _worker(args: tuple[str, int]) -> dict:
    text, index = args
    return run_sample(_scenario_from_canonical(text), index)


@dataclass(eq=False)
class RobustnessReport:
    data: dict

    @property
    def aggregate(self) -> dict:
        return self.data["aggregate"]

    @property
    def samples(self) -> list[dict]:
        return self.data["samples"]

    def to_json_text(self) -> str:
        return json.dumps(self.data, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _aggregate(sc: Scenario, samples: list[dict]) -> dict:
    kinds = [p.kind for p in sc.properties]
    all_stable = all(s["stable"] for s in samples)
    per_prop = []
    for i, kind in enumerate(kinds):
        vals = [s["properties"][i] for s in samples]
        metrics = [v["metric"] for v in vals if v["metric"] is not None]
        per_prop.append({
            "kind": kind,
            "all_hold": all(s["stable"] and v["holds"] for s, v in zip(samples, vals)),
            "n_vacuous": sum(1 for v in vals if v["vacuous"]),
            "worst_metric": max(metrics) if metrics else None,
        })
    failures = [s["index"] for s in samples
                if not (s["stable"] and s["properties"][0]["holds"])]
    dists = [s["distance"] for s in samples]
    return {
        "all_stable": all_stable,
        "all_property": bool(per_prop[0]["all_hold"]),
        "properties": per_prop,
        "failure_indices": failures,
        "max_distance": max(dists) if dists else None,
        "worst_tail_norm": max((s["max_tail_norm"] for s in samples
                                if s["max_tail_norm"] is not None), default=None),
        "conclusion": ("no violation found within the sampled radius" if not failures
                       else f"{len(failures)} of {len(samples)} samples violate the property"),
    }


def _map_samples(sc: Scenario, indices: Sequence[int], jobs: int) -> list[dict]:
    if jobs <= 1 or len(indices) <= 1:
        return [run_sample(sc, i) for i in indices]
    text = canonical_json(sc.raw)
    with ProcessPoolExecutor(max_workers=min(jobs, len(indices))) as pool:
        out = list(pool.map(_worker, [(text, i) for i in indices]))
    return sorted(out, key=lambda r: r["index"])


def _perturbation_json(sc: Scenario) -> dict:
    out = dict(sc.perturbation)
    if out["kind"] == "trig-ball" and out.get("epsilon", 0) > 0:
        delta, K = _trig_setup(sc)
        out["delta"] = delta
        out["grid_points"] = int(K.points.shape[0])
    return out


def run_sweep(sc: Scenario, n_samples: int, seed: int | None = None, jobs: int = 1,
              nominal: LoopResult | None = None) -> RobustnessReport:
    """Evaluate ``n_samples`` seeded perturbations of the scenario.

    The report is a pure function of (scenario, seed): samples draw from
    per-index substreams and are merged by index whatever ``jobs`` is.
    """
    if n_samples < 1:
        raise ScenarioError("n_samples must be >= 1")
    if seed is not None and seed != sc.seed:
        raw = copy.deepcopy(sc.raw)
        raw["seed"] = int(seed)
        sc = Scenario.from_dict(raw)
    nom = run_nominal(sc) if nominal is None else nominal
    samples = _map_samples(sc, range(n_samples), jobs)
    data = {
        "scenario": sc.name,
        "scenario_digest": sc.digest,
        "seed": sc.seed,
        "n_samples": n_samples,
        "simulation": sc.sim.to_json(),
        "perturbation": _perturbation_json(sc),
        "nominal": nom.to_json(sc.properties),
        "samples": samples,
        "aggregate": _aggregate(sc, samples),
    }
    return RobustnessReport(_clean(data))


# ---------------------------------------------------------------------------
# counterexample

EQ29_PLANT = {
    "kind": "expr", "n_w": 2, "n_p": 1, "n_u": 1,
    "s": ["w2", "-w1"], "f_p": ["w1 + u1"], "h_p": ["x1"], "h_e": ["x1"],
}


def counterexample_scenario(epsilon: float = 0.2, N: int = 3, seed: int = 0,
                            regulator: dict | None = None, horizon: float | None = None,
                            rtol: float = 1e-10, atol: float = 1e-12,
                            tol: float = 1e-3) -> Scenario:
    """Rotation exosystem with ``w(0) = (0, 1)`` and plant ``x' = q(w) + w1 + u``, ``e = x``.

    ``q`` is the lift of a trigonometric polynomial sampled from the ball of
    radius ``delta_for_ball(epsilon, N, unit disk)``.  The default regulator
    is the Linear Regulator with internal-model frequencies ``{0, 1/(2 pi)}``.
    """
    if N < 1:
        raise ScenarioError("N must be >= 1")
    if not epsilon > 0:
        raise ScenarioError("epsilon must be positive")
    reg = regulator if regulator is not None else {
        "synthesize": "linear-regulator", "internal_model": {"freqs": [1 / TWO_PI]}}
    raw = {
        "name": "counterexample",
        "seed": int(seed),
        "plant": dict(EQ29_PLANT),
        "regulator": reg,
        "initial_sets": {"w": [0.0, 1.0], "x": [0.0]},
        "simulation": {"horizon": horizon if horizon is not None else 50 * TWO_PI,
                       "rtol": rtol, "atol": atol, "period": TWO_PI},
        "property": [
            {"kind": "P_T", "T": TWO_PI, "d": 1, "tol": tol},
            {"kind": "P_0", "tol": 1e-6},
            {"kind": "P_nu", "freqs": [1 / TWO_PI], "tol": tol},
        ],
        "perturbation": {"kind": "trig-ball", "epsilon": float(epsilon), "N": int(N)},
    }
    return Scenario.from_dict(raw)


def _embedded_d(sc: Scenario) -> int:
    reg = sc.regulator
    if isinstance(reg, LinearIMRegulator):
        ev = np.linalg.eigvals(reg.phi)
        return int(np.sum(ev.imag > 1e-9))
    return 0


def _extras_row(sc: Scenario, cl: ClosedLoopSystem, res: LoopResult,
                sigma: TrigPolynomial | None, d: int, K: int) -> dict:
    row: dict = {"phi_norm": sigma.norm() if sigma is not None else 0.0}
    if sigma is not None:
        row["sigma_harmonics"] = [abs(sigma.alpha)] + [
            math.hypot(b, g) for b, g in zip(sigma.beta, sigma.gamma)]
    if not res.stable or not res.steady_states:
        return row
    ss = res.steady_states[0]
    e = np.asarray(cl.error_fn(ss.states.T))[0]
    row["sup_e"] = float(np.abs(e).max())
    row["periodic"] = ss.verdict
    if ss.period is None:
        return row
    T = ss.period
    m = ss.samples_per_period
    per = e[-m - 1:-1]
    cs = [abs(fourier_coeff(per, T, k)) for k in range(K + 1)]
    row["abs_c"] = cs
    # amplitude of harmonic k is 2|c_k|/T (k >= 1) and |c_0|/T at k = 0
    row["e_harmonics"] = [cs[0] / T] + [2 * c / T for c in cs[1:]]
    row["higher_harmonic_energy"] = float(sum((2 * c / T) ** 2 / 2 for c in cs[d + 1:]))
    return row


def _counterexample_sample(sc: Scenario, index: int,
                           sigma: TrigPolynomial | None = None) -> tuple[dict, dict]:
    d = _embedded_d(sc)
    N = int(sc.perturbation["N"])
    delta, Kgrid = _trig_setup(sc)
    if sigma is None:
        sigma = sample_trig_ball(N, delta, sc.seed, index=index)
    lift = lift_to_c0(sigma, Kgrid)
    plant = _add_to_component(sc.extended_plant, 0, lift.expr)
    cl = sc.closed_loop(plant)
    res = evaluate_loop(cl, sc.initial_conditions(), sc.sim, sc.properties, keep=True)
    rec = {"index": index, "seed": [sc.seed, index], "distance": _distance(sc, plant),
           "perturbation": {"kind": "trig-ball", "sigma": sigma.coeffs,
                            "phi_norm": sigma.norm(), "sup_K_c_sigma": lift.sup_on_grid}}
    rec.update(res.to_json(sc.properties))
    row = _extras_row(sc, cl, res, sigma, d, max(2 * max(N, sigma.N) + 1, d + 2))
    row["index"] = index
    return _clean(rec), _clean(row)


def _cx_worker(args: tuple[str, int]) -> tuple[dict, dict]:
    text, index = args
    return _counterexample_sample(_scenario_from_canonical(text), index)


def run_counterexample(epsilon_star: float = 0.2, N: int = 3, n_samples: int = 20,
                       seed: int = 0, regulator: dict | None = None,
                       sigmas: Sequence[TrigPolynomial] | None = None,
                       horizon: float | None = None, rtol: float = 1e-10,
                       atol: float = 1e-12, jobs: int = 1
                       ) -> tuple[RobustnessReport, list[dict]]:
    """Counterexample pipeline: nominal check, sampled plants, dichotomy table.

    With ``sigmas`` the given trigonometric polynomials replace the sampled
    ones (``n_samples`` is then ignored).

    Raises
    ------
    NominalInstabilityError
        If the regulator does not stabilize the unperturbed loop.
    """
    sc = counterexample_scenario(epsilon_star, N, seed, regulator, horizon, rtol, atol)
    nom = evaluate_loop(sc.closed_loop(), sc.initial_conditions(), sc.sim, sc.properties,
                        keep=True)
    if not nom.stable:
        raise NominalInstabilityError(f"nominal loop is not stable: {nom.failure}")
    if sigmas is None:
        indices = list(range(n_samples))
        if jobs > 1 and n_samples > 1:
            text = canonical_json(sc.raw)
            with ProcessPoolExecutor(max_workers=min(jobs, n_samples)) as pool:
                pairs = list(pool.map(_cx_worker, [(text, i) for i in indices]))
        else:
            pairs = [_counterexample_sample(sc, i) for i in indices]
    else:
        pairs = [_counterexample_sample(sc, i, s) for i, s in enumerate(sigmas)]
    samples = [p[0] for p in pairs]
    extras = [p[1] for p in pairs]
    d = _embedded_d(sc)
    data = {
        "scenario": sc.name, "scenario_digest": sc.digest, "seed": sc.seed,
        "n_samples": len(samples), "simulation": sc.sim.to_json(),
        "perturbation": _perturbation_json(sc), "embedded_d": d,
        "nominal": nom.to_json(sc.properties), "samples": samples,
        "aggregate": _aggregate(sc, samples), "extras": extras,
    }
    return RobustnessReport(_clean(data)), extras


# ---------------------------------------------------------------------------
# dimension probe

def modal_matrix(N: int) -> np.ndarray:
    """Block-diagonal generator: bias, then a rotation block per frequency 1..N."""
    A = np.zeros((2 * N + 1, 2 * N + 1))
    for n in range(1, N + 1):
        i = 2 * n - 1  # (cos, sin) states of frequency n
        A[i, i + 1] = -n
        A[i + 1, i] = n
    return A


@dataclass(frozen=True)
class ProbeResult:
    m: int
    N: int
    delta: float
    residuals: tuple[float, ...]
    note: str = PROBE_NOTE

    @property
    def max_residual(self) -> float:
        return max(self.residuals)

    def to_json(self) -> dict:
        return {"m": self.m, "N": self.N, "delta": self.delta,
                "residuals": list(self.residuals), "max_residual": self.max_residual,
                "note": self.note}


def dimension_probe(m: int, N: int, delta: float, n_signals: int = 20, seed: int = 0,
                    n_points: int = 512,
                    sigmas: Sequence[TrigPolynomial] | None = None) -> ProbeResult:
    """Fit ``v = C z`` with ``z' = A_m z`` to sampled trigonometric signals.

    ``A_m`` is the leading ``m x m`` block of :func:`modal_matrix` and
    ``z(0)`` is the vector of ones; ``C`` is a least-squares fit on
    ``n_points`` samples of one period.  Residuals are RMS values.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    A = modal_matrix(max(N, (m + 1) // 2))[:m, :m]
    t = TWO_PI * np.arange(n_points) / n_points
    z0 = np.ones(m)
    Z = np.array([expm(A * tk) @ z0 for tk in t])  # (n_points, m)
    if sigmas is None:
        sigmas = [sample_trig_ball(N, delta, seed, index=i) for i in range(n_signals)]
    res = []
    for s in sigmas:
        v = s(t)
        C, *_ = np.linalg.lstsq(Z, v, rcond=None)
        res.append(float(np.sqrt(np.mean((Z @ C - v) ** 2))))
    return ProbeResult(m=m, N=N, delta=float(delta), residuals=tuple(res))
