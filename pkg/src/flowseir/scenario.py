"""Scenario documents, the built-in four-city network, and run output files.

Scenario documents are YAML mappings (``format_version: 1``)::

    format_version: 1
    nodes:                       # one entry per sub-population
      - {label: ATL, population: 500000.0}
    flow:
      matrix: [[0, 15], [15, 0]] # matrix[i][j] = travellers from node j into node i per step
      scale: 100.0               # multiplies every matrix (default 1)
      overrides:                 # optional per-step replacements of the matrix
        - {step: 10, matrix: [[0, 0], [15, 0]]}
    params: {beta: 0.5, sigma: 0.19, delta: 0.34, p_x: 0.005, h: 0.14}   # scalars or per-node lists
    initial: {s: [...], e: [...], x: [...], r: [...]}
    control: {kind: none}        # or {kind: proportional, eta: 10}
                                 # or {kind: binary, shutdown_step: 0, reopen: {rule: threshold, value: 0.001}}
    vaccine: null                # or {start_step: 500, rate: 0.001, s_bar_floor: 0.01}
    run: {horizon: 20000, extinction_threshold: 0.0001, strict: true}

Unknown keys are rejected.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .analysis import DEFAULT_EXTINCTION, EquilibriumReport
from .control import BINARY, NONE, PROPORTIONAL, ControlPolicy, ReopenRule, VaccinePolicy
from .errors import ScenarioError
from .model import CompartmentState, Scenario, SpreadParams, Trajectory, validate_params
from .network import FlowSchedule

FORMAT_VERSION = 1

FOUR_CITY_LABELS = ("ATL", "LAX", "ORD", "DFW")
FOUR_CITY_POPULATIONS = (0.5e6, 4e6, 2.7e6, 1.3e6)
FOUR_CITY_FLIGHTS = (
    (0, 15, 23, 19),
    (15, 0, 22, 21),
    (23, 22, 0, 23),
    (19, 21, 23, 0),
)
FOUR_CITY_PARAMS = {"beta": 0.5, "sigma": 0.19, "delta": 0.34, "p_x": 0.005, "h": 0.14}
FOUR_CITY_INITIAL = {
    "s": (1.0, 0.99, 1.0, 1.0),
    "e": (0.0, 0.005, 0.0, 0.0),
    "x": (0.0, 0.005, 0.0, 0.0),
    "r": (0.0, 0.0, 0.0, 0.0),
}
FOUR_CITY_HORIZON = 20000

RUN_COLUMNS = ("k", "node", "s", "e", "x", "r", "theta", "gamma_effective")


@dataclass(frozen=True)
class RunSettings:
    horizon: int = 1000
    extinction_threshold: float = DEFAULT_EXTINCTION
    strict: bool = True


@dataclass
class LoadedScenario:
    scenario: Scenario
    policy: ControlPolicy = field(default_factory=ControlPolicy.none)
    vaccine: VaccinePolicy | None = None
    run: RunSettings = field(default_factory=RunSettings)


def builtin_four_city(xi: float = 100.0) -> Scenario:
    """ATL/LAX/ORD/DFW network with daily flight counts scaled by ``xi``; infection seeded in LAX."""
    if not xi > 0:
        raise ScenarioError(f"flow scale must be positive, got {xi!r}", field="flow.scale")
    n = len(FOUR_CITY_LABELS)
    p = FOUR_CITY_PARAMS
    return Scenario(
        N=np.array(FOUR_CITY_POPULATIONS),
        base_flows=FlowSchedule(np.array(FOUR_CITY_FLIGHTS, dtype=float)),
        params=SpreadParams.homogeneous(n, p["beta"], p["sigma"], p["delta"], p["p_x"], p["h"]),
        initial=CompartmentState(*(np.array(FOUR_CITY_INITIAL[c]) for c in "sexr")),
        labels=FOUR_CITY_LABELS,
        xi=float(xi),
    )


def builtin_four_city_loaded(xi: float = 100.0) -> LoadedScenario:
    return LoadedScenario(builtin_four_city(xi), run=RunSettings(horizon=FOUR_CITY_HORIZON))


# --------------------------------------------------------------------------
# parsing helpers

_TOP_KEYS = {"format_version", "nodes", "flow", "params", "initial", "control", "vaccine", "run"}


def _check_keys(obj, allowed, path, required=()):
    if not isinstance(obj, dict):
        raise ScenarioError(f"expected a mapping, got {type(obj).__name__}", field=path)
    unknown = sorted(set(obj) - set(allowed), key=str)
    if unknown:
        raise ScenarioError(f"unknown field(s) {', '.join(map(str, unknown))}", field=path)
    missing = [k for k in required if k not in obj]
    if missing:
        raise ScenarioError(f"missing field(s) {', '.join(missing)}", field=path)


def _number(value, path, integer=False):
    if isinstance(value, bool):
        raise ScenarioError(f"expected a number, got {value!r}", field=path)
    if isinstance(value, str):
        try:
            value = float(value)
        except ValueError:
            raise ScenarioError(f"expected a number, got {value!r}", field=path) from None
    if not isinstance(value, (int, float)):
        raise ScenarioError(f"expected a number, got {value!r}", field=path)
    if integer:
        if int(value) != value:
            raise ScenarioError(f"expected an integer, got {value!r}", field=path)
        return int(value)
    value = float(value)
    if not np.isfinite(value):
        raise ScenarioError(f"expected a finite number, got {value!r}", field=path)
    return value


def _vector(value, n, path):
    if isinstance(value, list):
        if len(value) != n:
            raise ScenarioError(f"expected {n} values, got {len(value)}", field=path)
        return np.array([_number(v, f"{path}[{i}]") for i, v in enumerate(value)])
    return np.full(n, _number(value, path))


def _matrix(value, n, path):
    if not isinstance(value, list) or len(value) != n:
        raise ScenarioError(f"expected a {n}x{n} matrix", field=path)
    rows = []
    for i, row in enumerate(value):
        if not isinstance(row, list) or len(row) != n:
            raise ScenarioError(f"expected {n} entries", field=f"{path}[{i}]")
        rows.append([_number(v, f"{path}[{i}][{j}]") for j, v in enumerate(row)])
    return np.array(rows, dtype=float)


def _field_scope(path, fn, *args):
    try:
        return fn(*args)
    except ScenarioError as exc:
        if exc.field:
            raise
        raise ScenarioError(str(exc), field=path) from None


def _parse_control(doc):
    if doc is None:
        return ControlPolicy.none()
    _check_keys(doc, {"kind", "eta", "shutdown_step", "reopen"}, "control", required=("kind",))
    kind = doc["kind"]
    if kind == NONE:
        return ControlPolicy.none()
    if kind == PROPORTIONAL:
        if "eta" not in doc:
            raise ScenarioError("missing field eta", field="control")
        return ControlPolicy.proportional(_number(doc["eta"], "control.eta"))
    if kind == BINARY:
        reopen = doc.get("reopen")
        if reopen is None:
            raise ScenarioError("missing field reopen", field="control")
        _check_keys(reopen, {"rule", "value"}, "control.reopen", required=("rule",))
        rule = reopen["rule"]
        if rule == "zero":
            rr = ReopenRule.zero(_number(reopen["value"], "control.reopen.value")) if "value" in reopen \
                else ReopenRule.zero()
        elif rule == "threshold":
            if "value" not in reopen:
                raise ScenarioError("threshold rule needs a value", field="control.reopen")
            rr = ReopenRule.threshold(_number(reopen["value"], "control.reopen.value"))
        else:
            raise ScenarioError(f"unknown reopen rule {rule!r}", field="control.reopen.rule")
        if "shutdown_step" not in doc:
            raise ScenarioError("missing field shutdown_step", field="control")
        return ControlPolicy.binary(_number(doc["shutdown_step"], "control.shutdown_step", integer=True), rr)
    raise ScenarioError(f"unknown control kind {kind!r}", field="control.kind")


def _parse_vaccine(doc):
    if doc is None:
        return None
    _check_keys(doc, {"start_step", "rate", "s_bar_floor"}, "vaccine")
    kw = {}
    if "start_step" in doc:
        kw["start_step"] = _number(doc["start_step"], "vaccine.start_step", integer=True)
    for key in ("rate", "s_bar_floor"):
        if key in doc:
            kw[key] = _number(doc[key], f"vaccine.{key}")
    return VaccinePolicy(**kw)


def _parse_run(doc):
    if doc is None:
        return RunSettings()
    _check_keys(doc, {"horizon", "extinction_threshold", "strict"}, "run")
    kw = {}
    if "horizon" in doc:
        kw["horizon"] = _number(doc["horizon"], "run.horizon", integer=True)
        if kw["horizon"] < 0:
            raise ScenarioError("horizon must be >= 0", field="run.horizon")
    if "extinction_threshold" in doc:
        kw["extinction_threshold"] = _number(doc["extinction_threshold"], "run.extinction_threshold")
        if not kw["extinction_threshold"] > 0:
            raise ScenarioError("extinction threshold must be positive", field="run.extinction_threshold")
    if "strict" in doc:
        if not isinstance(doc["strict"], bool):
            raise ScenarioError(f"expected true/false, got {doc['strict']!r}", field="run.strict")
        kw["strict"] = doc["strict"]
    return RunSettings(**kw)


def parse_document(doc: dict, validate: bool = True) -> LoadedScenario:
    """Build a validated scenario from an already-parsed document mapping."""
    _check_keys(doc, _TOP_KEYS, "<root>", required=("nodes", "flow", "params", "initial"))
    version = doc.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ScenarioError(f"unsupported format_version {version!r}", field="format_version")

    nodes = doc["nodes"]
    if not isinstance(nodes, list) or not nodes:
        raise ScenarioError("expected a non-empty list", field="nodes")
    labels, pops = [], []
    for i, node in enumerate(nodes):
        _check_keys(node, {"label", "population"}, f"nodes[{i}]", required=("label", "population"))
        labels.append(str(node["label"]))
        pop = _number(node["population"], f"nodes[{i}].population")
        if not pop > 0:
            raise ScenarioError(f"population must be positive, got {pop!r}", field=f"nodes[{i}].population")
        pops.append(pop)
    if len(set(labels)) != len(labels):
        raise ScenarioError("node labels must be unique", field="nodes")
    n = len(labels)

    flow = doc["flow"]
    _check_keys(flow, {"matrix", "scale", "overrides"}, "flow", required=("matrix",))
    default = _matrix(flow["matrix"], n, "flow.matrix")
    xi = _number(flow.get("scale", 1.0), "flow.scale")
    overrides = {}
    for idx, item in enumerate(flow.get("overrides") or []):
        path = f"flow.overrides[{idx}]"
        _check_keys(item, {"step", "matrix"}, path, required=("step", "matrix"))
        k = _number(item["step"], f"{path}.step", integer=True)
        if k < 0 or k in overrides:
            raise ScenarioError(f"override step {k} is negative or repeated", field=f"{path}.step")
        overrides[k] = _matrix(item["matrix"], n, f"{path}.matrix")
    schedule = _field_scope("flow", FlowSchedule, default, overrides)

    params = doc["params"]
    _check_keys(params, {"beta", "sigma", "delta", "p_x", "h"}, "params",
                required=("beta", "sigma", "delta", "p_x", "h"))
    spread = SpreadParams(
        *(_vector(params[k], n, f"params.{k}") for k in ("beta", "sigma", "delta", "p_x")),
        _number(params["h"], "params.h"),
    )

    init = doc["initial"]
    _check_keys(init, {"s", "e", "x", "r"}, "initial", required=("s", "e", "x", "r"))
    initial = CompartmentState(*(_vector(init[c], n, f"initial.{c}") for c in "sexr"))

    scenario = _field_scope("flow", Scenario, np.array(pops), schedule, spread, initial, tuple(labels), xi)
    loaded = LoadedScenario(scenario, _parse_control(doc.get("control")), _parse_vaccine(doc.get("vaccine")),
                            _parse_run(doc.get("run")))
    if validate:
        report = validate_params(scenario, loaded.run.horizon)
        if not report.passed:
            first = report.errors[0]
            raise ScenarioError(f"{first}\n{report}", field=first.field, report=report)
    return loaded


def load_scenario(source, validate: bool = True) -> LoadedScenario:
    """Load a scenario from a path or from YAML text."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).exists()):
        text = Path(source).read_text()
    else:
        text = source
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"could not parse scenario document: {exc}") from None
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a mapping", field="<root>")
    return parse_document(doc, validate=validate)


# --------------------------------------------------------------------------
# serialisation

def _listify(arr):
    return [float(v) for v in np.asarray(arr).ravel()]


def _matrix_list(mat):
    return [[float(v) for v in row] for row in np.asarray(mat)]


def _compact(vec):
    vals = _listify(vec)
    return vals[0] if all(v == vals[0] for v in vals) else vals


def _control_doc(policy: ControlPolicy):
    if policy.kind == PROPORTIONAL:
        return {"kind": PROPORTIONAL, "eta": float(policy.eta)}
    if policy.kind == BINARY:
        return {"kind": BINARY, "shutdown_step": int(policy.shutdown_step),
                "reopen": {"rule": policy.reopen.kind, "value": float(policy.reopen.value)}}
    return {"kind": NONE}


def to_document(loaded: LoadedScenario | Scenario) -> dict:
    if isinstance(loaded, Scenario):
        loaded = LoadedScenario(loaded)
    sc = loaded.scenario
    flow = {"matrix": _matrix_list(sc.base_flows.default), "scale": float(sc.xi)}
    if sc.base_flows.overrides:
        flow["overrides"] = [{"step": k, "matrix": _matrix_list(m)} for k, m in sc.base_flows.overrides.items()]
    p = sc.params
    vac = loaded.vaccine
    return {
        "format_version": FORMAT_VERSION,
        "nodes": [{"label": lab, "population": float(pop)} for lab, pop in zip(sc.labels, sc.N)],
        "flow": flow,
        "params": {"beta": _compact(p.beta), "sigma": _compact(p.sigma), "delta": _compact(p.delta),
                   "p_x": _compact(p.p_x), "h": float(p.h)},
        "initial": {c: _listify(getattr(sc.initial, c)) for c in "sexr"},
        "control": _control_doc(loaded.policy),
        "vaccine": None if vac is None else {"start_step": int(vac.start_step), "rate": float(vac.rate),
                                             "s_bar_floor": float(vac.s_bar_floor)},
        "run": {"horizon": int(loaded.run.horizon),
                "extinction_threshold": float(loaded.run.extinction_threshold),
                "strict": bool(loaded.run.strict)},
    }


def dump_scenario(loaded: LoadedScenario | Scenario) -> str:
    return yaml.safe_dump(to_document(loaded), sort_keys=False, default_flow_style=None, width=100)


# --------------------------------------------------------------------------
# run output

def _fmt(value) -> str:
    return repr(float(value))


def summary_dict(traj: Trajectory, report: EquilibriumReport, loaded: LoadedScenario | None = None) -> dict:
    out = {"horizon": traj.horizon, "nodes": list(traj.labels), "report": report.as_dict()}
    if loaded is not None:
        out["scenario"] = to_document(loaded)
    out["events"] = [{"step": ev.step, "kind": ev.kind, "message": ev.message} for ev in traj.events]
    out["warnings"] = [ev.message for ev in traj.events if ev.kind == "warning"]
    return out


def summary_path(destination) -> Path:
    dest = Path(destination)
    return dest.with_name(dest.stem + ".summary.json")


def write_run_output(traj: Trajectory, report: EquilibriumReport, destination,
                     loaded: LoadedScenario | None = None) -> tuple[Path, Path]:
    """Write the per-step table as CSV and a JSON summary next to it.

    Returns ``(table_path, summary_path)``.
    """
    dest = Path(destination)
    side = summary_path(dest)
    with open(dest, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RUN_COLUMNS)
        n = traj.n
        for k in range(traj.horizon + 1):
            if k < traj.horizon:
                theta, gam = _fmt(traj.thetas[k]), traj.gammas_effective[k]
            else:
                theta, gam = "", None
            for i in range(n):
                writer.writerow((
                    k, traj.labels[i],
                    _fmt(traj.s[k, i]), _fmt(traj.e[k, i]), _fmt(traj.x[k, i]), _fmt(traj.r[k, i]),
                    theta, "" if gam is None else _fmt(gam[i]),
                ))
    with open(side, "w") as fh:
        json.dump(summary_dict(traj, report, loaded), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return dest, side


def read_run_table(path) -> dict[str, np.ndarray]:
    """Parse a run table back into per-column arrays (``node`` stays a string array)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    cols = {}
    for c in RUN_COLUMNS:
        vals = [row[c] for row in rows]
        if c == "node":
            cols[c] = np.array(vals)
        elif c == "k":
            cols[c] = np.array([int(v) for v in vals])
        else:
            cols[c] = np.array([float(v) if v != "" else np.nan for v in vals])
    return cols
