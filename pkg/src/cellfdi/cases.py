"""Scenario and case files, and the case runner.

Scenario files are JSON objects::

    {
      "duration": 300,              # s
      "dt": 0.01,                   # s
      "meas_noise_var": 1e-3,       # K^2
      "seed": 0,
      "current": 50.0,              # A, or {"times": [...], "currents": [...]}
                                    # or {"csv": "profile.csv"} (relative to the file)
      "initial_temp": null,         # K, scalar or one value per node; null = ambient
      "fault_units": "direct",      # or "watts"
      "sensors": [7, 19],           # 1-based sensor nodes, one per zone
      "zones": [[1, 2, ...], [13, ...]],   # 1-based nodes per zone
      "plant_scale": {"k": 1.4},    # optional multiplicative plant perturbation
      "faults": [
        {"kind": "internal", "shape": "pulse", "node": 18, "footprint": "kernel",
         "magnitude": 0.3, "t_start": 100, "t_end": 110}
      ]
    }

Fault keys mirror :class:`~cellfdi.simulator.FaultSpec`.  ``plant_scale``
keys are ``k``, ``h_o``, ``rho``, ``Cp``, ``gamma_x0``, ``gamma_M``,
``gamma_y0`` and ``gamma_N``.

A case file holds ``{"version": 1, "defaults": {...}, "cases": [...]}``.
Each case is a scenario (missing keys come from ``defaults``) plus:

``name``
    ``case1`` ... ``case12``, ``caseI`` ... ``caseV``.
``sensor_setup``
    ``two_sensor``, ``single_sensor`` or ``both`` (run both and compare).
``single_sensor``
    ``{"sensors": [14]}``: placement used by the single-sensor run.
``filter``
    ``{"q_scale": 100, "s_own": 0.1, "s_other": 0.001, "mode": "steady_state"}``.
``thresholds``
    per-zone beta in K.
``initial_error``
    filter start offset from the true initial state, K.
``expected``
    list of checks, each with a ``provenance`` in
    ``paper_table2 | paper_table3 | property``:

    * ``{"check": "false_alarms", "value": [0, 0]}``
    * ``{"check": "false_alarms_min", "value": 1}``: every zone at least ``value``
    * ``{"check": "detected", "zone": 2, "published_time": 1.5}``; the bound is
      ``3 * published_time`` unless ``"bound"`` is given
    * ``{"check": "missed", "zone": 1}``
    * ``{"check": "silent", "zone": 1}``: no alarm while only other zones are faulty
    * ``{"check": "isolated", "zone": 2}``
    * ``{"check": "order", "zones": [2, 1]}``: detection instants in this order
    * ``{"check": "two_not_slower"}``: two-sensor detection no later than single
    * ``"setup"`` selects ``two_sensor`` (default) or ``single_sensor``.
``reference``
    published values shown in the report but not checked.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .filterbank import DetectorConfig, DiagnosisReport, design_bank, detect, run_bank
from .params import CellConfig
from .placement import Partition, build_E
from .simulator import CurrentProfile, FaultSpec, ScenarioError, ScenarioSpec, Trajectory, simulate
from .thermal import LumpedModel

PROVENANCE = ("paper_table2", "paper_table3", "property")
SETUPS = ("two_sensor", "single_sensor", "both")
TIME_FACTOR = 3.0
PLANT_KEYS = {
    "k": "conductivity_k", "h_o": "h_transfer_ho", "rho": "density_rho",
    "Cp": "heat_capacity_Cp", "gamma_x0": "gamma_x0", "gamma_M": "gamma_M",
    "gamma_y0": "gamma_y0", "gamma_N": "gamma_N",
}
FAULT_KEYS = {"kind", "shape", "node", "magnitude", "t_start", "t_end", "ramp_rate",
              "zone", "footprint", "kernel_weights"}
SCENARIO_KEYS = {"duration", "dt", "meas_noise_var", "seed", "current", "initial_temp",
                 "fault_units", "sensors", "zones", "plant_scale", "faults", "description"}
CASE_KEYS = SCENARIO_KEYS | {"name", "sensor_setup", "single_sensor", "filter", "thresholds",
                             "initial_error", "expected", "reference"}


class CaseError(ValueError):
    pass


@dataclass
class ScenarioDocument:
    """A parsed scenario file: the simulation spec plus its sensor layout."""

    scenario: ScenarioSpec
    sensors: list
    zones: list
    plant_scale: dict = field(default_factory=dict)
    description: str = ""

    def partition(self, n_nodes: int) -> Partition:
        return Partition.from_zones(self.zones, self.sensors, n_nodes)

    def models(self, nominal: LumpedModel) -> tuple[LumpedModel, LumpedModel]:
        """(plant, filter model): both carry sensors and zonal E; the plant is perturbed."""
        return _attach(nominal, self.sensors, self.zones, self.plant_scale)


def _attach(nominal, sensors, zones, plant_scale):
    n = nominal.n_states
    partition = Partition.from_zones(zones, sensors, n)
    for i, (s, zone) in enumerate(zip(partition.sensor_node, partition.zones())):
        if s not in zone:
            raise CaseError(f"sensor {s} is not in zone {i + 1}")
    E = build_E(nominal.Mo, partition)
    filt = nominal.with_sensors(list(partition.sensor_node), E)
    plant = filt
    if plant_scale:
        changes = {}
        for key, factor in plant_scale.items():
            if key not in PLANT_KEYS:
                raise CaseError(f"unknown plant_scale key {key!r}")
            attr = PLANT_KEYS[key]
            changes[attr] = getattr(nominal.params, attr) * float(factor)
        plant = filt.with_params(replace(nominal.params, **changes))
    return plant, filt


def _current(value, base_dir):
    if isinstance(value, (int, float)):
        return CurrentProfile.constant(float(value))
    if isinstance(value, dict) and "csv" in value:
        path = Path(value["csv"])
        if not path.is_absolute() and base_dir is not None:
            path = Path(base_dir) / path
        return CurrentProfile.from_csv(path)
    if isinstance(value, dict) and "times" in value:
        return CurrentProfile(np.asarray(value["times"], float), np.asarray(value["currents"], float))
    raise CaseError(f"cannot read current profile {value!r}")


def parse_fault(d: dict) -> FaultSpec:
    unknown = set(d) - FAULT_KEYS
    if unknown:
        raise CaseError(f"unknown fault keys: {sorted(unknown)}")
    return FaultSpec(**d)


def parse_scenario(d: dict, base_dir=None, n_nodes: int | None = None) -> ScenarioDocument:
    """Build a scenario from a decoded JSON object (see module docstring)."""
    unknown = set(d) - CASE_KEYS
    if unknown:
        raise CaseError(f"unknown scenario keys: {sorted(unknown)}")
    try:
        faults = [parse_fault(f) for f in d.get("faults", [])]
        spec = ScenarioSpec(
            current_profile=_current(d.get("current", 0.0), base_dir),
            faults=faults,
            meas_noise_var=float(d.get("meas_noise_var", 0.0)),
            duration=float(d.get("duration", 10.0)),
            dt=float(d.get("dt", 0.01)),
            initial_temp=d.get("initial_temp"),
            rng_seed=int(d.get("seed", 0)),
            fault_units=d.get("fault_units", "direct"),
        )
    except (ScenarioError, TypeError) as exc:
        raise CaseError(str(exc)) from exc
    sensors = [int(s) for s in d.get("sensors", [])]
    zones = d.get("zones")
    if zones is None and sensors and n_nodes is not None:
        zones = [list(range(1, n_nodes + 1))] if len(sensors) == 1 else None
    if sensors and zones is None:
        raise CaseError("scenario lists sensors but no zones")
    return ScenarioDocument(spec, sensors, zones or [], dict(d.get("plant_scale", {})),
                            d.get("description", ""))


def load_scenario(path, n_nodes: int | None = None) -> ScenarioDocument:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CaseError(f"{path}: invalid JSON: {exc}") from exc
    return parse_scenario(d, path.parent, n_nodes)


@dataclass
class CaseDefinition:
    name: str
    raw: dict
    document: ScenarioDocument
    sensor_setup: str
    expected: list
    single_sensor: dict
    filter: dict
    thresholds: list
    initial_error: float
    reference: dict
    description: str = ""

    def setups(self) -> list[str]:
        return ["single_sensor", "two_sensor"] if self.sensor_setup == "both" else [self.sensor_setup]


def _case_from(d: dict, defaults: dict, base_dir=None) -> CaseDefinition:
    merged = copy.deepcopy(defaults)
    merged.update(copy.deepcopy(d))
    name = merged.get("name")
    if not name:
        raise CaseError("case without a name")
    setup = merged.get("sensor_setup", "two_sensor")
    if setup not in SETUPS:
        raise CaseError(f"{name}: sensor_setup must be one of {SETUPS}")
    expected = merged.get("expected", [])
    for e in expected:
        if e.get("provenance") not in PROVENANCE:
            raise CaseError(f"{name}: expectation {e} needs a provenance in {PROVENANCE}")
    doc = parse_scenario({k: v for k, v in merged.items() if k in SCENARIO_KEYS}, base_dir)
    return CaseDefinition(
        name=name, raw=merged, document=doc, sensor_setup=setup, expected=expected,
        single_sensor=merged.get("single_sensor", {"sensors": [14]}),
        filter=merged.get("filter", {}), thresholds=list(merged.get("thresholds", [0.3, 0.3])),
        initial_error=float(merged.get("initial_error", 0.0)),
        reference=merged.get("reference", {}), description=merged.get("description", ""),
    )


def load_cases(path=None) -> dict[str, CaseDefinition]:
    """Cases from ``path`` or the packaged case list."""
    if path is None:
        text = resources.files("cellfdi.data").joinpath("cases.json").read_text()
        base = None
    else:
        path = Path(path)
        text, base = path.read_text(), path.parent
    data = json.loads(text)
    if data.get("version") != 1:
        raise CaseError("case file version must be 1")
    defaults = data.get("defaults", {})
    out = {}
    for d in data["cases"]:
        case = _case_from(d, defaults, base)
        if case.name in out:
            raise CaseError(f"duplicate case {case.name}")
        out[case.name] = case
    return out


@dataclass
class CheckResult:
    description: str
    provenance: str
    passed: bool
    detail: str


@dataclass
class SetupRun:
    setup: str
    sensors: list
    trajectory: Trajectory
    report: DiagnosisReport


@dataclass
class CaseResult:
    case: CaseDefinition
    runs: dict
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def text(self) -> str:
        lines = [f"{self.case.name}: {self.case.description}", ""]
        for setup, run in self.runs.items():
            r = run.report
            lines.append(f"[{setup}] sensors {', '.join(map(str, run.sensors))}")
            lines.append(f"  convergence time (s): {_fmt_list(r.convergence_time)}")
            lines.append(f"  detection time (s):   {_fmt_list(r.detection_times)}")
            lines.append(f"  false alarms:         {', '.join(map(str, r.false_alarm_counts))}")
            lines.append(f"  cross alarms:         {', '.join(map(str, r.cross_alarm_counts))}")
            lines.append(f"  max |I| after 30 s:   {_fmt_list(_max_after(r, 30.0))}")
        if self.case.reference:
            lines += ["", "published reference (not checked):"]
            for k, v in self.case.reference.items():
                lines.append(f"  {k}: {v}")
        lines += ["", "checks:"]
        for c in self.checks:
            lines.append(f"  [{'PASS' if c.passed else 'FAIL'}] {c.description} "
                         f"({c.provenance}): {c.detail}")
        lines.append("")
        lines.append(f"result: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"


def _fmt_list(values):
    return ", ".join("n/a" if v is None else f"{v:.2f}" for v in values)


def _max_after(report, t0):
    mask = report.times >= t0
    if not mask.any():
        return [None] * report.innovations.shape[0]
    return [float(v) for v in np.abs(report.innovations[:, mask]).max(axis=1)]


def run_setup(case: CaseDefinition, nominal: LumpedModel, config: CellConfig, setup: str,
              seed: int | None = None, dt: float | None = None) -> SetupRun:
    doc = case.document
    if setup == "single_sensor":
        sensors = list(case.single_sensor["sensors"])
        zones = [list(range(1, nominal.n_states + 1))]
    else:
        sensors, zones = doc.sensors, doc.zones
    plant, filt = _attach(nominal, sensors, zones, doc.plant_scale)
    scenario = doc.scenario
    if seed is not None:
        scenario = replace(scenario, rng_seed=seed)
    if dt is not None:
        scenario = replace(scenario, dt=dt)
    traj = simulate(plant, scenario, config.electrical())
    fc = case.filter
    bank = design_bank(filt, q_scale=fc.get("q_scale", 100.0), s_own=fc.get("s_own", 0.1),
                       s_other=fc.get("s_other", 0.001), mode=fc.get("mode", "steady_state"))
    innov = run_bank(bank, filt, traj, traj.states[:, 0] + case.initial_error)
    beta = case.thresholds[: len(sensors)] if len(case.thresholds) >= len(sensors) else \
        [case.thresholds[0]] * len(sensors)
    report = detect(innov, DetectorConfig(beta), traj.times, traj.true_fault_signal)
    return SetupRun(setup, sensors, traj, report)


def evaluate_expectations(case: CaseDefinition, runs: dict) -> list[CheckResult]:
    out = []
    for e in case.expected:
        kind = e["check"]
        setup = e.get("setup", "two_sensor")
        prov = e["provenance"]
        if kind == "two_not_slower":
            out.append(_two_not_slower(runs, prov))
            continue
        if setup not in runs:
            out.append(CheckResult(f"{kind} [{setup}]", prov, False, "setup was not run"))
            continue
        r = runs[setup].report
        zone = e.get("zone", 1) - 1
        if kind == "false_alarms":
            want = list(e["value"])
            got = r.false_alarm_counts
            out.append(CheckResult(f"false alarms = {want} [{setup}]", prov, got == want, f"got {got}"))
        elif kind == "false_alarms_min":
            got = r.false_alarm_counts
            ok = all(c >= e["value"] for c in got)
            out.append(CheckResult(f"false alarms >= {e['value']} per zone [{setup}]", prov, ok,
                                   f"got {got}"))
        elif kind == "detected":
            bound = e.get("bound", TIME_FACTOR * e["published_time"] if "published_time" in e else None)
            t = r.detection_times[zone]
            ok = t is not None and (bound is None or t <= bound)
            ref = f", published {e['published_time']} s" if "published_time" in e else ""
            out.append(CheckResult(
                f"zone {zone + 1} detected" + (f" within {bound:g} s" if bound is not None else "")
                + f" [{setup}]", prov, ok,
                ("missed" if t is None else f"{t:.2f} s") + ref))
        elif kind == "missed":
            t = r.detection_times[zone]
            out.append(CheckResult(f"zone {zone + 1} missed [{setup}]", prov, t is None,
                                   "missed" if t is None else f"detected after {t:.2f} s"))
        elif kind == "silent":
            c = r.cross_alarm_counts[zone]
            out.append(CheckResult(f"zone {zone + 1} silent during other zones' faults [{setup}]",
                                   prov, c == 0, f"{c} alarm(s)"))
        elif kind == "isolated":
            ok = r.isolated(zone)
            out.append(CheckResult(f"zone {zone + 1} fault isolated [{setup}]", prov, ok,
                                   f"detection {r.detection_times[zone]}, cross alarms "
                                   f"{r.cross_alarm_counts}"))
        elif kind == "order":
            zs = [z - 1 for z in e["zones"]]
            inst = []
            for z in zs:
                t = r.detection_times[z]
                inst.append(None if t is None else r.fault_onsets[z][0] + t)
            ok = all(v is not None for v in inst) and all(a < b for a, b in zip(inst, inst[1:]))
            out.append(CheckResult(f"detection order zones {e['zones']} [{setup}]", prov, ok,
                                   f"instants {_fmt_list(inst)} s"))
        else:
            raise CaseError(f"{case.name}: unknown check {kind!r}")
    return out


def _two_not_slower(runs, prov):
    if "two_sensor" not in runs or "single_sensor" not in runs:
        return CheckResult("two-sensor detection no later than single", prov, False, "needs both setups")
    single = runs["single_sensor"].report.detection_times[0]
    two = [t for t in runs["two_sensor"].report.detection_times if t is not None]
    two = min(two) if two else None
    if single is None or two is None:
        return CheckResult("two-sensor detection no later than single", prov, True,
                           f"single {single}, two {two}: not both detected")
    return CheckResult("two-sensor detection no later than single", prov, two <= single,
                       f"single {single:.2f} s, two {two:.2f} s")


def run_case(case: CaseDefinition, nominal: LumpedModel, config: CellConfig,
             seed: int | None = None, dt: float | None = None) -> CaseResult:
    runs = {s: run_setup(case, nominal, config, s, seed, dt) for s in case.setups()}
    return CaseResult(case, runs, evaluate_expectations(case, runs))
