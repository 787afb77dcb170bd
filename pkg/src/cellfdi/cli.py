"""Command-line front end.

Commands::

    cellfdi build      --params P --grid 4x6 --out DIR
    cellfdi analyze    --model M --sensors 7,19 [--zones "1-12;13-24"]
    cellfdi place      --model M --k 2 [--exhaustive-limit 10 --restarts 32 --contiguous on]
    cellfdi simulate   --model M --scenario S.json
    cellfdi diagnose   --model M --scenario S.json [--trajectory T.csv] [--thresholds F | --far-target p]
    cellfdi run-case   case2
    cellfdi run-all-cases

Without ``--model`` the model is built from ``--params`` (default: the
packaged parameter file) on ``--grid``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .artifact import ArtifactError, load_model, save_model
from .cases import CaseError, load_cases, load_scenario, run_case
from .diagnosability import certify
from .filterbank import (
    DetectorConfig,
    FilterDesignError,
    calibrate_thresholds,
    design_bank,
    detect,
    read_thresholds,
    run_bank,
    write_thresholds,
)
from .params import ParamFileError, default_config, load_params
from .placement import (
    Partition,
    PlacementInfeasible,
    SearchConfig,
    build_E,
    nearest_sensor_partition,
    optimize_placement,
    optimize_single_sensor,
)
from .simulator import ScenarioError, Trajectory, simulate
from .thermal import ModelError

log = logging.getLogger("cellfdi")

PUBLISHED_NODES = {2: [7, 19], 1: [14]}


class UsageError(Exception):
    pass


def _grid(text):
    try:
        nx, ny = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like NXxNY, got {text!r}")
    if nx < 1 or ny < 1:
        raise argparse.ArgumentTypeError("grid sizes must be >= 1")
    return nx, ny


def _on_off(text):
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}")


def _zones(text):
    """``"1-12;13-24"`` or ``"1,2,3;4,5"``."""
    zones = []
    for part in text.split(";"):
        nodes = []
        for tok in part.split(","):
            tok = tok.strip()
            if not tok:
                continue
            if "-" in tok:
                a, b = (int(v) for v in tok.split("-"))
                nodes.extend(range(a, b + 1))
            else:
                nodes.append(int(tok))
        zones.append(nodes)
    return zones


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args):
    """(model, config) from --model or --params/--grid."""
    if getattr(args, "model", None):
        model, config = load_model(args.model)
        if args.grid is not None and args.grid != (model.grid.nx, model.grid.ny):
            raise UsageError("--grid conflicts with the grid stored in --model")
        return model, config
    config = load_params(args.params) if args.params else default_config()
    nx, ny = args.grid or (config.nx, config.ny)
    return config.build(nx, ny), config


def _eig_summary(model) -> str:
    eig = np.linalg.eigvals(model.A)
    return (f"states: {model.n_states} ({model.grid.nx} x {model.grid.ny})\n"
            f"max Re(eig): {eig.real.max():.6e} 1/s\n"
            f"min Re(eig): {eig.real.min():.6e} 1/s\n"
            f"Hurwitz: {'yes' if model.is_hurwitz else 'no'}\n")


# commands -----------------------------------------------------------------

def cmd_build(args) -> int:
    model, config = _load(args)
    out = _out(args)
    path = save_model(out / "model.npz", model, config)
    summary = _eig_summary(model)
    (out / "build.log").write_text(summary)
    print(summary + f"wrote {path}")
    return 0


def _partition_from(args, model) -> Partition:
    if args.scenario:
        doc = load_scenario(args.scenario, model.n_states)
        return doc.partition(model.n_states)
    if not args.sensors:
        raise UsageError("give --sensors or --scenario")
    if args.zones:
        return Partition.from_zones(_zones(args.zones), args.sensors, model.n_states)
    if len(args.sensors) == 1:
        return Partition(tuple([1] * model.n_states), tuple(args.sensors))
    return nearest_sensor_partition(model.grid, args.sensors)


def cmd_analyze(args) -> int:
    model, _ = _load(args)
    partition = _partition_from(args, model)
    E = build_E(model.Mo, partition)
    C = model.with_sensors(list(partition.sensor_node)).C
    cert = certify(model.A, C, E, sensor_nodes=partition.sensor_node)
    text = cert.report() + "\nzones:\n" + "".join(
        f"  zone {i + 1}: {', '.join(map(str, z))}\n" for i, z in enumerate(partition.zones()))
    out = _out(args)
    (out / "certificate.txt").write_text(text)
    print(text)
    return 0 if cert.isolable and all(cert.detectable_per_fault) else 1


def cmd_place(args) -> int:
    model, _ = _load(args)
    n_cols = model.Mo.shape[1]
    if args.k < 1 or args.k > n_cols:
        raise UsageError(f"--k must be in 1..{n_cols} (fault columns of Mo)")
    out = _out(args)
    try:
        if args.k == 1:
            result = optimize_single_sensor(model.A, model.Mo)
        else:
            cfg = SearchConfig(exhaustive_limit=args.exhaustive_limit, restarts=args.restarts,
                               seed=args.seed, contiguous=args.contiguous)
            result = optimize_placement(model.A, model.Mo, args.k, cfg, model.grid)
    except PlacementInfeasible as exc:
        text = f"Placement report\n\nINFEASIBLE: {exc}\nsearch: {exc.stats}\n"
        (out / "placement.txt").write_text(text)
        print(text)
        return 1
    reference = None
    if (model.grid.nx, model.grid.ny) == (4, 6):
        reference = PUBLISHED_NODES.get(args.k)
    text = result.report(reference)
    (out / "placement.txt").write_text(text)
    result.write_candidates(out / "candidates.csv")
    print(text)
    return 0


def _scenario_with_overrides(doc, args):
    sc = doc.scenario
    if args.seed is not None:
        sc = replace(sc, rng_seed=args.seed)
    if args.dt is not None:
        sc = replace(sc, dt=args.dt)
    return sc


def cmd_simulate(args) -> int:
    from .plots import plot_trajectory

    model, config = _load(args)
    doc = load_scenario(args.scenario, model.n_states)
    plant = model
    if doc.sensors:
        plant, _ = doc.models(model)
    traj = simulate(plant, _scenario_with_overrides(doc, args), config.electrical())
    out = _out(args)
    traj.to_csv(out / "trajectory.csv")
    plot_trajectory(traj, out / "trajectory.png", Path(args.scenario).stem)
    if traj.soc_clamped:
        print("warning: SOC was clamped to [0, 1]")
    print(f"wrote {out / 'trajectory.csv'} ({traj.times.size} samples)")
    return 0


def read_trajectory_csv(path, template: Trajectory) -> Trajectory:
    """Replace states, outputs and fault signals of ``template`` with a CSV's columns."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader])
    cols = {name: i for i, name in enumerate(header)}
    if "time" not in cols:
        raise UsageError(f"{path}: missing 'time' column")

    def block(prefix):
        names = sorted((c for c in cols if c.startswith(prefix) and c[len(prefix):].isdigit()),
                       key=lambda c: int(c[len(prefix):]))
        return data[:, [cols[c] for c in names]].T

    times = data[:, cols["time"]]
    if times.size != template.times.size or not np.allclose(times, template.times):
        raise UsageError(f"{path}: time column does not match the scenario's time grid")
    y = block("y_")
    if y.shape[0] != template.outputs.shape[0]:
        raise UsageError(f"{path}: {y.shape[0]} sensor columns, scenario has {template.outputs.shape[0]}")
    T = block("T_")
    f = block("f_")
    return replace(template, times=times, outputs=y,
                   states=T if T.shape[0] == template.states.shape[0] else template.states,
                   true_fault_signal=f if f.size else template.true_fault_signal)


def cmd_diagnose(args) -> int:
    from .plots import plot_diagnosis

    model, config = _load(args)
    doc = load_scenario(args.scenario, model.n_states)
    if not doc.sensors:
        raise UsageError("the scenario must list sensors and zones")
    plant, filt = doc.models(model)
    traj = simulate(plant, _scenario_with_overrides(doc, args), config.electrical())
    if args.trajectory:
        traj = read_trajectory_csv(args.trajectory, traj)
    bank = design_bank(filt)
    x0 = traj.states[:, 0] + args.initial_error
    innov = run_bank(bank, filt, traj, x0)
    out = _out(args)
    k = len(doc.sensors)
    if args.far_target is not None:
        beta = calibrate_thresholds(innov, args.far_target, traj.times, start=args.calibrate_from)
        write_thresholds(out / "thresholds.txt", beta)
        print(f"calibrated thresholds: {', '.join(f'{b:.4f}' for b in beta)} K")
    elif args.thresholds:
        beta = read_thresholds(args.thresholds)
    else:
        beta = np.full(k, args.beta)
    if len(beta) != k:
        raise UsageError(f"{len(beta)} thresholds for {k} sensors")
    report = detect(innov, DetectorConfig(beta), traj.times, traj.true_fault_signal)
    report.to_csv(out / "innovations.csv")
    plot_diagnosis(report, traj.true_fault_signal, out / "diagnosis.png", Path(args.scenario).stem)
    lines = [
        f"thresholds (K):       {', '.join(f'{b:g}' for b in beta)}",
        f"convergence time (s): {', '.join('n/a' if v is None else f'{v:.2f}' for v in report.convergence_time)}",
        f"detection time (s):   {', '.join('n/a' if v is None else f'{v:.2f}' for v in report.detection_times)}",
        f"false alarms:         {', '.join(map(str, report.false_alarm_counts))}",
        f"cross alarms:         {', '.join(map(str, report.cross_alarm_counts))}",
    ]
    text = "\n".join(lines) + "\n"
    (out / "diagnosis.txt").write_text(text)
    print(text)
    return 0


def _write_case(result, out: Path) -> None:
    from .plots import plot_diagnosis

    out.mkdir(parents=True, exist_ok=True)
    for setup, run in result.runs.items():
        run.trajectory.to_csv(out / f"trajectory_{setup}.csv")
        run.report.to_csv(out / f"innovations_{setup}.csv")
        plot_diagnosis(run.report, run.trajectory.true_fault_signal,
                       out / f"diagnosis_{setup}.png", f"{result.case.name} ({setup})")
    (out / "report.txt").write_text(result.text())


def _case_model(args):
    model, config = _load(args)
    if (model.grid.nx, model.grid.ny) != (4, 6):
        raise UsageError("the case studies use the 4x6 grid")
    return model, config


def cmd_run_case(args) -> int:
    cases = load_cases(args.cases)
    if args.name not in cases:
        raise UsageError(f"unknown case {args.name!r}; known: {', '.join(cases)}")
    model, config = _case_model(args)
    result = run_case(cases[args.name], model, config, args.seed, args.dt)
    _write_case(result, _out(args) / args.name)
    print(result.text())
    return 0 if result.passed else 1


def cmd_run_all_cases(args) -> int:
    cases = load_cases(args.cases)
    model, config = _case_model(args)
    out = _out(args)
    lines = []
    ok = True
    for name, case in cases.items():
        result = run_case(case, model, config, args.seed, args.dt)
        _write_case(result, out / name)
        failed = [c for c in result.checks if not c.passed]
        ok &= result.passed
        lines.append(f"{name:8s} {'PASS' if result.passed else 'FAIL'}"
                     + "".join(f"\n    failed: {c.description}: {c.detail}" for c in failed))
        print(lines[-1])
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return 0 if ok else 1


# parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--params", help="parameter file (key = value); default: packaged cell")
    common.add_argument("--grid", type=_grid, help="grid as NXxNY, e.g. 4x6")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    model_opt = argparse.ArgumentParser(add_help=False)
    model_opt.add_argument("--model", help="model artifact written by 'build'")

    sim_opt = argparse.ArgumentParser(add_help=False)
    sim_opt.add_argument("--seed", type=int, help="override the noise seed")
    sim_opt.add_argument("--dt", type=float, help="override the time step, s")

    p = argparse.ArgumentParser(prog="cellfdi", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("build", parents=[common], help="build and save the lumped model")
    s.set_defaults(func=cmd_build)

    s = sub.add_parser("analyze", parents=[common, model_opt], help="diagnosability certificate")
    s.add_argument("--sensors", type=_int_list, help="sensor nodes, e.g. 7,19")
    s.add_argument("--zones", help="zones as '1-12;13-24' (default: nearest sensor)")
    s.add_argument("--scenario", help="take sensors and zones from a scenario file")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("place", parents=[common, model_opt], help="optimize sensor placement")
    s.add_argument("--k", type=int, required=True, help="number of zones / sensors")
    s.add_argument("--exhaustive-limit", type=int, default=10)
    s.add_argument("--restarts", type=int, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--contiguous", type=_on_off, default=True, metavar="{on,off}")
    s.set_defaults(func=cmd_place)

    s = sub.add_parser("simulate", parents=[common, model_opt, sim_opt], help="simulate a scenario")
    s.add_argument("--scenario", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("diagnose", parents=[common, model_opt, sim_opt],
                       help="run the filter bank on a scenario or a trajectory CSV")
    s.add_argument("--scenario", required=True)
    s.add_argument("--trajectory", help="trajectory CSV (default: simulate the scenario)")
    s.add_argument("--thresholds", help="threshold file (beta_i = value)")
    s.add_argument("--beta", type=float, default=0.3, help="threshold for every zone, K")
    s.add_argument("--far-target", type=float, help="calibrate thresholds to this false-alarm rate")
    s.add_argument("--calibrate-from", type=float, default=None,
                   help="start of the calibration window, s")
    s.add_argument("--initial-error", type=float, default=3.0, help="filter start offset, K")
    s.set_defaults(func=cmd_diagnose)

    for name, func, helptext in (("run-case", cmd_run_case, "run one case study"),
                                 ("run-all-cases", cmd_run_all_cases, "run every case study")):
        s = sub.add_parser(name, parents=[common, model_opt, sim_opt], help=helptext)
        if name == "run-case":
            s.add_argument("name", help="case1..case12, caseI..caseV")
        s.add_argument("--cases", help="case file (default: packaged case list)")
        s.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (ParamFileError, ArtifactError, CaseError, ScenarioError, ModelError,
            FilterDesignError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
