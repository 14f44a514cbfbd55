"""Command-line driver for single runs, references, cohorts, batches and plot data."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .cohort import (CohortSpec, NAMED_IDS, PARAMETER_RANGES, INITIAL_RANGES, load_cohort,
                     load_patient, named_patient, sample_cohort, save_cohort)
from .harness import (ExperimentConfig, Mode, SimulationAborted, reference_for, run, run_batch,
                      survival_fraction, write_aggregate)
from .integrate import IntegratorConfig
from .mfc import DualLoopController
from .patient import PatientState, reference_parameters
from .reference import (REFERENCE_INITIAL, ReferencePair, generate_free_response,
                        scale_reference)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CODES = {"healthy": 0, "septic": 2, "aseptic": 3, "dead": 4}


def _common_parser():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("simulation")
    g.add_argument("--step", type=float, default=1.0 / 60.0, help="step in hours (default: 1 min)")
    g.add_argument("--horizon", type=float, default=500.0, help="horizon in hours")
    g.add_argument("--tau", type=float, default=0.5, help="estimator window in hours")
    g.add_argument("--estimator", choices=("algebraic", "closedloop"), default="algebraic")
    g.add_argument("--alpha-p", type=float, default=2.0)
    g.add_argument("--alpha-a", type=float, default=2.0)
    g.add_argument("--kp1", type=float, default=0.47)
    g.add_argument("--kp2", type=float, default=0.47)
    g.add_argument("--controller", help="JSON file with a controller block (overrides flags)")
    g.add_argument("--noise", type=float, default=0.0, help="uniform measurement noise amplitude")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--jobs", type=int, default=1)
    g.add_argument("--out", default=".", help="output directory")
    return p


def build_parser():
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="inflammfc", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run one patient")
    s.add_argument("--patient", required=True,
                   help=f"patient JSON file or one of: {', '.join(NAMED_IDS)}")
    s.add_argument("--mode", choices=("open", "closed"), default="closed")
    s.add_argument("--reference", help="reference CSV to use instead of generating one")
    s.add_argument("--c1", type=float, default=4.0)
    s.add_argument("--c2", type=float, default=1.0)

    r = sub.add_parser("reference", parents=[common], help="generate the reference trajectories")
    r.add_argument("--c1", type=float, default=4.0)
    r.add_argument("--c2", type=float, default=1.0)
    r.add_argument("--p0", type=float, default=REFERENCE_INITIAL.P,
                   help="initial pathogen load of the reference patient")
    r.add_argument("--ca0", type=float, default=REFERENCE_INITIAL.Ca)

    c = sub.add_parser("cohort", parents=[common], help="sample a random cohort")
    c.add_argument("--count", type=int, default=100)
    c.add_argument("--ranges", help="JSON file {name: [low, high]} overriding the default ranges")

    b = sub.add_parser("batch", parents=[common], help="run every patient of a cohort")
    b.add_argument("--cohort", help="cohort JSON file")
    b.add_argument("--patients", help="comma-separated named patients (instead of --cohort)")
    b.add_argument("--mode", choices=("open", "closed"), default="closed")
    b.add_argument("--reference", help="reference CSV to use instead of generating one")
    b.add_argument("--c1", type=float, default=4.0)
    b.add_argument("--c2", type=float, default=1.0)

    sub.add_parser("figures", parents=[common], help="plot-ready CSV series for the two case patients")
    return parser


# -- helpers ------------------------------------------------------------------------

def _digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _controller(args):
    if args.controller:
        with open(args.controller) as fh:
            block = json.load(fh)
        return DualLoopController.from_config(block, step=args.step)
    return DualLoopController(alpha_p=args.alpha_p, alpha_a=args.alpha_a, kp1=args.kp1,
                              kp2=args.kp2, tau=args.tau, estimator=args.estimator,
                              step=args.step).validate()


def _patient(spec):
    if os.path.exists(spec):
        return load_patient(spec)
    return named_patient(spec)


def _reference(args, integrator):
    if getattr(args, "reference", None):
        return ReferencePair.from_csv(args.reference)
    return None


def _write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


class Manifest:
    """One append-only JSON line per CLI invocation."""

    def __init__(self, args, argv):
        self.started = time.perf_counter()
        self.entry = {
            "command": args.command,
            "argv": list(argv),
            "config": {k: v for k, v in sorted(vars(args).items())},
            "inputs": {},
            "outputs": {},
            "version": __version__,
        }

    def add_input(self, path):
        if path and os.path.exists(path):
            self.entry["inputs"][path] = _digest(path)

    def add_output(self, path):
        self.entry["outputs"][path] = _digest(path)

    def write(self, out_dir, extra=None):
        if extra:
            self.entry.update(extra)
        self.entry["duration_s"] = time.perf_counter() - self.started
        with open(os.path.join(out_dir, "manifest.jsonl"), "a") as fh:
            fh.write(json.dumps(self.entry, sort_keys=True) + "\n")


# -- commands -----------------------------------------------------------------------

def cmd_simulate(args, manifest):
    integrator = IntegratorConfig(step=args.step, horizon=args.horizon)
    manifest.add_input(args.patient)
    manifest.add_input(args.controller)
    manifest.add_input(args.reference)
    ctrl = _controller(args)
    config = ExperimentConfig(patient=_patient(args.patient), mode=Mode(args.mode),
                              controller=ctrl, integrator=integrator,
                              reference=_reference(args, integrator), c1=args.c1, c2=args.c2,
                              noise=args.noise, seed=args.seed)
    manifest.entry["controller"] = ctrl.to_config()
    try:
        record = run(config)
    except SimulationAborted as exc:
        record = exc.record
        print(f"error: {exc}", file=sys.stderr)
        _emit_record(record, args.out, manifest)
        return EXIT_ERROR
    summary = _emit_record(record, args.out, manifest)
    status = "dead" if summary["dead"] else summary["outcome"]
    print(json.dumps(summary, sort_keys=True))
    return EXIT_CODES[status]


def _emit_record(record, out, manifest):
    record_path = os.path.join(out, "record.csv")
    summary_path = os.path.join(out, "summary.json")
    record.to_csv(record_path)
    summary = record.summary().to_dict()
    _write_json(summary_path, summary)
    manifest.add_output(record_path)
    manifest.add_output(summary_path)
    return summary


def cmd_reference(args, manifest):
    if args.c1 < 0 or args.c2 < 0:
        raise ValueError("c1 and c2 must be >= 0")
    integrator = IntegratorConfig(step=args.step, horizon=args.horizon)
    params = reference_parameters(PatientState(args.p0, 0.0, 0.0, args.ca0))
    free = generate_free_response(params, config=integrator)
    ref = scale_reference(free, c1=args.c1, c2=args.c2)
    path = os.path.join(args.out, "reference.csv")
    ref.to_csv(path)
    manifest.add_output(path)
    peak = float(ref.t[np.argmax(ref.N_star)])
    print(json.dumps({"reference": path, "n_peak_time_h": peak}))
    return EXIT_OK


def cmd_cohort(args, manifest):
    ranges, initial = dict(PARAMETER_RANGES), dict(INITIAL_RANGES)
    if args.ranges:
        manifest.add_input(args.ranges)
        with open(args.ranges) as fh:
            override = json.load(fh)
        for key, value in override.items():
            if key in ranges:
                ranges[key] = tuple(float(v) for v in value)
            elif key in initial:
                initial[key] = tuple(float(v) for v in value)
            else:
                raise KeyError(f"unknown range key {key!r} in {args.ranges}")
    spec = CohortSpec(count=args.count, seed=args.seed, ranges=ranges, initial_ranges=initial)
    path = os.path.join(args.out, "cohort.json")
    save_cohort(sample_cohort(spec), path, spec)
    manifest.add_output(path)
    print(json.dumps({"cohort": path, "count": spec.count, "seed": spec.seed}))
    return EXIT_OK


def cmd_batch(args, manifest):
    if bool(args.cohort) == bool(args.patients):
        raise ValueError("give exactly one of --cohort or --patients")
    if args.cohort:
        manifest.add_input(args.cohort)
        patients = load_cohort(args.cohort)
    else:
        patients = [named_patient(p.strip()) for p in args.patients.split(",") if p.strip()]
    manifest.add_input(args.controller)
    manifest.add_input(args.reference)
    integrator = IntegratorConfig(step=args.step, horizon=args.horizon)
    template = ExperimentConfig(patient=patients[0], mode=Mode(args.mode),
                                controller=_controller(args), integrator=integrator,
                                reference=_reference(args, integrator), c1=args.c1, c2=args.c2,
                                noise=args.noise, seed=args.seed)
    rows = run_batch(patients, template, jobs=args.jobs)
    path = os.path.join(args.out, "aggregate.csv")
    write_aggregate(rows, path)
    summary_path = os.path.join(args.out, "batch_summary.json")
    counts = {}
    for r in rows:
        key = "dead" if r["dead"] else r["outcome"]
        counts[key] = counts.get(key, 0) + 1
    _write_json(summary_path, {"patients": len(rows), "survival_fraction": survival_fraction(rows),
                               "counts": counts, "mode": args.mode})
    manifest.add_output(path)
    manifest.add_output(summary_path)
    print(json.dumps({"aggregate": path, "survival_fraction": survival_fraction(rows)}))
    return EXIT_OK


def _write_columns(path, header, columns):
    n = max(len(c) for c in columns)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for k in range(n):
            # Runs that stop early (death) leave blanks.
            fh.write(",".join(repr(float(c[k])) if k < len(c) else "" for c in columns) + "\n")


def cmd_figures(args, manifest):
    integrator = IntegratorConfig(step=args.step, horizon=args.horizon)
    ctrl = _controller(args)
    runs = {}
    for name in ("patient1", "patient2"):
        for mode in (Mode.OPEN, Mode.CLOSED):
            cfg = ExperimentConfig(patient=named_patient(name), mode=mode, controller=ctrl,
                                   integrator=integrator, noise=args.noise, seed=args.seed)
            try:
                runs[name, mode] = run(cfg)
            except SimulationAborted as exc:
                runs[name, mode] = exc.record
    ref = reference_for(ExperimentConfig(patient=named_patient("reference"), integrator=integrator))
    o1, o2 = runs["patient1", Mode.OPEN], runs["patient2", Mode.OPEN]
    c1, c2 = runs["patient1", Mode.CLOSED], runs["patient2", Mode.CLOSED]
    t = integrator.grid()
    panels = {
        "open_loop.csv": (("t", "P1", "N1", "D1", "Ca1", "P2", "N2", "D2", "Ca2"),
                     (t, o1.P, o1.N, o1.D, o1.Ca, o2.P, o2.N, o2.D, o2.Ca)),
        "tracking_ca.csv": (("t", "Caref", "Ca1", "Ca2"), (ref.t, ref.Ca_star, c1.Ca, c2.Ca)),
        "tracking_n.csv": (("t", "Nref", "N1", "N2"), (ref.t, ref.N_star, c1.N, c2.N)),
        "closed_loop_states.csv": (("t", "P1", "D1", "P2", "D2"), (t, c1.P, c1.D, c2.P, c2.D)),
        "doses.csv": (("t", "up1", "ua1", "up2", "ua2"), (t, c1.u_p, c1.u_a, c2.u_p, c2.u_a)),
    }
    for fname, (header, cols) in panels.items():
        path = os.path.join(args.out, fname)
        _write_columns(path, header, cols)
        manifest.add_output(path)
    print(json.dumps({"figures": sorted(panels)}))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "reference": cmd_reference,
    "cohort": cmd_cohort,
    "batch": cmd_batch,
    "figures": cmd_figures,
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    os.makedirs(args.out, exist_ok=True)
    manifest = Manifest(args, argv)
    try:
        code = COMMANDS[args.command](args, manifest)
    except (KeyError, ValueError, OSError, TypeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_ERROR
    manifest.write(args.out, {"exit_code": code})
    return code


if __name__ == "__main__":
    sys.exit(main())
