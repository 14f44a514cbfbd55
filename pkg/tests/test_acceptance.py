"""Acceptance suite: one check per criterion, each printed as a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py`` (the table is printed in the
terminal summary) or directly with ``python tests/test_acceptance.py``.
"""

import inspect
import math
import sys
from functools import lru_cache

import numpy as np
import pytest

from inflammfc import mfc
from inflammfc.cohort import CohortSpec, named_patient, sample_cohort
from inflammfc.harness import (ExperimentConfig, Mode, run, run_batch, sense,
                               survival_fraction)
from inflammfc.integrate import IntegratorConfig, integrate
from inflammfc.mfc import (DualLoopController, IntelligentP, Measurement, SignalHistory,
                           estimate_f_algebraic)
from inflammfc.patient import Label, PatientState, reference_parameters, rhs
from inflammfc.reference import default_reference

from scalar_plant import run_continuous, run_sampled

RESULTS = {}
STEP = 1.0 / 60.0
ESTIMATORS = ("algebraic", "closedloop")
NAMED = ("patient1", "patient2")


def report(number, ok, detail):
    RESULTS[number] = (bool(ok), detail)
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    return ok


@lru_cache(maxsize=None)
def closed_run(name, estimator):
    ctrl = DualLoopController(estimator=estimator)
    return run(ExperimentConfig(patient=named_patient(name), mode=Mode.CLOSED, controller=ctrl))


@lru_cache(maxsize=None)
def open_run(name):
    return run(ExperimentConfig(patient=named_patient(name), mode=Mode.OPEN))


def _decay_time(t, excess, frac=0.1):
    """Time after the peak at which ``excess`` first falls below ``frac`` of its peak."""
    i = int(np.argmax(excess))
    below = np.flatnonzero(excess[i:] < frac * excess[i])
    return math.inf if below.size == 0 else float(t[i + below[0]] - t[i])


# -- criteria ---------------------------------------------------------------------

def criterion_1():
    x = rhs(PatientState(0.0, 0.0, 0.0, 0.125), reference_parameters())
    err = float(np.max(np.abs(x)))
    return report(1, err <= 1e-12, f"healthy equilibrium max|rhs| = {err:.3e} (tol 1e-12)")


def criterion_2():
    got = {name: open_run(name).outcome for name in NAMED}
    want = {"patient1": Label.SEPTIC, "patient2": Label.ASEPTIC}
    ok = all(got[n].label is want[n] for n in NAMED)
    detail = "; ".join(f"{n}: want {want[n].value}, got {got[n].label.value}"
                       f"{' (dead at %.1f h)' % got[n].time if got[n].dead else ''}"
                       for n in NAMED)
    return report(2, ok, detail)


def criterion_3():
    parts, ok = [], True
    for est in ESTIMATORS:
        for name in NAMED:
            s = closed_run(name, est).summary()
            good = (not s.dead and s.recovery_time_h is not None and s.recovery_time_h < 250.0)
            ok &= good
            state = (f"dead {s.death_time_h:.1f} h" if s.dead
                     else f"{s.outcome}, P&D<1e-3 from {s.recovery_time_h} h")
            parts.append(f"{est}/{name}: {state}")
    return report(3, ok, "; ".join(parts))


def criterion_4():
    ref = default_reference(IntegratorConfig())
    t_peak = float(ref.t[np.argmax(ref.N_star)])
    n_back = _decay_time(ref.t, ref.N_star)
    ca_back = _decay_time(ref.t, ref.Ca_star - ref.ca_rest)
    ok = 10.0 <= t_peak <= 15.0 and ca_back > n_back
    return report(4, ok, f"N* peak at {t_peak:.2f} h; 10% return N* {n_back:.1f} h, "
                         f"Ca* {ca_back:.1f} h")


def criterion_5():
    parts, ok = [], True
    for est in ESTIMATORS:
        for name in NAMED:
            s = closed_run(name, est).summary()
            good = (s.peak_lag_h is not None and s.peak_lag_h > 0
                    and s.support_ua_h > s.support_up_h)
            ok &= good
            lag = "n/a (u_a never applied)" if s.peak_lag_h is None else f"{s.peak_lag_h:.2f} h"
            parts.append(f"{est}/{name}: lag {lag}, support up {s.support_up_h:.1f} h "
                         f"ua {s.support_ua_h:.1f} h")
    return report(5, ok, "; ".join(parts))


def criterion_6():
    k_p = 0.47

    def y_ref(t):
        return 1.0 + 0.3 * math.sin(0.8 * t)

    def y_ref_dot(t):
        return 0.24 * math.cos(0.8 * t)

    def f(t):
        return -0.7 + 0.2 * math.sin(1.3 * t)

    e0 = 0.5
    t, y = run_continuous(f, y_ref, y_ref_dot, y_ref(0.0) + e0, 10.0 / k_p, k_p=k_p, step=STEP)
    e = y - np.array([y_ref(s) for s in t])
    expected = e0 * np.exp(-k_p * t)
    rel = float(np.max(np.abs(e - expected) / np.abs(expected)))
    return report(6, rel <= 1e-6, f"max relative deviation from e0*exp(-Kp t) = {rel:.2e} "
                                  "(tol 1e-6)")


def _self_driven_error(estimator, f_const=-0.7):
    """Largest |F_est - F| after one window, estimator driving its own loop."""
    w = 30
    t, y, u, f_est = run_sampled(lambda s: f_const, lambda s: 1.0 + 0.2 * s, lambda s: 0.2,
                                 1.01, 3 * w, IntelligentP(estimator=estimator), step=STEP)
    return float(np.max(np.abs(f_est[w:] - f_const)))


def criterion_7():
    tau, w, alpha = 0.5, 30, 2.0
    errors = {est: _self_driven_error(est) for est in ESTIMATORS}

    # Offset annihilation: a constant y with u = 0 gives exactly zero.
    h = SignalHistory(w + 1)
    for _ in range(w + 1):
        h.push(123.456, 0.0, 0.0)
        h.set_control(0.0)
    offset = abs(estimate_f_algebraic(h, alpha, tau))

    # Ramp identity with u = 0: exact quadrature and the trapezoid bound 2 h^2 a / tau^2.
    a = 0.8
    ramp = {}
    for quad in ("exact", "trapezoid"):
        h = SignalHistory(w + 1)
        for k in range(w + 1):
            h.push(0.3 + a * k * STEP, 0.0, 0.0)
            h.set_control(0.0)
        ramp[quad] = abs(estimate_f_algebraic(h, alpha, tau, quad) - a)
    bound = 2.0 * STEP ** 2 * a / tau ** 2 * (1 + 1e-6)
    ok = (all(err < 1e-4 for err in errors.values()) and offset <= 1e-12
          and ramp["exact"] <= bound and ramp["trapezoid"] <= bound)
    return report(7, ok, f"constant F error algebraic {errors['algebraic']:.1e}, "
                         f"closedloop {errors['closedloop']:.1e} (tol 1e-4); offset "
                         f"{offset:.1e}; ramp exact {ramp['exact']:.1e}, trapezoid "
                         f"{ramp['trapezoid']:.2e} <= {bound:.2e}")


def criterion_8():
    ctrl = DualLoopController().reset()
    state = PatientState(1.0, 0.5, 0.2, 0.15)
    rejected = []
    for leak in (state, state.as_tuple(), state.as_array(), (0.5, 0.15), {"N": 0.5, "Ca": 0.15}):
        try:
            ctrl.tick(leak, 0.0, 0.0, 0.125, 0.0)
        except TypeError:
            rejected.append(True)
        else:
            rejected.append(False)
    fields_ok = Measurement._fields == ("N", "Ca")
    sense_ok = sense((1.0, 0.5, 0.2, 0.15)) == Measurement(0.5, 0.15)
    try:
        DualLoopController.from_config({"sensors": ["P", "D"]})
        config_ok = False
    except KeyError:
        config_ok = True
    tick_args = tuple(inspect.signature(DualLoopController.tick).parameters)[1:]
    sig_ok = tick_args == ("measurement", "n_ref", "n_ref_dot", "ca_ref", "ca_ref_dot")
    imports = [ln for ln in inspect.getsource(mfc).splitlines() if ln.startswith(("import", "from"))]
    no_patient_import = not any("patient" in ln or "harness" in ln for ln in imports)
    ok = all(rejected) and fields_ok and sense_ok and config_ok and sig_ok and no_patient_import
    return report(8, ok, f"non-Measurement inputs rejected {sum(rejected)}/{len(rejected)}; "
                         f"Measurement fields {Measurement._fields}; config cannot add sensors "
                         f"{config_ok}; controller module independent of the patient model "
                         f"{no_patient_import}")


def criterion_9():
    p = named_patient("patient1")

    def end_state(h, horizon=6.0):
        tr = integrate(p.initial_state, p, config=IntegratorConfig(step=h, horizon=horizon))
        return tr.states[-1]

    oracle = end_state(1.0 / 7680.0)
    e1 = float(np.max(np.abs(end_state(STEP) - oracle)))
    e2 = float(np.max(np.abs(end_state(STEP / 2) - oracle)))
    ratio = e1 / e2
    order_ok = 8.0 <= ratio <= 32.0

    runs = [open_run(n) for n in NAMED] + [closed_run(n, est) for n in NAMED for est in ESTIMATORS]
    for q in sample_cohort(CohortSpec(count=5, seed=11)):
        runs.append(run(ExperimentConfig(patient=q, mode=Mode.OPEN)))
    nonneg = all(np.all(r.states >= 0.0) for r in runs)

    cfg = ExperimentConfig(patient=named_patient("patient2"), noise=0.002, seed=7)
    a, b = run(cfg), run(cfg)
    identical = all(np.array_equal(x, y) for x, y in zip(a.columns(), b.columns()))
    ok = order_ok and nonneg and identical
    return report(9, ok, f"RK4 error ratio {ratio:.2f} (want [8, 32]); nonnegative {nonneg} "
                         f"over {len(runs)} runs; seeded rerun bit-identical {identical}")


def criterion_10():
    patients = sample_cohort(CohortSpec(count=100, seed=2024))
    opened = run_batch(patients, ExperimentConfig(patient=patients[0], mode=Mode.OPEN))
    closed = run_batch(patients, ExperimentConfig(patient=patients[0], mode=Mode.CLOSED))
    again = run_batch(patients[:10], ExperimentConfig(patient=patients[0], mode=Mode.CLOSED))
    deterministic = again == closed[:10]
    complete = len(closed) == 100 and all(r["outcome"] != "error" for r in closed)
    f_open, f_closed = survival_fraction(opened), survival_fraction(closed)
    ok = complete and deterministic and f_closed > f_open
    return report(10, ok, f"healthy fraction open {f_open:.2f}, closed {f_closed:.2f}; "
                          f"complete {complete}; deterministic {deterministic}")


CRITERIA = (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9, criterion_10)


@pytest.mark.parametrize("check", CRITERIA, ids=[f"criterion_{i}" for i in range(1, 11)])
def test_criterion(check):
    assert check(), RESULTS[int(check.__name__.split("_")[1])][1]


if __name__ == "__main__":
    passed = sum(bool(check()) for check in CRITERIA)
    print(f"{passed}/{len(CRITERIA)} criteria pass")
    sys.exit(0 if passed == len(CRITERIA) else 1)
