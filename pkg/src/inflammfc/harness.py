"""Open- and closed-loop experiments on one virtual patient, and batches of them."""

from __future__ import annotations

import csv
import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import clone

from ._validation import DomainError, check_nonnegative, check_positive
from .integrate import IntegrationError, IntegratorConfig, advance
from .mfc import ControllerFault, DualLoopController, Measurement
from .patient import DEATH_THRESHOLD, DEFAULT_TOL_ZERO, Label, PatientState, classify
from .reference import ReferencePair, default_reference

RECORD_COLUMNS = ("t", "P", "N", "D", "Ca", "up", "ua", "Nref", "Caref", "F1", "F2")
# Shortest horizon over which the default reference patient is known to recover.
REFERENCE_MIN_HORIZON = 500.0


class Mode(str, enum.Enum):
    OPEN = "open"
    CLOSED = "closed"


class SimulationAborted(RuntimeError):
    """A run stopped on an integration or controller failure.

    ``record`` holds every sample logged before the failure.
    """

    def __init__(self, cause, record):
        super().__init__(f"simulation aborted: {cause}")
        self.cause = cause
        self.record = record


@dataclass
class ExperimentConfig:
    patient: object
    mode: Mode = Mode.CLOSED
    controller: DualLoopController = field(default_factory=DualLoopController)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    reference: ReferencePair | None = None
    c1: float = 4.0
    c2: float = 1.0
    noise: float = 0.0
    seed: int = 0
    tol_zero: float = DEFAULT_TOL_ZERO

    def __post_init__(self):
        self.mode = Mode(self.mode)
        check_nonnegative(self.noise, "noise")
        check_positive(self.tol_zero, "tol_zero")
        self.controller.validate()


def sense(x):
    """Sensor model: the controller only ever gets ``N`` and ``Ca``."""
    return Measurement(N=x[1], Ca=x[3])


def reference_for(config):
    """Reference served to a closed-loop run, truncated to its horizon."""
    n = config.integrator.n_steps + 1
    ref = config.reference
    if ref is None:
        horizon = max(config.integrator.horizon, REFERENCE_MIN_HORIZON)
        gen = IntegratorConfig(step=config.integrator.step, horizon=horizon)
        ref = default_reference(gen, c1=config.c1, c2=config.c2)
    if not math.isclose(ref.step, config.integrator.step, rel_tol=1e-9):
        raise DomainError(f"reference step {ref.step!r} differs from the integrator step")
    if len(ref) < n:
        raise DomainError(f"reference covers {len(ref)} samples, run needs {n}")
    if len(ref) == n:
        return ref
    return ReferencePair(t=ref.t[:n], N_star=ref.N_star[:n], Ca_star=ref.Ca_star[:n],
                         N_star_dot=ref.N_star_dot[:n], Ca_star_dot=ref.Ca_star_dot[:n],
                         c1=ref.c1, c2=ref.c2, ca_rest=ref.ca_rest)


@dataclass
class SimulationRecord:
    t: np.ndarray
    states: np.ndarray
    u_p: np.ndarray
    u_a: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    n_ref: np.ndarray
    ca_ref: np.ndarray
    step: float
    mode: Mode = Mode.CLOSED
    label: str = ""
    tol_zero: float = DEFAULT_TOL_ZERO

    def __len__(self):
        return len(self.t)

    @property
    def P(self):
        return self.states[:, 0]

    @property
    def N(self):
        return self.states[:, 1]

    @property
    def D(self):
        return self.states[:, 2]

    @property
    def Ca(self):
        return self.states[:, 3]

    @property
    def outcome(self):
        return classify(PatientState.from_array(self.states[-1]), self.tol_zero, time=self.t[-1])

    def summary(self):
        return summarize(self)

    def columns(self):
        return (self.t, *self.states.T, self.u_p, self.u_a, self.n_ref, self.ca_ref, self.f1, self.f2)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(RECORD_COLUMNS)
            for row in zip(*self.columns()):
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, mode=Mode.CLOSED, label="", tol_zero=DEFAULT_TOL_ZERO):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader))
            if header != RECORD_COLUMNS:
                raise ValueError(f"record header must be {','.join(RECORD_COLUMNS)}")
            data = np.array([[float(v) for v in row] for row in reader])
        step = float(data[1, 0] - data[0, 0]) if len(data) > 1 else float("nan")
        return cls(t=data[:, 0], states=data[:, 1:5], u_p=data[:, 5], u_a=data[:, 6],
                   n_ref=data[:, 7], ca_ref=data[:, 8], f1=data[:, 9], f2=data[:, 10],
                   step=step, mode=Mode(mode), label=label, tol_zero=tol_zero)


def run(config):
    """Simulate one patient.

    Each closed-loop tick reads the two sensed channels, updates both F
    estimates from the history so far, computes both controls, and then
    advances the plant by one step with the controls held. ``P`` and ``D``
    are logged but never reach the controller.

    Raises
    ------
    SimulationAborted
        On a non-finite state or control; carries the partial record.
    """
    p = config.patient
    h = config.integrator.step
    n = config.integrator.n_steps
    closed = config.mode is Mode.CLOSED

    states = np.zeros((n + 1, 4))
    logs = np.zeros((n + 1, 6))  # up, ua, f1, f2, nref, caref
    ref = reference_for(config) if closed else None
    ctrl = None
    if closed:
        ctrl = clone(config.controller).set_params(step=h).reset()
    rng = np.random.default_rng(config.seed) if config.noise > 0 else None

    x = p.initial_state.as_tuple()
    last = 0
    try:
        for k in range(n + 1):
            states[k] = x
            last = k
            u_p = u_a = 0.0
            if closed:
                meas = sense(x)
                if rng is not None:
                    d = rng.uniform(-config.noise, config.noise, size=2)
                    meas = Measurement(N=meas.N + d[0], Ca=meas.Ca + d[1])
                n_ref, n_ref_dot, ca_ref, ca_ref_dot = ref.at(k)
                u_p, u_a = ctrl.tick(meas, n_ref, n_ref_dot, ca_ref, ca_ref_dot)
                logs[k] = (u_p, u_a, *ctrl.f_estimates, n_ref, ca_ref)
            if k == n or x[2] >= DEATH_THRESHOLD:
                break
            x = advance(x, p, u_p, u_a, h, k * h)
    except (IntegrationError, ControllerFault) as exc:
        raise SimulationAborted(exc, _record(config, states, logs, last, h)) from exc
    return _record(config, states, logs, last, h)


def _record(config, states, logs, last, h):
    m = last + 1
    return SimulationRecord(
        t=np.arange(m) * h, states=states[:m].copy(),
        u_p=logs[:m, 0].copy(), u_a=logs[:m, 1].copy(),
        f1=logs[:m, 2].copy(), f2=logs[:m, 3].copy(),
        n_ref=logs[:m, 4].copy(), ca_ref=logs[:m, 5].copy(),
        step=h, mode=config.mode, label=config.patient.label, tol_zero=config.tol_zero)


@dataclass(frozen=True)
class Summary:
    outcome: str
    dead: bool
    death_time_h: float | None
    clearance_time_h: float | None
    recovery_time_h: float | None
    peak_D: float
    dose_up: float
    dose_ua: float
    peak_lag_h: float | None
    support_up_h: float
    support_ua_h: float
    final_time_h: float

    def to_dict(self):
        return {
            "outcome": self.outcome,
            "dead": self.dead,
            "death_time_h": self.death_time_h,
            "clearance_time_h": self.clearance_time_h,
            "recovery_time_h": self.recovery_time_h,
            "peak_D": self.peak_D,
            "dose_up": self.dose_up,
            "dose_ua": self.dose_ua,
            "peak_lag_h": self.peak_lag_h,
            "support_up_h": self.support_up_h,
            "support_ua_h": self.support_ua_h,
            "final_time_h": self.final_time_h,
        }


def settle_time(t, mask):
    """First time from which ``mask`` stays true to the end; None if it ends false."""
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0 or not mask[-1]:
        return None
    bad = np.flatnonzero(~mask)
    return float(t[0] if bad.size == 0 else t[bad[-1] + 1])


def support_length(u, step, level=0.01):
    peak = float(np.max(u)) if len(u) else 0.0
    if peak <= 0.0:
        return 0.0
    return float(np.count_nonzero(u > level * peak) * step)


def summarize(record, tol_zero=None):
    """Outcome, clearance, peak damage, doses and dose timing of a record.

    Clearance is the first time from which ``P < tol_zero`` holds until the
    end of the run; recovery additionally requires ``D < tol_zero``. Both are
    None for a run that ended in death or with the condition violated at the
    last sample. ``peak_lag_h`` is the time of the ``u_a`` peak minus the time
    of the ``u_p`` peak (None unless both doses are nonzero).
    """
    tol = record.tol_zero if tol_zero is None else tol_zero
    outcome = classify(PatientState.from_array(record.states[-1]), tol, time=record.t[-1])
    t = record.t
    dead = outcome.dead
    clearance = None if dead else settle_time(t, record.P < tol)
    recovery = None if dead else settle_time(t, (record.P < tol) & (record.D < tol))
    if np.max(record.u_p, initial=0.0) > 0 and np.max(record.u_a, initial=0.0) > 0:
        lag = float(t[np.argmax(record.u_a)] - t[np.argmax(record.u_p)])
    else:
        lag = None
    return Summary(
        outcome=outcome.label.value,
        dead=dead,
        death_time_h=float(t[-1]) if dead else None,
        clearance_time_h=clearance,
        recovery_time_h=recovery,
        peak_D=float(np.max(record.D)),
        dose_up=float(np.trapezoid(record.u_p, t)) if len(t) > 1 else 0.0,
        dose_ua=float(np.trapezoid(record.u_a, t)) if len(t) > 1 else 0.0,
        peak_lag_h=lag,
        support_up_h=support_length(record.u_p, record.step),
        support_ua_h=support_length(record.u_a, record.step),
        final_time_h=float(t[-1]),
    )


# -- batches ---------------------------------------------------------------------

AGGREGATE_COLUMNS = ("patient_id", "outcome", "dead", "clearance_time_h", "recovery_time_h",
                     "dose_up", "dose_ua", "peak_D")


def _batch_row(config):
    try:
        s = run(config).summary()
    except SimulationAborted as exc:
        return {"patient_id": config.patient.label, "outcome": "error", "dead": False,
                "clearance_time_h": None, "recovery_time_h": None, "dose_up": None,
                "dose_ua": None, "peak_D": None, "error": str(exc.cause)}
    return {"patient_id": config.patient.label, "outcome": s.outcome, "dead": s.dead,
            "clearance_time_h": s.clearance_time_h, "recovery_time_h": s.recovery_time_h,
            "dose_up": s.dose_up, "dose_ua": s.dose_ua, "peak_D": s.peak_D}


def run_batch(patients, template, jobs=1):
    """Run ``template`` on every patient; rows come back in input order.

    The reference is generated once and shared by every run.
    """
    if template.mode is Mode.CLOSED and template.reference is None:
        template = _with(template, reference=reference_for(template))
    configs = [_with(template, patient=p) for p in patients]
    if jobs is None or jobs <= 1 or len(configs) < 2:
        return [_batch_row(c) for c in configs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_batch_row, configs))


def _with(config, **changes):
    fields = {f: getattr(config, f) for f in config.__dataclass_fields__}
    fields.update(changes)
    return ExperimentConfig(**fields)


def survival_fraction(rows):
    if not rows:
        return float("nan")
    ok = sum(1 for r in rows if r["outcome"] == Label.HEALTHY.value and not r["dead"])
    return ok / len(rows)


def write_aggregate(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(AGGREGATE_COLUMNS)
        for r in rows:
            writer.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c])
                             for c in AGGREGATE_COLUMNS])
