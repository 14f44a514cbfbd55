"""Fixed-step RK4 integration of the patient model."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import DomainError, check_nonnegative, check_positive
from .patient import DEATH_THRESHOLD, PatientState, _derivatives

RECORD_COLUMNS = ("t", "P", "N", "D", "Ca", "up", "ua", "Nref", "Caref")


class IntegrationError(FloatingPointError):
    """The integrator produced a non-finite state."""

    def __init__(self, message, time):
        super().__init__(f"{message} at t={time!r}")
        self.time = time


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step settings. Times are in hours; the default step is one minute."""

    step: float = 1.0 / 60.0
    horizon: float = 500.0
    method: str = "rk4"

    def __post_init__(self):
        check_positive(self.step, "step")
        check_positive(self.horizon, "horizon")
        if self.horizon < self.step:
            raise DomainError("horizon must be at least one step")
        if self.method != "rk4":
            raise DomainError(f"unsupported method {self.method!r}")

    @property
    def n_steps(self):
        return int(round(self.horizon / self.step))

    def grid(self):
        return np.arange(self.n_steps + 1) * self.step


def _rk4(x, p, u_p, u_a, h):
    P, N, D, Ca = x
    k1 = _derivatives(P, N, D, Ca, p, u_p, u_a)
    hh = 0.5 * h
    k2 = _derivatives(P + hh * k1[0], N + hh * k1[1], D + hh * k1[2], Ca + hh * k1[3], p, u_p, u_a)
    k3 = _derivatives(P + hh * k2[0], N + hh * k2[1], D + hh * k2[2], Ca + hh * k2[3], p, u_p, u_a)
    k4 = _derivatives(P + h * k3[0], N + h * k3[1], D + h * k3[2], Ca + h * k3[3], p, u_p, u_a)
    h6 = h / 6.0
    return (
        P + h6 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        N + h6 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        D + h6 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
        Ca + h6 * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3]),
    )


def advance(x, params, u_p, u_a, h, t=math.nan):
    """One RK4 step on a plain ``(P, N, D, Ca)`` tuple, clipped at zero."""
    try:
        y = _rk4(x, params, u_p, u_a, h)
    except (OverflowError, ZeroDivisionError) as exc:
        raise IntegrationError(str(exc), t) from None
    if not all(math.isfinite(v) for v in y):
        raise IntegrationError("non-finite state", t)
    return tuple(v if v > 0.0 else 0.0 for v in y)


def step(state, params, u_p, u_a, h, t=math.nan):
    """Advance ``state`` by one RK4 step with controls held over the step.

    The result is projected componentwise onto ``[0, inf)``.
    """
    check_positive(h, "h")
    check_nonnegative(u_p, "u_p")
    check_nonnegative(u_a, "u_a")
    if not isinstance(state, PatientState):
        state = PatientState.from_array(state)
    return PatientState(*advance(state.as_tuple(), params, float(u_p), float(u_a), float(h), t))


@dataclass
class Trajectory:
    """Uniformly sampled states. ``states`` has columns ``P, N, D, Ca``."""

    t: np.ndarray
    states: np.ndarray
    step: float
    death_time: float | None = None
    controls: np.ndarray | None = field(default=None, repr=False)

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
    def final_state(self):
        return PatientState.from_array(self.states[-1])

    def to_csv(self, path):
        """Write ``t,P,N,D,Ca,up,ua,Nref,Caref``; reference columns are zero."""
        n = len(self.t)
        controls = self.controls if self.controls is not None else np.zeros((n, 2))
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(RECORD_COLUMNS)
            for k in range(n):
                row = (self.t[k], *self.states[k], controls[k, 0], controls[k, 1], 0.0, 0.0)
                writer.writerow([repr(float(v)) for v in row])


def integrate(initial, params, control_source=None, config=None, stop_on_death=True):
    """Integrate the model over ``config.horizon``.

    Parameters
    ----------
    initial : PatientState
    params : PatientParameters
    control_source : callable, optional
        ``control_source(k, t) -> (u_p, u_a)`` evaluated once per sample and
        held over the following step. ``None`` means no treatment.
    config : IntegratorConfig, optional
    stop_on_death : bool
        Stop at the first sample with ``D >= 17``.

    Returns
    -------
    Trajectory
    """
    config = config or IntegratorConfig()
    h = config.step
    n = config.n_steps
    states = np.empty((n + 1, 4))
    controls = np.zeros((n + 1, 2))
    x = initial.as_tuple()
    states[0] = x
    death_time = 0.0 if x[2] >= DEATH_THRESHOLD else None
    last = 0
    if death_time is None or not stop_on_death:
        for k in range(n):
            t = k * h
            if control_source is None:
                u_p = u_a = 0.0
            else:
                u_p, u_a = control_source(k, t)
                u_p = check_nonnegative(u_p, "u_p")
                u_a = check_nonnegative(u_a, "u_a")
                controls[k] = u_p, u_a
            x = advance(x, params, u_p, u_a, h, t)
            last = k + 1
            states[last] = x
            if x[2] >= DEATH_THRESHOLD and death_time is None:
                death_time = last * h
                if stop_on_death:
                    break
    t = np.arange(last + 1) * h
    return Trajectory(t=t, states=states[: last + 1], step=h, death_time=death_time,
                      controls=controls[: last + 1])
