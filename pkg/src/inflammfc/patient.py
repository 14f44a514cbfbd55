"""Four-state acute inflammation model (pathogen, phagocytes, damage, anti-inflammation).

States are nondimensional concentrations:

* ``P``  - bacterial pathogen load
* ``N``  - activated phagocytes / early pro-inflammatory mediators
* ``D``  - tissue damage
* ``Ca`` - anti-inflammatory mediators

The pro-inflammatory drug ``u_p`` enters the ``N`` equation and the
anti-inflammatory drug ``u_a`` enters the ``Ca`` equation, both additively.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from ._validation import DomainError, check_nonnegative, check_positive

DEATH_THRESHOLD = 17.0
DEFAULT_TOL_ZERO = 1e-3

RATE_FIELDS = (
    "k_pg", "k_pm", "s_m", "mu_m", "k_mp", "k_pn", "P_inf",
    "s_nr", "mu_nr", "mu_n",
    "k_dn", "x_dn", "mu_d",
    "s_c", "k_cn", "k_cnd", "mu_c", "c_inf",
    "k_np", "k_nn", "k_nd",
)
# Divisors in the right-hand side.
_STRICTLY_POSITIVE = ("P_inf", "mu_c", "c_inf", "x_dn")


@dataclass(frozen=True)
class PatientState:
    """Concentrations ``(P, N, D, Ca)`` at one instant; all components >= 0."""

    P: float
    N: float
    D: float
    Ca: float

    def __post_init__(self):
        for name in ("P", "N", "D", "Ca"):
            object.__setattr__(self, name, check_nonnegative(getattr(self, name), name))

    def as_array(self):
        return np.array([self.P, self.N, self.D, self.Ca], dtype=float)

    def as_tuple(self):
        return (self.P, self.N, self.D, self.Ca)

    @classmethod
    def from_array(cls, x):
        P, N, D, Ca = (float(v) for v in x)
        return cls(P, N, D, Ca)

    def to_dict(self):
        return {"P": self.P, "N": self.N, "D": self.D, "Ca": self.Ca}

    @classmethod
    def from_dict(cls, data):
        missing = [k for k in ("P", "N", "D", "Ca") if k not in data]
        if missing:
            raise KeyError(f"initial state is missing key {missing[0]!r}")
        return cls(*(float(data[k]) for k in ("P", "N", "D", "Ca")))


@dataclass(frozen=True)
class PatientParameters:
    """Rate constants of one virtual patient plus its initial state."""

    k_pg: float
    k_pm: float
    s_m: float
    mu_m: float
    k_mp: float
    k_pn: float
    P_inf: float
    s_nr: float
    mu_nr: float
    mu_n: float
    k_dn: float
    x_dn: float
    mu_d: float
    s_c: float
    k_cn: float
    k_cnd: float
    mu_c: float
    c_inf: float
    k_np: float
    k_nn: float
    k_nd: float
    initial_state: PatientState = PatientState(0.0, 0.0, 0.0, 0.125)
    label: str = ""

    def __post_init__(self):
        for name in RATE_FIELDS:
            value = check_nonnegative(getattr(self, name), name)
            if name in _STRICTLY_POSITIVE and value == 0.0:
                raise DomainError(f"{name} must be > 0")
            object.__setattr__(self, name, value)
        if not isinstance(self.initial_state, PatientState):
            raise TypeError("initial_state must be a PatientState")

    @property
    def resting_ca(self):
        """Anti-inflammatory level of the healthy equilibrium, ``s_c / mu_c``."""
        return self.s_c / self.mu_c

    def rates(self):
        return {name: getattr(self, name) for name in RATE_FIELDS}

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return {"params": self.rates(), "initial": self.initial_state.to_dict(), "label": self.label}

    @classmethod
    def from_dict(cls, data):
        for key in ("params", "initial"):
            if key not in data:
                raise KeyError(f"patient object is missing key {key!r}")
        params = data["params"]
        unknown = sorted(set(params) - set(RATE_FIELDS))
        if unknown:
            raise KeyError(f"unknown parameter key {unknown[0]!r}")
        missing = [k for k in RATE_FIELDS if k not in params]
        if missing:
            raise KeyError(f"missing parameter key {missing[0]!r}")
        rates = {}
        for key in RATE_FIELDS:
            try:
                rates[key] = float(params[key])
            except (TypeError, ValueError):
                raise ValueError(f"parameter {key!r} is not a number: {params[key]!r}") from None
        return cls(**rates, initial_state=PatientState.from_dict(data["initial"]),
                   label=str(data.get("label", "")))


def load_reference_rates(path=None):
    """Read the flat ``symbol -> value`` reference parameter file."""
    if path is None:
        text = resources.files("inflammfc").joinpath("data/reference_parameters_v1.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    rates = json.loads(text)
    unknown = sorted(set(rates) - set(RATE_FIELDS))
    if unknown:
        raise KeyError(f"unknown parameter key {unknown[0]!r}")
    missing = [k for k in RATE_FIELDS if k not in rates]
    if missing:
        raise KeyError(f"missing parameter key {missing[0]!r}")
    return {k: float(rates[k]) for k in RATE_FIELDS}


def reference_parameters(initial_state=None, label="reference"):
    if initial_state is None:
        initial_state = PatientState(0.0, 0.0, 0.0, 0.125)
    return PatientParameters(**load_reference_rates(), initial_state=initial_state, label=label)


def hill_f(x, c_a, c_inf):
    """Anti-inflammatory inhibition ``x / (1 + (c_a / c_inf)**2)``."""
    x = check_nonnegative(x, "x")
    c_a = check_nonnegative(c_a, "c_a")
    c_inf = check_positive(c_inf, "c_inf")
    return x / (1.0 + (c_a / c_inf) ** 2)


def _derivatives(P, N, D, Ca, p, u_p, u_a):
    # Hot path for the integrator: plain floats, no validation.
    inhib = 1.0 + (Ca / p.c_inf) ** 2
    fN = N / inhib
    R = (p.k_np * P + p.k_nn * N + p.k_nd * D) / inhib
    fC = (N + p.k_cnd * D) / inhib
    fN6 = fN ** 6
    dP = (p.k_pg * P * (1.0 - P / p.P_inf)
          - p.k_pm * p.s_m * P / (p.mu_m + p.k_mp * P)
          - p.k_pn * fN * P)
    dN = p.s_nr * R / (p.mu_nr + R) - p.mu_n * N + u_p
    dD = p.k_dn * fN6 / (p.x_dn ** 6 + fN6) - p.mu_d * D
    dCa = p.s_c + p.k_cn * fC / (1.0 + fC) - p.mu_c * Ca + u_a
    return dP, dN, dD, dCa


def rhs(state, params, u_p=0.0, u_a=0.0):
    """Time derivatives ``(dP, dN, dD, dCa)`` of the model.

    Parameters
    ----------
    state : PatientState
        Current concentrations.
    params : PatientParameters
        Patient rate constants.
    u_p, u_a : float
        Nonnegative pro- and anti-inflammatory dosing rates.

    Returns
    -------
    numpy.ndarray of shape (4,)
    """
    if not isinstance(state, PatientState):
        state = PatientState.from_array(state)
    u_p = check_nonnegative(u_p, "u_p")
    u_a = check_nonnegative(u_a, "u_a")
    if params.mu_m + params.k_mp * state.P == 0.0:
        raise DomainError("mu_m + k_mp * P vanishes")
    return np.array(_derivatives(state.P, state.N, state.D, state.Ca, params, u_p, u_a))


class Label(str, enum.Enum):
    HEALTHY = "healthy"
    SEPTIC = "septic"
    ASEPTIC = "aseptic"


@dataclass(frozen=True)
class Outcome:
    """Classification of a (final) state.

    ``label`` names the basin the patient is in. ``dead`` is set when tissue
    damage has reached the death threshold; a dead patient still carries the
    septic/aseptic label of the state at which death was latched.
    """

    label: Label
    time: float = math.nan
    dead: bool = False

    @property
    def status(self):
        return "dead" if self.dead else self.label.value


def classify(state, tol_zero=DEFAULT_TOL_ZERO, params=None, time=math.nan):
    """Classify a state as healthy, septic or aseptic, flagging death.

    Healthy needs ``P, N, D < tol_zero``. Otherwise the patient is aseptic
    when the pathogen is below ``tol_zero`` and septic when it is not.
    ``params`` is accepted so callers can pass the patient along; the rules
    above do not depend on it.
    """
    if not isinstance(state, PatientState):
        state = PatientState.from_array(state)
    tol_zero = check_positive(tol_zero, "tol_zero")
    dead = state.D >= DEATH_THRESHOLD
    if state.P < tol_zero and state.N < tol_zero and state.D < tol_zero:
        label = Label.HEALTHY
    elif state.P < tol_zero:
        label = Label.ASEPTIC
    else:
        label = Label.SEPTIC
    return Outcome(label=label, time=float(time), dead=dead)
