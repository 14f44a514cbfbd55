"""Reference trajectories for the measured outputs ``N`` and ``Ca``.

A healthy virtual patient is simulated without treatment; its free response
is then rescaled:

    N_ref  = c1 * N_free
    Ca_ref = (Ca_free - ca_rest) * c2 + ca_rest
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from ._validation import DomainError, check_grid, check_nonnegative
from .integrate import IntegratorConfig, integrate
from .patient import DEFAULT_TOL_ZERO, Label, PatientState, classify, reference_parameters, rhs

CA_REST = 0.125
# Reference rates; initial load chosen so the free N response peaks 10-15 h in.
REFERENCE_INITIAL = PatientState(P=0.8, N=0.0, D=0.0, Ca=0.125)
REFERENCE_COLUMNS = ("t", "Nref", "Caref", "Nref_dot", "Caref_dot")


class InvalidReferencePatientError(ValueError):
    """The patient chosen to generate a reference does not recover on its own."""


@dataclass(frozen=True)
class ReferencePair:
    t: np.ndarray
    N_star: np.ndarray
    Ca_star: np.ndarray
    N_star_dot: np.ndarray
    Ca_star_dot: np.ndarray
    c1: float = 4.0
    c2: float = 1.0
    ca_rest: float = CA_REST

    def __len__(self):
        return len(self.t)

    @property
    def step(self):
        return float(self.t[1] - self.t[0])

    def at(self, k):
        return self.N_star[k], self.N_star_dot[k], self.Ca_star[k], self.Ca_star_dot[k]

    def to_csv(self, path):
        cols = (self.t, self.N_star, self.Ca_star, self.N_star_dot, self.Ca_star_dot)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(REFERENCE_COLUMNS)
            for row in zip(*cols):
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, c1=float("nan"), c2=float("nan"), ca_rest=CA_REST):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != REFERENCE_COLUMNS:
                raise ValueError(f"reference file header must be {','.join(REFERENCE_COLUMNS)}")
            data = np.array([[float(v) for v in row] for row in reader])
        check_grid(data[:, 0], data[1, 0] - data[0, 0])
        return cls(t=data[:, 0], N_star=data[:, 1], Ca_star=data[:, 2],
                   N_star_dot=data[:, 3], Ca_star_dot=data[:, 4], c1=c1, c2=c2, ca_rest=ca_rest)


def reference_patient():
    return reference_parameters(initial_state=REFERENCE_INITIAL, label="reference")


def generate_free_response(healthy_params=None, healthy_initial=None, config=None,
                           tol_zero=DEFAULT_TOL_ZERO):
    """Untreated trajectory of a patient that must end healthy.

    Raises
    ------
    InvalidReferencePatientError
        If the untreated patient does not end in the healthy state.
    """
    params = healthy_params if healthy_params is not None else reference_patient()
    initial = healthy_initial if healthy_initial is not None else params.initial_state
    traj = integrate(initial, params, config=config or IntegratorConfig())
    outcome = classify(traj.final_state, tol_zero, params, time=traj.t[-1])
    if outcome.dead or outcome.label is not Label.HEALTHY:
        raise InvalidReferencePatientError(
            f"reference patient {params.label or '<unnamed>'!r} ends {outcome.status} "
            f"at t={traj.t[-1]:g} h without treatment")
    return traj


class ReferenceScaler(TransformerMixin, BaseEstimator):
    """Scale free ``[N, Ca]`` samples into ``[N_ref, Ca_ref, dN_ref, dCa_ref]``.

    Derivatives are second-order central differences (one-sided at the ends).
    """

    def __init__(self, c1=4.0, c2=1.0, ca_rest=CA_REST, step=1.0 / 60.0):
        self.c1 = c1
        self.c2 = c2
        self.ca_rest = ca_rest
        self.step = step

    def fit(self, X, y=None):
        check_nonnegative(self.c1, "c1")
        check_nonnegative(self.c2, "c2")
        X = check_array(X, ensure_min_samples=2)
        if X.shape[1] != 2:
            raise DomainError("expected columns [N, Ca]")
        self.n_features_in_ = 2
        return self

    def transform(self, X):
        X = check_array(X, ensure_min_samples=2)
        n_ref = self.c1 * X[:, 0]
        ca_ref = (X[:, 1] - self.ca_rest) * self.c2 + self.ca_rest
        return np.column_stack([
            n_ref, ca_ref,
            np.gradient(n_ref, self.step), np.gradient(ca_ref, self.step),
        ])


def scale_reference(free, c1=4.0, c2=1.0, ca_rest=CA_REST, analytic_params=None):
    """Build a :class:`ReferencePair` from a free response.

    With ``analytic_params`` the derivatives come from the model right-hand
    side instead of finite differences; this is only meant for cross-checks.
    """
    scaler = ReferenceScaler(c1=c1, c2=c2, ca_rest=ca_rest, step=free.step)
    out = scaler.fit_transform(np.column_stack([free.N, free.Ca]))
    n_dot, ca_dot = out[:, 2], out[:, 3]
    if analytic_params is not None:
        d = np.array([rhs(PatientState.from_array(x), analytic_params) for x in free.states])
        n_dot, ca_dot = c1 * d[:, 1], c2 * d[:, 3]
    return ReferencePair(t=free.t.copy(), N_star=out[:, 0], Ca_star=out[:, 1],
                         N_star_dot=n_dot, Ca_star_dot=ca_dot,
                         c1=float(c1), c2=float(c2), ca_rest=float(ca_rest))


def default_reference(config=None, c1=4.0, c2=1.0):
    return scale_reference(generate_free_response(config=config), c1=c1, c2=c2)
