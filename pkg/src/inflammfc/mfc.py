"""Model-free control: ultra-local model, F estimators and the iP law.

The ultra-local model replaces the unknown plant by

    dy/dt = F + alpha * u

where ``F`` lumps every unmodelled effect and is re-estimated on a sliding
window of length ``tau`` from the measured ``y`` and the applied ``u``. The
intelligent proportional (iP) law

    u = -(F_est - dy_ref/dt + k_p * e) / alpha,   e = y - y_ref

then cancels ``F`` and leaves ``de/dt + k_p * e = 0``.

Sampling convention: a controller tick ``k`` sees the node values
``y_k, y_ref_k, dy_ref_k, e_k``; the control decided at tick ``k`` is held
over ``[t_k, t_k + step)``. A window of ``w = tau / step`` intervals holds
``w + 1`` nodes and the ``w`` controls applied between them.

This module never sees a patient state. Controllers receive a
:class:`Measurement`, which carries only the two sensed channels.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import DomainError, check_finite, check_positive


class ControllerFault(ArithmeticError):
    """The control law received or produced a non-finite value."""


class EstimatorKind(str, enum.Enum):
    ALGEBRAIC = "algebraic"
    CLOSED_LOOP = "closedloop"


class Measurement(NamedTuple):
    """The only plant outputs a controller may read."""

    N: float
    Ca: float


def window_length(tau, step):
    """Number of sampling intervals in a window; ``tau`` must be a multiple of ``step``."""
    check_positive(tau, "tau")
    check_positive(step, "step")
    w = int(round(tau / step))
    if w < 1 or not math.isclose(w * step, tau, rel_tol=1e-9, abs_tol=1e-12):
        raise DomainError(f"tau={tau!r} is not a positive multiple of step={step!r}")
    return w


@dataclass(frozen=True)
class UltraLocalConfig:
    alpha: float = 2.0
    k_p: float = 0.47
    tau: float = 0.5
    estimator: EstimatorKind = EstimatorKind.ALGEBRAIC
    step: float = 1.0 / 60.0
    quadrature: str = "exact"

    def __post_init__(self):
        alpha = check_finite(self.alpha, "alpha")
        if alpha == 0.0:
            raise DomainError("alpha must be nonzero")
        check_positive(self.k_p, "k_p")
        window_length(self.tau, self.step)
        object.__setattr__(self, "estimator", EstimatorKind(self.estimator))
        if self.quadrature not in ("exact", "trapezoid"):
            raise DomainError(f"unknown quadrature {self.quadrature!r}")

    @property
    def window(self):
        return window_length(self.tau, self.step)


# -- quadrature weights -------------------------------------------------------

def _linear_kernel_weights(kernel, h, quadrature):
    """Weights ``w`` with ``w @ y ~ integral(kernel * y)`` over the node grid.

    ``"exact"`` integrates the piecewise-linear interpolant of ``y`` against a
    kernel that is itself linear on every interval.
    """
    if quadrature == "trapezoid":
        w = h * kernel.copy()
        w[0] *= 0.5
        w[-1] *= 0.5
        return w
    w = np.zeros_like(kernel)
    w[:-1] += h / 6.0 * (2.0 * kernel[:-1] + kernel[1:])
    w[1:] += h / 6.0 * (kernel[:-1] + 2.0 * kernel[1:])
    return w


def _interval_weights(kernel_antiderivative, nodes, kernel, h, quadrature):
    """Weights on the ``len(nodes) - 1`` held controls of a window."""
    if quadrature == "trapezoid":
        # Node i carries the control decided there; the last node repeats the
        # final held value, so fold its weight into the last interval.
        w = h * kernel.copy()
        w[0] *= 0.5
        w[-1] *= 0.5
        w[-2] += w[-1]
        return w[:-1]
    return np.diff(kernel_antiderivative(nodes))


def algebraic_weights(w, step, alpha, quadrature="exact"):
    """Return ``(wy, wu)`` so that ``F_est = wy @ y + wu @ u``.

    ``y`` has the ``w + 1`` node samples of the window and ``u`` the ``w``
    controls held on its intervals.
    """
    tau = w * step
    sigma = np.arange(w + 1) * step
    scale = -6.0 / tau ** 3
    wy = scale * _linear_kernel_weights(tau - 2.0 * sigma, step, quadrature)
    wu = scale * alpha * _interval_weights(
        lambda s: tau * s ** 2 / 2.0 - s ** 3 / 3.0, sigma, sigma * (tau - sigma), step, quadrature)
    return wy, wu


def closedloop_weights(w, step, quadrature="exact"):
    """Return ``(wn, wu)``: node weights for ``dy_ref, e`` and interval weights for ``u``,
    both already divided by ``tau``."""
    tau = w * step
    sigma = np.arange(w + 1) * step
    ones = np.ones(w + 1)
    wn = _linear_kernel_weights(ones, step, quadrature) / tau
    wu = _interval_weights(lambda s: s, sigma, ones, step, quadrature) / tau
    return wn, wu


# -- signal history -----------------------------------------------------------

class SignalHistory:
    """Ring buffer of the last ``capacity`` controller ticks.

    Each entry stores ``y, y_ref, y_ref_dot, e`` and the control ``u`` decided
    at that tick (NaN until :meth:`set_control` is called).
    """

    _COLUMNS = ("y", "y_ref", "y_ref_dot", "e", "u")

    def __init__(self, capacity):
        if capacity < 2:
            raise DomainError("history needs at least two samples")
        self.capacity = int(capacity)
        self._data = np.full((self.capacity, len(self._COLUMNS)), np.nan)
        self._count = 0

    def __len__(self):
        return min(self._count, self.capacity)

    @property
    def full(self):
        return self._count >= self.capacity

    def push(self, y, y_ref, y_ref_dot):
        row = self._count % self.capacity
        self._data[row] = (y, y_ref, y_ref_dot, y - y_ref, np.nan)
        self._count += 1

    def set_control(self, u):
        if self._count == 0:
            raise IndexError("no sample to attach a control to")
        self._data[(self._count - 1) % self.capacity, 4] = u

    def window(self):
        """Stored samples in chronological order, shape ``(len, 5)``."""
        n = len(self)
        start = self._count - n
        idx = np.arange(start, start + n) % self.capacity
        return self._data[idx]

    def column(self, name):
        return self.window()[:, self._COLUMNS.index(name)]


def _window_or_none(history, tau):
    if not history.full:
        return None
    w = history.capacity - 1
    return w, history.window()


def estimate_f_algebraic(history, alpha, tau, quadrature="exact"):
    """Algebraic estimate of ``F`` from measured ``y`` and applied ``u``.

    Evaluates ``-(6/tau**3) * integral_0^tau [(tau - 2s) y + alpha s (tau - s) u] ds``
    with ``s`` the time since the start of the window. Returns 0 until the
    history spans a full window.
    """
    got = _window_or_none(history, tau)
    if got is None:
        return 0.0
    w, data = got
    step = tau / w
    wy, wu = algebraic_weights(w, step, alpha, quadrature)
    return float(wy @ data[:, 0] + wu @ data[:-1, 4])


def estimate_f_closedloop(history, alpha, k_p, tau, quadrature="exact"):
    """Window average of ``dy_ref/dt - alpha * u - k_p * e``; 0 during warm-up."""
    got = _window_or_none(history, tau)
    if got is None:
        return 0.0
    w, data = got
    step = tau / w
    wn, wu = closedloop_weights(w, step, quadrature)
    return float(wn @ (data[:, 2] - k_p * data[:, 3]) - alpha * (wu @ data[:-1, 4]))


def ip_control(f_est, y_ref_dot, e, config):
    """iP law. Returns ``(commanded, applied)`` with ``applied = max(commanded, 0)``."""
    if not (math.isfinite(f_est) and math.isfinite(y_ref_dot) and math.isfinite(e)):
        raise ControllerFault(f"non-finite controller input (F={f_est}, dyref={y_ref_dot}, e={e})")
    commanded = -(f_est - y_ref_dot + config.k_p * e) / config.alpha
    if not math.isfinite(commanded):
        raise ControllerFault("non-finite control")
    return commanded, max(commanded, 0.0)


@dataclass
class LoopState:
    f_est: float = 0.0
    commanded: float = 0.0
    applied: float = 0.0


# -- estimators with the scikit-learn interface ---------------------------------

class AlgebraicFEstimator(TransformerMixin, BaseEstimator):
    """Batch version of :func:`estimate_f_algebraic`.

    ``transform`` maps rows ``[y_k, u_k]`` (``u_k`` held over the interval
    that starts at sample ``k``) to the estimate available at each sample.
    Samples before the first full window get 0.
    """

    def __init__(self, alpha=2.0, tau=0.5, step=1.0 / 60.0, quadrature="exact"):
        self.alpha = alpha
        self.tau = tau
        self.step = step
        self.quadrature = quadrature

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_features=2)
        self.window_ = window_length(self.tau, self.step)
        self.weights_ = algebraic_weights(self.window_, self.step, self.alpha, self.quadrature)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "weights_")
        X = check_array(X, ensure_min_features=2)
        w = self.window_
        out = np.zeros(X.shape[0])
        if X.shape[0] > w:
            wy, wu = self.weights_
            ywin = sliding_window_view(X[:, 0], w + 1)
            uwin = sliding_window_view(X[:-1, 1], w)
            out[w:] = ywin @ wy + uwin @ wu
        return out


class ClosedLoopFEstimator(TransformerMixin, BaseEstimator):
    """Batch version of :func:`estimate_f_closedloop` on rows ``[y_ref_dot, u, e]``."""

    def __init__(self, alpha=2.0, k_p=0.47, tau=0.5, step=1.0 / 60.0, quadrature="exact"):
        self.alpha = alpha
        self.k_p = k_p
        self.tau = tau
        self.step = step
        self.quadrature = quadrature

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_features=3)
        self.window_ = window_length(self.tau, self.step)
        self.weights_ = closedloop_weights(self.window_, self.step, self.quadrature)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "weights_")
        X = check_array(X, ensure_min_features=3)
        w = self.window_
        out = np.zeros(X.shape[0])
        if X.shape[0] > w:
            wn, wu = self.weights_
            integrand = X[:, 0] - self.k_p * X[:, 2]
            out[w:] = sliding_window_view(integrand, w + 1) @ wn \
                - self.alpha * (sliding_window_view(X[:-1, 1], w) @ wu)
        return out


# -- online controllers -----------------------------------------------------------

class IntelligentP(BaseEstimator):
    """One ultra-local loop closed by an iP controller.

    Call :meth:`reset` before a run, then :meth:`update` once per tick.
    """

    def __init__(self, alpha=2.0, k_p=0.47, tau=0.5, estimator="algebraic",
                 step=1.0 / 60.0, quadrature="exact"):
        self.alpha = alpha
        self.k_p = k_p
        self.tau = tau
        self.estimator = estimator
        self.step = step
        self.quadrature = quadrature

    @property
    def config(self):
        return UltraLocalConfig(alpha=self.alpha, k_p=self.k_p, tau=self.tau,
                                estimator=self.estimator, step=self.step,
                                quadrature=self.quadrature)

    def reset(self):
        self.config_ = self.config
        self.history_ = SignalHistory(self.config_.window + 1)
        self.state_ = LoopState()
        w = self.config_.window
        if self.config_.estimator is EstimatorKind.ALGEBRAIC:
            self.weights_ = algebraic_weights(w, self.config_.step, self.config_.alpha,
                                              self.config_.quadrature)
        else:
            self.weights_ = closedloop_weights(w, self.config_.step, self.config_.quadrature)
        return self

    def fit(self, X=None, y=None):
        """Validate the parameters and clear the loop state."""
        return self.reset()

    def estimate(self):
        """Current F estimate from the history (0 until a window is full)."""
        if not self.history_.full:
            return 0.0
        data = self.history_.window()
        cfg = self.config_
        if cfg.estimator is EstimatorKind.ALGEBRAIC:
            wy, wu = self.weights_
            return float(wy @ data[:, 0] + wu @ data[:-1, 4])
        wn, wu = self.weights_
        return float(wn @ (data[:, 2] - cfg.k_p * data[:, 3]) - cfg.alpha * (wu @ data[:-1, 4]))

    def update(self, y, y_ref, y_ref_dot, f_override=None):
        """Record a measurement and return the applied (nonnegative) control.

        ``f_override`` replaces the estimate by a known ``F``; it exists for
        checking the error dynamics against an oracle.
        """
        if not hasattr(self, "history_"):
            raise RuntimeError("call reset() or fit() before update()")
        self.history_.push(float(y), float(y_ref), float(y_ref_dot))
        f_est = self.estimate() if f_override is None else float(f_override)
        e = float(y) - float(y_ref)
        commanded, applied = ip_control(f_est, float(y_ref_dot), e, self.config_)
        self.history_.set_control(applied)
        self.state_ = LoopState(f_est=f_est, commanded=commanded, applied=applied)
        return applied


class DualLoopController(BaseEstimator):
    """Two decoupled iP loops: ``u_p`` tracks ``N``, ``u_a`` tracks ``Ca``."""

    CONFIG_KEYS = ("alpha_p", "alpha_a", "kp1", "kp2", "tau", "estimator")

    def __init__(self, alpha_p=2.0, alpha_a=2.0, kp1=0.47, kp2=0.47, tau=0.5,
                 estimator="algebraic", step=1.0 / 60.0, quadrature="exact"):
        self.alpha_p = alpha_p
        self.alpha_a = alpha_a
        self.kp1 = kp1
        self.kp2 = kp2
        self.tau = tau
        self.estimator = estimator
        self.step = step
        self.quadrature = quadrature

    def reset(self):
        common = dict(tau=self.tau, estimator=self.estimator, step=self.step,
                      quadrature=self.quadrature)
        self.loop_p_ = IntelligentP(alpha=self.alpha_p, k_p=self.kp1, **common).reset()
        self.loop_a_ = IntelligentP(alpha=self.alpha_a, k_p=self.kp2, **common).reset()
        return self

    def fit(self, X=None, y=None):
        """Validate the parameters and clear both loops."""
        return self.reset()

    def tick(self, measurement, n_ref, n_ref_dot, ca_ref, ca_ref_dot):
        """Return the applied ``(u_p, u_a)`` for one sampling instant."""
        if type(measurement) is not Measurement:
            raise TypeError("controller accepts a Measurement (N, Ca) only, "
                            f"got {type(measurement).__name__}")
        if not hasattr(self, "loop_p_"):
            raise RuntimeError("call reset() or fit() before tick()")
        u_p = self.loop_p_.update(measurement.N, n_ref, n_ref_dot)
        u_a = self.loop_a_.update(measurement.Ca, ca_ref, ca_ref_dot)
        return u_p, u_a

    @property
    def f_estimates(self):
        return self.loop_p_.state_.f_est, self.loop_a_.state_.f_est

    def to_config(self):
        return {k: (getattr(self, k).value if isinstance(getattr(self, k), enum.Enum)
                    else getattr(self, k)) for k in self.CONFIG_KEYS}

    @classmethod
    def from_config(cls, data, **kwargs):
        unknown = sorted(set(data) - set(cls.CONFIG_KEYS))
        if unknown:
            raise KeyError(f"unknown controller key {unknown[0]!r}")
        params = {}
        for key, value in data.items():
            if key == "estimator":
                try:
                    params[key] = EstimatorKind(value).value
                except ValueError:
                    raise ValueError(f"controller key 'estimator' has invalid value {value!r}") from None
            else:
                try:
                    params[key] = float(value)
                except (TypeError, ValueError):
                    raise ValueError(f"controller key {key!r} is not a number: {value!r}") from None
        params.update(kwargs)
        ctrl = cls(**params)
        ctrl.validate()
        return ctrl

    def validate(self):
        for alpha, kp in ((self.alpha_p, self.kp1), (self.alpha_a, self.kp2)):
            UltraLocalConfig(alpha=alpha, k_p=kp, tau=self.tau, estimator=self.estimator,
                             step=self.step, quadrature=self.quadrature)
        return self
