"""Direction-of-arrival estimation by normalised least squares.

An observed power vector is noise-compensated (``P - sigma2``), scaled to
unit length and compared against the equally normalised model prediction at
every candidate angle.  Normalisation removes the unknown received level, so
only the shape of the power profile carries the direction.

The argmin over angle is found on a uniform grid over (-pi, pi] followed by
a golden-section search within one grid cell of the best grid point.
"""

from dataclasses import dataclass
import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import as_finite_array, check_positive_int
from .directivity import wrap_angle
from .exceptions import (
    InvalidInputError,
    ModelDegenerateError,
    NoSignalError,
    UnidentifiableDirectionError,
)
from .power import PowerVector

DEFAULT_GRID_POINTS = 720
REFINE_TOL = 1e-6
FLAT_OBJECTIVE_TOL = 1e-14
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class DoaEstimate:
    psi_hat: float
    residual: float
    grid_resolution: float
    refined: bool

    def to_dict(self):
        return {
            "psi_hat_rad": self.psi_hat,
            "psi_hat_deg": math.degrees(self.psi_hat),
            "residual": self.residual,
            "grid_resolution_rad": self.grid_resolution,
            "refined": self.refined,
        }


def angular_error(a, b):
    """Signed difference ``a - b`` wrapped onto (-pi, pi]."""
    return wrap_angle(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))


def angle_grid(grid_points):
    """Uniform grid of ``grid_points`` angles covering (-pi, pi], ascending."""
    grid_points = check_positive_int(grid_points, "grid_points", minimum=2)
    step = 2.0 * np.pi / grid_points
    return -np.pi + step * np.arange(1, grid_points + 1)


def predict_power(model, psi):
    """Model power ``alpha g_n h_n(psi) + sigma_n^2``.

    Returns a :class:`PowerVector` for a scalar angle and an array of shape
    ``psi.shape + (N,)`` otherwise.  A scalar prediction with a negative
    entry (the Fourier fit can undershoot) is returned as a raw array.
    """
    power = model.signal_power(psi) + model.noise.sigma2
    if np.ndim(psi) == 0 and np.all(power >= 0):
        return PowerVector(power=power, frame_length=model.noise.frame_length)
    return power


def observation_matrix(model, obs):
    """Coerce a PowerVector, a vector or a (T, N) matrix to a (T, N) array."""
    if isinstance(obs, PowerVector):
        power = obs.power[np.newaxis, :]
    else:
        power = as_finite_array(obs, "obs")
        if power.ndim == 1:
            power = power[np.newaxis, :]
    if power.ndim != 2 or power.shape[1] != model.n_mics:
        raise InvalidInputError(
            f"observation has shape {power.shape}; model expects {model.n_mics} microphones"
        )
    return power


def _sum_sq(x):
    # last-axis reduction: the per-row result does not depend on the batch size
    return np.sum(x * x, axis=-1)


def normalized_observation(model, power, no_signal_gate=True):
    """Noise-compensated, unit-norm observation rows.

    With the gate on, a row whose compensated energy is below the summed
    power-noise variance raises :class:`NoSignalError`; a zero-energy row
    always does.
    """
    compensated = power - model.noise.sigma2
    energy = _sum_sq(compensated)
    weak = energy == 0.0
    if no_signal_gate:
        weak |= energy < float(np.sum(model.noise.power_noise_variance))
    if np.any(weak):
        raise NoSignalError(
            f"{int(np.sum(weak))} observation(s) indistinguishable from the noise floor"
        )
    return compensated / np.sqrt(energy)[:, np.newaxis]


def normalized_prediction(model, psi):
    """Unit-norm noise-compensated model profile; shape ``psi.shape + (N,)``."""
    psi = np.asarray(psi, dtype=float)
    predicted = model.signal_power(psi) + model.noise.sigma2
    # the sigma2 round trip mirrors the estimator formula literally
    compensated = predicted - model.noise.sigma2
    norm = np.sqrt(_sum_sq(compensated))
    if np.any(norm == 0.0):
        bad = np.atleast_1d(psi)[np.atleast_1d(norm) == 0.0][0]
        raise ModelDegenerateError(f"model predicts zero compensated power at psi={bad!r}")
    return compensated / norm[..., np.newaxis]


def _sq_dist(u, v):
    return _sum_sq(u - v)


def objective(model, obs, psi, no_signal_gate=True):
    """Normalised least-squares objective of one observation at angle(s) ``psi``."""
    u = normalized_observation(model, observation_matrix(model, obs), no_signal_gate)[0]
    values = _sq_dist(u, normalized_prediction(model, psi))
    return float(values) if np.ndim(psi) == 0 else values


def _golden_refine(model, u, lo, hi, tol):
    """Golden-section search run in lockstep on one bracket per observation row."""
    def f(psi):
        return _sq_dist(u, normalized_prediction(model, psi))

    a, b = lo, hi
    c = a + (1.0 - _INV_PHI) * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    width = float(np.max(b - a))
    n_iter = max(0, math.ceil(math.log(tol / width) / math.log(_INV_PHI))) if width > tol else 0
    for _ in range(n_iter):
        left = fc < fd
        a, b = np.where(left, a, c), np.where(left, d, b)
        probe = np.where(left, a + (1.0 - _INV_PHI) * (b - a), a + _INV_PHI * (b - a))
        fp = f(probe)
        c, d, fc, fd = (
            np.where(left, probe, d),
            np.where(left, c, probe),
            np.where(left, fp, fd),
            np.where(left, fc, fp),
        )
    take_c = fc < fd
    return np.where(take_c, c, d), np.where(take_c, fc, fd)


def estimate_many(model, powers, grid_points=DEFAULT_GRID_POINTS, refine=True,
                  no_signal_gate=True):
    """Estimate the direction of every row of ``powers`` (shape (T, N)).

    Returns ``(psi_hat, residual)`` arrays of length T.  Identical in result
    to calling :func:`estimate` row by row.
    """
    power = observation_matrix(model, powers)
    u = normalized_observation(model, power, no_signal_gate)
    grid = angle_grid(grid_points)
    profiles = normalized_prediction(model, grid)  # (G, N)
    values = _sq_dist(u[:, np.newaxis, :], profiles[np.newaxis, :, :])  # (T, G)
    flat = np.ptp(values, axis=1) < FLAT_OBJECTIVE_TOL
    if np.any(flat):
        raise UnidentifiableDirectionError(
            "objective is flat over the angle grid; the model carries no directional information"
        )
    best = np.argmin(values, axis=1)  # first index wins ties: smallest angle
    psi = grid[best]
    residual = values[np.arange(len(best)), best]
    if refine:
        step = 2.0 * np.pi / grid_points
        psi_ref, res_ref = _golden_refine(model, u, psi - step, psi + step, REFINE_TOL)
        better = res_ref < residual
        psi = np.where(better, psi_ref, psi)
        residual = np.where(better, res_ref, residual)
    return wrap_angle(psi), residual


def estimate(model, obs, grid_points=DEFAULT_GRID_POINTS, refine=True, no_signal_gate=True):
    """Direction of arrival of a single observation as a :class:`DoaEstimate`."""
    power = observation_matrix(model, obs)
    if power.shape[0] != 1:
        raise InvalidInputError("estimate takes one observation; use estimate_many for batches")
    psi, residual = estimate_many(model, power, grid_points, refine, no_signal_gate)
    return DoaEstimate(
        psi_hat=float(np.atleast_1d(psi)[0]),
        residual=float(residual[0]),
        grid_resolution=2.0 * np.pi / grid_points,
        refined=bool(refine),
    )


class PowerDOAEstimator(BaseEstimator):
    """Scikit-learn style DOA estimator.

    ``fit(X, y)`` trains the directivity model from powers ``X`` (K, N)
    measured at known angles ``y`` (radians); ``predict(X)`` returns the
    estimated angle of every row of ``X``.

    Parameters
    ----------
    order : int or "bic"
    candidate_orders : sequence of int, optional
    facing_angles : array-like, optional
    grid_points : int
    refine : bool
    no_signal_gate : bool
    """

    def __init__(self, order=7, candidate_orders=None, facing_angles=None,
                 grid_points=DEFAULT_GRID_POINTS, refine=True, no_signal_gate=True):
        self.order = order
        self.candidate_orders = candidate_orders
        self.facing_angles = facing_angles
        self.grid_points = grid_points
        self.refine = refine
        self.no_signal_gate = no_signal_gate

    def fit(self, X, y, noise=None, sigma2=None, frame_length=None):
        from .training import DirectivityRegressor

        reg = DirectivityRegressor(
            order=self.order,
            candidate_orders=self.candidate_orders,
            facing_angles=self.facing_angles,
        )
        reg.fit(y, X, noise=noise, sigma2=sigma2, frame_length=frame_length)
        self.model_ = reg.model_
        self.report_ = reg.report_
        self.order_ = reg.order_
        self.n_features_in_ = reg.n_mics_
        return self

    @classmethod
    def from_model(cls, model, **params):
        """Wrap an already trained :class:`DirectivityModel`."""
        est = cls(order=model.order, facing_angles=model.facing_angles, **params)
        est.model_ = model
        est.order_ = model.order
        est.n_features_in_ = model.n_mics
        return est

    def predict(self, X):
        check_is_fitted(self, "model_")
        psi, _ = estimate_many(self.model_, X, self.grid_points, self.refine, self.no_signal_gate)
        return psi

    def score(self, X, y):
        """Negative RMS angular error in radians (higher is better)."""
        err = angular_error(self.predict(X), as_finite_array(y, "y", ndim=1))
        return -float(np.sqrt(np.mean(err**2)))
