"""Training of the per-microphone directivity model.

The fit minimises the noise-weighted loss

    V = sum_n L / (2 sigma_n^4) sum_k (P_n(psi_k) - alpha g_n h_n(psi_k) - sigma_n^2)^2

subject to ``alpha > 0``, ``g_n > 0``, ``sum g_n^2 = 1`` and ``h_n(psi_n) = 1``
at the facing angle of every microphone.  The constraints are removed by
re-parameterisation:

* ``alpha = exp(a)``
* ``g = exp(u) / ||exp(u)||`` with ``u_0 = 0`` pinned (the map is invariant to
  a common shift of ``u``, so one entry carries no information)
* the constant Fourier coefficient of each microphone is solved out of the
  peak constraint, leaving only the harmonic coefficients free.

What remains is an unconstrained nonlinear least-squares problem with exactly
``N (2D + 1)`` free parameters, solved with Levenberg-Marquardt.
"""

from dataclasses import dataclass, field, asdict
import logging
import math

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_finite_array, as_positive_vector, check_order
from .directivity import FourierBasis, wrap_angle
from .exceptions import InvalidInputError, OrderSelectionError
from .power import NoiseStats, PowerVector, compute_power

logger = logging.getLogger(__name__)

GAIN_NORM_TOL = 1e-8
PEAK_TOL = 1e-6
MIN_BACKGROUND_SAMPLES = 1000
BIC_TIE_TOL = 1e-9


def default_facing_angles(n_mics):
    """Uniform circular array: mic 0 faces 0, mic 1 faces -360/N degrees, ..."""
    return wrap_angle(-2.0 * np.pi * np.arange(n_mics) / n_mics)


@dataclass(frozen=True)
class TrainingSet:
    """Labelled power measurements.

    ``powers`` has shape (K, N): one row per training direction.
    """

    angles: np.ndarray
    powers: np.ndarray
    noise: NoiseStats
    facing_angles: np.ndarray

    def __post_init__(self):
        angles = wrap_angle(as_finite_array(self.angles, "angles", ndim=1))
        powers = as_finite_array(self.powers, "powers", ndim=2)
        facing = wrap_angle(as_finite_array(self.facing_angles, "facing_angles", ndim=1))
        if powers.shape[0] != angles.shape[0]:
            raise InvalidInputError(
                f"powers has {powers.shape[0]} rows but there are {angles.shape[0]} angles"
            )
        if powers.shape[1] != facing.shape[0]:
            raise InvalidInputError(
                f"powers has {powers.shape[1]} columns but there are {facing.shape[0]} facing angles"
            )
        if self.noise.n_mics != facing.shape[0]:
            raise InvalidInputError("noise sigma2 length does not match the microphone count")
        if np.any(powers < 0):
            raise InvalidInputError("powers: entries must be >= 0")
        object.__setattr__(self, "angles", np.atleast_1d(angles))
        object.__setattr__(self, "powers", powers)
        object.__setattr__(self, "facing_angles", np.atleast_1d(facing))

    @classmethod
    def from_power_vectors(cls, angles, vectors, noise, facing_angles):
        return cls(angles, np.stack([v.power for v in vectors]), noise, facing_angles)

    @property
    def n_mics(self):
        return self.powers.shape[1]

    @property
    def n_angles(self):
        return self.powers.shape[0]


def _rowwise_dot(rows, theta):
    """``rows @ theta.T`` without BLAS, so each entry's rounding is independent of batch shape."""
    return np.sum(rows[..., np.newaxis, :] * theta, axis=-1)


@dataclass(frozen=True)
class DirectivityModel:
    """Trained array fingerprint.

    Attributes
    ----------
    alpha : float
        Received power level during training.
    gains : ndarray, shape (N,)
        Positive microphone gains with unit square sum.
    theta : ndarray, shape (N, 2D+1)
        Fourier coefficients, one row per microphone.
    order : int
    noise : NoiseStats
    facing_angles : ndarray, shape (N,)
    """

    alpha: float
    gains: np.ndarray
    theta: np.ndarray
    order: int
    noise: NoiseStats
    facing_angles: np.ndarray

    def __post_init__(self):
        order = check_order(self.order)
        basis = FourierBasis(order)
        theta = as_finite_array(self.theta, "theta")
        if theta.ndim == 1:
            theta = theta[np.newaxis, :]
        basis.check_coefficients(theta)
        n_mics = theta.shape[0]
        gains = as_positive_vector(self.gains, "gains", length=n_mics)
        facing = np.atleast_1d(wrap_angle(as_finite_array(self.facing_angles, "facing_angles", ndim=1)))
        if facing.shape[0] != n_mics or self.noise.n_mics != n_mics:
            raise InvalidInputError("gains, theta, facing_angles and sigma2 must agree on the microphone count")
        alpha = float(self.alpha)
        if not math.isfinite(alpha) or alpha <= 0:
            raise InvalidInputError("alpha must be > 0")
        if abs(np.sum(gains**2) - 1.0) > GAIN_NORM_TOL:
            raise InvalidInputError(f"gains must have unit square sum (got {np.sum(gains**2)!r})")
        peaks = np.einsum("nj,nj->n", basis.matrix(facing), theta)
        if np.max(np.abs(peaks - 1.0)) > PEAK_TOL:
            raise InvalidInputError("directivity must equal 1 at each microphone's facing angle")
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "facing_angles", facing)

    @property
    def n_mics(self):
        return self.theta.shape[0]

    @property
    def basis(self):
        return FourierBasis(self.order)

    def sensitivity(self, psi):
        """h_n(psi) for all microphones; shape ``psi.shape + (N,)``."""
        return _rowwise_dot(self.basis.matrix(psi), self.theta)

    def sensitivity_derivative(self, psi):
        return _rowwise_dot(self.basis.derivative_matrix(psi), self.theta)

    def signal_power(self, psi):
        """Noise-free received power ``alpha g_n h_n(psi)``."""
        return self.alpha * self.gains * self.sensitivity(psi)


@dataclass(frozen=True)
class SolverConfig:
    """Levenberg-Marquardt settings.

    ``gtol`` is applied to the scale-free gradient measure
    ``max_j |J_j . r| / (||J_j|| ||r||)``.  ``init_jitter`` adds seeded
    Gaussian noise of that standard deviation to the reduced starting point,
    which is how restarts from different initialisations are produced.
    """

    max_iter: int = 500
    ftol: float = 1e-10
    gtol: float = 1e-8
    xtol: float = 1e-12
    tau: float = 1e-3
    ridge: float = 1e-9
    init_jitter: float = 0.0
    seed: int = 0


@dataclass
class FitReport:
    order: int
    loss: float
    initial_loss: float
    iterations: int
    converged: bool
    message: str
    constraint_residuals: dict
    bic: float
    n_params: int
    loss_history: list = field(default_factory=list)
    degenerate_mics: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def n_free_parameters(n_mics, order):
    """Free parameters after removing the N peak and the gain-norm constraints."""
    return n_mics * (2 * order + 1)


def bic_score(loss_value, n_params, n_obs):
    """BIC from the weighted loss.

    The loss is exactly ``-2 log-likelihood`` up to a constant for Gaussian
    power noise, so it enters with unit weight.
    """
    return float(loss_value + n_params * math.log(n_obs))


def loss(model, data):
    """Weighted least-squares training loss of ``model`` on ``data``."""
    _check_compatible(model, data)
    predicted = model.signal_power(data.angles) + data.noise.sigma2
    weights = data.noise.frame_length / (2.0 * data.noise.sigma2**2)
    return float(np.sum(weights * (data.powers - predicted) ** 2))


def _check_compatible(model, data):
    if model.n_mics != data.n_mics:
        raise InvalidInputError(
            f"model has {model.n_mics} microphones but the data has {data.n_mics}"
        )


class _Problem:
    """Reduced unconstrained parameterisation of the training problem."""

    def __init__(self, data, order):
        self.data = data
        self.order = order
        self.basis = FourierBasis(order)
        self.n_mics = data.n_mics
        phi_k = self.basis.matrix(data.angles)[:, 1:]  # (K, 2D)
        phi_n = self.basis.matrix(data.facing_angles)[:, 1:]  # (N, 2D)
        # h_nk = 1 + A_nk . phi_n once the constant term is solved out
        self.design = phi_k[np.newaxis, :, :] - phi_n[:, np.newaxis, :]  # (N, K, 2D)
        self.sqrt_w = np.sqrt(data.noise.frame_length / (2.0 * data.noise.sigma2**2))  # (N,)
        self.target = (data.powers - data.noise.sigma2).T  # (N, K)
        self.n_harm = 2 * order
        self.n_params = 1 + (self.n_mics - 1) + self.n_mics * self.n_harm

    def unpack(self, x):
        log_alpha = x[0]
        u = np.concatenate([[0.0], x[1 : self.n_mics]])
        phi = x[self.n_mics :].reshape(self.n_mics, self.n_harm)
        e = np.exp(u - u.max())
        gains = e / np.linalg.norm(e)
        return math.exp(log_alpha), gains, phi

    def pack(self, alpha, gains, phi):
        u = np.log(gains) - math.log(gains[0])
        return np.concatenate([[math.log(alpha)], u[1:], phi.ravel()])

    def sensitivity(self, phi):
        return 1.0 + np.einsum("nkj,nj->nk", self.design, phi)

    def residuals(self, x):
        alpha, gains, phi = self.unpack(x)
        h = self.sensitivity(phi)
        model = alpha * gains[:, np.newaxis] * h
        return (self.sqrt_w[:, np.newaxis] * (self.target - model)).ravel()

    def jacobian(self, x):
        alpha, gains, phi = self.unpack(x)
        N, K = self.target.shape
        h = self.sensitivity(phi)
        ag = alpha * gains  # (N,)
        scale = -self.sqrt_w[:, np.newaxis]  # d residual = -sqrt(w) d model
        J = np.zeros((N, K, self.n_params))
        J[:, :, 0] = scale * ag[:, np.newaxis] * h
        # d g_n / d u_j = g_n (delta_nj - g_j^2)
        dlog_g = np.eye(N) - gains[np.newaxis, :] ** 2  # (N, N) indexed [n, j]
        J[:, :, 1:N] = (scale * ag[:, np.newaxis] * h)[:, :, np.newaxis] * dlog_g[:, np.newaxis, 1:]
        for n in range(N):
            start = N + n * self.n_harm
            J[n, :, start : start + self.n_harm] = scale[n] * ag[n] * self.design[n]
        return J.reshape(N * K, self.n_params)

    def to_model(self, x):
        alpha, gains, phi = self.unpack(x)
        phi_n = self.basis.matrix(self.data.facing_angles)[:, 1:]
        theta0 = 1.0 - np.einsum("nj,nj->n", phi_n, phi)
        theta = np.concatenate([theta0[:, np.newaxis], phi], axis=1)
        return DirectivityModel(
            alpha=alpha,
            gains=gains,
            theta=theta,
            order=self.order,
            noise=self.data.noise,
            facing_angles=self.data.facing_angles,
        )

    def initial_guess(self, ridge):
        data = self.data
        compensated = data.powers - data.noise.sigma2  # (K, N)
        alpha0 = max(float(np.mean(compensated)), np.finfo(float).tiny ** 0.5)
        g0 = 1.0 / math.sqrt(self.n_mics)
        Phi = self.basis.matrix(data.angles)  # (K, 2D+1)
        gram = Phi.T @ Phi
        reg = ridge * np.trace(gram) / gram.shape[0] * np.eye(gram.shape[0])
        theta = np.linalg.solve(gram + reg, Phi.T @ (compensated / (alpha0 * g0))).T  # (N, 2D+1)
        peaks = np.einsum("nj,nj->n", self.basis.matrix(data.facing_angles), theta)
        peak_power = alpha0 * g0 * peaks
        floor = 1e-6 * max(float(np.max(np.abs(peak_power))), alpha0 * g0)
        phi = np.empty((self.n_mics, self.n_harm))
        for n in range(self.n_mics):
            if peak_power[n] > floor:
                phi[n] = theta[n, 1:] / peaks[n]
            else:
                # no usable peak: fall back to a flat pattern at the noise-free level
                peak_power[n] = floor
                phi[n] = 0.0
        alpha = float(np.linalg.norm(peak_power))
        return self.pack(alpha, peak_power / alpha, phi)


def _levenberg_marquardt(residual_fn, jacobian_fn, x0, config):
    """Levenberg-Marquardt with Marquardt scaling and the Nielsen damping update.

    Returns ``(x, loss_history, iterations, converged, message)``; the loss
    history holds the initial loss followed by every accepted step.
    """
    x = np.array(x0, dtype=float)
    r = residual_fn(x)
    f = float(r @ r)
    history = [f]
    if f == 0.0:
        return x, history, 0, True, "zero residual at start"
    J = jacobian_fn(x)
    A = J.T @ J
    g = J.T @ r
    diag = np.maximum(np.diag(A).copy(), np.finfo(float).eps)
    mu = config.tau * float(np.max(diag))
    nu = 2.0
    for it in range(1, config.max_iter + 1):
        col_norms = np.sqrt(np.maximum(np.diag(A), 0.0))
        denom = col_norms * math.sqrt(f)
        scaled_grad = np.abs(g) / np.where(denom > 0, denom, 1.0)
        if f == 0.0 or np.max(scaled_grad) <= config.gtol:
            return x, history, it - 1, True, "gradient tolerance reached"
        diag = np.maximum(diag, np.diag(A))
        try:
            step = np.linalg.solve(A + mu * np.diag(diag), -g)
        except np.linalg.LinAlgError:
            mu *= nu
            nu *= 2.0
            continue
        if np.linalg.norm(step) <= config.xtol * (np.linalg.norm(x) + config.xtol):
            return x, history, it, True, "step tolerance reached"
        x_new = x + step
        r_new = residual_fn(x_new)
        f_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else math.inf
        predicted = -float(step @ (2.0 * g + A @ step))
        rho = (f - f_new) / predicted if predicted > 0 else -1.0
        if rho > 0:
            actual_rel = (f - f_new) / f
            predicted_rel = predicted / f
            x, r, f = x_new, r_new, f_new
            history.append(f)
            J = jacobian_fn(x)
            A = J.T @ J
            g = J.T @ r
            mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
            if actual_rel <= config.ftol and predicted_rel <= config.ftol:
                return x, history, it, True, "relative loss decrease below tolerance"
        else:
            mu *= nu
            nu *= 2.0
    return x, history, config.max_iter, False, "iteration limit reached"


def constraint_residuals(model):
    """Maximum violation of each constraint class."""
    peaks = np.einsum("nj,nj->n", model.basis.matrix(model.facing_angles), model.theta)
    return {
        "alpha_positive": max(0.0, -model.alpha),
        "gains_positive": max(0.0, -float(np.min(model.gains))),
        "gain_norm": abs(float(np.sum(model.gains**2)) - 1.0),
        "peak": float(np.max(np.abs(peaks - 1.0))),
    }


def flat_microphones(data, rtol=1e-12):
    """Indices of microphones whose training power does not vary with angle."""
    spread = np.ptp(data.powers, axis=0)
    scale = np.max(np.abs(data.powers), axis=0)
    return [int(n) for n in np.flatnonzero(spread <= rtol * np.maximum(scale, np.finfo(float).tiny))]


def fit(data, order, config=None):
    """Fit a :class:`DirectivityModel` of the given Fourier order.

    Returns ``(model, report)``.  A fit that exhausts the iteration budget is
    returned with ``report.converged = False``; callers decide what to do.
    """
    config = config or SolverConfig()
    order = check_order(order)
    n_obs = data.n_mics * data.n_angles
    n_params = n_free_parameters(data.n_mics, order)
    if n_obs < n_params or data.n_angles < 2 * order + 1:
        raise InvalidInputError(
            f"order {order} needs {2 * order + 1} training angles per microphone, "
            f"got {data.n_angles}"
        )
    problem = _Problem(data, order)
    x0 = problem.initial_guess(config.ridge)
    if config.init_jitter > 0:
        x0 = x0 + config.init_jitter * np.random.default_rng(config.seed).standard_normal(x0.shape)
    x, history, iterations, converged, message = _levenberg_marquardt(
        problem.residuals, problem.jacobian, x0, config
    )
    model = problem.to_model(x)
    final_loss = loss(model, data)
    start = problem.to_model(x0)
    start_loss = loss(start, data)
    if final_loss > start_loss:
        # only reachable through round-off when the warm start is already optimal
        model, final_loss = start, start_loss
    flagged = flat_microphones(data)
    if flagged:
        logger.warning("microphones %s show no directional variation in the training data", flagged)
    report = FitReport(
        order=order,
        loss=final_loss,
        initial_loss=start_loss,
        iterations=iterations,
        converged=converged,
        message=message,
        constraint_residuals=constraint_residuals(model),
        bic=bic_score(final_loss, n_params, n_obs),
        n_params=n_params,
        loss_history=history,
        degenerate_mics=flagged,
    )
    return model, report


def select_order(data, candidate_orders, config=None):
    """Fit every candidate order and keep the BIC minimiser.

    Returns ``(best_order, scores, fits)`` where ``scores`` maps order -> BIC
    for the orders that fitted and ``fits`` maps order -> ``(model, report)``.
    Orders within ``1e-9`` of each other in BIC resolve to the smaller one.
    """
    scores, fits, failures = {}, {}, {}
    for order in sorted(set(int(d) for d in candidate_orders)):
        try:
            model, report = fit(data, order, config)
        except InvalidInputError as exc:
            failures[order] = exc
            continue
        if not report.converged:
            failures[order] = report
            continue
        scores[order] = report.bic
        fits[order] = (model, report)
    if not scores:
        raise OrderSelectionError("no candidate order could be fitted", failures)
    best = None
    for order in sorted(scores):
        if best is None or scores[order] < scores[best] - BIC_TIE_TOL:
            best = order
    return best, scores, fits


def estimate_noise_floor(background):
    """Per-microphone noise variance from a background-only recording."""
    if background.frame_length < MIN_BACKGROUND_SAMPLES:
        raise InvalidInputError(
            f"background recording needs >= {MIN_BACKGROUND_SAMPLES} samples, "
            f"got {background.frame_length}"
        )
    pv = compute_power(background)
    if np.any(pv.power <= 0):
        raise InvalidInputError("background power is zero for some microphone; sigma2 must be > 0")
    return NoiseStats(sigma2=pv.power, frame_length=pv.frame_length)


class DirectivityRegressor(RegressorMixin, BaseEstimator):
    """Scikit-learn style wrapper around :func:`fit` / :func:`select_order`.

    ``X`` holds training angles in radians (shape (K,) or (K, 1)), ``y`` the
    measured powers (K, N).  ``predict`` returns the model power including the
    noise floor.

    Parameters
    ----------
    order : int or "bic"
        Fixed Fourier order, or ``"bic"`` to choose among ``candidate_orders``.
    candidate_orders : sequence of int, optional
        Defaults to ``range(0, 12)`` truncated to what the data can support.
    facing_angles : array-like, optional
        Facing angle per microphone; defaults to a uniform circular array.
    max_iter, ftol, gtol : solver settings, see :class:`SolverConfig`.
    """

    def __init__(self, order=7, candidate_orders=None, facing_angles=None,
                 max_iter=500, ftol=1e-10, gtol=1e-8):
        self.order = order
        self.candidate_orders = candidate_orders
        self.facing_angles = facing_angles
        self.max_iter = max_iter
        self.ftol = ftol
        self.gtol = gtol

    def _solver_config(self):
        return SolverConfig(max_iter=self.max_iter, ftol=self.ftol, gtol=self.gtol)

    def fit(self, X, y, noise=None, sigma2=None, frame_length=None):
        """Fit from angles ``X`` and powers ``y``.

        Pass either a :class:`NoiseStats` as ``noise`` or ``sigma2`` together
        with ``frame_length``.
        """
        angles = _angles_from_X(X)
        powers = as_finite_array(y, "y", ndim=2)
        if noise is None:
            if sigma2 is None or frame_length is None:
                raise InvalidInputError("pass noise=NoiseStats(...) or sigma2 and frame_length")
            noise = NoiseStats(np.broadcast_to(np.asarray(sigma2, float), (powers.shape[1],)).copy(), frame_length)
        facing = self.facing_angles
        if facing is None:
            facing = default_facing_angles(powers.shape[1])
        data = TrainingSet(angles, powers, noise, np.asarray(facing, dtype=float))
        config = self._solver_config()
        if self.order == "bic":
            max_order = (data.n_angles - 1) // 2
            candidates = self.candidate_orders
            if candidates is None:
                candidates = range(0, min(11, max_order) + 1)
            self.order_, self.bic_scores_, fits = select_order(data, candidates, config)
            self.model_, self.report_ = fits[self.order_]
        else:
            self.model_, self.report_ = fit(data, self.order, config)
            self.order_ = self.model_.order
            self.bic_scores_ = {self.order_: self.report_.bic}
        self.n_features_in_ = 1
        self.n_mics_ = data.n_mics
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        angles = _angles_from_X(X)
        return self.model_.signal_power(angles) + self.model_.noise.sigma2


def _angles_from_X(X):
    arr = as_finite_array(X, "X")
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise InvalidInputError(f"X: expected angles of shape (n,) or (n, 1), got {arr.shape}")
    return arr


__all__ = [
    "TrainingSet",
    "DirectivityModel",
    "SolverConfig",
    "FitReport",
    "DirectivityRegressor",
    "PowerVector",
    "bic_score",
    "constraint_residuals",
    "default_facing_angles",
    "estimate_noise_floor",
    "fit",
    "loss",
    "n_free_parameters",
    "select_order",
]
