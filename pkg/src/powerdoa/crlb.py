"""Fisher information and Cramér-Rao lower bound for the DOA angle.

The power vector is modelled as ``P ~ N(alpha G h(psi) + sigma2, lambda I)``
with a single power-noise variance ``lambda = 2 sigma^4 / L`` shared by all
microphones.  The unknowns are ``(psi, alpha)``; the bound on ``psi`` is the
(1, 1) entry of the inverse 2x2 Fisher information.
"""

from dataclasses import dataclass
import math

import numpy as np

from ._validation import check_positive_int
from .directivity import wrap_angle
from .exceptions import InvalidInputError

DEGENERACY_RTOL = 1e-12


@dataclass(frozen=True)
class SnrSpec:
    """Signal level ``alpha`` and power-noise variance ``lam``."""

    alpha: float
    lam: float

    def __post_init__(self):
        for name in ("alpha", "lam"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value <= 0:
                raise InvalidInputError(f"{name} must be a positive finite number")
            object.__setattr__(self, name, value)

    @property
    def snr_db(self):
        return 10.0 * math.log10(self.alpha**2 / self.lam)

    @classmethod
    def from_snr_db(cls, snr_db, lam):
        return cls(alpha=math.sqrt(lam * 10.0 ** (snr_db / 10.0)), lam=lam)

    @classmethod
    def from_model(cls, model):
        """Trained level and the mean per-microphone power-noise variance."""
        return cls(alpha=model.alpha, lam=equal_variance_lambda(model.noise))


def equal_variance_lambda(noise):
    """Collapse per-microphone ``2 sigma_n^4 / L`` to one variance by averaging."""
    return float(np.mean(noise.power_noise_variance))


def lambda_spread(noise):
    """(min, max) of the per-microphone power-noise variances that were averaged."""
    lam = noise.power_noise_variance
    return float(np.min(lam)), float(np.max(lam))


def _weighted_profiles(model, psi):
    gh = model.gains * model.sensitivity(psi)
    gdh = model.gains * model.sensitivity_derivative(psi)
    return gh, gdh


def fim(model, psi, snr):
    """2x2 Fisher information for ``(psi, alpha)`` at a single angle."""
    gh, gdh = _weighted_profiles(model, float(psi))
    a = snr.alpha
    cross = a * float(gdh @ gh)
    return np.array(
        [[a * a * float(gdh @ gdh), cross], [cross, float(gh @ gh)]]
    ) / snr.lam


def crlb_values(model, psi, snr):
    """Closed-form bound at every angle in ``psi``.

    Returns ``(values, degenerate)``: bound in rad^2 (``inf`` where degenerate)
    and the boolean degeneracy mask.  An angle is degenerate when ``G h`` and
    ``G h'`` are (numerically) parallel.
    """
    gh, gdh = _weighted_profiles(model, np.atleast_1d(np.asarray(psi, dtype=float)))
    hh = np.einsum("...n,...n->...", gh, gh)
    dd = np.einsum("...n,...n->...", gdh, gdh)
    hd = np.einsum("...n,...n->...", gh, gdh)
    denom = hh * dd - hd**2
    degenerate = (denom <= DEGENERACY_RTOL * hh * dd) | (hh == 0.0)
    safe = np.where(degenerate, 1.0, denom)
    values = np.where(degenerate, np.inf, snr.lam / snr.alpha**2 * hh / safe)
    return values, degenerate


def crlb(model, psi, snr):
    """Lower bound on ``var(psi_hat)`` in rad^2; ``math.inf`` marks a degenerate angle."""
    values, _ = crlb_values(model, float(psi), snr)
    return float(values[0])


@dataclass(frozen=True)
class CrlbCurve:
    angles: np.ndarray
    values: np.ndarray
    degenerate_mask: np.ndarray
    snr: SnrSpec

    @property
    def values_deg2(self):
        return self.values * (180.0 / np.pi) ** 2


def crlb_curve(model, snr, grid_points=360):
    """Bound on a uniform grid of ``grid_points`` angles starting at 0."""
    grid_points = check_positive_int(grid_points, "grid_points", minimum=2)
    angles = wrap_angle(2.0 * np.pi * np.arange(grid_points) / grid_points)
    values, degenerate = crlb_values(model, angles, snr)
    return CrlbCurve(angles=angles, values=values, degenerate_mask=degenerate, snr=snr)
