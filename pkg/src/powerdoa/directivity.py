"""Fourier-series directional sensitivity.

The sensitivity of one microphone is

    h(psi) = t0 + sum_{d=1..D} tc_d cos(d psi) + ts_d sin(d psi)

with coefficients stored interleaved as ``[t0, tc_1, ts_1, ..., tc_D, ts_D]``
so the coefficient vector lines up with the basis row.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import as_finite_array, check_order
from .exceptions import InvalidInputError


def wrap_angle(psi):
    """Map angles (radians) onto the canonical interval (-pi, pi]."""
    wrapped = np.pi - np.mod(np.pi - np.asarray(psi, dtype=float), 2.0 * np.pi)
    return float(wrapped) if wrapped.ndim == 0 else wrapped


@dataclass(frozen=True)
class FourierBasis:
    order: int

    def __post_init__(self):
        object.__setattr__(self, "order", check_order(self.order))

    @property
    def size(self):
        return 2 * self.order + 1

    def matrix(self, psi):
        """Basis rows for every angle in ``psi``; shape ``psi.shape + (2D+1,)``."""
        psi = np.asarray(wrap_angle(psi))
        harmonics = np.arange(1, self.order + 1)
        phase = psi[..., np.newaxis] * harmonics
        out = np.empty(psi.shape + (self.size,))
        out[..., 0] = 1.0
        out[..., 1::2] = np.cos(phase)
        out[..., 2::2] = np.sin(phase)
        return out

    def derivative_matrix(self, psi):
        """d/dpsi of :meth:`matrix`."""
        psi = np.asarray(wrap_angle(psi))
        harmonics = np.arange(1, self.order + 1)
        phase = psi[..., np.newaxis] * harmonics
        out = np.empty(psi.shape + (self.size,))
        out[..., 0] = 0.0
        out[..., 1::2] = -harmonics * np.sin(phase)
        out[..., 2::2] = harmonics * np.cos(phase)
        return out

    def row(self, psi):
        return self.matrix(float(psi))

    def check_coefficients(self, theta):
        theta = as_finite_array(theta, "theta")
        if theta.ndim not in (1, 2) or theta.shape[-1] != self.size:
            raise InvalidInputError(
                f"theta: expected trailing dimension {self.size} for order {self.order}, "
                f"got shape {theta.shape}"
            )
        return theta


def basis_row(order, psi):
    """``[1, cos psi, sin psi, ..., cos D psi, sin D psi]``."""
    return FourierBasis(order).row(psi)


def evaluate(order, theta, psi):
    """Evaluate the sensitivity ``Phi(psi) @ theta``.

    ``theta`` may be one coefficient vector or a stack of shape (n_mics, 2D+1);
    ``psi`` may be a scalar or an array.  The mic axis, if present, comes last.
    """
    basis = FourierBasis(order)
    theta = basis.check_coefficients(theta)
    return basis.matrix(psi) @ theta.T


def evaluate_derivative(order, theta, psi):
    """Analytic d h / d psi, same broadcasting as :func:`evaluate`."""
    basis = FourierBasis(order)
    theta = basis.check_coefficients(theta)
    return basis.derivative_matrix(psi) @ theta.T
