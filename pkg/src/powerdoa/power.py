"""Power measurement model.

A microphone observes ``y = s + w`` with white Gaussian noise ``w`` of
variance ``sigma2``.  The estimator only ever sees the frame power
``mean(y**2)``; this module computes it, splits it into signal, cross and
noise terms for diagnostics, and describes/samples the power-noise
distribution (scaled chi-square, or its Gaussian approximation).
"""

from dataclasses import dataclass

import numpy as np

from ._validation import as_finite_array, as_positive_vector, check_positive_int
from .exceptions import InvalidInputError

NOISE_MODES = ("gaussian-approx", "exact-chisq")


@dataclass(frozen=True)
class SignalFrame:
    """Raw sample window, ``samples`` has shape (n_mics, n_samples)."""

    samples: np.ndarray
    sample_rate: float = 48000.0

    def __post_init__(self):
        samples = as_finite_array(self.samples, "samples")
        if samples.ndim == 1:
            samples = samples[np.newaxis, :]
        if samples.ndim != 2 or samples.shape[1] < 1:
            raise InvalidInputError(f"samples: expected (n_mics, n_samples), got {samples.shape}")
        if not np.isfinite(self.sample_rate) or self.sample_rate <= 0:
            raise InvalidInputError("sample_rate must be a positive number")
        object.__setattr__(self, "samples", samples)

    @property
    def n_mics(self):
        return self.samples.shape[0]

    @property
    def frame_length(self):
        return self.samples.shape[1]


@dataclass(frozen=True)
class PowerVector:
    """Per-microphone frame power."""

    power: np.ndarray
    frame_length: int

    def __post_init__(self):
        power = as_finite_array(self.power, "power", ndim=1)
        # Round-off in a mean of squares can never be negative, so no tolerance.
        if np.any(power < 0):
            raise InvalidInputError("power: entries must be >= 0")
        object.__setattr__(self, "power", power)
        object.__setattr__(self, "frame_length", check_positive_int(self.frame_length, "frame_length"))

    @property
    def n_mics(self):
        return self.power.shape[0]


@dataclass(frozen=True)
class NoiseStats:
    """Per-microphone noise variance and the frame length it applies to."""

    sigma2: np.ndarray
    frame_length: int

    def __post_init__(self):
        object.__setattr__(self, "sigma2", as_positive_vector(self.sigma2, "sigma2"))
        object.__setattr__(self, "frame_length", check_positive_int(self.frame_length, "frame_length"))

    @property
    def n_mics(self):
        return self.sigma2.shape[0]

    @property
    def power_noise_variance(self):
        """Variance of the frame noise power, ``2 * sigma2**2 / L`` per microphone."""
        return 2.0 * self.sigma2**2 / self.frame_length


def compute_power(frame):
    """Mean square of each microphone's samples."""
    samples = frame.samples
    power = np.einsum("nl,nl->n", samples, samples) / samples.shape[1]
    return PowerVector(power=power, frame_length=samples.shape[1])


def decompose_power(signal, noise):
    """Split the power of ``signal + noise`` into its three contributions.

    Returns
    -------
    p_signal, p_cross, p_noise : ndarray
        Signal power, signal/noise cross term ``mean(2*s*w)`` and noise
        power.  Their sum is the power of the summed frame.
    """
    s, w = signal.samples, noise.samples
    if s.shape != w.shape:
        raise InvalidInputError(f"shape mismatch: signal {s.shape} vs noise {w.shape}")
    n_samples = s.shape[1]
    p_signal = np.einsum("nl,nl->n", s, s) / n_samples
    p_cross = 2.0 * np.einsum("nl,nl->n", s, w) / n_samples
    p_noise = np.einsum("nl,nl->n", w, w) / n_samples
    return p_signal, p_cross, p_noise


def power_noise_distribution(noise, mic):
    """Mean and variance of the (Gaussian-approximated) noise power of one microphone."""
    if not 0 <= mic < noise.n_mics:
        raise InvalidInputError(f"mic index {mic} out of range for {noise.n_mics} microphones")
    sigma2 = float(noise.sigma2[mic])
    return sigma2, 2.0 * sigma2**2 / noise.frame_length


def sample_power_noise(noise, rng_seed, mode="exact-chisq", size=None):
    """Draw noise power ``e_n`` for every microphone.

    Parameters
    ----------
    noise : NoiseStats
    rng_seed : int or numpy.random.Generator
    mode : {"gaussian-approx", "exact-chisq"}
        ``exact-chisq`` draws ``sigma2 / L * chi2(L)``; ``gaussian-approx``
        draws from ``N(sigma2, 2 sigma2**2 / L)``.
    size : int, optional
        Number of independent draws.  The result has shape ``(size, n_mics)``
        when given and ``(n_mics,)`` otherwise.
    """
    rng = np.random.default_rng(rng_seed)
    shape = (noise.n_mics,) if size is None else (int(size), noise.n_mics)
    L = noise.frame_length
    if mode == "exact-chisq":
        return noise.sigma2 / L * rng.chisquare(L, size=shape)
    if mode == "gaussian-approx":
        return noise.sigma2 + np.sqrt(noise.power_noise_variance) * rng.standard_normal(shape)
    raise InvalidInputError(f"unknown noise mode {mode!r}; expected one of {NOISE_MODES}")
