"""Synthetic turntable experiments.

A :class:`GroundTruthArray` holds the true directivity of every microphone;
:class:`ScenarioConfig` describes a measurement campaign (signal type, frame
length, training and validation angles, seed).  Power vectors can be
generated two ways:

* power level: ``alpha g_n pattern_n(psi)`` plus a scaled chi-square noise
  draw; fast, used for Monte-Carlo work;
* sample level: waveforms are synthesised and passed through
  :func:`powerdoa.power.compute_power`; slow, used to validate the shortcut.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from ._validation import as_finite_array, as_positive_vector, check_positive_int
from .crlb import SnrSpec, crlb_values
from .directivity import FourierBasis, wrap_angle
from .estimator import angular_error, estimate_many, DEFAULT_GRID_POINTS
from .exceptions import InvalidInputError, PowerDoaError
from .power import NoiseStats, PowerVector, SignalFrame, sample_power_noise
from .training import TrainingSet, default_facing_angles

# power multiplier per signal type (amplitude x0.5 / x2 squared)
SIGNAL_POWER_SCALE = {
    "wideband": 1.0,
    "attenuated": 0.25,
    "amplified": 4.0,
    "narrowband-surrogate": 1.0,
}
NOISE_MODES = ("exact-chisq", "gaussian-approx", "none")
NARROWBAND_HZ = (200.0, 800.0)
DEFAULT_FRAME_LENGTH = 48000


def cardioid_pattern(psi, facing, floor=0.1, sharpness=25.5):
    """Raised-cosine cardioid ``(k + (1-k)(1 + cos(psi - facing))/2)^q``.

    Peaks at 1 towards ``facing`` and bottoms out at ``floor**sharpness``.
    Integer ``sharpness`` gives an exact Fourier series of that order; the
    non-integer default leaves energy above order 7, i.e. genuine model error
    for a truncated fit.
    """
    psi = np.asarray(psi, dtype=float)[..., np.newaxis]
    base = floor + (1.0 - floor) * 0.5 * (1.0 + np.cos(psi - facing))
    return base**sharpness


def sigma2_for_snr(alpha, snr_db, frame_length):
    """Noise variance making ``alpha^2 / (2 sigma^4 / L)`` equal ``snr_db``."""
    return alpha * math.sqrt(frame_length / (2.0 * 10.0 ** (snr_db / 10.0)))


DEFAULT_SIGMA2 = sigma2_for_snr(1.0, 60.0, DEFAULT_FRAME_LENGTH)


@dataclass(frozen=True)
class GroundTruthArray:
    """Physical truth of a simulated array.

    ``pattern`` maps an angle array of any shape to ``shape + (N,)`` sensitivities.
    """

    facing_angles: np.ndarray
    pattern: object
    gains: np.ndarray
    sigma2: np.ndarray
    alpha: float = 1.0
    description: str = ""

    def __post_init__(self):
        facing = np.atleast_1d(wrap_angle(as_finite_array(self.facing_angles, "facing_angles", ndim=1)))
        n = facing.shape[0]
        gains = as_positive_vector(self.gains, "gains", length=n)
        object.__setattr__(self, "facing_angles", facing)
        object.__setattr__(self, "gains", gains / np.linalg.norm(gains))
        object.__setattr__(self, "sigma2", as_positive_vector(self.sigma2, "sigma2", length=n))
        if not math.isfinite(self.alpha) or self.alpha < 0:
            raise InvalidInputError("alpha must be >= 0")
        peaks = np.diagonal(self.pattern(facing))
        if np.max(np.abs(peaks - 1.0)) > 1e-9:
            raise InvalidInputError("pattern must equal 1 at each facing angle")

    @property
    def n_mics(self):
        return self.facing_angles.shape[0]

    def signal_power(self, psi, scale=1.0):
        return self.alpha * scale * self.gains * self.pattern(psi)

    def with_snr(self, snr_db, frame_length):
        """Copy with equal noise variances set for the requested SNR."""
        s2 = sigma2_for_snr(self.alpha, snr_db, frame_length)
        return GroundTruthArray(
            self.facing_angles, self.pattern, self.gains, np.full(self.n_mics, s2),
            self.alpha, self.description,
        )

    def at_snr(self, snr_db, frame_length):
        """Copy with the noise kept and the signal level set for the requested SNR.

        This is how the SNR changes in a fixed room: louder or quieter source,
        same background noise.  The SNR uses the mean power-noise variance.
        """
        lam = float(np.mean(2.0 * self.sigma2**2 / frame_length))
        return self.with_alpha(math.sqrt(lam * 10.0 ** (snr_db / 10.0)))

    def with_alpha(self, alpha):
        return GroundTruthArray(
            self.facing_angles, self.pattern, self.gains, self.sigma2, alpha, self.description
        )


def cardioid_array(n_mics=8, alpha=1.0, floor=0.1, sharpness=25.5, gains=None, sigma2=None,
                   facing_angles=None):
    """Uniform circular array of cardioid-like microphones.

    ``sigma2`` defaults to the noise variance giving 60 dB SNR at ``alpha = 1``
    with one second at 48 kHz.
    """
    if not (0.0 < floor < 1.0) or sharpness < 1.0:
        raise InvalidInputError("cardioid needs 0 < floor < 1 and sharpness >= 1")
    facing = default_facing_angles(n_mics) if facing_angles is None else np.asarray(facing_angles, float)
    gains = np.ones(n_mics) if gains is None else np.asarray(gains, dtype=float)
    if sigma2 is None:
        sigma2 = DEFAULT_SIGMA2

    def pattern(psi):
        return cardioid_pattern(psi, facing, floor, sharpness)

    return GroundTruthArray(
        facing_angles=facing,
        pattern=pattern,
        gains=gains,
        sigma2=np.broadcast_to(np.asarray(sigma2, dtype=float), (n_mics,)).copy(),
        alpha=alpha,
        description=f"cardioid(floor={floor}, sharpness={sharpness})",
    )


def fourier_array(model, alpha=None, sigma2=None):
    """Array whose truth is exactly a Fourier-series model (no model error)."""
    basis = FourierBasis(model.order)
    theta = model.theta

    def pattern(psi):
        return basis.matrix(psi) @ theta.T

    return GroundTruthArray(
        facing_angles=model.facing_angles,
        pattern=pattern,
        gains=model.gains,
        sigma2=model.noise.sigma2 if sigma2 is None else np.broadcast_to(
            np.asarray(sigma2, dtype=float), (model.n_mics,)).copy(),
        alpha=model.alpha if alpha is None else alpha,
        description=f"fourier(order={model.order})",
    )


def uniform_angles(count, offset=0.0):
    """``count`` equally spaced angles starting at ``offset`` (radians), wrapped."""
    count = check_positive_int(count, "count")
    return np.atleast_1d(wrap_angle(offset + 2.0 * np.pi * np.arange(count) / count))


@dataclass(frozen=True)
class ScenarioConfig:
    signal_type: str = "wideband"
    duration_s: float = 1.0
    sample_rate: float = 48000.0
    train_angles: np.ndarray = field(default_factory=lambda: uniform_angles(24))
    validation_angles: np.ndarray = field(
        default_factory=lambda: uniform_angles(24, math.radians(7.5))
    )
    seed: int = 0
    noise_mode: str = "exact-chisq"

    def __post_init__(self):
        if self.signal_type not in SIGNAL_POWER_SCALE:
            raise InvalidInputError(
                f"signal_type {self.signal_type!r} not in {sorted(SIGNAL_POWER_SCALE)}"
            )
        if self.noise_mode not in NOISE_MODES:
            raise InvalidInputError(f"noise_mode {self.noise_mode!r} not in {NOISE_MODES}")
        if not (self.duration_s > 0 and self.sample_rate > 0):
            raise InvalidInputError("duration_s and sample_rate must be > 0")
        train = np.atleast_1d(wrap_angle(as_finite_array(self.train_angles, "train_angles", ndim=1)))
        val = np.atleast_1d(wrap_angle(as_finite_array(self.validation_angles, "validation_angles", ndim=1)))
        gap = np.abs(angular_error(train[:, np.newaxis], val[np.newaxis, :]))
        if np.any(gap < 1e-9):
            raise InvalidInputError("validation angles must differ from training angles")
        check_positive_int(self.seed, "seed", minimum=0)
        object.__setattr__(self, "train_angles", train)
        object.__setattr__(self, "validation_angles", val)
        if self.frame_length < 1:
            raise InvalidInputError("duration_s * sample_rate must give at least one sample")

    @property
    def frame_length(self):
        return int(round(self.duration_s * self.sample_rate))

    @property
    def power_scale(self):
        return SIGNAL_POWER_SCALE[self.signal_type]

    def replace(self, **changes):
        fields = dict(
            signal_type=self.signal_type, duration_s=self.duration_s, sample_rate=self.sample_rate,
            train_angles=self.train_angles, validation_angles=self.validation_angles,
            seed=self.seed, noise_mode=self.noise_mode,
        )
        fields.update(changes)
        return ScenarioConfig(**fields)


def _noise_stats(array, cfg):
    return NoiseStats(sigma2=array.sigma2, frame_length=cfg.frame_length)


def _power_noise(array, cfg, rng, size=None):
    noise = _noise_stats(array, cfg)
    if cfg.noise_mode == "none":
        shape = (array.n_mics,) if size is None else (size, array.n_mics)
        return np.broadcast_to(noise.sigma2, shape).copy()
    return sample_power_noise(noise, rng, cfg.noise_mode, size=size)


def generate_training_set(array, cfg):
    """Power measurements at every training angle of ``cfg``.

    With ``noise_mode="none"`` the noise power is its mean ``sigma2``.
    """
    rng = np.random.default_rng(cfg.seed)
    signal = array.signal_power(cfg.train_angles, cfg.power_scale)
    powers = signal + _power_noise(array, cfg, rng, size=len(cfg.train_angles))
    return TrainingSet(
        angles=cfg.train_angles,
        powers=np.maximum(powers, 0.0),
        noise=_noise_stats(array, cfg),
        facing_angles=array.facing_angles,
    )


def generate_observation(array, psi, cfg, seed):
    """One power vector for a source at ``psi``.

    The noise draw depends only on ``seed``, so the same seed gives the same
    noise for every signal type.
    """
    rng = np.random.default_rng(seed)
    power = array.signal_power(float(psi), cfg.power_scale) + _power_noise(array, cfg, rng)
    return PowerVector(power=np.maximum(power, 0.0), frame_length=cfg.frame_length)


def _source_waveform(cfg, rng):
    L = cfg.frame_length
    x = rng.standard_normal(L)
    if cfg.signal_type == "narrowband-surrogate":
        spectrum = np.fft.rfft(x)
        freqs = np.fft.rfftfreq(L, d=1.0 / cfg.sample_rate)
        lo, hi = NARROWBAND_HZ
        spectrum[(freqs < lo) | (freqs > hi)] = 0.0
        x = np.fft.irfft(spectrum, n=L)
    ms = float(np.mean(x**2))
    if ms == 0.0:
        raise InvalidInputError("frame too short to synthesise the requested band")
    return x / math.sqrt(ms)


def synthesize_frames(array, psi, cfg, seed):
    """Sample-level signal and noise frames for a source at ``psi``.

    The source waveform is shared by all microphones and scaled so each
    microphone's signal power is exactly ``alpha g_n pattern_n(psi)``; the
    noise is independent white Gaussian with variance ``sigma2_n``.
    """
    rng = np.random.default_rng(seed)
    target = array.signal_power(float(psi), cfg.power_scale)
    waveform = _source_waveform(cfg, rng)
    signal = np.sqrt(np.maximum(target, 0.0))[:, np.newaxis] * waveform[np.newaxis, :]
    noise = np.sqrt(array.sigma2)[:, np.newaxis] * rng.standard_normal((array.n_mics, cfg.frame_length))
    return (
        SignalFrame(signal, cfg.sample_rate),
        SignalFrame(noise, cfg.sample_rate),
    )


def trial_seed(seed, angle_index, trial):
    """Independent per-trial seed derived from the master seed and trial coordinates."""
    return np.random.SeedSequence((int(seed), int(angle_index), int(trial)))


@dataclass
class BenchmarkReport:
    signal_types: list
    angles: np.ndarray
    trials: int
    per_angle: list
    summary: list
    histogram_edges_deg: np.ndarray
    rows: list

    def to_dict(self):
        return {
            "signal_types": list(self.signal_types),
            "angles_deg": [round(math.degrees(a), 10) for a in self.angles],
            "trials": self.trials,
            "histogram_edges_deg": [float(e) for e in self.histogram_edges_deg],
            "summary": self.summary,
            "per_angle": self.per_angle,
        }


def _estimate_rows(model, powers, grid_points, refine):
    """Estimate each row; failures become NaN with their error code."""
    try:
        psi, _ = estimate_many(model, powers, grid_points, refine)
        return psi, [None] * len(psi)
    except PowerDoaError:
        pass
    psi = np.full(len(powers), np.nan)
    errors = []
    for i, row in enumerate(powers):
        try:
            psi[i] = estimate_many(model, row[np.newaxis, :], grid_points, refine)[0][0]
            errors.append(None)
        except PowerDoaError as exc:
            errors.append(exc.code)
    return psi, errors


def _stats(err):
    ok = err[np.isfinite(err)]
    if ok.size == 0:
        return {"n_ok": 0, "mean_error_deg": None, "rmse_deg": None, "mse_rad2": None, "std_error_deg": None}
    return {
        "n_ok": int(ok.size),
        "mean_error_deg": math.degrees(float(np.mean(ok))),
        "rmse_deg": math.degrees(math.sqrt(float(np.mean(ok**2)))),
        "mse_rad2": float(np.mean(ok**2)),
        "std_error_deg": math.degrees(float(np.std(ok, ddof=1))) if ok.size > 1 else 0.0,
    }


def run_benchmark(array, cfg, model, trials, signal_types=None, grid_points=DEFAULT_GRID_POINTS,
                  refine=True, histogram_edges_deg=None):
    """Monte-Carlo evaluation at every validation angle of ``cfg``.

    Trial ``t`` at angle index ``i`` draws its noise from
    :func:`trial_seed` ``(cfg.seed, i, t)``, independent of signal type and of
    evaluation order.
    """
    trials = check_positive_int(trials, "trials")
    signal_types = list(signal_types or [cfg.signal_type])
    edges = np.linspace(-5.0, 5.0, 41) if histogram_edges_deg is None else np.asarray(histogram_edges_deg, float)
    lam = float(np.mean(_noise_stats(array, cfg).power_noise_variance))
    per_angle, summary, rows = [], [], []
    for signal in signal_types:
        scfg = cfg.replace(signal_type=signal)
        all_err = []
        n_failed_total = 0
        for i, psi in enumerate(scfg.validation_angles):
            powers = np.stack([
                generate_observation(array, psi, scfg, trial_seed(cfg.seed, i, t)).power
                for t in range(trials)
            ])
            psi_hat, errors = _estimate_rows(model, powers, grid_points, refine)
            err = angular_error(psi_hat, psi)
            err = np.where(np.isfinite(psi_hat), err, np.nan)
            all_err.append(err)
            n_failed = int(np.sum(~np.isfinite(psi_hat)))
            n_failed_total += n_failed
            alpha_eff = array.alpha * scfg.power_scale
            if alpha_eff > 0:
                bound, degenerate = crlb_values(model, psi, SnrSpec(alpha_eff, lam))
                bound_rad2 = None if degenerate[0] else float(bound[0])
            else:
                bound_rad2 = None
            finite = err[np.isfinite(err)]
            entry = {
                "signal": signal,
                "angle_deg": round(math.degrees(float(psi)), 10),
                "n_failed": n_failed,
                "failure_codes": sorted({e for e in errors if e}),
                "crlb_rad2": bound_rad2,
                "crlb_deg2": None if bound_rad2 is None else bound_rad2 * (180.0 / math.pi) ** 2,
                "histogram": np.histogram(np.degrees(finite), bins=edges)[0].tolist(),
            }
            entry.update(_stats(err))
            per_angle.append(entry)
            for t in range(trials):
                rows.append((signal, round(math.degrees(float(psi)), 10), t,
                             math.degrees(float(psi_hat[t])) if np.isfinite(psi_hat[t]) else math.nan,
                             math.degrees(float(err[t])) if np.isfinite(err[t]) else math.nan))
        pooled = np.concatenate(all_err)
        total = {"signal": signal, "n_failed": n_failed_total,
                 "histogram": np.histogram(np.degrees(pooled[np.isfinite(pooled)]), bins=edges)[0].tolist()}
        total.update(_stats(pooled))
        summary.append(total)
    return BenchmarkReport(
        signal_types=signal_types,
        angles=cfg.validation_angles,
        trials=trials,
        per_angle=per_angle,
        summary=summary,
        histogram_edges_deg=edges,
        rows=rows,
    )
