import math
from types import SimpleNamespace

import numpy as np
import pytest

from conftest import random_model
from powerdoa.crlb import (
    SnrSpec,
    crlb,
    crlb_curve,
    crlb_values,
    equal_variance_lambda,
    fim,
    lambda_spread,
)
from powerdoa.directivity import FourierBasis
from powerdoa.exceptions import InvalidInputError
from powerdoa.power import NoiseStats
from powerdoa.scene import ScenarioConfig, cardioid_array, generate_training_set
from powerdoa.training import DirectivityModel, default_facing_angles, fit


def cos_sin_array():
    """Two mics with h = (cos psi, sin psi) and G = I (a stub, the gains are not unit-norm)."""
    basis = FourierBasis(1)
    theta = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    return SimpleNamespace(
        gains=np.ones(2),
        sensitivity=lambda psi: basis.matrix(psi) @ theta.T,
        sensitivity_derivative=lambda psi: basis.derivative_matrix(psi) @ theta.T,
    )


def rotated_model(order=4, n_mics=8, seed=0):
    """Identical directivities rotated to each facing angle, equal gains."""
    rng = np.random.default_rng(seed)
    proto = np.zeros(2 * order + 1)
    proto[0] = 1.0
    proto[1::2] = 0.3 * rng.standard_normal(order) / order
    proto[2::2] = 0.3 * rng.standard_normal(order) / order
    facing = default_facing_angles(n_mics)
    theta = np.empty((n_mics, proto.size))
    for n, phi in enumerate(facing):
        theta[n, 0] = proto[0]
        for d in range(1, order + 1):
            c, s = proto[2 * d - 1], proto[2 * d]
            theta[n, 2 * d - 1] = c * math.cos(d * phi) - s * math.sin(d * phi)
            theta[n, 2 * d] = c * math.sin(d * phi) + s * math.cos(d * phi)
    peak = FourierBasis(order).matrix(0.0) @ proto
    return DirectivityModel(alpha=1.0, gains=np.full(n_mics, 1 / math.sqrt(n_mics)), theta=theta / peak,
                            order=order, noise=NoiseStats(np.full(n_mics, 0.1), 1000), facing_angles=facing)


def test_snr_spec():
    spec = SnrSpec.from_snr_db(40.0, 2e-3)
    assert spec.snr_db == pytest.approx(40.0, abs=1e-9)
    assert SnrSpec(alpha=10.0, lam=1.0).snr_db == pytest.approx(20.0, abs=1e-12)
    with pytest.raises(InvalidInputError):
        SnrSpec(alpha=0.0, lam=1.0)
    with pytest.raises(InvalidInputError):
        SnrSpec(alpha=1.0, lam=-1.0)


def test_equal_variance_collapse():
    noise = NoiseStats(np.array([1.0, 3.0]), 4)
    assert equal_variance_lambda(noise) == pytest.approx((0.5 + 4.5) / 2)
    assert lambda_spread(noise) == (0.5, 4.5)


def test_constant_model_fim_and_degeneracy():
    model = random_model(0)
    snr = SnrSpec(2.0, 0.01)
    F = fim(model, 0.4, snr)
    gh = model.gains * model.sensitivity(0.4)
    np.testing.assert_allclose(F, [[0, 0], [0, gh @ gh / 0.01]], atol=1e-12)
    assert abs(np.linalg.det(F)) < 1e-12
    curve = crlb_curve(model, snr)
    assert curve.degenerate_mask.all() and np.isinf(curve.values).all()
    assert crlb(model, 0.1, snr) == math.inf


def test_orthonormal_two_mic_case():
    stub = cos_sin_array()
    snr = SnrSpec(1.0, 0.3)
    for psi in np.linspace(-np.pi, np.pi, 13):
        np.testing.assert_allclose(fim(stub, psi, snr), np.eye(2) / 0.3, atol=1e-12)
        assert crlb(stub, psi, SnrSpec(2.0, 0.3)) == pytest.approx(0.3 / 4.0, rel=1e-12)


def test_closed_form_matches_inverse_fim():
    for seed in range(3):
        model = random_model(5, seed=seed)
        snr = SnrSpec(1.5, 1e-3)
        for psi in np.linspace(-np.pi, np.pi, 40, endpoint=False):
            inv = np.linalg.inv(fim(model, psi, snr))[0, 0]
            assert crlb(model, psi, snr) == pytest.approx(inv, rel=1e-10)


def test_scaling_laws(model7):
    snr = SnrSpec(1.0, 1e-4)
    base, deg = crlb_values(model7, np.linspace(-3, 3, 50), snr)
    doubled, _ = crlb_values(model7, np.linspace(-3, 3, 50), SnrSpec(2.0, 1e-4))
    halved, _ = crlb_values(model7, np.linspace(-3, 3, 50), SnrSpec(1.0, 0.5e-4))
    assert not deg.any() and np.all(base > 0)
    np.testing.assert_allclose(doubled, base / 4, rtol=1e-14)
    np.testing.assert_allclose(halved, base / 2, rtol=1e-14)


def test_symmetric_array_curve_is_45_degree_periodic():
    curve = crlb_curve(rotated_model(), SnrSpec(1.0, 1e-4), 360)
    np.testing.assert_allclose(np.roll(curve.values, 45), curve.values, rtol=1e-9)


def test_curve_grid_and_units(model3):
    curve = crlb_curve(model3, SnrSpec(1.0, 1e-4), 360)
    assert curve.angles.shape == (360,) and curve.angles[0] == 0.0
    np.testing.assert_allclose(curve.values_deg2, curve.values * (180 / np.pi) ** 2)
    with pytest.raises(InvalidInputError):
        crlb_curve(model3, SnrSpec(1.0, 1e-4), 1)


def test_trained_octagon_at_130_db_is_finite():
    truth = cardioid_array().at_snr(130.0, 48000)
    model, report = fit(generate_training_set(truth, ScenarioConfig(seed=0)), 7)
    assert report.converged
    snr = SnrSpec.from_snr_db(130.0, equal_variance_lambda(model.noise))
    curve = crlb_curve(model, snr, 360)
    assert not curve.degenerate_mask.any()
    assert np.all(np.isfinite(curve.values) & (curve.values > 0))


def _expected_hessian(model, psi, alpha, lam, n_obs, seed, step=1e-4):
    """Finite-difference Hessian of -log N(P; alpha G h(psi) + sigma2, lam I), averaged over draws."""
    rng = np.random.default_rng(seed)

    def mean(p, a):
        return a * model.gains * model.sensitivity(p) + model.noise.sigma2

    P = mean(psi, alpha) + math.sqrt(lam) * rng.standard_normal((n_obs, model.n_mics))

    def nll(p, a):
        r = P - mean(p, a)
        return np.sum(r * r, axis=1) / (2 * lam)

    hp, ha = step, step * alpha
    f0 = nll(psi, alpha)
    d_pp = (nll(psi + hp, alpha) - 2 * f0 + nll(psi - hp, alpha)) / hp**2
    d_aa = (nll(psi, alpha + ha) - 2 * f0 + nll(psi, alpha - ha)) / ha**2
    d_pa = (nll(psi + hp, alpha + ha) - nll(psi + hp, alpha - ha)
            - nll(psi - hp, alpha + ha) + nll(psi - hp, alpha - ha)) / (4 * hp * ha)
    return np.array([[d_pp.mean(), d_pa.mean()], [d_pa.mean(), d_aa.mean()]])


def test_fim_matches_monte_carlo_expected_hessian():
    model = random_model(4, seed=11)
    snr = SnrSpec(1.0, 1e-3)
    psi = 0.9
    F = fim(model, psi, snr)
    H = _expected_hessian(model, psi, snr.alpha, snr.lam, 10**5, seed=0)
    assert abs(F[0, 1]) > 0.05 * abs(F[0, 0])  # off-diagonal is not negligible at this angle
    np.testing.assert_allclose(H, F, rtol=0.05)
