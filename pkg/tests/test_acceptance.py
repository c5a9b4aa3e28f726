"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` (the lines are repeated in the
terminal summary) or directly with ``python3 tests/test_acceptance.py``.
Lines tagged INFO are diagnostics and do not gate anything.
"""

import math
from pathlib import Path
import sys
import tempfile
import time

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import noiseless_training_set, random_model  # noqa: E402
from powerdoa.crlb import SnrSpec, crlb_values, fim  # noqa: E402
from powerdoa.directivity import evaluate, evaluate_derivative  # noqa: E402
from powerdoa.estimator import estimate_many  # noqa: E402
from powerdoa.power import NoiseStats, SignalFrame, compute_power, decompose_power, sample_power_noise  # noqa: E402
from powerdoa.scene import (  # noqa: E402
    DEFAULT_FRAME_LENGTH,
    DEFAULT_SIGMA2,
    SIGNAL_POWER_SCALE,
    ScenarioConfig,
    cardioid_array,
    fourier_array,
    generate_observation,
    generate_training_set,
    run_benchmark,
    trial_seed,
)
from powerdoa.training import constraint_residuals, fit, select_order  # noqa: E402

RESULTS = []


def record(label, passed, detail):
    tag = "INFO" if passed is None else ("PASS" if passed else "FAIL")
    line = f"[{tag}] {label}: {detail}"
    RESULTS.append(line)
    print(line, flush=True)
    return passed


# 1 -------------------------------------------------------------------------

def criterion_1():
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(1000):
        n, L = int(rng.integers(1, 9)), int(rng.integers(1, 4097))
        s = rng.standard_normal((n, L)) * rng.uniform(0.01, 10)
        w = rng.standard_normal((n, L)) * rng.uniform(0.01, 10)
        total = compute_power(SignalFrame(s + w)).power
        parts = sum(decompose_power(SignalFrame(s), SignalFrame(w)))
        worst = max(worst, float(np.max(np.abs(parts - total) / total)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed < 5
    return [record("1 power decomposition identity", ok,
                   f"max rel error {worst:.2e} (<= 1e-10), {elapsed:.2f} s (< 5 s)")]


# 2 -------------------------------------------------------------------------

def _moment_se(x):
    n = x.size
    m2 = x.var()
    m4 = np.mean((x - x.mean()) ** 4)
    return math.sqrt(m2 / n), math.sqrt(max(m4 - m2 * m2, 0.0) / n)


def criterion_2():
    start = time.perf_counter()
    details, ok = [], True
    for i, L in enumerate((100, 4800, 48000)):
        noise = NoiseStats(np.array([1.0]), L)
        a = sample_power_noise(noise, 10 + i, "exact-chisq", size=10**5)[:, 0]
        b = sample_power_noise(noise, 20 + i, "gaussian-approx", size=10**5)[:, 0]
        se_ma, se_va = _moment_se(a)
        se_mb, se_vb = _moment_se(b)
        z_mean = abs(a.mean() - b.mean()) / math.hypot(se_ma, se_mb)
        z_var = abs(a.var() - b.var()) / math.hypot(se_va, se_vb)
        ok &= z_mean <= 3 and z_var <= 3
        details.append(f"L={L}: |z_mean|={z_mean:.2f} |z_var|={z_var:.2f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 30
    return [record("2 noise model moments", ok, "; ".join(details) + f"; {elapsed:.2f} s (< 30 s)")]


# 3 -------------------------------------------------------------------------

def criterion_3():
    rng = np.random.default_rng(3)
    step, worst = 1e-6, 0.0
    for _ in range(1000):
        order = int(rng.integers(0, 11))
        theta = rng.standard_normal(2 * order + 1)
        psi = rng.uniform(-np.pi, np.pi)
        fd = (evaluate(order, theta, psi + step) - evaluate(order, theta, psi - step)) / (2 * step)
        worst = max(worst, abs(float(evaluate_derivative(order, theta, psi)) - float(fd)))
    return [record("3 analytic derivative vs central differences", worst <= 1e-6,
                   f"max abs error {worst:.2e} over 1000 triples (<= 1e-6)")]


# 4 -------------------------------------------------------------------------

def criterion_4():
    start = time.perf_counter()
    grid = -np.pi + 2 * np.pi * np.arange(1, 721) / 720
    ok, details = True, []
    for order in (1, 3, 7):
        truth = random_model(order, seed=100 + order)
        model, report = fit(noiseless_training_set(truth), order)
        pt = truth.signal_power(grid) + truth.noise.sigma2
        pm = model.signal_power(grid) + model.noise.sigma2
        rel = float(np.max(np.abs(pm - pt) / np.abs(pt)))
        res = constraint_residuals(model)
        feasible = (model.alpha > 0 and np.all(model.gains > 0) and res["gain_norm"] <= 1e-8
                    and res["peak"] <= 1e-6)
        ok &= report.converged and rel <= 1e-6 and feasible
        details.append(f"D={order}: rel {rel:.1e}, gain_norm {res['gain_norm']:.0e}, peak {res['peak']:.0e}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 60
    return [record("4 noiseless training recovery", ok, "; ".join(details) + f"; {elapsed:.2f} s (< 60 s)")]


# 5 -------------------------------------------------------------------------

def criterion_5():
    truth = random_model(3, alpha=1.0, sigma2=DEFAULT_SIGMA2, frame_length=DEFAULT_FRAME_LENGTH, seed=5)
    array = fourier_array(truth)  # 60 dB at the default frame length
    picks = []
    for seed in range(20):
        best, _, _ = select_order(generate_training_set(array, ScenarioConfig(seed=seed)), range(12))
        picks.append(best)
    hits = picks.count(3)
    return [record("5 BIC recovers the generating order", hits >= 18,
                   f"order 3 chosen in {hits}/20 trials (>= 18); picks {sorted(set(picks))}")]


# 6 -------------------------------------------------------------------------

def _expected_hessian(model, psi, alpha, lam, n_obs, seed, step=1e-4):
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


def criterion_6():
    angles = 2 * np.pi * np.arange(360) / 360
    worst = 0.0
    for seed in range(10):
        model = random_model(int(1 + seed % 7), seed=600 + seed)
        snr = SnrSpec(alpha=float(np.random.default_rng(seed).uniform(0.5, 5)), lam=1e-4)
        closed, degenerate = crlb_values(model, angles, snr)
        for psi, value in zip(angles[~degenerate], closed[~degenerate]):
            inv = np.linalg.inv(fim(model, psi, snr))[0, 0]
            worst = max(worst, abs(value - inv) / inv)
    a = record("6a closed-form CRLB equals inverted FIM", worst <= 1e-10,
               f"max rel diff {worst:.1e} at 360 angles x 10 models (<= 1e-10)")
    model = random_model(4, seed=11)
    snr = SnrSpec(1.0, 1e-3)
    F = fim(model, 0.9, snr)
    H = _expected_hessian(model, 0.9, snr.alpha, snr.lam, 10**5, seed=0)
    rel = float(np.max(np.abs(H - F) / np.abs(F)))
    b = record("6b FIM vs Monte-Carlo expected Hessian", rel <= 0.05,
               f"max entrywise rel diff {rel:.2%} with 1e5 observations (<= 5%)")
    return [a, b]


# 7 -------------------------------------------------------------------------

def matched_model_benchmark(trials=1000, snr_db=40.0, seed=0):
    """Truth is a fitted order-7 model of the smooth default cardioid, so there is no model error."""
    cfg = ScenarioConfig(seed=seed)
    base = cardioid_array(floor=0.1, sharpness=2.0)
    model, _ = fit(generate_training_set(base, cfg), 7)
    truth = fourier_array(model, alpha=1.0, sigma2=DEFAULT_SIGMA2).at_snr(snr_db, cfg.frame_length)
    return run_benchmark(truth, cfg, model, trials)


def criterion_7():
    start = time.perf_counter()
    report = matched_model_benchmark()
    elapsed = time.perf_counter() - start
    per = report.per_angle
    mse = np.array([a["mse_rad2"] for a in per])
    bound = np.array([a["crlb_rad2"] for a in per])
    ratio = mse / bound
    above = int(np.sum(mse >= bound))
    within3 = int(np.sum(mse <= 3 * bound))
    a = record("7a empirical MSE >= CRLB at every angle", above == 24,
               f"{above}/24 angles at or above the bound; MSE/CRLB in [{ratio.min():.3f}, {ratio.max():.3f}]")
    b = record("7b empirical MSE <= 3 x CRLB", within3 >= 20 and elapsed < 300,
               f"{within3}/24 angles (>= 20); {elapsed:.1f} s (< 300 s)")
    err = np.radians([r[4] for r in report.rows])
    se = err.std(ddof=1) / math.sqrt(err.size)
    z = err.mean() / se
    c = record("7c mean error within 3 standard errors of zero", abs(z) <= 3,
               f"mean {math.degrees(err.mean()):+.4f} deg over {err.size} trials, z = {z:+.2f}")
    mean = np.radians([x["mean_error_deg"] for x in per])
    sd = np.radians([x["std_error_deg"] for x in per])
    z_angle = mean / (sd / math.sqrt(report.trials))
    record("7c per-angle mean error", None,
           f"{int(np.sum(np.abs(z_angle) > 3))}/24 angles beyond 3 SE, max |z| {np.abs(z_angle).max():.2f}")
    return [a, b, c]


# 8 -------------------------------------------------------------------------

def pipeline_rmse(snr_db, trials, signal_types=None, seed=0):
    cfg = ScenarioConfig(seed=seed)
    truth = cardioid_array().at_snr(snr_db, cfg.frame_length)
    model, report = fit(generate_training_set(truth, cfg), 7)
    assert report.converged
    return run_benchmark(truth, cfg, model, trials, signal_types)


def criterion_8():
    r60 = pipeline_rmse(60.0, 200).summary[0]["rmse_deg"]
    r130 = pipeline_rmse(130.0, 200).summary[0]["rmse_deg"]
    rel = abs(r60 - r130) / min(r60, r130)
    return [record("8 model-error floor", rel < 0.2,
                   f"RMSE {r60:.3f} deg at 60 dB vs {r130:.3f} deg at 130 dB, difference {rel:.1%} (< 20%)")]


# 9 -------------------------------------------------------------------------

def criterion_9():
    cfg = ScenarioConfig(seed=0)
    truth = cardioid_array()
    model, _ = fit(generate_training_set(truth, cfg), 7)
    clean = cfg.replace(noise_mode="none")
    mismatches = 0
    for scfg in (clean, cfg):
        for i, psi in enumerate(scfg.validation_angles):
            for t in range(20):
                seed = trial_seed(0, i, t)
                obs = {s: generate_observation(truth, psi, scfg.replace(signal_type=s), seed).power
                       for s in ("wideband", "attenuated", "amplified")}
                if scfg is cfg:
                    # noisy case: scale the noise-compensated observation itself
                    comp = obs["wideband"] - model.noise.sigma2
                    obs = {s: model.noise.sigma2 + SIGNAL_POWER_SCALE[s] * comp for s in obs}
                psi_hat = {s: estimate_many(model, p)[0][0] for s, p in obs.items()}
                mismatches += psi_hat["attenuated"] != psi_hat["wideband"]
                mismatches += psi_hat["amplified"] != psi_hat["wideband"]
    n = 2 * 2 * 24 * 20
    ok = record("9 scale invariance (exact equality)", mismatches == 0,
                f"{mismatches}/{n} psi_hat mismatches (noise-free scene signal types and scaled noisy observations)")
    # physical variant: source level changes while the background noise stays put
    bench = run_benchmark(truth, cfg, model, 50, ["wideband", "attenuated", "amplified"])
    rmse = {s["signal"]: s["rmse_deg"] for s in bench.summary}
    record("9 fixed-noise signal levels", None,
           ", ".join(f"{k} RMSE {v:.3f} deg" for k, v in rmse.items()))
    return [ok]


# 10 ------------------------------------------------------------------------

def criterion_10():
    start = time.perf_counter()
    types = ["wideband", "attenuated", "amplified", "narrowband-surrogate"]
    report = pipeline_rmse(60.0, 200, types)
    elapsed = time.perf_counter() - start
    rmse = {s["signal"]: s["rmse_deg"] for s in report.summary}
    failed = sum(s["n_failed"] for s in report.summary)
    ok = all(v <= 2.0 for v in rmse.values()) and failed == 0 and elapsed < 600
    return [record("10 desk-scale RMSE target", ok,
                   ", ".join(f"{k} {v:.3f} deg" for k, v in rmse.items())
                   + f" (<= 2 deg); {failed} failed trials; {elapsed:.1f} s (< 600 s)")]


# 11 ------------------------------------------------------------------------

def criterion_11():
    import json

    from test_cli import GOLDEN, run, run_pipeline

    with tempfile.TemporaryDirectory() as tmp:
        work = Path(tmp) / "run"
        files = run_pipeline(work)
        expected_dir = GOLDEN / "expected"
        expected = {str(p.relative_to(expected_dir)): p.read_bytes()
                    for p in expected_dir.rglob("*") if p.is_file()}
        same = files == expected
        codes = {}
        bad = Path(tmp) / "bad.json"
        bad.write_text(json.dumps({"scenario": {"n_train": 0}}))
        codes["config error"] = (run(["simulate", str(bad)])[0], 2)
        codes["missing file"] = (run(["crlb", str(Path(tmp) / "none.json")])[0], 2)
        train = Path(tmp) / "t.json"
        train.write_text(json.dumps({"training_csv": str(work / "sim/training.csv"),
                                     "sidecar": str(work / "sim/training.json"),
                                     "out": str(Path(tmp) / "m.json"),
                                     "solver": {"max_iter": 1, "init_jitter": 0.5}}))
        codes["non-convergence"] = (run(["train", str(train)])[0], 3)
        obs = Path(tmp) / "o.json"
        obs.write_text(json.dumps({"power": [DEFAULT_SIGMA2] * 8, "frame_length": 48000}))
        codes["no signal"] = (run(["estimate", str(work / "model.json"), str(obs)])[0], 4)
        codes["success"] = (run(["crlb", str(work / "model.json"), "--out", str(Path(tmp) / "c.csv")])[0], 0)
    matrix_ok = all(got == want for got, want in codes.values())
    return [record("11 CLI contract", same and matrix_ok,
                   f"{len(files)} golden files {'identical' if same else 'DIFFER'}; exit codes "
                   + ", ".join(f"{k}={got}" for k, (got, _) in codes.items()))]


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10, criterion_11]


@pytest.mark.parametrize("criterion", CRITERIA, ids=lambda f: f.__name__)
def test_acceptance(criterion):
    outcomes = criterion()
    assert all(outcomes), "see the FAIL line above"


if __name__ == "__main__":
    for criterion in CRITERIA:
        criterion()
    sys.exit(0 if all(not line.startswith("[FAIL]") for line in RESULTS) else 1)
