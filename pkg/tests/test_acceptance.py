"""End-to-end acceptance checks, one per criterion, each printing a verdict line."""

import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from geko.config import load_config
from geko.dynamics import lti, normalized_bilinear_run, random_bilinear_operator, rollout, sample_snapshots, van_der_pol
from geko.experiment import run_bench
from geko.koopman import analytic_koopman, fit_direct, fit_geko, gauss_legendre_grid
from geko.lemma import WindowQuery, build_lemma_data, pe_check, predict_outputs
from geko.numerics import khatri_rao, kron_vec
from geko.observables import LiftedData, affine_map, imq_map, legendre_map, lift_trajectory

ROOT = Path(__file__).resolve().parent.parent


@pytest.fixture
def verdict(capsys):
    def emit(name, ok, detail, seconds, limit):
        ok = bool(ok) and seconds < limit
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail} ({seconds:.2f}s, limit {limit:g}s)")
        return ok

    return emit


def test_criterion_1_exact_bilinear_recovery(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    K = random_bilinear_operator(4, 3, rng)
    Z = rng.standard_normal((4, 200))
    V = rng.uniform(-1, 1, (3, 200))
    Zp = K @ khatri_rao(Z, V)
    model = fit_geko(LiftedData(Z_X=Z, V_U=V, Z_X_plus=Zp, X_plus=Zp), gamma=0.0)
    err = np.linalg.norm(model.K - K) / np.linalg.norm(K)
    assert verdict("1 exact bilinear recovery", err <= 1e-8, f"relative error {err:.2e} (<= 1e-8)", time.perf_counter() - t0, 1.0)


def test_criterion_2_lti_embedding(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    A = rng.standard_normal((2, 2))
    A *= 0.9 / max(abs(np.linalg.eigvals(A)))
    B = rng.standard_normal((2, 1))
    system = lti(A, B, x_box=([-2, -2], [2, 2]), u_box=([-1], [1]))
    psi_x, psi_u = affine_map(2), affine_map(1)
    model = fit_direct(lift_trajectory(sample_snapshots(system, 500, seed=0), psi_x, psi_u), 0.0, psi_x, psi_u)
    test = sample_snapshots(system, 200, seed=1)
    pred = model.K_direct @ khatri_rao(psi_x.lift(test.x), psi_u.lift(test.u))
    err = np.max(np.abs(pred - test.x_next.T))
    assert verdict("2 LTI embedding", err <= 1e-8, f"held-out one-step error {err:.2e} (<= 1e-8)", time.perf_counter() - t0, 1.0)


def test_criterion_3_analytic_vs_data(verdict):
    t0 = time.perf_counter()
    box = ([-1], [1])
    psi_x, psi_u = legendre_map(box, 3), legendre_map(box, 3)
    K_an = analytic_koopman(lambda x, u: x * u, psi_x, psi_u, gauss_legendre_grid(box, box, 32))
    rng = np.random.default_rng(3)
    X, U = rng.uniform(-1, 1, (5000, 1)), rng.uniform(-1, 1, (5000, 1))
    data = LiftedData(Z_X=psi_x.lift(X), V_U=psi_u.lift(U), Z_X_plus=psi_x.lift(X * U), X_plus=(X * U).T)
    K_fit = fit_geko(data, 1e-10).K
    err = np.linalg.norm(K_an - K_fit) / np.linalg.norm(K_an)
    assert verdict("3 analytic vs data-driven operator", err <= 1e-3, f"relative discrepancy {err:.2e} (<= 1e-3)", time.perf_counter() - t0, 10.0)


def test_criterion_4_lemma_round_trip(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    N = 5
    K = random_bilinear_operator(3, 2, rng)
    inputs = rng.uniform(-1, 1, (200, 2))
    Ks, z = normalized_bilinear_run(K, inputs, rng.standard_normal(3))
    data = build_lemma_data(z[:-1], inputs, z[1:], N)
    pe = pe_check(data).full_row_rank
    # twenty windows of a fresh trajectory of the same system
    test_in = rng.uniform(-1, 1, (20 + N, 2))
    zt = [rng.standard_normal(3)]
    for u in test_in:
        zt.append(Ks @ kron_vec(zt[-1], u))
    zt = np.array(zt)
    worst = 0.0
    for t in range(20):
        pred = predict_outputs(data, WindowQuery.from_lifted(zt, test_in, t, N))
        scale = max(1.0, np.abs(zt[t : t + N + 1]).max())
        worst = max(worst, np.max(np.abs(pred - zt[t + 1 : t + 1 + N])) / scale)

    # depth one on Van der Pol data with the state lift as output lift
    system = van_der_pol()
    traj = rollout(system, [1.0, 0.0], rng.uniform(-1, 1, (300, 1)))
    psi_x, psi_u = imq_map(system.x_box, 20, 1.0, seed=5), imq_map(system.u_box, 4, 0.54, seed=6)
    lifted = lift_trajectory(traj, psi_x, psi_u)
    model = fit_geko(lifted, 1e-6, psi_x, psi_u)
    one = build_lemma_data(lifted.Z_X.T, lifted.V_U.T, lifted.Z_X_plus.T, 1)
    gap = 0.0
    for t in (0, 99, 250):
        q = WindowQuery.from_lifted(lifted.Z_X.T, lifted.V_U.T, t, 1)
        gap = max(gap, np.max(np.abs(predict_outputs(one, q, 1e-6)[0] - model.K @ q.zv)))
    ok = pe and worst <= 1e-6 and gap <= 1e-8
    detail = f"PE={pe}, 20-window error {worst:.2e} (<= 1e-6), N=1 vs EDMD gap {gap:.2e} (<= 1e-8)"
    assert verdict("4 fundamental lemma round trip", ok, detail, time.perf_counter() - t0, 5.0)


@pytest.fixture(scope="module")
def preset_bench():
    cfg = load_config("vdp_paper")
    t0 = time.perf_counter()
    rows, surfaces, _ = run_bench(cfg)
    return rows, surfaces, time.perf_counter() - t0


def test_criterion_5_error_decreases_with_features(preset_bench, verdict):
    rows, surfaces, seconds = preset_bench
    geko = sorted((r for r in rows if r["method"] == "geko" and r["n_v"] == 10), key=lambda r: r["n_z"])
    assert [r["n_z"] for r in geko] == [50, 100, 200]
    means = [r["mean_lifted_error"] for r in geko]
    ok = all(r["status"] == "ok" for r in geko) and all(a >= b for a, b in zip(means, means[1:]))
    detail = "mean lifted error n_z=50/100/200: " + " / ".join(f"{m:.4g}" for m in means) + " (non-increasing)"
    assert verdict("5 Van der Pol error vs feature dimension", ok, detail, seconds, 120.0)


def test_criterion_6_kic_baseline(preset_bench, verdict):
    rows, surfaces, seconds = preset_bench
    idx = [i for i, r in enumerate(rows) if r["method"] == "kic"]
    assert len(idx) == 1
    row, surface = rows[idx[0]], surfaces[idx[0]]
    ok = row["status"] == "ok" and row["n_z"] == 500 and surface is not None and np.all(np.isfinite(surface))
    ok = ok and any(r["method"] == "geko" for r in rows) and set(row) == set(rows[0])
    detail = f"500 centers, mean lifted error {row['mean_lifted_error']:.4g}, surface {surface.shape[0]}x{surface.shape[1]} finite"
    assert verdict("6 KIC baseline", ok, detail, seconds, 120.0)


def test_criterion_7_property_suites(verdict):
    suites = ["test_numerics.py", "test_dynamics.py", "test_observables.py", "test_koopman.py", "test_lemma.py"]
    t0 = time.perf_counter()
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *(str(ROOT / "tests" / s) for s in suites)],
        cwd=ROOT,
        capture_output=True,
        text=True,
    )
    seconds = time.perf_counter() - t0
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = proc.returncode == 0 and settings.default.max_examples >= 100 and settings.default.derandomize
    detail = f"{summary}; {settings.default.max_examples} seeded cases per property"
    assert verdict("7 invariant and property suites", ok, detail, seconds, 120.0)
