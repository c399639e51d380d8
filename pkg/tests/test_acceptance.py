"""Acceptance suite: one test per release criterion, one PASS line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines. Every tolerance is fixed here; nothing is deferred to calibration.
"""

import json
import subprocess
import sys
import time
import tracemalloc

import numpy as np
import pytest

from kernelgp import gp, precond, solver, train
from kernelgp.kernels import KernelType, eval_kernel
from kernelgp.kmat import EngineMode, Hyperparams, KernelEngine, Theta

ALL_KERNELS = (KernelType.GAUSSIAN, KernelType.MATERN32, KernelType.MATERN52)


def _nlml_at(kt, x, y, base, name, delta):
    pv = dict(base)
    pv[name] += delta
    return gp.nlml_exact(KernelEngine(kt, x, Hyperparams(**pv)), y)


def _adaptive_central_fd(kt, x, y, base, name):
    """Central differences over a step ladder, picking the plateau where
    successive estimates agree best; balances truncation against roundoff
    without consulting the analytic value."""
    theta = base[name]
    fds = []
    for scale in (1e-4, 3e-5, 1e-5, 3e-6, 1e-6, 3e-7, 1e-7):
        h = scale * theta
        fds.append(
            (_nlml_at(kt, x, y, base, name, h) - _nlml_at(kt, x, y, base, name, -h))
            / (2 * h)
        )
    diffs = [abs(fds[i] - fds[i + 1]) for i in range(len(fds) - 1)]
    return fds[int(np.argmin(diffs)) + 1]


def test_criterion_1_gradient_exactness():
    """Analytic gradients match finite differences of the exact loss."""
    t0 = time.time()
    rng = np.random.default_rng(77)
    worst = 0.0
    for i in range(100):
        n = int(rng.integers(20, 151))
        d = int(rng.integers(1, 6))
        kt = ALL_KERNELS[i % 3]
        x = rng.standard_normal((n, d))
        y = rng.standard_normal(n)
        hp = Hyperparams(
            l=10 ** rng.uniform(-1, 1),
            f=rng.uniform(0.5, 2.0),
            s=10 ** rng.uniform(-3, 0),
        )
        base = {"l": hp.l, "f": hp.f, "s": hp.s}
        lg = gp.grad_exact(KernelEngine(kt, x, hp), y)
        for name, analytic in zip(("l", "f", "s"), lg.grads()):
            fd = _adaptive_central_fd(kt, x, y, base, name)
            worst = max(worst, abs(analytic - fd) / (abs(analytic) + 1e-12))
    elapsed = time.time() - t0
    assert worst < 1e-5, f"max relative error {worst}"
    assert elapsed < 60
    print(f"\nPASS criterion 1: gradient exactness, max rel err {worst:.2e} "
          f"over 100 instances ({elapsed:.1f}s)")


def test_criterion_2_estimator_consistency():
    """Stochastic loss/gradient estimates center on the dense values."""
    t0 = time.time()
    rng = np.random.default_rng(201)
    n = 200
    x = rng.standard_normal((n, 3))
    y = rng.standard_normal(n)
    hp = Hyperparams(l=1.2, f=1.3, s=0.3)
    engine = KernelEngine(KernelType.GAUSSIAN, x, hp)
    exact = gp.grad_exact(engine, y)
    pre = precond.build(engine, 60)

    samples = {"loss": [], "l": [], "f": [], "s": []}
    for seed in range(50):
        probes = gp.ProbeSet.generate(n, 32, seed)
        lg = gp.nlml_grad_iterative(
            engine, y, pre, probes, tol=1e-10, max_iter=1000, probe_tol=1e-10
        )
        samples["loss"].append(lg.loss)
        samples["l"].append(lg.grad_l)
        samples["f"].append(lg.grad_f)
        samples["s"].append(lg.grad_s)

    truth = {"loss": exact.loss, "l": exact.grad_l, "f": exact.grad_f, "s": exact.grad_s}
    for key, vals in samples.items():
        vals = np.asarray(vals)
        stderr = vals.std(ddof=1) / np.sqrt(len(vals))
        gap = abs(vals.mean() - truth[key])
        assert gap <= 3 * stderr, f"{key}: |mean-exact|={gap} > 3*stderr={3*stderr}"

    # log-determinant fixture with a known closed form
    d = np.arange(1.0, 11.0)
    z = rng.standard_normal((10, 200))
    report = solver.pcg_solve(lambda b: d[:, None] * b, None, z, tol=0.0, max_iter=10)
    est = solver.slq_logdet(report.traces, np.sum(z * z, axis=0))
    target = float(np.sum(np.log(d)))
    rel = abs(est - target) / target
    assert rel < 0.05, f"logdet estimate off by {rel:.3%}"
    elapsed = time.time() - t0
    assert elapsed < 120
    print(f"PASS criterion 2: estimator consistency, logdet rel err {rel:.3%} "
          f"({elapsed:.1f}s)")


def test_criterion_3_lanczos_structure():
    """CG coefficients rebuild tridiagonals whose Ritz values behave."""
    t0 = time.time()
    a = np.diag([1.0, 3.0])
    _, trace = solver.cg_solve(lambda v: a @ v, np.array([1.0, 1.0]), tol=0.0, max_iter=2)
    eigs = np.sort(np.linalg.eigvalsh(solver.build_tridiag(trace)))
    np.testing.assert_allclose(eigs, [1.0, 3.0], atol=1e-10)

    # random rotations of log-uniform spectra; condition ~30 keeps float64 CG
    # inside the exact-arithmetic finite-termination bound being certified
    rng = np.random.default_rng(33)
    for _ in range(20):
        q, _ = np.linalg.qr(rng.standard_normal((50, 50)))
        lam = np.sort(10 ** rng.uniform(0, 1.477, size=50))
        a = (q * lam) @ q.T
        y = rng.standard_normal(50)
        x, trace = solver.cg_solve(lambda v: a @ v, y, tol=1e-10, max_iter=50)
        assert trace.final_rel_residual <= 1e-10, "CG failed within n iterations"
        ritz = np.linalg.eigvalsh(solver.build_tridiag(trace))
        assert ritz.min() >= lam[0] - 1e-8
        assert ritz.max() <= lam[-1] + 1e-8
    elapsed = time.time() - t0
    assert elapsed < 30
    print(f"PASS criterion 3: Lanczos/CG structure, 20 spectra contained "
          f"({elapsed:.1f}s)")


def test_criterion_4_mode_equivalence():
    """Streaming matmuls agree with dense to 1e-12; scratch memory bounded."""
    t0 = time.time()
    rng = np.random.default_rng(44)
    n, k, bs = 2000, 8, 256
    x = rng.standard_normal((n, 3))
    b = rng.standard_normal((n, k))
    hp = Hyperparams(l=1.1, f=1.4, s=0.2)
    for kt in ALL_KERNELS:
        dense = KernelEngine(kt, x, hp, mode=EngineMode.DENSE)
        otf = KernelEngine(kt, x, hp, mode=EngineMode.ON_THE_FLY, block_size=bs)
        ref = dense.matmul(b)
        got = otf.matmul(b)
        assert np.max(np.abs(got - ref)) <= 1e-12 * np.max(np.abs(ref)), kt
        for theta in (Theta.L, Theta.F, Theta.S):
            refg = dense.grad_matmul(theta, b)
            gotg = otf.grad_matmul(theta, b)
            scale = max(np.max(np.abs(refg)), 1e-300)
            assert np.max(np.abs(gotg - refg)) <= 1e-12 * scale, (kt, theta)

    # allocation accounting on the fully traced numpy backend
    otf = KernelEngine(
        KernelType.MATERN52, x, hp, mode=EngineMode.ON_THE_FLY,
        block_size=bs, backend="numpy",
    )
    otf.matmul(b)
    tracemalloc.start()
    tracemalloc.reset_peak()
    base_mem = tracemalloc.get_traced_memory()[0]
    otf.matmul(b)
    peak = tracemalloc.get_traced_memory()[1]
    tracemalloc.stop()
    extra = peak - base_mem - n * k * 8
    budget = 4 * bs * (n + k) * 8 + 1_000_000
    assert extra <= budget, f"scratch {extra} bytes exceeds O(block*(n+k)) budget {budget}"
    elapsed = time.time() - t0
    assert elapsed < 60
    print(f"PASS criterion 4: dense/on-the-fly equivalence, scratch {extra/1e6:.1f}MB "
          f"within budget ({elapsed:.1f}s)")


def test_criterion_5_preconditioner_effectiveness():
    """Landmark preconditioning cuts iterations on a smooth-kernel system."""
    t0 = time.time()
    rng = np.random.default_rng(55)
    n = 2000
    x = rng.uniform(-1, 1, (n, 2))
    diameter = float(np.sqrt(np.max(
        np.sum((x[:, None, ::] - x[None, :500, :]) ** 2, axis=-1)
    )))  # lower bound from a slab is fine; any O(diameter) scale works
    hp = Hyperparams(l=diameter, f=1.0, s=1e-2)
    engine = KernelEngine(KernelType.GAUSSIAN, x, hp, mode=EngineMode.DENSE)
    y = rng.standard_normal(n)

    plain = solver.pcg_solve(engine.matmul, None, y, tol=1e-8, max_iter=4000)
    assert plain.all_converged
    pre = precond.build(engine, 200)
    fast = solver.pcg_solve(engine.matmul, pre.apply_inverse, y, tol=1e-8, max_iter=4000)
    assert fast.all_converged
    it_plain = plain.traces[0].iterations
    it_fast = fast.traces[0].iterations
    assert it_fast < it_plain, f"preconditioned {it_fast} !< plain {it_plain}"

    full = precond.build(engine, n)
    dense_solution = np.linalg.solve(engine.materialize(), y)
    got = full.apply_inverse(y)
    rel = np.linalg.norm(got - dense_solution) / np.linalg.norm(dense_solution)
    assert rel < 1e-6, f"full-rank inverse off by {rel}"
    elapsed = time.time() - t0
    assert elapsed < 120
    print(f"PASS criterion 5: preconditioner, iterations {it_plain} -> {it_fast}, "
          f"full-rank rel err {rel:.1e} ({elapsed:.1f}s)")


def test_criterion_6_generate_and_refit():
    """Training recovers a known generative model's likelihood level."""
    t0 = time.time()
    rng = np.random.default_rng(66)
    n = 400
    x = rng.uniform(-2, 2, (n, 2))
    hp_true = Hyperparams(l=1.0, f=1.0, s=0.1)
    khat = KernelEngine(KernelType.GAUSSIAN, x, hp_true).materialize()
    y = np.linalg.cholesky(khat) @ rng.standard_normal(n)

    loss_at_truth = gp.nlml_exact(KernelEngine(KernelType.GAUSSIAN, x, hp_true), y)

    cfg = train.TrainConfig(learning_rate=0.1, max_steps=200, mode="exact", rng_seed=1)
    res = train.fit(KernelType.GAUSSIAN, x, y, cfg)
    assert res.loss_history[-1] <= res.loss_history[0]
    final_loss = gp.nlml_exact(KernelEngine(KernelType.GAUSSIAN, x, res.params), y)
    gap = abs(final_loss - loss_at_truth) / abs(loss_at_truth)
    assert gap < 0.02, f"final NLML {final_loss} vs generating {loss_at_truth}: {gap:.3%}"

    cfg_it = train.TrainConfig(
        learning_rate=0.1, max_steps=200, mode="iterative",
        k_z=16, tol=1e-6, probe_tol=1e-2, rng_seed=1,
    )
    res_it = train.fit(KernelType.GAUSSIAN, x, y, cfg_it)
    for name in ("l", "f", "s"):
        ex, it = getattr(res.params, name), getattr(res_it.params, name)
        rel = abs(it - ex) / abs(ex)
        assert rel < 0.20, f"{name}: iterative {it} vs exact {ex} ({rel:.1%})"
    elapsed = time.time() - t0
    assert elapsed < 300
    print(f"PASS criterion 6: generate-and-refit, NLML gap {gap:.3%}, "
          f"params within 20% ({elapsed:.1f}s)")


def test_criterion_7_prediction_correctness():
    """Iterative prediction tracks exact conditioning; limits hold."""
    t0 = time.time()
    rng = np.random.default_rng(70)
    n, m_test = 500, 50
    x = rng.uniform(-2, 2, (n, 2))
    y = np.sin(2 * x[:, 0]) * np.cos(x[:, 1]) + 0.1 * rng.standard_normal(n)
    xs = rng.uniform(-2, 2, (m_test, 2))
    hp = Hyperparams(l=0.7, f=1.0, s=0.05)
    tol = 1e-8
    ex = gp.predict(KernelType.GAUSSIAN, x, y, xs, hp, mode="exact")
    it = gp.predict(
        KernelType.GAUSSIAN, x, y, xs, hp, mode="iterative", tol=tol, max_iter=3000
    )
    mean_rel = np.max(np.abs(ex.mean - it.mean)) / np.max(np.abs(ex.mean))
    sd_rel = np.max(np.abs(ex.stddev - it.stddev)) / np.max(ex.stddev)
    assert mean_rel <= 10 * tol, f"mean deviates {mean_rel}"
    assert sd_rel <= 10 * tol, f"stddev deviates {sd_rel}"

    # interpolation limit (small n: the solve condition scales as n f^2 / s)
    interp = gp.predict(
        KernelType.GAUSSIAN, x[:40], y[:40], x[:40], Hyperparams(l=0.7, f=1.0, s=1e-10)
    )
    assert np.max(np.abs(interp.mean - y[:40])) / np.max(np.abs(y[:40])) < 1e-4
    assert np.max(interp.stddev) < 1e-3
    # prior reversion far from the data
    far = gp.predict(
        KernelType.GAUSSIAN, x[:40], y[:40], np.array([[80.0, -80.0]]), hp
    )
    assert abs(far.mean[0]) < 1e-10
    np.testing.assert_allclose(far.stddev[0], hp.f, rtol=1e-10)
    elapsed = time.time() - t0
    assert elapsed < 60
    print(f"PASS criterion 7: prediction, iterative within {mean_rel:.1e} of exact "
          f"({elapsed:.1f}s)")


def test_criterion_8_cli_round_trip(tmp_path):
    """train -> model -> predict through the CLI equals the library bitwise."""
    t0 = time.time()
    rng = np.random.default_rng(88)
    x = rng.uniform(-2, 2, (50, 2))
    y = np.sin(x[:, 0]) + 0.05 * rng.standard_normal(50)
    xs = rng.uniform(-2, 2, (12, 2))
    np.savetxt(tmp_path / "train.csv", x, delimiter=",")
    np.savetxt(tmp_path / "labels.csv", y[:, None], delimiter=",")
    np.savetxt(tmp_path / "test.csv", xs, delimiter=",")

    def run(*args):
        return subprocess.run(
            [sys.executable, "-m", "kernelgp"] + [str(a) for a in args],
            capture_output=True, text=True,
        )

    models = []
    for name in ("m1.json", "m2.json"):
        res = run(
            "train", "--data", tmp_path / "train.csv", "--labels", tmp_path / "labels.csv",
            "--kernel", "matern52", "--mode", "exact", "--max-steps", 20,
            "--seed", 7, "--out", tmp_path / name,
        )
        assert res.returncode == 0, res.stderr
        models.append((tmp_path / name).read_bytes())
    assert models[0] == models[1], "same seed must give bitwise-identical models"

    res = run(
        "predict", "--model", tmp_path / "m1.json", "--data", tmp_path / "train.csv",
        "--labels", tmp_path / "labels.csv", "--test", tmp_path / "test.csv",
        "--out", tmp_path / "preds.csv",
    )
    assert res.returncode == 0, res.stderr

    doc = json.loads((tmp_path / "m1.json").read_text())
    pred = gp.predict(
        KernelType.MATERN52, x, y, xs, Hyperparams(l=doc["l"], f=doc["f"], s=doc["s"])
    )
    lines = (tmp_path / "preds.csv").read_text().splitlines()
    expected = ["mean,stddev"] + [
        f"{format(m, '.17g')},{format(sd, '.17g')}"
        for m, sd in zip(pred.mean, pred.stddev)
    ]
    assert lines == expected, "CLI predictions differ from library predictions"
    elapsed = time.time() - t0
    assert elapsed < 120
    print(f"PASS criterion 8: CLI round trip bitwise-consistent ({elapsed:.1f}s)")
