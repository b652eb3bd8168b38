"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line."""

import time

import numpy as np
import pytest
import scipy.linalg as sla

from gasmor.bench import EPS_MACH, morscore, run_offline, run_online, sample_parameters
from gasmor.config import GlobalConfig
from gasmor.gasmodel import LumpedSystem, Params, build_model, linearize, ph_parts
from gasmor.gramians import (GramianPair, TrainingSetup, TrajectoryBank, empirical_WO,
                             empirical_WR, empirical_WX)
from gasmor.reductors import (BASE_METHODS, balance, dmd_operator, gains, goal_oriented_sort,
                              identity_series, load_rom, pod, sort_balanced_gains)
from gasmor.rom import project, simulate_rom
from gasmor.simulate import simulate_fom
from gasmor.steady import operating_point
from gasmor.timestep import integrate
from surrogates import diagonal_system


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
        assert ok, detail
    return emit


def block_diag_part(W, n_p):
    out = np.zeros_like(W)
    out[:n_p, :n_p] = W[:n_p, :n_p]
    out[n_p:, n_p:] = W[n_p:, n_p:]
    return out


def full(pair, n_p):
    n = n_p + pair.Wq.shape[0]
    W = np.zeros((n, n))
    W[:n_p, :n_p] = pair.Wp
    W[n_p:, n_p:] = pair.Wq
    return W


def rel(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


# 1 ------------------------------------------------------------------------

def test_identity_rom_exact(yamal_model, yamal_day, cfg20, verdict):
    start = time.perf_counter()
    fom = simulate_fom(yamal_model, yamal_day, "imex1", 20.0, cfg20).y
    rom = project(yamal_model, identity_series(yamal_model.n_p, yamal_model.n_q),
                  yamal_model.n_p, yamal_model.n_q)
    red = simulate_rom(rom, yamal_day, "imex1", 20.0, cfg20).y[:, :, 0]
    runtime = time.perf_counter() - start
    per_step = np.linalg.norm(red - fom, axis=1) / np.linalg.norm(fom, axis=1)
    worst = float(per_step.max())
    verdict(1, worst <= 1e-10 and runtime < 120 and len(fom) == 4321,
            f"identity ROM max per-step relative error {worst:.1e} (<= 1e-10), "
            f"{runtime:.1f} s (< 120 s)")


# 2 ------------------------------------------------------------------------

def test_state_counts(yamal_model, morgen_net, verdict):
    morgen = build_model(morgen_net, "ode_end", GlobalConfig(dt=60.0), discharge=[50.0])
    ok = (abs(yamal_model.n - 908) <= 0.02 * 908 and abs(morgen.n - 901) <= 0.02 * 901
          and morgen.ports == 6)
    verdict(2, ok, f"Yamal {yamal_model.n} states (908 +- 2%), MORGEN {morgen.n} states "
                   f"(901 +- 2%) with {morgen.ports} ports")


# 3 ------------------------------------------------------------------------

def test_solver_orders(verdict):
    sys = LumpedSystem(np.eye(1), -np.eye(1), np.zeros((1, 1)), np.eye(1), np.zeros(1),
                       np.zeros(1))

    def err(method, h):
        y = integrate(sys, np.ones(1), lambda t: np.zeros(1), 1.0, h, method, 1.0, 0.5).y
        return abs(y[-1, 0] - np.exp(-1.0))

    ratios = {m: err(m, 0.1) / err(m, 0.05) for m in ("imex1", "imex2", "rk4")}
    ok = (abs(ratios["imex1"] - 2) <= 0.2 and abs(ratios["imex2"] - 4) <= 0.6
          and abs(ratios["rk4"] - 16) <= 3.2)
    verdict(3, ok, "h-halving ratios " + ", ".join(f"{m} {r:.2f}" for m, r in ratios.items()))


# 4 ------------------------------------------------------------------------

def test_gramian_oracles(pipe_model, verdict):
    cfg = GlobalConfig(dt=60.0, workers=1)
    theta = Params(283.15, 530.0)
    gas, st = operating_point(pipe_model, theta, [60.0], [50.0], cfg)
    lin = linearize(pipe_model, st.pbar, st.qbar, np.array([60.0]), gas.d0)
    assert lin.n <= 20
    sys = lin.lumped(gas.d0)
    E, A, B, C = (M.toarray() for M in (sys.E, sys.A, sys.B, sys.C))
    M, Bm = np.linalg.solve(E, A), np.linalg.solve(E, B)
    n_p = lin.n_p
    WR = block_diag_part(sla.solve_continuous_lyapunov(M, -Bm @ Bm.T), n_p)
    WO = block_diag_part(sla.solve_continuous_lyapunov(M.T, -C.T @ C), n_p)
    WX = block_diag_part(sla.solve_sylvester(M, M, -Bm @ C), n_p)
    # second-order steps: the lightly damped acoustic modes need a low-dissipation scheme
    setup = TrainingSetup(sbar=np.zeros(1), dbar=np.zeros(1), theta=[theta], h=0.5,
                          horizon=2000.0, input_shape="impulse", input_scales=1.0,
                          state_scales=1.0, solver="imex2")
    bank = TrajectoryBank(lin, setup, cfg)
    errs = {"WR": rel(full(empirical_WR(bank), n_p), WR),
            "WO": rel(full(empirical_WO(bank), n_p), WO),
            "WX": rel(full(empirical_WX(bank), n_p), WX),
            "WO dual": rel(full(empirical_WO(bank, dual=True), n_p), WO),
            "dual vs primal": rel(full(empirical_WO(bank, dual=True), n_p),
                                  full(empirical_WO(bank), n_p))}
    verdict(4, max(errs.values()) <= 0.05,
            f"N = {lin.n}, Frobenius errors " + ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
            + " (<= 5%)")


# 5 ------------------------------------------------------------------------

def test_port_hamiltonian_structure(yamal_model, verdict):
    assert not yamal_model.meta.get("compressor_rows")
    d0 = 1 / (283.15 * 530)
    parts = ph_parts(yamal_model, d0)
    n_p, n_q = yamal_model.n_p, yamal_model.n_q
    min_eig = float(np.linalg.eigvalsh(parts.E.toarray())[0])
    skew = (parts.J + parts.J.T).nnz == 0
    q_ok = (np.array_equal(parts.Q.diagonal(), np.r_[np.full(n_p, 1e5), np.full(n_q, 1e-5)])
            and parts.Q.nnz == n_p + n_q)
    rng = np.random.default_rng(2024)
    worst = np.inf
    for _ in range(100):
        x = np.concatenate([rng.uniform(1.0, 90.0, n_p), rng.uniform(-300.0, 300.0, n_q)])
        s_p = rng.uniform(1.0, 90.0, yamal_model.n_s)
        v = rng.standard_normal(n_p + n_q)
        worst = min(worst, float(v @ (parts.R(x, s_p) @ v)) / (v @ v))
    verdict(5, min_eig > 0 and skew and q_ok and worst >= -1e-12,
            f"min eig(E) {min_eig:.2e} > 0, J + J^T = 0 {skew}, Q = diag(1e5, 1e-5) {q_ok}, "
            f"min <R v, v>/|v|^2 over 100 samples {worst:.2e} (>= -1e-12)")


# 6 ------------------------------------------------------------------------

def test_steady_state_physics(yamal_model, morgen_net, verdict):
    theta = Params(283.15, 530.0)
    _, st = operating_point(yamal_model, theta, [84.0], [46.3], GlobalConfig(dt=20.0))
    line = np.concatenate([[84.0], yamal_model.reconstruct(st.pbar, np.array([84.0]))])
    monotone = bool(np.all(np.diff(line) < 0))
    balance_err = abs((yamal_model.Csq @ st.qbar).sum() - 46.3) / 46.3
    cfg = GlobalConfig(dt=60.0)
    morgen = build_model(morgen_net, "ode_end", cfg, discharge=[50.0])
    _, mst = operating_point(morgen, theta, [50.0, 50.0], np.full(4, 30.0), cfg)
    (row,) = morgen.meta["compressor_rows"]
    (col,) = morgen.Aqp[row].indices
    held = abs(mst.pbar[col] - 50.0)
    verdict(6, monotone and balance_err <= 1e-8 and held <= 1e-6,
            f"Yamal pressure monotone {monotone} ({line[0]:.2f} -> {line[-1]:.2f} bar), "
            f"mass balance {balance_err:.1e} (<= 1e-8); MORGEN discharge off by {held:.1e} bar")


# 7 ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def yamal_sweep(yamal_net, yamal_training, yamal_day, tmp_path_factory):
    cfg = GlobalConfig(dt=20.0, workers=1)
    out = tmp_path_factory.mktemp("yamal_roms")
    start = time.perf_counter()
    off = run_offline(yamal_net, yamal_training, "ode_end", "imex1", list(BASE_METHODS), cfg,
                      str(out))
    rep = run_online(yamal_net, yamal_day, "ode_end", "imex1", off.paths, cfg, 150,
                     sample_parameters(cfg))
    return off, rep, time.perf_counter() - start


def test_mor_quality(yamal_sweep, verdict):
    off, rep, runtime = yamal_sweep
    best = {m: float(np.min(rep.curves[m][1])) for m in rep.curves}
    galerkin = [m for m in BASE_METHODS if load_rom(off.paths[m])[0].galerkin]
    reach = all(best[m] <= 1e-3 for m in galerkin)
    s = rep.scores
    eds = [s[m] for m in s if m.startswith("eds")]
    bal = [s[m] for m in s if m.startswith(("ebt", "ebg"))]
    family = min(eds) > max(bal) and s["pod_r"] >= min(bal) and s["dmd_r"] >= min(bal)
    bounded = all(0.0 <= v <= 1.0 for v in s.values())
    table = ", ".join(f"{m} {s[m]:.3f}" for m in BASE_METHODS)
    verdict(7, reach and family and bounded and runtime < 1800,
            f"(a) Galerkin best errors <= 1e-3 {reach} (worst "
            f"{max(best[m] for m in galerkin):.1e}); (b) eds > ebt/ebg, pod_r/dmd_r >= min "
            f"ebt/ebg {family}; (c) scores in [0,1] {bounded}, {runtime:.0f} s (< 1800 s); "
            f"MORscores: {table}")


# 8 ------------------------------------------------------------------------

def test_reductor_algebra(yamal_sweep, verdict):
    off, _, _ = yamal_sweep
    worst = 0.0
    for name in BASE_METHODS:
        series = load_rom(off.paths[name])[0]
        for U, V in ((series.Up, series.Vp), (series.Uq, series.Vq)):
            G = V.T @ U
            for r in range(1, U.shape[1] + 1):
                worst = max(worst, float(np.max(np.abs(G[:r, :r] - np.eye(r)))))
    x = 0.8 ** np.arange(12)
    ratio_err = abs(dmd_operator(x[None, :])[0, 0] - 0.8)
    half = GramianPair(np.zeros((0, 0)), np.array([[0.5]]), "WR")
    hankel = float(balance((half, half), variant="ro").wq[0])

    rates, b, c = np.array([1.0, 4.5, 2.0]), np.array([1.0, 2.0, 0.5]), np.array([1.0, 2.0, 1.0])
    model = diagonal_system(rates, b, c)
    WR = GramianPair(np.zeros((0, 0)), np.diag(b ** 2 / (2 * rates)), "WR")
    WO = GramianPair(np.zeros((0, 0)), np.diag(c ** 2 / (2 * rates)), "WO")
    t = np.linspace(0.0, 40.0, 400001)
    energy = [np.trapezoid((c[i] * b[i] * np.exp(-rates[i] * t)) ** 2, t) for i in range(3)]
    ebg = sort_balanced_gains(balance((WR, WO), variant="ro"), model)
    bg_ok = np.array_equal(np.argmax(np.abs(ebg.Uq), axis=0), np.argsort(energy)[::-1])
    go_model = diagonal_system([1.0, 1.0, 1.0], c=[0.1, 3.0, 1.0])
    go = goal_oriented_sort(pod(GramianPair(np.zeros((0, 0)), np.diag([3.0, 2.0, 1.0]), "WR")),
                            go_model)
    brute = [float(np.sum(go_model.Csq.toarray()[:, i] ** 2)) * np.sqrt(s)
             for i, s in enumerate([3.0, 2.0, 1.0])]
    go_ok = np.array_equal(np.argmax(np.abs(go.Uq), axis=0), np.argsort(brute)[::-1])
    assert gains(ebg, model)[1][0] == pytest.approx(max(energy), rel=1e-6)
    verdict(8, worst <= 1e-8 and ratio_err <= 1e-10 and abs(hankel - 0.5) <= 1e-6
            and bg_ok and go_ok,
            f"max |V^T U - I| over {len(BASE_METHODS)} methods and all orders {worst:.1e}, "
            f"DMD ratio error {ratio_err:.1e}, Hankel value {hankel:.6f}, balanced-gains "
            f"ranking {bg_ok}, goal-oriented ranking {go_ok}")


# 9 ------------------------------------------------------------------------

def test_morscore_values(verdict):
    values = (morscore(np.ones(150)), morscore(np.full(150, EPS_MACH)),
              morscore([np.sqrt(EPS_MACH), EPS_MACH], n_max=2))
    verdict(9, values == (0.0, 1.0, 0.75),
            f"constant 1 -> {values[0]}, constant eps -> {values[1]}, two-point -> {values[2]}")

