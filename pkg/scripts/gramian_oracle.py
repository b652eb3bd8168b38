#!/usr/bin/env python3
"""Empirical versus exact Gramians on a linearized single pipe.

The linearized pipe has lightly damped acoustic modes, so the time-stepping
scheme's own damping dominates the error of the empirical Gramians.  This
script prints the relative Frobenius error of W_R, W_O (primal and dual) and
W_X for several solvers and step sizes.
"""

import numpy as np
import scipy.linalg as sla

from gasmor.config import GlobalConfig
from gasmor.gasmodel import Params, build_model, linearize
from gasmor.gramians import (TrainingSetup, TrajectoryBank, empirical_WO, empirical_WR,
                             empirical_WX)
from gasmor.netgraph import parse_net
from gasmor.steady import operating_point

PIPE = "pipe,supply,demand,20000,1.0,0,1e-5\n"
RUNS = [("imex1", 0.5), ("imex1", 0.1), ("imex1", 0.05), ("imex2", 0.5), ("imex2", 0.2),
        ("rk4", 0.5)]


def structured(W, n_p):
    out = np.zeros_like(W)
    out[:n_p, :n_p] = W[:n_p, :n_p]
    out[n_p:, n_p:] = W[n_p:, n_p:]
    return out


def assemble(pair, n_p):
    n = n_p + pair.Wq.shape[0]
    W = np.zeros((n, n))
    W[:n_p, :n_p], W[n_p:, n_p:] = pair.Wp, pair.Wq
    return W


def main():
    cfg = GlobalConfig(dt=60.0, workers=1)
    theta = Params(283.15, 530.0)
    model = build_model(parse_net(PIPE), "ode_end", cfg)
    gas, st = operating_point(model, theta, [60.0], [50.0], cfg)
    lin = linearize(model, st.pbar, st.qbar, np.array([60.0]), gas.d0)
    sys = lin.lumped(gas.d0)
    E, A, B, C = (M.toarray() for M in (sys.E, sys.A, sys.B, sys.C))
    M, Bm = np.linalg.solve(E, A), np.linalg.solve(E, B)
    n_p = lin.n_p
    exact = {"WR": sla.solve_continuous_lyapunov(M, -Bm @ Bm.T),
             "WO": sla.solve_continuous_lyapunov(M.T, -C.T @ C),
             "WX": sla.solve_sylvester(M, M, -Bm @ C)}
    exact = {k: structured(W, n_p) for k, W in exact.items()}
    rates = -np.linalg.eigvals(M).real
    print(f"{lin.n} states, slowest decay rate {rates.min():.2e} 1/s")
    print(f"{'solver':6s} {'h':>5s} {'W_R':>9s} {'W_O':>9s} {'W_O dual':>9s} {'W_X':>9s}")
    for solver, h in RUNS:
        setup = TrainingSetup(sbar=np.zeros(1), dbar=np.zeros(1), theta=[theta], h=h,
                              horizon=2000.0, input_shape="impulse", input_scales=1.0,
                              state_scales=1.0, solver=solver)
        bank = TrajectoryBank(lin, setup, cfg)
        got = [empirical_WR(bank), empirical_WO(bank), empirical_WO(bank, dual=True),
               empirical_WX(bank)]
        errs = [np.linalg.norm(assemble(g, n_p) - exact[k]) / np.linalg.norm(exact[k])
                for g, k in zip(got, ("WR", "WO", "WO", "WX"))]
        print(f"{solver:6s} {h:5.2f} " + " ".join(f"{e:9.2e}" for e in errs))


if __name__ == "__main__":
    main()
