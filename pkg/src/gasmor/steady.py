"""Steady states for constant boundary values."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .config import GlobalConfig
from .gasmodel import DiscreteModel, GasState, Params, PressureError, eval_rhs, gas_state


class SteadyStateError(RuntimeError):
    pass


@dataclass
class SteadyState:
    pbar: np.ndarray
    qbar: np.ndarray
    residual: float
    iterations: int
    march_steps: int = 0
    history: list = field(default_factory=list)

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.pbar, self.qbar])


class LeastNorm:
    """Least-squares / least-norm solver for a fixed matrix via one QR factorization."""

    def __init__(self, M, rtol: float = 1e-12):
        M = M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)
        self.shape = M.shape
        self.tall = M.shape[0] >= M.shape[1]
        Q, R = sla.qr(M if self.tall else M.T, mode="economic")
        d = np.abs(np.diag(R))
        if d.size and d.min() <= rtol * d.max():
            raise SteadyStateError("rank-deficient steady-state system")
        self.Q, self.R = Q, R

    def solve(self, b):
        if self.tall:
            return sla.solve_triangular(self.R, self.Q.T @ b)
        return self.Q @ sla.solve_triangular(self.R, b, trans="T")


def _residual(model, p, q, s, d, gas):
    rp, rq = eval_rhs(model, p, q, s, d, gas)
    load = np.concatenate([model.Bpd @ d, model.Bqs @ s + model.Fc])
    return float(np.linalg.norm(np.concatenate([rp, rq])) / max(1.0, np.linalg.norm(load)))


def _newton(model, x, s, d, gas, tol, iterations=12):
    """Plain Newton polish of a nearly steady state (local, no globalization)."""
    n_p = model.n_p
    sys = model.lumped(gas.d0)
    u = np.concatenate([s, d])
    for _ in range(iterations):
        p, q = x[:n_p], x[n_p:]
        if _residual(model, p, q, s, d, gas) <= tol:
            break
        r = sys.A @ x + sys.B @ u + sys.F
        r[n_p:] += model.f_q(p, q, s, gas.d0)
        J = sys.A + sp.vstack([sp.csr_matrix((n_p, model.n)), model.jacobian(p, q, s, gas.d0)])
        x = x - spla.spsolve(sp.csc_matrix(J), r)
    return x


def steady_state(model: DiscreteModel, sbar, dbar, gas: GasState, tol: float = 1e-12,
                 max_corrections: int = 10, max_march_steps: int | None = None,
                 h: float = 60.0) -> SteadyState:
    """Linear flux solve, pressure correction sweeps, then imex1 marching if needed."""
    sbar = np.atleast_1d(np.asarray(sbar, dtype=float))
    dbar = np.atleast_1d(np.asarray(dbar, dtype=float))
    if sbar.shape != (model.n_s,) or dbar.shape != (model.n_d,):
        raise SteadyStateError("boundary vectors do not match the port dimensions")
    qbar = LeastNorm(model.Apq).solve(-(model.Bpd @ dbar))
    pressure = LeastNorm(model.Aqp)
    base = -(model.Bqs @ sbar + model.Fc)
    pbar = pressure.solve(base)
    history = []
    try:
        for it in range(1, max_corrections + 1):
            pbar = pressure.solve(base - model.f_q(pbar, qbar, sbar, gas.d0))
            history.append(_residual(model, pbar, qbar, sbar, dbar, gas))
            if history[-1] <= tol:
                break
    except PressureError as err:
        raise SteadyStateError(f"negative pressure during correction: {err}") from None
    if history and history[-1] <= tol:
        return SteadyState(pbar, qbar, history[-1], it, 0, history)

    # cyclic or compressor networks: march towards equilibrium
    sys = model.lumped(gas.d0)
    if max_march_steps is None:
        max_march_steps = int(24 * 3600 / h)
    fac = spla.splu(sp.csc_matrix(sys.E - h * sys.A))
    u = np.concatenate([sbar, dbar])
    x = np.concatenate([pbar, qbar])
    load = sys.B @ u + sys.F
    steps = 0
    try:
        for steps in range(1, max_march_steps + 1):
            dx = fac.solve(h * (sys.A @ x + load + _flux_part(model, x, sbar, gas)))
            x = x + dx
            if np.linalg.norm(dx) / h <= tol * max(1.0, np.linalg.norm(x)):
                break
            if steps % 50 == 0 and np.linalg.norm(dx) / h <= 1e-4 * max(1.0, np.linalg.norm(x)):
                break
        x = _newton(model, x, sbar, dbar, gas, tol)
    except PressureError as err:
        raise SteadyStateError(f"negative pressure while marching: {err}") from None
    pbar, qbar = x[:model.n_p], x[model.n_p:]
    res = _residual(model, pbar, qbar, sbar, dbar, gas)
    history.append(res)
    if not np.isfinite(res) or res > tol:
        raise SteadyStateError(f"no steady state within budget (residual {res:.2e})")
    if np.any(pbar <= 0):
        raise SteadyStateError("steady state has non-positive pressures")
    return SteadyState(pbar, qbar, res, max_corrections, steps, history)


def _flux_part(model, x, s, gas):
    out = np.zeros_like(x)
    out[model.n_p:] = model.f_q(x[:model.n_p], x[model.n_p:], s, gas.d0)
    return out


_CACHE: dict = {}


def _cache_key(model, params, sbar, dbar, variant):
    h = hashlib.sha256()
    h.update(str(model.meta.get("key", id(model))).encode())
    h.update(np.asarray(model.Fc).tobytes())
    h.update(np.asarray([params.T0, params.RS], dtype=float).tobytes())
    h.update(np.asarray(sbar, dtype=float).tobytes())
    h.update(np.asarray(dbar, dtype=float).tobytes())
    h.update(variant.encode())
    return h.hexdigest()[:24]


def operating_point(model: DiscreteModel, params: Params, sbar, dbar,
                    config: GlobalConfig | None = None) -> tuple[GasState, SteadyState]:
    """Steady state with the mean-compressibility bootstrap (z = 1 pass, then z0)."""
    cfg = config or GlobalConfig()
    if model.linear:
        zero = SteadyState(np.zeros(model.n_p), np.zeros(model.n_q), 0.0, 0)
        return GasState(1.0, model.meta.get("d0", 1.0), 0.0), zero
    key = _cache_key(model, params, sbar, dbar, cfg.compressibility)
    if key in _CACHE:
        return _CACHE[key]
    path = os.path.join(cfg.cache_dir, f"steady-{key}.npz") if cfg.cache_dir else ""
    if path and os.path.exists(path):
        data = np.load(path)
        result = (GasState(*data["gas"]), SteadyState(data["p"], data["q"], float(data["res"]),
                                                      int(data["it"])))
        _CACHE[key] = result
        return result
    kw = dict(tol=cfg.steady_tol, max_corrections=cfg.max_corrections,
              max_march_steps=int(cfg.march_hours * 3600 / cfg.dt), h=cfg.dt)
    first = steady_state(model, sbar, dbar, GasState.ideal(params), **kw)
    gas = gas_state(first.pbar, params, cfg.compressibility, cfg.p_crit, cfg.T_crit)
    st = steady_state(model, sbar, dbar, gas, **kw)
    if path:
        os.makedirs(cfg.cache_dir, exist_ok=True)
        np.savez(path, gas=[gas.z0, gas.d0, gas.p0], p=st.pbar, q=st.qbar, res=st.residual,
                 it=st.iterations)
    _CACHE[key] = (gas, st)
    return gas, st
