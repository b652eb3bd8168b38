"""Scenarios and fixed-step integrators (imex1, imex2, rk4).

All solvers work on a :class:`~gasmor.gasmodel.LumpedSystem`, so full and
reduced models run through the same code.  States may carry a trailing batch
axis, which lets many perturbation runs advance in one sparse solve.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .gasmodel import LumpedSystem, Params, PressureError

SOLVERS = ("imex1", "imex2", "rk4")
LAMBDAS = {"efficient": 0.24, "l-stable": (2 - 2 ** 0.5) / 2, "sdirk": 0.5,
           "third-order": (3 + 3 ** 0.5) / 6}


class ScenarioError(ValueError):
    pass


class SolverError(RuntimeError):
    pass


class BlowUpError(SolverError):
    def __init__(self, step: int, reason: str = "non-finite state"):
        super().__init__(f"{reason} at step {step}")
        self.step = step


# ------------------------------------------------------------- scenarios

@dataclass(frozen=True)
class Scenario:
    T0: float
    RS: float
    tH: float
    ut: np.ndarray
    up: np.ndarray  # (breakpoints, N_s) bar
    uq: np.ndarray  # (breakpoints, N_d) kg/s
    cp: np.ndarray = field(default_factory=lambda: np.zeros(0))
    vs: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if self.tH <= 0:
            raise ScenarioError("tH must be positive")
        if len(self.ut) == 0 or self.ut[0] != 0 or np.any(np.diff(self.ut) <= 0):
            raise ScenarioError("ut must start at 0 and ascend")
        if len(self.up) != len(self.ut) or len(self.uq) != len(self.ut):
            raise ScenarioError("up and uq need one row per breakpoint")

    @property
    def params(self) -> Params:
        return Params(self.T0, self.RS)

    @property
    def steady_inputs(self):
        return self.up[0], self.uq[0]

    def with_params(self, params: Params) -> "Scenario":
        return replace(self, T0=params.T0, RS=params.RS)


_REQUIRED = ("T0", "RS", "tH", "ut", "up", "uq")


def _numbers(text: str) -> list[list[float]]:
    rows = [r for r in text.split(";") if r.strip()]
    return [[float(v) for v in re.split(r"[\s,]+", r.strip()) if v] for r in rows]


def parse_scenario(text: str) -> Scenario:
    """Parse ``key = value`` lines; list rows may be separated by ';'."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line or line.startswith("["):
            continue
        if "=" not in line:
            raise ScenarioError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        raw[key] = value
    for key in _REQUIRED:
        if key not in raw:
            raise ScenarioError(f"missing scenario key {key!r}")
    try:
        ut = np.array(_numbers(raw["ut"])).ravel()
        mats = {}
        for key in ("up", "uq"):
            rows = _numbers(raw[key])
            flat = np.array([v for r in rows for v in r])
            if len(rows) == len(ut):
                mats[key] = np.array(rows, dtype=float)
            elif len(ut) and flat.size % len(ut) == 0:
                mats[key] = flat.reshape(len(ut), -1)
            else:
                raise ScenarioError(f"{key}: {flat.size} values do not fit {len(ut)} breakpoints")
        cp = np.array(_numbers(raw.get("cp", ""))).ravel() if raw.get("cp") else np.zeros(0)
        vs = np.array(_numbers(raw.get("vs", ""))).ravel() if raw.get("vs") else np.zeros(0)
        return Scenario(float(raw["T0"]), float(raw["RS"]), float(raw["tH"]), ut,
                        mats["up"], mats["uq"], cp, vs)
    except ValueError as err:
        if isinstance(err, ScenarioError):
            raise
        raise ScenarioError(str(err)) from None


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def input_at(scn: Scenario, t: float):
    """Boundary values of the most recent breakpoint at or before ``t``."""
    if t < 0 or t > scn.tH * (1 + 1e-12):
        raise ScenarioError(f"t = {t} outside [0, {scn.tH}]")
    i = int(np.searchsorted(scn.ut, t, side="right")) - 1
    return scn.up[i], scn.uq[i]


def scenario_input(scn: Scenario):
    """Stacked input function t -> (s_p, d_q) for the integrators."""
    def u(t):
        s, d = input_at(scn, min(t, scn.tH))
        return np.concatenate([s, d])
    return u


# ------------------------------------------------------------- solvers

@dataclass
class Solution:
    t: np.ndarray
    y: np.ndarray  # (steps, outputs[, batch])
    x: np.ndarray | None = None
    runtime: float = 0.0


class _Factor:
    """Reusable factorization of a sparse, dense or stacked-dense matrix."""

    def __init__(self, M):
        try:
            if sp.issparse(M):
                self.kind = "sparse"
                self.lu = spla.splu(sp.csc_matrix(M))
            elif M.ndim == 3:
                self.kind = "stack"
                self.inv = np.linalg.inv(M)
            else:
                self.kind = "dense"
                self.lu = sla.lu_factor(M, check_finite=True)
                if np.any(np.diag(self.lu[0]) == 0):
                    raise np.linalg.LinAlgError("singular")
        except (RuntimeError, np.linalg.LinAlgError, ValueError) as err:
            raise SolverError(f"singular iteration matrix: {err}") from None

    def solve(self, r):
        if self.kind == "sparse":
            return self.lu.solve(r)
        if self.kind == "stack":
            if r.ndim == 1:
                raise SolverError("stacked factor needs batched right-hand sides")
            return np.einsum("kij,jk->ik", self.inv, r)
        return sla.lu_solve(self.lu, r, check_finite=False)


def _columns(v, x):
    v = np.asarray(v)
    if x.ndim == 2 and v.ndim == 1:
        return v[:, None]
    return v


def integrate(sys: LumpedSystem, x0, u, t_end: float, h: float, method: str = "imex1",
              gamma: float = 1.0, lam: float = 0.5, capture: bool = False,
              observer=None) -> Solution:
    """Fixed-step integration on the grid t_k = k h, k = 0..floor(t_end/h).

    ``u`` maps a time to the stacked input (and may return a batch).
    ``observer(k, x)`` is called for every grid state including x_0.
    """
    if method not in SOLVERS:
        raise SolverError(f"unknown solver {method!r}")
    if h <= 0:
        raise SolverError("step size must be positive")
    start = time.perf_counter()
    steps = int(np.floor(t_end / h + 1e-9))
    t = h * np.arange(steps + 1)
    x = np.array(x0, dtype=float, copy=True)
    F = _columns(sys.F, x)
    y0 = _columns(sys.y0, x)
    A, B, C = sys.A, sys.B, sys.C
    f = sys.f
    n = x.shape[0]
    raw_u = u

    def u(tk):
        return _columns(raw_u(tk), x)

    def out(state):
        return C @ state + y0

    ys = np.empty((steps + 1,) + out(x).shape)
    xs = np.empty((steps + 1,) + x.shape) if capture else None
    ys[0] = out(x)
    if capture:
        xs[0] = x
    if observer is not None:
        observer(0, x)
    if n == 0:
        ys[:] = ys[0]
        if observer is not None:
            for k in range(1, steps + 1):
                observer(k, x)
        return Solution(t, ys, xs, time.perf_counter() - start)

    def drift(state, uk):
        r = A @ state + B @ uk + F
        if f is not None:
            r = r + f(state, uk)
        return r

    if method == "imex1":
        fac = _Factor(sys.E - (gamma * h) * A)
    elif method == "imex2":
        fac = _Factor(sys.E - (gamma * lam * h) * A)
        emass = _Factor(sys.E)
    else:
        emass = _Factor(sys.E)

    uk = u(t[0])
    try:
        for k in range(steps):
            if method == "imex1":
                x = x + fac.solve(h * drift(x, uk))
                uk = u(t[k + 1])
            elif method == "imex2":
                # implicit part: A x + B u + F + f(x_k), explicit part: f - f(x_k),
                # so equilibria stay fixed; stage inputs at the implicit stage
                # times t_k + lam h and t_k + (1 - lam) h
                un = u(t[k + 1])
                f0 = f(x, uk) if f is not None else 0.0
                G1 = B @ u(t[k] + lam * h) + F + f0
                G2 = B @ u(t[k] + (1 - lam) * h) + F + f0
                Ex = _mass(sys.E, x)
                z1 = fac.solve(Ex + (h * lam) * G1)
                f1 = f(z1, uk) - f0 if f is not None else 0.0
                Az1 = A @ z1
                z2 = fac.solve(Ex + h * f1 + (h * (1 - 2 * lam)) * (G1 + gamma * Az1)
                               + (h * lam) * G2)
                f2 = f(z2, un) - f0 if f is not None else 0.0
                x = x + emass.solve(0.5 * h * (G1 + f1 + gamma * Az1
                                               + G2 + f2 + gamma * (A @ z2)))
                uk = un
            else:
                # inputs are held over [t_k, t_k+1), as in the imex schemes,
                # so the last stage takes the left limit at the step end
                um = u(t[k] + 0.5 * h)
                k1 = emass.solve(drift(x, uk))
                k2 = emass.solve(drift(x + 0.5 * h * k1, um))
                k3 = emass.solve(drift(x + 0.5 * h * k2, um))
                k4 = emass.solve(drift(x + h * k3, u(t[k] + (1 - 1e-6) * h)))
                x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
                uk = u(t[k + 1])
            if not np.all(np.isfinite(x)):
                raise BlowUpError(k + 1)
            ys[k + 1] = out(x)
            if capture:
                xs[k + 1] = x
            if observer is not None:
                observer(k + 1, x)
    except PressureError as err:
        raise BlowUpError(k + 1, str(err)) from None
    return Solution(t, ys, xs, time.perf_counter() - start)


def _mass(E, x):
    if not sp.issparse(E) and np.ndim(E) == 3:
        return np.einsum("kij,jk->ik", E, x)
    return E @ x


def imex1_solve(sys, x0, u, t_end, h, gamma=1.0, **kw) -> Solution:
    return integrate(sys, x0, u, t_end, h, "imex1", gamma=gamma, **kw)


def imex2_solve(sys, x0, u, t_end, h, gamma=1.0, lam=0.5, **kw) -> Solution:
    return integrate(sys, x0, u, t_end, h, "imex2", gamma=gamma, lam=lam, **kw)


def rk4_solve(sys, x0, u, t_end, h, **kw) -> Solution:
    return integrate(sys, x0, u, t_end, h, "rk4", **kw)
