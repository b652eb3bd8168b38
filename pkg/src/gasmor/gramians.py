"""Structured empirical Gramians from perturbation trajectories.

Trajectories are produced per parameter sample and kept in a
:class:`TrajectoryBank`, which batches all perturbations of one kind into a
single multi-column solve and counts runs for bookkeeping.  Gramians are
accumulated separately for the pressure and flux blocks and summed over the
parameter samples; time integrals use the left rectangle rule with weight h.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import GlobalConfig
from .gasmodel import DiscreteModel, Params, dual_model
from .steady import operating_point
from .timestep import integrate

INPUT_SHAPES = ("impulse", "step", "random-binary", "gauss")
KINDS = ("WR", "WO", "WX", "WZ")


def sparse_grid(T0_range, RS_range) -> list[Params]:
    """Corners and centre of the parameter rectangle."""
    (t0, t1), (r0, r1) = T0_range, RS_range
    return [Params(t0, r0), Params(t0, r1), Params(t1, r0), Params(t1, r1),
            Params((t0 + t1) / 2, (r0 + r1) / 2)]


@dataclass
class TrainingSetup:
    sbar: np.ndarray
    dbar: np.ndarray
    theta: list[Params]
    h: float
    horizon: float = 3600.0
    input_shape: str = "step"
    scale: float = 0.01
    input_scales: np.ndarray | None = None  # overrides scale * |u|
    state_scales: np.ndarray | float | None = None  # overrides scale * |x|
    dual_scale: float = 1.0
    solver: str = "imex1"
    gamma: float = 1.0
    lam: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("training horizon must be positive")
        if not self.theta:
            raise ValueError("need at least one parameter sample")
        if self.input_shape not in INPUT_SHAPES:
            raise ValueError(f"unknown input shape {self.input_shape!r}")
        self.sbar = np.atleast_1d(np.asarray(self.sbar, dtype=float))
        self.dbar = np.atleast_1d(np.asarray(self.dbar, dtype=float))

    @property
    def ubar(self) -> np.ndarray:
        return np.concatenate([self.sbar, self.dbar])

    def key(self) -> str:
        import hashlib
        parts = [self.ubar.tobytes(), repr([(p.T0, p.RS) for p in self.theta]).encode(),
                 repr((self.h, self.horizon, self.input_shape, self.scale, self.solver,
                       self.gamma, self.lam, self.seed, self.dual_scale)).encode()]
        if self.input_scales is not None:
            parts.append(np.asarray(self.input_scales, dtype=float).tobytes())
        if self.state_scales is not None:
            parts.append(np.asarray(self.state_scales, dtype=float).tobytes())
        return hashlib.sha256(b"|".join(parts)).hexdigest()[:16]


def training_setup(scn, config: GlobalConfig, solver: str = "imex1", h=None,
                   theta=None) -> TrainingSetup:
    s, d = scn.steady_inputs
    return TrainingSetup(
        sbar=s, dbar=d, theta=theta or sparse_grid(config.T0_range, config.RS_range),
        h=h or config.dt, horizon=config.horizon, input_shape=config.input_shape,
        scale=config.perturbation, solver=solver, gamma=config.gamma, lam=config.lam,
        seed=config.seed)


@dataclass
class GramianPair:
    Wp: np.ndarray
    Wq: np.ndarray
    kind: str
    dual_based: bool = False

    def __add__(self, other: "GramianPair") -> "GramianPair":
        return GramianPair(self.Wp + other.Wp, self.Wq + other.Wq, self.kind, self.dual_based)

    def blocks(self):
        return self.Wp, self.Wq


def _relative_scales(values, scale):
    values = np.abs(np.asarray(values, dtype=float))
    fallback = scale * values.max() if values.size and values.max() > 0 else scale
    return np.where(values > 0, scale * values, fallback)


def _signal(shape: str, h: float, steps: int, rng):
    """Per-step multiplier of the perturbation scale for each input shape."""
    if shape == "impulse":
        sig = np.zeros(steps + 1)
        sig[0] = 1.0 / h
    elif shape == "step":
        sig = np.ones(steps + 1)
    elif shape == "random-binary":
        sig = rng.integers(0, 2, size=steps + 1).astype(float)
    else:
        sig = rng.standard_normal(steps + 1)
    return sig


@dataclass
class TrajectoryBank:
    """Perturbation trajectories per parameter sample, centred on the steady state."""
    model: DiscreteModel
    setup: TrainingSetup
    config: GlobalConfig = field(default_factory=GlobalConfig)
    runs: dict = field(default_factory=lambda: {"input": 0, "state": 0, "dual": 0})
    hits: int = 0
    _store: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return int(np.floor(self.setup.horizon / self.setup.h + 1e-9))

    def _get(self, key, build):
        if key in self._store:
            self.hits += 1
            return self._store[key]
        value = self._store[key] = build()
        return value

    def operating(self, k: int):
        return self._get(("op", k), lambda: operating_point(
            self.model, self.setup.theta[k], self.setup.sbar, self.setup.dbar, self.config))

    def input_scales(self):
        if self.setup.input_scales is not None:
            return np.asarray(self.setup.input_scales, dtype=float) * np.ones(self.model.ports)
        return _relative_scales(self.setup.ubar, self.setup.scale)

    def state_scales(self, x):
        if self.setup.state_scales is not None:
            return np.asarray(self.setup.state_scales, dtype=float) * np.ones(self.model.n)
        n_p = self.model.n_p
        return np.concatenate([_relative_scales(x[:n_p], self.setup.scale),
                               _relative_scales(x[n_p:], self.setup.scale)])

    def _input_fn(self, ubar, scales):
        st = self.setup
        rng = np.random.default_rng(st.seed)
        m = len(scales)
        sig = np.stack([_signal(st.input_shape, st.h, self.steps, rng) for _ in range(m)])
        base = ubar[:, None] * np.ones((1, m))
        h = st.h

        def u(t):
            k = min(int(np.floor(t / h + 1e-9)), self.steps)
            out = base.copy()
            out[np.arange(m), np.arange(m)] += scales * sig[:, k]
            return out
        return u

    def _solve(self, sys, x0, u, capture):
        st = self.setup
        return integrate(sys, x0, u, st.horizon, st.h, st.solver, st.gamma, st.lam,
                         capture=capture)

    def input_states(self, k: int) -> np.ndarray:
        """Centred states of the input-perturbed runs, shape (steps+1, N, ports)."""
        def build():
            gas, steady = self.operating(k)
            x0 = np.repeat(steady.x[:, None], self.model.ports, axis=1)
            sol = self._solve(self.model.lumped(gas.d0), x0,
                              self._input_fn(self.setup.ubar, self.input_scales()), True)
            self.runs["input"] += self.model.ports
            return sol.x - steady.x[None, :, None]
        return self._get(("input", k), build)

    def state_outputs(self, k: int) -> np.ndarray:
        """Centred outputs of the state-perturbed runs, shape (steps+1, outputs, N)."""
        def build():
            gas, steady = self.operating(k)
            n = self.model.n
            x0 = steady.x[:, None] + np.diag(self.state_scales(steady.x))
            sys = self.model.lumped(gas.d0)
            ubar = self.setup.ubar
            sol = self._solve(sys, x0, lambda t: ubar, False)
            self.runs["state"] += n
            ybar = sys.C @ steady.x + sys.y0
            return sol.y - ybar[None, :, None]
        return self._get(("state", k), build)

    def dual_states(self, k: int) -> np.ndarray:
        """Dual-system states mapped through E, shape (steps+1, N, ports)."""
        def build():
            gas, steady = self.operating(k)
            dual = dual_model(self.model, steady.pbar, steady.qbar, self.setup.sbar, gas.d0)
            sys = dual.lumped(gas.d0)
            m = dual.ports
            u = self._input_fn(np.zeros(m), np.full(m, self.setup.dual_scale))
            sol = self._solve(sys, np.zeros((dual.n, m)), u, True)
            self.runs["dual"] += m
            E = sys.E
            return np.stack([E @ xk for xk in sol.x])
        return self._get(("dual", k), build)


def _blocks(model, X):
    return X[:, :model.n_p], X[:, model.n_p:]


def _rect(X):
    """Drop the last sample: left rectangle rule."""
    return X[:-1]


def empirical_WR(bank: TrajectoryBank) -> GramianPair:
    model, h = bank.model, bank.setup.h
    Wp = np.zeros((model.n_p, model.n_p))
    Wq = np.zeros((model.n_q, model.n_q))
    for k in range(len(bank.setup.theta)):
        X = _rect(bank.input_states(k))  # (T, N, m)
        for W, Xb in zip((Wp, Wq), _blocks(model, X)):
            W += h * np.einsum("tim,tjm->ij", Xb, Xb)
    return GramianPair(Wp, Wq, "WR")


def empirical_WO(bank: TrajectoryBank, dual: bool = False) -> GramianPair:
    model, h = bank.model, bank.setup.h
    Wp = np.zeros((model.n_p, model.n_p))
    Wq = np.zeros((model.n_q, model.n_q))
    for k in range(len(bank.setup.theta)):
        if dual:
            Z = _rect(bank.dual_states(k))
            for W, Zb in zip((Wp, Wq), _blocks(model, Z)):
                W += h * np.einsum("tim,tjm->ij", Zb, Zb)
        else:
            Y = _rect(bank.state_outputs(k))  # (T, o, N)
            Yp, Yq = Y[:, :, :model.n_p], Y[:, :, model.n_p:]
            Wp += h * np.einsum("toi,toj->ij", Yp, Yp)
            Wq += h * np.einsum("toi,toj->ij", Yq, Yq)
    return GramianPair(Wp, Wq, "WO", dual)


def _cross(bank: TrajectoryBank, dual: bool, summed: bool) -> tuple[np.ndarray, np.ndarray]:
    model, h = bank.model, bank.setup.h
    Wp = np.zeros((model.n_p, model.n_p))
    Wq = np.zeros((model.n_q, model.n_q))
    for k in range(len(bank.setup.theta)):
        X = _rect(bank.input_states(k))  # (T, N, m)
        if dual:
            Z = _rect(bank.dual_states(k))  # (T, N, m)
        else:
            Y = _rect(bank.state_outputs(k))  # (T, m, N)
            Z = Y.transpose(0, 2, 1)  # (T, N, m): column j holds output m of perturbation j
        if summed:
            X = X.sum(axis=2, keepdims=True)
            Z = Z.sum(axis=2, keepdims=True)
        for W, Xb, Zb in zip((Wp, Wq), _blocks(model, X), _blocks(model, Z)):
            W += h * np.einsum("tim,tjm->ij", Xb, Zb)
    return Wp, Wq


def empirical_WX(bank: TrajectoryBank, dual: bool = False) -> GramianPair:
    if bank.model.n_s + bank.model.n_d != bank.model.ports:
        raise ValueError("cross Gramian needs a square system")
    return GramianPair(*_cross(bank, dual, summed=False), "WX", dual)


def empirical_WZ(bank: TrajectoryBank, dual: bool = False) -> GramianPair:
    return GramianPair(*_cross(bank, dual, summed=True), "WZ", dual)


GRAMIANS = {"WR": empirical_WR, "WO": empirical_WO, "WX": empirical_WX, "WZ": empirical_WZ}
