"""Semi-discrete gas network model.

The model is kept in input-output form::

    E x' = A x + B u + F + f(x, u),     y = C x,

with x = (p, q) split into node pressures (bar) and edge mass fluxes (kg/s),
inputs u = (s_p, d_q) (supply pressures, demand fluxes) and outputs
y = (s_q, d_p) (supply fluxes, demand pressures).  The whole system is written
with a positive definite mass matrix E; pressures in bar are obtained by
folding the Pa/bar factors into the coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .config import GlobalConfig
from .netgraph import (Network, NetworkError, RefinementResult, TopologyMatrices, incidence,
                       network_hash, nominal_length, refine)

GRAVITY = 9.80665
BAR = 1e5
DISCRETIZATIONS = ("ode_end", "ode_mid")
FRICTION_VARIANTS = ("hofer", "nikuradse", "altshul", "schifrinson", "pmt1025", "igt")
COMPRESSIBILITY_VARIANTS = ("ideal", "dvgw2000", "aga88", "papay")


class ModelError(ValueError):
    pass


class UnsupportedFeatureError(ModelError):
    pass


class PressureError(ArithmeticError):
    """Non-positive reconstructed pressure while evaluating friction."""

    def __init__(self, edge: int):
        super().__init__(f"non-positive pressure at edge {edge}")
        self.edge = edge


# ---------------------------------------------------------------- physics

def friction_factor(variant: str, d: float, k: float, Re: float = 1e6) -> float:
    """Darcy-Weisbach friction factor.

    ``nikuradse`` and ``schifrinson`` are the rough-pipe limits; ``altshul``,
    ``hofer`` and ``pmt1025`` blend in the Reynolds number; ``igt`` depends on
    the Reynolds number only.
    """
    if d <= 0 or k < 0 or Re <= 0:
        raise ValueError("need d > 0, k >= 0 and Re > 0")
    r = k / d
    if variant == "nikuradse":
        if k == 0:
            raise ValueError("nikuradse needs k > 0")
        lam = (2.0 * math.log10(1.0 / r) + 1.138) ** -2
    elif variant == "schifrinson":
        if k == 0:
            raise ValueError("schifrinson needs k > 0")
        lam = 0.11 * r ** 0.25
    elif variant == "altshul":
        if k == 0 and math.isinf(Re):
            raise ValueError("altshul degenerates for k = 0 and Re -> inf")
        lam = 0.11 * (r + 68.0 / Re) ** 0.25
    elif variant == "hofer":
        if Re <= 7:
            raise ValueError("hofer needs Re > 7")
        arg = 4.518 / Re * math.log10(Re / 7.0) + r / 3.71
        if arg <= 0:
            raise ValueError("hofer degenerates for k = 0 and Re -> inf")
        lam = (-2.0 * math.log10(arg)) ** -2
    elif variant == "pmt1025":
        if k == 0 and math.isinf(Re):
            raise ValueError("pmt1025 degenerates for k = 0 and Re -> inf")
        lam = 0.067 * (158.0 / Re + 2.0 * r) ** 0.2
    elif variant == "igt":
        lam = 0.188 * Re ** -0.2
    else:
        raise ValueError(f"unknown friction variant {variant!r}")
    return lam


def compressibility(variant: str, p: float, T: float, p_crit: float = 46.4e5,
                    T_crit: float = 192.0) -> float:
    """Compressibility factor z(p, T); ``p`` in Pa, ``T`` in K."""
    if p < 0 or T <= 0:
        raise ValueError("need p >= 0 and T > 0")
    pr, Tr = p / p_crit, T / T_crit
    if variant == "ideal":
        z = 1.0
    elif variant == "aga88":
        z = 1.0 + 0.257 * pr - 0.533 * pr / Tr
    elif variant == "papay":
        z = 1.0 - 3.52 * pr * math.exp(-2.26 * Tr) + 0.274 * pr ** 2 * math.exp(-1.878 * Tr)
    elif variant == "dvgw2000":
        z = 1.0 + (0.083 - 0.422 / Tr ** 1.6) * pr / Tr
    else:
        raise ValueError(f"unknown compressibility variant {variant!r}")
    if z <= 0:
        raise ValueError(f"{variant}: z = {z:.3g} outside validity at p={p:.3g} Pa, T={T:.3g} K")
    return z


@dataclass(frozen=True)
class Params:
    T0: float
    RS: float

    def __post_init__(self):
        if self.T0 <= 0 or self.RS <= 0:
            raise ValueError("T0 and RS must be positive")


@dataclass(frozen=True)
class GasState:
    z0: float
    d0: float
    p0: float  # Pa

    @classmethod
    def ideal(cls, params: Params) -> "GasState":
        return cls(1.0, 1.0 / (params.T0 * params.RS), 0.0)


def gas_state(pbar, params: Params, variant: str = "ideal", p_crit: float = 46.4e5,
              T_crit: float = 192.0) -> GasState:
    """Mean compressibility from a steady pressure vector given in bar."""
    pbar = np.asarray(pbar, dtype=float)
    if pbar.size == 0 or np.any(pbar <= 0):
        raise ValueError("steady pressures must be positive")
    p0 = float(pbar.mean()) * BAR
    z0 = compressibility(variant, p0, params.T0, p_crit, T_crit)
    return GasState(z0, 1.0 / (params.T0 * params.RS * z0), p0)


# ----------------------------------------------------------------- model

@dataclass(frozen=True)
class LumpedSystem:
    """E x' = A x + B u + F + f(x, u), y = C x + y0.

    ``E`` may be a stack of dense matrices (one per batch column) and ``F``,
    ``y0`` may carry a trailing batch axis.
    """
    E: object
    A: object
    B: object
    C: object
    F: np.ndarray
    y0: np.ndarray
    f: object = None

    @property
    def n(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class DiscreteModel:
    disc: str  # ode_end, ode_mid or linear
    Ep0: sp.spmatrix  # pressure mass matrix divided by d0 (physical) or as is (linear)
    Eq: sp.spmatrix
    Apq: sp.spmatrix
    Aqp: sp.spmatrix
    Bpd: sp.spmatrix
    Bqs: sp.spmatrix
    Csq: sp.spmatrix
    Cdp: sp.spmatrix
    Fc: np.ndarray
    grav: np.ndarray = None  # D_g per edge
    fric: np.ndarray = None  # 1e-10 (L/S) D_f per edge, friction scale folded in
    Prec: sp.spmatrix = None  # pressure reconstruction from p
    Prec_s: sp.spmatrix = None  # ... and from s_p
    Aqq: sp.spmatrix = None  # linear q-q coupling (frozen dissipation)
    coef: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def n_p(self) -> int:
        return self.Apq.shape[0]

    @property
    def n_q(self) -> int:
        return self.Aqp.shape[0]

    @property
    def n_s(self) -> int:
        return self.Bqs.shape[1]

    @property
    def n_d(self) -> int:
        return self.Bpd.shape[1]

    @property
    def n(self) -> int:
        return self.n_p + self.n_q

    @property
    def ports(self) -> int:
        return self.n_s + self.n_d

    @property
    def linear(self) -> bool:
        return self.disc == "linear"

    @property
    def active(self) -> np.ndarray:
        if self.fric is None:
            return np.zeros(self.n_q, dtype=bool)
        return (self.fric != 0) | (self.grav != 0)

    def Ep(self, d0: float) -> sp.spmatrix:
        return self.Ep0 if self.linear else (self.Ep0 * d0).tocsr()

    def reconstruct(self, p, s):
        return self.Prec @ p + self.Prec_s @ s

    def f_q(self, p, q, s, d0):
        """Gravity and friction term; supports a trailing batch axis."""
        out = np.zeros(np.shape(q))
        if self.linear:
            return out
        act = self.active
        ps = self.reconstruct(p, s)[act]
        if np.any(ps <= 0):
            bad = np.flatnonzero(act)[np.nonzero(ps <= 0)[0][0]]
            raise PressureError(int(bad))
        qa = q[act]
        g, c = self.grav[act], self.fric[act]
        if qa.ndim == 2:
            g, c = g[:, None], c[:, None]
        out[act] = -(g * d0 * ps + c * np.abs(qa) * qa / (d0 * ps))
        return out

    def jacobian(self, p, q, s, d0) -> sp.csr_matrix:
        """Jacobian of f_q with respect to (p, q)."""
        if self.linear:
            return sp.csr_matrix((self.n_q, self.n))
        act = self.active.astype(float)
        ps = self.reconstruct(p, s)
        ps = np.where(act > 0, ps, 1.0)
        dq = -act * self.fric * 2.0 * np.abs(q) / (d0 * ps)
        dps = act * (-self.grav * d0 + self.fric * np.abs(q) * q / (d0 * ps ** 2))
        return sp.hstack([sp.diags(dps) @ self.Prec, sp.diags(dq)]).tocsr()

    def lumped(self, d0: float = 1.0, anchor_free: bool = True) -> LumpedSystem:
        E = sp.block_diag([self.Ep(d0), self.Eq], format="csc")
        Aqq = self.Aqq if self.Aqq is not None else sp.csr_matrix((self.n_q, self.n_q))
        A = sp.bmat([[sp.csr_matrix((self.n_p, self.n_p)), self.Apq],
                     [self.Aqp, Aqq]], format="csr")
        B = sp.bmat([[sp.csr_matrix((self.n_p, self.n_s)), self.Bpd],
                     [self.Bqs, sp.csr_matrix((self.n_q, self.n_d))]], format="csr")
        C = sp.bmat([[sp.csr_matrix((self.n_s, self.n_p)), self.Csq],
                     [self.Cdp, sp.csr_matrix((self.n_d, self.n_q))]], format="csr")
        F = np.concatenate([np.zeros(self.n_p), self.Fc])
        n_p, n_s = self.n_p, self.n_s

        def friction(x, u):
            out = np.zeros(np.shape(x))
            out[n_p:] = self.f_q(x[:n_p], x[n_p:], u[:n_s], d0)
            return out
        return LumpedSystem(E, A, B, C, F, np.zeros(self.ports),
                            None if self.linear else friction)

    def with_discharge(self, pressures) -> "DiscreteModel":
        """Same model with new compressor discharge pressures (bar)."""
        rows = self.meta.get("compressor_rows", [])
        pressures = np.atleast_1d(np.asarray(pressures, dtype=float))
        if len(pressures) != len(rows):
            raise ModelError(f"expected {len(rows)} discharge pressures, got {len(pressures)}")
        Fc = self.Fc.copy()
        Fc[rows] = pressures
        return replace(self, Fc=Fc)


def _edge_geometry(ref: RefinementResult, default_diameter: float):
    edges = ref.refined.edges
    d = np.array([e.diameter if e.diameter > 0 else default_diameter for e in edges])
    L = np.full(len(edges), ref.dx)
    return d, np.pi * d ** 2 / 4.0, L


def assemble(topo: TopologyMatrices, ref: RefinementResult, disc: str = "ode_end",
             friction: str = "schifrinson", config: GlobalConfig | None = None,
             discharge=None, qbar=None) -> DiscreteModel:
    """Assemble the model operators for a refined network.

    ``discharge`` holds one pressure (bar) per compressor in file order;
    ``qbar`` optional steady fluxes used for Reynolds-dependent friction.
    """
    cfg = config or GlobalConfig()
    if disc not in DISCRETIZATIONS:
        raise ModelError(f"unknown discretization {disc!r}")
    net = ref.refined
    kinds = np.array([e.kind for e in net.edges])
    comp = np.flatnonzero(kinds == "compressor")
    pipe = kinds == "pipe"
    d, S, L = _edge_geometry(ref, cfg.default_diameter)
    A0 = topo.A0.tocsr()
    n_p, n_q = A0.shape

    storage = BAR * S * L
    storage[comp] = BAR * S[comp] * L[comp]
    if disc == "ode_end":
        Ep0 = (topo.A0R @ sp.diags(storage) @ topo.A0R.T).tocsr()
        diag = Ep0.diagonal()
        if np.any(diag <= 0):
            node = net.nodes[topo.reduced_rows[np.flatnonzero(diag <= 0)[0]]]
            raise NetworkError(f"endpoint model: node {node!r} has no incoming edge")
        Prec = topo.A0R.T.tocsr()
        Prec_s = sp.csr_matrix((n_q, len(net.supply)))
    else:
        absA0 = abs(A0)
        Ep0 = (absA0 @ sp.diags(storage / 4.0) @ absA0.T).tocsr()
        Prec = (0.5 * absA0.T).tocsr()
        Prec_s = (0.5 * abs(topo.Bs).T).tocsr()

    eq = 1e-5 * L / S
    eq[comp] = 1.0
    Eq = sp.diags(eq).tocsr()

    lam = np.zeros(n_q)
    rough = np.array([e.roughness for e in net.edges])
    for j in np.flatnonzero(pipe):
        Re = 1e6
        if qbar is not None and abs(qbar[j]) > 0:
            Re = abs(qbar[j]) * d[j] / (S[j] * cfg.eta)
        lam[j] = friction_factor(friction, d[j], rough[j], Re)
    Df = lam / (2.0 * d * S) * ref.friction_scale
    fric = 1e-10 * (L / S) * Df
    grav = GRAVITY * np.array([e.incline for e in net.edges])
    fric[~pipe] = 0.0
    grav[~pipe] = 0.0

    Aqp = (-A0.T).tolil()
    Bqs = (-topo.Bs.T).tolil()
    Fc = np.zeros(n_q)
    if len(comp):
        if discharge is None:
            raise ModelError("missing discharge pressure for compressor edges")
        discharge = np.atleast_1d(np.asarray(discharge, dtype=float))
        if len(discharge) != len(comp):
            raise ModelError(f"expected {len(comp)} discharge pressures, got {len(discharge)}")
        row_of = {n: i for i, n in enumerate(topo.reduced_rows)}
        idx = net.index
        for k, pc in zip(comp, discharge):
            Aqp[k, :] = 0.0
            Bqs[k, :] = 0.0
            Aqp[k, row_of[idx[net.edges[k].target]]] = -1.0
            Fc[k] = pc
    keep = topo.reduced_rows
    Bd0 = topo.Bd.tocsr()[keep]
    return DiscreteModel(
        disc=disc, Ep0=Ep0, Eq=Eq, Apq=A0, Aqp=Aqp.tocsr(), Bpd=(-Bd0).tocsr(),
        Bqs=Bqs.tocsr(), Csq=(-topo.Bs).tocsr(), Cdp=Bd0.T.tocsr(), Fc=Fc,
        grav=grav, fric=fric, Prec=Prec, Prec_s=Prec_s,
        coef=dict(SL=S * L, L_over_S=L / S, Dg=grav, Df=Df, lam=lam),
        meta=dict(compressor_rows=list(map(int, comp)), dx=ref.dx, friction=friction,
                  virtual_of=ref.virtual_of))


def build_model(net: Network, disc: str = "ode_end", config: GlobalConfig | None = None,
                discharge=None, valves=None, qbar=None) -> DiscreteModel:
    """Refine, build incidences and assemble in one go."""
    cfg = config or GlobalConfig()
    if valves is not None:
        for j, setting in zip(net.valves, np.atleast_1d(valves)):
            if float(setting) == 0.0:
                raise UnsupportedFeatureError(f"closed valve on edge {j} is not supported")
    dx = nominal_length(cfg.refine_steps * cfg.dt, cfg.v_max, cfg.eps)
    ref = refine(net, dx)
    model = assemble(incidence(ref.refined), ref, disc, cfg.friction, cfg, discharge, qbar)
    key = f"{network_hash(net)}:{disc}:{dx:.6g}:{cfg.friction}:{cfg.compressibility}"
    return replace(model, meta={**model.meta, "key": key, "network": network_hash(net)})


def eval_rhs(model: DiscreteModel, p, q, s_p, d_q, gas: GasState):
    """Right-hand side split into pressure and flux rows."""
    rp = model.Apq @ q + model.Bpd @ d_q
    rq = model.Aqp @ p + model.Bqs @ s_p + model.Fc + model.f_q(p, q, s_p, gas.d0)
    if model.Aqq is not None:
        rq = rq + model.Aqq @ q
    return rp, rq


# ------------------------------------------------- port-Hamiltonian view

@dataclass(frozen=True)
class PortHamiltonianParts:
    E: sp.spmatrix
    J: sp.spmatrix
    R: object  # callable x -> sparse diagonal-block matrix
    Q: sp.spmatrix
    G: sp.spmatrix
    P: sp.spmatrix


def _safe(q, floor=1e-8):
    return np.where(np.abs(q) < floor, np.where(q < 0, -floor, floor), q)


def dissipation(model: DiscreteModel, x, s_p, d0: float, compressors: bool = True):
    """Diagonal of the flux block of R(x) so that -R(x) q = f_q + (compressor terms)."""
    p, q = x[:model.n_p], x[model.n_p:]
    ps = model.reconstruct(p, s_p)
    act = model.active
    r = np.zeros(model.n_q)
    pa = ps[act]
    qa = q[act]
    r[act] = model.grav[act] * d0 * pa / _safe(qa) + model.fric[act] * np.abs(qa) / (d0 * pa)
    rows = model.meta.get("compressor_rows", [])
    if compressors and rows:
        # skew part couples suction and discharge; the surgery and load go into R
        J = _skew_flux(model)
        extra = (J @ p)[rows] - (model.Aqp @ p)[rows] - model.Fc[rows]
        r[rows] = extra / _safe(q[rows])
    return r


def _skew_flux(model):
    return -model.Apq.T.tocsr()


def ph_parts(model: DiscreteModel, d0: float) -> PortHamiltonianParts:
    if model.disc != "ode_end":
        raise ModelError("only the endpoint discretization is port-Hamiltonian")
    n_p, n_q = model.n_p, model.n_q
    E = sp.block_diag([model.Ep(d0), model.Eq], format="csr")
    J = sp.bmat([[sp.csr_matrix((n_p, n_p)), model.Apq],
                 [_skew_flux(model), sp.csr_matrix((n_q, n_q))]], format="csr")
    Q = sp.diags(np.concatenate([np.full(n_p, 1e5), np.full(n_q, 1e-5)])).tocsr()
    G = sp.bmat([[sp.csr_matrix((n_p, model.n_s)), sp.csr_matrix((n_p, model.n_d))],
                 [model.Bqs, sp.csr_matrix((n_q, model.n_d))]], format="csr")
    P = sp.bmat([[sp.csr_matrix((n_p, model.n_s)), model.Cdp.T],
                 [sp.csr_matrix((n_q, model.n_s)), sp.csr_matrix((n_q, model.n_d))]],
                format="csr")

    def R(x, s_p):
        r = dissipation(model, x, s_p, d0)
        return sp.block_diag([sp.csr_matrix((n_p, n_p)), sp.diags(r)], format="csr")

    return PortHamiltonianParts(E, J, R, Q, G, P)


def linearize(model: DiscreteModel, pbar, qbar, sbar, d0: float) -> DiscreteModel:
    """Deviation model with the dissipation frozen at the steady state."""
    if model.linear:
        return model
    r = dissipation(model, np.concatenate([pbar, qbar]), sbar, d0, compressors=False)
    Aqq = -sp.diags(r).tocsr()
    if model.Aqq is not None:
        Aqq = Aqq + model.Aqq
    return replace(model, disc="linear", Ep0=model.Ep(d0), Fc=np.zeros(model.n_q),
                   grav=None, fric=None, Aqq=Aqq.tocsr(),
                   meta={**model.meta, "frozen": True, "d0": d0, "origin": model.disc})


def dual_model(model: DiscreteModel, pbar=None, qbar=None, sbar=None, d0=None) -> DiscreteModel:
    """Transposed (dual) system of the frozen-dissipation linearization.

    Inputs of the dual are the primal outputs and vice versa, so the port
    dimensions are swapped: (s_q, d_p) drive, (s_p, d_q) are observed.
    """
    if model.disc == "ode_mid" or model.meta.get("origin") == "ode_mid":
        raise ModelError("the dual system is only defined for the endpoint discretization")
    lin = model if model.linear else linearize(model, pbar, qbar, sbar, d0)
    return replace(
        lin, Apq=lin.Aqp.T.tocsr(), Aqp=lin.Apq.T.tocsr(),
        Aqq=None if lin.Aqq is None else lin.Aqq.T.tocsr(),
        Bpd=lin.Cdp.T.tocsr(), Bqs=lin.Csq.T.tocsr(),
        Csq=lin.Bqs.T.tocsr(), Cdp=lin.Bpd.T.tocsr(),
        meta={**lin.meta, "dual": not lin.meta.get("dual", False)})


def linear_system(Ep, Eq, Apq, Aqp, Aqq=None, Bpd=None, Bqs=None, Csq=None, Cdp=None,
                  meta=None) -> DiscreteModel:
    """Linear model in the pressure/flux block layout from dense or sparse blocks.

    Missing port blocks default to empty (zero columns or rows).
    """
    Ep, Eq = sp.csr_matrix(np.atleast_2d(Ep)), sp.csr_matrix(np.atleast_2d(Eq))
    n_p, n_q = Ep.shape[0], Eq.shape[0]
    if Ep.shape != (n_p, n_p) or Eq.shape != (n_q, n_q):
        raise ModelError("mass blocks must be square")

    def block(M, shape, free):
        if M is None:
            shape = tuple(0 if s is None else s for s in shape)
            return sp.csr_matrix(shape)
        M = sp.csr_matrix(M) if sp.issparse(M) else sp.csr_matrix(np.asarray(M, dtype=float).reshape(
            shape[0] if shape[0] is not None else -1, shape[1] if shape[1] is not None else -1))
        for want, got in zip(shape, M.shape):
            if want is not None and want != got:
                raise ModelError(f"{free}: expected {shape}, got {M.shape}")
        return M

    Apq = block(Apq, (n_p, n_q), "Apq")
    Aqp = block(Aqp, (n_q, n_p), "Aqp")
    Bpd = block(Bpd, (n_p, None), "Bpd")
    Bqs = block(Bqs, (n_q, None), "Bqs")
    Csq = block(Csq, (None, n_q), "Csq")
    Cdp = block(Cdp, (None, n_p), "Cdp")
    if Bpd.shape[1] != Cdp.shape[0] or Bqs.shape[1] != Csq.shape[0]:
        raise ModelError("port blocks must pair supply and demand dimensions")
    return DiscreteModel(
        disc="linear", Ep0=Ep, Eq=Eq, Apq=Apq, Aqp=Aqp, Bpd=Bpd, Bqs=Bqs, Csq=Csq, Cdp=Cdp,
        Fc=np.zeros(n_q), Aqq=None if Aqq is None else block(Aqq, (n_q, n_q), "Aqq"),
        Prec=sp.csr_matrix((n_q, n_p)), Prec_s=sp.csr_matrix((n_q, Bqs.shape[1])),
        meta={"key": "linear-surrogate", "d0": 1.0, **(meta or {})})
