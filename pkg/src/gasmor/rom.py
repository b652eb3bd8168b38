"""Reduced models in steady-state deviation coordinates.

With x = xbar + U z the reduced system reads

    V^T E U z' = V^T A U z + V^T B u + V^T (A xbar + F) + V^T f(xbar + U z, u),
    y = C xbar + C U z,

so z(0) = 0 and the steady anchor is absorbed into the constant load and the
output offset.  The nonlinear part is evaluated by lifting to full dimension.
Several parameter samples can be simulated as one batch: each batch column
has its own anchor and density, and the mass matrix becomes a stack.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .config import GlobalConfig
from .gasmodel import DiscreteModel, LumpedSystem, Params, PressureError
from .reductors import ProjectorSeries, ReductorError
from .steady import operating_point
from .timestep import Scenario, Solution, integrate, scenario_input


def _dense(M):
    return M.toarray() if sp.issparse(M) else np.asarray(M)


@dataclass(frozen=True)
class ReducedModel:
    model: DiscreteModel
    series: ProjectorSeries
    Ep0: np.ndarray
    Eq: np.ndarray
    Apq: np.ndarray
    Aqp: np.ndarray
    Aqq: np.ndarray
    Bpd: np.ndarray
    Bqs: np.ndarray
    Csq: np.ndarray
    Cdp: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def order(self) -> tuple[int, int]:
        return self.Apq.shape

    @property
    def n(self) -> int:
        return sum(self.order)

    def Ep(self, d0) -> np.ndarray:
        """Reduced pressure mass matrix; a stack when ``d0`` is a vector."""
        if self.model.linear:
            d0 = np.ones_like(np.asarray(d0, dtype=float))
        d0 = np.asarray(d0, dtype=float)
        if d0.ndim == 0:
            return float(d0) * self.Ep0
        return d0[:, None, None] * self.Ep0[None]

    def load(self, xbar) -> np.ndarray:
        """Reduced constant term V^T (A xbar + F); one column per anchor."""
        m = self.model
        xbar = np.asarray(xbar, dtype=float)
        pbar, qbar = xbar[:m.n_p], xbar[m.n_p:]
        Fc = m.Fc if xbar.ndim == 1 else m.Fc[:, None]
        rp = m.Apq @ qbar
        rq = m.Aqp @ pbar + Fc
        if m.Aqq is not None:
            rq = rq + m.Aqq @ qbar
        s = self.series
        return np.concatenate([s.Vp.T @ rp, s.Vq.T @ rq])

    def lumped(self, d0, xbar) -> LumpedSystem:
        m = self.model
        n_p, n_q = self.order
        d0 = np.asarray(d0, dtype=float)
        xbar = np.asarray(xbar, dtype=float)
        batched = d0.ndim == 1
        Ep = self.Ep(d0)
        if batched:
            E = np.zeros((len(d0), n_p + n_q, n_p + n_q))
            E[:, :n_p, :n_p] = Ep
            E[:, n_p:, n_p:] = self.Eq
        else:
            E = np.block([[Ep, np.zeros((n_p, n_q))], [np.zeros((n_q, n_p)), self.Eq]])
        A = np.block([[np.zeros((n_p, n_p)), self.Apq], [self.Aqp, self.Aqq]])
        B = np.block([[np.zeros((n_p, m.n_s)), self.Bpd], [self.Bqs, np.zeros((n_q, m.n_d))]])
        C = np.block([[np.zeros((m.n_s, n_p)), self.Csq], [self.Cdp, np.zeros((m.n_d, n_q))]])
        full_C = m.lumped(1.0).C
        y0 = full_C @ xbar
        f = None
        if not m.linear:
            f = self._friction(d0, xbar)
        return LumpedSystem(E, A, B, C, self.load(xbar), y0, f)

    def _friction(self, d0, xbar):
        """Reduced gravity/friction term restricted to the active flux rows."""
        m, s = self.model, self.series
        n_p = self.order[0]
        act = np.flatnonzero(m.active)
        P = m.Prec.tocsr()[act]
        Ps = m.Prec_s.tocsr()[act]
        PU = np.asarray(P @ s.Up)
        UqA = s.Uq[act]
        VqA = s.Vq[act].T
        ps_bar = P @ xbar[:m.n_p]
        q_bar = xbar[m.n_p:][act]
        g, c = m.grav[act], m.fric[act]
        if xbar.ndim == 2:
            g, c = g[:, None], c[:, None]
        n_s = m.n_s
        has_s = Ps.nnz > 0

        def f(z, u):
            ps = ps_bar + PU @ z[:n_p]
            if has_s:
                ps = ps + Ps @ u[:n_s]
            if np.any(ps <= 0):
                bad = np.nonzero(ps <= 0)[0][0]
                raise PressureError(int(act[bad]))
            q = q_bar + UqA @ z[n_p:]
            out = np.zeros(np.shape(z))
            out[n_p:] = VqA @ (-(g * d0 * ps + c * np.abs(q) * q / (d0 * ps)))
            return out
        return f


def project(model: DiscreteModel, series: ProjectorSeries, n_p: int, n_q: int,
            provenance: dict | None = None) -> ReducedModel:
    """Congruence projection of every linear block at order (n_p, n_q)."""
    if series.Up.shape[0] != model.n_p or series.Uq.shape[0] != model.n_q:
        raise ReductorError("series does not match the model dimensions")
    s = series.truncate(n_p, n_q)
    Up, Vp, Uq, Vq = s.Up, s.Vp, s.Uq, s.Vq
    Aqq = np.zeros((n_q, n_q)) if model.Aqq is None else Vq.T @ (model.Aqq @ Uq)
    return ReducedModel(
        model=model, series=s,
        Ep0=Vp.T @ (model.Ep0 @ Up), Eq=Vq.T @ (model.Eq @ Uq),
        Apq=Vp.T @ (model.Apq @ Uq), Aqp=Vq.T @ (model.Aqp @ Up), Aqq=Aqq,
        Bpd=Vp.T @ _dense(model.Bpd), Bqs=Vq.T @ _dense(model.Bqs),
        Csq=_dense(model.Csq @ Uq), Cdp=_dense(model.Cdp @ Up),
        provenance=dict(provenance or {}, method=series.method, order=[n_p, n_q]))


def anchors(model: DiscreteModel, thetas, sbar, dbar, config: GlobalConfig | None = None):
    """Densities and steady states (columns) for a list of parameter samples."""
    pts = [operating_point(model, th, sbar, dbar, config) for th in thetas]
    d0 = np.array([g.d0 for g, _ in pts])
    X = np.column_stack([st.x for _, st in pts]) if pts else np.zeros((model.n, 0))
    return d0, X


def simulate_rom(rom: ReducedModel, scn: Scenario, solver: str = "imex1", h: float = 60.0,
                 config: GlobalConfig | None = None, thetas: list[Params] | None = None,
                 anchor=None) -> Solution:
    """Simulate from the steady anchor of each parameter sample as one batch.

    Outputs have shape (steps, outputs, samples).
    """
    cfg = config or GlobalConfig()
    thetas = thetas or [scn.params]
    if anchor is None:
        s, d = scn.steady_inputs
        anchor = anchors(rom.model, thetas, s, d, cfg)
    d0, X = anchor
    sys = rom.lumped(d0, X)
    z0 = np.zeros((rom.n, len(d0)))
    return integrate(sys, z0, scenario_input(scn), scn.tH, h, solver, cfg.gamma, cfg.lam)
