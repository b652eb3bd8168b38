"""Structured projector series from Gramians and trajectory data.

Every reductor returns a :class:`ProjectorSeries` holding separate trial (U)
and test (V) bases for the pressure and the flux block.  Truncating a series
at order r means taking its leading r columns, so one series serves a whole
order sweep.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from .gramians import GramianPair

RTOL = 1e-12
BALANCE_TOL = 1e-14


class ReductorError(ValueError):
    pass


@dataclass(frozen=True)
class ProjectorSeries:
    Up: np.ndarray
    Vp: np.ndarray
    Uq: np.ndarray
    Vq: np.ndarray
    wp: np.ndarray
    wq: np.ndarray
    galerkin: bool
    method: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def rank(self) -> tuple[int, int]:
        return self.Up.shape[1], self.Uq.shape[1]

    def truncate(self, n_p: int, n_q: int) -> "ProjectorSeries":
        rp, rq = self.rank
        if n_p > rp or n_q > rq or n_p < 0 or n_q < 0:
            raise ReductorError(f"order ({n_p}, {n_q}) exceeds series rank ({rp}, {rq})")
        return replace(self, Up=self.Up[:, :n_p], Vp=self.Vp[:, :n_p], Uq=self.Uq[:, :n_q],
                       Vq=self.Vq[:, :n_q], wp=self.wp[:n_p], wq=self.wq[:n_q])

    def blocks(self):
        return (self.Up, self.Vp, self.wp), (self.Uq, self.Vq, self.wq)


def _series(p, q, galerkin, method, **meta) -> ProjectorSeries:
    (Up, Vp, wp), (Uq, Vq, wq) = p, q
    return ProjectorSeries(Up, Vp, Uq, Vq, np.asarray(wp, float), np.asarray(wq, float),
                           galerkin, method, meta)


def identity_series(n_p: int, n_q: int) -> ProjectorSeries:
    Ip, Iq = np.eye(n_p), np.eye(n_q)
    return ProjectorSeries(Ip, Ip, Iq, Iq, np.ones(n_p), np.ones(n_q), True, "identity")


# ------------------------------------------------------------ helpers

def _tsvd(M, r_max=None):
    """Left singular vectors and values above the relative threshold."""
    n = M.shape[0]
    if M.size == 0 or not np.any(M):
        return np.zeros((n, 0)), np.zeros(0)
    U, s, _ = sla.svd(M, full_matrices=False, lapack_driver="gesvd")
    keep = s > RTOL * s[0]
    if r_max is not None:
        keep[r_max:] = False
    return U[:, keep], s[keep]


def _fix_signs(U):
    """Deterministic column signs: the largest entry of each column is positive."""
    if U.size == 0:
        return U
    idx = np.argmax(np.abs(U), axis=0)
    sgn = np.sign(U[idx, np.arange(U.shape[1])])
    sgn[sgn == 0] = 1.0
    return U * sgn


def _biorthogonalize(U, V):
    """Two-sided Gram-Schmidt: column k of U and V only mixes with columns < k,
    so nesting survives and V^T U = I holds at every truncation."""
    U, V = U.copy(), V.copy()
    for k in range(U.shape[1]):
        for _ in range(2):
            if k:
                U[:, k] -= U[:, :k] @ (V[:, :k].T @ U[:, k])
                V[:, k] -= V[:, :k] @ (U[:, :k].T @ V[:, k])
        d = V[:, k] @ U[:, k]
        if abs(d) < 1e-300:
            return U[:, :k], V[:, :k]
        s = np.sqrt(abs(d))
        U[:, k] /= s
        V[:, k] /= s * np.sign(d)
    return U, V


# ------------------------------------------------------------ reductors

def pod(WR: GramianPair, r_max: int | None = None, method: str = "pod_r") -> ProjectorSeries:
    """Orthogonal basis of the dominant reachable subspace, per block."""
    out = []
    for W in WR.blocks():
        U, s = _tsvd(W, r_max)
        U = _fix_signs(U)
        out.append((U, U, np.sqrt(s)))
    return _series(*out, True, method)


def _ro_stack(WR, WO):
    ws = []
    for W in (WR, WO):
        U, s = _tsvd(W)
        if s.size:
            ws.append(U * s / np.linalg.norm(W))
    return np.hstack(ws) if ws else np.zeros((WR.shape[0], 0))


def _cross_stack(W):
    if not np.any(W):
        return np.zeros((W.shape[0], 0))
    U, s, Vt = sla.svd(W, lapack_driver="gesvd")
    keep = s > RTOL * s[0]
    return np.hstack([U[:, keep] * s[keep], Vt[keep].T * s[keep]])


def dominant_subspaces(data, r_max: int | None = None, method: str = "eds") -> ProjectorSeries:
    """Joint subspace of reachability and observability (or of a cross Gramian).

    ``data`` is either a pair (WR, WO) of GramianPairs or one cross Gramian.
    """
    out = []
    for b in range(2):
        if isinstance(data, tuple):
            M = _ro_stack(data[0].blocks()[b], data[1].blocks()[b])
        else:
            M = _cross_stack(data.blocks()[b])
        n = (data[0] if isinstance(data, tuple) else data).blocks()[b].shape[0]
        if M.shape[1] == 0:
            out.append((np.zeros((n, 0)), np.zeros((n, 0)), np.zeros(0)))
            continue
        U, s = _tsvd(M, r_max)
        U = _fix_signs(U)
        out.append((U, U, s))
    if all(o[0].shape[1] == 0 for o in out):
        raise ReductorError("zero Gramian: no dominant subspace")
    return _series(*out, True, method)


def _real_basis(vecs, vals):
    """Replace complex conjugate pairs by real and imaginary parts."""
    cols, keep_vals, skip = [], [], False
    for k in range(vecs.shape[1]):
        if skip:
            skip = False
            continue
        v = vecs[:, k]
        if abs(vals[k].imag) > 1e-12 * max(1.0, abs(vals[k])) and k + 1 < vecs.shape[1]:
            cols += [v.real, v.imag]
            keep_vals += [abs(vals[k])] * 2
            skip = True
        else:
            cols.append(v.real)
            keep_vals.append(abs(vals[k]))
    if not cols:
        return np.zeros((vecs.shape[0], 0)), np.zeros(0)
    return np.column_stack(cols), np.array(keep_vals)


def _eig_factors(M, weight):
    """Right/left eigen-factors of M sorted by magnitude and truncated."""
    n = M.shape[0]
    if not np.any(M):
        return np.zeros((n, 0)), np.zeros((n, 0)), np.zeros(0)
    vals, left, right = sla.eig(M, left=True, right=True)
    order = np.lexsort((np.arange(len(vals)), -vals.real, -np.abs(vals)))
    vals, left, right = vals[order], left[:, order], right[:, order]
    keep = np.abs(vals) > RTOL * np.abs(vals[0])
    vals, left, right = vals[keep], left[:, keep], right[:, keep]
    TR, lam = _real_basis(right, vals)
    TO, _ = _real_basis(left, vals)
    w = weight(lam)
    # scale so that diag(TO^T TR) carries the weights
    d = np.einsum("ij,ij->j", TO, TR)
    d = np.where(np.abs(d) < 1e-300, 1.0, d)
    TR = TR * np.sqrt(w / np.abs(d))
    TO = TO * np.sqrt(w / np.abs(d)) * np.sign(d)
    return TR, TO, lam


def _balance_factors(TR, TO, r_max):
    n = TR.shape[0]
    if TR.shape[1] == 0 or TO.shape[1] == 0:
        return np.zeros((n, 0)), np.zeros((n, 0)), np.zeros(0)
    UB, DB, VBt = sla.svd(TO.T @ TR, full_matrices=False, lapack_driver="gesvd")
    keep = DB > BALANCE_TOL * DB[0] if DB.size else DB > 0
    if r_max is not None:
        keep[r_max:] = False
    UB, DB, VB = UB[:, keep], DB[keep], VBt[keep].T
    U = TR @ VB / np.sqrt(DB)
    V = TO @ UB / np.sqrt(DB)
    U, V = _biorthogonalize(U, V)
    return U, V, DB[:U.shape[1]]


def balance(data, r_max: int | None = None, variant: str = "ro",
            method: str = "") -> ProjectorSeries:
    """Petrov-Galerkin balancing.

    ``variant`` ``ro``: eigen-factors of WR WO; ``wx``/``wz``: eigen-factors of
    a cross Gramian; ``bpod``: square-root factors of WR and WO.
    """
    out = []
    for b in range(2):
        if variant == "ro":
            WR, WO = data[0].blocks()[b], data[1].blocks()[b]
            TR, TO, _ = _eig_factors(WR @ WO, np.sqrt)
        elif variant == "bpod":
            WR, WO = data[0].blocks()[b], data[1].blocks()[b]
            UR, sR = _tsvd(WR)
            UO, sO = _tsvd(WO)
            TR, TO = UR * np.sqrt(sR), UO * np.sqrt(sO)
        elif variant in ("wx", "wz"):
            TR, TO, _ = _eig_factors(data.blocks()[b], lambda lam: lam)
        else:
            raise ReductorError(f"unknown balancing variant {variant!r}")
        U, V, w = _balance_factors(TR, TO, r_max)
        if variant == "ro":
            U, V = _rescale_balanced(U, V, w, WR)
        out.append((U, V, w))
    if all(o[0].shape[1] == 0 for o in out):
        raise ReductorError("balancing breakdown: no non-zero Hankel values")
    meta = {"gain": "cross"} if variant in ("wx", "wz") else {}
    return _series(*out, False, method or f"balance_{variant}", **meta)


def _rescale_balanced(U, V, w, WR):
    """Scale column pairs so the reduced reachability Gramian equals the weights.

    Eigen-factors fix the subspaces but not the column lengths; u -> a u,
    v -> v / a keeps V^T U = I and restores balanced coordinates.
    """
    if U.shape[1] == 0:
        return U, V
    reach = np.einsum("ik,ij,jk->k", V, WR, V)
    a = np.sqrt(np.where((reach > 0) & (w > 0), reach / np.where(w > 0, w, 1.0), 1.0))
    return U * a, V / a


def _port_maps(model, block):
    """Output rows and input columns restricted to one state block (dense)."""
    sys = model.lumped(model.meta.get("d0", 1.0))
    C, B = sys.C.toarray(), sys.B.toarray()
    sl = slice(0, model.n_p) if block == 0 else slice(model.n_p, model.n)
    return C[:, sl], B[sl, :]


def gains(series: ProjectorSeries, model):
    """Per-column impulse-response gains in balanced coordinates, both blocks.

    Orthogonal and reachability-balanced bases use |C u_k|^2 w_k; cross-Gramian
    bases use the scale-free |w_k (C u_k) . (B^T v_k)|.
    """
    out = []
    for b, (U, V, w) in enumerate(series.blocks()):
        Cb, Bb = _port_maps(model, b)
        if series.meta.get("gain") == "cross":
            out.append(np.abs(w * np.einsum("ok,ok->k", Cb @ U, Bb.T @ V)))
        else:
            out.append(np.sum((Cb @ U) ** 2, axis=0) * w)
    return out


def _sorted(series: ProjectorSeries, model, method):
    perms = [np.argsort(-g, kind="stable") for g in gains(series, model)]
    (Up, Vp, wp), (Uq, Vq, wq) = series.blocks()
    p, q = perms
    return replace(series, Up=Up[:, p], Vp=Vp[:, p], wp=wp[p], Uq=Uq[:, q], Vq=Vq[:, q],
                   wq=wq[q], method=method or series.method,
                   meta={**series.meta, "sorted": "gains"})


def sort_balanced_gains(series: ProjectorSeries, model, method: str = "") -> ProjectorSeries:
    """Reorder balanced directions by their output gain."""
    return _sorted(series, model, method)


def goal_oriented_sort(series: ProjectorSeries, model, method: str = "") -> ProjectorSeries:
    """Reorder POD modes by observed energy |C u_k|^2 sigma_k."""
    return _sorted(series, model, method)


def dmd_operator(X: np.ndarray) -> np.ndarray:
    """Least-squares one-step operator from snapshot columns X[:, 0..K]."""
    X = np.atleast_2d(X)
    if X.shape[1] < 2:
        raise ReductorError("need at least two snapshots")
    return X[:, 1:] @ np.linalg.pinv(X[:, :-1])


def dmd_galerkin(snapshots, r_max: int | None = None, n_p: int | None = None,
                 method: str = "dmd_r") -> ProjectorSeries:
    """Galerkin basis from the identified one-step operator of each block.

    ``snapshots`` is a list of centred trajectories of shape (steps, N) or an
    array (steps, N, runs); consecutive pairs never straddle two runs.
    """
    runs = _runs(snapshots)
    if all(not np.any(R) for R in runs):
        raise ReductorError("all-zero snapshots")
    n = runs[0].shape[1]
    n_p = n if n_p is None else n_p
    out = []
    for sl in (slice(0, n_p), slice(n_p, n)):
        Xm = np.hstack([R[:-1, sl].T for R in runs])
        Xp = np.hstack([R[1:, sl].T for R in runs])
        width = sl.stop - sl.start
        if width == 0 or not np.any(Xm):
            out.append((np.zeros((width, 0)), np.zeros((width, 0)), np.zeros(0)))
            continue
        Ahat = Xp @ np.linalg.pinv(Xm)
        U, s = _tsvd(Ahat, r_max)
        U = _fix_signs(U)
        out.append((U, U, s))
    return _series(*out, True, method)


def _runs(snapshots):
    if isinstance(snapshots, np.ndarray) and snapshots.ndim == 3:
        return [snapshots[:, :, j] for j in range(snapshots.shape[2])]
    if isinstance(snapshots, np.ndarray):
        return [snapshots]
    return [np.asarray(s) for s in snapshots]


# ------------------------------------------------------------ registry

@dataclass(frozen=True)
class MethodSpec:
    name: str
    needs: tuple  # gramian kinds, or ("snapshots",)
    dual: bool
    build: object


def _ro(g):
    return (g["WR"], g["WO"])


METHODS: dict[str, MethodSpec] = {}


def _register(name, needs, build, dual=False):
    METHODS[name] = MethodSpec(name, needs, dual, build)


_register("pod_r", ("WR",), lambda g, m, r: pod(g["WR"], r, "pod_r"))
_register("gopod_r", ("WR",), lambda g, m, r: goal_oriented_sort(pod(g["WR"]), m, "gopod_r"))
_register("dmd_r", ("snapshots",), lambda g, m, r: dmd_galerkin(g["snapshots"], r, m.n_p))
for _d in (False, True):
    _s = "_l" if _d else ""
    _register("eds_ro" + _s, ("WR", "WO"), lambda g, m, r, s=_s: dominant_subspaces(
        _ro(g), r, "eds_ro" + s), _d)
    _register("eds_wx" + _s, ("WX",), lambda g, m, r, s=_s: dominant_subspaces(
        g["WX"], r, "eds_wx" + s), _d)
    _register("eds_wz" + _s, ("WZ",), lambda g, m, r, s=_s: dominant_subspaces(
        g["WZ"], r, "eds_wz" + s), _d)
    _register("bpod_ro" + _s, ("WR", "WO"), lambda g, m, r, s=_s: balance(
        _ro(g), r, "bpod", "bpod_ro" + s), _d)
    for _v in ("ro", "wx", "wz"):
        _need = ("WR", "WO") if _v == "ro" else ("W" + _v[1].upper(),)
        _register(f"ebt_{_v}{_s}", _need, lambda g, m, r, v=_v, s=_s: balance(
            _ro(g) if v == "ro" else g["W" + v[1].upper()], r, v, f"ebt_{v}{s}"), _d)
        _register(f"ebg_{_v}{_s}", _need, lambda g, m, r, v=_v, s=_s: sort_balanced_gains(
            balance(_ro(g) if v == "ro" else g["W" + v[1].upper()], None, v), m,
            f"ebg_{v}{s}"), _d)

BASE_METHODS = ("pod_r", "gopod_r", "dmd_r", "eds_ro", "eds_wx", "eds_wz", "bpod_ro",
                "ebt_ro", "ebt_wx", "ebt_wz", "ebg_ro", "ebg_wx", "ebg_wz")
DUAL_METHODS = tuple(m for m in METHODS if m.endswith("_l"))


def family(method: str) -> str:
    return method.split("_")[0]


# ------------------------------------------------------------ .rom files

def save_rom(path, series: ProjectorSeries, provenance: dict, steady=None, theta=None):
    """Write a series with provenance to an ``.npz`` container."""
    arrays = dict(Up=series.Up, Vp=series.Vp, Uq=series.Uq, Vq=series.Vq,
                  wp=series.wp, wq=series.wq)
    if steady is not None:
        arrays["steady"] = np.asarray(steady, dtype=float)
    if theta is not None:
        arrays["theta"] = np.asarray(theta, dtype=float)
    meta = dict(provenance, method=series.method, galerkin=series.galerkin,
                series_meta=series.meta)
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), np.uint8),
                 **arrays)
    return path


def load_rom(path):
    """Inverse of :func:`save_rom`; returns (series, provenance, extras)."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(data["meta"].tobytes().decode())
        extras = {k: data[k] for k in ("steady", "theta") if k in data.files}
        series = ProjectorSeries(data["Up"], data["Vp"], data["Uq"], data["Vq"], data["wp"],
                                 data["wq"], bool(meta.pop("galerkin")), meta.pop("method"),
                                 meta.pop("series_meta"))
    return series, meta, extras
