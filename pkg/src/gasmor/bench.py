"""Offline training, online evaluation, error norms and MORscores."""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import GlobalConfig
from .gasmodel import DiscreteModel, ModelError, Params
from .gramians import GRAMIANS, TrajectoryBank, training_setup
from .netgraph import Network, network_hash
from .reductors import METHODS, ReductorError, identity_series, load_rom, save_rom
from .rom import anchors, project, simulate_rom
from .simulate import prepare_model
from .svgplot import line_chart
from .timestep import Scenario, SolverError, integrate, scenario_input

EPS_MACH = 1e-16


class ProvenanceError(ValueError):
    pass


# ------------------------------------------------------------ metrics

def _time_norm(E, dt, l):
    """Norm of one error field (time x port) with time weight dt."""
    if l == 2:
        return float(np.sqrt(dt * np.sum(E ** 2)))
    if l == 1:
        return float(dt * np.sum(np.abs(E)))
    if l == np.inf:
        return float(np.max(np.abs(E))) if E.size else 0.0
    if l == 0:
        a = np.abs(E[E != 0])
        return float(np.exp(np.mean(np.log(a)))) if a.size else 0.0
    raise ValueError(f"unsupported state-space norm {l!r}")


def error_norm(Y, Ytilde=None, dt: float = 1.0, k=2, l=2) -> float:
    """Parameter-space (k) times state-space (l) norm of Y - Ytilde.

    Arrays are shaped (samples, time, port); ``Ytilde=None`` gives the norm of Y.
    """
    Y = np.asarray(Y, dtype=float)
    E = Y if Ytilde is None else Y - np.asarray(Ytilde, dtype=float)
    if Ytilde is not None and np.shape(Ytilde) != Y.shape:
        raise ValueError(f"shape mismatch {Y.shape} vs {np.shape(Ytilde)}")
    if E.ndim != 3:
        raise ValueError("expected (samples, time, port) arrays")
    v = np.array([_time_norm(e, dt, l) for e in E])
    if k == 2:
        return float(np.sqrt(np.sum(v ** 2)))
    if k == 1:
        return float(np.sum(v))
    if k == np.inf:
        return float(np.max(v)) if v.size else 0.0
    raise ValueError(f"unsupported parameter-space norm {k!r}")


def relative_error(Y, Ytilde, dt: float = 1.0, k=2, l=2) -> float:
    if not np.all(np.isfinite(Ytilde)):
        return np.inf
    ref = error_norm(Y, None, dt, k, l)
    return error_norm(Y, Ytilde, dt, k, l) / ref if ref > 0 else error_norm(Y, Ytilde, dt, k, l)


def morscore(errors, orders=None, n_max=None, eps_mach: float = EPS_MACH) -> float:
    """Normalized area above a relative error curve (staircase rule).

    ``orders`` defaults to 1..len(errors); each error holds from the previous
    order up to its own.  Non-finite errors count as 1.
    """
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        raise ValueError("empty error curve")
    n = np.arange(1, e.size + 1) if orders is None else np.asarray(orders, dtype=float)
    if n.shape != e.shape or np.any(np.diff(n) <= 0) or n[0] <= 0:
        raise ValueError("orders must be positive, ascending and match the errors")
    n_max = float(n[-1] if n_max is None else n_max)
    e = np.where(np.isfinite(e), e, 1.0)
    e = np.clip(e, eps_mach, 1.0)
    y = np.log(e) / np.log(eps_mach)
    widths = np.diff(np.concatenate([[0.0], np.minimum(n, n_max)]))
    return float(np.clip(np.sum(y * widths) / n_max, 0.0, 1.0))


# ------------------------------------------------------------ offline

@dataclass
class OfflineResult:
    paths: dict
    runtimes: dict
    runs: dict
    cache_hits: int
    samples: int


class GramianCache:
    """In-memory (and optional on-disk) store of Gramians and snapshot data."""

    def __init__(self, bank: TrajectoryBank, directory: str = ""):
        self.bank = bank
        self.directory = directory
        self.hits = 0
        self._mem: dict = {}
        self._prefix = f"{bank.model.meta.get('key', 'model')}|{bank.setup.key()}"

    def _path(self, name):
        import hashlib
        digest = hashlib.sha256(f"{self._prefix}|{name}".encode()).hexdigest()[:20]
        return os.path.join(self.directory, f"gramian-{digest}.npz")

    def get(self, name: str, dual: bool):
        key = (name, dual and name != "WR")
        if key in self._mem:
            self.hits += 1
            return self._mem[key]
        if name == "snapshots":
            X = [self.bank.input_states(k) for k in range(len(self.bank.setup.theta))]
            value = [x[:, :, j] for x in X for j in range(x.shape[2])]
        else:
            path = self._path(f"{key[0]}-{key[1]}") if self.directory else ""
            if path and os.path.exists(path):
                from .gramians import GramianPair
                with np.load(path) as d:
                    value = GramianPair(d["Wp"], d["Wq"], name, key[1])
                self.hits += 1
            else:
                fn = GRAMIANS[name]
                value = fn(self.bank) if name == "WR" else fn(self.bank, dual=key[1])
                if path:
                    os.makedirs(self.directory, exist_ok=True)
                    np.savez(path, Wp=value.Wp, Wq=value.Wq)
        self._mem[key] = value
        return value


def provenance(net: Network, model: DiscreteModel, solver: str, setup_key: str,
               config: GlobalConfig) -> dict:
    return dict(network=network_hash(net), model=model.disc, model_key=model.meta.get("key"),
                solver=solver, training=setup_key, dt=config.dt, n_p=model.n_p, n_q=model.n_q)


def run_offline(net: Network, scn: Scenario, disc: str = "ode_end", solver: str = "imex1",
                methods=None, config: GlobalConfig | None = None, out_dir: str | None = None,
                model: DiscreteModel | None = None, log=None) -> OfflineResult:
    """Train every requested reductor; trajectories and Gramians are shared."""
    cfg = config or GlobalConfig()
    methods = list(methods or [m for m in METHODS if not m.endswith("_l")])
    for name in methods:
        if name not in METHODS:
            raise ReductorError(f"unknown method {name!r}")
        if METHODS[name].dual and disc != "ode_end":
            raise ModelError(f"{name}: dual variants need the ode_end model")
    model = model or prepare_model(net, disc, scn, cfg)
    setup = training_setup(scn, cfg, solver)
    bank = TrajectoryBank(model, setup, cfg)
    cache = GramianCache(bank, cfg.cache_dir)
    _prefetch(bank, methods, cfg.workers)
    prov = provenance(net, model, solver, setup.key(), cfg)
    theta = [[p.T0, p.RS] for p in setup.theta]
    paths, runtimes = {}, {}
    for name in methods:
        spec = METHODS[name]
        start = time.perf_counter()
        data = {k: cache.get(k, spec.dual) for k in spec.needs}
        series = spec.build(data, model, None)
        runtimes[name] = time.perf_counter() - start
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            paths[name] = save_rom(os.path.join(out_dir, f"{name}.rom"), series,
                                   dict(prov, offline_runtime=runtimes[name]), theta=theta)
        else:
            paths[name] = series
        if log:
            log(f"{name:10s} offline {runtimes[name]:8.2f} s  rank {series.rank}")
    return OfflineResult(paths, runtimes, dict(bank.runs), cache.hits + bank.hits,
                         len(setup.theta))


def _prefetch(bank: TrajectoryBank, methods, workers: int):
    """Compute the trajectories the methods need, one job per parameter sample."""
    needs = {k for m in methods for k in METHODS[m].needs}
    dual = any(METHODS[m].dual for m in methods)
    kinds = []
    if needs & {"WR", "WX", "WZ", "snapshots"}:
        kinds.append(bank.input_states)
    if needs & {"WO", "WX", "WZ"} and any(not METHODS[m].dual for m in methods
                                          if set(METHODS[m].needs) & {"WO", "WX", "WZ"}):
        kinds.append(bank.state_outputs)
    if dual:
        kinds.append(bank.dual_states)
    K = len(bank.setup.theta)
    for k in range(K):
        bank.operating(k)

    def job(k):
        for fn in kinds:
            fn(k)
    if workers > 1 and K > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(job, range(K)))
    else:
        for k in range(K):
            job(k)


# ------------------------------------------------------------ online

@dataclass
class BenchReport:
    curves: dict  # method -> (orders, errors)
    scores: dict
    offline: dict
    online: dict
    meta: dict = field(default_factory=dict)
    identity_error: float | None = None
    fom_solves: int = 0


def sample_parameters(config: GlobalConfig, n: int | None = None, seed: int | None = None):
    rng = np.random.default_rng(config.seed if seed is None else seed)
    n = config.n_test if n is None else n
    T0 = rng.uniform(*config.T0_range, size=n)
    RS = rng.uniform(*config.RS_range, size=n)
    return [Params(float(a), float(b)) for a, b in zip(T0, RS)]


def sweep_orders(order_max: int, step: int = 2):
    return list(range(step, order_max + 1, step))


def split_order(n: int, rank) -> tuple[int, int]:
    """Even split of a joint order, saturated at the series rank."""
    n_p = min(n // 2 + n % 2, rank[0])
    n_q = min(n // 2, rank[1])
    return n_p, n_q


def run_online(net: Network, scn: Scenario, disc: str = "ode_end", solver: str = "imex1",
               roms=None, config: GlobalConfig | None = None, order_max: int | None = None,
               thetas=None, h: float | None = None, model: DiscreteModel | None = None,
               identity: bool = True, log=None) -> BenchReport:
    """Evaluate ROM series against the FOM over an order sweep and test samples.

    ``roms`` maps method names to .rom paths or (series, provenance) pairs.
    """
    cfg = config or GlobalConfig()
    h = h or cfg.dt
    order_max = order_max or cfg.order_max
    model = model or prepare_model(net, disc, scn, cfg)
    thetas = thetas or sample_parameters(cfg)
    loaded = {}
    for name, item in (roms or {}).items():
        if isinstance(item, (str, os.PathLike)):
            series, prov, _ = load_rom(item)
        else:
            series, prov = item
        _check_provenance(name, prov, net, model, solver)
        loaded[name] = (series, prov)

    s, d = scn.steady_inputs
    anchor = anchors(model, thetas, s, d, cfg)
    u = scenario_input(scn)
    start = time.perf_counter()
    Y = []
    for k, th in enumerate(thetas):
        sys = model.lumped(anchor[0][k])
        Y.append(integrate(sys, anchor[1][:, k], u, scn.tH, h, solver, cfg.gamma, cfg.lam).y)
    Y = np.stack(Y)
    fom_time = time.perf_counter() - start
    if log:
        log(f"FOM: {len(thetas)} samples in {fom_time:.1f} s")

    def evaluate(series, n_p, n_q):
        rom = project(model, series, n_p, n_q)
        try:
            sol = simulate_rom(rom, scn, solver, h, cfg, thetas, anchor)
        except (SolverError, FloatingPointError):
            return np.inf
        return relative_error(Y, sol.y.transpose(2, 0, 1), h)

    ident = None
    if identity:
        ident = evaluate(identity_series(model.n_p, model.n_q), model.n_p, model.n_q)

    orders = sweep_orders(order_max, cfg.order_step)
    # orders beyond a series rank saturate; each distinct (n_p, n_q) runs once
    split = {(name, n): split_order(n, loaded[name][0].rank) for name in loaded for n in orders}
    jobs = sorted(set((name, o) for (name, _), o in split.items()))
    times: dict = {name: 0.0 for name in loaded}

    def job(item):
        name, (n_p, n_q) = item
        t0 = time.perf_counter()
        err = evaluate(loaded[name][0], n_p, n_q)
        return item, err, time.perf_counter() - t0

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(job, jobs))
    else:
        results = [job(j) for j in jobs]
    done = {item: err for item, err, _ in results}
    for (name, _), _, dt in results:
        times[name] += dt
    table = {key: done[(key[0], o)] for key, o in split.items()}
    curves, scores = {}, {}
    for name in loaded:
        errs = np.array([table[(name, n)] for n in orders])
        curves[name] = (np.array(orders), errs)
        scores[name] = morscore(errs, orders, order_max)
        if log:
            log(f"{name:10s} MORscore {scores[name]:.3f}  best {np.min(errs):.2e}  "
                f"online {times[name]:.1f} s")
    meta = dict(network=network_hash(net), model=disc, solver=solver, h=h, tH=scn.tH,
                thetas=[[t.T0, t.RS] for t in thetas], seed=cfg.seed, order_max=order_max,
                order_step=cfg.order_step, eps_mach=EPS_MACH, fom_runtime=fom_time,
                config=cfg.as_dict())
    offline = {name: p.get("offline_runtime", float("nan")) for name, (_, p) in loaded.items()}
    return BenchReport(curves, scores, offline, times, meta, ident, len(thetas))


def _check_provenance(name, prov, net, model, solver):
    want = dict(network=network_hash(net), model=model.disc, solver=solver)
    for key, value in want.items():
        if prov.get(key) != value:
            raise ProvenanceError(f"{name}: rom {key} {prov.get(key)!r} does not match {value!r}")
    if (prov.get("n_p"), prov.get("n_q")) != (model.n_p, model.n_q):
        raise ProvenanceError(f"{name}: rom dimensions do not match the model")


def write_report(report: BenchReport, out_dir: str) -> list[str]:
    """report.csv, curves/<method>.csv, plots/<method>.svg and manifest.json."""
    written = []
    os.makedirs(os.path.join(out_dir, "curves"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "plots"), exist_ok=True)
    path = os.path.join(out_dir, "report.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "morscore", "best_error", "offline_s", "online_s"])
        for name, score in report.scores.items():
            errs = report.curves[name][1]
            w.writerow([name, f"{score:.4f}", f"{np.min(errs):.6e}",
                        f"{report.offline.get(name, float('nan')):.3f}",
                        f"{report.online.get(name, float('nan')):.3f}"])
    written.append(path)
    for name, (orders, errs) in report.curves.items():
        path = os.path.join(out_dir, "curves", f"{name}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["order", "relative_error"])
            for n, e in zip(orders, errs):
                w.writerow([int(n), f"{e:.6e}"])
        written.append(path)
        path = os.path.join(out_dir, "plots", f"{name}.svg")
        clamped = np.clip(np.where(np.isfinite(errs), errs, 1.0), EPS_MACH, 1.0)
        with open(path, "w") as fh:
            fh.write(line_chart({name: (orders, clamped)}, title=f"{name}: relative error",
                                xlabel="reduced order", ylabel="relative L2 x L2 error",
                                logy=True))
        written.append(path)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(dict(report.meta, scores=report.scores, identity_error=report.identity_error,
                       fom_solves=report.fom_solves), fh, indent=2, default=_jsonable)
    written.append(path)
    return written


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, (tuple, set)):
        return list(obj)
    return str(obj)
