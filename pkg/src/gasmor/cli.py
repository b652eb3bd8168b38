"""Command-line front end: ``gasmor offline|online|simulate``."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

from . import __version__
from .config import load_config
from .gasmodel import DISCRETIZATIONS
from .netgraph import load_net, network_hash
from .reductors import BASE_METHODS, DUAL_METHODS, METHODS
from .timestep import SOLVERS, load_scenario

DATA = os.path.join(os.path.dirname(__file__), "networks")


def resolve(path: str, suffix: str) -> str:
    """Existing file, or a bundled name such as ``yamal`` or ``yamal/day``."""
    if os.path.exists(path):
        return path
    bundled = os.path.join(DATA, path + suffix)
    if os.path.exists(bundled):
        return bundled
    raise FileNotFoundError(f"no such file: {path}")


def _methods(text: str):
    if text == "all":
        return list(BASE_METHODS)
    if text == "linear":
        return list(DUAL_METHODS)
    if text == "everything":
        return list(BASE_METHODS) + list(DUAL_METHODS)
    names = [m.strip() for m in text.split(",") if m.strip()]
    unknown = [m for m in names if m not in METHODS]
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown method(s): {', '.join(unknown)}")
    return names


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", choices=DISCRETIZATIONS, default="ode_end")
    common.add_argument("--solver", choices=SOLVERS, default=None)
    common.add_argument("--dt", type=float, default=None, help="time step in seconds")
    common.add_argument("--workers", type=int, default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--config", default=None, help="global key=value config file")
    common.add_argument("--cache", default=None, help="cache directory for steady states/Gramians")
    common.add_argument("--out", default="out", help="output directory")

    p = argparse.ArgumentParser(prog="gasmor", description="Gas network model reduction benchmark")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    off = sub.add_parser("offline", parents=[common], help="train reductors, write .rom files")
    off.add_argument("network")
    off.add_argument("scenario")
    off.add_argument("--methods", type=_methods, default=list(BASE_METHODS),
                     help="comma list, 'all', 'linear' or 'everything'")

    on = sub.add_parser("online", parents=[common], help="evaluate .rom files against the FOM")
    on.add_argument("network")
    on.add_argument("scenario")
    on.add_argument("roms", nargs="+")
    on.add_argument("--order-max", type=int, default=None)
    on.add_argument("--samples", type=int, default=None, help="number of random test parameters")

    sim = sub.add_parser("simulate", parents=[common], help="simulate the full model")
    sim.add_argument("network")
    sim.add_argument("scenario")
    return p


def _config(args):
    return load_config(args.config, dt=args.dt, workers=args.workers, seed=args.seed,
                       cache_dir=args.cache, solver=args.solver)


def _manifest(out, args, cfg, extra):
    os.makedirs(out, exist_ok=True)
    data = dict(command=args.command, version=__version__,
                args={k: v for k, v in vars(args).items() if k != "func"},
                config=cfg.as_dict(), **extra)
    path = os.path.join(out, "run.json")
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, default=str)
    return path


def cmd_offline(args) -> int:
    from .bench import run_offline
    cfg = _config(args)
    net = load_net(resolve(args.network, ".net"))
    scn = load_scenario(resolve(args.scenario, ".ini"))
    res = run_offline(net, scn, args.model, cfg.solver, args.methods, cfg, args.out,
                      log=print)
    print(f"training trajectories: {res.runs}  cache hits: {res.cache_hits}")
    print(f"{'method':10s} {'offline [s]':>12s}")
    for name, t in res.runtimes.items():
        print(f"{name:10s} {t:12.2f}")
    _manifest(args.out, args, cfg, dict(roms=res.paths, runs=res.runs,
                                        cache_hits=res.cache_hits, network=network_hash(net)))
    missing = [p for p in res.paths.values() if not os.path.exists(p)]
    return 1 if missing else 0


def cmd_online(args) -> int:
    from .bench import run_online, sample_parameters, write_report
    cfg = _config(args)
    net = load_net(resolve(args.network, ".net"))
    scn = load_scenario(resolve(args.scenario, ".ini"))
    roms = {}
    for path in args.roms:
        if not os.path.exists(path):
            raise FileNotFoundError(f"no such rom file: {path}")
        roms[os.path.splitext(os.path.basename(path))[0]] = path
    thetas = sample_parameters(cfg, args.samples)
    report = run_online(net, scn, args.model, cfg.solver, roms, cfg, args.order_max, thetas,
                        log=print)
    files = write_report(report, args.out)
    _manifest(args.out, args, cfg, dict(files=files))
    print(f"{'method':10s} {'MORscore':>9s}")
    for name, score in report.scores.items():
        print(f"{name:10s} {score:9.3f}")
    return 0 if all(os.path.exists(f) for f in files) else 1


def cmd_simulate(args) -> int:
    from .simulate import prepare_model, simulate_fom
    from .svgplot import line_chart
    cfg = _config(args)
    net = load_net(resolve(args.network, ".net"))
    scn = load_scenario(resolve(args.scenario, ".ini"))
    model = prepare_model(net, args.model, scn, cfg)
    sol = simulate_fom(model, scn, cfg.solver, cfg.dt, cfg)
    os.makedirs(args.out, exist_ok=True)
    names = ([f"s_q{i}" for i in range(model.n_s)] + [f"d_p{i}" for i in range(model.n_d)])
    path = os.path.join(args.out, "outputs.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + names)
        for t, y in zip(sol.t, sol.y):
            w.writerow([f"{t:g}"] + [f"{v:.10g}" for v in y])
    hours = sol.t / 3600.0
    svgs = []
    for label, cols, unit in (("supply flux", range(model.n_s), "kg/s"),
                              ("demand pressure", range(model.n_s, model.ports), "bar")):
        series = {names[c]: (hours, sol.y[:, c]) for c in cols}
        svg = os.path.join(args.out, f"{label.replace(' ', '_')}.svg")
        with open(svg, "w") as fh:
            fh.write(line_chart(series, title=label, xlabel="time [h]", ylabel=unit))
        svgs.append(svg)
    _manifest(args.out, args, cfg, dict(outputs=path, plots=svgs, rows=len(sol.t),
                                        runtime=sol.runtime, network=network_hash(net)))
    print(f"{len(sol.t)} output rows written to {path} ({sol.runtime:.2f} s)")
    return 0


COMMANDS = {"offline": cmd_offline, "online": cmd_online, "simulate": cmd_simulate}


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    start = time.perf_counter()
    try:
        code = COMMANDS[args.command](args)
    except Exception as err:  # report any module error as a diagnostic
        print(f"gasmor {args.command}: error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1
    print(f"done in {time.perf_counter() - start:.1f} s")
    return code


if __name__ == "__main__":
    sys.exit(main())
