#!/usr/bin/env python3
"""Offline training and online evaluation of all reductors on a bundled network.

    python scripts/benchmark.py yamal
    python scripts/benchmark.py morgen --order-max 100 --methods pod_r,eds_ro,ebt_ro

Writes <out>/roms/*.rom, <out>/report.csv, curves/, plots/ and manifest.json,
and prints the MORscore table.
"""

import argparse
import os
import time

from gasmor.bench import run_offline, run_online, sample_parameters, write_report
from gasmor.cli import resolve
from gasmor.config import GlobalConfig
from gasmor.netgraph import load_net
from gasmor.reductors import BASE_METHODS
from gasmor.simulate import prepare_model
from gasmor.timestep import load_scenario

# network -> (time step, test scenario, training scenario)
SETUPS = {
    "yamal": (20.0, "yamal/day", "yamal/training"),
    "morgen": (60.0, "morgen/day", "morgen/training"),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("network", choices=sorted(SETUPS))
    ap.add_argument("--methods", default=",".join(BASE_METHODS))
    ap.add_argument("--solver", default="imex1")
    ap.add_argument("--order-max", type=int, default=150)
    ap.add_argument("--samples", type=int, default=5)
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    dt, test, train = SETUPS[args.network]
    cfg = GlobalConfig(dt=dt, order_max=args.order_max, n_test=args.samples,
                       **({"workers": args.workers} if args.workers else {}))
    out = args.out or os.path.join("results", args.network)
    net = load_net(resolve(args.network, ".net"))
    train_scn = load_scenario(resolve(train, ".ini"))
    test_scn = load_scenario(resolve(test, ".ini"))
    model = prepare_model(net, "ode_end", test_scn, cfg)
    print(f"{args.network}: {model.n} states ({model.n_p} pressures, {model.n_q} fluxes), "
          f"{model.ports} ports")

    start = time.perf_counter()
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    off = run_offline(net, train_scn, "ode_end", args.solver, methods, cfg,
                      os.path.join(out, "roms"), model=model, log=print)
    print(f"training trajectories {off.runs}, cache hits {off.cache_hits}, "
          f"{time.perf_counter() - start:.0f} s")

    rep = run_online(net, test_scn, "ode_end", args.solver, off.paths, cfg, args.order_max,
                     sample_parameters(cfg), model=model, log=print)
    files = write_report(rep, out)
    print(f"identity ROM error {rep.identity_error:.1e}; {len(files)} files in {out}")
    print(f"total {time.perf_counter() - start:.0f} s")
    print(f"\n{'method':10s} {'MORscore':>9s} {'best error':>11s}")
    for name, score in sorted(rep.scores.items(), key=lambda kv: -kv[1]):
        print(f"{name:10s} {score:9.3f} {min(rep.curves[name][1]):11.2e}")


if __name__ == "__main__":
    main()
