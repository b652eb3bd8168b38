"""Full-order runs of scenarios: model preparation and FOM simulation."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .config import GlobalConfig
from .gasmodel import DiscreteModel, Params, build_model
from .netgraph import Network
from .steady import operating_point
from .timestep import Scenario, Solution, integrate, scenario_input

REYNOLDS_VARIANTS = ("altshul", "hofer", "pmt1025", "igt")


def prepare_model(net: Network, disc: str, scn: Scenario,
                  config: GlobalConfig | None = None) -> DiscreteModel:
    """Model for a scenario: compressor set points, valve check and Reynolds pass."""
    cfg = config or GlobalConfig()
    discharge = scn.cp if len(net.compressors) else None
    if len(net.compressors) and len(scn.cp) != len(net.compressors):
        raise ValueError(f"scenario needs {len(net.compressors)} compressor pressures (cp)")
    model = build_model(net, disc, cfg, discharge, scn.vs if len(scn.vs) else None)
    if cfg.friction in REYNOLDS_VARIANTS:
        s, d = scn.steady_inputs
        _, st = operating_point(model, scn.params, s, d, cfg)
        model = build_model(net, disc, cfg, discharge, scn.vs if len(scn.vs) else None,
                            qbar=st.qbar)
        model = replace(model, meta={**model.meta, "key": model.meta["key"] + ":re"})
    return model


def simulate_fom(model: DiscreteModel, scn: Scenario, solver: str = "imex1",
                 h: float | None = None, config: GlobalConfig | None = None,
                 params: Params | None = None, capture: bool = False) -> Solution:
    """Run the full model from the steady state of the first boundary row."""
    cfg = config or GlobalConfig()
    params = params or scn.params
    s, d = scn.steady_inputs
    gas, st = operating_point(model, params, s, d, cfg)
    sys = model.lumped(gas.d0)
    return integrate(sys, st.x, scenario_input(scn), scn.tH, h or cfg.dt, solver,
                     cfg.gamma, cfg.lam, capture)


def random_profile(scn: Scenario, amplitude: float = 0.1, seed: int = 0,
                   step: float = 3600.0) -> Scenario:
    """Steady boundary values plus scaled uniform noise on demands every ``step`` seconds."""
    rng = np.random.default_rng(seed)
    ut = np.arange(0.0, scn.tH, step)
    s, d = scn.steady_inputs
    up = np.tile(s, (len(ut), 1))
    uq = d * (1.0 + amplitude * rng.uniform(-1.0, 1.0, size=(len(ut), len(d))))
    uq[0] = d
    return replace(scn, ut=ut, up=up, uq=uq)
