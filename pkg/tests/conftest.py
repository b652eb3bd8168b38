import os

import pytest

from gasmor.config import GlobalConfig
from gasmor.gasmodel import Params, build_model
from gasmor.netgraph import load_net, parse_net
from gasmor.timestep import load_scenario, parse_scenario

DATA = os.path.join(os.path.dirname(__import__("gasmor").__file__), "networks")

PIPE_NET = "pipe,supply,demand,20000,1.0,0,1e-5\n"
PIPE_SCENARIO = "T0 = 283.15\nRS = 530\ntH = 2000\nut = 0\nup = 60\nuq = 50\n"


def bundled(name):
    return os.path.join(DATA, name)


@pytest.fixture(scope="session")
def yamal_net():
    return load_net(bundled("yamal.net"))


@pytest.fixture(scope="session")
def morgen_net():
    return load_net(bundled("morgen.net"))


@pytest.fixture(scope="session")
def cfg20():
    return GlobalConfig(dt=20.0, workers=1)


@pytest.fixture(scope="session")
def cfg60():
    return GlobalConfig(dt=60.0, workers=1)


@pytest.fixture(scope="session")
def yamal_model(yamal_net, cfg20):
    return build_model(yamal_net, "ode_end", cfg20)


@pytest.fixture(scope="session")
def yamal_day():
    return load_scenario(bundled("yamal/day.ini"))


@pytest.fixture(scope="session")
def yamal_training():
    return load_scenario(bundled("yamal/training.ini"))


@pytest.fixture(scope="session")
def pipe_net():
    return parse_net(PIPE_NET)


@pytest.fixture(scope="session")
def pipe_scenario():
    return parse_scenario(PIPE_SCENARIO)


@pytest.fixture(scope="session")
def pipe_model(pipe_net, cfg60):
    return build_model(pipe_net, "ode_end", cfg60)


@pytest.fixture
def theta():
    return Params(283.15, 530.0)
