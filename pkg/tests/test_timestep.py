import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from gasmor.gasmodel import LumpedSystem
from gasmor.timestep import (LAMBDAS, SOLVERS, BlowUpError, ScenarioError, SolverError,
                             input_at, integrate, parse_scenario)

STEP_SCENARIO = "T0 = 283.15\nRS = 530\ntH = 7200\nut = 0 3600\nup = 84; 85\nuq = 46.3; 40\n"


def scalar(E=1.0, A=-1.0, B=0.0, F=0.0, f=None):
    return LumpedSystem(np.array([[E]]), np.array([[A]]), np.array([[B]]), np.array([[1.0]]),
                        np.array([F]), np.zeros(1), f)


def zero_input(t):
    return np.zeros(1)


def decay_error(method, h, **kw):
    sol = integrate(scalar(), np.array([1.0]), zero_input, 1.0, h, method, **kw)
    return abs(sol.y[-1, 0] - np.exp(-1.0))


# ------------------------------------------------------------ scenarios

def test_input_at_breakpoints():
    scn = parse_scenario(STEP_SCENARIO)
    assert input_at(scn, 1800)[0][0] == 84
    assert input_at(scn, 3600)[0][0] == 85
    assert input_at(scn, 0)[1][0] == 46.3
    with pytest.raises(ScenarioError):
        input_at(scn, -1)


def test_scenario_key_order_and_separators():
    text = "uq = 46.3, 40 ;\nup=84 85\nut = 0,3600\n tH=7200\nRS = 530\nT0= 283.15  # K\n"
    scn = parse_scenario(text)
    np.testing.assert_array_equal(scn.up, [[84], [85]])
    np.testing.assert_array_equal(scn.uq, [[46.3], [40]])
    assert scn.tH == 7200


@pytest.mark.parametrize("key", ["T0", "RS", "tH", "ut", "up", "uq"])
def test_missing_key_is_named(key):
    lines = [ln for ln in STEP_SCENARIO.splitlines() if not ln.startswith(key + " ")]
    with pytest.raises(ScenarioError, match=key):
        parse_scenario("\n".join(lines))


@pytest.mark.parametrize("text", [
    STEP_SCENARIO.replace("ut = 0 3600", "ut = 5 3600"),
    STEP_SCENARIO.replace("up = 84; 85", "up = 84; 85; 86"),
    STEP_SCENARIO.replace("tH = 7200", "tH = 0"),
    STEP_SCENARIO + "garbage line\n",
    STEP_SCENARIO.replace("uq = 46.3; 40", "uq = 46.3; x")])
def test_scenario_errors(text):
    with pytest.raises(ScenarioError):
        parse_scenario(text)


# ------------------------------------------------------------ solvers

def test_imex1_hand_value():
    sol = integrate(scalar(), np.array([1.0]), zero_input, 0.1, 0.1, "imex1")
    assert sol.y[1, 0] == pytest.approx(1 - 0.1 / 1.1, rel=1e-15)
    assert sol.y[1, 0] == pytest.approx(0.909091, abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 10.0), st.floats(-5, 5), st.floats(0.5, 2.0))
def test_imex1_update_formula(h, x0, gamma):
    sol = integrate(scalar(), np.array([x0]), zero_input, h, h, "imex1", gamma=gamma)
    assert sol.y[1, 0] == pytest.approx(x0 - h * x0 / (1 + gamma * h), rel=1e-13, abs=1e-300)


@pytest.mark.parametrize("method, kw, ratio, tol", [
    ("imex1", {}, 2.0, 0.10), ("imex2", {"lam": 0.5, "gamma": 1.0}, 4.0, 0.15),
    ("rk4", {}, 16.0, 0.20)])
def test_convergence_order(method, kw, ratio, tol):
    r = decay_error(method, 0.1, **kw) / decay_error(method, 0.05, **kw)
    assert abs(r - ratio) <= tol * ratio


def test_imex2_second_order_with_nonlinear_part():
    # x' = -x - x^3 split into implicit -x and explicit -x^3
    sys = scalar(f=lambda x, u: -x ** 3)
    ref = integrate(sys, np.array([1.0]), zero_input, 1.0, 1e-4, "rk4").y[-1, 0]
    errs = [abs(integrate(sys, np.array([1.0]), zero_input, 1.0, h, "imex2").y[-1, 0] - ref)
            for h in (0.05, 0.025)]
    assert abs(errs[0] / errs[1] - 4.0) <= 0.15 * 4.0


@pytest.mark.parametrize("lam", sorted(LAMBDAS.values()))
def test_imex2_lambda_options(lam):
    assert decay_error("imex2", 0.01, lam=lam) < 1e-3


@pytest.mark.parametrize("method", SOLVERS)
def test_zero_stays_zero(method):
    sol = integrate(scalar(), np.zeros(1), zero_input, 10.0, 0.5, method)
    np.testing.assert_array_equal(sol.y, 0.0)


@pytest.mark.parametrize("method", SOLVERS)
def test_equilibrium_preserved(method):
    sys = scalar(E=2.0, A=-1.0, B=1.0, F=0.5,
                 f=lambda x, u: -0.1 * x ** 3)
    # -x + u + 0.5 - 0.1 x^3 = 0 at x = 1, u = 0.6
    sol = integrate(sys, np.array([1.0]), lambda t: np.array([0.6]), 50.0, 0.5, method)
    np.testing.assert_allclose(sol.y[:, 0], 1.0, rtol=1e-14)


def test_rk4_step_matches_taylor():
    rng = np.random.default_rng(0)
    E = np.eye(4) + 0.1 * rng.standard_normal((4, 4))
    E = E @ E.T
    A = rng.standard_normal((4, 4)) - 3 * np.eye(4)
    sys = LumpedSystem(E, A, np.zeros((4, 1)), np.eye(4), np.zeros(4), np.zeros(4))
    x0 = rng.standard_normal(4)
    h = 0.05
    M = h * np.linalg.solve(E, A)
    taylor = np.eye(4) + M + M @ M / 2 + M @ M @ M / 6 + M @ M @ M @ M / 24
    sol = integrate(sys, x0, zero_input, h, h, "rk4")
    np.testing.assert_allclose(sol.y[1], taylor @ x0, rtol=1e-12, atol=1e-14)


def test_pure_quadrature_agrees():
    sys = LumpedSystem(np.array([[2.0]]), np.zeros((1, 1)), np.array([[3.0]]),
                       np.array([[1.0]]), np.array([1.0]), np.zeros(1))
    runs = [integrate(sys, np.zeros(1), lambda t: np.array([1.0]), 4.0, 0.25, m).y
            for m in SOLVERS]
    exact = 2.0 * np.arange(17) * 0.25
    for y in runs:
        np.testing.assert_allclose(y[:, 0], exact, rtol=1e-12)


@pytest.mark.parametrize("method", SOLVERS)
def test_input_held_over_each_step(method):
    # x' = u with u = 1 on the first step only: every solver integrates exactly h
    sys = LumpedSystem(np.eye(1), np.zeros((1, 1)), np.eye(1), np.eye(1), np.zeros(1),
                       np.zeros(1))
    pulse = lambda t: np.array([1.0 if t < 0.5 else 0.0])  # noqa: E731
    y = integrate(sys, np.zeros(1), pulse, 1.5, 0.5, method).y[:, 0]
    np.testing.assert_allclose(y, [0.0, 0.5, 0.5, 0.5], rtol=1e-15)


def test_outputs_are_c_times_state():
    rng = np.random.default_rng(1)
    A = -np.eye(3) + 0.2 * rng.standard_normal((3, 3))
    C = rng.standard_normal((2, 3))
    sys = LumpedSystem(sp.identity(3, format="csc"), sp.csr_matrix(A),
                       sp.csr_matrix(np.ones((3, 1))), sp.csr_matrix(C), np.zeros(3),
                       np.array([0.5, -0.5]))
    sol = integrate(sys, np.ones(3), lambda t: np.array([np.sin(t)]), 3.0, 0.1, "imex1",
                    capture=True)
    assert len(sol.t) == 31
    expected = np.array([sys.C @ xk + sys.y0 for xk in sol.x])
    np.testing.assert_array_equal(sol.y, expected)


def test_runs_are_deterministic_and_batch_consistent():
    rng = np.random.default_rng(2)
    A = -2 * np.eye(3) + 0.3 * rng.standard_normal((3, 3))
    B = rng.standard_normal((3, 1))
    sys = LumpedSystem(np.eye(3), A, B, np.eye(3), np.zeros(3), np.zeros(3),
                       lambda x, u: -0.05 * x * np.abs(x))
    X0 = rng.standard_normal((3, 2))
    u = lambda t: np.array([1.0])  # noqa: E731
    for m in SOLVERS:
        a = integrate(sys, X0, u, 2.0, 0.1, m).y
        b = integrate(sys, X0, u, 2.0, 0.1, m).y
        np.testing.assert_array_equal(a, b)
        for j in range(2):
            single = integrate(sys, X0[:, j], u, 2.0, 0.1, m).y
            np.testing.assert_allclose(a[:, :, j], single, rtol=1e-13, atol=1e-15)


def test_stacked_mass_matrix_batch():
    E = np.stack([np.eye(2) * 1.0, np.eye(2) * 2.0])
    A = -np.eye(2)
    sys = LumpedSystem(E, A, np.zeros((2, 1)), np.eye(2), np.zeros((2, 1)), np.zeros((2, 1)))
    X0 = np.ones((2, 2))
    for m in SOLVERS:
        y = integrate(sys, X0, lambda t: np.zeros((1, 2)), 1.0, 0.1, m).y
        for j, e in enumerate((1.0, 2.0)):
            ref = integrate(scalar(E=e), np.ones(1), zero_input, 1.0, 0.1, m).y[:, 0]
            np.testing.assert_allclose(y[:, 0, j], ref, rtol=1e-13)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blow_up_reports_step():
    with pytest.raises(BlowUpError) as err:
        integrate(scalar(A=-1e3), np.ones(1), zero_input, 100.0, 1.0, "rk4")
    assert err.value.step >= 1


@pytest.mark.filterwarnings("ignore::scipy.linalg.LinAlgWarning")
def test_solver_errors():
    with pytest.raises(SolverError, match="unknown solver"):
        integrate(scalar(), np.ones(1), zero_input, 1.0, 0.1, "euler")
    with pytest.raises(SolverError, match="step size"):
        integrate(scalar(), np.ones(1), zero_input, 1.0, 0.0)
    with pytest.raises(SolverError, match="singular"):
        integrate(scalar(E=1.0, A=1.0), np.ones(1), zero_input, 1.0, 1.0, "imex1")


def test_grid_length():
    sol = integrate(scalar(), np.ones(1), zero_input, 86400.0, 20.0, "imex1")
    assert len(sol.t) == 4321 and sol.t[-1] == 86400.0
