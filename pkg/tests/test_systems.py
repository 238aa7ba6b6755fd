import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chaingraph.systems import (
    DiscreteMap,
    Escape,
    IntegratorConfig,
    NoReturn,
    PoincareReturn,
    SectionConfig,
    SystemInputError,
    SystemSpec,
    TimeTMap,
    evaluate,
    flow_time_T,
    lipschitz_estimate,
    logistic_trapping_interval,
    lorenz_fixed_points,
    poincare_return,
    step_points,
    vector_field,
)

PENDULUM = SystemSpec("PendulumPoincare", {"gamma": 0.2, "rho": 2.0})
CUBIC = SystemSpec("Polynomial1DFlow", {"c1": 1.0, "c3": -1.0}, TimeTMap(1.0))


def angle_gap(a, b):
    d = np.asarray(a, float) - np.asarray(b, float)
    d[0] = (d[0] + math.pi) % (2 * math.pi) - math.pi
    return np.abs(d).max()


class TestEvaluate:
    def test_logistic(self):
        assert evaluate(SystemSpec("LogisticMap", {"a": 4}), [0.5]) == pytest.approx([1.0])

    def test_lorenz_fixed_point_is_fixed(self):
        spec = SystemSpec("LorenzFlow", {"r": 17.5}, TimeTMap(1.0))
        p1 = [-6.633, -6.633, 16.5]
        assert np.abs(evaluate(spec, p1) - p1).max() < 5e-3

    @pytest.mark.parametrize("p", [(-0.472, 2.037), (-0.478, -0.608)])
    def test_pendulum_fixed_points(self, p):
        assert angle_gap(evaluate(PENDULUM, p), p) < 1e-3

    def test_nonfinite_input(self):
        with pytest.raises(SystemInputError):
            evaluate(CUBIC, [np.nan])

    def test_wrong_dimension(self):
        with pytest.raises(SystemInputError):
            evaluate(CUBIC, [0.1, 0.2])

    def test_escape(self):
        spec = SystemSpec("Polynomial1DFlow", {"c1": 0.0, "c3": 1.0}, TimeTMap(5.0))
        with pytest.raises(Escape):
            evaluate(spec, [2.0])

    def test_deterministic(self):
        x = np.random.default_rng(1).uniform(-1, 1, (50, 2))
        a, _ = step_points(PENDULUM, x)
        b, _ = step_points(PENDULUM, x)
        assert np.array_equal(a, b)

    def test_batch_matches_single(self):
        x = np.array([[0.3], [-1.2], [1.7]])
        Y, ok = step_points(CUBIC, x)
        assert ok.all()
        for row, y in zip(x, Y):
            assert evaluate(CUBIC, row) == pytest.approx(y, abs=1e-15)


class TestValidation:
    def test_unknown_kind(self):
        with pytest.raises(SystemInputError):
            SystemSpec("Duffing")

    @pytest.mark.parametrize("a", [1.0, 4.5, -2.0])
    def test_logistic_range(self, a):
        with pytest.raises(SystemInputError):
            SystemSpec("LogisticMap", {"a": a})

    def test_pendulum_needs_damping(self):
        with pytest.raises(SystemInputError):
            SystemSpec("PendulumPoincare", {"gamma": 0.0})

    def test_flow_rejects_discrete_step(self):
        with pytest.raises(SystemInputError):
            SystemSpec("LorenzFlow", step=DiscreteMap())

    def test_map_rejects_time_T(self):
        with pytest.raises(SystemInputError):
            SystemSpec("LogisticMap", step=TimeTMap(1.0))

    @pytest.mark.parametrize("T", [0.0, -1.0])
    def test_time_T_positive(self, T):
        with pytest.raises(SystemInputError):
            TimeTMap(T)

    def test_forced_system_needs_period_multiple(self):
        with pytest.raises(SystemInputError):
            SystemSpec("PendulumPoincare", step=TimeTMap(1.0))
        SystemSpec("PendulumPoincare", step=TimeTMap(4 * math.pi))

    def test_integrator_dt(self):
        with pytest.raises(SystemInputError):
            IntegratorConfig(dt=0.0)

    def test_section_config(self):
        with pytest.raises(SystemInputError):
            SectionConfig(period=-1.0)
        with pytest.raises(SystemInputError):
            SectionConfig(direction=0)

    def test_galerkin_mode_count(self):
        with pytest.raises(SystemInputError):
            SystemSpec("ChafeeInfanteGalerkin", {"N": 0})


class TestLogisticInterval:
    def test_full_interval(self):
        box, degenerate = logistic_trapping_interval(4.0)
        assert (box.lo[0], box.hi[0]) == pytest.approx((0.0, 1.0)) and not degenerate

    def test_degenerate(self):
        box, degenerate = logistic_trapping_interval(2.0)
        assert degenerate
        assert (box.lo[0], box.hi[0]) == pytest.approx((0.45, 0.55))

    def test_a_3_2(self):
        box, _ = logistic_trapping_interval(3.2)
        assert (box.lo[0], box.hi[0]) == pytest.approx((0.512, 0.8))
        xs = np.linspace(box.lo[0], box.hi[0], 100_001)[:, None]
        y, _ = step_points(SystemSpec("LogisticMap", {"a": 3.2}), xs)
        assert y.min() >= box.lo[0] - 1e-12 and y.max() <= box.hi[0] + 1e-12

    def test_out_of_range(self):
        with pytest.raises(SystemInputError):
            logistic_trapping_interval(0.5)


class TestFlows:
    def test_equilibrium(self):
        for T in (0.1, 1.0, 7.3):
            assert flow_time_T(CUBIC, [1.0], T) == pytest.approx([1.0], abs=1e-14)

    def test_converges_to_one(self):
        assert abs(flow_time_T(CUBIC, [0.5], 20.0)[0] - 1.0) < 1e-6

    def test_closed_form(self):
        # x' = x - x^3 has x(t)^2 = 1 / (1 + (1/x0^2 - 1) e^{-2t})
        x = flow_time_T(CUBIC, [0.5], 1.0)[0]
        assert x == pytest.approx(1 / math.sqrt(1 + 3 * math.exp(-2)), abs=1e-9)

    def test_lorenz_stays_in_ball(self):
        spec = SystemSpec("LorenzFlow", {"r": 28.0}, TimeTMap(1.0))
        sigma, b, r = 10.0, 8 / 3, 28.0
        center = np.array([0, 0, sigma + r])
        radius = b * (sigma + r) / (2 * math.sqrt(b - 1)) * 1.1
        x = np.array([1.0, 1.0, 1.0])
        for _ in range(100):
            x = flow_time_T(spec, x, 1.0)
            assert np.linalg.norm(x - center) <= radius

    def test_not_a_flow(self):
        with pytest.raises(SystemInputError):
            flow_time_T(SystemSpec("LogisticMap"), [0.1], 1.0)

    @pytest.mark.parametrize("r", [17.5, 24.1, 28.0])
    def test_lorenz_equilibria(self, r):
        spec = SystemSpec("LorenzFlow", {"r": r}, TimeTMap(1.0))
        for p in lorenz_fixed_points(r=r):
            assert np.abs(evaluate(spec, p) - p).max() < 1e-9


class TestReturnMaps:
    def test_pendulum_area_contraction(self):
        p0 = np.array([0.3, 0.2])
        tri = np.array([p0, p0 + [1e-4, 0], p0 + [0, 1e-4]])
        img, ok = step_points(PENDULUM, tri)
        assert ok.all()

        def area(t):
            u, v = t[1] - t[0], t[2] - t[0]
            return abs(u[0] * v[1] - u[1] * v[0]) / 2

        ratio = area(img) / area(tri)
        assert ratio == pytest.approx(math.exp(-2 * math.pi * 0.2), rel=0.05)

    def test_lorenz_section_membership(self):
        spec = SystemSpec("LorenzFlow", {"r": 17.5},
                          PoincareReturn(SectionConfig(coord=2, value=16.5, direction=-1, max_time=20.0)))
        y = poincare_return(spec, [-6.0, -6.0])
        assert y.shape == (2,) and np.all(np.isfinite(y))
        # the returned point sits on z = 16.5 and the flow crosses it downwards there
        state = np.array([[y[0], y[1], 16.5]])
        assert vector_field(spec, state)[0, 2] < 0

    def test_no_return(self):
        spec = SystemSpec("LorenzFlow", {"r": 0.5},
                          PoincareReturn(SectionConfig(coord=2, value=16.5, direction=-1, max_time=2.0)))
        with pytest.raises(NoReturn):
            evaluate(spec, [1.0, 1.0])

    def test_requires_return_step(self):
        with pytest.raises(SystemInputError):
            poincare_return(CUBIC, [0.1])


def test_projection_on_constant_mode():
    spec = SystemSpec("ChafeeInfanteGalerkin", {"lambda": 0.5, "N": 4}, TimeTMap(1.0), projection=(0,))
    assert spec.dim == 1
    ode = SystemSpec("Polynomial1DFlow", {"c1": 0.5, "c3": -0.5}, TimeTMap(1.0))
    assert evaluate(spec, [0.3]) == pytest.approx(evaluate(ode, [0.3]), abs=1e-10)


def test_lipschitz_estimate_of_linear_field():
    spec = SystemSpec("Polynomial1DFlow", {"c1": -2.0, "c3": 0.0}, TimeTMap(1.0))
    assert lipschitz_estimate(spec, [0.0], 1.0) == pytest.approx(2.0, rel=1e-6)


# -- properties --------------------------------------------------------------------------


@settings(max_examples=100, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(0.05, 2.0), st.floats(0.05, 2.0))
def test_semigroup_cubic(x, s, t):
    a = flow_time_T(CUBIC, flow_time_T(CUBIC, [x], s), t)
    b = flow_time_T(CUBIC, [x], s + t)
    assert abs(a[0] - b[0]) <= 10 * CUBIC.dt**4 * (s + t)


LORENZ = SystemSpec("LorenzFlow", {"r": 28.0}, TimeTMap(1.0))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-15, 15), min_size=3, max_size=3), st.integers(1, 200), st.integers(1, 200))
def test_semigroup_lorenz_on_step_lattice(x, i, j):
    # s and t are whole numbers of RK4 steps; off this lattice the two paths use
    # different step sizes and only agree to the integrator's own accuracy
    x = np.array(x) + [0, 0, 25]
    s, t = i * LORENZ.dt, j * LORENZ.dt
    a = flow_time_T(LORENZ, flow_time_T(LORENZ, x, s), t)
    b = flow_time_T(LORENZ, x, s + t)
    assert np.abs(a - b).max() <= 10 * LORENZ.dt**4 * (s + t)


def test_rk4_fourth_order():
    x = np.array([1.0, 2.0, 20.0])

    def at(dt):
        return flow_time_T(SystemSpec("LorenzFlow", {"r": 28.0}, TimeTMap(1.0), IntegratorConfig(dt=dt)), x, 1.0)

    ref = at(1e-4)
    e1, e2 = np.abs(at(0.01) - ref).max(), np.abs(at(0.005) - ref).max()
    assert e1 / e2 > 12
