import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arzcontrol.traffic_model import (
    ConfigurationError,
    DomainError,
    ModelParams,
    RiemannState,
    cell_centers,
    characteristics,
    equilibrium,
    from_riemann,
    fundamental_diagram,
    lambda2_of_rho,
    linearization,
    rho_of_lambda2,
    settling_time,
    speed_prime,
    to_riemann,
)

congested = st.floats(min_value=0.0805, max_value=0.159)


class TestFundamentalDiagram:
    def test_free_flow_end(self, params):
        V, Vp = fundamental_diagram(0.0, params)
        assert V == 40.0
        assert Vp == -250.0

    def test_jam_density(self, params):
        V, _ = fundamental_diagram(0.16, params)
        assert V == 0.0

    def test_default_equilibrium_speed(self, params):
        V, _ = fundamental_diagram(0.12, params)
        assert V == pytest.approx(10.0, abs=1e-12)

    @pytest.mark.parametrize("rho", [-1e-6, 0.1600001, 1.0])
    def test_out_of_range(self, params, rho):
        with pytest.raises(DomainError):
            fundamental_diagram(rho, params)

    def test_gamma_two_derivative_matches_finite_difference(self):
        p = ModelParams(gamma=2.0)
        rho, d = 0.1, 1e-7
        _, Vp = fundamental_diagram(rho, p)
        fd = (fundamental_diagram(rho + d, p)[0] - fundamental_diagram(rho - d, p)[0]) / (2 * d)
        assert Vp == pytest.approx(fd, rel=1e-7)

    def test_array_input(self, params):
        V, Vp = fundamental_diagram(np.array([0.0, 0.08, 0.16]), params)
        np.testing.assert_allclose(V, [40.0, 20.0, 0.0])
        np.testing.assert_allclose(Vp, -250.0)


class TestParams:
    @pytest.mark.parametrize("field", ["v_f", "rho_m", "tau", "L"])
    def test_nonpositive_rejected(self, field):
        with pytest.raises(ConfigurationError):
            ModelParams(**{field: 0.0})

    def test_gamma_below_one_rejected(self):
        with pytest.raises(ConfigurationError):
            ModelParams(gamma=0.5)


class TestEquilibrium:
    def test_default(self, params):
        eq = equilibrium(0.12, params)
        assert eq.v_star == pytest.approx(10.0)
        assert eq.q_star == pytest.approx(1.2)

    def test_other_density(self, params):
        assert equilibrium(0.09, params).v_star == pytest.approx(17.5)

    def test_regime_boundary_rejected(self, params):
        with pytest.raises(ConfigurationError, match="lambda2"):
            equilibrium(0.08, params)

    def test_free_flow_rejected(self, params):
        with pytest.raises(ConfigurationError, match="not congested"):
            equilibrium(0.07, params)

    @pytest.mark.parametrize("rho", [0.0, 0.16, 0.2])
    def test_outside_density_range(self, params, rho):
        with pytest.raises(ConfigurationError):
            equilibrium(rho, params)


class TestCharacteristics:
    def test_default_values(self, default_lin):
        _, ch = default_lin
        assert ch.lambda1 == pytest.approx(10.0)
        assert ch.lambda2 == pytest.approx(20.0)
        assert ch.r == pytest.approx(2.0)
        assert ch.c_amp == pytest.approx(-1 / 60)
        assert ch.c_decay == pytest.approx(1 / 600)

    def test_coupling_at_ends(self, default_lin):
        _, ch = default_lin
        assert ch.c(0.0) == pytest.approx(-1 / 60)
        assert ch.c(500.0) == pytest.approx(-np.exp(-5 / 6) / 60)

    @pytest.mark.parametrize("rho, lam", [(0.09, 5.0), (0.13, 25.0), (0.12, 20.0)])
    def test_lambda2_span_endpoints(self, params, rho, lam):
        assert linearization(rho, params)[1].lambda2 == pytest.approx(lam)

    def test_lambda2_affine_in_density(self, params):
        rho_km = np.linspace(85, 155, 15)
        lam = [linearization(r / 1000, params)[1].lambda2 for r in rho_km]
        np.testing.assert_allclose(lam, 0.5 * rho_km - 40, atol=1e-10)

    def test_lambda2_inverse(self, params):
        lam = np.linspace(1, 39, 20)
        np.testing.assert_allclose(lambda2_of_rho(rho_of_lambda2(lam, params), params), lam)

    def test_settling_time(self, default_lin, params):
        assert settling_time(default_lin[1], params.L) == pytest.approx(75.0)

    @settings(max_examples=60, deadline=None)
    @given(rho=congested, gamma=st.floats(1.0, 3.0))
    def test_regime_properties(self, rho, gamma):
        p = ModelParams(gamma=gamma)
        lam_direct = -rho * speed_prime(rho, p) - fundamental_diagram(rho, p)[0]
        if lam_direct <= 1e-9:
            with pytest.raises(ConfigurationError):
                linearization(rho, p)
            return
        _, ch = linearization(rho, p)
        assert ch.lambda1 > 0 and ch.lambda2 > 0
        assert ch.r == pytest.approx(ch.lambda2 / ch.lambda1)
        c = ch.c(np.linspace(0, p.L, 50))
        assert np.all(c < 0) and np.all(np.diff(c) > 0)


class TestRiemannCoordinates:
    def test_equilibrium_maps_to_origin(self, params, default_lin):
        eq, ch = default_lin
        rs = to_riemann(np.full(20, eq.rho_star), np.full(20, eq.v_star), eq, ch, params)
        assert np.all(rs.w == 0) and np.all(rs.v == 0)

    def test_inlet_reflection(self, params, default_lin):
        # linearized flux-consistent inlet: rho~ = -rho* v~ / v*
        eq, ch = default_lin
        delta = 0.3
        rho0 = eq.rho_star - eq.rho_star * delta / eq.v_star
        grid = np.array([0.0, 1.0])
        rs = to_riemann([rho0, eq.rho_star], [eq.v_star + delta, eq.v_star], eq, ch, params, grid)
        assert rs.w[0] == pytest.approx(-ch.r * delta, rel=1e-13)

    def test_inlet_reflection_nonlinear_flux(self, params, default_lin):
        # exact q* inlet agrees with w~(0) = -r v~(0) to first order in v~
        eq, ch = default_lin
        for delta in (1e-2, 1e-3):
            rho0 = eq.q_star / (eq.v_star + delta)
            rs = to_riemann([rho0, eq.rho_star], [eq.v_star + delta, eq.v_star], eq, ch, params,
                            np.array([0.0, 1.0]))
            assert abs(rs.w[0] + ch.r * delta) < 0.5 * delta**2

    def test_inverse_example(self, params, default_lin):
        eq, ch = default_lin
        x = cell_centers(params.L, 50)
        d = 0.001
        rs = RiemannState(-250.0 * d * np.exp(x / 600), np.zeros_like(x), x)
        rho, v = from_riemann(rs, eq, ch, params)
        np.testing.assert_allclose(rho, eq.rho_star - d, rtol=0, atol=1e-15)
        np.testing.assert_allclose(v, eq.v_star)

    def test_origin_maps_to_equilibrium(self, params, default_lin):
        eq, ch = default_lin
        x = cell_centers(params.L, 10)
        rho, v = from_riemann(RiemannState(np.zeros(10), np.zeros(10), x), eq, ch, params)
        np.testing.assert_allclose(rho, eq.rho_star)
        np.testing.assert_allclose(v, eq.v_star)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), rho_star=st.floats(0.0805, 0.155))
    def test_round_trip(self, seed, rho_star):
        p = ModelParams()
        eq, ch = linearization(rho_star, p)
        r = np.random.default_rng(seed)
        rho = r.uniform(0.01, 0.159, 64)
        v = r.uniform(0.1, 40, 64)
        back = from_riemann(to_riemann(rho, v, eq, ch, p), eq, ch, p)
        np.testing.assert_allclose(back[0], rho, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(back[1], v, rtol=1e-12, atol=1e-15)

    def test_grid_mismatch(self, params, default_lin):
        eq, ch = default_lin
        with pytest.raises(ValueError):
            to_riemann(np.ones(5) * 0.1, np.ones(5), eq, ch, params, grid=np.arange(4.0))
        with pytest.raises(ValueError):
            to_riemann(np.ones(5) * 0.1, np.ones(6), eq, ch, params)

    def test_state_validation(self):
        with pytest.raises(ValueError):
            RiemannState(np.zeros(3), np.zeros(3), np.array([0.0, 2.0, 1.0]))


def _linear_rhs(x, params, eq):
    """Exact x-derivatives and time derivatives of a smooth solution of the
    linearized ARZ system in (rho~, v~) at one instant."""
    L = params.L
    vp = speed_prime(eq.rho_star, params)
    k1, k2 = 2 * np.pi / L, 3 * np.pi / L
    rho, rho_x = 0.01 * np.sin(k1 * x), 0.01 * k1 * np.cos(k1 * x)
    v, v_x = 0.5 * np.cos(k2 * x), -0.5 * k2 * np.sin(k2 * x)
    z = v - vp * rho
    z_x = v_x - vp * rho_x
    rho_t = -eq.v_star * rho_x - eq.rho_star * v_x
    z_t = -eq.v_star * z_x - z / params.tau
    v_t = z_t + vp * rho_t
    return rho, v, rho_t, v_t


@pytest.mark.parametrize("n", [51, 101])
def test_transform_diagonalizes_linearization(params, default_lin, n):
    """Transported through the change of variables, the linearized ARZ
    system becomes w_t + l1 w_x = 0 and v_t - l2 v_x = c(x) w."""
    eq, ch = default_lin
    res = []
    for m in (n, 2 * n - 1):
        x = np.linspace(0, params.L, m)
        rho, v, rho_t, v_t = _linear_rhs(x, params, eq)
        rs = to_riemann(eq.rho_star + rho, eq.v_star + v, eq, ch, params, x)
        vp = speed_prime(eq.rho_star, params)
        w_t = np.exp(ch.c_decay * x) * (v_t - vp * rho_t)
        w_x = np.gradient(rs.w, x, edge_order=2)
        v_x = np.gradient(rs.v, x, edge_order=2)
        r1 = w_t + ch.lambda1 * w_x
        r2 = v_t - ch.lambda2 * v_x - ch.c(x) * rs.w
        scale = max(np.max(np.abs(w_t)), np.max(np.abs(v_t)))
        res.append(max(np.max(np.abs(r1)), np.max(np.abs(r2))) / scale)
    assert res[0] < 0.01
    # at least first-order convergence of the discrete residual
    assert res[1] < 0.6 * res[0]
