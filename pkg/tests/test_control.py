import warnings

import numpy as np
import pytest

from arzcontrol.arz_sim import SimConfig, TrafficState, initial_condition, simulate
from arzcontrol.control import (
    BacksteppingController,
    LyapunovParams,
    NOKernelController,
    NOLawController,
    PIController,
    PIGains,
    TargetState,
    ZeroController,
    backstepping_control,
    fit_decay_rate,
    lyapunov_vk,
    no_kernel_control,
    no_law_control,
    pi_control,
    target_matrices,
    target_transform,
)
from arzcontrol.kernel_solver import solve_kernels
from arzcontrol.neural_op.training import measure_eps
from arzcontrol.traffic_model import (
    ConfigurationError,
    ModelParams,
    RiemannState,
    cell_centers,
    linearization,
    to_riemann,
)


@pytest.fixture(scope="module")
def lin():
    return linearization(0.12, ModelParams())


@pytest.fixture(scope="module")
def kernels(lin):
    return solve_kernels(lin[1], 500.0, 101)


def smooth_state(nx, seed=0):
    r = np.random.default_rng(seed)
    x = cell_centers(500.0, nx)
    a, b = r.normal(size=2)
    return RiemannState(a * np.sin(2 * np.pi * x / 500) + 0.2, b * np.cos(np.pi * x / 500), x)


def exact_kv_row_integral(ch, L):
    """int_0^L Kv(L, xi) dxi for the closed-form kernel."""
    lam = ch.lambda1 + ch.lambda2
    b = (ch.c_decay * ch.lambda1 + ch.c_amp) / lam
    if abs(b * L) < 1e-12:
        # default scenario: decay and amplitude cancel, Kv is constant
        return ch.c_amp / lam * L
    return (ch.c_amp / lam) * (1 - np.exp(-b * L)) / b


class TestBackstepping:
    def test_zero_state(self, kernels):
        x = cell_centers(500.0, 100)
        assert backstepping_control(RiemannState(np.zeros(100), np.zeros(100), x), kernels) == 0.0

    def test_unit_velocity(self, kernels, lin):
        x = cell_centers(500.0, 100)
        U = backstepping_control(RiemannState(np.zeros(100), np.ones(100), x), kernels)
        assert U == pytest.approx(exact_kv_row_integral(lin[1], 500.0), rel=1e-6)

    def test_unit_velocity_high_resolution(self, lin):
        k = solve_kernels(lin[1], 500.0, 1001)
        x = cell_centers(500.0, 1000)
        U = backstepping_control(RiemannState(np.zeros(1000), np.ones(1000), x), k)
        assert U == pytest.approx(exact_kv_row_integral(lin[1], 500.0), rel=1e-8)

    def test_quadrature_convergence(self, kernels):
        diffs = []
        for nx in (25, 50, 100, 200):
            a = backstepping_control(smooth_state(nx), kernels)
            b = backstepping_control(smooth_state(2 * nx), kernels)
            diffs.append(abs(a - b))
        assert diffs[-1] < 0.6 * diffs[-2]

    def test_lambda2_mismatch(self, kernels):
        with pytest.raises(ConfigurationError, match="lambda2"):
            backstepping_control(smooth_state(100), kernels, lambda2=15.0)

    def test_length_mismatch(self, kernels):
        x = cell_centers(400.0, 100)
        with pytest.raises(ConfigurationError):
            backstepping_control(RiemannState(np.ones(100), np.ones(100), x), kernels)

    def test_controller_wrong_kernels(self, lin):
        p = ModelParams()
        other = solve_kernels(linearization(0.1, p)[1], 500.0, 51)
        with pytest.raises(ConfigurationError):
            BacksteppingController(other, lin[0], p, cell_centers(500.0, 100))

    def test_controller_matches_function(self, kernels, lin, sim_cfg):
        ctrl = BacksteppingController(kernels, lin[0], ModelParams(), sim_cfg.grid)
        s = initial_condition(sim_cfg)
        rs = to_riemann(s.rho, s.v, lin[0], lin[1], ModelParams(), sim_cfg.grid)
        assert ctrl(s, 0.1) == pytest.approx(backstepping_control(rs, kernels), rel=1e-14)


class TestPI:
    def test_at_equilibrium(self):
        g = PIGains(0.7, 0.3)
        assert all(pi_control(10.0, 10.0, g, 0.2) == 0.0 for _ in range(10))
        assert g.integral_state == 0.0

    def test_proportional(self):
        assert pi_control(10.5, 10.0, PIGains(1.0, 0.0), 0.1) == 0.5

    def test_integral_accumulates(self):
        g = PIGains(0.0, 2.0)
        pi_control(11.0, 10.0, g, 0.5)
        assert g.integral_state == 0.5
        assert pi_control(11.0, 10.0, g, 0.5) == pytest.approx(2.0)

    def test_controller_state_confined(self, sim_cfg):
        gains = PIGains(0.0, 1.0)
        a = PIController(gains, 10.0)
        s = initial_condition(sim_cfg)
        a(s, 0.1)
        a(s, 0.1)
        assert gains.integral_state == 0.0
        assert a.gains.integral_state == pytest.approx(2 * 0.1 * (s.v[0] - 10.0))
        # a zero step does not advance the integral
        before = a.gains.integral_state
        a(s, 0.0)
        assert a.gains.integral_state == before

    def test_default_gains_stabilize_slower(self, experiment, kernels, lin):
        cfg = experiment.sim_config()
        pi = simulate(cfg, PIController(PIGains(experiment.controllers.pi_kp, experiment.controllers.pi_ki),
                                        lin[0].v_star))
        bs = simulate(cfg, BacksteppingController(kernels, lin[0], ModelParams(), cfg.grid))
        zero = simulate(cfg)
        assert pi.norm[-1] < zero.norm[-1]
        assert pi.norm[-1] > bs.norm[-1]


class TestPurity:
    def test_repeated_calls(self, kernels, lin, sim_cfg, trained):
        p = ModelParams()
        s = initial_condition(sim_cfg)
        s.t = 12.0
        ctrls = [BacksteppingController(kernels, lin[0], p, sim_cfg.grid),
                 NOKernelController(trained["kernel"][0], lin[0], p, sim_cfg.grid),
                 NOLawController(trained["law"][0], lin[1].lambda2),
                 ZeroController()]
        for c in ctrls:
            first = c(s, 0.2)
            assert all(c(s, 0.2) == first for _ in range(5)), c.kind
        pi = PIController(PIGains(0.0, 1.0), lin[0].v_star)
        assert pi(s, 0.2) != pi(s, 0.2)


class TestTargetTransform:
    def test_zero_state(self, kernels):
        x = cell_centers(500.0, 100)
        ts = target_transform(RiemannState(np.zeros(100), np.zeros(100), x), kernels)
        assert np.all(ts.alpha == 0) and np.all(ts.beta == 0)

    def test_matrices_are_lower_triangular(self, kernels):
        Aw, Av = target_matrices(kernels, cell_centers(500.0, 50))
        assert np.all(np.triu(Aw, 1) == 0) and np.all(np.triu(Av, 1) == 0)

    @pytest.mark.parametrize("mode", ["nonlinear", "linearized"])
    def test_outlet_boundary_condition(self, kernels, lin, mode):
        """beta at the outlet cell vanishes to O(h) once the loop is running."""
        p = ModelParams()
        worst = []
        for nx in (100, 200):
            cfg = SimConfig(p, lin[0], nx=nx, mode=mode, t_end=30.0, record_every=0.5)
            tr = simulate(cfg, BacksteppingController(kernels, lin[0], p, cfg.grid))
            mats = target_matrices(kernels, cfg.grid)
            betas = [target_transform(to_riemann(tr.rho[i], tr.v[i], lin[0], lin[1], p, cfg.grid),
                                      kernels, mats).beta[-1] for i in range(2, tr.t.size)]
            worst.append(np.max(np.abs(betas)))
        assert worst[0] < 5e-3
        assert worst[1] < 0.6 * worst[0]

    def test_target_dynamics_clear_beta(self, kernels, lin):
        """In the target system beta is transported out through x = 0 with
        zero inflow at x = L, so it vanishes after L / lambda2 = 25 s."""
        p = ModelParams()
        rel = []
        for nx in (100, 200):
            cfg = SimConfig(p, lin[0], nx=nx, mode="linearized", t_end=30.0)
            tr = simulate(cfg, BacksteppingController(kernels, lin[0], p, cfg.grid))
            mats = target_matrices(kernels, cfg.grid)

            def beta_norm(i):
                rs = to_riemann(tr.rho[i], tr.v[i], lin[0], lin[1], p, cfg.grid)
                return np.linalg.norm(target_transform(rs, kernels, mats).beta)

            rel.append(beta_norm(tr.at(30.0)) / beta_norm(0))
        assert rel[0] < 3e-3
        assert rel[1] < 0.6 * rel[0]


class TestLyapunov:
    def test_zero(self, lin):
        x = cell_centers(500.0, 10)
        ts = TargetState(np.zeros(10), np.zeros(10), x)
        assert lyapunov_vk(ts, LyapunovParams.default(lin[1], 500.0), lin[1]) == 0.0

    def test_degenerate_weights(self, lin):
        x = cell_centers(500.0, 200)
        ts = TargetState(np.ones(200), np.zeros(200), x)
        V = lyapunov_vk(ts, LyapunovParams(1e-12, 8.0), lin[1])
        assert V == pytest.approx(500.0 / lin[1].lambda1, rel=1e-9)

    def test_defaults(self, lin):
        lp = LyapunovParams.default(lin[1], 500.0)
        assert lp.nu == pytest.approx(0.01)
        assert lp.a > lin[1].r ** 2

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            LyapunovParams(0.0, 1.0)

    def test_decay_fit_exact(self):
        t = np.linspace(0, 10, 50)
        eta, r2 = fit_decay_rate(t, 3.0 * np.exp(-0.25 * t))
        assert eta == pytest.approx(0.25) and r2 == pytest.approx(1.0)


class TestNeuralControllers:
    def test_no_kernel_zero_state(self, trained):
        x = cell_centers(500.0, 100)
        assert no_kernel_control(RiemannState(np.zeros(100), np.zeros(100), x), trained["kernel"][0], 20.0) == 0.0

    def test_no_kernel_error_bound(self, trained, kernels, lin):
        model = trained["kernel"][0]
        eps = measure_eps(model, [20.0], lambda lam: solve_kernels(lin[1], 500.0, 101)).eps_sup
        for seed in range(5):
            rs = smooth_state(100, seed)
            h = rs.grid[1] - rs.grid[0]
            bound = eps * h * (np.abs(rs.w).sum() + np.abs(rs.v).sum())
            diff = abs(no_kernel_control(rs, model, 20.0) - backstepping_control(rs, kernels))
            assert diff <= bound

    def test_no_kernel_extrapolation_warning(self, trained, sim_cfg):
        p = ModelParams()
        eq = linearization(0.14, p)[0]  # lambda2 = 30
        ctrl = NOKernelController(trained["kernel"][0], eq, p, sim_cfg.grid)
        assert any("outside trained range" in w for w in ctrl.warnings)
        with pytest.warns(UserWarning, match="outside trained range"):
            no_kernel_control(smooth_state(100), trained["kernel"][0], 30.0)

    def test_no_law_ignores_state(self, trained, sim_cfg):
        c = NOLawController(trained["law"][0], 20.0)
        a = initial_condition(sim_cfg)
        b = initial_condition(sim_cfg, amplitude=0.0)
        a.t = b.t = 40.0
        assert c(a, 0.1) == c(b, 0.1)

    def test_no_law_horizon_clamp(self, trained):
        model = trained["law"][0]
        T = model.horizon
        with pytest.warns(UserWarning, match="horizon"):
            u = no_law_control(T + 50.0, model, 20.0)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            assert u == no_law_control(T, model, 20.0)
        c = NOLawController(model, 20.0)
        c(TrafficState(np.ones(3), np.ones(3), T + 1.0), 0.1)
        assert any("beyond trained horizon" in w for w in c.warnings)

    def test_no_law_settles(self, trained):
        # backstepping targets vanish after settling, so the learned law does too
        model = trained["law"][0]
        u = np.array([no_law_control(t, model, 20.0) for t in np.linspace(150, 300, 31)])
        u0 = abs(no_law_control(0.0, model, 20.0))
        assert np.max(np.abs(u)) < 0.05 * u0
