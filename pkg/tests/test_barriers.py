import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import simulate_scalar_pull
from stlcbf.barriers import (
    AffineBarrier,
    AlphaFn,
    BarrierError,
    FcbfParams,
    HalfspaceConstraint,
    IDENTITY_ALPHA,
    NonSmoothPointError,
    StateBox,
    TopBarrier,
    cbf_constraint,
    convergence_time,
    fcbf_constraint,
    finite_diff_check,
    gamma_for_deadline,
)
from stlcbf.sim import ControlSystem


def scalar_system():
    """x' = u on a 1-D state."""
    return ControlSystem(
        n=1, m=1, f=lambda t, x: (0.0,), g=lambda t, x: ((1.0,),),
        domain=StateBox((-1e6,), (1e6,)),
    )


class TestParamTypes:
    def test_alpha_positive_gain(self):
        with pytest.raises(BarrierError):
            AlphaFn(0.0)
        assert AlphaFn(2.0)(3.0) == 6.0

    @pytest.mark.parametrize("rho,gamma", [(1.0, 1.0), (-0.1, 1.0), (0.5, 0.0)])
    def test_fcbf_params_validated(self, rho, gamma):
        with pytest.raises(BarrierError):
            FcbfParams(rho, gamma)

    def test_infeasible_marker(self):
        assert HalfspaceConstraint((0.0,), -1.0).is_infeasible_marker()
        assert HalfspaceConstraint((0.0,), 1.0).is_vacuous()
        assert not HalfspaceConstraint((1.0,), -1.0).is_infeasible_marker()


class TestCbfConstraint:
    def test_speed_limit_on_double_integrator(self, double_integrator):
        # h = 25 - V at V=20 with alpha(h)=h gives u <= 5
        bar = AffineBarrier("v25", coeffs=(0.0, -1.0), offset=25.0)
        c = cbf_constraint(bar, double_integrator, IDENTITY_ALPHA, 0.0, (0.0, 20.0))
        assert c.a == (1.0,)
        assert c.b == pytest.approx(5.0)

    def test_constant_inside_barrier_is_vacuous(self, double_integrator):
        bar = AffineBarrier("one", coeffs=(0.0, 0.0), offset=1.0)
        c = cbf_constraint(bar, double_integrator, IDENTITY_ALPHA, 0.0, (0.0, 0.0))
        assert c.a == (0.0,) and c.b == pytest.approx(1.0) and c.is_vacuous()

    def test_constant_outside_barrier_is_infeasible_marker(self, double_integrator):
        bar = AffineBarrier("neg", coeffs=(0.0, 0.0), offset=-1.0)
        c = cbf_constraint(bar, double_integrator, IDENTITY_ALPHA, 0.0, (0.0, 0.0))
        assert c.is_infeasible_marker()

    def test_boundary_input_zeroes_propagated_rate(self, double_integrator):
        # on a.u = b the closed-loop dh/dt + alpha(h) must vanish
        bar = AffineBarrier("v25", coeffs=(0.0, -1.0), offset=25.0)
        for v, kappa in ((20.0, 1.0), (27.5, 0.5), (3.0, 2.0)):
            alpha = AlphaFn(kappa)
            x = (1.0, v)
            c = cbf_constraint(bar, double_integrator, alpha, 0.0, x)
            u = c.b / c.a[0]
            grad = bar.grad_x(0.0, x)
            fv = double_integrator.f(0.0, x)
            hdot = bar.dh_dt(0.0, x) + sum(
                gi * (fi + gm[0] * u)
                for gi, fi, gm in zip(grad, fv, double_integrator.g(0.0, x))
            )
            assert abs(hdot + alpha(bar.h(0.0, x))) < 1e-9


class TestFcbfConstraint:
    def test_outside_set_demands_convergence(self):
        # h = x at x=-1, rho=0.9, gamma=2: constraint -u <= -2, i.e. u >= 2
        bar = AffineBarrier("x", coeffs=(1.0,), offset=0.0)
        c = fcbf_constraint(bar, scalar_system(), FcbfParams(0.9, 2.0), 0.0, (-1.0,))
        assert c.a == (-1.0,)
        assert c.b == pytest.approx(-2.0)

    def test_sign_zero_on_boundary(self):
        bar = AffineBarrier("x", coeffs=(1.0,), offset=0.0)
        c = fcbf_constraint(bar, scalar_system(), FcbfParams(0.9, 2.0), 0.0, (0.0,))
        assert c.b == pytest.approx(0.0)

    def test_inside_set_relaxes_by_gamma_h_rho(self, double_integrator):
        # for h > 0 the bound exceeds the alpha-free drift by exactly gamma h^rho
        bar = AffineBarrier("v25", coeffs=(0.0, -1.0), offset=25.0)
        p = FcbfParams(0.5, 3.0)
        x = (0.0, 20.0)
        c = fcbf_constraint(bar, double_integrator, p, 0.0, x)
        drift_only = cbf_constraint(bar, double_integrator, AlphaFn(1.0), 0.0, x).b \
            - bar.h(0.0, x)
        assert c.b - drift_only == pytest.approx(p.gamma * 5.0 ** p.rho)


class TestConvergenceTime:
    def test_unit_deficit(self):
        assert convergence_time(-1.0, FcbfParams(0.9, 2.0)) == pytest.approx(5.0)

    def test_already_safe(self):
        assert convergence_time(3.0, FcbfParams(0.9, 2.0)) == 0.0

    def test_matches_scalar_pull_simulation(self):
        # independent oracle: integrate dh/dt = gamma sign(h)|h|^rho
        p = FcbfParams(0.5, 1.0)
        assert convergence_time(-4.0, p) == pytest.approx(4.0)
        crossing = simulate_scalar_pull(-4.0, p.gamma, p.rho)
        assert crossing == pytest.approx(4.0, abs=5e-3)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-10, -0.1), st.floats(0.0, 0.9), st.floats(0.5, 4.0))
    def test_pull_simulation_property(self, h0, rho, gamma):
        p = FcbfParams(rho, gamma)
        t_pred = convergence_time(h0, p)
        crossing = simulate_scalar_pull(h0, gamma, rho, dt=min(1e-3, t_pred / 100 + 1e-6))
        assert crossing <= t_pred + 2e-2 * max(1.0, t_pred)


class TestGammaForDeadline:
    def test_round_trip_unit(self):
        g = gamma_for_deadline(-1.0, 0.9, 5.0)
        assert g == pytest.approx(2.0)
        assert convergence_time(-1.0, FcbfParams(0.9, g)) == pytest.approx(5.0)

    def test_round_trip_generic(self):
        g = gamma_for_deadline(-4.0, 0.5, 4.0)
        assert g == pytest.approx(1.0)
        assert convergence_time(-4.0, FcbfParams(0.5, g)) == pytest.approx(4.0)

    def test_already_safe_returns_minimum(self):
        assert gamma_for_deadline(0.0, 0.9, 5.0) == pytest.approx(1e-3)
        assert gamma_for_deadline(2.5, 0.9, 5.0) == pytest.approx(1e-3)

    def test_nonpositive_deadline_rejected(self):
        with pytest.raises(BarrierError):
            gamma_for_deadline(-1.0, 0.9, 0.0)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-50, -0.01), st.floats(0, 0.95), st.floats(0.1, 60))
    def test_round_trip_property(self, h0, rho, t_target):
        g = gamma_for_deadline(h0, rho, t_target)
        assert convergence_time(h0, FcbfParams(rho, g)) == pytest.approx(t_target)


class TestFiniteDiffCheck:
    def test_affine_is_nearly_exact(self):
        bar = AffineBarrier("v", coeffs=(0.4, -1.0), offset=5.0)
        assert finite_diff_check(bar, 1.0, (2.0, 3.0), step=1e-6) < 1e-8

    def test_piecewise_switch_is_flagged(self):
        bar = AffineBarrier("hv", coeffs=(0.0, -1.0), pieces=[(0.0, 30.0), (50.0, 25.0)])
        with pytest.raises(NonSmoothPointError):
            finite_diff_check(bar, 50.0, (0.0, 10.0))
        assert finite_diff_check(bar, 25.0, (0.0, 10.0)) < 1e-8

    def test_step_must_be_positive(self):
        bar = AffineBarrier("v", coeffs=(1.0,), offset=0.0)
        with pytest.raises(BarrierError):
            finite_diff_check(bar, 0.0, (1.0,), step=0.0)


class TestPiecewiseAffine:
    def test_left_limit_at_switch(self):
        bar = AffineBarrier("hv", coeffs=(0.0, -1.0), pieces=[(0.0, 30.0), (50.0, 25.0)])
        x = (0.0, 10.0)
        assert bar.h(49.999, x) == pytest.approx(20.0)
        assert bar.h(50.0, x) == pytest.approx(15.0)      # half-open: new piece
        assert bar.h_left(50.0, x) == pytest.approx(20.0)  # left limit: old piece
        assert bar.affine_at(50.0, side="left")[1] == 30.0

    def test_negation_flips_everything(self):
        bar = AffineBarrier("v", coeffs=(0.0, -1.0), offset=10.0)
        neg = bar.negate()
        assert neg.h(0.0, (0.0, 4.0)) == pytest.approx(-6.0)
        assert neg.grad_x(0.0, (0.0, 4.0)) == (0.0, 1.0)
        coeffs, offset = neg.affine_at(0.0)
        assert coeffs == (0.0, 1.0) and offset == -10.0

    def test_top_barrier_is_always_safe(self):
        top = TopBarrier(2)
        assert top.h(0.0, (5.0, 5.0)) == 1.0
        assert top.affine_at(0.0) == ((0.0, 0.0), 1.0)

    def test_safe_set_membership_and_left_limit(self):
        from stlcbf.barriers import SafeSet

        bar = AffineBarrier("hv", coeffs=(0.0, -1.0), pieces=[(0.0, 30.0), (50.0, 25.0)])
        x = (0.0, 27.0)
        assert SafeSet(bar, 10.0).membership(x)
        assert SafeSet(bar, 10.0).margin(x) == pytest.approx(3.0)
        assert not SafeSet(bar, 50.0).membership(x)          # new piece: 25
        assert SafeSet(bar, 50.0, side="left").membership(x)  # left limit: 30
