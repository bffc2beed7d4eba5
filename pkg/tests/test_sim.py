import pytest

from stlcbf.barriers import AffineBarrier, BarrierRegistry, StateBox
from stlcbf.contracts import ScheduleConfig, build_schedule
from stlcbf.qp import InputBox
from stlcbf.sim import (
    ControlSystem,
    InitialConditionError,
    SimError,
    integrate_step,
    run_simulation,
)
from stlcbf.stl import PredicateRef, TaskGroup, TimeInterval
from stlcbf.vehicle import LeadProfile, VehicleParams, make_vehicle_system


class TestIntegrateStep:
    def test_double_integrator_exact(self, double_integrator):
        # polynomial dynamics: RK4 reproduces x=(ut^2/2, ut) exactly
        out = integrate_step(double_integrator, 0.0, (0.0, 0.0), (1.0,), 1.0)
        assert out == pytest.approx((0.5, 1.0))

    def test_zero_drift_zero_input_fixed_point(self):
        sys = ControlSystem(n=1, m=1, f=lambda t, x: (0.0,),
                            g=lambda t, x: ((1.0,),),
                            domain=StateBox((-10.0,), (10.0,)))
        assert integrate_step(sys, 0.0, (3.0,), (0.0,), 0.5) == (3.0,)

    def test_vehicle_step_halving_self_consistent(self):
        vp = VehicleParams()
        lead = LeadProfile(55.0, 15.0, [(0.0, 0.3)])
        sys = make_vehicle_system(vp, lead)
        x = (10.0, 12.0, 60.0)
        u = (800.0,)
        coarse = integrate_step(sys, 0.0, x, u, 0.01)
        fine = x
        for k in range(10):
            fine = integrate_step(sys, k * 0.001, fine, u, 0.001)
        for a, b in zip(coarse, fine):
            assert abs(a - b) < 1e-6

    def test_nonpositive_dt_rejected(self, double_integrator):
        with pytest.raises(SimError):
            integrate_step(double_integrator, 0.0, (0.0, 0.0), (0.0,), 0.0)


def _speed_setup(values, horizon, domain=None):
    reg = BarrierRegistry()
    for v in set(values):
        reg.register(AffineBarrier(f"v{v:g}", coeffs=(0.0, -1.0), offset=float(v)))
    dom = domain or StateBox((-1e6, -1e3), (1e6, 1e3))
    each = horizon / len(values)
    group = TaskGroup("G1", tuple(
        (TimeInterval(i * each, (i + 1) * each), PredicateRef(f"v{v:g}"))
        for i, v in enumerate(values)
    ))
    cfg = ScheduleConfig(domain=dom, horizon=horizon, rho=0.5, t_conv=each / 4)
    sched = build_schedule(group, reg, cfg)
    sys = ControlSystem(n=2, m=1, f=lambda t, x: (x[1], 0.0),
                        g=lambda t, x: ((0.0,), (1.0,)), domain=dom)
    return reg, sched, sys


class TestRunSimulation:
    def test_zero_horizon_single_row(self, double_integrator):
        reg = BarrierRegistry()
        res = run_simulation(double_integrator, [], reg, lambda t, x: 0.0,
                             InputBox((-1.0,), (1.0,)), (0.0, 0.0), dt=0.01, t_max=0.0)
        assert res.ok and res.trace.n_rows() == 1

    def test_row_count_and_uniform_grid(self, double_integrator):
        reg = BarrierRegistry()
        res = run_simulation(double_integrator, [], reg, lambda t, x: 0.5,
                             InputBox((-1.0,), (1.0,)), (0.0, 0.0), dt=0.01, t_max=1.0)
        assert res.trace.n_rows() == 101
        diffs = {round(b - a, 9) for a, b in zip(res.trace.ts, res.trace.ts[1:])}
        assert diffs == {0.01}

    def test_initial_assumption_violation_raises(self):
        reg, sched, sys = _speed_setup([10.0], horizon=10.0)
        with pytest.raises(InitialConditionError, match="v10"):
            run_simulation(sys, [sched], reg, lambda t, x: 0.0,
                           InputBox((-5.0,), (5.0,)), (0.0, 15.0), dt=0.01, t_max=10.0)

    def test_constraint_enforced_along_run(self):
        reg, sched, sys = _speed_setup([10.0], horizon=5.0)
        res = run_simulation(sys, [sched], reg, lambda t, x: 50.0,
                             InputBox((-50.0,), (50.0,)), (0.0, 9.5), dt=0.01,
                             t_max=5.0, margin_barriers=["v10"])
        assert res.ok
        assert res.trace.min_margin("v10") >= -1e-3
        assert any(s == "ok" for s in res.trace.qp_status)

    def test_infeasible_constraint_fails_with_timestamp(self):
        # forced to satisfy u >= 10 with a box capped at 5
        reg = BarrierRegistry()
        reg.register(AffineBarrier("drive", coeffs=(1.0, 0.0), offset=0.0))
        dom = StateBox((-1e6, -1e3), (1e6, 1e3))
        group = TaskGroup("G1", ((TimeInterval(0.0, 10.0), PredicateRef("drive")),))
        cfg = ScheduleConfig(domain=dom, horizon=10.0, rho=0.5, t_conv=1.0)
        sched = build_schedule(group, reg, cfg)
        sys = ControlSystem(n=2, m=1, f=lambda t, x: (-20.0 - x[0], 0.0),
                            g=lambda t, x: ((1.0,), (0.0,)), domain=dom)
        res = run_simulation(sys, [sched], reg, lambda t, x: 0.0,
                             InputBox((-5.0,), (5.0,)), (30.0, 0.0), dt=0.01, t_max=10.0)
        assert not res.ok
        assert res.failure.reason == "qp_infeasible"
        assert "cbf:sat(drive)" in res.failure.details or any(
            "drive" in d for d in res.failure.details)
        assert res.trace.qp_status[-1] == "infeasible"
        assert res.trace.n_rows() >= 1

    def test_domain_exit_reported(self, double_integrator):
        small = ControlSystem(n=2, m=1, f=double_integrator.f, g=double_integrator.g,
                              domain=StateBox((-1.0, -10.0), (1.0, 10.0)))
        reg = BarrierRegistry()
        res = run_simulation(small, [], reg, lambda t, x: 1.0,
                             InputBox((-5.0,), (5.0,)), (0.0, 0.0), dt=0.01, t_max=10.0)
        assert not res.ok and res.failure.reason == "domain_exit"

    def test_clamp_dims_logs_event_instead_of_failing(self):
        vp = VehicleParams()
        lead = LeadProfile(500.0, 0.0)
        sys = make_vehicle_system(vp, lead)
        reg = BarrierRegistry()
        # strong braking would push V_f < 0; the floor clamp keeps it at rest
        res = run_simulation(sys, [], reg, lambda t, x: -3000.0,
                             InputBox((-3000.0,), (3000.0,)), (0.0, 1.0, 500.0),
                             dt=0.01, t_max=2.0)
        assert res.ok
        assert any("clamped" in msg for _, msg in res.trace.events)
        assert all(x[1] >= 0.0 for x in res.trace.states)

    def test_margins_recorded_for_every_row(self):
        reg, sched, sys = _speed_setup([10.0], horizon=2.0)
        res = run_simulation(sys, [sched], reg, lambda t, x: 0.0,
                             InputBox((-5.0,), (5.0,)), (0.0, 0.0), dt=0.01,
                             t_max=2.0, margin_barriers=["v10"])
        assert len(res.trace.margins["v10"]) == res.trace.n_rows()


class TestFcbfRealizedInClosedLoop:
    def test_speed_drop_converges_by_boundary(self):
        # 20 -> 5 drop with a quarter-interval window; nominal pushes full throttle
        reg, sched, sys = _speed_setup([20.0, 5.0], horizon=40.0)
        res = run_simulation(sys, [sched], reg, lambda t, x: 100.0,
                             InputBox((-200.0,), (200.0,)), (0.0, 18.0), dt=0.01,
                             t_max=40.0, margin_barriers=["v5", "v20"])
        assert res.ok
        # at the boundary t=20 the next barrier must already be satisfied
        idx = res.trace.ts.index(pytest.approx(20.0)) if 20.0 in res.trace.ts else \
            next(i for i, t in enumerate(res.trace.ts) if abs(t - 20.0) < 1e-9)
        assert res.trace.margins["v5"][idx] >= -1e-3
        # and stays satisfied afterwards
        assert min(res.trace.margins["v5"][idx:]) >= -1e-3
        rec = res.engagements.records[("G1", 0)]
        assert rec.time <= sched.boundaries[0].tau + 0.011
        assert rec.t_conv_bound <= sched.boundaries[0].t_target + 1e-9
