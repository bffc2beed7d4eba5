"""Pipeline orchestration: parse -> preprocess -> group -> build schedules ->
static compatibility -> simulate -> monitor, plus trace/report serialization.

Exit codes: 0 success, 2 static incompatibility, 3 runtime infeasibility (or
domain exit), 4 config/initial-condition error. Identical configs (including
the seed) produce byte-identical trace and report files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from . import stl
from .barriers import AffineBarrier, AlphaFn, BarrierRegistry
from .config import ScenarioConfig, instantiate_custom
from .contracts import ScheduleConfig, build_schedule
from .qp import PidState, pid_nominal
from .sim import SimFailure, Trace, run_simulation
from .stl import SatisfactionReport, StlSpec, group_tasks, eventually_to_globally, parse_spec
from .vehicle import (
    ExogenousSignals,
    LeadProfile,
    SignalContractSet,
    SignalTimings,
    SpeedLimitSchedule,
    TrafficSignalBarrier,
    build_signal_contracts,
    friction_force,
    generate_signal_plan,
    make_vehicle_system,
    signal_barriers,
    spacing_barrier,
    speed_limit_barrier,
)

EXIT_SUCCESS = 0
EXIT_STATIC_INCOMPATIBLE = 2
EXIT_RUNTIME_FAILURE = 3
EXIT_CONFIG_ERROR = 4


class PipelineError(ValueError):
    pass


@dataclass
class ScenarioBundle:
    """Everything instantiated from a config, ready to simulate."""

    cfg: ScenarioConfig
    registry: BarrierRegistry
    exo: ExogenousSignals
    sys: object
    spec: StlSpec            # post eventually->globally
    groups: list
    schedules: list          # ContractSchedule | SignalContractSet
    pid: PidState
    margin_barriers: list
    extra_channels: dict

    def nominal(self, t, x):
        h1 = self.registry.get("h1").h(t, x)
        v_r = self.exo.lead.velocity(t) - x[1]
        return pid_nominal(h1, v_r, self.pid, self.cfg.dt, self.cfg.vp.mass,
                           friction_force(x[1], self.cfg.vp))


def build_scenario(cfg: ScenarioConfig) -> ScenarioBundle:
    vp = cfg.vp
    lead = LeadProfile(cfg.x0[2], cfg.lead_v0, cfg.lead_rows)
    limits = SpeedLimitSchedule(cfg.speed_rows, cfg.horizon) if cfg.speed_rows else None
    if cfg.signal_rows is not None:
        signals = [SignalTimings(p, g, y, r, offset=o % (g + y + r))
                   for p, o, g, y, r in cfg.signal_rows]
    elif cfg.signal_gen is not None:
        gen = cfg.signal_gen
        signals = generate_signal_plan(
            cfg.seed, count=gen.count, first_position=gen.first_position,
            spacing=gen.spacing, green=gen.green, yellow=gen.yellow, red=gen.red,
        )
    else:
        signals = []

    registry = BarrierRegistry()
    registry.register(spacing_barrier(vp, lead))
    if limits is not None:
        registry.register(speed_limit_barrier(limits, vp))
        for _, v in limits.rows:
            bid = f"vmax{v:g}"
            if bid not in registry:
                registry.register(AffineBarrier(
                    bid, coeffs=(0.0, -1.0, 0.0), offset=v, alpha=AlphaFn(1.0 / vp.beta)))
    if signals:
        registry.register(signal_barriers(signals, vp))
    for decl in cfg.custom_barriers:
        registry.register(instantiate_custom(decl))

    exo = ExogenousSignals(lead=lead, limits=limits, signals=tuple(signals))
    sys = make_vehicle_system(vp, lead, cfg.domain)

    spec_src = f"horizon {cfg.horizon!r}\n" + cfg.stl_text
    spec = eventually_to_globally(parse_spec(spec_src, registry))
    groups = group_tasks(spec)

    sched_cfg = ScheduleConfig(
        domain=cfg.domain, horizon=cfg.horizon, rho=cfg.rho_speed,
        t_conv=cfg.t_conv_speed, gamma_min=cfg.gamma_min,
    )
    schedules = []
    for group in groups:
        stitched = [registry.resolve(p) for _, p in group.predicates
                    if isinstance(registry.resolve(p), TrafficSignalBarrier)]
        if stitched:
            if len(group.predicates) != 1:
                raise PipelineError(
                    f"group {group.label}: the signal barrier cannot share a group"
                )
            interval = group.predicates[0][0]
            if interval.start != 0.0 or interval.end != cfg.horizon:
                raise PipelineError(
                    f"group {group.label}: the signal task must span [0, horizon)"
                )
            schedules.append(build_signal_contracts(
                signals, vp, registry, sched_cfg, cfg.rho_signal, label=group.label))
        else:
            schedules.append(build_schedule(group, registry, sched_cfg))

    pid = PidState(k1=cfg.pid_gains[0], k2=cfg.pid_gains[1], k3=cfg.pid_gains[2],
                   windup_limit=cfg.pid_gains[3])

    margin_barriers = ["h1"]
    if limits is not None:
        margin_barriers.append("hv")
    if signals:
        margin_barriers.append("hpos")

    extra_channels = {
        "V_l": lambda t, x: lead.velocity(t),
        "V_max": (lambda t, x: limits.value(t)) if limits else (lambda t, x: math.inf),
        "active_signal": (lambda t, x: float(exo.active_signal_index(x[0]) + 1)
                          if exo.active_signal_index(x[0]) < len(signals) else 0.0),
        "signal_phase": _phase_channel(exo, signals),
    }

    return ScenarioBundle(
        cfg=cfg, registry=registry, exo=exo, sys=sys, spec=spec, groups=groups,
        schedules=schedules, pid=pid, margin_barriers=margin_barriers,
        extra_channels=extra_channels,
    )


def _phase_channel(exo, signals):
    def phase(t, x):
        k = exo.active_signal_index(x[0])
        return signals[k].phase(t) if k < len(signals) else "none"
    return phase


@dataclass
class RunReport:
    scenario: str
    scenario_hash: str
    dt: float
    seed: int
    horizon: float
    status: str                 # "success" | "failure" | "compatible"
    exit_code: int
    failure_stage: str = ""     # "static" | "runtime" | "monitor" when failed
    compat: list = field(default_factory=list)   # (group label, [boundary text])
    monitor: Optional[SatisfactionReport] = None
    failure: Optional[SimFailure] = None
    static_failures: list = field(default_factory=list)
    engagements: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)


@dataclass
class PipelineOutcome:
    report: RunReport
    trace: Optional[Trace]
    bundle: ScenarioBundle

    @property
    def exit_code(self) -> int:
        return self.report.exit_code


def check_pipeline(cfg: ScenarioConfig) -> PipelineOutcome:
    """Static half of the pipeline: build everything, classify boundaries."""
    bundle = build_scenario(cfg)
    report = _base_report(cfg, bundle)
    _fill_compat(report, bundle)
    if report.static_failures:
        report.status, report.failure_stage = "failure", "static"
        report.exit_code = EXIT_STATIC_INCOMPATIBLE
    else:
        report.status, report.exit_code = "compatible", EXIT_SUCCESS
    return PipelineOutcome(report, None, bundle)


def run_pipeline(cfg: ScenarioConfig) -> PipelineOutcome:
    """Full pipeline. Static incompatibility or a runtime failure stops the
    run exactly where the synthesis loop prescribes; the trace prefix that
    exists by then is kept for serialization."""
    bundle = build_scenario(cfg)
    report = _base_report(cfg, bundle)
    _fill_compat(report, bundle)
    if report.static_failures:
        report.status, report.failure_stage = "failure", "static"
        report.exit_code = EXIT_STATIC_INCOMPATIBLE
        return PipelineOutcome(report, None, bundle)

    result = run_simulation(
        bundle.sys, bundle.schedules, bundle.registry, bundle.nominal,
        cfg.input_box, cfg.x0, dt=cfg.dt, t_max=cfg.horizon,
        margin_barriers=bundle.margin_barriers,
        extra_channels=bundle.extra_channels,
        metadata={"scenario": cfg.name, "hash": cfg.scenario_hash(),
                  "dt": cfg.dt, "seed": cfg.seed},
        tol=cfg.margin_tol,
    )
    report.engagements = [rec.describe() for rec in result.engagements.all_records()]
    _fill_summary(report, result.trace, bundle)

    if result.failure is not None:
        report.status, report.failure_stage = "failure", "runtime"
        report.exit_code = EXIT_RUNTIME_FAILURE
        report.failure = result.failure
        return PipelineOutcome(report, result.trace, bundle)

    report.monitor = stl.monitor_trace(result.trace, bundle.spec, bundle.registry,
                                       tol=cfg.margin_tol)
    if report.monitor.satisfied:
        report.status, report.exit_code = "success", EXIT_SUCCESS
    else:
        # The filter ran to completion but some task margin dipped below -tol.
        report.status, report.failure_stage = "failure", "monitor"
        report.exit_code = EXIT_RUNTIME_FAILURE
    return PipelineOutcome(report, result.trace, bundle)


def _base_report(cfg, bundle) -> RunReport:
    return RunReport(
        scenario=cfg.name, scenario_hash=cfg.scenario_hash(), dt=cfg.dt,
        seed=cfg.seed, horizon=cfg.horizon, status="pending", exit_code=EXIT_SUCCESS,
    )


def _iter_schedules(bundle):
    for sched in bundle.schedules:
        if isinstance(sched, SignalContractSet):
            for sub in sched.schedules:
                yield sub
        else:
            yield sched


def _fill_compat(report, bundle):
    for sched in _iter_schedules(bundle):
        lines = [bd.describe() for bd in sched.boundaries]
        report.compat.append((sched.label, lines))
        for bd in sched.failures():
            report.static_failures.append(f"{sched.label}: {bd.describe()}")


def _fill_summary(report, trace, bundle):
    summary = {}
    for bid in bundle.margin_barriers:
        summary[f"min_margin[{bid}]"] = trace.min_margin(bid)
    active = sum(
        1 for un, us in zip(trace.u_nom, trace.u_safe)
        if us and not math.isnan(us[0]) and any(abs(a - b) > 1e-9 for a, b in zip(un, us))
    )
    summary["qp_active_steps"] = active
    summary["rows"] = trace.n_rows()
    report.summary = summary


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

TRACE_COLUMNS = ("t", "X_f", "V_f", "X_l", "V_l", "V_max", "u_nom", "u_safe",
                 "h1", "h_v", "h_pos", "qp_status", "active_signal", "signal_phase")


def _num(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if math.isnan(v):
        return "nan"
    return f"{v:.6f}"


def write_trace_csv(trace: Trace, path: str) -> None:
    """Fixed-schema CSV at 1e-6 decimal precision; byte-stable for identical
    runs. Missing channels (no speed limits / no signals) serialize as inf."""
    margins = trace.margins
    extras = trace.extras
    inf = [math.inf] * trace.n_rows()
    cols = {
        "h1": margins.get("h1", inf), "h_v": margins.get("hv", inf),
        "h_pos": margins.get("hpos", inf),
        "V_l": extras.get("V_l", inf), "V_max": extras.get("V_max", inf),
        "active_signal": extras.get("active_signal", [0.0] * trace.n_rows()),
        "signal_phase": extras.get("signal_phase", ["none"] * trace.n_rows()),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        for i in range(trace.n_rows()):
            x = trace.states[i]
            row = [
                _num(trace.ts[i]), _num(x[0]), _num(x[1]), _num(x[2]),
                _num(cols["V_l"][i]), _num(cols["V_max"][i]),
                _num(trace.u_nom[i][0]), _num(trace.u_safe[i][0]),
                _num(cols["h1"][i]), _num(cols["h_v"][i]), _num(cols["h_pos"][i]),
                trace.qp_status[i], f"{int(cols['active_signal'][i])}",
                cols["signal_phase"][i],
            ]
            fh.write(",".join(row) + "\n")


def format_report(report: RunReport) -> str:
    lines = [
        "# stlcbf run report",
        f"scenario={report.scenario}",
        f"scenario_hash={report.scenario_hash}",
        f"status={report.status}",
        f"exit_code={report.exit_code}",
    ]
    if report.failure_stage:
        lines.append(f"failure_stage={report.failure_stage}")
    lines += [
        f"dt={_num(report.dt)}",
        f"seed={report.seed}",
        f"horizon={_num(report.horizon)}",
        "[compatibility]",
    ]
    for label, bds in report.compat:
        lines.append(f"group={label} boundaries={len(bds)}")
        lines.extend(f"  {text}" for text in bds)
    if report.static_failures:
        lines.append("[static_failures]")
        lines.extend(f"  {text}" for text in report.static_failures)
    if report.failure is not None:
        lines.append("[failure]")
        lines.append(f"  {report.failure.describe()}")
    if report.monitor is not None:
        lines.append("[monitor]")
        lines.extend("  " + ln for ln in str(report.monitor).splitlines())
    if report.engagements:
        lines.append("[engagements]")
        lines.extend(f"  {text}" for text in report.engagements)
    if report.summary:
        lines.append("[summary]")
        for key in sorted(report.summary):
            val = report.summary[key]
            lines.append(f"{key}={_num(val) if isinstance(val, float) else val}")
    return "\n".join(lines) + "\n"


def write_report(report: RunReport, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_report(report))


# ---------------------------------------------------------------------------
# Offline monitoring of a serialized trace
# ---------------------------------------------------------------------------


@dataclass
class TraceView:
    """Minimal trace protocol (ts, states) reconstructed from a CSV."""

    ts: list
    states: list


def read_trace_csv(path: str) -> TraceView:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        try:
            it, ixf, ivf, ixl = (header.index(k) for k in ("t", "X_f", "V_f", "X_l"))
        except ValueError as exc:
            raise PipelineError(f"trace {path} lacks required columns: {exc}") from None
        ts, states = [], []
        for line in fh:
            toks = line.rstrip("\n").split(",")
            ts.append(float(toks[it]))
            states.append((float(toks[ixf]), float(toks[ivf]), float(toks[ixl])))
    return TraceView(ts=ts, states=states)


def monitor_csv(trace_path: str, cfg: ScenarioConfig) -> SatisfactionReport:
    """Re-evaluate every task margin from the recorded states."""
    bundle = build_scenario(cfg)
    view = read_trace_csv(trace_path)
    return stl.monitor_trace(view, bundle.spec, bundle.registry, tol=cfg.margin_tol)
