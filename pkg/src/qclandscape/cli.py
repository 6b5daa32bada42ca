"""Command-line front end: ``qcl <command> --config <path> [--out <prefix>] [--seed <n>] [--verbose]``.

Every command writes ``<prefix>.summary.json`` (results plus a manifest)
and one or more ``<prefix>.<table>.csv`` files whose leading ``#`` lines
document each column.  Exit codes: 0 success, 1 numerical abort, 2
configuration or input error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import pydantic
import scipy

from . import __version__
from .analysis import (
    KrausLift,
    kraus_lift_objective,
    lie_rank,
    open_landscape_extrema,
    three_level_oracle,
    trilinear_min_time,
)
from .benchmarks import (
    dipole_swap_path,
    eight_level_benchmark,
    five_level_track_path,
    ladder_system,
    pauli_system,
    resonant_start_field,
    resonant_two_level,
)
from .config import RankBlock, RunConfig, SystemConfig, load_config, substream, to_array
from .core import ControlField, ControlSystem, dagger, propagate, random_unitary, unitary_exp
from .errors import ConfigError, InputError, NumericalAbort
from .flows import StepRule, eps_gradient_ascent, u_flow_phi1, u_flow_phi2
from .homotopy import (
    FreeFunction,
    HomotopyProblem,
    SystemPath,
    explore_level_set,
    morph_hamiltonian,
    seek_level,
    track_observable,
)
from .objectives import GateSpec, ObservableSpec, grad_field, hessian_field, objective_value
from .topology import count_critical_values, enumerate_phi1_critical, enumerate_phi2_critical
from .tracking import TrackSpec, track_unitary

log = logging.getLogger("qcl")

COMMANDS = ("propagate", "topology", "flow", "optimize", "dmorph", "track", "rank", "oracle", "open")
TOLERANCES = {
    "hermitian_atol": 1e-12,
    "unitary_rtol": 1e-9,
    "hessian_zero_rtol": 1e-8,
    "dmorph_level_set_drift": 1e-4,
    "dmorph_track_drift": 1e-3,
    "track_condition_cap": 1e8,
}


class Table:
    """Column-documented CSV table."""

    def __init__(self, name: str, columns: list[tuple[str, str]]):
        self.name = name
        self.columns = columns
        self.rows: list[list] = []

    def add(self, *row):
        if len(row) != len(self.columns):
            raise ValueError(f"table {self.name}: expected {len(self.columns)} values, got {len(row)}")
        self.rows.append(list(row))

    def render(self) -> str:
        lines = [f"# {col}: {doc}" for col, doc in self.columns]
        lines.append(",".join(col for col, _ in self.columns))
        for row in self.rows:
            lines.append(",".join(_fmt(v) for v in row))
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        f = float(x)
        return f if math.isfinite(f) else str(f)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


# --------------------------------------------------------------------------
# builders


def _require(value, what: str):
    if value is None:
        raise ConfigError(f"missing required config entry: {what}")
    return value


def build_system(cfg: SystemConfig | None) -> ControlSystem:
    cfg = _require(cfg, "system")
    if cfg.benchmark:
        horizon = cfg.horizon
        if cfg.benchmark == "resonant_two_level":
            return resonant_two_level(horizon or 5 * np.pi)
        if cfg.benchmark == "pauli":
            return pauli_system(horizon or 1.0)
        if cfg.benchmark == "ladder":
            return ladder_system(_require(cfg.levels, "system.levels"), horizon or 10.0)
        if cfg.benchmark == "eight_level":
            return eight_level_benchmark(horizon or 15.0)[0]
        if cfg.benchmark == "dipole_swap":
            return dipole_swap_path(horizon or 20.0).system(0.0)
        return five_level_track_path(horizon or 20.0).system(0.0)
    h0 = to_array(_require(cfg.h0, "system.h0"))
    dipoles = [to_array(d) for d in _require(cfg.dipoles, "system.dipoles")]
    return ControlSystem(h0, dipoles, _require(cfg.horizon, "system.horizon"))


def build_field(cfg: RunConfig, system: ControlSystem) -> ControlField:
    fc = cfg.field
    if fc is None:
        raise ConfigError("missing required config entry: field")
    m = fc.channels or system.n_controls
    shape = None if fc.shape is None else np.asarray(fc.shape)
    if fc.kind == "zeros":
        return ControlField.zeros(system.horizon, fc.steps, m, shape)
    if fc.kind == "constant":
        val = np.broadcast_to(np.atleast_1d(np.asarray(fc.value, dtype=float)), (m,))
        return ControlField(np.tile(val, (fc.steps, 1)), system.horizon, shape)
    if fc.kind == "random":
        rng = substream(cfg.seed, "field")
        fld = ControlField.random_smooth(rng, system.horizon, fc.steps, m, fc.amplitude, fc.bandwidth, fc.modes)
        return ControlField(fld.values, system.horizon, shape)
    if fc.kind == "values":
        return ControlField(np.asarray(_require(fc.values, "field.values"), dtype=float), system.horizon, shape)
    path = Path(_require(fc.path, "field.path"))
    try:
        data = np.loadtxt(path, delimiter=",", comments="#", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read field file {path}: {exc}") from None
    return ControlField(data[:, 1:], system.horizon, shape)


def build_objective(cfg: RunConfig, n: int | None = None):
    oc = _require(cfg.objective, "objective")
    if oc.kind == "gate":
        return GateSpec(to_array(_require(oc.w, "objective.w")))
    theta = to_array(_require(oc.theta, "objective.theta"))
    if oc.rho0 is not None:
        rho = to_array(oc.rho0)
    else:
        psi = to_array(_require(oc.psi0, "objective.rho0 or objective.psi0"))
        psi = psi / np.linalg.norm(psi)
        rho = np.outer(psi, psi.conj())
    spec = ObservableSpec(rho, theta)
    if n is not None and spec.dim != n:
        raise InputError(f"objective dimension {spec.dim} does not match system dimension {n}")
    return spec


def _initial_state(cfg: RunConfig, n: int) -> np.ndarray:
    if cfg.objective is not None and cfg.objective.kind == "observable":
        return build_objective(cfg, n).rho0
    rho = np.zeros((n, n), dtype=complex)
    rho[0, 0] = 1.0
    return rho


# --------------------------------------------------------------------------
# commands; each returns (summary dict, list of tables)


def cmd_propagate(cfg: RunConfig):
    system = build_system(cfg.system)
    fld = build_field(cfg, system)
    traj = propagate(system, fld)
    n = system.dim
    rho0 = _initial_state(cfg, n)
    _, vecs = np.linalg.eigh(system.h0)
    cols = [("t", "time")] + [(f"pop_{i}", f"population of H0 eigenvector {i} (ascending energy)") for i in range(n)]
    table = Table("trajectory", cols)
    for k, t in enumerate(traj.times):
        u = traj.unitaries[k]
        rho = vecs.conj().T @ u @ rho0 @ dagger(u) @ vecs
        table.add(t, *np.real(np.diag(rho)))
    summary = {"final_unitary": traj.final}
    if cfg.objective is not None:
        summary["objective_value"] = objective_value(traj.final, build_objective(cfg, n))
    return summary, [table]


def cmd_topology(cfg: RunConfig):
    block = cfg.topology
    if cfg.objective is not None and cfg.objective.kind == "gate":
        n = build_objective(cfg).dim
        table = Table("critical", [
            ("m", "number of +1 eigenvalues of W^dag U"),
            ("value", "gate distance at the class"),
            ("h_plus", "positive Hessian directions"),
            ("h_zero", "flat Hessian directions"),
            ("h_minus", "negative Hessian directions"),
        ])
        for c in enumerate_phi2_critical(n):
            table.add(c.m, c.value, *c.signature)
        return {"n": n, "classes": n + 1}, [table]
    if cfg.objective is None:
        b = _require(block, "topology")
        n = _require(b.n, "topology.n")
        return {"n": n, "case": b.case, "count": count_critical_values(n, _require(b.case, "topology.case"))}, []
    spec = build_objective(cfg)
    table = Table("critical", [
        ("permutation", "rho0 eigenvector i (descending) mapped to Theta eigenvector perm[i], dash separated"),
        ("value", "objective value sum_i eps_i lambda_perm(i)"),
        ("dimension", "critical manifold dimension"),
        ("h_plus", "positive kinematic Hessian directions"),
        ("h_zero", "flat kinematic Hessian directions"),
        ("h_minus", "negative kinematic Hessian directions"),
        ("saddle", "1 if both curvature signs occur"),
        ("members", "number of permutations merged into this manifold"),
    ])
    recs = enumerate_phi1_critical(spec)
    for r in recs:
        table.add("-".join(map(str, r.permutation)), r.value, r.dimension, *r.signature, r.is_saddle, len(r.members))
    return {"n": spec.dim, "manifolds": len(recs), "max": recs[0].value, "min": recs[-1].value}, [table]


def cmd_flow(cfg: RunConfig):
    block = _require(cfg.flow, "flow")
    spec = build_objective(cfg)
    n = spec.dim
    if block.u0 == "random":
        u0 = random_unitary(n, substream(cfg.seed, "flow"))
    elif block.u0 == "identity":
        u0 = np.eye(n, dtype=complex)
    else:
        u0 = to_array(block.u0)
    runner = u_flow_phi2 if isinstance(spec, GateSpec) else u_flow_phi1
    tr = runner(u0, spec, block.s_max, block.steps, block.method)
    table = Table("flow", [
        ("s", "algorithmic time"),
        ("value", "objective value at U(s)"),
        ("grad_norm", "Frobenius norm of the flow velocity"),
    ])
    for s, v, g in zip(tr.s_grid, tr.values, tr.grad_norms):
        table.add(s, v, g)
    return {"final_value": tr.final_value, "halvings": tr.halvings, "final_unitary": tr.final}, [table]


def _field_table(fld: ControlField, name: str = "field") -> Table:
    cols = [("t", "interval midpoint time")] + [(f"eps_{c}", f"field channel {c}") for c in range(fld.n_channels)]
    table = Table(name, cols)
    for t, row in zip(fld.midpoints, fld.values):
        table.add(t, *row)
    return table


def cmd_optimize(cfg: RunConfig):
    block = _require(cfg.optimize, "optimize")
    system = build_system(cfg.system)
    fld = build_field(cfg, system)
    spec = build_objective(cfg, system.dim)
    tr = eps_gradient_ascent(system, fld, spec, StepRule(initial=block.initial_step), block.max_steps,
                             block.tol, block.penalty, block.target)
    table = Table("optimize", [
        ("iteration", "accepted step index"),
        ("s", "accumulated step length"),
        ("value", "penalized objective"),
        ("grad_norm", "sup norm of the search direction"),
    ])
    for i, (s, v, g) in enumerate(zip(tr.s_grid, tr.values, tr.grad_norms)):
        table.add(i, s, v, g)
    final = tr.final
    traj = propagate(system, final)
    summary = {
        "objective_value": objective_value(traj.final, spec),
        "fluence": final.fluence(),
        "converged": tr.converged,
        "exhausted": tr.exhausted,
        "stalled": tr.stalled,
        "iterations": len(tr.values) - 1,
    }
    tables = [table, _field_table(final)]
    if block.hessian:
        hess = hessian_field(traj, spec)
        summary["hessian_signature"] = hess.signature()
        ev = Table("hessian", [("index", "eigenvalue rank, ascending"), ("eigenvalue", "field Hessian kernel eigenvalue")])
        for i, e in enumerate(hess.eigenvalues()):
            ev.add(i, e)
        tables.append(ev)
        summary["gradient_sup_norm"] = grad_field(traj, spec).sup_norm()
    return summary, tables


def _dmorph_setup(cfg: RunConfig, block):
    sc = cfg.system
    bench = sc.benchmark if sc is not None else None
    if bench == "eight_level":
        system, spec, fld = eight_level_benchmark(sc.horizon or 15.0)
        path = SystemPath.fixed(system)
    elif bench == "dipole_swap":
        path = dipole_swap_path(sc.horizon or 20.0, curved=block.path == "quarter_circle")
        system = path.system(0.0)
        spec = ObservableSpec.transfer(3, 0, 2)
        fld = resonant_start_field(system, 400, [(0, 2)], 0.05, seed=cfg.seed)
    elif bench == "five_level_track":
        path = five_level_track_path(sc.horizon or 20.0)
        system = path.system(0.0)
        spec = ObservableSpec.transfer(5, 0, 4)
        fld = resonant_start_field(system, 400, [(0, 3), (3, 4)], 0.05, seed=cfg.seed)
    else:
        system = build_system(sc)
        spec = build_objective(cfg, system.dim)
        fld = build_field(cfg, system)
        if block.path == "fixed" or block.end_system is None:
            path = SystemPath.fixed(system)
        else:
            end = build_system(block.end_system)
            path = SystemPath.linear(system, end) if block.path == "linear" else SystemPath.quarter_circle(system, end)
    if block.level is not None:
        fld = seek_level(system, fld, spec, block.level)
    elif bench in ("dipole_swap", "five_level_track"):
        fld = seek_level(system, fld, spec, 0.5 if bench == "dipole_swap" else 0.4)
    return path, spec, fld


def cmd_dmorph(cfg: RunConfig):
    block = _require(cfg.dmorph, "dmorph")
    path, spec, fld = _dmorph_setup(cfg, block)
    fc = block.free
    seed = fc.seed if fc.seed is not None else int(substream(cfg.seed, "dmorph").integers(2**31))
    free = FreeFunction(fc.kind, delta_s=fc.delta_s, seed=seed, amplitude=fc.amplitude)
    track = rate = None
    if block.mode == "track":
        traj = propagate(path.system(0.0), fld)
        p0 = float(np.trace(traj.final @ spec.rho0 @ dagger(traj.final) @ spec.theta).real)
        amp = block.track_amplitude
        track = lambda s: p0 + amp * np.sin(2 * np.pi * s)
        rate = lambda s: 2 * np.pi * amp * np.cos(2 * np.pi * s)
    problem = HomotopyProblem(path, spec.rho0, spec.theta, mode=block.mode, free=free, track=track,
                              track_rate=rate, shape=fld.shape, s_steps=block.s_steps,
                              tolerance=block.tolerance, hessian_every=block.hessian_every)
    run = {"level_set": explore_level_set, "morph": morph_hamiltonian, "track": track_observable}[block.mode]
    tr = run(problem, fld)
    table = Table("dmorph", [
        ("s", "homotopy parameter"),
        ("observable", "<Theta> at final time"),
        ("fluence", "integral of the squared field over channels"),
        ("drift", "<Theta>(s) minus its prescribed value"),
    ])
    for row in zip(tr.s_grid, tr.observable, tr.fluence, tr.drift):
        table.add(*row)
    surface = Table("surface", [
        ("s_index", "index of the recorded s value"),
        ("k", "time interval index"),
        ("channel", "field channel"),
        ("value", "field value"),
    ])
    for j, fv in enumerate(tr.fields):
        for k in range(fv.shape[0]):
            for c in range(fv.shape[1]):
                surface.add(j, k, c, fv[k, c])
    summary = {
        "max_drift": tr.max_drift,
        "fluence_start": tr.fluence[0],
        "fluence_end": tr.fluence[-1],
        "records": len(tr.s_grid),
        **tr.extra,
    }
    if tr.hessian_trace is not None:
        summary["hessian_trace"] = tr.hessian_trace
    return summary, [table, surface]


def cmd_track(cfg: RunConfig):
    block = _require(cfg.track, "track")
    system = build_system(cfg.system)
    fld = build_field(cfg, system)
    u0 = propagate(system, fld).final
    n = system.dim
    if block.target == "random":
        rng = substream(cfg.seed, "track")
        a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        a = 0.5 * (a + a.conj().T)
        a -= np.trace(a) / n * np.eye(n)
        w = u0 @ unitary_exp(1j * a * 0.5)
    else:
        w = to_array(block.target)
    spec = TrackSpec("geodesic", w, tolerance=block.tolerance, regularization=block.regularization,
                     condition_cap=block.condition_cap)
    tr = track_unitary(system, fld, spec, block.s_steps)
    table = Table("track", [
        ("s", "homotopy parameter"),
        ("residual", "Frobenius distance to the tracked unitary"),
        ("condition", "condition number of the correlation matrix at the step start"),
        ("fluence", "integral of the squared field"),
    ])
    for s, r, c, f in zip(tr.s_grid, tr.extra["residual"], tr.extra["condition"], tr.fluence):
        table.add(s, r, c, f)
    final_err = float(np.linalg.norm(tr.extra["final_unitary"] - w))
    return {"final_error": final_err, "max_condition": float(np.max(tr.extra["condition"]))}, [table]


def cmd_rank(cfg: RunConfig):
    block = cfg.rank or RankBlock()
    system = build_system(cfg.system)
    rep = lie_rank(system, block.depth_cap)
    out = {
        "dimension_found": rep.dimension_found,
        "ambient": rep.ambient,
        "controllable": rep.controllable,
        "generator_depth": rep.generator_depth,
        "su_dimension": rep.su_dimension,
        "partial": rep.partial,
    }
    table = Table("rank", [(k, d) for k, d in (
        ("dimension_found", "dimension of the dynamical Lie algebra with the phase direction"),
        ("ambient", "N^2"),
        ("controllable", "1 if the full unitary group is reached"),
        ("generator_depth", "commutator nesting depth at closure"),
        ("su_dimension", "dimension of the traceless part"),
    )])
    table.add(*(out[c] for c, _ in table.columns))
    return out, [table]


def cmd_oracle(cfg: RunConfig):
    block = _require(cfg.oracle, "oracle")
    if block.kind == "trilinear":
        res = trilinear_min_time(block.theta, block.J)
        table = Table("oracle", [("value", "minimal time"), ("kappa", "theta / 2 pi")])
        table.add(res.value, res.parameters["kappa"])
        return {"value": res.value, **res.parameters}, [table]
    res = three_level_oracle(block.T)
    table = Table("oracle", [("value", "minimal fluence"), ("T", "horizon")])
    table.add(res.value, block.T)
    path = Table("path", [
        ("t", "time"),
        ("theta", "sphere polar coordinate"),
        ("phi", "sphere azimuthal coordinate"),
        ("u1", "control on the 1-2 transition"),
        ("u2", "control on the 2-3 transition"),
    ])
    tj = res.trajectory
    for row in zip(tj["t"], tj["theta"], tj["phi"], tj["u1"], tj["u2"]):
        path.add(*row)
    return {"value": res.value, **res.parameters}, [table, path]


def cmd_open(cfg: RunConfig):
    block = _require(cfg.open, "open")
    lift = KrausLift(to_array(block.rho_s), to_array(block.rho_e), to_array(block.theta))
    ext = open_landscape_extrema(lift)
    rng = substream(cfg.seed, "open")
    u = random_unitary(lift.lifted_dim, rng)
    lifted = kraus_lift_objective(lift, u, "lifted")
    kraus = kraus_lift_objective(lift, u, "kraus")
    table = Table("open", [("run", "flow index"), ("final_value", "lifted objective after the flow"), ("gap", "maximum minus final value")])
    for i in range(block.flows):
        tr = u_flow_phi1(random_unitary(lift.lifted_dim, rng), lift.lifted_spec(), block.s_max, block.steps)
        table.add(i, tr.final_value, ext.maximum - tr.final_value)
    summary = {
        "maximum": ext.maximum,
        "minimum": ext.minimum,
        "cross_checked": ext.cross_checked,
        "probe_lifted": lifted,
        "probe_kraus": kraus,
        "probe_discrepancy": abs(lifted - kraus),
    }
    return summary, [table]


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


# --------------------------------------------------------------------------
# driver


def _manifest(cfg: RunConfig, command: str, status: str, reason: str | None) -> dict:
    return {
        "command": command,
        "status": status,
        "reason": reason,
        "inputs_sha256": hashlib.sha256(cfg.canonical_json().encode()).hexdigest(),
        "seed": cfg.seed,
        "versions": {
            "qclandscape": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pydantic": pydantic.__version__,
        },
        "tolerances": TOLERANCES,
    }


def _write(prefix: str, summary: dict, tables: list[Table]):
    base = Path(prefix)
    if base.parent and not base.parent.exists():
        base.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{prefix}.summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    for t in tables:
        Path(f"{prefix}.{t.name}.csv").write_text(t.render())


def run(command: str, cfg: RunConfig, prefix: str) -> int:
    try:
        summary, tables = HANDLERS[command](cfg)
    except NumericalAbort as exc:
        log.error("numerical abort: %s", exc)
        _write(prefix, {"manifest": _manifest(cfg, command, "aborted", f"{type(exc).__name__}: {exc}"),
                        "context": _jsonable({k: v for k, v in exc.context.items() if np.ndim(v) == 0})}, [])
        return 1
    except (InputError, ConfigError) as exc:
        log.error("input error: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    summary = {"manifest": _manifest(cfg, command, "ok", None), "results": summary}
    _write(prefix, summary, tables)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="qcl", description="Quantum control landscape toolkit")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--out", help="output path prefix (overrides the config)")
    parser.add_argument("--seed", type=int, help="master seed (overrides the config)")
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    prefix = args.out or cfg.output
    log.info("running %s with seed %d -> %s", args.command, cfg.seed, prefix)
    return run(args.command, cfg, prefix)


if __name__ == "__main__":
    sys.exit(main())
