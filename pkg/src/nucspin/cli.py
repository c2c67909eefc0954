"""
Command-line front end.

Structured results go to stdout as JSON (12 significant digits, sorted keys),
traces to CSV files with a ``# unit=`` comment line. Input problems exit with
status 2 and a message naming the offending file (and line where known) on
stderr. Randomness is controlled by ``--seed`` (default 0).

System configuration JSON::

    {"field_gauss": 81.0,
     "subspace": [0.5, 1.5],
     "nuclei": [{"species": "29Si", "a_par_khz": -23.5, "a_perp_khz": 12.0},
                {"gamma_khz_per_g": -0.8465, "a_par_khz": 0.2, "a_perp_khz": 8.5}]}
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checks
from .fitting import (
    DataSet,
    analyze_yield,
    fit_cpmg_refine,
    fit_double_lorentzian,
    fit_envelope,
    fit_g2,
    fit_hahn_hyperfine,
    register_grid,
)
from .gates import GateKind, GateTarget, gate_record
from .laserlock import EmitterEnvironment, EnvironmentConfig, LineCriteria, run_closed_loop, run_config_json
from .records import TraceFormatError, dumps, read_columns
from .resonance import NoCriticalFieldError, ResonanceQuery, SolverError, b_crit, error_sweep, resonance
from .sequences import (
    EnvelopeParams,
    SequenceSpec,
    SignalTrace,
    SpinSystem,
    envelope_factor,
    pulse_sweep,
    tau_sweep,
)
from .spinmath import (
    DegeneratePrecessionError,
    ElectronSubspace,
    FieldConfig,
    HyperfineCoupling,
    NuclearSpecies,
    NuclearSpin,
    get_species,
)


class UsageError(Exception):
    """Bad input; reported on stderr with exit status 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# input helpers
# ---------------------------------------------------------------------------


def _load_json(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"{path}: cannot read file ({exc.strerror})") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}: malformed JSON ({exc.msg})") from None


def system_from_dict(cfg: dict, source: str = "<config>") -> SpinSystem:
    """Validate a SystemConfig mapping into a :class:`SpinSystem`."""
    try:
        field = FieldConfig(float(cfg["field_gauss"]))
        s0, s1 = cfg.get("subspace", [0.5, 1.5])
        subspace = ElectronSubspace(float(s0), float(s1))
        nuclei = []
        for i, n in enumerate(cfg.get("nuclei", [])):
            if "species" in n:
                species = get_species(n["species"])
            elif "gamma_khz_per_g" in n:
                species = NuclearSpecies(n.get("name", f"nucleus{i}"), float(n["gamma_khz_per_g"]))
            else:
                raise ValueError(f"nucleus {i} needs 'species' or 'gamma_khz_per_g'")
            nuclei.append(NuclearSpin(species, HyperfineCoupling(float(n["a_par_khz"]), float(n["a_perp_khz"]))))
    except KeyError as exc:
        raise UsageError(f"{source}: invalid system configuration (missing {exc})") from None
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{source}: invalid system configuration ({exc})") from None
    return SpinSystem(field, subspace, tuple(nuclei))


def load_system(path: str, field_override: float | None = None) -> SpinSystem:
    cfg = _load_json(path)
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: system configuration must be a JSON object")
    if field_override is not None:
        cfg = dict(cfg, field_gauss=field_override)
    return system_from_dict(cfg, path)


def _pick_spin(system: SpinSystem, index: int, source: str) -> NuclearSpin:
    if not 0 <= index < len(system.nuclei):
        raise UsageError(f"{source}: no nucleus with index {index} ({len(system.nuclei)} configured)")
    return system.nuclei[index]


def _load_data(path: str) -> DataSet:
    return DataSet.from_csv(path)


def _emit(payload) -> None:
    sys.stdout.write(dumps(payload) + "\n")


def _tau_grid(args) -> np.ndarray:
    if not 0 <= args.tau_min < args.tau_max:
        raise UsageError("need 0 <= --tau-min < --tau-max")
    if args.points < 2:
        raise UsageError("--points must be at least 2")
    return np.linspace(args.tau_min, args.tau_max, args.points)


def _write_trace(trace, out: str | None) -> dict:
    if out:
        trace.to_csv(out)
    return {"points": len(trace), "out": out}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    system = load_system(args.system, args.field)
    if args.what == "pulse-sweep":
        if args.n_max < 0 or args.n_max % 2:
            raise UsageError("--n-max must be even and non-negative")
        trace = pulse_sweep(system, args.tau, list(range(0, args.n_max + 1, 2)))
    else:
        n = 1 if args.what == "hahn" else args.n
        try:
            trace = tau_sweep(system, n, _tau_grid(args))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        if args.t2 is not None:
            # the envelope acts on the total evolution time 2 N tau
            env = EnvelopeParams(t2=args.t2, n_stretch=args.n_stretch)
            decay = envelope_factor(2 * n * trace.abscissa, env.t2, env.n_stretch)
            trace = SignalTrace(trace.abscissa, trace.values * decay, trace.unit, trace.meta)
    payload = {"kind": args.what, **_write_trace(trace, args.out),
               "min_value": float(np.min(trace.values)),
               "argmin": float(trace.abscissa[np.argmin(trace.values)])}
    if args.out is None:
        payload["abscissa"] = trace.abscissa
        payload["values"] = trace.values
    _emit(payload)
    return 0


def cmd_resonance(args) -> int:
    system = load_system(args.system, args.field)
    spin = _pick_spin(system, args.spin, args.system)
    query = ResonanceQuery(spin, system.subspace, system.field, args.k)
    _emit(resonance(query).to_record(query))
    return 0


def cmd_bcrit(args) -> int:
    system = load_system(args.system)
    spin = _pick_spin(system, args.spin, args.system)
    b = b_crit(spin, system.subspace, args.epsilon_n)
    _emit({"b_crit_gauss": b, "epsilon_n": args.epsilon_n, "a_par_khz": spin.coupling.a_par,
           "a_perp_khz": spin.coupling.a_perp})
    return 0


def cmd_error_sweep(args) -> int:
    system = load_system(args.system)
    spin = _pick_spin(system, args.spin, args.system)
    lo = args.b_min if args.b_min is not None else b_crit(spin, system.subspace)
    hi = args.b_max if args.b_max is not None else 5 * lo
    if not 0 < lo < hi:
        raise UsageError(f"need 0 < --b-min < --b-max, got {lo} and {hi}")
    trace = error_sweep(spin, system.subspace, np.linspace(lo, hi, args.points), args.k)
    _emit({**_write_trace(trace, args.out), "b_min_gauss": lo, "b_max_gauss": hi,
           "max_rel_error": float(np.nanmax(trace.values)), "failed": trace.meta["failed"]})
    return 0


def cmd_gates(args) -> int:
    system = load_system(args.system, args.field)
    _pick_spin(system, args.spin, args.system)
    spec = SequenceSpec.cpmg(args.tau, args.n)
    _emit(gate_record(system, args.spin, spec, GateTarget(GateKind(args.target), args.spin)))
    return 0


def cmd_fit(args) -> int:
    data = _load_data(args.data)
    if args.what == "hyperfine":
        system = load_system(args.system, args.field)
        fit = fit_hahn_hyperfine(data, system.field, system.subspace, tuple(args.species))
        rec = fit.result.to_record()
        rec["species"] = fit.species
        rec["ambiguous"] = fit.ambiguous
        rec["per_species_rss"] = {k: v.rss for k, v in fit.per_species.items()}
    elif args.what == "cpmg":
        system = load_system(args.system, args.field)
        res = fit_cpmg_refine(data, system.field, system.subspace, system.nuclei, args.n_spins, args.n)
        rec = res.to_record()
    elif args.what == "envelope":
        rec = fit_envelope(data).to_record()
    elif args.what == "ple":
        rec = fit_double_lorentzian(data).to_record()
    else:
        rec = fit_g2(data).to_record()
    _emit(rec)
    return 0


def cmd_analyze(args) -> int:
    if args.what == "yield":
        try:
            hist = [int(v) for v in args.histogram.split(",")]
        except ValueError:
            raise UsageError(f"--histogram must be comma-separated integers, got {args.histogram!r}") from None
        res = analyze_yield(hist, args.dose, args.hole_diameter)
        _emit({"mean": res.mean, "expected_ions": res.expected_ions, "yield": res.yield_fraction,
               "n_spots": res.n_spots})
        return 0
    cols, unit, _ = read_columns(args.data, ("x", "y"))
    reg = register_grid(np.column_stack(cols), args.pitch)
    m = reg.model
    _emit({"pitch_nm": m.pitch, "rotation_rad": m.rotation, "rotation_deg": float(np.rad2deg(m.rotation)),
           "scale_x": m.scale_x, "scale_y": m.scale_y, "offset_nm": list(m.offset), "variance_nm": reg.variance,
           "residual_radii_nm": reg.residual_radii, "unit": unit})
    return 0


def cmd_lock(args) -> int:
    env_cfg = EnvironmentConfig()
    criteria = LineCriteria()
    if args.config:
        cfg = _load_json(args.config)
        try:
            env_cfg = EnvironmentConfig.from_dict(cfg.get("environment", {}))
            criteria = LineCriteria.from_dict(cfg.get("criteria", {}))
        except (TypeError, ValueError) as exc:
            raise UsageError(f"{args.config}: invalid lock configuration ({exc})") from None
    env = EmitterEnvironment(env_cfg, args.seed)
    run = run_closed_loop(env, args.duration, args.period, criteria)
    if args.out:
        run.to_csv(args.out)
    if args.config_out:
        Path(args.config_out).write_text(run_config_json(env_cfg, criteria, args.seed, args.duration, args.period))
    _emit({"seed": args.seed, "probes": len(run.probe_errors_mhz),
           "fraction_within_linewidth": run.fraction_within_linewidth,
           "max_error_mhz": max(run.probe_errors_mhz, default=0.0), "actions": len(run.rows), "out": args.out})
    return 0


def cmd_reproduce(args) -> int:
    if args.name not in checks.CHECKS:
        raise UsageError(f"unknown check {args.name!r}; known: {', '.join(checks.CHECKS)}")
    outcome = checks.run_check(args.name)
    sys.stderr.write(outcome.report() + "\n")
    _emit({"name": outcome.name, "passed": outcome.passed,
           "measurements": [vars(m) for m in outcome.measurements], "info": outcome.info})
    return 0 if outcome.passed else 1


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nucspin", description="Electron-nuclear spin decoupling and optical-line tools.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def system_args(sp, field=True):
        sp.add_argument("--system", required=True, help="SystemConfig JSON file")
        if field:
            sp.add_argument("--field", type=float, default=None, help="override field_gauss (G)")

    sim = sub.add_parser("simulate", help="coherence traces")
    sim_sub = sim.add_subparsers(dest="what", required=True, parser_class=_Parser)
    for name in ("hahn", "cpmg"):
        sp = sim_sub.add_parser(name)
        system_args(sp)
        sp.add_argument("--tau-min", type=float, default=0.0, help="us")
        sp.add_argument("--tau-max", type=float, default=20.0, help="us")
        sp.add_argument("--points", type=int, default=1000)
        if name == "cpmg":
            sp.add_argument("--n", type=int, default=8, help="number of pi pulses (even)")
        sp.add_argument("--t2", type=float, default=None, help="optional stretched envelope T2 (us, total time)")
        sp.add_argument("--n-stretch", type=float, default=1.0)
        sp.add_argument("--out", default=None)
        sp.set_defaults(func=cmd_simulate)
    sp = sim_sub.add_parser("pulse-sweep")
    system_args(sp)
    sp.add_argument("--tau", type=float, required=True, help="us")
    sp.add_argument("--n-max", type=int, default=32)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("resonance", help="CPMG resonance times")
    system_args(sp)
    sp.add_argument("--spin", type=int, default=0)
    sp.add_argument("--k", type=int, default=1)
    sp.set_defaults(func=cmd_resonance)

    sp = sub.add_parser("bcrit", help="critical field of the first-order approximation")
    system_args(sp, field=False)
    sp.add_argument("--spin", type=int, default=0)
    sp.add_argument("--epsilon-n", type=float, default=0.1 * np.pi)
    sp.set_defaults(func=cmd_bcrit)

    sp = sub.add_parser("error-sweep", help="relative error of the first-order resonance versus field")
    system_args(sp, field=False)
    sp.add_argument("--spin", type=int, default=0)
    sp.add_argument("--k", type=int, default=1)
    sp.add_argument("--b-min", type=float, default=None, help="G (default: critical field)")
    sp.add_argument("--b-max", type=float, default=None, help="G (default: 5x critical field)")
    sp.add_argument("--points", type=int, default=100)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_error_sweep)

    sp = sub.add_parser("gates", help="conditional rotations and gate fidelity")
    system_args(sp)
    sp.add_argument("--spin", type=int, default=0)
    sp.add_argument("--tau", type=float, required=True, help="us")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--target", choices=[k.value for k in GateKind], default="bell")
    sp.set_defaults(func=cmd_gates)

    fit = sub.add_parser("fit", help="model fits to CSV data")
    fit_sub = fit.add_subparsers(dest="what", required=True, parser_class=_Parser)
    sp = fit_sub.add_parser("hyperfine")
    sp.add_argument("--data", required=True)
    system_args(sp)
    sp.add_argument("--species", nargs="+", default=["29Si", "13C"])
    sp.set_defaults(func=cmd_fit)
    sp = fit_sub.add_parser("cpmg")
    sp.add_argument("--data", required=True)
    system_args(sp)
    sp.add_argument("--n", type=int, default=8)
    sp.add_argument("--n-spins", type=int, default=None)
    sp.set_defaults(func=cmd_fit)
    for name in ("envelope", "ple", "g2"):
        sp = fit_sub.add_parser(name)
        sp.add_argument("--data", required=True)
        sp.set_defaults(func=cmd_fit)

    an = sub.add_parser("analyze", help="implantation statistics")
    an_sub = an.add_subparsers(dest="what", required=True, parser_class=_Parser)
    sp = an_sub.add_parser("yield")
    sp.add_argument("--histogram", required=True, help="spots with 0,1,2,... defects, comma separated")
    sp.add_argument("--dose", type=float, required=True, help="ions / cm^2")
    sp.add_argument("--hole-diameter", type=float, required=True, help="nm")
    sp.set_defaults(func=cmd_analyze)
    sp = an_sub.add_parser("grid")
    sp.add_argument("--data", required=True, help="CSV with x,y positions (nm)")
    sp.add_argument("--pitch", type=float, required=True, help="nm")
    sp.set_defaults(func=cmd_analyze)

    lock = sub.add_parser("lock", help="laser refocusing protocol")
    lock_sub = lock.add_subparsers(dest="what", required=True, parser_class=_Parser)
    sp = lock_sub.add_parser("simulate")
    sp.add_argument("--config", default=None, help="JSON with 'environment' and 'criteria' objects")
    sp.add_argument("--duration", type=float, default=3600.0, help="s")
    sp.add_argument("--period", type=float, default=60.0, help="probe cadence (s)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=None, help="run-log CSV")
    sp.add_argument("--config-out", default=None, help="write the effective configuration JSON")
    sp.set_defaults(func=cmd_lock)

    sp = sub.add_parser("reproduce", help="run a named reference check")
    sp.add_argument("name")
    sp.set_defaults(func=cmd_reproduce)
    return p


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, TraceFormatError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except (NoCriticalFieldError, SolverError, DegeneratePrecessionError, KeyError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
