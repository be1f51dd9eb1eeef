"""Command-line entry point: constants, resonance, simulate, fit, locate.

Every run computes all of its outputs in memory first and only then writes
them, so a failing run leaves no partial files behind.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, inference, lattice, physics, svg
from .config import ClusterConfig, ConfigError, NSpin, load_config
from .sequence import (BUILTIN_NAMES, BuiltinError, RunOptions, SequenceError, Trace, TraceError,
                       builtin, delta_pol_trace, fringe_fit, parse_sequence, run_sweep,
                       trace_from_csv, trace_to_csv, trace_to_json)

EMIT_KINDS = ("csv", "json", "svg")
PSEUDO = {
    "DPOL": {"tau_stop": None, "tau_start": 50e-9, "count": 20, "alpha_count": 25,
             "t_init": None, "noise": 0.0},
}
GROUPS = {"IDSE": ("IDSE_D", "IDSE_U"), "DSE": ("DSE_D", "DSE_U"),
          "HH": ("HH_DPLUS", "HH_DMINUS", "HH_ALT")}
INT_PARAMS = {"count", "alpha_count"}


class CliError(Exception):
    pass


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False, indent=2) + "\n"


def _emit_set(text: str) -> set[str]:
    kinds = {k.strip() for k in text.split(",") if k.strip()}
    bad = kinds - set(EMIT_KINDS)
    if bad:
        raise CliError(f"--emit: unknown kind(s) {sorted(bad)}; choose from {','.join(EMIT_KINDS)}")
    return kinds


def _params(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise CliError(f"--param expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = int(v) if k.strip() in INT_PARAMS else float(v)
        except ValueError:
            raise CliError(f"--param {k}: not a number: {v!r}") from None
    return out


def _write(out_dir: Path | None, files: dict[str, str]) -> None:
    if out_dir is None:
        for text in files.values():
            sys.stdout.write(text)
        return
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in sorted(files):
        (out_dir / name).write_text(files[name], encoding="utf-8")


def _svg_stamp(text: str, cfg_hash: str, seed) -> str:
    head, rest = text.split("\n", 1)
    return f"{head}\n<!-- cfg={cfg_hash} seed={seed} -->\n{rest}"


# ---- constants ------------------------------------------------------------

def cmd_constants(args) -> dict[str, str]:
    cfg = _load(args.config)[0] if args.config else _default_cfg()
    rep = physics.static_phase_report(args.b_pol, args.tau)
    doc = {
        "cfg": cfg.fingerprint(),
        "seed": args.seed,
        "version": __version__,
        "constants": physics.CONST.as_dict(),
        "resonance_field_T": physics.resonance_field(cfg.nv),
        "static_phase": {
            "b_pol_T": rep.b_pol,
            "tau_s": rep.tau,
            "degrees": rep.degrees,
            "note": ("2muB is the factor used in the resonance condition; muB is the single "
                     "moment of the printed phase formula; the measured value is 46 deg"),
        },
    }
    return {"constants.json": _dumps(doc)}


def _default_cfg() -> ClusterConfig:
    # NV and N-spin parameters only; the one uncoupled spin is a placeholder
    return ClusterConfig(spins=(NSpin(delta=0.0),))


# ---- resonance ------------------------------------------------------------

def cmd_resonance(args) -> dict[str, str]:
    cfg = _load(args.config)[0] if args.config else _default_cfg()
    if args.b_count < 0:
        raise CliError("--b-count must be >= 0")
    grid = np.linspace(args.b_min, args.b_max, args.b_count) if args.b_count else np.array([])
    b_res = physics.resonance_field(cfg.nv)
    lo, hi = physics.overlap_window(cfg.nv)
    head = (f"# cfg={cfg.fingerprint()} seed=none\n"
            f"# resonance_field_T={b_res:.12g} overlap_lo_T={lo:.12g} overlap_hi_T={hi:.12g}\n")
    cols = ["b_T", "nv_m-1", "nv_m0", "nv_m+1", "n_m-1", "n_m0", "n_m+1"]
    lines = [",".join(cols)]
    for b in grid:
        nv = physics.nv_es_transitions(float(b), cfg.nv)
        n = {ln.m_I: ln.frequency for ln in physics.n_transitions(float(b), cfg.nspin)}
        vals = [b] + [nv[m] for m in (-1, 0, 1)] + [n[m] for m in (-1, 0, 1)]
        lines.append(",".join(format(float(v), ".12g") for v in vals))
    report = {"cfg": cfg.fingerprint(), "seed": args.seed, "resonance_field_T": b_res,
              "overlap_window_T": [lo, hi], "grid_points": int(len(grid))}
    files = {"resonance.json": _dumps(report)}
    if "csv" in args.emit_set or not args.out:
        files["resonance.csv"] = head + "\n".join(lines) + "\n"
    if not args.out:
        return {"resonance.json": files["resonance.json"]}
    return files


# ---- simulate -------------------------------------------------------------

def _load(path):
    if path is None:
        raise CliError("--config is required")
    return load_config(path)


def _run_options(args, run: dict) -> RunOptions:
    known = {"shots", "seed", "cycles", "normalize", "dephasing"}
    bad = set(run) - known
    if bad:
        raise CliError(f"unknown [run] keys {sorted(bad)}")
    shots = args.shots if args.shots is not None else int(run.get("shots", 0))
    seed = args.seed if args.seed is not None else int(run.get("seed", 0))
    cycles = args.cycles if args.cycles is not None else int(run.get("cycles", 1))
    normalize = args.normalize or bool(run.get("normalize", False))
    dephasing = bool(run.get("dephasing", True)) and not args.no_dephasing
    if shots < 0:
        raise CliError("--shots must be >= 0")
    try:
        return RunOptions(shots=shots or None, seed=seed, cycles=cycles, normalize=normalize,
                          dephasing=dephasing)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _sequences(args, table: dict):
    """[(label, PulseSequence | pseudo name, params)] for the requested run."""
    params = dict(table.get("params", {}))
    params.update(_params(args.param))
    if args.dsl:
        try:
            text = Path(args.dsl).read_text(encoding="utf-8")
        except OSError as exc:
            raise CliError(f"cannot read {args.dsl}: {exc}") from None
        return [(Path(args.dsl).stem, parse_sequence(text, name=Path(args.dsl).stem), {})]
    name = args.sequence or table.get("name")
    if not name:
        raise CliError("give --sequence NAME or --dsl FILE (or a [sequence] table in the config)")
    out = []
    for part in [p.strip() for p in name.split(",") if p.strip()]:
        for nm in GROUPS.get(part, (part,)):
            if nm in PSEUDO:
                out.append((nm, nm, params))
            elif nm in BUILTIN_NAMES:
                out.append((nm, builtin(nm, **params), params))
            else:
                raise CliError(f"unknown sequence {nm!r}; builtins: "
                               f"{', '.join(BUILTIN_NAMES + tuple(PSEUDO) + tuple(GROUPS))}")
    return out


def _dpol(cfg, opts: RunOptions, params: dict) -> Trace:
    p = dict(PSEUDO["DPOL"])
    bad = set(params) - set(p)
    if bad:
        raise CliError(f"DPOL does not take parameter(s): {', '.join(sorted(bad))}")
    p.update(params)
    if p["tau_stop"] is None:
        raise CliError("DPOL needs parameter tau_stop")
    taus = np.linspace(p["tau_start"], p["tau_stop"], int(p["count"]))
    return delta_pol_trace(cfg, taus, opts, count=int(p["alpha_count"]), t_init=p["t_init"],
                           noise=float(p["noise"]), seed=opts.seed)


_XLABEL = {"s": "time (s)", "Hz": "frequency (Hz)", "rad": "phase (rad)", "none": "point"}


def cmd_simulate(args) -> dict[str, str]:
    cfg, tables = _load(args.config)
    opts = _run_options(args, tables["run"])
    seqs = _sequences(args, tables["sequence"])
    traces = []
    for label, seq, params in seqs:
        if isinstance(seq, str):
            traces.append((label, _dpol(cfg, opts, params)))
        else:
            traces.append((label, run_sweep(seq, cfg, opts)))
    files = {}
    summary = {"cfg": cfg.fingerprint(), "seed": opts.seed, "shots": opts.shots or 0,
               "cycles": opts.cycles, "normalize": opts.normalize, "traces": [t.seq for _, t in traces]}
    by_name = dict(traces)
    if "IDSE_D" in by_name and "IDSE_U" in by_name:
        d, u = by_name["IDSE_D"], by_name["IDSE_U"]
        phi_d = fringe_fit(d.xs, d.values)
        phi_u = fringe_fit(u.xs, u.values)
        summary["idse"] = {"phi_d": phi_d[0], "phi_u": phi_u[0],
                           "delta_pol": math.remainder(phi_d[0] - phi_u[0], 2 * math.pi)}
    for label, tr in traces:
        if "csv" in args.emit_set:
            files[f"{label}.csv"] = trace_to_csv(tr)
        if "json" in args.emit_set:
            files[f"{label}.json"] = trace_to_json(tr)
    if "svg" in args.emit_set:
        ylabel = "delta_pol (rad)" if traces[0][1].quantity == "delta_pol" else "P0"
        plot = svg.trace_svg([(lb, list(t.x), list(t.p0)) for lb, t in traces],
                             title=", ".join(lb for lb, _ in traces),
                             xlabel=_XLABEL.get(traces[0][1].unit, "x"), ylabel=ylabel)
        files["simulate.svg"] = _svg_stamp(plot, cfg.fingerprint(), opts.seed)
    files["summary.json"] = _dumps(summary)
    if not args.out:
        return {"summary.json": files["summary.json"]}
    return files


# ---- fit ------------------------------------------------------------------

def _read_traces(paths) -> list[Trace]:
    out = []
    for p in paths:
        try:
            text = Path(p).read_text(encoding="utf-8")
        except OSError as exc:
            raise CliError(f"cannot read {p}: {exc}") from None
        try:
            out.append(trace_from_csv(text))
        except TraceError as exc:
            raise CliError(f"{p}: {exc}") from None
    return out


def _size_range(text: str) -> tuple[int, ...]:
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            sizes = tuple(range(int(a), int(b) + 1))
        else:
            sizes = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise CliError(f"--select-n expects A..B or a comma list, got {text!r}") from None
    if not sizes or min(sizes) < 1:
        raise CliError("--select-n needs positive cluster sizes")
    return sizes


def _spin_table(fit: inference.FitResult, n_sets: int, t_inits, cfg: ClusterConfig | None):
    n = len(fit.params) // (1 + n_sets)
    spins = []
    for i in range(n):
        entry = {"delta": fit.params[i], "sigma_delta": fit.sigma[i],
                 "p": [fit.params[n * (1 + s) + i] for s in range(n_sets)],
                 "sigma_p": [fit.sigma[n * (1 + s) + i] for s in range(n_sets)]}
        if t_inits:
            base = cfg or _default_cfg()
            gamma, t1 = base.gamma_opt, base.t1_n
            pts = [(t, p, max(s, 1e-6)) for t, p, s in zip(t_inits, entry["p"], entry["sigma_p"])]
            try:
                est = inference.extract_omega(pts, gamma, t1)
                entry.update({"omega": est.value, "sigma_omega": est.sigma, "omega_flag": est.flag})
            except inference.FitError as exc:
                entry.update({"omega": None, "sigma_omega": None, "omega_flag": str(exc)})
        spins.append(entry)
    return spins


def cmd_fit(args) -> dict[str, str]:
    traces = _read_traces(args.data)
    cfg = _load(args.config)[0] if args.config else None
    seed = args.seed if args.seed is not None else 0
    fixed = _params(args.fixed)
    doc: dict = {"seed": seed, "data": [{"seq": t.seq, "cfg": t.cfg_hash} for t in traces]}
    if args.model == "idse_phase":
        t_inits = [float(v) for v in args.t_init.split(",")] if args.t_init else []
        if t_inits and len(t_inits) != len(traces):
            raise CliError("--t-init needs one optical initialization time per data file")
        if args.select_n:
            choice = inference.select_cluster_size(traces, _size_range(args.select_n), seed=seed,
                                                   corrected=not args.plain_aic)
            doc["selection"] = choice.as_dict()
            best = choice.best
            doc["selection"]["selected_n"] = len(best.params) // (1 + len(traces))
        else:
            best = inference.fit_idse(traces, args.n, seed=seed)
        doc["fit"] = best.as_dict()
        doc["spins"] = _spin_table(best, len(traces), t_inits, cfg)
    elif args.model == "hh":
        fits = [inference.fit_hh(t, fixed=fixed, seed=seed) for t in traces]
        doc["fits"] = [f.as_dict() for f in fits]
        if args.hh_polarization:
            if len(fits) != 3:
                raise CliError("--hh-polarization needs three traces: D+, D-, alternating")
            a = [f.value("a") for f in fits]
            s = [f.error("a") for f in fits]
            doc["polarization"] = inference.hh_polarization(*a, *s).as_dict()
    elif args.model == "dse":
        doc["fits"] = [inference.fit_dse(t, seed=seed).as_dict() for t in traces]
    text = _dumps(doc)
    return {"fit.json": text}


# ---- locate ---------------------------------------------------------------

def _spins_from_json(path) -> list[dict]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read fit JSON {path}: {exc}") from None
    spins = doc.get("spins") if isinstance(doc, dict) else None
    if not spins:
        raise CliError(f"{path}: no 'spins' list with delta/sigma_delta entries")
    for i, s in enumerate(spins):
        if "delta" not in s or "sigma_delta" not in s:
            raise CliError(f"{path}: spin {i + 1} lacks delta or sigma_delta")
    return spins


def _sigma(v):
    if v is None:
        return None
    if isinstance(v, str) and v.lower() in ("inf", "infinity"):
        return math.inf
    return float(v)


def cmd_locate(args) -> dict[str, str]:
    spins = _spins_from_json(args.fit_json)
    sites = lattice.generate_sites(args.radius)
    files = {}
    maps = []
    summary = {"radius_m": args.radius, "n_sites": len(sites), "spins": []}
    stem = Path(args.fit_json).name
    for i, s in enumerate(spins, start=1):
        omega = s.get("omega")
        so = _sigma(s.get("sigma_omega"))
        if omega is None or so is None:
            omega = so = None
        pm = lattice.localize(float(s["delta"]), _sigma(s["sigma_delta"]), omega, so, sites)
        if pm.warning:
            print(f"warning: spin {i}: {pm.warning}", file=sys.stderr)
        circles = lattice.project_rperp(pm)
        maps.append((f"N{i}", circles))
        summary["spins"].append({"spin": i, "warning": pm.warning,
                                 "n68": len(pm.sets[0.68]), "n95": len(pm.sets[0.95])})
        if "json" in args.emit_set:
            files[f"locate_spin{i}.json"] = lattice.posterior_to_json(pm, spin=i, source=stem)
        if "csv" in args.emit_set:
            files[f"locate_spin{i}.csv"] = lattice.circles_to_csv(
                circles, header=f"# source={stem} spin={i} seed=none\n")
    if "svg" in args.emit_set:
        files["locate.svg"] = _svg_stamp(svg.site_map_svg(maps, title="N spin locations"),
                                         stem, "none")
    files["locate_summary.json"] = _dumps(summary)
    if not args.out:
        return {"locate_summary.json": files["locate_summary.json"]}
    return files


# ---- parser ---------------------------------------------------------------

def _common(p: argparse.ArgumentParser, emit_default="csv,json"):
    p.add_argument("--config", help="cluster config file (TOML)")
    p.add_argument("--out", help="output directory (default: summary to stdout)")
    p.add_argument("--seed", type=int, help="random seed recorded in every output")
    p.add_argument("--shots", type=int, help="shots per point; 0 = noise-free")
    p.add_argument("--emit", default=emit_default, help="comma list of csv,json,svg")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spincluster",
                                 description="NV / dark-spin cluster simulation and inference")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("constants", help="physical constants and the static-phase report")
    _common(p)
    p.add_argument("--b-pol", type=float, default=5e-6, help="static field (T)")
    p.add_argument("--tau", type=float, default=400e-9, help="free precession time (s)")
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("resonance", help="transition lines against field and the resonance field")
    _common(p)
    p.add_argument("--b-min", type=float, default=0.0)
    p.add_argument("--b-max", type=float, default=0.04)
    p.add_argument("--b-count", type=int, default=401)
    p.set_defaults(func=cmd_resonance)

    p = sub.add_parser("simulate", help="run a pulse sequence on the cluster")
    _common(p)
    p.add_argument("--sequence", help="builtin name(s), comma separated; IDSE, DSE and HH "
                                      "expand to their pairs / triple; DPOL sweeps tau")
    p.add_argument("--dsl", help="sequence file in the pulse DSL")
    p.add_argument("--param", action="append", help="sequence parameter key=value (SI units)")
    p.add_argument("--cycles", type=int, help="repetitions with the cluster state carried over")
    p.add_argument("--normalize", action="store_true",
                   help="divide by the same sequence without N steps")
    p.add_argument("--no-dephasing", action="store_true", help="drop the echo envelope")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit traces (CSV) and report JSON")
    _common(p, emit_default="json")
    p.add_argument("data", nargs="+", help="trace CSV files")
    p.add_argument("--model", choices=("idse_phase", "hh", "dse"), required=True)
    p.add_argument("--select-n", help="cluster sizes to compare, e.g. 1..4")
    p.add_argument("--n", type=int, default=1, help="cluster size without selection")
    p.add_argument("--plain-aic", action="store_true", help="use AIC instead of AICc")
    p.add_argument("--t-init", help="optical initialization time per file (s), enables omega")
    p.add_argument("--fixed", action="append", help="HH parameter held fixed, key=value")
    p.add_argument("--hh-polarization", action="store_true",
                   help="estimate the locked-frame polarization from D+, D-, A traces")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("locate", help="lattice-site posterior maps from a fit JSON")
    _common(p, emit_default="csv,json,svg")
    p.add_argument("fit_json", help="fit output (or any JSON with a 'spins' list)")
    p.add_argument("--radius", type=float, default=5e-9, help="search radius (m)")
    p.set_defaults(func=cmd_locate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        args.emit_set = _emit_set(args.emit)
        files = args.func(args)
        _write(Path(args.out) if args.out else None, files)
    except (CliError, ConfigError, SequenceError, BuiltinError, TraceError, physics.DomainError,
            inference.FitError, lattice.LocalizationError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
