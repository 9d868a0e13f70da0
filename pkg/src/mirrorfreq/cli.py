"""Command-line front end.

Every output file is written next to a ``<name>.manifest.json`` run record.
JSON outputs hold no wall-clock data, so reruns are byte-identical; the
timestamp lives in the manifest only.  Exit status is 0 when no point was
flagged and no check failed, 1 otherwise, 2 for usage or config errors.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import __version__
from .checks import FAULTS, oracle_errors, run_suite
from .impedance import (Injection, ResonanceError, mfd_classify, off_diagonal_ratio,
                        original_from_modified)
from .simcore import PRESETS, CaseConfig, ConfigError, build_case, preset, run_step_schedule
from .stability import (MinorLoopPoint, build_loci, count_encirclements, loci_deviation,
                        minor_loop_from_impedances)
from .sweep import SweepResult, default_plan, direct_original, run_sweep

log = logging.getLogger("mirrorfreq")

EXIT_OK, EXIT_FLAGGED, EXIT_USAGE = 0, 1, 2
DOMAINS = ("dq", "pn", "original")


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# output plumbing


@dataclass
class RunManifest:
    command: str
    config_path: Optional[str]
    output_dir: str
    timestamp: str
    tool_version: str
    config: Optional[dict]
    output_file: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _clean(obj):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats as null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": _clean(obj.real), "im": _clean(obj.imag)}
    return obj


def fmt(v) -> str:
    return f"{float(v):.12g}"


class Outputs:
    """Writes result files and their manifests into one directory."""

    def __init__(self, out_dir: str, command: str, config: Optional[CaseConfig], config_path: Optional[str]):
        self.dir = os.path.abspath(out_dir)
        os.makedirs(self.dir, exist_ok=True)
        self.command = command
        self.config = config
        self.config_path = config_path
        self.timestamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        self.written = []

    def path(self, name: str) -> str:
        return os.path.join(self.dir, name)

    def _manifest(self, name: str):
        m = RunManifest(self.command, self.config_path, self.dir, self.timestamp, __version__,
                        None if self.config is None else self.config.to_dict(), name)
        with open(self.path(name + ".manifest.json"), "w") as fh:
            json.dump(_clean(m.to_dict()), fh, indent=1, sort_keys=True)
            fh.write("\n")
        self.written.append(name)

    def json(self, name: str, doc: dict, kind: str):
        body = {"schema": f"mirrorfreq.{kind}", "schema_version": 1}
        body.update(doc)
        with open(self.path(name), "w") as fh:
            json.dump(_clean(body), fh, indent=1, sort_keys=True)
            fh.write("\n")
        self._manifest(name)

    def csv(self, name: str, header, rows):
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow(row)
        self._manifest(name)

    def sweep(self, name: str, result: SweepResult):
        result.to_json(self.path(name + ".json"))
        with open(self.path(name + ".json"), "a") as fh:
            fh.write("\n")
        self._manifest(name + ".json")
        result.to_csv(self.path(name + ".csv"))
        self._manifest(name + ".csv")


# --------------------------------------------------------------------------
# argument helpers


def load_case(spec: str):
    """Preset name or path to a JSON config; returns (config, config_path)."""
    names = {p.upper(): p for p in PRESETS}
    if spec.upper() in names:
        return preset(spec), None
    if not os.path.exists(spec):
        raise UsageError(f"--case {spec!r}: not a preset ({', '.join(PRESETS)}) and no such file")
    try:
        with open(spec) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{spec}: invalid JSON ({exc})") from exc
    if isinstance(doc, dict) and "config" in doc and "schema" in doc:
        doc = doc["config"]
    return CaseConfig.from_dict(doc), os.path.abspath(spec)


def parse_grid(text: Optional[str]):
    if text is None:
        return None
    try:
        vals = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"--grid: expected comma-separated frequencies ({exc})") from exc
    if not vals:
        raise UsageError("--grid: empty list")
    return vals


def _plan(args, cfg, injection=None):
    inj = injection or args.injection
    plan = default_plan(cfg, inj, fmin=args.fmin, fmax=args.fmax, grid=parse_grid(args.grid))
    if not plan.f_dq_list:
        raise UsageError("no frequency points left after --fmin/--fmax/--grid")
    return plan


def _run(args, cfg, injection=None) -> SweepResult:
    plan = _plan(args, cfg, injection)
    for f, why in plan.excluded:
        log.warning("f_dq=%g Hz excluded: %s", f, why)
    log.info("sweeping %s (%s injection): %d points", cfg.name, plan.injection_kind.value, len(plan.f_dq_list))
    return run_sweep(plan, threads=args.threads)


def _report_flags(result: SweepResult, label: str = "") -> int:
    bad = result.flagged()
    for p in bad:
        why = p.error if p.error else ", ".join(p.flags)
        print(f"  flagged{label} f_dq={p.f_dq:g} Hz: {why}")
    return len(bad)


def _command_line(argv) -> str:
    return " ".join(["mirrorfreq"] + list(argv))


# --------------------------------------------------------------------------
# commands


def cmd_sweep(args, argv) -> int:
    cfg, cfg_path = load_case(args.case)
    res = _run(args, cfg)
    out = Outputs(args.out, _command_line(argv), cfg, cfg_path)
    stem = f"sweep_{cfg.name}_{res.metadata['injection']}"
    out.sweep(stem, res)
    print(f"{cfg.name}: {len(res.points)} points, {len(res.ok_points())} ok -> {out.path(stem)}.json/.csv")
    if cfg.name == "oracle-rl":
        mag, deg = oracle_errors(res)
        print(f"  closed-form check: max |Z| error {mag:.3e}, max phase error {deg:.3e} deg")
    n_bad = _report_flags(res)
    return EXIT_FLAGGED if n_bad else EXIT_OK


def _sweeps_from_args(args, argv):
    """Source and load sweep: from files when given, else a fresh sweep of --case."""
    if args.sweep:
        src = SweepResult.from_json(args.sweep)
        load = SweepResult.from_json(args.load_sweep) if args.load_sweep else src
        cfg = CaseConfig.from_dict(src.metadata["config"])
        return src, load, cfg, os.path.abspath(args.sweep)
    cfg, cfg_path = load_case(args.case)
    res = _run(args, cfg)
    return res, res, cfg, cfg_path


def original_loop_point(ps, pl, injection) -> MinorLoopPoint:
    """Minor loop built from the decoupled original sequence impedances."""
    zs, zl = ps.zpn("source"), pl.zpn("load")
    vals = {}
    for seq in "pn":
        lo, so = original_from_modified(zs, zl, injection, seq)
        vals[seq] = so.value / lo.value
    L = np.diag([vals["p"], vals["n"]])
    return MinorLoopPoint(ps.f_dq, L, complex(L[0, 0]), complex(L[1, 1]))


def gnc_loci(src: SweepResult, load: SweepResult, domain: str, injection=None):
    pts = []
    for ps, pl in zip(src.points, load.points):
        if not (ps.ok and pl.ok):
            continue
        if domain == "dq":
            pts.append(minor_loop_from_impedances(ps.zdq("source"), pl.zdq("load")))
        elif domain == "pn":
            pts.append(minor_loop_from_impedances(ps.zpn("source"), pl.zpn("load")))
        elif domain == "original":
            pts.append(original_loop_point(ps, pl, injection))
        else:
            raise UsageError(f"unknown domain {domain!r}")
    return build_loci(pts)


def cmd_gnc(args, argv) -> int:
    src, load, cfg, cfg_path = _sweeps_from_args(args, argv)
    if [p.f_dq for p in src.points] != [p.f_dq for p in load.points]:
        raise UsageError("source and load sweeps use different frequency grids")
    injection = Injection(src.metadata["injection"])
    domains = DOMAINS if args.domain == "all" else (args.domain,)
    out = Outputs(args.out, _command_line(argv), cfg, cfg_path)
    verdicts, loci = {}, {}
    status = EXIT_OK
    for d in domains:
        try:
            lc = gnc_loci(src, load, d, injection)
        except ResonanceError as exc:
            print(f"  {d}: loci undefined ({exc})")
            status = EXIT_FLAGGED
            continue
        v = count_encirclements(lc)
        loci[d], verdicts[d] = lc, v
        out.csv(f"gnc_{cfg.name}_{d}_loci.csv",
                ["f_dq_Hz", "lambda1_re", "lambda1_im", "lambda2_re", "lambda2_im"],
                ([fmt(f), fmt(a.real), fmt(a.imag), fmt(b.real), fmt(b.imag)]
                 for f, a, b in zip(lc.frequencies, lc.locus1, lc.locus2)))
        state = "stable" if v.stable else f"UNSTABLE ({v.encirclements} encirclements)"
        if v.marginal:
            state = "MARGINAL"
        print(f"  {d:8s}: {state}, margin {v.margin:.4g} at {v.critical_frequency:g} Hz, "
              f"max arg step {v.max_arg_step:.3f} rad")
        if not v.grid_ok or v.marginal:
            for note in v.notes:
                print(f"    grid-insufficient: {note}")
            status = EXIT_FLAGGED
    doc = {"case": cfg.name, "injection": injection.value,
           "verdicts": {d: v.to_dict() for d, v in verdicts.items()}}
    if "dq" in verdicts and "pn" in verdicts:
        a, b = verdicts["dq"].margin, verdicts["pn"].margin
        doc["dq_vs_pn_margin_rel_diff"] = abs(a - b) / max(abs(a), 1e-300)
        doc["dq_vs_pn_loci_deviation_max"] = float(np.max(loci_deviation(loci["dq"], loci["pn"])))
    if "pn" in loci and "original" in loci:
        doc["pn_vs_original_loci_deviation_max"] = float(np.max(loci_deviation(loci["pn"], loci["original"])))
    out.json(f"gnc_{cfg.name}.json", doc, "gnc")
    n_bad = _report_flags(src) + (0 if load is src else _report_flags(load, " (load)"))
    return EXIT_FLAGGED if n_bad else status


def _rel(a, b) -> float:
    return abs(a - b) / max(abs(b), 1e-300)


def original_table(result: SweepResult, injection):
    """Per point: direct-simulation and formula original impedances."""
    rows = []
    for p in result.points:
        row = {"f_dq": p.f_dq, "f_p": p.f_p, "f_n": p.f_n, "ok": p.ok, "degenerate": False}
        if p.ok:
            row["direct"] = direct_original(p, injection)
            row["formula"] = {}
            try:
                for seq in "pn":
                    lo, so = original_from_modified(p.zpn("source"), p.zpn("load"), injection, seq)
                    row["formula"][f"load_{seq}"] = lo.value
                    row["formula"][f"source_{seq}"] = so.value
            except ResonanceError:
                row["degenerate"] = True
            row["zpp_load"], row["znn_load"] = p.zpn_load[0, 0], p.zpn_load[1, 1]
            row["zpp_source"], row["znn_source"] = p.zpn_source[0, 0], p.zpn_source[1, 1]
        rows.append(row)
    return rows


KEYS = ("load_p", "load_n", "source_p", "source_n")


def cmd_compare_original(args, argv) -> int:
    cfg, cfg_path = load_case(args.case)
    kinds = ("shunt", "series") if args.injection == "both" else (args.injection,)
    tables, results = {}, {}
    for k in kinds:
        results[k] = _run(args, cfg, injection=k)
        tables[k] = original_table(results[k], Injection(k))
    out = Outputs(args.out, _command_line(argv), cfg, cfg_path)
    header = ["f_dq_Hz", "f_p_Hz", "f_n_Hz"]
    for k in kinds:
        for key in KEYS:
            for how in ("direct", "formula"):
                header += [f"Z_{key}_{k}_{how}_mag_pu", f"Z_{key}_{k}_{how}_deg"]
        header.append(f"degenerate_{k}")
    for key in ("zpp_load", "znn_load", "zpp_source", "znn_source"):
        header += [f"{key}_mag_pu", f"{key}_deg"]

    def cells(v):
        return ["", ""] if v is None else [fmt(abs(v)), fmt(math.degrees(np.angle(v)))]

    rows = []
    first = tables[kinds[0]]
    for i, base in enumerate(first):
        row = [fmt(base["f_dq"]), fmt(base["f_p"]), fmt(base["f_n"])]
        for k in kinds:
            r = tables[k][i]
            for key in KEYS:
                row += cells(r.get("direct", {}).get(key))
                row += cells(r.get("formula", {}).get(key))
            row.append(int(r["degenerate"]))
        for key in ("zpp_load", "znn_load", "zpp_source", "znn_source"):
            row += cells(base.get(key))
        rows.append(row)
    out.csv(f"original_{cfg.name}.csv", header, rows)

    summary = {"case": cfg.name, "injections": list(kinds)}
    for k in kinds:
        errs = [_rel(r["direct"][key], r["formula"][key]) for r in tables[k]
                if r["ok"] and not r["degenerate"] for key in KEYS]
        summary[f"{k}_direct_vs_formula_max"] = max(errs) if errs else None
        print(f"  {k}: direct vs formula max relative difference {summary[f'{k}_direct_vs_formula_max']}")
    if len(kinds) == 2:
        d_all, d_low = [], []
        for a, b in zip(tables["shunt"], tables["series"]):
            if not (a["ok"] and b["ok"]) or a["degenerate"] or b["degenerate"]:
                continue
            d = max(_rel(b["formula"][key], a["formula"][key]) for key in KEYS)
            d_all.append(d)
            if a["f_dq"] < 100:
                d_low.append(d)
        summary["shunt_vs_series_max"] = max(d_all) if d_all else None
        summary["shunt_vs_series_max_below_100Hz"] = max(d_low) if d_low else None
        print(f"  shunt vs series: max {summary['shunt_vs_series_max']}, "
              f"below 100 Hz {summary['shunt_vs_series_max_below_100Hz']}")
    out.json(f"original_{cfg.name}.json", summary, "original")
    n_bad = sum(_report_flags(results[k], f" ({k})") for k in kinds)
    n_bad += sum(r["degenerate"] for k in kinds for r in tables[k])
    return EXIT_FLAGGED if n_bad else EXIT_OK


def cmd_mfd_check(args, argv) -> int:
    src, load, cfg, cfg_path = _sweeps_from_args(args, argv)
    out = Outputs(args.out, _command_line(argv), cfg, cfg_path)
    rows, per_side = [], {"source": [], "load": []}
    for ps, pl in zip(src.points, load.points):
        row = [fmt(ps.f_dq)]
        for side, p in (("source", ps), ("load", pl)):
            if not p.ok:
                row += ["", "", ""]
                continue
            ratio = off_diagonal_ratio(p.zpn(side))
            is_mfd, st = mfd_classify(p.zdq(side), rel_tol=args.tol)
            per_side[side].append((p.f_dq, ratio, is_mfd))
            row += [fmt(ratio), fmt(st.residual), int(ratio <= args.tol)]
        rows.append(row)
    out.csv(f"mfd_{cfg.name}.csv",
            ["f_dq_Hz", "source_offdiag_ratio", "source_dq_skew_residual", "source_mfd",
             "load_offdiag_ratio", "load_dq_skew_residual", "load_mfd"], rows)
    summary = {"case": cfg.name, "tolerance": args.tol}
    for side, vals in per_side.items():
        ratios = [r for _, r, _ in vals]
        summary[side] = {
            "all_mfd": bool(vals) and all(r <= args.tol for r in ratios),
            "max_ratio": max(ratios) if ratios else None,
            "max_ratio_below_500Hz": max([r for f, r, _ in vals if f < 500] or [None], key=lambda x: x or 0),
            "max_ratio_above_600Hz": max([r for f, r, _ in vals if f > 600] or [None], key=lambda x: x or 0),
        }
        verdict = "MFD" if summary[side]["all_mfd"] else "not MFD"
        print(f"  {side}: {verdict} (max off-diagonal ratio {summary[side]['max_ratio']:.3g})")
    out.json(f"mfd_{cfg.name}.json", summary, "mfd")
    n_bad = _report_flags(src) + (0 if load is src else _report_flags(load, " (load)"))
    return EXIT_FLAGGED if n_bad else EXIT_OK


def cmd_step_sim(args, argv) -> int:
    cfg, cfg_path = load_case(args.case)
    try:
        schedule = [float(v) for v in args.schedule.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"--schedule: {exc}") from exc
    if not schedule:
        raise UsageError("--schedule: empty")
    model = build_case(cfg)
    res = run_step_schedule(model, schedule, hold=args.hold, start_idc=args.start)
    out = Outputs(args.out, _command_line(argv), cfg, cfg_path)
    out.csv(f"step_{cfg.name}.csv", ["t_s", "i_dc_ref_pu", "i_sd_pu", "i_sq_pu"],
            ([fmt(t), fmt(a), fmt(b), fmt(c)] for t, a, b, c in zip(res.t, res.idc, res.i_sd, res.i_sq)))
    segs = [{"i_dc_pu": v, "envelope_growth": g} for v, g in zip(schedule, res.growth)]
    doc = {"case": cfg.name, "schedule_pu": schedule, "hold_s": args.hold,
           "start_pu": schedule[0] if args.start is None else args.start,
           "segments": segs, "diverged_at_s": res.diverged_at, "unstable": res.unstable}
    out.json(f"step_{cfg.name}.json", doc, "step")
    for s in segs:
        g = s["envelope_growth"]
        trend = "diverging" if not math.isfinite(g) else ("growing" if g > 1 else "decaying")
        print(f"  I_dc = {s['i_dc_pu']:g} pu: {trend} (envelope ratio {g:.3g})")
    if res.diverged_at is not None:
        print(f"  instability: run left the operating point at t = {res.diverged_at:.4f} s")
    return EXIT_OK


def cmd_validate(args, argv) -> int:
    results = run_suite(fault=args.fault, n=args.n, threads=args.threads)
    print("validation scoreboard" + (f" (fault injected: {args.fault})" if args.fault else ""))
    for r in results:
        print("  " + r.line())
    out = Outputs(args.out, _command_line(argv), None, None)
    out.json("validate.json", {"fault": args.fault, "checks": [r.to_dict() for r in results]}, "validate")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FLAGGED


def cmd_dump_config(args, argv) -> int:
    cfg, cfg_path = load_case(args.case)
    doc = cfg.to_dict()
    print(json.dumps(doc, indent=1, sort_keys=True))
    if args.out:
        out = Outputs(args.out, _command_line(argv), cfg, cfg_path)
        out.json(f"config_{cfg.name}.json", {"config": doc}, "config")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mirrorfreq", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"mirrorfreq {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    case = argparse.ArgumentParser(add_help=False)
    case.add_argument("--case", default="A1", help="preset (A1, A2, B, oracle-rl) or path to a JSON config")
    outp = argparse.ArgumentParser(add_help=False)
    outp.add_argument("--out", default="out", help="output directory (default: ./out)")
    swp = argparse.ArgumentParser(add_help=False)
    swp.add_argument("--fmin", type=float, default=None, help="lowest f_dq in Hz")
    swp.add_argument("--fmax", type=float, default=None, help="highest f_dq in Hz")
    swp.add_argument("--grid", default=None, help="comma-separated f_dq list in Hz (1 Hz grid)")
    swp.add_argument("--threads", type=int, default=1,
                     help="worker threads (MIRRORFREQ_THREADS overrides)")
    files = argparse.ArgumentParser(add_help=False)
    files.add_argument("--sweep", default=None, help="existing sweep JSON instead of running --case")
    files.add_argument("--load-sweep", default=None, help="separate sweep JSON for the load side")

    def injection(parser, both=False):
        choices = ("shunt", "series", "both") if both else ("shunt", "series")
        parser.add_argument("--injection", choices=choices, default="both" if both else "shunt")

    s = sub.add_parser("sweep", parents=[case, swp, outp], help="impedance sweep of both subsystems")
    injection(s)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("gnc", parents=[case, swp, files, outp], help="generalized Nyquist analysis")
    injection(s)
    s.add_argument("--domain", choices=DOMAINS + ("all",), default="all")
    s.set_defaults(func=cmd_gnc)

    s = sub.add_parser("compare-original", parents=[case, swp, outp],
                       help="original sequence impedances: direct simulation vs formulas")
    injection(s, both=True)
    s.set_defaults(func=cmd_compare_original)

    s = sub.add_parser("mfd-check", parents=[case, swp, files, outp], help="mirror-frequency decoupling test")
    injection(s)
    s.add_argument("--tol", type=float, default=0.05, help="relative off-diagonal tolerance")
    s.set_defaults(func=cmd_mfd_check)

    s = sub.add_parser("step-sim", parents=[case, outp], help="stepwise DC-load increase in time domain")
    s.add_argument("--schedule", default="1.0,1.1,1.2", help="comma-separated I_dc values in pu")
    s.add_argument("--hold", type=float, default=1.0, help="seconds per schedule value")
    s.add_argument("--start", type=float, default=None, help="initial I_dc in pu (default: first value)")
    s.set_defaults(func=cmd_step_sim)

    s = sub.add_parser("validate", parents=[outp], help="run the invariant suite")
    s.add_argument("--fault", choices=FAULTS, default=None, help="inject a fault (negative control)")
    s.add_argument("--n", type=int, default=10_000, help="random samples per algebraic check")
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("dump-config", parents=[case], help="print the resolved case configuration")
    s.add_argument("--out", default=None, help="also write config_<case>.json into this directory")
    s.set_defaults(func=cmd_dump_config)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args, argv)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
