"""Command-line interface.

Exit status: 0 success, 2 usage error, 3 statistical not-found.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    P_C_ESTIMATE,
    InsufficientPointsError,
    critical_exponents,
    exponent_relation,
    fit_exponent,
    hyperscaling_report,
    lemma_bound_report,
    off_critical_fits,
    run_sweep,
)
from .crossing import BoxSpec, BracketError, WidthNotFound, estimate_crossing, find_pc, find_width
from .estimators import (
    SeriesEstimate,
    TwoPointProfile,
    chi_xi_series,
    profile_from_hits,
    theta_series,
)
from .growth import AggregateStats, run_ensemble, run_with_profiles, threads_default
from .model import ModelParams, PreconditionError
from .oracle import exact_cluster_stats, exact_crossing, reversibility_check

GROW_COLUMNS = ("t", "theta", "theta_err", "chi", "chi_err", "xi", "xi_err", "n")
TWOPOINT_COLUMNS = ("t", "x", "tau", "tau_err", "n")
CROSSING_COLUMNS = ("w", "t", "p", "V", "V_err", "H_lr", "H_lr_err", "H_rl", "H_rl_err", "n")
SCHEMA_VERSION = 1


class UsageError(Exception):
    pass


class NotFound(Exception):
    pass


# --------------------------------------------------------------------------
# argument parsing

def _pair(text, conv=float, sep=":"):
    parts = text.split(sep)
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected a{sep}b, got {text!r}")
    return tuple(conv(v) for v in parts)


def _window(text):
    return _pair(text, int)


def _eps_grid(text):
    parts = [float(v) for v in text.split(":")]
    if len(parts) != 3 or parts[2] <= 0:
        raise argparse.ArgumentTypeError(f"expected lo:hi:step, got {text!r}")
    lo, hi, step = parts
    return [round(v, 12) for v in np.arange(lo, hi + step / 2, step)]


def _box(text):
    try:
        return BoxSpec.parse(text)
    except (ValueError, PreconditionError) as exc:
        raise argparse.ArgumentTypeError(f"bad --box {text!r}: {exc}")


def _floats(text):
    return [float(v) for v in text.split(",") if v]


def _ints(text):
    return [int(v) for v in text.split(",") if v]


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option values (flags override it)")
    common.add_argument("--p", type=float, help="bond occupation probability")
    common.add_argument("--d", type=int, help="spatial dimension")
    common.add_argument("--t-max", type=int, dest="t_max")
    common.add_argument("--n", type=int, help="number of Monte Carlo samples")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int)
    common.add_argument("--out", help="output path (stdout when omitted)")
    common.add_argument("--format", choices=("csv", "json"))
    common.add_argument("--window", type=_window, help="fit window t_min:t_max")
    common.add_argument("--eps-grid", type=_eps_grid, dest="eps_grid", help="lo:hi:step")
    common.add_argument("--box", type=_box, action="append", help="box WxT (repeatable)")
    common.add_argument("--band", type=lambda s: _pair(s, float), help="crossing band lo:hi")
    common.add_argument("--input", help="file written by grow/twopoint/oracle")

    ap = argparse.ArgumentParser(prog="oriperc", description="Oriented percolation toolkit")
    ap.add_argument("--version", action="version", version=f"oriperc {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("grow", parents=[common], help="cluster-growth ensemble")
    g.add_argument("--kernel", choices=("auto", "bitset", "sparse"), default="auto")

    tp = sub.add_parser("twopoint", parents=[common], help="two-point function profile")
    tp.add_argument("--times", type=_ints, help="comma-separated times (default: t-max)")

    sub.add_parser("crossing", parents=[common], help="box-crossing estimates")

    fw = sub.add_parser("findwidth", parents=[common], help="width sequence w_t")
    fw.add_argument("--times", type=_ints, required=False)

    fp = sub.add_parser("findpc", parents=[common], help="bisect p on a crossing probability")
    fp.add_argument("--t", type=int)
    fp.add_argument("--aspect", type=float, default=1.0)
    fp.add_argument("--target", type=float, default=0.5)
    fp.add_argument("--tol", type=float, default=1e-3)

    ft = sub.add_parser("fit", parents=[common], help="exponent fits from a grow output")
    ft.add_argument("--method", choices=("global", "local", "both"), default="both")

    hs = sub.add_parser("hyperscaling", parents=[common], help="hyperscaling bound report")
    hs.add_argument("--k-window", type=_window, dest="k_window")

    lm = sub.add_parser("lemma", parents=[common], help="two-point bound report")
    lm.add_argument("--width", type=int)
    lm.add_argument("--eps", type=float, default=0.1)
    lm.add_argument("--theta", type=float, help="theta_t (needed for CSV input)")

    sw = sub.add_parser("sweep", parents=[common], help="off-critical susceptibility sweep")
    sw.add_argument("--ps", type=_floats, help="comma-separated p values")
    sw.add_argument("--t-cut", type=int, dest="t_cut")
    sw.add_argument("--p-c", type=float, dest="p_c", default=P_C_ESTIMATE)
    sw.add_argument("--nu", type=float)
    sw.add_argument("--rho", type=float)

    orc = sub.add_parser("oracle", parents=[common], help="exact small-scale values")
    orc.add_argument("--exact", action="store_true", help="rational arithmetic (t <= 6)")
    orc.add_argument("--reversibility", action="store_true")
    return ap


def parse_args(argv):
    ap = _parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    args = ap.parse_args(argv)
    if known.config:
        try:
            cfg = json.loads(Path(known.config).read_text())
        except (OSError, ValueError) as exc:
            ap.error(f"--config: cannot read {known.config}: {exc}")
        if not isinstance(cfg, dict):
            ap.error("--config: file must hold a JSON object")
        explicit = _explicit_dests(ap, argv)
        for key, value in cfg.items():
            dest = key.replace("-", "_")
            if not hasattr(args, dest):
                ap.error(f"--config: unknown option {key!r}")
            if dest in explicit:
                continue
            setattr(args, dest, _coerce(dest, value))
    return args


def _explicit_dests(ap, argv):
    names = {a.split("=")[0] for a in argv if a.startswith("--")}
    return {n[2:].replace("-", "_") for n in names}


def _coerce(dest, value):
    if dest == "box":
        vals = value if isinstance(value, list) else [value]
        return [v if isinstance(v, BoxSpec) else BoxSpec.parse(str(v)) for v in vals]
    if dest in ("window", "band", "k_window") and isinstance(value, str):
        return _pair(value, int if dest != "band" else float)
    if dest == "eps_grid" and isinstance(value, str):
        return _eps_grid(value)
    if dest in ("window", "band", "k_window") and isinstance(value, list):
        return tuple(value)
    return value


def _need(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


# --------------------------------------------------------------------------
# formatting

def _fmt(v):
    if v is None:
        return "nan"
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if not math.isfinite(v):
        return "nan"
    if v == int(v) and abs(v) < 2 ** 53:
        return str(int(v))
    return repr(v)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _json_safe(v):
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, BoxSpec):
        return f"{v.w}x{v.t}"
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def json_text(obj) -> str:
    return json.dumps(_json_safe(obj), indent=1, allow_nan=False) + "\n"


def _record(args, payload: dict) -> dict:
    return {"schema": SCHEMA_VERSION, "version": __version__, "command": args.command,
            "config": _resolved_config(args), **payload}


def _resolved_config(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("command", "config", "threads", "out")}
    return _json_safe(cfg)


def _emit(args, text: str, meta: dict | None = None):
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        if meta is not None:
            with open(str(path) + ".meta.json", "w", encoding="utf-8", newline="\n") as fh:
                fh.write(json_text(meta))
    else:
        sys.stdout.write(text)


def _summary(msg):
    print(msg, file=sys.stderr)


# --------------------------------------------------------------------------
# readers for round trips

def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise UsageError(f"--input: {path} has no rows")
    return rows


def _series_from_rows(rows):
    def col(name):
        return np.array([float(r[name]) for r in rows])

    n = col("n").astype(np.int64)
    return tuple(SeriesEstimate(name, col(name), col(name + "_err"), n) for name in ("theta", "chi", "xi"))


def load_series(path):
    """(theta, chi, xi, d, p) from a grow CSV/JSON or an oracle JSON."""
    path = str(path)
    if path.endswith(".csv"):
        return (*_series_from_rows(_read_csv(path)), None, None)
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise UsageError(f"--input: cannot read {path}: {exc}")
    if "aggregate" in data:
        agg = AggregateStats.from_dict(data["aggregate"])
        chi, xi = chi_xi_series(agg)
        return theta_series(agg), chi, xi, agg.d, agg.p
    if "exact" in data:
        ex = data["exact"]
        z = np.zeros(len(ex["theta"]))
        n = np.zeros(len(z), dtype=np.int64)
        mk = lambda k: SeriesEstimate(k, np.array([np.nan if v is None else v for v in ex[k]], dtype=float), z, n)  # noqa: E731
        return mk("theta"), mk("chi"), mk("xi"), 1, ex["p"]
    raise UsageError(f"--input: {path} is not a grow or oracle output")


def load_profile(path, theta=None):
    path = str(path)
    if path.endswith(".csv"):
        rows = _read_csv(path)
        t = max(int(r["t"]) for r in rows)
        rows = [r for r in rows if int(r["t"]) == t]
        x = np.array([int(r["x"]) for r in rows])
        tau = np.array([float(r["tau"]) for r in rows])
        se = np.array([float(r["tau_err"]) for r in rows])
        order = np.argsort(x)
        prof = TwoPointProfile(t, x[order], tau[order], se[order], int(rows[0]["n"]))
        return prof, theta
    data = json.loads(Path(path).read_text())
    if "profiles" not in data:
        raise UsageError(f"--input: {path} is not a twopoint output")
    last = data["profiles"][-1]
    prof = TwoPointProfile.from_dict(last)
    return prof, theta if theta is not None else last.get("theta")


# --------------------------------------------------------------------------
# commands

def cmd_grow(args):
    _need(args, "p", "t_max", "n")
    params = ModelParams(args.d or 1, args.p)
    agg = run_ensemble(params, args.t_max, args.n, args.seed, threads=args.threads, kernel=args.kernel)
    th = theta_series(agg)
    chi, xi = chi_xi_series(agg)
    rows = [(t, th.value[t], th.stderr[t], chi.value[t], chi.stderr[t], xi.value[t], xi.stderr[t], agg.n)
            for t in range(agg.t_max + 1)]
    if (args.format or "csv") == "csv":
        _emit(args, csv_text(GROW_COLUMNS, rows), _record(args, {}))
    else:
        _emit(args, json_text(_record(args, {
            "aggregate": agg.to_dict(),
            "series": {s.name: s.to_dict() for s in (th, chi, xi)}})))
    T = agg.t_max
    _summary(f"grow p={params.p_hat:.6f} n={agg.n} t_max={T}: theta={th.value[T]:.6g} "
             f"chi={chi.value[T]:.6g} xi={xi.value[T]:.6g}")


def cmd_twopoint(args):
    _need(args, "p", "n")
    times = args.times or ([args.t_max] if args.t_max is not None else None)
    if not times:
        raise UsageError("twopoint needs --t-max or --times")
    params = ModelParams(1 if args.d is None else args.d, args.p)
    t_max = max(times)
    agg, hits = run_with_profiles(params, t_max, args.n, args.seed, times, threads=args.threads)
    th = theta_series(agg)
    profiles = [profile_from_hits(t, hits[j], args.n) for j, t in enumerate(times)]
    if (args.format or "csv") == "csv":
        rows = [(pr.t, x, tau, se, pr.n) for pr in profiles for x, tau, se in zip(pr.x, pr.tau, pr.stderr)]
        _emit(args, csv_text(TWOPOINT_COLUMNS, rows), _record(args, {}))
    else:
        out = []
        for pr in profiles:
            d = pr.to_dict()
            d["theta"] = float(th.value[pr.t])
            d["theta_err"] = float(th.stderr[pr.t])
            d["chi"] = pr.chi
            out.append(d)
        _emit(args, json_text(_record(args, {"profiles": out})))
    pr = profiles[-1]
    _summary(f"twopoint p={params.p_hat:.6f} t={pr.t} n={pr.n}: chi={pr.chi:.6g} tau(0)={pr.at(0):.6g}")


def cmd_crossing(args):
    _need(args, "p", "n", "box")
    ests = [estimate_crossing(b, args.p, args.n, args.seed, threads=args.threads) for b in args.box]
    rows = [tuple(e.to_dict()[c] for c in CROSSING_COLUMNS) for e in ests]
    if (args.format or "csv") == "csv":
        _emit(args, csv_text(CROSSING_COLUMNS, rows), _record(args, {}))
    else:
        _emit(args, json_text(_record(args, {"estimates": [e.to_dict() for e in ests]})))
    e = ests[-1]
    _summary(f"crossing {e.box.w}x{e.box.t} p={e.p:.6f}: V={e.V[0]:.4f} H_lr={e.H_lr[0]:.4f} "
             f"H_rl={e.H_rl[0]:.4f}")


def cmd_findwidth(args):
    _need(args, "p", "n")
    times = args.times or ([args.t_max] if args.t_max else None)
    if not times:
        raise UsageError("findwidth needs --times or --t-max")
    band = args.band or (0.1, 0.9)
    results, failures = [], []
    for t in times:
        try:
            results.append(find_width(t, args.p, band, args.n, args.seed, threads=args.threads))
        except WidthNotFound as exc:
            failures.append({"t": t, "message": str(exc), "scanned": [list(s) for s in exc.scanned]})
    widths = [{"t": r.t, "w": r.w, "V_lower": r.lower.V[0], "V_lower_err": r.lower.V[1],
               "V_upper": r.upper.V[0], "V_upper_err": r.upper.V[1]} for r in results]
    payload = {"band": list(band), "widths": widths, "not_found": failures}
    if (args.format or "json") == "json":
        _emit(args, json_text(_record(args, payload)))
    else:
        cols = ("t", "w", "V_lower", "V_lower_err", "V_upper", "V_upper_err")
        _emit(args, csv_text(cols, [tuple(r[c] for c in cols) for r in widths]), _record(args, payload))
    found = " ".join(f"w_{r.t}={r.w}" for r in results)
    if failures:
        raise NotFound(f"findwidth: no width for t={[f['t'] for f in failures]}; "
                       f"{failures[0]['message']}" + (f" (found {found})" if found else ""))
    _summary("findwidth " + found)


def cmd_findpc(args):
    t = args.t or args.t_max
    if t is None:
        raise UsageError("findpc needs --t or --t-max")
    _need(args, "n")
    try:
        res = find_pc(t, args.aspect, args.target, args.tol, args.n, args.seed, threads=args.threads)
    except BracketError as exc:
        raise NotFound(str(exc))
    _emit(args, json_text(_record(args, {"p_c": res.p, "interval": list(res.interval),
                                         "steps": res.steps, "estimate": res.estimate.to_dict()})))
    _summary(f"findpc t={t} w={res.estimate.box.w}: p={res.p:.6f} V={res.estimate.V[0]:.4f}")


def _fits(theta, chi, xi, window, method, d=1):
    out = {}
    for m in (("global", "local") if method == "both" else (method,)):
        f = [fit_exponent(s, window, m) for s in (theta, chi, xi)]
        rho, eta, nu = critical_exponents(*f)
        out[m] = {"theta": f[0].to_dict(), "chi": f[1].to_dict(), "xi": f[2].to_dict(),
                  "rho": list(rho), "eta": list(eta), "nu": list(nu),
                  "relation": exponent_relation(rho, eta, nu, d).to_dict()}
    return out


def cmd_fit(args):
    _need(args, "input", "window")
    theta, chi, xi, d, _ = load_series(args.input)
    d = args.d or d or 1
    try:
        out = _fits(theta, chi, xi, args.window, args.method, d)
    except InsufficientPointsError as exc:
        raise NotFound(f"fit: {exc}")
    _emit(args, json_text(_record(args, {"fits": out})))
    first = next(iter(out))
    r = out[first]
    _summary(f"fit [{first}] rho={r['rho'][0]:.4f}+-{r['rho'][1]:.4f} eta={r['eta'][0]:.4f}+-{r['eta'][1]:.4f} "
             f"nu={r['nu'][0]:.4f}+-{r['nu'][1]:.4f}")


def cmd_hyperscaling(args):
    _need(args, "input")
    theta, chi, xi, d, _ = load_series(args.input)
    d = args.d or d or 1
    fits = None
    if args.window:
        try:
            f = [fit_exponent(s, args.window) for s in (theta, chi, xi)]
            fits = critical_exponents(*f)
        except InsufficientPointsError as exc:
            raise NotFound(f"hyperscaling: {exc}")
    rep = hyperscaling_report(theta, chi, xi, d, k_window=args.k_window, fits=fits)
    _emit(args, json_text(_record(args, {"report": rep.to_dict()})))
    ok = [v for v in rep.upper_ok if v is not None]
    _summary(f"hyperscaling d={d}: upper bound holds at {sum(ok)}/{len(ok)} times"
             + (f", K spread {rep.k_spread:.3f}" if rep.k_spread else ""))


def cmd_lemma(args):
    _need(args, "input", "width")
    prof, theta = load_profile(args.input, args.theta)
    if theta is None:
        raise UsageError("lemma: --theta is required with CSV input")
    rep = lemma_bound_report(prof, theta, args.width, args.eps, args.eps_grid)
    _emit(args, json_text(_record(args, {"report": rep.to_dict()})))
    _summary(f"lemma t={prof.t} w={args.width} eps={args.eps}: lower_ok={rep.lower_ok} "
             f"tail_ok={rep.tail_ok} best_eps={rep.best_eps}")


def cmd_sweep(args):
    _need(args, "ps", "t_cut", "n")
    pts = run_sweep(args.ps, args.t_cut, args.n, args.seed, threads=args.threads)
    rows = [(s.p, s.chi_sum, s.chi_sum_err, s.zeta, s.zeta_err) for s in pts]
    cols = ("p", "chi_sum", "chi_sum_err", "zeta", "zeta_err")
    try:
        fits = off_critical_fits(pts, args.p_c, nu=args.nu, rho=args.rho).to_dict()
    except InsufficientPointsError as exc:
        fits = {"error": str(exc)}
    if (args.format or "csv") == "csv":
        _emit(args, csv_text(cols, rows), _record(args, {"fits": fits}))
    else:
        _emit(args, json_text(_record(args, {"points": [s.to_dict() for s in pts], "fits": fits})))
    _summary(f"sweep {len(pts)} points t_cut={args.t_cut}: gamma={fits.get('gamma')}")


def cmd_oracle(args):
    _need(args, "p")
    payload = {}
    if args.box:
        payload["crossing"] = []
        for b in args.box:
            ex = exact_crossing(b, args.p)
            payload["crossing"].append({"w": b.w, "t": b.t, "p": args.p, "V": ex.V, "H_lr": ex.H_lr,
                                        "H_rl": ex.H_rl, "n_bonds": ex.n_bonds})
    if args.t_max is not None:
        if args.exact:
            from fractions import Fraction
            st = exact_cluster_stats(Fraction(args.p), args.t_max, exact=True)
        else:
            st = exact_cluster_stats(args.p, args.t_max)
        payload["exact"] = st.to_dict()
        if args.reversibility:
            payload["reversibility"] = []
            for t in range(1, args.t_max + 1):
                r = reversibility_check(args.p, t)
                payload["reversibility"].append({"t": t, "forward": r.forward, "backward": r.backward,
                                                 "equal": r.equal})
    if not payload:
        raise UsageError("oracle needs --t-max and/or --box")
    _emit(args, json_text(_record(args, payload)))
    if "exact" in payload:
        _summary(f"oracle p={args.p} t_max={args.t_max}: theta={payload['exact']['theta'][-1]!r}")
    else:
        _summary(f"oracle p={args.p}: {len(payload['crossing'])} boxes")


COMMANDS = {
    "grow": cmd_grow, "twopoint": cmd_twopoint, "crossing": cmd_crossing, "findwidth": cmd_findwidth,
    "findpc": cmd_findpc, "fit": cmd_fit, "hyperscaling": cmd_hyperscaling, "lemma": cmd_lemma,
    "sweep": cmd_sweep, "oracle": cmd_oracle,
}


def run_command(argv) -> int:
    try:
        args = parse_args(list(argv))
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.threads is None:
        args.threads = threads_default()
    try:
        COMMANDS[args.command](args)
    except (UsageError, PreconditionError) as exc:
        print(f"oriperc {args.command}: {exc}", file=sys.stderr)
        return 2
    except NotFound as exc:
        print(f"oriperc {args.command}: not found: {exc}", file=sys.stderr)
        return 3
    return 0


def main(argv=None):
    sys.exit(run_command(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
