"""Command-line front end.

Usage::

    higgslab <command> [--config PATH] [--out DIR] [--jobs N] [--seed S]

Commands: threshold, model, decay, periods, auxgram, compare, verify-all.
Each command writes ``<command>.json`` and ``<command>.csv`` to the output
directory.  JSON encodes complex numbers as ``[re, im]`` and embeds the hash
of the resolved configuration together with the tolerances used.

Exit codes: 0 success, 2 input validation, 3 solver failure,
4 schedule/threshold violation.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import __version__
from .errors import HiggsLabError, InputError

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_SCHEDULE = 0, 2, 3, 4

DEFAULT_CONFIG_TOML = """
# Polynomial p with phi = p(z) dz^2 and spectral curve xi^2 = p(z).
# Coefficients lowest degree first; complex entries as [re, im].
[curve]
coefficients = [-1.0, 0.0, 1.0]

[threshold]
L_max = 4.0                  # flat-length cutoff for the saddle-connection sweep
angular_resolution = 64      # geodesics shot per zero over [0, 3 pi)

[model]
t = [1.0, 2.0, 4.0]          # scales of the model profile
n = 4001                     # mesh nodes per radial stage
scaling_radii = 16           # sample radii for the scaling-law check

[decay]
R = 6.0                      # disc radius
h_divisions = 128            # grid spacing h = R / h_divisions
amplitude = 0.1              # boundary |b|
phase = 0.7                  # boundary phase of b (general solve, plus winding)
general = true               # also run the full 2x2 solve

[periods]
coefficients = [-1.0, 0.0, 0.0, 0.0, 1.0]   # curve used for the semi-flat blocks
hor = [[1.0]]                # numerators q of nu = q dz / xi
ver = [[1.0]]                # numerators of mu, tau = conj(mu dz / xi)
scheme = "polar"             # "polar" or "partition"

[auxgram]
coefficients = [-1.0, 0.0, 1.0]
hor = [[1.0]]
ver = [[1.0]]
eta = [1.0]                  # eta = sum_k eta[k] xi^k dxi at every branch point ([] for eta = 0)

[compare]
kappa_fraction = 0.5         # kappa = kappa_fraction * kappa0, kappa0 = M(phi)/2
t = [2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0]
nu = [1.0, 0.3]              # numerator of nu
mu = [0.5, [0.0, -0.2]]      # numerator of mu, tau = conj(mu dz / xi)
eta = []                     # auxiliary input; [] is the symmetric case eta = 0
direct_t = [2.0]             # t values with a brute-force quadrature cross-check
n = 4001                     # radial mesh nodes of the model profile

[verify]
trials = 100                 # random trials per gamma in the error-term lemmas
matrices = 1000              # random metrics for the commutator identity

[tolerances]
threshold_abs = 1e-3
bessel_rel = 1e-12
commutator_abs = 1e-12
aux_abs = 1e-8
aux_rotation_abs = 1e-10
aux_closed_form_abs = 1e-6
periods_rel = 1e-3
profile_slope_rel = 0.05
scaling_abs = 1e-6
lemma_exponent_factor = 1.9
"""

DEFAULT_CONFIG = tomllib.loads(DEFAULT_CONFIG_TOML)

COMMANDS = ("threshold", "model", "decay", "periods", "auxgram", "compare", "verify-all")


# ---------------------------------------------------------------------------
# Config and encoding
# ---------------------------------------------------------------------------

def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: str | None) -> dict:
    """Defaults overlaid with the TOML file at ``path``."""
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        with open(path, "rb") as fh:
            user = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise InputError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise InputError(f"invalid config: {exc}") from exc
    unknown = set(user) - set(DEFAULT_CONFIG)
    if unknown:
        raise InputError(f"unknown config sections: {sorted(unknown)}")
    return _merge(DEFAULT_CONFIG, user)


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _complex(x) -> complex:
    if isinstance(x, (list, tuple)):
        if len(x) != 2:
            raise InputError(f"complex entries are [re, im] pairs, got {x!r}")
        return complex(float(x[0]), float(x[1]))
    if isinstance(x, (int, float)):
        return complex(x)
    raise InputError(f"not a number: {x!r}")


def _coeffs(xs, name: str) -> np.ndarray:
    if not isinstance(xs, list):
        raise InputError(f"{name} must be a list")
    return np.array([_complex(x) for x in xs], complex)


def _grid(xs, name: str) -> np.ndarray:
    a = np.array([float(x) for x in xs]) if isinstance(xs, list) else np.array([float(xs)])
    if a.size == 0 or np.any(np.diff(a) <= 0):
        raise InputError(f"{name} must be a non-empty increasing list")
    return a


def jsonable(x):
    """Recursively convert to JSON-safe values; complex -> [re, im]."""
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return jsonable(x.tolist())
    if isinstance(x, (complex, np.complexfloating)):
        return [jsonable(float(x.real)), jsonable(float(x.imag))]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return x


def _csv_cell(v):
    if isinstance(v, (complex, np.complexfloating)):
        return f"{float(v.real)!r}{float(v.imag):+.17g}j"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_outputs(out: Path, name: str, summary: dict, rows: list[dict], config: dict):
    """Write ``name.json`` (summary + rows) and ``name.csv`` (rows)."""
    out.mkdir(parents=True, exist_ok=True)
    doc = {"command": name, "version": __version__, "config_hash": config_hash(config),
           "tolerances": config["tolerances"], **summary, "rows": rows}
    text = json.dumps(jsonable(doc), sort_keys=True, indent=2, allow_nan=False)
    (out / f"{name}.json").write_text(text + "\n", encoding="utf-8")
    cols: list[str] = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    with open(out / f"{name}.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL)
        w.writerow(cols)
        for r in rows:
            w.writerow([_csv_cell(r.get(c, "")) for c in cols])
    return doc


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def run_threshold(config: dict, jobs: int = 1, seed: int = 0):
    from .quadiff import QuadraticDifferential, saddle_connections
    c = config["threshold"]
    phi = QuadraticDifferential(_coeffs(config["curve"]["coefficients"], "curve.coefficients"))
    zs = phi.zeros
    conns = saddle_connections(phi, float(c["L_max"]), int(c["angular_resolution"]))
    rows = [{"kind": "zero", "start": q.location} for q in zs]
    rows += [{"kind": "saddle_connection", **s.as_row()} for s in conns]
    if conns:
        best = min(s.length for s in conns)
        summary = {"threshold": best, "label": f"certified up to resolution {c['angular_resolution']}"}
    else:
        summary = {"threshold": "none below cutoff", "label": "none below cutoff"}
    summary["zeros"] = [q.location for q in zs]
    return summary, rows


def run_model(config: dict, jobs: int = 1, seed: int = 0):
    from .localmodel import painleve_profile
    from .numerics import fit_decay_rate
    c = config["model"]
    ts = _grid(c["t"], "model.t")
    rows, fits = [], []
    profiles = {}
    for t in ts:
        prof = painleve_profile(float(t), n=int(c["n"]))
        profiles[float(t)] = prof
        r = prof.v_profile.radii
        v = np.abs(prof.v(r))
        outer = (r >= 0.5 * (r[0] + r[-1])) & (v > 0)
        slope = fit_decay_rate(4 * t * r[outer] ** 1.5, v[outer]).rate
        fits.append({"t": float(t), "far_field_slope": slope, "psi0": float(prof.psi(0.0)),
                     "residual": prof.residual})
        for rr in np.linspace(0.0, prof.r_max, 65)[1:]:
            rows.append({"t": float(t), "r": float(rr), "v": float(prof.v(rr)), "psi": float(prof.psi(rr))})
    base = ts[0]
    scaling = 0.0
    for t in ts[1:]:
        pt, pb = profiles[float(t)], profiles[float(base)]
        rr = np.linspace(pt.r_inner, pt.r_max, int(c["scaling_radii"]))
        s = (t / base) ** (2.0 / 3.0)
        scaling = max(scaling, float(np.max(np.abs(pt.v(rr) - pb.v(s * rr)))))
    return {"fits": fits, "scaling_law_max_error": scaling}, rows


def _general_boundary(amplitude: float, phase: float):
    def H(z):
        b = amplitude * np.exp(1j * (phase + np.angle(z)))
        a = np.sqrt(1 + np.abs(b) ** 2)
        out = np.empty(np.shape(z) + (2, 2), complex)
        out[..., 0, 0] = a
        out[..., 1, 1] = a
        out[..., 0, 1] = b
        out[..., 1, 0] = np.conj(b)
        return out
    return H


def run_decay(config: dict, jobs: int = 1, seed: int = 0):
    from .localmodel import decay_exponent, solve_disc_general, solve_disc_symmetric
    c = config["decay"]
    R, amp = float(c["R"]), float(c["amplitude"])
    if R <= 0 or int(c["h_divisions"]) < 8:
        raise InputError("decay needs R > 0 and h_divisions >= 8")
    h = R / int(c["h_divisions"])
    rows = []

    def row(kind, field, bound):
        if amp == 0 or np.max(np.abs(field.bt if kind == "symmetric" else field.b)) == 0:
            return {"kind": kind, "R": R, "h": h, "exponent": "exact zero field",
                    "fit_residual": 0.0, "bound": bound, "solver_residual": field.residual}
        fit = decay_exponent(field)
        return {"kind": kind, "R": R, "h": h, "exponent": fit.rate, "fit_residual": fit.residual,
                "bound": bound, "solver_residual": field.residual}

    rows.append(row("symmetric", solve_disc_symmetric(R, amp, h), "0 < gamma < 4"))
    if c["general"]:
        f = solve_disc_general(R, _general_boundary(amp, float(c["phase"])), h)
        rows.append(row("general", f, "0 < gamma < 2 sqrt 2"))
    return {"paper_bounds": {"symmetric": 4.0, "general": 2 * math.sqrt(2)}}, rows


def _basis(items, name):
    from .spectral import HolDifferential
    if not isinstance(items, list) or not items:
        raise InputError(f"{name} must be a non-empty list of numerators")
    return [HolDifferential(_coeffs(q, name)) for q in items]


def _eta(curve, coeffs):
    from .numerics import PowerSeries
    from .spectral import AuxInput
    e = _coeffs(coeffs, "eta")
    if e.size == 0 or not np.any(e):
        return AuxInput.zero()
    return AuxInput.uniform(curve, PowerSeries(e, 0, 0.0, 24))


def run_periods(config: dict, jobs: int = 1, seed: int = 0):
    from .spectral import SpectralCurve, l2_pairing_hol, semiflat_gram
    c = config["periods"]
    curve = SpectralCurve(_coeffs(c["coefficients"], "periods.coefficients"))
    hor, ver = _basis(c["hor"], "periods.hor"), _basis(c["ver"], "periods.ver")
    for nu in hor + ver:
        if not nu.holomorphic_at_infinity(curve):
            raise InputError("basis element not holomorphic at infinity")
    g = semiflat_gram(curve, hor, ver, scheme=c["scheme"])
    other = "partition" if c["scheme"] == "polar" else "polar"
    cross = [abs(l2_pairing_hol(curve, nu, nu, scheme=other) - g.hh[i, i]) / abs(g.hh[i, i])
             for i, nu in enumerate(hor)]
    eig = np.linalg.eigvalsh(g.full())
    rows = [{"block": blk, "i": i, "j": j, "value": M[i, j]}
            for blk, M in (("hor_hor", g.hh), ("ver_ver", g.vv), ("hor_ver", g.hv))
            for i in range(M.shape[0]) for j in range(M.shape[1])]
    return {"gram": g.to_json(), "min_eigenvalue": float(eig.min()),
            "scheme_agreement_rel": float(max(cross))}, rows


def run_auxgram(config: dict, jobs: int = 1, seed: int = 0):
    from .spectral import SpectralCurve, aux_gram
    c = config["auxgram"]
    curve = SpectralCurve(_coeffs(c["coefficients"], "auxgram.coefficients"))
    hor, ver = _basis(c["hor"], "auxgram.hor"), _basis(c["ver"], "auxgram.ver")
    g = aux_gram(curve, hor, ver, _eta(curve, c["eta"]))
    rows = [{"i": i, "j": j, "value": g.hv[i, j]}
            for i in range(g.hv.shape[0]) for j in range(g.hv.shape[1])]
    return {"gram": g.to_json()}, rows


def run_compare(config: dict, jobs: int = 1, seed: int = 0):
    from .approxforms import CutoffSchedule, pairing_report
    from .quadiff import threshold
    from .spectral import SpectralCurve
    from .errors import ScheduleError
    c = config["compare"]
    curve = SpectralCurve(_coeffs(config["curve"]["coefficients"], "curve.coefficients"))
    th = threshold(curve.phi, float(config["threshold"]["L_max"]),
                   int(config["threshold"]["angular_resolution"]))
    if th.value is None:
        raise ScheduleError("no saddle connection below the cutoff: threshold not finite")
    frac = float(c["kappa_fraction"])
    if not 0 < frac < 1:
        raise ScheduleError("kappa must lie in (0, kappa0)")
    sch = CutoffSchedule.from_threshold(th.value, frac)
    ts = _grid(c["t"], "compare.t")
    nu, mu = _coeffs(c["nu"], "compare.nu"), _coeffs(c["mu"], "compare.mu")
    rep = pairing_report(curve, nu, mu, _eta(curve, c["eta"]), sch, ts,
                         direct_t=tuple(float(x) for x in c["direct_t"]), jobs=jobs, n=int(c["n"]))
    doc = rep.to_json()
    rows = doc.pop("rows")
    return {"threshold": th.value, **doc}, rows


def run_verify_all(config: dict, jobs: int = 1, seed: int = 0):
    """Quick acceptance checks; one row per check with PASS/FAIL."""
    from .approxforms import error_lemma_checks
    from .localmodel import commutator_norm_sq, commutator_norm_sq_reference
    from .numerics import PowerSeries, bessel_I0
    from .spectral import AuxInput, SpectralCurve, aux_pairing
    tol = config["tolerances"]
    rows = []

    def add(name, value, ok):
        rows.append({"check": name, "value": value, "status": "PASS" if ok else "FAIL"})

    s, _ = run_threshold(config, jobs, seed)
    th = s["threshold"]
    add("threshold", th, isinstance(th, float) and abs(th - math.pi / 2) <= tol["threshold_abs"]
        if list(config["curve"]["coefficients"]) == [-1.0, 0.0, 1.0] else isinstance(th, float))

    x = 20.0
    lim = bessel_I0(x) * math.sqrt(2 * math.pi * x) * math.exp(-x)
    add("bessel", lim, bessel_I0(0.0) == 1.0 and 0.99 <= lim <= 1.01)

    rng = np.random.default_rng(seed)
    err = 0.0
    for _ in range(int(config["verify"]["matrices"])):
        # |b| <= 2 keeps the values O(100), where an absolute 1e-12 is above double rounding
        b = 2 * math.sqrt(rng.uniform()) * np.exp(2j * math.pi * rng.uniform())
        a = math.exp(rng.normal())
        H = np.array([[a, b], [np.conj(b), (1 + abs(b) ** 2) / a]])
        err = max(err, abs(commutator_norm_sq(H) - commutator_norm_sq_reference(H)))
    add("commutator_identity", err, err <= tol["commutator_abs"])

    curve = SpectralCurve([0.0, 2.25])
    one = PowerSeries(np.array([1.0 + 0j]), 0, 0.0, 24)
    eta = AuxInput.uniform(curve, one)
    val = aux_pairing(curve, {0: one}, {0: one}, eta)
    w = np.exp(2j * np.pi / 3)
    rot = aux_pairing(curve, {0: one}, {0: one}, eta, omega=w)
    add("aux_local_model", val, abs(val + 4.5 * math.pi) <= tol["aux_abs"]
        and abs(rot - val) <= tol["aux_rotation_abs"])

    rep = error_lemma_checks(trials=int(config["verify"]["trials"]), gamma=1.0, seed=seed)
    f = tol["lemma_exponent_factor"]
    for k, fit in rep.items():
        add(f"error_lemma_{k}", fit.family_exponent, fit.passed(f))
    n_fail = sum(r["status"] == "FAIL" for r in rows)
    return {"passed": n_fail == 0, "failures": n_fail}, rows


RUNNERS = {"threshold": run_threshold, "model": run_model, "decay": run_decay,
           "periods": run_periods, "auxgram": run_auxgram, "compare": run_compare,
           "verify-all": run_verify_all}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="higgslab", description=__doc__.split("\n")[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", metavar="PATH", help="TOML configuration overriding the defaults")
    ap.add_argument("--out", metavar="DIR", default="higgslab-out", help="output directory")
    ap.add_argument("--jobs", metavar="N", type=int, default=1, help="worker processes")
    ap.add_argument("--seed", metavar="S", type=int, default=0, help="random seed")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        if args.jobs < 1:
            raise InputError("--jobs must be >= 1")
        config = load_config(args.config)
        config["seed"] = args.seed
        summary, rows = RUNNERS[args.command](config, jobs=args.jobs, seed=args.seed)
        write_outputs(Path(args.out), args.command, summary, rows, config)
    except HiggsLabError as exc:
        print(f"higgslab {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (KeyError, TypeError, ValueError) as exc:
        print(f"higgslab {args.command}: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.command == "verify-all":
        for r in rows:
            print(f"{r['status']} {r['check']}")
        return EXIT_OK if summary["passed"] else 1
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
