"""Command-line front end.

Exit codes: 0 all checks pass, 1 validation/domain error, 2 numerical
non-convergence, 3 a result violated its acceptance tolerance.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import bsms
from .errors import ConvergenceError, DegenerateChainError, DomainError, FilterDivergenceError
from .gauss import GaussMarkovModel, solve
from .iterative import hamming_distortion, solve_for_distortion
from .realization import RealizationConfig, capacity, simulate
from .spectral import classical_rdf, spectrum_from_model

log = logging.getLogger("nrdf")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_TOLERANCE = 0, 1, 2, 3

# simulated distortion must sit within this many standard errors of sum(delta)
SIM_SIGMAS = 4.0


class ConfigError(DomainError):
    """A configuration field failed validation."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


def fmt(value) -> str:
    """12-significant-digit rendering; blank for missing values."""
    if value is None:
        return ""
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{float(value):.12g}"


def parse_grid(text, field="D_grid"):
    """Parse ``lo:step:hi`` (inclusive) or a comma-separated list."""
    if isinstance(text, (list, tuple)):
        values = [float(v) for v in text]
    else:
        text = str(text).strip()
        try:
            if ":" in text:
                lo, step, hi = (float(v) for v in text.split(":"))
                if step <= 0 or hi < lo:
                    raise ConfigError(field, f"need step > 0 and hi >= lo in {text!r}")
                n = int(round((hi - lo) / step))
                values = [round(lo + i * step, 12) for i in range(n + 1)]
            else:
                values = [float(v) for v in text.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(field, f"cannot parse {text!r}") from None
    if not values:
        raise ConfigError(field, "grid is empty")
    if any(not math.isfinite(v) for v in values):
        raise ConfigError(field, "grid values must be finite")
    return values


def _parse_Q(value):
    if value is None:
        return None
    try:
        items = value.split(",") if isinstance(value, str) else list(value)
        values = [float(v) for v in items]
    except (TypeError, ValueError):
        raise ConfigError("Q", f"cannot parse {value!r}") from None
    if any(v <= 0 for v in values):
        raise ConfigError("Q", "channel noise variances must be positive")
    return values


def load_model(path) -> GaussMarkovModel:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError("model", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("model", f"invalid JSON in {path}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError("model", f"{path} must hold a JSON object with A, B, C, N")
    model = GaussMarkovModel.from_dict(data)
    model.check_assumptions()
    return model


def _map(fn, items, jobs):
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _csv(header, rows):
    lines = [",".join(header)]
    lines += [",".join(fmt(v) if not isinstance(v, str) else v for v in row) for row in rows]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# bsms-curve
# ---------------------------------------------------------------------------

_PLOT_TEMPLATE = '''"""Plot {title} from {csv_name}. Requires matplotlib."""
import csv
import matplotlib.pyplot as plt

with open({csv_name!r}) as fh:
    rows = list(csv.DictReader(fh))
cols = {cols!r}
D = [float(r[{xcol!r}]) for r in rows]
for col in cols:
    pts = [(d, float(r[col])) for d, r in zip(D, rows) if r[col] != ""]
    if pts:
        plt.plot([x for x, _ in pts], [y for _, y in pts], label=col)
plt.xlabel({xcol!r})
plt.ylabel("bits/sample")
plt.title({title!r})
plt.legend()
plt.savefig({png_name!r}, dpi=150)
'''


def write_plot_script(csv_path, cols, title, xcol="D"):
    csv_path = Path(csv_path)
    script = csv_path.with_suffix(".plot.py")
    script.write_text(_PLOT_TEMPLATE.format(
        title=title, csv_name=csv_path.name, cols=list(cols), xcol=xcol,
        png_name=csv_path.with_suffix(".png").name,
    ))
    return script


def bsms_curve_rows(p, grid):
    src = bsms.BinaryMarkovSource(p)
    dc = bsms.critical_distortion(src)
    rows = []
    for D in grid:
        if not 0.0 <= D <= 0.5:
            raise ConfigError("D_grid", f"distortion {D} outside [0, 0.5]")
        low = D <= dc
        rows.append([
            D,
            bsms.nrdf(src, D),
            bsms.classical_rdf_low_region(src, D) if low else None,
            bsms.shannon_lower_bound(src, D),
            bsms.causal_rate_loss_bound(src, D) if low else None,
        ])
    return rows


BSMS_HEADER = ["D", "R_na", "R_classical", "SLB", "RL_bound"]


def cmd_bsms_curve(cfg):
    p = _prob(cfg, "p")
    grid = parse_grid(cfg.get("D_grid", "0:0.01:0.5"))
    text = _csv(BSMS_HEADER, bsms_curve_rows(p, grid))
    out = cfg.get("out")
    _write(out, text)
    if out not in (None, "-"):
        write_plot_script(out, BSMS_HEADER[1:], f"BSMS(p={p}) rate-distortion curves")
    return EXIT_OK


# ---------------------------------------------------------------------------
# bsms-verify
# ---------------------------------------------------------------------------


def _verify_point(args):
    p, D = args
    closed = bsms.nrdf(p, D)
    try:
        sol = solve_for_distortion(bsms.BinaryMarkovSource(p).as_finite(), hamming_distortion(2), D)
    except (ConvergenceError, DegenerateChainError) as exc:
        return D, closed, None, str(exc)
    return D, closed, sol.rate, None


def cmd_bsms_verify(cfg):
    p = _prob(cfg, "p")
    tol = _positive(cfg, "tol", 1e-3)
    grid = parse_grid(cfg.get("D_grid", "0.05:0.05:0.45"))
    for D in grid:
        if not 0.0 < D < 0.5:
            raise ConfigError("D_grid", f"distortion {D} outside (0, 0.5)")
    results = _map(_verify_point, [(p, D) for D in grid], cfg.get("jobs"))
    rows, worst = [], EXIT_OK
    for D, closed, solver, err in results:
        if err is not None:
            rows.append([D, closed, None, None, "FAIL(no-convergence)"])
            worst = max(worst, EXIT_NUMERIC)
            continue
        diff = abs(closed - solver)
        ok = diff <= tol
        rows.append([D, closed, solver, diff, "pass" if ok else "FAIL"])
        if not ok:
            worst = max(worst, EXIT_TOLERANCE)
    _write(cfg.get("out"), _csv(["D", "closed_form", "solver", "abs_diff", "status"], rows))
    return worst


# ---------------------------------------------------------------------------
# gauss
# ---------------------------------------------------------------------------


def gauss_record(model, D, Q=None, horizon=0, seed=0, burn_in=1000):
    sol = solve(model, D, Q=Q)
    cap = capacity(sol.channel_powers, sol.Q)
    rec = {
        "D": D,
        "rate": sol.rate,
        "eigs": [float(v) for v in sol.eigs],
        "delta": [float(v) for v in sol.delta],
        "xi": sol.water_level,
        "riccati_residual": sol.riccati_residual,
        "capacity": cap,
        "matching_gap": cap - sol.rate,
        "sim_distortion": None,
        "sim_stderr": None,
    }
    if horizon:
        rep = simulate(RealizationConfig(model, sol, horizon, seed, min(burn_in, horizon - 1)))
        rec["sim_distortion"] = rep.empirical_distortion
        rec["sim_stderr"] = rep.distortion_stderr
        rec["sim_expected"] = rep.expected_distortion
    return rec


def _gauss_point(args):
    return gauss_record(*args)


GAUSS_CSV = ["D", "rate", "xi", "riccati_residual", "capacity", "matching_gap", "sim_distortion"]


def cmd_gauss(cfg):
    model = _model(cfg)
    grid = parse_grid(cfg.get("D_grid", "0.25"))
    if any(D <= 0 for D in grid):
        raise ConfigError("D_grid", "distortions must be positive")
    Q = _parse_Q(cfg.get("Q"))
    seed = _seed(cfg)
    horizon = int(cfg.get("horizon", 0))
    if horizon < 0:
        raise ConfigError("horizon", "must be nonnegative")
    res_tol = _positive(cfg, "tol", 1e-9)
    gap_tol = _positive(cfg, "matching_tol", 1e-12)
    # each grid point gets its own seed so records are independent of the job layout
    items = [(model, D, Q, horizon, seed + i, 1000) for i, D in enumerate(grid)]
    records = _map(_gauss_point, items, cfg.get("jobs"))

    status = EXIT_OK
    for rec in records:
        bad = rec["riccati_residual"] > res_tol or abs(rec["matching_gap"]) > gap_tol
        if rec["sim_distortion"] is not None:
            bad |= abs(rec["sim_distortion"] - rec["sim_expected"]) > SIM_SIGMAS * rec["sim_stderr"]
        rec["ok"] = not bad
        if bad:
            status = EXIT_TOLERANCE

    if cfg.get("format", "json") == "csv":
        text = _csv(GAUSS_CSV, [[r[k] for k in GAUSS_CSV] for r in records])
    else:
        doc = {
            "model": model.to_dict(),
            "tolerances": {"riccati_residual": res_tol, "matching_gap": gap_tol},
            "seed": seed,
            "horizon": horizon,
            "records": records,
        }
        text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    _write(cfg.get("out"), text)
    return status


# ---------------------------------------------------------------------------
# rate-loss
# ---------------------------------------------------------------------------


def rate_loss_rows(model, grid, floor=-1e-6):
    spec = spectrum_from_model(model)
    rows, violated = [], False
    for D in grid:
        r_na = solve(model, D).rate
        r_c = classical_rdf(spec, D)
        rl = r_na - r_c
        violated |= rl < floor
        rows.append([D, r_na, r_c, rl])
    return rows, violated


def cmd_rate_loss(cfg):
    model = _model(cfg)
    if not model.is_stable:
        raise ConfigError("model", "rate loss needs a stable A")
    grid = parse_grid(cfg.get("D_grid", "0.1:0.1:1"))
    if any(D <= 0 for D in grid):
        raise ConfigError("D_grid", "distortions must be positive")
    rows, violated = rate_loss_rows(model, grid)
    out = cfg.get("out")
    _write(out, _csv(["D", "R_na", "R_classical", "RL"], rows))
    if out not in (None, "-"):
        write_plot_script(out, ["R_na", "R_classical", "RL"], "Gaussian source: NRDF vs noncausal RDF")
    return EXIT_TOLERANCE if violated else EXIT_OK


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------


def _prob(cfg, key):
    if cfg.get(key) is None:
        raise ConfigError(key, "is required")
    try:
        v = float(cfg[key])
    except (TypeError, ValueError):
        raise ConfigError(key, f"not a number: {cfg[key]!r}") from None
    if not 0.0 < v < 1.0:
        raise ConfigError(key, f"must lie in (0, 1), got {v}")
    return v


def _positive(cfg, key, default):
    v = cfg.get(key, default)
    try:
        v = float(v)
    except (TypeError, ValueError):
        raise ConfigError(key, f"not a number: {v!r}") from None
    if not v > 0:
        raise ConfigError(key, f"must be positive, got {v}")
    return v


def _seed(cfg):
    try:
        seed = int(cfg.get("seed", 0))
    except (TypeError, ValueError):
        raise ConfigError("seed", f"not an integer: {cfg.get('seed')!r}") from None
    if not 0 <= seed < 2**64:
        raise ConfigError("seed", "must be a 64-bit unsigned integer")
    return seed


def _model(cfg):
    if cfg.get("model") is None:
        raise ConfigError("model", "a model file is required")
    return load_model(cfg["model"])


COMMANDS = {
    "bsms-curve": cmd_bsms_curve,
    "bsms-verify": cmd_bsms_verify,
    "gauss": cmd_gauss,
    "rate-loss": cmd_rate_loss,
}


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the validation code rather than argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="nrdf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file with default values for any option")
        p.add_argument("--D-grid", dest="D_grid", help="lo:step:hi or comma list")
        p.add_argument("--out", help="output path (default stdout)")
        p.add_argument("--jobs", type=int, help="worker processes for grid points")

    p = sub.add_parser("bsms-curve", help="BSMS rate curves as CSV plus a plot script")
    common(p)
    p.add_argument("--p", type=float)

    p = sub.add_parser("bsms-verify", help="closed form vs iterative solver")
    common(p)
    p.add_argument("--p", type=float)
    p.add_argument("--tol", type=float)

    p = sub.add_parser("gauss", help="Gaussian NRDF, matching check and simulation")
    common(p)
    p.add_argument("--model")
    p.add_argument("--Q", help="comma list of channel noise variances")
    p.add_argument("--tol", type=float, help="Riccati residual tolerance")
    p.add_argument("--seed", type=int)
    p.add_argument("--horizon", type=int, help="simulation length (0 skips simulation)")
    p.add_argument("--format", choices=["csv", "json"])

    p = sub.add_parser("rate-loss", help="NRDF minus noncausal RDF for a stable model")
    common(p)
    p.add_argument("--model")
    return parser


def resolve_config(args):
    cfg = {}
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("config", f"cannot load {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config", "top level must be an object")
        cfg.update(loaded)
    for key, value in vars(args).items():
        if key in ("config", "command", "verbose") or value is None:
            continue
        cfg[key] = value
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (ConvergenceError, DegenerateChainError, FilterDivergenceError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except DomainError as exc:
        log.error("invalid input: %s", exc)
        return EXIT_INVALID
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
