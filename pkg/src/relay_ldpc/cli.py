"""Command line front end: capacity, charts, design, build, simulate.

Every command reads one JSON run configuration (--config). Unknown keys are
rejected before any computation. Output files are deterministic given the
inputs and seed; the only wall-clock field lives under the "metadata" key.

Exit codes: 0 success, 2 configuration error, 3 infeasible design,
4 numerical or construction failure at run time.
"""

from __future__ import annotations

import argparse
import copy
import csv
import datetime
import io
import json
import logging
import math
import sys

import jsonschema

from . import __version__
from .channel import (RelayChannelParams, bi_awgn_capacity, gaussian_capacity,
                      solve_optimal_alpha)
from .codegen import build_two_level_code, dump_code, load_code
from .errors import (ConfigError, Infeasible, RelayLdpcError, Unbounded)
from .exitchart import DegreeDistribution, exit_chart_set
from .optimizer import (DEG2_LIMIT, DesignSpec, TwoLevelDesign, backoff_design,
                        run_design, verify_design)
from .simulator import SimConfig, run_sweep, write_csv

log = logging.getLogger("relay_ldpc")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERIC = 0, 2, 3, 4

_DIST = {"type": "object", "minProperties": 1,
         "patternProperties": {"^[0-9]+$": {"type": "number", "minimum": 0}},
         "additionalProperties": False}
_POS = {"type": "number", "exclusiveMinimum": 0}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["channel"],
    "properties": {
        "channel": {
            "type": "object", "additionalProperties": False,
            "required": ["P", "P1", "N1", "N2"],
            "properties": {"P": _POS, "P1": {"type": "number", "minimum": 0},
                           "N1": _POS, "N2": _POS},
        },
        "design": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "rho1": _DIST, "rho2prime": _DIST, "rho3": _DIST,
                "min_var_degree": {"type": "integer", "minimum": 2},
                "max_var_degree": {"type": "integer", "minimum": 2, "maximum": 30},
                "margin": {"type": "number", "minimum": 0, "maximum": 0.5},
                "n_points": {"type": "integer", "minimum": 10},
                "decades": _POS,
                "method": {"enum": ["semi", "ga"]},
                "h2_excess": {"type": ["number", "null"], "minimum": 0},
                "mu_grid": {"type": "integer", "minimum": 2},
                "r_tol": _POS,
                "backoff": {"type": ["number", "null"], "exclusiveMinimum": 0, "maximum": 1},
                "deg2_limit": {"type": ["number", "null"], "exclusiveMinimum": 0},
            },
        },
        "code": {
            "type": "object", "additionalProperties": False,
            "properties": {"n": {"type": "integer", "minimum": 8},
                           "seed": {"type": "integer", "minimum": 0},
                           "peg_depth": {"type": "integer", "minimum": 1}},
        },
        "sim": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "blocks": {"type": "integer", "minimum": 2},
                "trials": {"type": "integer", "minimum": 1},
                "max_bp_iters": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "genie_relay": {"type": "boolean"},
                "genie_bin": {"type": "boolean"},
                "noise_scales": {"type": "array", "minItems": 1,
                                 "items": {"type": "number", "minimum": 0}},
                "stage1_mode": {"enum": ["mixture", "gaussian"]},
                "workers": {"type": "integer", "minimum": 1},
                "chunk": {"type": "integer", "minimum": 1},
            },
        },
    },
}

DEFAULTS = {
    "design": {"rho1": {"12": 1.0}, "rho2prime": {"12": 1.0}, "rho3": {"5": 1.0},
               "min_var_degree": 2, "max_var_degree": 30, "margin": 1e-4, "n_points": 200,
               "decades": 6.0, "method": "semi", "h2_excess": 0.1, "mu_grid": 21,
               "r_tol": 1e-4, "backoff": None, "deg2_limit": DEG2_LIMIT},
    "code": {"n": 4096, "seed": 1, "peg_depth": 3},
    "sim": {"blocks": 4, "trials": 100, "max_bp_iters": 100, "seed": 0,
            "genie_relay": False, "genie_bin": False, "noise_scales": [1.0],
            "stage1_mode": "mixture", "workers": 1, "chunk": 50},
}


# ---------------------------------------------------------------------------
# configuration

def _key_line(text: str, path) -> int | None:
    """Best-effort line of the last key on `path` inside the JSON text."""
    keys = [p for p in path if isinstance(p, str)]
    if not keys:
        return None
    pos = 0
    for k in keys:
        hit = text.find(json.dumps(k), pos)
        if hit < 0:
            return None
        pos = hit
    return text.count("\n", 0, pos) + 1


def parse_config(text: str, source: str = "<config>") -> dict:
    """Validate a JSON run configuration and fill in defaults."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = list(err.absolute_path)
        where = "/" + "/".join(str(p) for p in path)
        line = _key_line(text, path)
        if err.validator == "additionalProperties" and isinstance(err.instance, dict):
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            line = _key_line(text, path + extra[:1]) or line
        loc = f"{source}:{line}" if line else source
        raise ConfigError(f"{loc}: {where}: {err.message}")
    cfg = copy.deepcopy(DEFAULTS)
    cfg["channel"] = dict(raw["channel"])
    for section in ("design", "code", "sim"):
        cfg[section].update(raw.get(section, {}))
    return cfg


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config(text, path)


def channel_from(cfg: dict) -> RelayChannelParams:
    ch = cfg["channel"]
    return RelayChannelParams(float(ch["P"]), float(ch["P1"]), float(ch["N1"]), float(ch["N2"]))


def _dist(mapping) -> DegreeDistribution:
    return DegreeDistribution.from_dict({int(k): float(v) for k, v in mapping.items()})


def spec_from(cfg: dict, snrs) -> DesignSpec:
    d = cfg["design"]
    return DesignSpec(snrs.snr1, snrs.snr2, snrs.snr3, _dist(d["rho1"]), _dist(d["rho2prime"]),
                      _dist(d["rho3"]), max_var_degree=d["max_var_degree"],
                      margin=d["margin"], n_points=d["n_points"], decades=d["decades"],
                      method=d["method"], min_var_degree=d["min_var_degree"],
                      h2_excess=d["h2_excess"])


def _metadata() -> dict:
    now = datetime.datetime.now(datetime.timezone.utc).replace(microsecond=0)
    return {"created": now.isoformat(), "version": __version__}


def _write_text(path: str | None, text: str):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# commands

def capacity_report(params: RelayChannelParams) -> dict:
    split, targets, snrs = solve_optimal_alpha(params)
    lin = (snrs.snr1, snrs.snr2, snrs.snr3)
    c_bi = [bi_awgn_capacity(s) for s in lin]
    return {
        "channel": params.to_dict(),
        "relay_active": params.P1 > 0 and split.alpha < 1.0,
        "alpha": split.alpha,
        "capacity": targets.capacity,
        "R_relay": targets.r_relay,
        "R0": targets.r0,
        "R_dest": targets.r_dest,
        "snr": {"linear": list(lin), "db": list(snrs.db())},
        "gaussian_ceiling": [gaussian_capacity(s) for s in lin],
        "binary_ceiling": c_bi,
        "binary_rate_ceiling": min(c_bi[0], c_bi[1] + c_bi[2]),
    }


def _fmt_db(x):
    return "-inf" if x == -math.inf else f"{x:8.3f}"


def cmd_capacity(cfg: dict, args) -> int:
    rep = capacity_report(channel_from(cfg))
    out = io.StringIO()
    if not rep["relay_active"]:
        out.write("relay inactive, α*=1\n")
    out.write(f"alpha*   {rep['alpha']:.6f}\n")
    out.write(f"C        {rep['capacity']:.6f} bits/use\n")
    out.write(f"R0       {rep['R0']:.6f} bits/use\n")
    out.write("link   snr        dB   gaussian   binary\n")
    for i, name in enumerate(("1", "2", "3")):
        out.write(f"snr{name}  {rep['snr']['linear'][i]:8.5f}  {_fmt_db(rep['snr']['db'][i])}"
                  f"  {rep['gaussian_ceiling'][i]:8.5f}  {rep['binary_ceiling'][i]:8.5f}\n")
    out.write(f"binary-input rate ceiling min(c1, c2 + c3) = {rep['binary_rate_ceiling']:.6f}\n")
    text = json.dumps(rep, indent=1, sort_keys=True) + "\n"
    sys.stdout.write(out.getvalue())
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _active_snrs(cfg):
    params = channel_from(cfg)
    split, targets, snrs = solve_optimal_alpha(params)
    if params.P1 == 0 or snrs.snr3 <= 0:
        raise Infeasible("relay inactive, α*=1: no bin index to design for")
    return params, split, snrs


def cmd_charts(cfg: dict, args) -> int:
    _, _, snrs = _active_snrs(cfg)
    spec = spec_from(cfg, snrs)
    links = (("snr1", spec.snr1, spec.rho1), ("snr2", spec.snr2, spec.rho2prime),
             ("snr3", spec.snr3, spec.rho3))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["link", "snr", "degree", "p_in", "p_out"])
    for name, snr, rho in links:
        cs = exit_chart_set(snr, rho, spec.degrees, spec.grid(snr), spec.method)
        mat = cs.matrix(spec.degrees)
        for row, deg in zip(mat, spec.degrees):
            for p, q in zip(cs.grid.points, row):
                w.writerow([name, repr(float(snr)), deg, repr(float(p)), repr(float(q))])
    _write_text(args.out, buf.getvalue())
    return EXIT_OK


def design_document(cfg: dict, log_progress=None) -> tuple[TwoLevelDesign, dict]:
    params, split, snrs = _active_snrs(cfg)
    spec = spec_from(cfg, snrs)
    d = cfg["design"]
    design, charts = run_design(spec, mu_grid=d["mu_grid"], r_tol=d["r_tol"])
    report = {"base": verify_design(spec, design)}
    if d["backoff"] is not None and d["backoff"] < 1.0:
        base = design
        design = backoff_design(spec, base, d["backoff"], charts, deg2_limit=d["deg2_limit"])
        design.meta["base"] = {"r": base.r, "r0_star": base.r0_star, "mu": base.mu,
                               "digest": base.digest()}
        report["backoff"] = verify_design(spec, design)
    design.meta.update({"channel": params.to_dict(), "alpha": split.alpha,
                        "snr": [snrs.snr1, snrs.snr2, snrs.snr3],
                        "grid": spec.grid_descriptor(), "method": spec.method,
                        "margin": spec.margin, "h2_excess": spec.h2_excess})
    return design, report


def cmd_design(cfg: dict, args) -> int:
    design, report = design_document(cfg)
    doc = design.to_dict()
    doc["metadata"] = _metadata()
    text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    snr = design.meta["snr"]
    c1, c2, c3 = (bi_awgn_capacity(s) for s in snr)
    ceiling = min(c1, c2 + design.r0_star)
    print(f"r        {design.r:.6f}   ceiling {ceiling:.6f}   gap {ceiling - design.r:.6f}")
    print(f"R0*      {design.r0_star:.6f}   ceiling {c3:.6f}   gap {c3 - design.r0_star:.6f}")
    print(f"mu       {design.mu:.4f}")
    print(f"lambda1  {design.lambda1}")
    print(f"lambda2' {design.lambda2prime}")
    print(f"lambda3  {design.lambda3}")
    for name, rep in report.items():
        print(f"verify ({name}): {'ok' if rep['ok'] else 'FAILED'}")
    print(f"digest   {design.digest()}")
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _read_design(path: str) -> TwoLevelDesign:
    try:
        with open(path) as fh:
            return TwoLevelDesign.from_dict(json.load(fh))
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"{path}: not a design file ({exc})") from None


def cmd_build(cfg: dict, args) -> int:
    if not args.design:
        raise ConfigError("build needs --design PATH")
    if not args.out:
        raise ConfigError("build needs --out PATH")
    design = _read_design(args.design)
    c = cfg["code"]
    n = args.n if args.n is not None else c["n"]
    seed = args.seed if args.seed is not None else c["seed"]
    code, relay = build_two_level_code(design, n, seed, depth=c["peg_depth"])
    digest = dump_code(args.out, code, relay, design,
                       extra={"peg_depth": c["peg_depth"], "metadata": _metadata()})
    print(f"n={n} k1={code.k1} k2={code.k2} k3={relay.k3} message bits={code.message_length}")
    print(f"realized mu {code.realized_mu():.4f} (design {design.mu:.4f})")
    print(f"4-cycles: h1 {code.h1.four_cycles()} stacked {code.stacked.four_cycles()} "
          f"relay {relay.graph.four_cycles()}")
    log.info("code file sha256 %s", digest)
    return EXIT_OK


def cmd_simulate(cfg: dict, args) -> int:
    if not args.code:
        raise ConfigError("simulate needs --code PATH")
    try:
        code, relay, doc = load_code(args.code)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"{args.code}: not a code file ({exc})") from None
    if args.design:
        design = _read_design(args.design)
    elif "design" in doc:
        design = TwoLevelDesign.from_dict(doc["design"])
    else:
        design = None
    params = channel_from(cfg)
    split, _, _ = solve_optimal_alpha(params)
    s = cfg["sim"]
    scales = s["noise_scales"]
    if args.noise_scales:
        try:
            scales = [float(x) for x in args.noise_scales.split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"--noise-scales: cannot parse {args.noise_scales!r}") from None
        if not scales or any(x < 0 or not math.isfinite(x) for x in scales):
            raise ConfigError("--noise-scales needs nonnegative finite values")
    sim = SimConfig(params, split, code, relay, blocks=s["blocks"],
                    max_bp_iters=s["max_bp_iters"],
                    seed=args.seed if args.seed is not None else s["seed"],
                    genie_relay=args.genie_relay or s["genie_relay"],
                    genie_bin=args.genie_bin or s["genie_bin"],
                    trials=args.trials if args.trials is not None else s["trials"],
                    stage1_mode=s["stage1_mode"], workers=s["workers"], chunk=s["chunk"],
                    design=design)
    reports = run_sweep(sim, scales)
    print("scale     relay_bler  bin_bler  dest_bler  95% interval        e2e_ber")
    for rep in reports:
        lo, hi = rep.interval("dest")
        print(f"{rep.noise_scale:<8g}  {rep.relay_bler:10.4g}  {rep.bin_bler:8.4g}  "
              f"{rep.dest_bler:9.4g}  [{lo:.4f}, {hi:.4f}]  {rep.e2e_ber:.4g}")
    if args.out:
        write_csv(args.out, reports)
    else:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(reports[0].csv_row()), lineterminator="\n")
        w.writeheader()
        for rep in reports:
            w.writerow(rep.csv_row())
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


COMMANDS = {"capacity": cmd_capacity, "charts": cmd_charts, "design": cmd_design,
            "build": cmd_build, "simulate": cmd_simulate}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="relay-ldpc", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output file (default stdout)")
        p.add_argument("--verbose", action="store_true")
        if name == "build":
            p.add_argument("--design", help="design JSON")
            p.add_argument("--n", type=int, help="block length")
            p.add_argument("--seed", type=int)
        if name == "simulate":
            p.add_argument("--code", help="code file written by build")
            p.add_argument("--design", help="design JSON (default: the copy in the code file)")
            p.add_argument("--seed", type=int)
            p.add_argument("--trials", type=int)
            p.add_argument("--genie-relay", action="store_true")
            p.add_argument("--genie-bin", action="store_true")
            p.add_argument("--noise-scales", help='comma separated, e.g. "0.5,1.0,2.0"')
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if getattr(args, "trials", None) is not None and args.trials < 1:
            raise ConfigError("--trials must be at least 1")
        if getattr(args, "n", None) is not None and args.n < 8:
            raise ConfigError("--n must be at least 8")
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (Infeasible, Unbounded) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (RelayLdpcError, ArithmeticError, ValueError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
