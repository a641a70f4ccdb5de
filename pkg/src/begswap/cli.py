"""Command-line experiment driver.

Subcommands: ``phase``, ``gap-scan``, ``verify``, ``mix``, ``couple`` and
``landscape``.  Every output file carries the full resolved config.  Exit
codes: 0 success, 1 invalid config, 2 check failure, 3 resource cap.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .chains import ColoringState, coupling_time, lumped_metropolis, lumped_swapping_kernel, tempering_kernel
from .checks import DEFAULT_VERIFY, run_checks
from .config import DEFAULT
from .errors import CapError, DomainError, SizeError, SolverError
from .landscape import (
    K_TRICRITICAL,
    LOG4,
    a_max_points,
    beta_c1_of_k,
    beta_c2_of_k,
    choose_epsilon,
    classify_phase,
    critical_points,
    export_phase_rows,
    k1_critical,
    k2_critical,
    log_stripe_mass_ratio,
    phase_rows,
)
from .model import LadderSpec, macro_index
from .partition import build_gl_partition
from .simulate import integrated_autocorr, simulate_metropolis, simulate_swapping, simulate_tempering
from .spectral import spectral_gap

EXIT_OK, EXIT_CONFIG, EXIT_CHECK, EXIT_CAP = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "phase": {"betas": {"start": 0.1, "stop": 10.0, "num": 100}, "ks": [0.5, 1.0, 1.05, 1.2, 2.0],
              "include_tricritical": True},
    "gap-scan": {"k": 1.05, "beta": {"factor": 1.2, "of": "beta_c1"},
                 "n_list": [8, 10, 12, 14, 16, 18, 20, 22, 24], "m_rule": "n"},
    "verify": dict(DEFAULT_VERIFY),
    "mix": {"k": 1.2, "beta": {"factor": 1.5, "of": "beta_c2"}, "n": 200, "m_rule": "n",
            "metropolis_sweeps": 10**7, "swapping_sweeps": 10**7, "stop_visits": 3,
            "tempering": False, "tempering_sweeps": 10**5, "cap_sweeps": 10**8},
    "couple": {"n_list": [10, 20, 40], "trials": 500},
    "landscape": {"beta": 2.0, "k": 1.05, "n_list": [20, 40, 80, 160]},
}


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path) -> dict:
    """JSON object, or ``key = value`` lines (values parsed as JSON when possible)."""
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        obj = {}
        for ln, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {ln}: expected key = value")
            key, val = line.split("=", 1)
            obj[key.strip()] = _parse_value(val.strip())
    if not isinstance(obj, dict):
        raise ConfigError("config must be a mapping")
    return obj


def resolve_beta(spec, k: float) -> float:
    """A number, or ``{"factor": f, "of": "beta_c1" | "beta_c2"}`` relative to a critical value."""
    if isinstance(spec, (int, float)):
        beta = float(spec)
    elif isinstance(spec, dict) and spec.get("of") in ("beta_c1", "beta_c2"):
        base = beta_c1_of_k(k) if spec["of"] == "beta_c1" else beta_c2_of_k(k)
        beta = float(spec.get("factor", 1.0)) * base
    else:
        raise ConfigError(f"bad beta spec {spec!r}")
    if not beta > 0:
        raise ConfigError("beta must be positive")
    return beta


def _grid(spec) -> list[float]:
    if isinstance(spec, dict):
        return np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"])).tolist()
    return [float(v) for v in spec]


def _m_of(rule, n: int) -> int:
    if rule == "n":
        return n
    if isinstance(rule, int) and rule >= 1:
        return rule
    raise ConfigError(f"bad m_rule {rule!r}")


def build_config(command: str, args) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS[command]))
    if args.config:
        user = load_config(args.config)
        unknown = set(user) - set(cfg) - {"seed", "cap_states", "threads"}
        if unknown:
            raise ConfigError(f"unknown keys for {command}: {sorted(unknown)}")
        cfg.update(user)
    cfg.setdefault("seed", 12345)
    cfg.setdefault("cap_states", DEFAULT.swap_state_cap)
    cfg.setdefault("threads", 1)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.cap_states is not None:
        cfg["cap_states"] = args.cap_states
    if args.threads is not None:
        cfg["threads"] = args.threads
    _validate(command, cfg)
    cfg["command"] = command
    cfg["version"] = __version__
    return cfg


def _validate(command: str, cfg: dict) -> None:
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    if not isinstance(cfg["cap_states"], int) or cfg["cap_states"] < 1:
        raise ConfigError("cap_states must be a positive integer")
    if not isinstance(cfg["threads"], int) or cfg["threads"] < 1:
        raise ConfigError("threads must be a positive integer")
    for key in ("n_list",):
        if key in cfg and not (cfg[key] and all(isinstance(n, int) and n >= 2 for n in cfg[key])):
            raise ConfigError(f"{key} must be a non-empty list of integers >= 2")
    if "k" in cfg and not (isinstance(cfg["k"], (int, float)) and cfg["k"] > 0):
        raise ConfigError("k must be positive")
    if command == "phase":
        if not _grid(cfg["betas"]) or not cfg["ks"]:
            raise ConfigError("empty grid")
    if command == "mix" and cfg["n"] < 2:
        raise ConfigError("n must be >= 2")
    if command == "couple" and cfg["trials"] < 1:
        raise ConfigError("trials must be positive")


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def write_json(path: Path, cfg: dict, payload: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean({"config": cfg, **payload}), indent=1, sort_keys=True) + "\n")
    return path


def write_csv(path: Path, cfg: dict, header: list[str], rows: list[list]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write("# config: " + json.dumps(_clean(cfg), sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return path


def _fit(x, y) -> dict:
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = np.isfinite(x) & np.isfinite(y)
    if ok.sum() < 2:
        return {"slope": float("nan"), "intercept": float("nan"), "r2": float("nan")}
    x, y = x[ok], y[ok]
    slope, icpt = np.polyfit(x, y, 1)
    ss = ((y - y.mean()) ** 2).sum()
    r2 = 1.0 - ((y - slope * x - icpt) ** 2).sum() / ss if ss > 0 else 1.0
    return {"slope": float(slope), "intercept": float(icpt), "r2": float(r2)}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_phase(cfg: dict, out: Path) -> int:
    betas = _grid(cfg["betas"])
    ks = [float(k) for k in cfg["ks"]]
    rows = phase_rows(betas, ks)
    if cfg["include_tricritical"]:
        rows += phase_rows([LOG4], [k2_critical(LOG4)])
    export_phase_rows(rows, out / "phase", header=cfg)
    curve = []
    for b in betas:
        if b <= LOG4:
            curve.append([b, "K_c2", k2_critical(b), ""])
        else:
            try:
                curve.append([b, "K_c1", k1_critical(b), ""])
            except SolverError as exc:
                curve.append([b, "K_c1", float("nan"), str(exc)])
    curve.append([LOG4, "tricritical", k2_critical(LOG4), ""])
    write_csv(out / "phase_curves.csv", cfg, ["beta", "curve", "k", "error"], curve)
    failed = sum(1 for r in rows if r["error"])
    print(f"phase: {len(rows)} rows, {failed} solver failures")
    return EXIT_OK


def _gap_cell(args):
    n, m, beta, k, cap = args
    ladder = LadderSpec(beta, m)
    row = {"n": n, "m": m, "beta": beta, "k": k}
    row["metropolis"] = spectral_gap(lumped_metropolis((beta, k), n)).gap
    row["tempering"] = spectral_gap(tempering_kernel(ladder, k, n)[2]).gap
    size = len(macro_index(n)) ** (m + 1)
    if size > cap:
        row["swapping"] = float("nan")
        row["swapping_status"] = "simulation-only"
    else:
        row["swapping"] = spectral_gap(lumped_swapping_kernel(ladder, k, n, cap=cap)[2]).gap
        row["swapping_status"] = "exact"
    return row


def cmd_gap_scan(cfg: dict, out: Path) -> int:
    k = float(cfg["k"])
    beta = resolve_beta(cfg["beta"], k)
    cells = [(n, _m_of(cfg["m_rule"], n), beta, k, cfg["cap_states"]) for n in cfg["n_list"]]
    if cfg["threads"] > 1:
        with ProcessPoolExecutor(cfg["threads"]) as pool:
            rows = list(pool.map(_gap_cell, cells))
    else:
        rows = [_gap_cell(c) for c in cells]
    ns = [r["n"] for r in rows]
    fits = {}
    for chain in ("metropolis", "tempering", "swapping"):
        lg = np.log([r[chain] for r in rows])
        fits[chain] = {"log_gap_vs_n": _fit(ns, lg), "log_gap_vs_log_n": _fit(np.log(ns), lg)}
    write_csv(out / "gap_scan.csv", cfg,
              ["n", "m", "beta", "k", "gap_metropolis", "gap_tempering", "gap_swapping", "swapping_status"],
              [[r["n"], r["m"], r["beta"], r["k"], r["metropolis"], r["tempering"], r["swapping"],
                r["swapping_status"]] for r in rows])
    write_json(out / "gap_scan.json", cfg, {"beta": beta, "rows": rows, "fits": fits})
    for chain, f in fits.items():
        print(f"gap-scan {chain}: log-gap slope {f['log_gap_vs_n']['slope']:.4g} "
              f"(R2 {f['log_gap_vs_n']['r2']:.4f})")
    return EXIT_OK


def cmd_verify(cfg: dict, out: Path) -> int:
    params = {k: v for k, v in cfg.items() if k in DEFAULT_VERIFY}
    results = run_checks(params)
    write_json(out / "verify.json", cfg, {"checks": [r.to_dict() for r in results],
                                          "all_passed": all(r.passed for r in results)})
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name} (tol {r.tolerance:g}, {r.runtime:.2f}s)")
        for f in r.failures:
            print(f"    {f}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def cmd_mix(cfg: dict, out: Path) -> int:
    k, n, seed = float(cfg["k"]), int(cfg["n"]), cfg["seed"]
    beta = resolve_beta(cfg["beta"], k)
    m = _m_of(cfg["m_rule"], n)
    ladder = LadderSpec(beta, m)
    _, pair = a_max_points((beta, k))
    if pair is None:
        raise ConfigError("the top rung has a single maximum; no basins to count")
    z = pair[1].a_plus - pair[1].a_minus
    if cfg["tempering"] and k >= K_TRICRITICAL:
        raise ConfigError("tempering runs need a stripe width, which exists only for k < K_c")
    cap = cfg["cap_sweeps"]
    runs = {}
    met = simulate_metropolis((beta, k), n, seed, cfg["metropolis_sweeps"], z, cap=cap)
    runs["metropolis"] = met
    glp = None
    if k > K_TRICRITICAL:
        glp = build_gl_partition(ladder, k, n)
    sw = simulate_swapping(ladder, k, n, seed, cfg["swapping_sweeps"], z,
                           stop_visits=cfg["stop_visits"], gl_partition=glp, cap=cap)
    runs["swapping"] = sw
    if cfg["tempering"]:
        eps = choose_epsilon(k)
        runs["tempering"] = simulate_tempering(ladder, k, n, seed, cfg["tempering_sweeps"], z, eps, cap=cap)
    rows, report = [], {}
    for name, res in runs.items():
        tau = integrated_autocorr(res.s_top) if res.sweeps > 1 else float("nan")
        rows.append([name, res.sweeps, res.visits_plus, res.visits_minus, res.basins_visited, tau])
        report[name] = {**res.to_dict(), "tau_int": tau}
        if "ag_occupation" in res.extra:
            report[name]["ag_occupation"] = res.extra["ag_occupation"]
    write_csv(out / "mix.csv", cfg,
              ["chain", "sweeps", "visits_plus", "visits_minus", "basins_visited", "tau_int"], rows)
    write_json(out / "mix.json", cfg, {"beta": beta, "z": z, "runs": report})
    for r in rows:
        print(f"mix {r[0]}: {r[1]} sweeps, visits +{r[2]} -{r[3]}")
    return EXIT_OK


def cmd_couple(cfg: dict, out: Path) -> int:
    rows, ok = [], True
    for n in cfg["n_list"]:
        rng = np.random.default_rng([cfg["seed"], n])
        base = np.array([-1] * (n // 3) + [0] * (n // 3) + [1] * (n - 2 * (n // 3)), dtype=np.int8)
        times, mono = [], True
        for _ in range(cfg["trials"]):
            steps, psi = coupling_time(ColoringState(rng.permutation(base)),
                                       ColoringState(rng.permutation(base)), rng)
            times.append(steps)
            mono &= bool(np.all(np.diff(psi) <= 0))
        mean = float(np.mean(times))
        passed = mean <= n ** 4 and mono
        ok &= passed
        rows.append([n, cfg["trials"], mean, int(np.max(times)), float(n ** 4), int(mono), int(passed)])
    fit = _fit(np.log([r[0] for r in rows]), np.log([r[2] for r in rows]))
    write_csv(out / "couple.csv", cfg,
              ["n", "trials", "mean", "max", "bound", "psi_monotone", "passed"], rows)
    write_json(out / "couple.json", cfg, {"rows": rows, "exponent": fit})
    print(f"couple: scaling exponent {fit['slope']:.3f}; {'all within N^4' if ok else 'FAILED'}")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_landscape(cfg: dict, out: Path) -> int:
    beta, k = resolve_beta(cfg["beta"], float(cfg["k"])), float(cfg["k"])
    pts = critical_points((beta, k))
    pc = classify_phase((beta, k))
    payload = {
        "beta": beta, "k": k, "label": pc.label, "order": pc.order,
        "critical_points": [{"a": c.a.as_array(), "f": c.f_value, "kind": c.kind, "z": c.z}
                            for c in pts],
    }
    if beta <= LOG4:
        payload["k_c2"] = k2_critical(beta)
    else:
        try:
            payload["k_c1"] = k1_critical(beta)
        except SolverError as exc:
            payload["k_c1_error"] = str(exc)
    try:
        eps = choose_epsilon(k)
        payload["epsilon"] = eps
        payload["log_stripe_ratio"] = {n: log_stripe_mass_ratio((beta, k), n, eps)
                                       for n in cfg["n_list"] if eps * n >= 1}
    except (DomainError, SolverError) as exc:
        payload["epsilon_error"] = str(exc)
    write_json(out / "landscape.json", cfg, payload)
    print(f"landscape: beta={beta:.6g} k={k:.6g} {pc.label}")
    return EXIT_OK


COMMANDS = {"phase": cmd_phase, "gap-scan": cmd_gap_scan, "verify": cmd_verify, "mix": cmd_mix,
            "couple": cmd_couple, "landscape": cmd_landscape}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="begswap", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON or key = value file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir", default="out")
        p.add_argument("--threads", type=int)
        p.add_argument("--cap-states", type=int)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = build_config(args.command, args)
        return COMMANDS[args.command](cfg, Path(args.out_dir))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CapError, SizeError) as exc:
        print(f"resource cap: {exc}", file=sys.stderr)
        return EXIT_CAP


if __name__ == "__main__":
    sys.exit(main())
