"""Batch experiment driver.

Five subcommands (simulate, predict, rates, online, riccati) take a JSON
config plus flag overrides (flags win), fan independent seeds across worker
threads, and write a versioned summary JSON next to delimited trajectory
files.  Every numeric verdict in the summary carries the tolerance it was
checked against, and the fully resolved config is echoed back so a bundle
is self-describing.  Exit codes: 0 success, 1 config error, 2 numerical
non-convergence or divergence, 3 analysis ambiguity.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .closed_form import closed_form_q
from .energy import weighted_rayleigh
from .errors import (
    ConfigError,
    DivergenceError,
    IntegrationError,
    OjaflowError,
    SigmaAmbiguityError,
)
from .flows import SkewFieldSpec, StiefelPoint, WeightVector, make_flow
from .integrate import (
    IntegratorConfig,
    integrate_riccati,
    integrate_to_limit,
    rate_aware_max_time,
)
from .flows import riccati_closed_form
from .linalg import SpectralMatrix, orthonormalize, sym_eigendecomposition
from .online import LearningSchedule, SampleStream, run_online
from .stable_manifold import convergence_rates, is_stable_basin, predict_limit, verify_exponential

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2
EXIT_AMBIGUOUS = 3

# A 4x4 orthogonal start whose leading entry vanishes, exercising a
# non-identity column permutation: columns converge to (-e3, e1, e2, e4).
EXAMPLE_Q1 = np.array(
    [
        [0.0, math.sqrt(2) / 2, -math.sqrt(3) / 3, math.sqrt(6) / 6],
        [0.0, math.sqrt(2) / 2, math.sqrt(3) / 3, -math.sqrt(6) / 6],
        [-math.sqrt(2) / 2, 0.0, math.sqrt(6) / 6, math.sqrt(3) / 3],
        [math.sqrt(2) / 2, 0.0, math.sqrt(6) / 6, math.sqrt(3) / 3],
    ]
)

_Q0_NAMES = ("identity", "random", "example-q1", "paper-example-Q1")


def _float_list(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"cannot parse float list {text!r}: {exc}") from None


def resolve_eigenvalues(cfg):
    spec = cfg.get("eigenvalues", None)
    n = cfg.get("n", None)
    if spec is None:
        if n is None:
            raise ConfigError("config needs 'eigenvalues' or 'n' (uniform-gap spectrum)")
        return [float(v) for v in range(int(n), 0, -1)]
    if isinstance(spec, str):
        parts = spec.split()
        if len(parts) == 2 and parts[0] == "uniform-gap":
            return [float(v) for v in range(int(parts[1]), 0, -1)]
        return _float_list(spec)
    values = [float(v) for v in spec]
    if n is not None and len(values) != int(n):
        raise ConfigError(f"'n'={n} contradicts {len(values)} eigenvalues")
    return values


def build_spectral(cfg):
    values = resolve_eigenvalues(cfg)
    arr = np.asarray(values, dtype=float)
    if arr.size > 1 and np.any(arr[:-1] <= arr[1:]):
        raise ConfigError(f"eigenvalues must strictly descend, got {values}")
    if np.any(arr <= 0):
        raise ConfigError("eigenvalues must be positive")
    return SpectralMatrix.from_eigenvalues(arr), values


def build_weights(cfg, n):
    w = cfg.get("weights", None)
    if w is None:
        return WeightVector.default(n), [float(v) for v in range(n, 0, -1)]
    arr = np.asarray([float(v) for v in w], dtype=float)
    if arr.size != n:
        raise ConfigError(f"{arr.size} weights for dimension {n}")
    if arr.size > 1 and np.any(arr[:-1] <= arr[1:]):
        raise ConfigError("weights must strictly descend")
    return WeightVector(arr), [float(v) for v in arr]


def random_orthogonal(n, rng):
    m = rng.standard_normal((n, n))
    return orthonormalize(m)


def build_q0(cfg, n, rng):
    spec = cfg.get("q0", "random")
    if isinstance(spec, list):
        arr = np.asarray(spec, dtype=float)
        try:
            return StiefelPoint(arr), "explicit"
        except OjaflowError as exc:
            raise ConfigError(f"explicit q0 rejected: {exc}") from None
    if spec == "identity":
        return StiefelPoint(np.eye(n)), "identity"
    if spec == "random":
        return StiefelPoint(random_orthogonal(n, rng)), "random"
    if spec in ("example-q1", "paper-example-Q1"):
        if n != 4:
            raise ConfigError("the built-in example start is 4x4; set n=4 / eigenvalues of length 4")
        return StiefelPoint(EXAMPLE_Q1.copy()), "example-q1"
    raise ConfigError(f"q0 must be one of {_Q0_NAMES} or an explicit matrix, got {spec!r}")


def build_skew(cfg, n, rng):
    spec = cfg.get("skew", {"kind": "zero"})
    kind = spec.get("kind", "zero")
    if kind == "zero":
        return SkewFieldSpec.zero(), {"kind": "zero"}
    if kind == "constant-random":
        scale = float(spec.get("scale", 0.1))
        m = rng.standard_normal((n, n))
        return SkewFieldSpec.constant(scale * (m - m.T)), {"kind": "constant-random", "scale": scale}
    raise ConfigError(f"skew kind must be 'zero' or 'constant-random', got {kind!r}")


def build_integrator(cfg, fallback_max_time):
    icfg = cfg.get("integrator", {})
    try:
        return IntegratorConfig(
            method=icfg.get("method", "rk4-projected"),
            dt=float(icfg.get("dt", 0.01)),
            projection_interval=int(icfg.get("projection_interval", 10)),
            max_time=float(icfg.get("max_time", fallback_max_time)),
            convergence_threshold=float(icfg.get("convergence_threshold", 1e-9)),
            sample_stride=int(icfg.get("sample_stride", 10)),
        )
    except OjaflowError as exc:
        raise ConfigError(f"integrator settings rejected: {exc}") from None


def _tolerated(value, tolerance, passed):
    return {"value": value, "tolerance": tolerance, "pass": bool(passed)}


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _bundle(command, config, per_seed):
    return {
        "schema": SCHEMA_VERSION,
        "tool": {"name": "ojaflow", "version": __version__},
        "command": command,
        "config": config,
        "results": per_seed,
    }


# ---------------------------------------------------------------------------
# per-seed experiment bodies
# ---------------------------------------------------------------------------


def _seed_rng(seed):
    return np.random.default_rng(int(seed))


def run_simulate_seed(cfg, seed, outdir):
    a, eig = build_spectral(cfg)
    n = a.dimension
    weights, wlist = build_weights(cfg, n)
    rng = _seed_rng(seed)
    q0, q0_kind = build_q0(cfg, n, rng)
    skew, skew_echo = build_skew(cfg, n, rng)
    flow_name = cfg.get("flow", "sga")
    field = make_flow(flow_name, a, weights, skew)
    nu = convergence_rates(a)
    icfg = build_integrator(cfg, rate_aware_max_time(nu))

    def energy(q):
        return weighted_rayleigh(a, weights, q)

    limit, traj = integrate_to_limit(field, q0, icfg, energy)
    csv_path = None
    if outdir is not None:
        csv_path = str(Path(outdir) / f"trajectory-seed{seed}.csv")
        traj.write_csv(csv_path)
    result = {
        "seed": int(seed),
        "q0_kind": q0_kind,
        "converged": bool(limit.converged),
        "steps": int(traj.steps),
        "final_time": traj.final_time,
        "limit_distance": _tolerated(limit.distance, 1e-6, limit.converged),
        "limit": None if limit.snapped is None else [[float(v) for v in r] for r in limit.snapped],
        "raw_final": [[float(v) for v in r] for r in limit.state],
        "trajectory_csv": csv_path,
        "resolved": {"eigenvalues": eig, "weights": wlist, "flow": flow_name, "skew": skew_echo},
    }
    return result, (EXIT_OK if limit.converged else EXIT_NUMERIC)


def run_predict_seed(cfg, seed, outdir):
    a, eig = build_spectral(cfg)
    n = a.dimension
    rng = _seed_rng(seed)
    q0, q0_kind = build_q0(cfg, n, rng)
    pred = predict_limit(q0)
    result = {
        "seed": int(seed),
        "q0_kind": q0_kind,
        "prediction": pred.as_dict(),
        "resolved": {"eigenvalues": eig},
    }
    code = EXIT_OK
    if cfg.get("verify", False):
        weights, _ = build_weights(cfg, n)
        field = make_flow("sga", a, weights)
        nu = convergence_rates(a)
        icfg = build_integrator(cfg, rate_aware_max_time(nu))

        def energy(q):
            return weighted_rayleigh(a, weights, q)

        limit, _traj = integrate_to_limit(field, q0, icfg, energy)
        residual = float(np.max(np.abs(limit.state - pred.limit)))
        result["verify"] = {
            "converged": bool(limit.converged),
            "residual": _tolerated(residual, 1e-6, limit.converged and residual <= 1e-6),
        }
        if not (limit.converged and residual <= 1e-6):
            code = EXIT_NUMERIC
    return result, code


def run_rates_seed(cfg, seed, outdir):
    a, eig = build_spectral(cfg)
    n = a.dimension
    weights, wlist = build_weights(cfg, n)
    rng = _seed_rng(seed)
    q0, q0_kind = build_q0(cfg, n, rng)
    if not is_stable_basin(q0):
        raise ConfigError("q0 is outside the stable basin (a leading minor vanishes)")
    nu = convergence_rates(a)
    field = make_flow("sga", a, weights)
    icfg = build_integrator(cfg, rate_aware_max_time(nu))

    def energy(q):
        return weighted_rayleigh(a, weights, q)

    limit, traj = integrate_to_limit(field, q0, icfg, energy)
    if not limit.converged:
        return {"seed": int(seed), "converged": False}, EXIT_NUMERIC
    slack = float(cfg.get("slack", 0.1))
    verification = verify_exponential(traj, nu, slack=slack)
    entries = [
        {
            "i": e.i,
            "j": e.j,
            "slope": None if math.isnan(e.slope) else e.slope,
            "bound": _tolerated(e.bound * (1.0 - slack), f"slack {slack}", e.verdict != "fail"),
            "verdict": e.verdict,
        }
        for e in verification.entries
    ]
    csv_path = None
    if outdir is not None:
        csv_path = str(Path(outdir) / f"trajectory-seed{seed}.csv")
        traj.write_csv(csv_path)
    result = {
        "seed": int(seed),
        "q0_kind": q0_kind,
        "converged": True,
        "window": list(verification.window),
        "all_pass": verification.all_pass,
        "entries": entries,
        "rates": [float(v) for v in nu.nu],
        "trajectory_csv": csv_path,
        "resolved": {"eigenvalues": eig, "weights": wlist, "slack": slack},
    }
    return result, (EXIT_OK if verification.all_pass else EXIT_NUMERIC)


def run_online_seed(cfg, seed, outdir):
    a, eig = build_spectral(cfg)
    n = a.dimension
    p = int(cfg.get("p", n))
    if not 1 <= p <= n:
        raise ConfigError(f"p={p} must lie in 1..{n}")
    rng = _seed_rng(seed)
    q0_full, q0_kind = build_q0(cfg, n, rng)
    w0 = StiefelPoint(q0_full.q[:, :p])
    sched_cfg = cfg.get("schedule", {})
    try:
        schedule = LearningSchedule(
            rule=sched_cfg.get("rule", "inverse-k"),
            base=float(sched_cfg.get("base", 0.5 / float(a.eigenvalues[0]))),
            exponent=float(sched_cfg.get("exponent", 1.0)),
            offset=float(sched_cfg.get("offset", 100.0)),
            floor=float(sched_cfg.get("floor", 0.0)),
        )
    except OjaflowError as exc:
        raise ConfigError(f"schedule rejected: {exc}") from None
    steps = int(cfg.get("steps", 10000))
    mode = cfg.get("mode", "sga")
    stride = int(cfg.get("stride", 100))
    state, diag = run_online(SampleStream(a, seed), schedule, w0, steps, mode, stride=stride)
    csv_path = None
    if outdir is not None:
        csv_path = str(Path(outdir) / f"online-seed{seed}.csv")
        diag.write_csv(csv_path)
    final_angles = [float(v) for v in diag.angles[-1]]
    result = {
        "seed": int(seed),
        "q0_kind": q0_kind,
        "mode": mode,
        "steps": steps,
        "final_angles_rad": final_angles,
        "final_orth_defect": float(diag.orth_defects[-1]),
        "targets": list(diag.targets),
        "series_csv": csv_path,
        "resolved": {
            "eigenvalues": eig,
            "p": p,
            "schedule": {
                "rule": schedule.rule,
                "base": schedule.base,
                "exponent": schedule.exponent,
                "offset": schedule.offset,
                "floor": schedule.floor,
            },
        },
    }
    code = EXIT_OK
    decoup = cfg.get("decoupling_check", None)
    if decoup is not None:
        p_small = int(decoup)
        if not 1 <= p_small <= p:
            raise ConfigError(f"decoupling_check={p_small} must lie in 1..{p}")
        small_state, _ = run_online(
            SampleStream(a, seed),
            schedule,
            StiefelPoint(w0.q[:, :p_small]),
            steps,
            mode,
            stride=stride,
            targets=tuple(diag.targets[:p_small]),
        )
        exact = bool(np.array_equal(small_state.w, state.w[:, :p_small]))
        result["decoupling"] = "exact" if exact else "mismatch"
        if not exact:
            code = EXIT_NUMERIC
    return result, code


def build_p0(cfg, n, rng):
    spec = cfg.get("p0", "gram-random")
    if isinstance(spec, list):
        arr = np.asarray(spec, dtype=float)
        if arr.shape != (n, n):
            raise ConfigError(f"explicit p0 must be {n}x{n}")
        return arr, "explicit"
    if spec == "identity":
        return np.eye(n), "identity"
    if spec in ("gram-random", "random-psd"):
        basis = orthonormalize(rng.standard_normal((n, n)))
        lo = 0.4 if spec == "gram-random" else 0.05
        d = rng.uniform(lo, 1.6, size=n)
        return (basis * d) @ basis.T, spec
    raise ConfigError(f"p0 must be identity | gram-random | random-psd, got {spec!r}")


def run_riccati_seed(cfg, seed, outdir):
    a, eig = build_spectral(cfg)
    n = a.dimension
    rng = _seed_rng(seed)
    p0, p0_kind = build_p0(cfg, n, rng)
    icfg = build_integrator(cfg, 10.0)
    traj = integrate_riccati(a, p0, icfg)
    csv_path = None
    if outdir is not None:
        csv_path = str(Path(outdir) / f"riccati-seed{seed}.csv")
        traj.write_csv(csv_path)

    deviation = 0.0
    for t, p in zip(traj.times, traj.states):
        deviation = max(deviation, float(np.linalg.norm(p - riccati_closed_form(a, p0, float(t)))))
    closed_tol = float(cfg.get("closed_form_tolerance", 1e-7))
    closed_ok = deviation <= closed_tol

    # decay of the squared identity defect against the -4 alpha^2 lambda_n bound
    slack = float(cfg.get("slack", 0.1))
    floors = traj.identity_defect > 1e-10
    alpha = math.sqrt(
        max(
            np.finfo(float).tiny,
            min(float(sym_eigendecomposition(p)[0][-1]) for p in traj.states),
        )
    )
    bound = -4.0 * alpha**2 * float(a.eigenvalues[-1])
    if int(floors.sum()) < 10:
        slope = None
        decay_verdict = "floor"
        decay_ok = True
    else:
        tw = traj.times[floors]
        vw = np.log(traj.identity_defect[floors] ** 2)
        slope = float(np.polyfit(tw, vw, 1)[0])
        decay_ok = slope <= bound * (1.0 - slack)
        decay_verdict = "pass" if decay_ok else "fail"

    result = {
        "seed": int(seed),
        "p0_kind": p0_kind,
        "closed_form_deviation": _tolerated(deviation, closed_tol, closed_ok),
        "alpha": alpha,
        "decay": {
            "slope_log_squared_defect": slope,
            "bound": _tolerated(bound * (1.0 - slack), f"slack {slack}", decay_ok),
            "verdict": decay_verdict,
        },
        "series_csv": csv_path,
        "resolved": {"eigenvalues": eig},
    }
    return result, (EXIT_OK if (closed_ok and decay_ok) else EXIT_NUMERIC)


COMMANDS = {
    "simulate": run_simulate_seed,
    "predict": run_predict_seed,
    "rates": run_rates_seed,
    "online": run_online_seed,
    "riccati": run_riccati_seed,
}


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------


def _add_common(sub):
    sub.add_argument("--config", type=str, default=None, help="JSON config file")
    sub.add_argument("--seed", type=int, default=None, help="seed (overrides config)")
    sub.add_argument("--seeds", type=str, default=None, help="comma list of seeds")
    sub.add_argument("--out", type=str, default=None, help="output directory")
    sub.add_argument("--jobs", type=int, default=1, help="worker threads across seeds")
    sub.add_argument("--n", type=int, default=None, help="dimension (uniform-gap spectrum)")
    sub.add_argument("--eigs", type=str, default=None, help="comma list of eigenvalues, descending")
    sub.add_argument("--weights", type=str, default=None, help="comma list of weights, descending")
    sub.add_argument("--q0", type=str, default=None, help="identity | random | example-q1")
    sub.add_argument("--dt", type=float, default=None)
    sub.add_argument("--max-time", type=float, default=None)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ojaflow",
        description="Reproducible experiments with online-PCA matrix flows",
    )
    parser.add_argument("--version", action="version", version=f"ojaflow {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    sim = subs.add_parser("simulate", help="integrate a flow to its limit")
    _add_common(sim)
    sim.add_argument("--flow", type=str, default=None, choices=["sga", "brockett", "llg-tildeg", "llg-euclid"])

    pred = subs.add_parser("predict", help="limit prediction from the start frame alone")
    _add_common(pred)
    pred.add_argument("--verify", action="store_true", help="also integrate and report the residual")

    rates = subs.add_parser("rates", help="fit per-entry decay slopes against spectral-gap bounds")
    _add_common(rates)
    rates.add_argument("--slack", type=float, default=None)

    onl = subs.add_parser("online", help="stochastic iteration on a seeded sample stream")
    _add_common(onl)
    onl.add_argument("--p", type=int, default=None, help="number of estimated columns")
    onl.add_argument("--steps", type=int, default=None)
    onl.add_argument("--mode", type=str, default=None, choices=["sga", "gso"])
    onl.add_argument("--stride", type=int, default=None)
    onl.add_argument("--decoupling-check", type=int, default=None, help="re-run with this many columns and compare bitwise")

    ric = subs.add_parser("riccati", help="Riccati evolution vs its closed form")
    _add_common(ric)
    ric.add_argument("--p0", type=str, default=None, help="identity | gram-random | random-psd")

    return parser


def _merge_config(args):
    cfg = {}
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config root must be a JSON object")
    overrides = {
        "n": args.n,
        "q0": args.q0,
        "dt": getattr(args, "dt", None),
        "max_time": getattr(args, "max_time", None),
        "flow": getattr(args, "flow", None),
        "slack": getattr(args, "slack", None),
        "p": getattr(args, "p", None),
        "steps": getattr(args, "steps", None),
        "mode": getattr(args, "mode", None),
        "stride": getattr(args, "stride", None),
        "decoupling_check": getattr(args, "decoupling_check", None),
        "p0": getattr(args, "p0", None),
    }
    if args.eigs is not None:
        overrides["eigenvalues"] = _float_list(args.eigs)
    if args.weights is not None:
        overrides["weights"] = _float_list(args.weights)
    if getattr(args, "verify", False):
        overrides["verify"] = True
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    # integrator overrides live in a nested object
    for key in ("dt", "max_time"):
        if cfg.get(key) is not None:
            cfg.setdefault("integrator", {})[key] = cfg.pop(key)
        cfg.pop(key, None)
    seeds = None
    if args.seeds is not None:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    elif args.seed is not None:
        seeds = [int(args.seed)]
    elif "seeds" in cfg:
        seeds = [int(s) for s in cfg["seeds"]]
    elif "seed" in cfg:
        seeds = [int(cfg["seed"])]
    else:
        seeds = [0]
    cfg["seeds"] = seeds
    return cfg


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _merge_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    outdir = None
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)

    body = COMMANDS[args.command]
    seeds = cfg["seeds"]
    results = [None] * len(seeds)
    codes = [EXIT_OK] * len(seeds)

    def one(i):
        return body(cfg, seeds[i], outdir)

    try:
        if args.jobs > 1 and len(seeds) > 1:
            with ThreadPoolExecutor(max_workers=args.jobs) as pool:
                for i, (res, code) in enumerate(pool.map(one, range(len(seeds)))):
                    results[i], codes[i] = res, code
        else:
            for i in range(len(seeds)):
                results[i], codes[i] = one(i)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SigmaAmbiguityError as exc:
        print(f"analysis ambiguity: {exc}", file=sys.stderr)
        return EXIT_AMBIGUOUS
    except (IntegrationError, DivergenceError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OjaflowError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    bundle = _bundle(args.command, cfg, results)
    if outdir is not None:
        _write_json(outdir / "summary.json", bundle)
        print(f"wrote {outdir / 'summary.json'}")
    else:
        json.dump(bundle, sys.stdout, indent=2, sort_keys=True)
        print()
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())
