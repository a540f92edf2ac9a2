"""Command-line entry point: analyze / simulate / fpca-diagnose.

Input CSV layout for ``analyze`` and ``fpca-diagnose``: one row per subject
with columns ``id``, ``Y``, ``X_1..X_p`` and curve columns ``A@<time>``.
Curve times may be numeric (normalized or raw clock-fraction units) or
``HH:MM`` clock times interpreted on a 24-hour day. Policy windows given in
clock time are converted to normalized time; windows wrapping midnight are
split into two sub-windows.

Reports are plain CSV plus a text summary; plot-data CSVs are the contract
for figures (no plotting dependency).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import yaml

from .estimators import PipelineConfig, bootstrap_ci, estimate_all
from .fgrid import Dataset, TimeGrid, ValidationError, from_arrays
from .fpca import KRule, decay_diagnostic, fit_fpca, save_fpca, tail_residual
from .policy import ModificationPolicy, apply_policy_dataset
from .simgen import (GPKernel, ScenarioResult, SimConfig, build_context, k_sweep,
                     mse_slope, oracle_truth, run_scenario, scenario_config)
from .weights import balance_diagnostics, build_augmented, fit_weight_model

SCHEMA_VERSION = "1"


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Config parsing

_ANALYZE_KEYS = {
    "command", "input", "out", "seed", "threads", "policy", "K", "K_m",
    "folds", "bootstrap", "alpha", "estimators", "tau_sweep",
    "outcome_kind", "fve",
}
_POLICY_KEYS = {"kind", "tau", "warp_exponent", "window", "threshold", "renormalize"}
_SIM_KEYS = {
    "command", "out", "seed", "threads", "scenario", "n", "T", "p", "tau",
    "outcome_kind", "K", "K_m", "folds", "replications", "bootstrap",
    "alpha", "kernel", "sigma_a", "nu", "rho", "oracle_draws", "n_grid",
    "k_grid",
}


def _load_config(path: Optional[str], allowed: set) -> dict:
    if path is None:
        return {}
    raw = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(raw, dict):
        raise ConfigError("config file must be a mapping")
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return raw


def _clock_to_norm(text: str) -> float:
    """HH:MM on a 24-hour day -> fraction in [0, 1]."""
    parts = text.strip().split(":")
    if len(parts) != 2:
        raise ConfigError(f"bad clock time {text!r}")
    h, m = int(parts[0]), int(parts[1])
    if not (0 <= h < 24 and 0 <= m < 60):
        raise ConfigError(f"clock time {text!r} out of range")
    return (h * 60 + m) / 1440.0


def parse_window(spec) -> Tuple[Tuple[float, float], ...]:
    """Window in normalized time [lo, hi] or clock string 'HH:MM-HH:MM'.

    A clock window wrapping midnight becomes two sub-windows.
    """
    if isinstance(spec, str):
        lo_s, hi_s = spec.split("-")
        lo, hi = _clock_to_norm(lo_s), _clock_to_norm(hi_s)
        if lo < hi:
            return ((lo, hi),)
        return ((0.0, hi), (lo, 1.0)) if hi > 0 else ((lo, 1.0),)
    lo, hi = float(spec[0]), float(spec[1])
    return ((lo, hi),)


def parse_policy(spec) -> ModificationPolicy:
    if spec is None or spec == "identity":
        return ModificationPolicy.identity()
    if isinstance(spec, str):
        raise ConfigError(f"unknown policy shorthand {spec!r}")
    unknown = set(spec) - _POLICY_KEYS
    if unknown:
        raise ConfigError(f"unknown policy keys: {sorted(unknown)}")
    kind = spec.get("kind", "identity")
    try:
        if kind == "identity":
            return ModificationPolicy.identity()
        if kind == "scale_warp":
            return ModificationPolicy.scale_warp(
                tau=float(spec.get("tau", 1.0)),
                warp_exponent=float(spec.get("warp_exponent", 1.2)))
        if kind == "window_threshold":
            return ModificationPolicy.window_threshold(
                tau=float(spec.get("tau", 1.0)),
                threshold=float(spec.get("threshold", 0.0)),
                window=parse_window(spec.get("window", (0.0, 1.0))),
                renormalize=bool(spec.get("renormalize", True)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown policy kind {kind!r}")


# ---------------------------------------------------------------------------
# CSV ingestion

def read_dataset_csv(path: str, outcome_kind: Optional[str] = None) -> Dataset:
    df = pd.read_csv(path)
    curve_cols = [c for c in df.columns if c.startswith("A@")]
    x_cols = [c for c in df.columns if c.startswith("X_")]
    if "Y" not in df.columns:
        raise ValidationError([f"{path}: missing outcome column 'Y'"])
    if len(curve_cols) < 2:
        raise ValidationError([f"{path}: need at least 2 curve columns 'A@<time>'"])
    times = []
    for c in curve_cols:
        token = c[2:]
        times.append(_clock_to_norm(token) if ":" in token else float(token))
    order = np.argsort(times)
    times = np.asarray(times, dtype=float)[order]
    curve_cols = [curve_cols[i] for i in order]
    if np.any(np.diff(times) <= 0):
        raise ValidationError([f"{path}: curve column times are not distinct"])
    grid = TimeGrid.from_raw(times)
    curves = df[curve_cols].to_numpy(dtype=float)
    x = df[x_cols].to_numpy(dtype=float) if x_cols else np.zeros((len(df), 0))
    y = df["Y"].to_numpy(dtype=float)
    bad = []
    if not np.all(np.isfinite(curves)):
        rows = np.unique(np.where(~np.isfinite(curves))[0])
        bad += [f"row {r}: non-finite curve value" for r in rows]
    if not np.all(np.isfinite(y)):
        bad += [f"row {r}: non-finite outcome" for r in np.where(~np.isfinite(y))[0]]
    if x.size and not np.all(np.isfinite(x)):
        bad += [f"row {r}: non-finite covariate"
                for r in np.unique(np.where(~np.isfinite(x))[0])]
    if bad:
        raise ValidationError([f"{path}: {b}" for b in bad])
    return from_arrays(grid, curves, x, y, outcome_kind=outcome_kind)


def write_dataset_csv(data: Dataset, path: str) -> None:
    grid = data.grid
    cols = {"id": np.arange(data.n), "Y": data.outcomes()}
    x = data.covariate_matrix()
    for j in range(data.p):
        cols[f"X_{j + 1}"] = x[:, j]
    curves = data.curves()
    for j, t in enumerate(grid.points):
        cols[f"A@{t:.6f}"] = curves[:, j]
    pd.DataFrame(cols).to_csv(path, index=False)


# ---------------------------------------------------------------------------
# Commands

def run_analyze(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config, _ANALYZE_KEYS)

    def get(key, default=None):
        v = getattr(args, key.replace("-", "_"), None)
        return v if v is not None else cfg.get(key, default)

    input_path = get("input")
    if not input_path:
        raise ConfigError("analyze requires --input")
    if not Path(input_path).exists():
        raise ConfigError(f"input file not found: {input_path}")
    out_dir = Path(get("out", "mftp_out"))
    seed = int(get("seed", 0))
    alpha = float(get("alpha", 0.05))
    B = int(get("bootstrap", 500))
    folds = int(get("folds", 3))
    if not (0 < alpha < 1):
        raise ConfigError(f"alpha={alpha} outside (0, 1)")

    policy_spec = cfg.get("policy") if args.policy is None else args.policy
    if args.tau is not None:
        if not isinstance(policy_spec, dict):
            raise ConfigError("--tau override requires a policy mapping in the config")
        policy_spec = dict(policy_spec, tau=args.tau)
    policy = parse_policy(policy_spec)
    if isinstance(policy_spec, dict) and policy_spec.get("kind") == "scale_warp" \
            and float(policy_spec.get("tau", 1.0)) <= 0:
        raise ConfigError("tau must be positive for scale_warp")

    data = read_dataset_csv(input_path, outcome_kind=get("outcome_kind"))
    k_cfg = get("K")
    k_rule = KRule.fixed(int(k_cfg)) if k_cfg else KRule.fve(float(get("fve", 0.95)))
    model = fit_fpca(data, k_rule)
    if model.K < 1:
        raise ValidationError(["all curves identical; FPCA degenerate"])
    K = int(k_cfg) if k_cfg else model.K
    K = min(K, model.n_components)
    pipe = PipelineConfig(K=K, K_m=get("K_m"), folds=folds)

    out_dir.mkdir(parents=True, exist_ok=True)
    save_fpca(model, str(out_dir / "fpca_bundle"))

    estimator_names = get("estimators", ["OR", "IPW_hajek", "AIPW"])
    rows = []
    for est_name, est in estimate_all(data, model, policy, pipe, seed=seed).items():
        if est_name not in estimator_names:
            continue
        lo, hi = bootstrap_ci(data, model, policy, est_name, pipe,
                              B=B, alpha=alpha, seed=seed)
        row = {"schema_version": SCHEMA_VERSION, "estimator": est_name,
               "point": est.point, "ci_lo": lo, "ci_hi": hi, "alpha": alpha,
               "n": data.n, "K": K, "folds": folds, "bootstrap_B": B}
        row.update({f"diag_{k}": v for k, v in est.diagnostics.items()})
        rows.append(row)
    pd.DataFrame(rows).to_csv(out_dir / "estimates.csv", index=False)

    aug = build_augmented(data, model, policy, K)
    wm = fit_weight_model(aug)
    pd.DataFrame({"id": np.arange(data.n), "weight": wm.fitted_weights}).to_csv(
        out_dir / "weights.csv", index=False)
    rep = balance_diagnostics(wm, aug)
    pd.DataFrame({"feature": rep.feature_names,
                  "smd_unweighted": rep.smd_unweighted,
                  "smd_weighted": rep.smd_weighted}).to_csv(
        out_dir / "balance.csv", index=False)

    sweep = get("tau_sweep")
    if sweep:
        srows = []
        for tau in sweep:
            if isinstance(policy_spec, dict):
                pol_t = parse_policy(dict(policy_spec, tau=float(tau)))
            else:
                raise ConfigError("tau_sweep requires a policy mapping")
            ests_t = estimate_all(data, model, pol_t, pipe, seed=seed)
            for est_name, est in ests_t.items():
                if est_name in estimator_names:
                    srows.append({"tau": tau, "estimator": est_name,
                                  "point": est.point})
        pd.DataFrame(srows).to_csv(out_dir / "tau_sweep.csv", index=False)

    summary = [f"n={data.n} p={data.p} T={len(data.grid)} outcome={data.outcome_kind}",
               f"K={K} (retained {model.n_components}), "
               f"tail residual {tail_residual(model, K):.6g}",
               f"effective sample size {rep.ess:.1f}"]
    for r in rows:
        summary.append(f"{r['estimator']}: {r['point']:.6g} "
                       f"[{r['ci_lo']:.6g}, {r['ci_hi']:.6g}]")
    (out_dir / "summary.txt").write_text("\n".join(summary) + "\n")
    print("\n".join(summary))
    return 0


def _sim_config_from(args: argparse.Namespace) -> SimConfig:
    cfg = _load_config(args.config, _SIM_KEYS)

    def get(key, default=None):
        v = getattr(args, key.replace("-", "_"), None)
        return v if v is not None else cfg.get(key, default)

    reps = int(get("replications", 200))
    if reps < 10:
        raise ConfigError("replications must be at least 10")
    kernel = GPKernel(kind=get("kernel", "squared_exponential"),
                      sigma_a=float(get("sigma_a", 0.05)),
                      nu=float(get("nu", 1.5)), rho=float(get("rho", 0.1)))
    common = dict(n=int(get("n", 400)), T=int(get("T", 100)), p=int(get("p", 15)),
                  kernel=kernel, K=int(get("K", 4)), folds=int(get("folds", 3)),
                  replications=reps, bootstrap_B=int(get("bootstrap", 0)),
                  alpha=float(get("alpha", 0.05)), seed=int(get("seed", 20240)),
                  oracle_draws=int(get("oracle_draws", 2_000_000)))
    scen = get("scenario")
    try:
        if scen is not None:
            return scenario_config(int(scen), **common)
        return SimConfig(outcome_kind=get("outcome_kind", "simple"),
                         tau=float(get("tau", 1.0)), **common)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def run_simulate(args: argparse.Namespace) -> int:
    cfg_file = _load_config(args.config, _SIM_KEYS)
    config = _sim_config_from(args)
    out_dir = Path(args.out or cfg_file.get("out", "mftp_sim"))
    out_dir.mkdir(parents=True, exist_ok=True)

    ctx = build_context(config)
    truth = oracle_truth(config, ctx)

    n_grid = cfg_file.get("n_grid")
    k_grid = cfg_file.get("k_grid")
    rows = []
    if n_grid:
        mses: Dict[str, List[float]] = {}
        for n in n_grid:
            from dataclasses import replace as _rep
            res = run_scenario(_rep(config, n=int(n)), ctx, truth)
            for e, pts in res.estimates.items():
                rows.append({"schema_version": SCHEMA_VERSION, "n": n,
                             "estimator": e, "log_n": float(np.log(n)),
                             "mse": res.mse(e), "log_mse": float(np.log(res.mse(e))),
                             "bias": res.bias(e), "truth": truth[0]})
                mses.setdefault(e, []).append(res.mse(e))
        pd.DataFrame(rows).to_csv(out_dir / "figure_mse_vs_n.csv", index=False)
        if len(n_grid) >= 4:
            slope_rows = [{"estimator": e, "slope": mse_slope(n_grid, v)}
                          for e, v in mses.items()]
            pd.DataFrame(slope_rows).to_csv(out_dir / "mse_slopes.csv", index=False)
    elif k_grid:
        res_by_k = k_sweep(config, [int(k) for k in k_grid], ctx, truth)
        krows = [{"schema_version": SCHEMA_VERSION, "K": k, "estimator": e,
                  "mse": m, "truth": truth[0]}
                 for k, by_e in res_by_k.items() for e, m in by_e.items()]
        pd.DataFrame(krows).to_csv(out_dir / "figure_mse_vs_k.csv", index=False)
    else:
        res = run_scenario(config, ctx, truth)
        for e, pts in res.estimates.items():
            for rep_i, v in enumerate(pts):
                rows.append({"schema_version": SCHEMA_VERSION, "replication": rep_i,
                             "estimator": e, "estimate": v})
        pd.DataFrame(rows).to_csv(out_dir / "replications.csv", index=False)
        agg = [{"schema_version": SCHEMA_VERSION, "estimator": e,
                "mse": res.mse(e), "bias": res.bias(e),
                "bias_se": res.bias_se(e), "truth": truth[0],
                "truth_se": truth[1],
                "coverage": res.coverage.get(e, np.nan)}
               for e in res.estimates]
        pd.DataFrame(agg).to_csv(out_dir / "scenario_summary.csv", index=False)
    (out_dir / "truth.txt").write_text(
        f"truth={truth[0]:.8g}\nmc_se={truth[1]:.3g}\n")
    print(f"truth {truth[0]:.6g} (MC SE {truth[1]:.2g}); outputs in {out_dir}")
    return 0


def run_fpca_diagnose(args: argparse.Namespace) -> int:
    if not args.input or not Path(args.input).exists():
        raise ConfigError("fpca-diagnose requires an existing --input file")
    out_dir = Path(args.out or "mftp_fpca")
    data = read_dataset_csv(args.input)
    model = fit_fpca(data, KRule.fve(0.999))
    out_dir.mkdir(parents=True, exist_ok=True)
    save_fpca(model, str(out_dir / "fpca_bundle"))
    total = model.total_variance()
    rows = [{"j": j + 1, "eigenvalue": ev,
             "fraction_of_variance": ev / total if total > 0 else 0.0,
             "tail_residual": tail_residual(model, j + 1)}
            for j, ev in enumerate(model.eigenvalues)]
    pd.DataFrame(rows).to_csv(out_dir / "spectrum.csv", index=False)
    lines = [f"retained components: {model.n_components}",
             f"total variance: {total:.6g}"]
    if model.n_components >= 6:
        rep = decay_diagnostic(model)
        lines += [f"decay law preferred: {rep.preferred}",
                  f"exponential fit: slope {rep.exp_slope:.4f} R2 {rep.exp_r2:.4f}",
                  f"polynomial fit: slope {rep.poly_slope:.4f} R2 {rep.poly_r2:.4f}"]
    else:
        lines.append("decay diagnostic unavailable (fewer than 6 components)")
    (out_dir / "decay_report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mftp",
                                     description="Functional-treatment policy effects")
    sub = parser.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("analyze", help="estimate policy effects from a CSV")
    pa.add_argument("--config")
    pa.add_argument("--input")
    pa.add_argument("--out")
    pa.add_argument("--seed", type=int)
    pa.add_argument("--threads", type=int, default=1)
    pa.add_argument("--policy")
    pa.add_argument("--tau", type=float)
    pa.add_argument("--K", type=int)
    pa.add_argument("--folds", type=int)
    pa.add_argument("--bootstrap", type=int)
    pa.add_argument("--alpha", type=float)
    pa.set_defaults(func=run_analyze)

    ps = sub.add_parser("simulate", help="run the simulation harness")
    ps.add_argument("--config")
    ps.add_argument("--out")
    ps.add_argument("--seed", type=int)
    ps.add_argument("--threads", type=int, default=1)
    ps.add_argument("--scenario", type=int)
    ps.add_argument("--n", type=int)
    ps.add_argument("--tau", type=float)
    ps.add_argument("--K", type=int)
    ps.add_argument("--folds", type=int)
    ps.add_argument("--replications", type=int)
    ps.add_argument("--bootstrap", type=int)
    ps.add_argument("--alpha", type=float)
    ps.set_defaults(func=run_simulate)

    pf = sub.add_parser("fpca-diagnose", help="spectrum and decay diagnostics")
    pf.add_argument("--input")
    pf.add_argument("--out")
    pf.set_defaults(func=run_fpca_diagnose)
    return parser


_ERROR_CATEGORIES = (
    (ConfigError, 2, "config"),
    (ValidationError, 3, "validation"),
    ((ArithmeticError, np.linalg.LinAlgError), 4, "numeric"),
    (OSError, 5, "io"),
)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # categorize for machine-readable exit status
        for types, code, label in _ERROR_CATEGORIES:
            if isinstance(exc, types):
                print(f"error:{label}: {exc}", file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
