"""Batch command-line interface.

Subcommands:
    simulate    generate noise paths and a covariance-vs-theory summary
    tails       Monte-Carlo tail estimation and envelope comparison
    check       sub-Gaussianity / quadratic-form / constant verification
    constants   print the resolved bound constants without simulating

Exit codes: 0 success (a failed *verdict* is still a successful run),
2 configuration error, 3 runtime or convergence failure.

All outputs embed the resolved config and package version; numbers are
serialized with shortest round-trip representation so repeated runs with the
same config and master seed are byte-identical, independent of --workers.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import (
    BoundConstants,
    CONSISTENCY_EXPONENT_NOTE,
    calibrate_prefactor,
)
from .config import (
    ExperimentConfig,
    build_basis,
    build_grid,
    build_kernel,
    build_model,
    build_norming,
    config_to_dict,
    load_config,
)
from .errors import ConfigError, ContractError
from .harness import (
    STREAM_MGF,
    STREAM_PATHS,
    STREAM_PAIRS,
    compare_with_envelope,
    derive_seed,
    deviations,
    estimate_tail,
    mgf_check,
    quadratic_form_check,
    run_trials,
)
from .model import estimate_equivalence_constants, exp_model_constants, ExpModelSpec
from .noise import (
    WHITE_NOISE_F0,
    covariance_of_filter,
    f0_sup,
    filtered_noise_path,
    ito_nisio_path,
    white_noise_path,
)

MGF_DEFAULT_REPS = 10_000


# -- deterministic serialization helpers -------------------------------------


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def _jsonify(obj):
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonify(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def _provenance_comment(cfg: ExperimentConfig) -> list[str]:
    compact = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return [f"# regtails {__version__}", f"# config: {compact}"]


def _write_rows(path: Path, cfg: ExperimentConfig, header: list[str],
                rows: list[list], sep: str):
    lines = _provenance_comment(cfg)
    lines.append(sep.join(header))
    for row in rows:
        lines.append(sep.join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _write_json(path: Path, cfg: ExperimentConfig, payload: dict):
    doc = {"version": __version__, "config": config_to_dict(cfg)}
    doc.update(_jsonify(payload))
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


# -- constants resolution -----------------------------------------------------


def resolve_constants(cfg: ExperimentConfig, model, grid, kernel) -> tuple[BoundConstants, dict]:
    """Assemble the bound constants from config, spectrum, and pair sampling."""
    extras: dict = {}
    if cfg.bounds.f0 is not None:
        f0 = cfg.bounds.f0
        extras["f0_source"] = "config"
    elif kernel is None:
        f0 = WHITE_NOISE_F0
        extras["f0_source"] = "white_noise"
    else:
        f0 = f0_sup(kernel)
        extras["f0_source"] = "kernel_spectrum"
    if cfg.bounds.c0 is not None:
        c0 = cfg.bounds.c0
        extras["c0_source"] = "config"
    else:
        norming = build_norming(cfg, model, grid)
        c0_hat, c1_hat = estimate_equivalence_constants(
            model, cfg.model.theta_true, grid, norming,
            cfg.bounds.equivalence_pairs, derive_seed(cfg.montecarlo.master_seed, STREAM_PAIRS, 0),
        )
        c0 = c0_hat
        extras["c0_source"] = "pair_sampling"
        extras["c0_hat"] = c0_hat
        extras["c1_hat"] = c1_hat
    consts = BoundConstants.from_spectral(
        q=model.q, c0=c0, f0=f0, beta=cfg.bounds.beta, b_cal=cfg.bounds.b_cal_value,
    )
    return consts, extras


# -- subcommands ---------------------------------------------------------------


def cmd_constants(cfg: ExperimentConfig, out_dir: Path, workers: int) -> int:
    model = build_model(cfg)
    grid = build_grid(cfg)
    kernel = build_kernel(cfg)
    consts, extras = resolve_constants(cfg, model, grid, kernel)
    payload = {
        "constants": _constants_dict(consts),
        "extras": extras,
        "notes": {"consistency_envelope": CONSISTENCY_EXPONENT_NOTE},
    }
    print(json.dumps(_jsonify(payload), sort_keys=True, indent=2))
    return 0


def _constants_dict(consts: BoundConstants) -> dict:
    return {
        "q": consts.q, "c0": consts.c0, "d0": consts.d0, "f0": consts.f0,
        "beta": consts.beta, "b": consts.b, "B_cal": consts.b_cal,
    }


def cmd_tails(cfg: ExperimentConfig, out_dir: Path, workers: int) -> int:
    model = build_model(cfg)
    grid = build_grid(cfg)
    kernel = build_kernel(cfg)
    consts, extras = resolve_constants(cfg, model, grid, kernel)

    records = run_trials(cfg, workers=workers)
    n = len(records)
    r_grid = np.asarray(cfg.montecarlo.r_grid)
    n_train = 0
    if cfg.bounds.b_cal_mode == "calibrate":
        n_train = max(1, round(cfg.bounds.calibration_fraction * n))
        train_devs = deviations(records[:n_train])
        p_train = np.array([(train_devs >= r).mean() for r in r_grid])
        consts = consts.with_prefactor(calibrate_prefactor(p_train, r_grid, consts.b))
    eval_records = records[n_train:]
    tail = estimate_tail(eval_records, r_grid, consts)
    cmp = compare_with_envelope(tail, consts)

    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, r in enumerate(tail.r_grid):
        rows.append([
            float(r), int(tail.counts[i]), tail.n_trials, float(tail.p_hat[i]),
            float(tail.ci_low[i]), float(tail.ci_high[i]), float(tail.envelope[i]),
            "pass" if cmp.level_ok[i] else "fail",
        ])
    if "csv" in cfg.output.formats:
        _write_rows(out_dir / "tails.csv", cfg,
                    ["R", "count", "n", "p_hat", "ci_low", "ci_high", "envelope", "verdict"],
                    rows, sep=",")
    if "tsv" in cfg.output.formats:
        plot_rows = [[float(r) ** 2, float(-np.log(p))]
                     for r, p in zip(tail.r_grid, tail.p_hat) if p > 0]
        _write_rows(out_dir / "tails_plot.tsv", cfg, ["R_squared", "neg_log_p"],
                    plot_rows, sep="\t")
    if "json" in cfg.output.formats:
        n_bad = sum(1 for r in records if not r.converged)
        _write_json(out_dir / "tails_meta.json", cfg, {
            "constants": _constants_dict(consts),
            "extras": extras,
            "fitted_rate": tail.fitted_rate,
            "rate_ok": cmp.rate_ok,
            "level_verdicts": [bool(v) for v in cmp.level_ok],
            "overall_pass": cmp.overall_pass,
            "n_trials": n,
            "n_train": n_train,
            "n_eval": tail.n_trials,
            "n_nonconverged": n_bad,
            "notes": {"consistency_envelope": CONSISTENCY_EXPONENT_NOTE},
        })
    return 0


def cmd_simulate(cfg: ExperimentConfig, out_dir: Path, workers: int) -> int:
    grid = build_grid(cfg)
    kernel = build_kernel(cfg)
    basis = build_basis(cfg)
    n_paths = cfg.montecarlo.n_trials
    master = cfg.montecarlo.master_seed
    out_dir.mkdir(parents=True, exist_ok=True)
    n_files = min(n_paths, 16)

    if basis is not None:
        # series-construction mode: emit xi paths, compare Cov(xi(s), xi(t)) to min(s, t)
        quarter = max(1, grid.n_steps // 4)
        pair_idx = [(quarter, 2 * quarter), (quarter, grid.n_steps), (2 * quarter, grid.n_steps)]
        prods = np.zeros((n_paths, len(pair_idx)))
        for i in range(n_paths):
            seed = derive_seed(master, STREAM_PATHS, i)
            xi = ito_nisio_path(cfg.noise.driver, basis, grid, seed)
            if i < n_files:
                _write_rows(out_dir / f"path_{i:05d}.tsv", cfg, ["t", "xi"],
                            [[float(t), float(v)] for t, v in zip(grid.nodes, xi)], sep="\t")
            prods[i] = [xi[a] * xi[b] for a, b in pair_idx]
        entries = []
        ok = True
        for j, (a, b) in enumerate(pair_idx):
            s, t = grid.nodes[a], grid.nodes[b]
            emp = float(prods[:, j].mean())
            se = float(prods[:, j].std(ddof=1) / np.sqrt(n_paths))
            theory = float(min(s, t))
            within = abs(emp - theory) <= 4.0 * se
            ok = ok and within
            entries.append({"s": float(s), "t": float(t), "empirical": emp,
                            "theory": theory, "se": se, "within_4se": within})
        _write_json(out_dir / "simulate_summary.json", cfg, {
            "mode": "series_construction",
            "covariance": entries, "all_within_4se": ok, "n_paths": n_paths,
        })
        return 0

    # stationary / white mode: lag covariances of eps
    if kernel is None:
        char_time = grid.h
        lag_steps = [0, 1]
    else:
        char_time = 1.0 / cfg.noise.kernel_rate if cfg.noise.kernel_rate else 1.0
        max_lag = min(5.0 * char_time, grid.T)
        n_lags = 6
        lag_steps = sorted({int(round(k * max_lag / ((n_lags - 1) * grid.h))) for k in range(n_lags)})
    samples = np.zeros((n_paths, len(lag_steps)))
    for i in range(n_paths):
        seed = derive_seed(master, STREAM_PATHS, i)
        if kernel is None:
            path = white_noise_path(cfg.noise.driver, grid, seed)
        else:
            path = filtered_noise_path(cfg.noise.driver, kernel, grid, seed,
                                       prehistory=cfg.noise.prehistory)
        if i < n_files:
            _write_rows(out_dir / f"path_{i:05d}.tsv", cfg, ["t", "eps"],
                        [[float(t), float(v)] for t, v in zip(grid.nodes, path.values)], sep="\t")
        samples[i] = [path.values[0] * path.values[k] for k in lag_steps]
    entries = []
    ok = True
    for j, k in enumerate(lag_steps):
        lag = k * grid.h
        if kernel is None:
            theory = 1.0 / grid.h if k == 0 else 0.0
        else:
            theory = float(covariance_of_filter(kernel, lag))
        emp = float(samples[:, j].mean())
        se = float(samples[:, j].std(ddof=1) / np.sqrt(n_paths))
        within = abs(emp - theory) <= 4.0 * se
        ok = ok and within
        entries.append({"lag": float(lag), "empirical": emp, "theory": theory,
                        "se": se, "within_4se": within})
    _write_json(out_dir / "simulate_summary.json", cfg, {
        "mode": "white" if kernel is None else "filtered",
        "covariance": entries, "all_within_4se": ok, "n_paths": n_paths,
    })
    return 0


def cmd_check(cfg: ExperimentConfig, out_dir: Path, workers: int) -> int:
    model = build_model(cfg)
    grid = build_grid(cfg)
    kernel = build_kernel(cfg)
    master = cfg.montecarlo.master_seed
    norming = build_norming(cfg, model, grid)
    payload: dict = {"verdicts": {}}

    c0_hat, c1_hat = estimate_equivalence_constants(
        model, cfg.model.theta_true, grid, norming, cfg.bounds.equivalence_pairs,
        derive_seed(master, STREAM_PAIRS, 0))
    payload["c0_hat"] = c0_hat
    payload["c1_hat"] = c1_hat

    if model.name == "exp_inner":
        spec = ExpModelSpec(regressors=_model_regressors(cfg))
        consts = exp_model_constants(spec, model.box, grid)
        payload.update({
            "c0_theory": consts.c0_theory, "c1_theory": consts.c1_theory,
            "H": consts.H, "L": consts.L, "lambda_min": consts.lambda_min,
            "J_T": consts.J_T,
        })
        payload["verdicts"]["equivalence_bracket"] = bool(
            c0_hat >= consts.c0_theory * 0.99 and c1_hat <= consts.c1_theory * 1.01
        )

    f0 = WHITE_NOISE_F0 if kernel is None else f0_sup(kernel)
    d0 = 2.0 * np.pi * f0
    payload["f0"] = f0
    payload["d0"] = d0

    if kernel is not None:
        qf = quadratic_form_check(kernel, grid, n_probe=50, seed=master)
        payload["b1"] = qf.b1
        payload["b2"] = qf.b2
        payload["quadratic_form"] = {
            "max_ratio": qf.max_ratio, "min_form": qf.min_form, "n_probes": qf.n_probes,
        }
        payload["verdicts"]["quadratic_form"] = qf.passed

    # two weight probes: a flat weight exercises the integrated path, a unit-norm
    # node spike exercises a single margin (where a non-sub-Gaussian driver
    # cannot hide behind central-limit averaging)
    flat = np.ones(grid.n_nodes)
    spike = np.zeros(grid.n_nodes)
    spike[grid.n_nodes // 2] = 1.0 / np.sqrt(grid.h)
    lam_flat = np.array([0.0, 0.3, 0.6, 0.95]) * float(np.sqrt(8.0 / grid.T))
    lam_spike = np.array([0.0, 0.5, 1.5, 2.0])
    raw_flat = mgf_check(cfg.noise.driver, flat, grid, 1.0, lam_flat,
                         MGF_DEFAULT_REPS, derive_seed(master, STREAM_MGF, 1))
    raw_spike = mgf_check(cfg.noise.driver, spike, grid, 1.0, lam_spike,
                          MGF_DEFAULT_REPS, derive_seed(master, STREAM_MGF, 3))
    payload["mgf_raw"] = _mgf_dict(raw_flat)
    payload["mgf_raw_margin"] = _mgf_dict(raw_spike)
    payload["verdicts"]["mgf_raw"] = bool(raw_flat.overall_pass and raw_spike.overall_pass)
    if kernel is not None:
        lam_filt = np.array([0.0, 0.3, 0.6, 0.95]) * float(np.sqrt(8.0 / (d0 * grid.T)))
        filt = mgf_check(cfg.noise.driver, flat, grid, d0, lam_filt, MGF_DEFAULT_REPS,
                         derive_seed(master, STREAM_MGF, 2), kernel=kernel,
                         prehistory=cfg.noise.prehistory)
        payload["mgf_filtered"] = _mgf_dict(filt)
        payload["verdicts"]["mgf_filtered"] = filt.overall_pass

    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "check_report.json", cfg, payload)
    return 0


def _model_regressors(cfg: ExperimentConfig):
    from .model import make_regressors, tabulated_regressors

    if cfg.model.regressor_file is not None:
        return tabulated_regressors(cfg.model.regressor_file)
    return make_regressors(cfg.model.regressors, len(cfg.model.theta_true))


def _mgf_dict(report) -> dict:
    return {
        "lambda_grid": report.lambda_grid,
        "empirical_mean": report.empirical_mean,
        "band_low": report.band_low,
        "band_high": report.band_high,
        "envelope": report.envelope,
        "per_lambda_pass": [bool(v) for v in report.per_lambda_pass],
        "overall_pass": report.overall_pass,
    }


_COMMANDS = {
    "simulate": cmd_simulate,
    "tails": cmd_tails,
    "check": cmd_check,
    "constants": cmd_constants,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="regtails", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the experiment JSON config")
        p.add_argument("--workers", type=int, default=1, help="worker processes for trials")
        p.add_argument("--out", default=None, help="output directory (default: config output.directory)")
        p.add_argument("--seed", type=int, default=None, help="override montecarlo.master_seed")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(
                cfg, montecarlo=dataclasses.replace(cfg.montecarlo, master_seed=args.seed))
        out_dir = Path(args.out) if args.out else Path(cfg.output.directory)
        return _COMMANDS[args.command](cfg, out_dir, args.workers)
    except (ConfigError, ContractError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except FileNotFoundError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(f"run failed: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
