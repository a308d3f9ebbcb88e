"""Command-line entry point.

Subcommands: ``select``, ``screen``, ``simulate`` and ``knockoff-check``.
Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.
"""

import argparse
from dataclasses import asdict
import itertools
import os
import sys

import numpy as np

from .errors import NumericalError, StabGKnockError, ValidationError
from .io import load_dataset, read_config, result_document, run_manifest, dumps
from .spline import SplineSpec

MODE_ALIASES = {"knockoff+": "knockoff_plus", "knockoff_plus": "knockoff_plus",
                "knockoff": "knockoff"}


def _int(v):
    return int(v)


def _float_list(v):
    return [float(s) for s in str(v).split(",") if s.strip()]


def _int_list(v):
    return [int(s) for s in str(v).split(",") if s.strip()]


def _bool(v):
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(v)


# config-file keys and their parsers; a key overrides the flag of the same name
CONFIG_KEYS = dict(
    data=str, response=str, covariate=str, q=float, mode=str, statistic=str, L=_int,
    k=_int, n1=_int, seed=_int, lambda_rule=str, cv_rule=str, order=_int, interior_knots=_int,
    knot_rule=str, restarts=_int, threads=_int, force_two_stage=_bool, method=str,
    n=_int_list, p=_int_list, p1=_int, A=_float_list, rho=_float_list, cov_kind=str,
    design_dist=str, noise_sd=float, R=_int, swaps=_int,
)


def _common(sp, seed_required):
    sp.add_argument("--config", help="key=value file; its entries override flags")
    sp.add_argument("--out", help="result path (default: standard output)")
    sp.add_argument("--seed", type=int, default=None if seed_required else 0,
                    help="random seed" + (" (required)" if seed_required else ""))
    sp.add_argument("--threads", type=int, default=None,
                    help="cap on worker and BLAS threads (default: available cores)")


def _data_flags(sp):
    sp.add_argument("--data", help="CSV file with a header row")
    sp.add_argument("--response", default="y", help="response column (default y)")
    sp.add_argument("--covariate", default="u", help="nonparametric covariate column (default u)")
    sp.add_argument("--order", type=int, default=3, help="spline order (degree + 1)")
    sp.add_argument("--interior-knots", dest="interior_knots", type=int, default=None,
                    help="interior knots (default floor(n^(1/9)))")
    sp.add_argument("--knot-rule", dest="knot_rule", default="quantile",
                    choices=("quantile", "uniform"))


def _selection_flags(sp):
    sp.add_argument("--q", type=float, default=0.1, help="target FDR level in (0, 1)")
    sp.add_argument("--mode", default="knockoff+", help="knockoff+ (default) or knockoff")
    sp.add_argument("--statistic", default="spd", help="spd (default), lsm or lcd")
    sp.add_argument("--L", type=int, default=100, help="subsampling replicates for SPD")
    sp.add_argument("--lambda-rule", dest="lambda_rule", default="global_cv",
                    choices=("global_cv", "per_replicate_cv"))
    sp.add_argument("--cv-rule", dest="cv_rule", default="1se", choices=("1se", "min"),
                    help="lambda from the CV curve: one-standard-error (default) or minimum")
    sp.add_argument("--k", type=int, default=None, help="screening size (two-stage)")
    sp.add_argument("--n1", type=int, default=None, help="screening rows (two-stage)")
    sp.add_argument("--restarts", type=int, default=10, help="Sparse-PLS multistarts")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="stabgknock",
        description="FDR-controlled variable selection in partially linear models.")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("select", help="knockoff selection (one or two stages by dimension)")
    _data_flags(sp)
    _selection_flags(sp)
    sp.add_argument("--force-two-stage", dest="force_two_stage", action="store_true",
                    help="screen then select even when p < n/2")
    _common(sp, seed_required=True)

    sp = sub.add_parser("screen", help="Sparse-PLS, SIS or RRCS screening")
    _data_flags(sp)
    sp.add_argument("--method", default="spls", choices=("spls", "sis", "rrcs"))
    sp.add_argument("--k", type=int, default=None, help="screen size (default floor(n/log n))")
    sp.add_argument("--restarts", type=int, default=10, help="Sparse-PLS multistarts")
    _common(sp, seed_required=False)

    sp = sub.add_parser("simulate", help="replicated simulation sweep; writes a metrics CSV")
    _selection_flags(sp)
    sp.add_argument("--method", default="stab_gknock",
                    help="stab_gknock, spls_stab_gknock, bh or screen")
    sp.add_argument("--n", type=_int_list, default=[300])
    sp.add_argument("--p", type=_int_list, default=[60])
    sp.add_argument("--p1", type=int, default=10)
    sp.add_argument("--A", type=_float_list, default=[1.0], help="comma-separated amplitudes")
    sp.add_argument("--rho", type=_float_list, default=[0.2], help="comma-separated correlations")
    sp.add_argument("--cov-kind", dest="cov_kind", default="ar1", choices=("ar1", "compound"))
    sp.add_argument("--design-dist", dest="design_dist", default="gaussian",
                    choices=("gaussian", "student_t3"))
    sp.add_argument("--noise-sd", dest="noise_sd", type=float, default=1.0)
    sp.add_argument("--R", type=int, default=200, help="replicates per scenario")
    _common(sp, seed_required=True)

    sp = sub.add_parser("knockoff-check", help="print knockoff identity residuals")
    _data_flags(sp)
    sp.add_argument("--swaps", type=int, default=20, help="random swap sets to test")
    _common(sp, seed_required=False)
    return ap


def _apply_config(args):
    if not args.config:
        return {}
    cfg = read_config(args.config)
    for key, raw in cfg.items():
        if key not in CONFIG_KEYS:
            raise ValidationError(f"--config: unknown key {key!r}")
        try:
            setattr(args, key, CONFIG_KEYS[key](raw))
        except ValueError:
            raise ValidationError(f"--config: bad value {raw!r} for {key!r}") from None
    return cfg


def _check_args(args):
    if getattr(args, "q", None) is not None and not 0 < args.q < 1:
        raise ValidationError(f"--q must be in (0, 1), got {args.q}")
    if hasattr(args, "mode"):
        if args.mode not in MODE_ALIASES:
            raise ValidationError(f"--mode must be knockoff+ or knockoff, got {args.mode!r}")
        args.mode = MODE_ALIASES[args.mode]
    if hasattr(args, "statistic"):
        if args.statistic.upper() not in ("SPD", "LSM", "LCD"):
            raise ValidationError(f"--statistic must be spd, lsm or lcd, got {args.statistic!r}")
        args.statistic = args.statistic.upper()
    if hasattr(args, "L") and args.L < 1:
        raise ValidationError(f"--L must be >= 1, got {args.L}")
    if getattr(args, "k", None) is not None and args.k < 1:
        raise ValidationError(f"--k must be >= 1, got {args.k}")
    if args.seed is None:
        raise ValidationError(f"--seed is required for {args.command}")
    if args.threads is not None and args.threads < 1:
        raise ValidationError(f"--threads must be >= 1, got {args.threads}")
    if args.command != "simulate" and not getattr(args, "data", None):
        raise ValidationError(f"--data is required for {args.command}")


def _spline(args, n):
    if args.interior_knots is None:
        return SplineSpec.default(n, order=args.order, knot_rule=args.knot_rule)
    return SplineSpec(order=args.order, interior_knots=args.interior_knots,
                      knot_rule=args.knot_rule)


def _load(args):
    return load_dataset(args.data, response=args.response, covariate=args.covariate)


def _pipeline_config(args, n, threads):
    from .pipeline import PipelineConfig

    spline = _spline(args, n) if hasattr(args, "order") else None
    return PipelineConfig(q=args.q, mode=args.mode, spline=spline, L=args.L,
                          lambda_rule=args.lambda_rule, cv_rule=args.cv_rule,
                          statistic=args.statistic,
                          split_n1=args.n1, k=args.k, seed=args.seed,
                          restarts=args.restarts, n_jobs=threads)


def cmd_select(args, threads):
    from .pipeline import run_selection

    d = _load(args)
    cfg = _pipeline_config(args, d.n, threads)
    if args.interior_knots is None and args.order == 3 and args.knot_rule == "quantile":
        # default basis: let each stage size it from its own rows
        from dataclasses import replace
        cfg = replace(cfg, spline=None)
    out = run_selection(d, cfg, force_two_stage=args.force_two_stage)
    prov = out.provenance
    body = dict(
        algorithm=prov["algorithm"],
        n=d.n, p=d.p,
        q=out.q, mode=out.mode, statistic=prov["statistic"],
        selected=list(out.selected),
        selected_names=[d.names[j] for j in out.selected],
        threshold_T=out.threshold_T,
        fdp_hat=out.fdp_hat,
        W=out.W,
        W_columns=prov["columns"],
        provenance={k: v for k, v in prov.items() if k not in ("names", "columns")},
    )
    return body, cfg.to_dict()


def cmd_screen(args, threads):
    from .screening import (SolverOptions, default_k, rrcs_ranking, sis_ranking,
                            spls_ranking, spls_screen)
    from .spline import project_data

    d = _load(args)
    spec = _spline(args, d.n)
    pdata = project_data(d, spec)
    k = args.k if args.k is not None else default_k(d.n)
    body = dict(method=args.method, n=d.n, p=d.p, k=k, spline=asdict(spec))
    if args.method == "spls":
        if k >= d.p:
            raise ValidationError(f"--k must be below p={d.p}, got {k}")
        res = spls_screen(pdata.X_star, pdata.Y_star, k,
                          SolverOptions(restarts=args.restarts, n_jobs=threads), rng=args.seed)
        ranking = spls_ranking(res, pdata.X_star, pdata.Y_star)
        kept = list(res.kept)
        body.update(objective=res.objective, beta_k=res.beta_k[kept])
    else:
        rank_fn = sis_ranking if args.method == "sis" else rrcs_ranking
        ranking = rank_fn(pdata.X_star, pdata.Y_star)
        kept = sorted(int(j) for j in ranking[:k])
    body.update(kept=kept, kept_names=[d.names[j] for j in kept], ranking=ranking)
    cfg = dict(method=args.method, k=k, seed=args.seed, restarts=args.restarts,
               spline=asdict(spec))
    return body, cfg


def cmd_simulate(args, threads):
    from .screening import default_k
    from .simulation import (MetricReport, Scenario, export_results, make_method,
                             run_experiment, run_screening_experiment, scenario_dict,
                             screen_methods)

    if not args.out:
        raise ValidationError("--out is required for simulate (metrics CSV path)")
    report = MetricReport()
    scenarios = []
    grid = itertools.product(args.n, args.p, args.A, args.rho)
    for i, (n, p, A, rho) in enumerate(grid):
        sc = Scenario(n=n, p=p, p1=args.p1, A=A, rho=rho, cov_kind=args.cov_kind,
                      design_dist=args.design_dist, noise_sd=args.noise_sd,
                      seed=int(np.random.SeedSequence([args.seed, i]).generate_state(1)[0]))
        scenarios.append(scenario_dict(sc))
        if args.method == "screen":
            k = args.k if args.k is not None else default_k(n)
            rep = run_screening_experiment(sc, screen_methods(args.restarts), k, args.R)
        else:
            extra = dict(statistic=args.statistic, L=args.L, mode=args.mode,
                         lambda_rule=args.lambda_rule, cv_rule=args.cv_rule,
                         k=args.k, split_n1=args.n1,
                         restarts=args.restarts, n_jobs=threads)
            method = make_method(args.method, **({} if args.method == "bh" else extra))
            rep = run_experiment(sc, method, args.q, args.R)
        report = report.extend(rep)
    cfg = {k: getattr(args, k) for k in ("method", "q", "mode", "statistic", "L", "k", "n1",
                                         "lambda_rule", "cv_rule", "R", "restarts", "seed", "n", "p",
                                         "p1", "A", "rho", "cov_kind", "design_dist",
                                         "noise_sd")}
    return report, scenarios, cfg


def cmd_knockoff_check(args, threads):
    from .knockoffs import construct_gknockoff, estimate_sigma2, row_augment
    from .spline import project_data

    d = _load(args)
    spec = _spline(args, d.n)
    pdata = project_data(d, spec)
    K = spec.basis_dim
    if d.p >= d.n - K:
        raise ValidationError(f"knockoff-check needs p < n - K (n={d.n}, K={K}, p={d.p})")
    rng = np.random.default_rng(args.seed)
    if d.n - K < 2 * d.p:
        s2 = estimate_sigma2(pdata.X_star, pdata.Y_star, rng=rng, basis_dim=K)
        pdata = row_augment(pdata, s2, rng=rng, target_rows=2 * d.p + K)
    aug = construct_gknockoff(pdata.X_star, Z=pdata.Z, rng=rng)
    G0 = aug.gram
    dev = 0.0
    for _ in range(args.swaps):
        A = np.flatnonzero(rng.random(d.p) < 0.5)
        M = aug.swap(A).matrix
        dev = max(dev, float(np.max(np.abs(M.T @ M - G0))))
    body = dict(n=d.n, p=d.p, K=K, augmented_rows=pdata.augmented_rows,
                s=aug.s, flags=list(aug.flags),
                gram_residual=aug.construction_residuals[0],
                cross_residual=aug.construction_residuals[1],
                swap_deviation=dev, swap_sets=args.swaps)
    return body, dict(seed=args.seed, swaps=args.swaps, spline=asdict(spec))


def _emit(text, out):
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _write_manifest(out, manifest):
    if out:
        with open(str(out) + ".manifest.json", "w", encoding="utf-8") as fh:
            fh.write(dumps(manifest))
    else:
        sys.stderr.write("manifest: " + dumps(manifest))


def _run(args, argv):
    raw_cfg = _apply_config(args)
    _check_args(args)
    threads = args.threads or os.cpu_count() or 1
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=threads):
        if args.command == "simulate":
            from .simulation import export_results

            report, scenarios, cfg = cmd_simulate(args, threads)
            manifest = run_manifest("simulate", argv, cfg, args.seed)
            manifest.update(scenarios=scenarios, config_file=raw_cfg or None)
            export_results(report, args.out, manifest)
            return 0
        handler = dict(select=cmd_select, screen=cmd_screen,
                       knockoff_check=cmd_knockoff_check)[args.command.replace("-", "_")]
        body, cfg = handler(args, threads)
    doc = result_document(args.command, body)
    _emit(dumps(doc), args.out)
    if args.command == "knockoff-check" and args.out:
        sys.stdout.write(
            f"gram residual {body['gram_residual']:.3e}  "
            f"cross residual {body['cross_residual']:.3e}  "
            f"swap deviation {body['swap_deviation']:.3e}\n")
    manifest = run_manifest(args.command, argv, cfg, args.seed, input_path=args.data)
    _write_manifest(args.out, manifest)
    return 0


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        return _run(args, argv)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, StabGKnockError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
