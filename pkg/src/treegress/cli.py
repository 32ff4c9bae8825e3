"""Command-line surface.

Subcommands: parse, sample, density, gen-data, fit, report.  Exit codes are
0 (ok), 2 (input problem), 3 (runtime failure).  Errors go to stderr as one
JSON object per failure.  Every command takes --seed; the TREEGRESS_SEED
environment variable supplies the default.  Output bytes are stable for a
fixed seed: floats print as their shortest round-trip decimal.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .errors import InputError, RuntimeFailure, TreegressError
from .experiments import (
    HyperelasticSpec,
    gen_hyperelastic,
    gen_isotherm,
    isotherm_spec,
    prior_library,
    read_dataset,
    rmse,
)
from .inference import (
    Draw,
    McmcConfig,
    Posterior,
    posterior_from_json,
    posterior_predict,
    posterior_to_json,
    run_chain,
    run_chains,
)
from .prte import PriorSpec, format_prte, load_prior, prte_density, sample_expression
from .pta import compile_prior, pta_eval
from .trees import eval_expression, parse_tree

_MCMC_FIELDS = set(McmcConfig.__dataclass_fields__)
_RUN_CONFIG_EXTRA = {"prior", "train", "out"}


def _default_seed() -> int:
    env = os.environ.get("TREEGRESS_SEED")
    return int(env) if env else 0


def _resolve_prior(ref: str) -> PriorSpec:
    if Path(ref).exists():
        return load_prior(ref)
    library = prior_library()
    if ref in library:
        return library[ref]
    raise InputError(
        f"'{ref}' is neither a prior file nor a library prior "
        f"(known: {', '.join(sorted(library))})"
    )


def _fmt(x: float) -> str:
    return repr(float(x))


# -- commands ---------------------------------------------------------------------


def cmd_parse(args) -> int:
    prior = load_prior(args.prior)
    print(format_prte(prior.root))
    print(f"name: {prior.name}")
    print(f"symbols: {len(prior.alphabet)}")
    print(f"markers: {', '.join(sorted(prior.markers)) if prior.markers else '(none)'}")
    print(f"variables: {', '.join(prior.variables) if prior.variables else '(none)'}")
    print(f"max_depth: {prior.max_depth}")
    if args.dump_pta:
        pta = compile_prior(prior)
        Path(args.dump_pta).write_text(pta.to_json(), encoding="utf-8")
        print(f"automaton: {pta.n_states} states -> {args.dump_pta}")
    return 0


def cmd_sample(args) -> int:
    prior = _resolve_prior(args.prior)
    if args.max_depth:
        prior = dataclasses.replace(prior, max_depth=args.max_depth)
    rng = np.random.default_rng(args.seed)
    for _ in range(args.n):
        expr = sample_expression(prior, rng)
        line = {
            "expr": str(expr.tree),
            "theta_c": list(expr.theta_c),
            "theta_d": [str(v) for v in expr.theta_d],
        }
        print(json.dumps(line))
    return 0


def cmd_density(args) -> int:
    prior = _resolve_prior(args.prior)
    tree = parse_tree(args.tree, prior.alphabet)
    want_oracle = args.via in ("oracle", "both")
    want_pta = args.via in ("pta", "both")
    oracle_val = prte_density(prior, tree) if want_oracle else None
    pta_val = pta_eval(compile_prior(prior), tree) if want_pta else None
    if args.via == "oracle":
        print(_fmt_density(oracle_val))
    elif args.via == "pta":
        print(_fmt(pta_val))
    else:
        print(f"oracle: {_fmt_density(oracle_val)}")
        print(f"pta: {_fmt(pta_val)}")
        print(f"difference: {_fmt(abs(float(oracle_val) - pta_val))}")
    return 0


def _fmt_density(value) -> str:
    from fractions import Fraction

    if isinstance(value, Fraction):
        if value.denominator == 1:
            return str(value.numerator)
        return f"{value.numerator}/{value.denominator} ≈ {_fmt(value)}"
    return _fmt(value)


def cmd_gen_data(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    task = args.task
    if task.startswith("isotherm:"):
        spec = isotherm_spec(task.split(":", 1)[1])
        datasets = gen_isotherm(spec, args.seed)
    elif task == "hyperelastic":
        datasets = gen_hyperelastic(HyperelasticSpec(), args.seed)
    else:
        raise InputError(f"unknown task '{task}' (isotherm:<name> or hyperelastic)")
    for split in ("train", "test1", "test2", "test3"):
        path = out_dir / f"{split}.csv"
        datasets[split].to_csv(path)
        print(str(path))
        resampled = datasets[split].meta.get("resampled", 0)
        if resampled:
            print(
                json.dumps({"note": "pole-adjacent inputs redrawn", "split": split,
                            "count": resampled}),
                file=sys.stderr,
            )
    return 0


def _load_run_config(path, seed_override) -> tuple:
    """Run configuration: the MCMC fields plus optional prior/train/out
    references.  Unknown keys are rejected; referenced paths must exist."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    unknown = set(doc) - _MCMC_FIELDS - _RUN_CONFIG_EXTRA
    if unknown:
        raise InputError(f"unknown config keys: {sorted(unknown)}")
    refs = {k: doc.pop(k) for k in list(doc) if k in _RUN_CONFIG_EXTRA}
    if "train" in refs and not Path(refs["train"]).exists():
        raise InputError(f"train file {refs['train']} does not exist")
    if seed_override is not None:
        doc["seed"] = seed_override
    config = McmcConfig(**doc)
    return config, refs


def cmd_fit(args) -> int:
    config, refs = _load_run_config(args.config, args.seed)
    prior_ref = args.prior or refs.get("prior")
    train_ref = args.train or refs.get("train")
    out_ref = args.out or refs.get("out")
    if not (prior_ref and train_ref and out_ref):
        raise InputError("fit needs a prior, a train csv, and an output path")
    prior = _resolve_prior(prior_ref)
    train = read_dataset(train_ref)

    partial: list[Draw] = []
    try:
        if args.chains > 1:
            posterior = run_chains(prior, train, config, args.chains, on_draw=partial.append)
        else:
            posterior = run_chain(prior, train, config, on_draw=partial.append)
    except TreegressError as exc:
        trace = Posterior(tuple(partial), {}, config, config.seed)
        Path(out_ref).write_text(posterior_to_json(trace), encoding="utf-8")
        raise RuntimeFailure(
            f"inference stopped after {len(partial)} draws: {exc}"
        ) from exc

    Path(out_ref).write_text(posterior_to_json(posterior), encoding="utf-8")
    _print_fit_summary(posterior)
    return 0


def _print_fit_summary(posterior: Posterior) -> None:
    print(f"draws: {len(posterior.draws)}")
    for move, s in posterior.accept_stats.items():
        rate = s["accepted"] / s["proposed"] if s["proposed"] else 0.0
        print(f"accept[{move}]: {s['accepted']}/{s['proposed']} ({rate:.3f})")
    counts = {}
    for d in posterior.draws:
        counts[str(d.expr.tree)] = counts.get(str(d.expr.tree), 0) + 1
    top = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:5]
    for text, c in top:
        print(f"top: {c}/{len(posterior.draws)} {text}")
    sigma_mean = sum(d.sigma for d in posterior.draws) / len(posterior.draws)
    print(f"sigma_mean: {_fmt(sigma_mean)}")


def cmd_report(args) -> int:
    posterior = posterior_from_json(Path(args.posterior).read_text(encoding="utf-8"))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed) if args.with_noise else None

    metrics_rows = []
    bands_rows = []
    bands_header = None
    for data_path in args.data:
        ds = read_dataset(data_path)
        name = Path(data_path).stem
        inputs = ds.inputs()
        per_draw = []
        for d in posterior.draws:
            pred = eval_expression(d.expr, inputs)
            if np.isfinite(pred).all():
                per_draw.append(rmse(pred, ds.target))
        if per_draw:
            mean = float(np.mean(per_draw))
            std = float(np.std(per_draw))
        else:
            mean = std = math.nan
        metrics_rows.append((name, mean, std, len(posterior.draws) - len(per_draw)))

        bands = posterior_predict(posterior, inputs, rng=rng, strict=False)
        x_names = list(ds.header[:-1])
        if bands_header is None:
            bands_header = ["dataset", *x_names, "mean", "q05", "q50", "q95", "flagged"]
        order = np.argsort(inputs[x_names[0]], kind="stable")
        for j in order:
            flagged = int(bands["dropped"][j] == len(posterior.draws))
            bands_rows.append(
                (
                    name,
                    *[inputs[v][j] for v in x_names],
                    bands["mean"][j],
                    bands["q05"][j],
                    bands["q50"][j],
                    bands["q95"][j],
                    flagged,
                )
            )

    metrics_path = out_dir / "metrics.csv"
    with open(metrics_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("dataset,rmse_mean,rmse_std,dropped_draws\n")
        for name, mean, std, dropped in metrics_rows:
            fh.write(f"{name},{_fmt(mean)},{_fmt(std)},{dropped}\n")
    bands_path = out_dir / "bands.csv"
    with open(bands_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(bands_header) + "\n")
        for row in bands_rows:
            cells = [row[0]] + [
                _fmt(v) if isinstance(v, float) else str(v) for v in row[1:]
            ]
            fh.write(",".join(cells) + "\n")
    print(str(metrics_path))
    print(str(bands_path))
    return 0


# -- wiring -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treegress",
        description="Bayesian symbolic regression with tree-expression priors",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="validate a prior file, print its canonical form")
    p.add_argument("--prior", required=True)
    p.add_argument("--dump-pta", default=None, help="write the compiled automaton as JSON")
    p.set_defaults(fn=cmd_parse)

    p = sub.add_parser("sample", help="draw expressions from a prior")
    p.add_argument("--prior", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--max-depth", type=int, default=None)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("density", help="prior probability of one tree")
    p.add_argument("--prior", required=True)
    p.add_argument("--tree", required=True)
    p.add_argument("--via", choices=("pta", "oracle", "both"), default="both")
    p.set_defaults(fn=cmd_density)

    p = sub.add_parser("gen-data", help="write synthetic benchmark csv files")
    p.add_argument("--task", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("fit", help="run the posterior sampler")
    p.add_argument("--prior", default=None)
    p.add_argument("--train", default=None)
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--chains", type=int, default=1)
    p.set_defaults(fn=cmd_fit)

    p = sub.add_parser("report", help="metrics and predictive bands from a posterior")
    p.add_argument("--posterior", required=True)
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--with-noise", action="store_true")
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if hasattr(args, "seed") and args.seed is None and args.command != "fit":
        args.seed = _default_seed()
    try:
        return args.fn(args)
    except (InputError, FileNotFoundError, json.JSONDecodeError) as exc:
        _report_error(exc)
        return 2
    except TreegressError as exc:
        _report_error(exc)
        return 3
    except Exception as exc:  # anything unforeseen is a runtime failure
        _report_error(exc)
        return 3


def _report_error(exc: Exception) -> None:
    print(
        json.dumps({"error": type(exc).__name__, "message": str(exc)}),
        file=sys.stderr,
    )


if __name__ == "__main__":
    sys.exit(main())
