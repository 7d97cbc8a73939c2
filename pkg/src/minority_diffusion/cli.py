"""Command-line interface.

Subcommands: train, sample, eval, verify, recipe. Exit codes: 0 on success,
2 for configuration errors, 3 for I/O / checkpoint errors, 4 for numeric
degeneracy, 5 for training divergence.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .checkpoint import save_checkpoint
from .config import _KEYMAP, ExperimentConfig
from .errors import (
    CheckpointError,
    ConfigError,
    NumericDegeneracyError,
    TrainingDivergenceError,
)
from .evaluation import (
    avg_knn_batch,
    lof_batch,
    log_density_gmm,
    verify_corollary1,
    verify_prop1,
)
from .harness import RECIPES, run_experiment
from .models import GmmScoreModel, MlpEpsModel, TrainOptions, train_dsm
from .schedule import perturb

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_TRAINING = 5


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = ExperimentConfig.from_text(fh.read())
        except OSError as exc:
            raise CheckpointError(f"cannot read config {args.config}: {exc}") from exc
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        overrides[key.strip()] = val.strip()
    if args.seed is not None:
        overrides["run.seed"] = str(args.seed)
    if getattr(args, "chains", None) is not None:
        overrides["run.chains"] = str(args.chains)
    return cfg.with_overrides(overrides)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="path to a flat key = value config file")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="minority-diffusion",
        description="Self-guided minority sampling on Gaussian-mixture benchmarks.",
        epilog="Config keys (usable in a config file or with --set KEY=VALUE): "
        + ", ".join(key for _, key in _KEYMAP)
        + ". See the minority_diffusion.config docstring for value ranges.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit the MLP noise predictor by denoising score matching")
    _add_common(p)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--steps", type=int, default=3000)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--train-size", type=int, default=20000)

    p = sub.add_parser("sample", help="run the (guided) sampler and evaluation")
    _add_common(p)
    p.add_argument("--chains", type=int, help="override run.chains")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("eval", help="recompute metrics for a samples.csv file")
    _add_common(p)
    p.add_argument("--samples", required=True, help="samples.csv from a previous run")
    p.add_argument("--out", help="where to write the metrics JSON (default stdout)")

    p = sub.add_parser("verify", help="numeric check of the metric/ELBO identity")
    _add_common(p)
    p.add_argument("--mode", choices=["prop1", "corollary1"], default="prop1")
    p.add_argument("--mc", type=int, default=4)
    p.add_argument("--out", help="where to write the report JSON (default stdout)")

    p = sub.add_parser("recipe", help="run a named experiment recipe")
    _add_common(p)
    p.add_argument("--recipe", required=True, choices=sorted(RECIPES))
    p.add_argument("--chains", type=int, help="override run.chains")
    p.add_argument("--out", required=True, help="output directory")
    return parser


def _cmd_train(args) -> int:
    cfg = _load_config(args)
    spec = cfg.gmm_spec()
    sched = cfg.noise_schedule()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.run_seed, 11]))
    data = spec.sample(args.train_size, rng)
    model = MlpEpsModel(sched, dim=spec.dim, seed=cfg.run_seed)
    opts = TrainOptions(steps=args.steps, batch_size=args.batch_size, lr=args.lr)
    history = train_dsm(model, data, sched, opts, rng)
    save_checkpoint(model, args.out)
    print(f"trained {args.steps} steps, final loss {history[-1]:.6f}, saved {args.out}")
    return 0


def _cmd_sample(args) -> int:
    cfg = _load_config(args)
    report = run_experiment(cfg, args.out)
    print(json.dumps(report.summary(), indent=2, sort_keys=True))
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_config(args)
    spec = cfg.gmm_spec()
    try:
        rows = np.loadtxt(args.samples, delimiter=",", skiprows=1)
    except OSError as exc:
        raise CheckpointError(f"cannot read {args.samples}: {exc}") from exc
    samples = np.atleast_2d(rows)[:, 1 : 1 + spec.dim]
    eval_rng = np.random.default_rng(np.random.SeedSequence([cfg.run_seed, 2**32 - 1]))
    reference = spec.sample(cfg.eval_reference_size, eval_rng)
    if cfg.eval_reference == "real":
        refset, offset = reference, None
    elif cfg.eval_reference == "generated":
        refset, offset = samples, 0
    else:
        refset, offset = np.concatenate([samples, reference]), 0
    out = {
        "log_density_mean": float(np.mean(log_density_gmm(samples, spec))),
        "avg_knn_mean": float(np.mean(avg_knn_batch(samples, refset, cfg.eval_knn_k, offset))),
        "lof_mean": float(np.mean(lof_batch(samples, refset, cfg.eval_lof_k, offset))),
        "reference_mode": cfg.eval_reference,
        "count": int(samples.shape[0]),
    }
    text = json.dumps(out, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def _cmd_verify(args) -> int:
    cfg = _load_config(args)
    spec = cfg.gmm_spec()
    sched = cfg.noise_schedule()
    model = GmmScoreModel(spec, sched)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.run_seed, 13]))
    x0 = spec.sample(1, rng)[0]
    if args.mode == "prop1":
        report = verify_prop1(x0, model, sched, m=args.mc, rng=rng)
    else:
        t = max(sched.T // 2, 1)
        x_t = perturb(x0, t, rng.standard_normal(x0.shape), sched)
        report = verify_corollary1(x_t, t, model, sched, m=args.mc, rng=rng)
    out = {"mode": args.mode, **report.summary()}
    text = json.dumps(out, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def _cmd_recipe(args) -> int:
    cfg = _load_config(args)
    summary = RECIPES[args.recipe](args.out, cfg)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "sample": _cmd_sample,
    "eval": _cmd_eval,
    "verify": _cmd_verify,
    "recipe": _cmd_recipe,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericDegeneracyError as exc:
        print(f"numeric degeneracy: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except TrainingDivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
