"""Command-line driver.

Subcommands:

    gen-data     generate a synthetic dataset into --out
    train        train one configuration, save checkpoints and dev EERs
    grid-search  pick the best configuration on the dev set
    evaluate     score test trials for a saved checkpoint (raw and s-norm)
    compare      run the full protocol per loss and emit a comparison CSV

Common flags: --config <path>, --seed <int>, --out <dir>.
"""

import argparse
import logging
import os
import sys

import numpy as np

from spklab import dataset as ds
from spklab import experiment, scoring, training
from spklab.config import Config, dataset_spec_from_config, empty_config, parse_config
from spklab.errors import ConfigError, DomainError, TrainingDiverged


def _add_common(parser: argparse.ArgumentParser, data: bool = True) -> None:
    parser.add_argument("--config", help="path to a key = value config file")
    parser.add_argument("--seed", type=int, default=0, help="base RNG seed")
    parser.add_argument("--out", required=True, help="output directory")
    if data:
        parser.add_argument("--data", required=True, help="dataset directory (from gen-data)")


def _load_config(args) -> Config:
    if args.config is None:
        return empty_config()
    return parse_config(args.config)


def _eval_options(config: Config) -> experiment.EvalOptions:
    section = config.section("eval")
    return experiment.EvalOptions(
        n_bootstrap=section.get("n_bootstrap", 500),
        top_n_candidates=section.get("top_n_candidates"),
        snorm_std=section.get("snorm_std", "population"),
        use_snorm=section.get("use_snorm", True),
    )


def cmd_gen_data(args) -> int:
    config = _load_config(args)
    spec = dataset_spec_from_config(config, seed=args.seed)
    ds.gen_synthetic_dataset(spec, args.out)
    total = spec.n_speakers_total
    print(f"wrote dataset with {total} speakers to {args.out}")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args)
    dataset = ds.load_dataset(args.data)
    kind = config.get("loss", "kind", "aam")
    train_config = experiment.base_config(kind, dataset, args.seed, config)

    os.makedirs(args.out, exist_ok=True)
    pool = dataset.train_pool()
    dev_pack = dataset.eval_pack("dev")
    checkpoints = training.train(pool, train_config, dev_pack)
    best = training.select_best(checkpoints) if checkpoints else \
        training.initial_checkpoint(pool, train_config, dev_pack)

    training.save_checkpoint(os.path.join(args.out, "best.ckpt"), best, train_config)
    with open(os.path.join(args.out, "dev_eer_curve.txt"), "w") as fh:
        for ckpt in checkpoints:
            fh.write(f"{ckpt.epoch} {ckpt.dev_eer!r}\n")
    print(f"best epoch {best.epoch} dev EER {best.dev_eer:.4f}")
    return 0


def cmd_grid_search(args) -> int:
    config = _load_config(args)
    dataset = ds.load_dataset(args.data)
    kind = config.get("loss", "kind", "aam")
    grid = experiment.default_grid(kind, dataset, args.seed, config)
    budget = config.get("training", "grid_epochs", 3)

    pool = dataset.train_pool()
    dev_pack = dataset.eval_pack("dev")
    chosen = training.grid_search(pool, grid, budget, dev_pack)

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "chosen_config.txt"), "w") as fh:
        for key, value in sorted(vars(chosen).items()):
            fh.write(f"{key} = {value!r}\n")
    print(f"chosen: lr={chosen.learning_rate} speakers={chosen.speakers_per_batch} "
          f"chunks={chosen.chunks_per_speaker}")
    return 0


def cmd_evaluate(args) -> int:
    config = _load_config(args)
    dataset = ds.load_dataset(args.data)
    ckpt, _ = training.load_checkpoint(args.checkpoint)
    opts = _eval_options(config)
    os.makedirs(args.out, exist_ok=True)

    test_pack = dataset.eval_pack("test")
    embeddings = training.embed_files(ckpt.encoder, test_pack.files)
    scored = scoring.score_trials(test_pack.trials, embeddings)
    report = scoring.eer_bootstrap_ci(scored, opts.n_bootstrap, seed=args.seed)
    scoring.write_scores(os.path.join(args.out, "scores_test_raw.txt"), scored)
    scoring.write_report(os.path.join(args.out, "report_raw.txt"), report)
    scoring.write_det_csv(os.path.join(args.out, "det_raw.csv"), scored)
    print(f"raw EER {report.eer:.4f} [{report.ci_low:.4f}, {report.ci_high:.4f}]")

    if opts.use_snorm:
        cohort_embeddings = np.vstack([
            emb for _, emb in sorted(
                training.embed_files(ckpt.encoder, dataset.files_of("cohort")).items()
            )
        ])
        dev_pack = dataset.eval_pack("dev")
        dev_embeddings = training.embed_files(ckpt.encoder, dev_pack.files)
        scored_dev = scoring.score_trials(dev_pack.trials, dev_embeddings)
        candidates = experiment.top_n_candidates(cohort_embeddings.shape[0], opts)
        top_n = scoring.tune_cohort_size(
            scored_dev, dev_embeddings, cohort_embeddings, candidates, opts.snorm_std
        )
        cohort = scoring.Cohort(cohort_embeddings, top_n)
        scored_norm = scoring.snorm_trials(scored, embeddings, cohort, opts.snorm_std)
        norm_report = scoring.eer_bootstrap_ci(scored_norm, opts.n_bootstrap, seed=args.seed)
        norm_report.top_n = top_n
        scoring.write_scores(os.path.join(args.out, "scores_test_snorm.txt"), scored_norm)
        scoring.write_report(os.path.join(args.out, "report_snorm.txt"), norm_report)
        print(f"s-norm EER {norm_report.eer:.4f} (top_n={top_n})")
    return 0


def cmd_compare(args) -> int:
    config = _load_config(args)
    dataset = ds.load_dataset(args.data)
    kinds = config.get("eval", "compare_losses", experiment.DEFAULT_COMPARE_LOSSES)
    budget = config.get("training", "epochs", 30)
    grid_epochs = config.get("training", "grid_epochs")

    results = experiment.compare_losses(
        dataset, kinds, args.out,
        seed=args.seed, budget_epochs=budget, grid_epochs=grid_epochs,
        config=config, eval_options=_eval_options(config),
    )
    for kind, result in results:
        if result is None:
            print(f"{kind}: failed")
        else:
            norm = "n/a" if result.normalized is None else f"{result.normalized.eer:.4f}"
            print(f"{kind}: raw {result.raw.eer:.4f} snorm {norm}")
    print(f"comparison table: {os.path.join(args.out, 'compare.csv')}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spklab",
        description="Metric-learning laboratory for speaker verification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    _add_common(p, data=False)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one configuration")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid-search", help="pick the best configuration on dev")
    _add_common(p)
    p.set_defaults(func=cmd_grid_search)

    p = sub.add_parser("evaluate", help="score test trials for a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint file to evaluate")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="compare loss functions end to end")
    _add_common(p)
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError, TrainingDiverged, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
