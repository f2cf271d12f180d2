"""Experiment orchestration: grid search, full training, raw and
score-normalized evaluation, and multi-loss comparison tables.

The protocol per loss: grid-search candidate configs on dev EER with a
short epoch budget, retrain the winner for the full budget, select the
best epoch on dev, score the test trials raw, tune the s-norm cohort size
on dev, then score the test trials normalized. Everything is seeded and
sequential, so a rerun reproduces every output file byte for byte.
"""

import logging
import os
from dataclasses import dataclass, replace

import numpy as np

from spklab import scoring, training
from spklab.config import Config
from spklab.dataset import SpeakerDataset
from spklab.errors import DomainError, TrainingDiverged

logger = logging.getLogger(__name__)

COMPARE_CSV_HEADER = "loss,eer_raw,ci_low,ci_high,eer_snorm,improvement_pct"

# The six-loss roster compared in the study (the bias-free and hinge
# variants stay available as loss kinds but are not part of the roster).
DEFAULT_COMPARE_LOSSES = ("ce", "coco", "aam", "center", "contrastive", "triplet_sigmoid")

LR_GRID = (0.001, 0.01, 0.1)
SPEAKERS_GRID = (20, 40)
CHUNKS_GRID = (2, 3)

# Tuned operating points per loss: (learning rate, alpha, margin, lambda,
# speakers per batch, chunks per speaker).
TUNED_DEFAULTS = {
    "ce": (0.1, 10.0, 0.0, 1.0, 128, 1),
    "ce_nobias": (0.1, 10.0, 0.0, 1.0, 128, 1),
    "coco": (0.1, 10.0, 0.0, 1.0, 128, 1),
    "aam": (0.01, 10.0, 0.05, 1.0, 128, 1),
    "center": (0.1, 10.0, 0.0, 1.0, 128, 1),
    "contrastive": (0.1, 10.0, 0.2, 1.0, 20, 3),
    "triplet_hinge": (0.01, 10.0, 0.1, 1.0, 40, 3),
    "triplet_sigmoid": (0.01, 10.0, 0.0, 1.0, 40, 3),
}


@dataclass
class EvalOptions:
    n_bootstrap: int = 500
    top_n_candidates: tuple[int, ...] | None = None
    snorm_std: str = "population"
    use_snorm: bool = True


@dataclass
class ExperimentResult:
    loss_kind: str
    config: training.TrainConfig
    raw: scoring.EerReport
    normalized: scoring.EerReport | None
    top_n: int | None
    checkpoint_path: str | None
    improvement_pct: float

    def csv_row(self) -> str:
        if self.normalized is None:
            return (f"{self.loss_kind},{self.raw.eer:.9g},{self.raw.ci_low:.9g},"
                    f"{self.raw.ci_high:.9g},nan,nan")
        return (f"{self.loss_kind},{self.raw.eer:.9g},{self.raw.ci_low:.9g},"
                f"{self.raw.ci_high:.9g},{self.normalized.eer:.9g},"
                f"{self.improvement_pct:.9g}")


def base_config(loss_kind: str, dataset: SpeakerDataset, seed: int, config: Config) -> training.TrainConfig:
    """Tuned defaults for a loss kind, adapted to the dataset size and
    overridden by any explicit config values."""
    lr, alpha, margin, lam, speakers, chunks = TUNED_DEFAULTS[loss_kind]
    n_train = len(dataset.partitions["train"])
    speakers = min(speakers, n_train)
    enc_section = config.section("encoder")
    loss_section = config.section("loss")
    train_section = config.section("training")
    return training.TrainConfig(
        loss_kind=loss_kind,
        learning_rate=train_section.get("learning_rate", lr),
        epochs=train_section.get("epochs", 30),
        seed=seed,
        alpha=loss_section.get("alpha", alpha),
        margin=loss_section.get("margin", margin),
        lam=loss_section.get("lambda", lam),
        center_penalty=loss_section.get("center_penalty", "squared_cos_distance"),
        speakers_per_batch=min(train_section.get("speakers_per_batch", speakers), n_train),
        chunks_per_speaker=train_section.get("chunks_per_speaker", chunks),
        hidden_dim=enc_section.get("hidden_dim", 32),
        embedding_dim=enc_section.get("embedding_dim", 16),
        activation=enc_section.get("activation", "tanh"),
        augment_snr_db=config.snr_range("training"),
    )


def default_grid(loss_kind: str, dataset: SpeakerDataset, seed: int, config: Config) -> list[training.TrainConfig]:
    """Candidate configs for the initial search: the learning-rate grid,
    crossed with batch-shape candidates for the contrast losses, around the
    tuned hyper-parameters (extendable via *_grid config keys)."""
    base = base_config(loss_kind, dataset, seed, config)
    n_train = len(dataset.partitions["train"])
    train_section = config.section("training")
    loss_section = config.section("loss")

    lrs = train_section.get("lr_grid", LR_GRID)
    if base.batch_spec().mode == "classification":
        shapes = [(base.speakers_per_batch, base.chunks_per_speaker)]
    else:
        speakers = train_section.get("speakers_grid", SPEAKERS_GRID)
        chunks = train_section.get("chunks_grid", CHUNKS_GRID)
        shapes = [(min(s, n_train), c) for s in speakers for c in chunks]
        shapes = sorted(set(shapes))

    alphas = loss_section.get("alpha_grid", (base.alpha,))
    margins = loss_section.get("margin_grid", (base.margin,))
    lams = loss_section.get("lambda_grid", (base.lam,))

    grid = []
    for lr in lrs:
        for s, c in shapes:
            for alpha in alphas:
                for margin in margins:
                    for lam in lams:
                        grid.append(replace(
                            base, learning_rate=lr, speakers_per_batch=s,
                            chunks_per_speaker=c, alpha=alpha, margin=margin, lam=lam,
                        ))
    return grid


def top_n_candidates(cohort_size: int, opts: EvalOptions) -> list[int]:
    if opts.top_n_candidates:
        return [n for n in opts.top_n_candidates if 2 <= n <= cohort_size]
    raw = [2, 5, 10, 20, 50, 100, cohort_size]
    return sorted({n for n in raw if 2 <= n <= cohort_size})


def run_experiment(
    dataset: SpeakerDataset,
    loss_kind: str,
    out_dir,
    seed: int = 0,
    budget_epochs: int = 30,
    grid_epochs: int | None = None,
    config: Config | None = None,
    eval_options: EvalOptions | None = None,
    grid: list[training.TrainConfig] | None = None,
) -> ExperimentResult:
    """Full per-loss protocol; writes scores, reports, and the selected
    checkpoint under `out_dir` and returns the result summary."""
    config = config or Config({})
    opts = eval_options or EvalOptions()
    os.makedirs(out_dir, exist_ok=True)

    pool = dataset.train_pool()
    dev_pack = dataset.eval_pack("dev")
    test_pack = dataset.eval_pack("test")

    if grid is None:
        grid = default_grid(loss_kind, dataset, seed, config)
    if grid_epochs is None:
        grid_epochs = max(1, budget_epochs // 10)

    if len(grid) > 1:
        chosen = training.grid_search(pool, grid, grid_epochs, dev_pack)
    else:
        chosen = grid[0]
    chosen = replace(chosen, epochs=budget_epochs)

    if budget_epochs > 0:
        checkpoints = training.train(pool, chosen, dev_pack)
        best = training.select_best(checkpoints)
    else:
        best = training.initial_checkpoint(pool, chosen, dev_pack)

    ckpt_path = os.path.join(out_dir, "best.ckpt")
    training.save_checkpoint(ckpt_path, best, chosen)
    with open(os.path.join(out_dir, "config_echo.txt"), "w") as fh:
        for key, value in sorted(vars(chosen).items()):
            fh.write(f"{key} = {value!r}\n")

    test_embeddings = training.embed_files(best.encoder, test_pack.files)
    scored_raw = scoring.score_trials(test_pack.trials, test_embeddings)
    raw_report = scoring.eer_bootstrap_ci(scored_raw, opts.n_bootstrap, seed=seed)
    scoring.write_scores(os.path.join(out_dir, "scores_test_raw.txt"), scored_raw)
    scoring.write_report(os.path.join(out_dir, "report_raw.txt"), raw_report)
    scoring.write_det_csv(os.path.join(out_dir, "det_raw.csv"), scored_raw)

    normalized_report, top_n = None, None
    improvement = 0.0
    if opts.use_snorm:
        cohort_embeddings = np.vstack([
            emb for _, emb in sorted(
                training.embed_files(best.encoder, dataset.files_of("cohort")).items()
            )
        ])
        dev_embeddings = training.embed_files(best.encoder, dev_pack.files)
        scored_dev = scoring.score_trials(dev_pack.trials, dev_embeddings)
        candidates = top_n_candidates(cohort_embeddings.shape[0], opts)
        top_n = scoring.tune_cohort_size(
            scored_dev, dev_embeddings, cohort_embeddings, candidates, opts.snorm_std
        )
        cohort = scoring.Cohort(cohort_embeddings, top_n)
        scored_norm = scoring.snorm_trials(scored_raw, test_embeddings, cohort, opts.snorm_std)
        normalized_report = scoring.eer_bootstrap_ci(scored_norm, opts.n_bootstrap, seed=seed)
        normalized_report.top_n = top_n
        scoring.write_scores(os.path.join(out_dir, "scores_test_snorm.txt"), scored_norm)
        scoring.write_report(os.path.join(out_dir, "report_snorm.txt"), normalized_report)
        if raw_report.eer > 0:
            improvement = 100.0 * (raw_report.eer - normalized_report.eer) / raw_report.eer

    result = ExperimentResult(
        loss_kind=loss_kind,
        config=chosen,
        raw=raw_report,
        normalized=normalized_report,
        top_n=top_n,
        checkpoint_path=ckpt_path,
        improvement_pct=improvement,
    )
    _write_result_summary(os.path.join(out_dir, "result.txt"), result)
    return result


def _write_result_summary(path, result: ExperimentResult) -> None:
    lines = [
        f"loss: {result.loss_kind}",
        f"eer_raw: {result.raw.eer!r}",
        f"ci_low: {result.raw.ci_low!r}",
        f"ci_high: {result.raw.ci_high!r}",
    ]
    if result.normalized is not None:
        lines += [
            f"eer_snorm: {result.normalized.eer!r}",
            f"snorm_ci_low: {result.normalized.ci_low!r}",
            f"snorm_ci_high: {result.normalized.ci_high!r}",
            f"top_n: {result.top_n}",
            f"improvement_pct: {result.improvement_pct!r}",
        ]
    lines += [
        f"learning_rate: {result.config.learning_rate!r}",
        f"epochs: {result.config.epochs}",
        f"seed: {result.config.seed}",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def compare_losses(
    dataset: SpeakerDataset,
    loss_kinds,
    out_dir,
    seed: int = 0,
    budget_epochs: int = 30,
    grid_epochs: int | None = None,
    config: Config | None = None,
    eval_options: EvalOptions | None = None,
) -> list[tuple[str, ExperimentResult | None]]:
    """Run the full protocol once per loss and emit a comparison CSV.

    A failing loss is recorded as a nan row and the others proceed.
    """
    if len(loss_kinds) < 1:
        raise DomainError("compare_losses needs at least one loss kind")
    os.makedirs(out_dir, exist_ok=True)
    results: list[tuple[str, ExperimentResult | None]] = []
    failures: list[str] = []
    for kind in loss_kinds:
        try:
            result = run_experiment(
                dataset, kind, os.path.join(out_dir, kind),
                seed=seed, budget_epochs=budget_epochs, grid_epochs=grid_epochs,
                config=config, eval_options=eval_options,
            )
            results.append((kind, result))
        except (DomainError, TrainingDiverged, OSError) as exc:
            logger.warning("loss %s failed: %s", kind, exc)
            failures.append(f"{kind}: {exc}")
            results.append((kind, None))

    csv_lines = [COMPARE_CSV_HEADER]
    for kind, result in results:
        if result is None:
            csv_lines.append(f"{kind},nan,nan,nan,nan,nan")
        else:
            csv_lines.append(result.csv_row())
    with open(os.path.join(out_dir, "compare.csv"), "w") as fh:
        fh.write("\n".join(csv_lines) + "\n")
    if failures:
        with open(os.path.join(out_dir, "failures.txt"), "w") as fh:
            fh.write("\n".join(failures) + "\n")
    return results
