"""Verification back end: cosine trial scoring, adaptive s-norm, EER, and
bootstrap confidence intervals.

Scores are cosine similarities (higher = more similar). The equal error
rate is the crossing of the piecewise-linear false-acceptance and
false-rejection curves swept over the sorted distinct scores, linearly
interpolated when no threshold hits the crossing exactly.
"""

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from spklab.embedding import cosine_similarity
from spklab.errors import DegenerateCohortError, DomainError

logger = logging.getLogger(__name__)

SNORM_STD_MODES = ("population", "sample")
SNORM_MIN_STD = 1e-12


@dataclass
class Trial:
    """One enrollment/test comparison with its ground truth and score slot."""

    enroll: str
    test: str
    is_target: bool
    score: float | None = None


@dataclass
class Cohort:
    """Held-out file embeddings used for score normalization, and how many
    of the top cohort scores enter the statistics."""

    embeddings: np.ndarray  # (n_cohort, dim)
    top_n: int

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] == 0:
            raise DomainError("cohort needs a non-empty (n, dim) embedding matrix")
        if not 2 <= self.top_n <= self.embeddings.shape[0]:
            raise DomainError(
                f"top_n must lie in [2, {self.embeddings.shape[0]}], got {self.top_n}"
            )


@dataclass
class EerReport:
    """EER point estimate and threshold, plus the bootstrap interval when
    one was computed (ci fields are None for point-only reports)."""

    eer: float
    threshold: float
    ci_low: float | None = None
    ci_high: float | None = None
    n_bootstrap: int = 0
    n_target: int = 0
    n_nontarget: int = 0
    top_n: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.eer <= 1.0:
            raise DomainError(f"eer out of [0, 1]: {self.eer}")
        if (self.ci_low is None) != (self.ci_high is None):
            raise DomainError("ci bounds must be both present or both absent")
        if self.ci_low is not None:
            if not (0.0 <= self.ci_low <= self.ci_high <= 1.0):
                raise DomainError(f"bad ci interval [{self.ci_low}, {self.ci_high}]")


def score_trials(trials: Sequence[Trial], embeddings: Mapping[str, np.ndarray]) -> list[Trial]:
    """Score every trial with the cosine of its enrollment/test embeddings.

    Returns new Trial objects in the same order. An unresolved reference
    or zero-norm embedding raises a DomainError naming the trial.
    """
    out = []
    for t in trials:
        for ref in (t.enroll, t.test):
            if ref not in embeddings:
                raise DomainError(f"trial {t.enroll} vs {t.test}: unknown file id {ref!r}")
        try:
            s = cosine_similarity(embeddings[t.enroll], embeddings[t.test])
        except DomainError as exc:
            raise DomainError(f"trial {t.enroll} vs {t.test}: {exc}") from exc
        out.append(Trial(t.enroll, t.test, t.is_target, score=s))
    return out


def _top_stats(scores: np.ndarray, top_n: int, std_mode: str) -> tuple[float, float]:
    top = np.sort(scores)[-top_n:]
    mu = float(top.mean())
    ddof = 0 if std_mode == "population" else 1
    sigma = float(top.std(ddof=ddof))
    return mu, sigma


def cohort_stats(embedding, cohort: Cohort, std_mode: str = "population") -> tuple[float, float]:
    """Mean and std of the top_n largest cosine scores against the cohort."""
    if std_mode not in SNORM_STD_MODES:
        raise DomainError(f"unknown std mode {std_mode!r}")
    scores = np.array([cosine_similarity(embedding, c) for c in cohort.embeddings])
    return _top_stats(scores, cohort.top_n, std_mode)


def adaptive_snorm(raw_score: float, enroll, test, cohort: Cohort, std_mode: str = "population") -> float:
    """Symmetric score normalization against the top-N cohort scores.

        s' = ((raw - mu_e) / sigma_e + (raw - mu_t) / sigma_t) / 2

    where mu/sigma are taken over each side's top_n highest cohort
    cosines. The standard deviation uses the population formula by
    default (std_mode="sample" divides by top_n - 1 instead). A spread
    below 1e-12 on either side raises DegenerateCohortError.
    """
    mu_e, sd_e = cohort_stats(enroll, cohort, std_mode)
    mu_t, sd_t = cohort_stats(test, cohort, std_mode)
    if sd_e < SNORM_MIN_STD or sd_t < SNORM_MIN_STD:
        raise DegenerateCohortError(
            f"cohort top-{cohort.top_n} scores have near-zero spread "
            f"(sigma_e={sd_e:.3e}, sigma_t={sd_t:.3e})"
        )
    return 0.5 * ((raw_score - mu_e) / sd_e + (raw_score - mu_t) / sd_t)


def snorm_trials(
    scored: Sequence[Trial],
    embeddings: Mapping[str, np.ndarray],
    cohort: Cohort,
    std_mode: str = "population",
) -> list[Trial]:
    """Apply adaptive s-norm to a scored trial list.

    Cohort statistics are computed once per distinct file id; the math is
    identical to calling `adaptive_snorm` per trial.
    """
    stats: dict[str, tuple[float, float]] = {}
    for t in scored:
        for ref in (t.enroll, t.test):
            if ref not in stats:
                stats[ref] = cohort_stats(embeddings[ref], cohort, std_mode)
    out = []
    for t in scored:
        if t.score is None:
            raise DomainError(f"trial {t.enroll} vs {t.test} has no raw score")
        mu_e, sd_e = stats[t.enroll]
        mu_t, sd_t = stats[t.test]
        if sd_e < SNORM_MIN_STD or sd_t < SNORM_MIN_STD:
            raise DegenerateCohortError(
                f"cohort top-{cohort.top_n} scores have near-zero spread for "
                f"trial {t.enroll} vs {t.test}"
            )
        s = 0.5 * ((t.score - mu_e) / sd_e + (t.score - mu_t) / sd_t)
        out.append(Trial(t.enroll, t.test, t.is_target, score=s))
    return out


def _split_scores(scored: Sequence[Trial]) -> tuple[np.ndarray, np.ndarray]:
    tar, non = [], []
    for t in scored:
        if t.score is None:
            raise DomainError(f"trial {t.enroll} vs {t.test} has no score")
        (tar if t.is_target else non).append(t.score)
    if not tar or not non:
        raise DomainError("EER needs at least one target and one non-target trial")
    return np.asarray(tar, dtype=np.float64), np.asarray(non, dtype=np.float64)


def _operating_points(tar: np.ndarray, non: np.ndarray):
    """FAR/FRR swept over the sorted distinct scores plus an upper sentinel.

    FAR(t) = fraction of non-targets >= t (starts at 1), FRR(t) = fraction
    of targets < t (starts at 0); the sentinel past the max score closes
    the sweep at (FAR, FRR) = (0, 1).
    """
    thresholds = np.unique(np.concatenate([tar, non]))
    far = np.empty(thresholds.size + 1)
    frr = np.empty(thresholds.size + 1)
    # counts via sorted positions: #non >= t and #tar < t
    non_sorted = np.sort(non)
    tar_sorted = np.sort(tar)
    far[:-1] = non.size - np.searchsorted(non_sorted, thresholds, side="left")
    frr[:-1] = np.searchsorted(tar_sorted, thresholds, side="left")
    far[:-1] /= non.size
    frr[:-1] /= tar.size
    far[-1], frr[-1] = 0.0, 1.0
    thresholds = np.append(thresholds, thresholds[-1] + 1.0)
    return thresholds, far, frr


def eer_from_scores(tar: np.ndarray, non: np.ndarray) -> tuple[float, float]:
    """(EER, threshold) at the FAR/FRR crossing, linearly interpolated."""
    thresholds, far, frr = _operating_points(tar, non)
    d = far - frr
    # d starts at 1 and ends at -1, so a sign change always exists.
    k = int(np.argmax(d <= 0))
    if d[k] == 0.0:
        return float(far[k]), float(thresholds[k])
    j = k - 1
    u = d[j] / (d[j] - d[k])
    eer_value = far[j] + u * (far[k] - far[j])
    threshold = thresholds[j] + u * (thresholds[k] - thresholds[j])
    return float(eer_value), float(threshold)


def eer(scored: Sequence[Trial]) -> EerReport:
    """Point EER report (no confidence interval) for a scored trial list."""
    tar, non = _split_scores(scored)
    value, threshold = eer_from_scores(tar, non)
    return EerReport(value, threshold, n_target=tar.size, n_nontarget=non.size)


def eer_bootstrap_ci(
    scored: Sequence[Trial],
    n_bootstrap: int,
    confidence: float = 0.95,
    seed: int = 0,
) -> EerReport:
    """EER with an empirical-percentile bootstrap confidence interval.

    Targets and non-targets are resampled with replacement independently,
    preserving each class count, so every resample keeps both classes
    populated. Each resample draws its RNG substream from (seed, index),
    making the interval deterministic and order-independent.
    """
    if n_bootstrap < 100:
        raise DomainError(f"n_bootstrap must be >= 100, got {n_bootstrap}")
    if not 0.0 < confidence < 1.0:
        raise DomainError(f"confidence must lie in (0, 1), got {confidence}")
    tar, non = _split_scores(scored)
    value, threshold = eer_from_scores(tar, non)

    boot = np.empty(n_bootstrap)
    for i in range(n_bootstrap):
        rng = np.random.default_rng((seed, i))
        t = tar[rng.integers(0, tar.size, size=tar.size)]
        n = non[rng.integers(0, non.size, size=non.size)]
        boot[i], _ = eer_from_scores(t, n)

    half = 100.0 * (1.0 - confidence) / 2.0
    lo, hi = np.percentile(boot, [half, 100.0 - half])
    return EerReport(
        value,
        threshold,
        ci_low=float(lo),
        ci_high=float(hi),
        n_bootstrap=n_bootstrap,
        n_target=tar.size,
        n_nontarget=non.size,
    )


def det_points(scored: Sequence[Trial]) -> np.ndarray:
    """(FAR, FRR) operating points over the score sweep, for DET export."""
    tar, non = _split_scores(scored)
    _, far, frr = _operating_points(tar, non)
    return np.column_stack([far, frr])


def tune_cohort_size(
    scored_dev: Sequence[Trial],
    embeddings: Mapping[str, np.ndarray],
    cohort_embeddings: np.ndarray,
    candidates: Sequence[int],
    std_mode: str = "population",
) -> int:
    """Pick the top_n minimizing dev EER after normalization.

    Ties go to the smallest candidate; candidates that hit a degenerate
    cohort are disqualified with a logged warning. Raises DomainError if
    no candidate survives.
    """
    if len(candidates) == 0:
        raise DomainError("tune_cohort_size: empty candidate list")
    cohort_embeddings = np.asarray(cohort_embeddings, dtype=np.float64)
    best_n, best_eer = None, None
    for top_n in sorted(set(int(c) for c in candidates)):
        try:
            cohort = Cohort(cohort_embeddings, top_n)
            normalized = snorm_trials(scored_dev, embeddings, cohort, std_mode)
            candidate_eer = eer(normalized).eer
        except DegenerateCohortError as exc:
            logger.warning("cohort size %d disqualified: %s", top_n, exc)
            continue
        if best_eer is None or candidate_eer < best_eer:
            best_n, best_eer = top_n, candidate_eer
    if best_n is None:
        raise DomainError("every candidate cohort size was degenerate")
    return best_n


# --- text formats -----------------------------------------------------------
#
# Trial list: one per line, "<label> <enroll_id> <test_id>", label 1 = target.
# Score file: one per line, "<enroll_id> <test_id> <score>" (9 significant digits).
# Report:     "key: value" lines.


def write_trials(path, trials: Sequence[Trial]) -> None:
    with open(path, "w") as fh:
        for t in trials:
            fh.write(f"{1 if t.is_target else 0} {t.enroll} {t.test}\n")


def read_trials(path) -> list[Trial]:
    out = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3 or parts[0] not in ("0", "1"):
                raise DomainError(f"{path}:{line_no}: bad trial line {line.rstrip()!r}")
            out.append(Trial(parts[1], parts[2], parts[0] == "1"))
    return out


def write_scores(path, scored: Sequence[Trial]) -> None:
    with open(path, "w") as fh:
        for t in scored:
            if t.score is None:
                raise DomainError(f"trial {t.enroll} vs {t.test} has no score")
            fh.write(f"{t.enroll} {t.test} {t.score:.9g}\n")


def read_scores(path) -> list[tuple[str, str, float]]:
    out = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise DomainError(f"{path}:{line_no}: bad score line {line.rstrip()!r}")
            out.append((parts[0], parts[1], float(parts[2])))
    return out


def format_report(report: EerReport) -> str:
    lines = [f"eer: {report.eer!r}", f"threshold: {report.threshold!r}"]
    if report.ci_low is not None:
        lines += [f"ci_low: {report.ci_low!r}", f"ci_high: {report.ci_high!r}"]
    lines += [
        f"n_bootstrap: {report.n_bootstrap}",
        f"n_target: {report.n_target}",
        f"n_nontarget: {report.n_nontarget}",
    ]
    if report.top_n is not None:
        lines.append(f"top_n: {report.top_n}")
    return "\n".join(lines) + "\n"


def write_report(path, report: EerReport) -> None:
    with open(path, "w") as fh:
        fh.write(format_report(report))


def write_det_csv(path, scored: Sequence[Trial]) -> None:
    pts = det_points(scored)
    with open(path, "w") as fh:
        fh.write("far,frr\n")
        for far, frr in pts:
            fh.write(f"{far:.9g},{frr:.9g}\n")
