"""SGD training loop, dev-set model selection, grid search, and checkpoint
serialization.

One run owns its parameter state and RNG stream; every batch takes a plain
SGD step on the encoder weights and on whatever the loss trains alongside
(class centers, bias, penalty centers), all at the same fixed learning
rate. After each epoch the encoder is frozen, the dev files are embedded
and averaged, and the dev EER is recorded as a checkpoint.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from spklab import encoder as enc
from spklab import losses, sampling, scoring
from spklab.embedding import mean_embedding
from spklab.errors import DomainError, TrainingDiverged

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "SPKLABCKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Everything one training run needs besides the data."""

    loss_kind: str = "aam"
    learning_rate: float = 0.01
    epochs: int = 10
    seed: int = 0
    alpha: float = 10.0
    margin: float = 0.05
    lam: float = 1.0
    center_penalty: str = "squared_cos_distance"
    speakers_per_batch: int = 128
    chunks_per_speaker: int = 1
    hidden_dim: int = 32
    embedding_dim: int = 16
    activation: str = "tanh"
    augment_snr_db: tuple[float, float] | None = None

    def __post_init__(self):
        if self.loss_kind not in losses.LOSS_KINDS:
            raise DomainError(f"unknown loss kind {self.loss_kind!r}")
        if self.learning_rate < 0:
            raise DomainError("learning rate must be non-negative")
        if self.epochs < 0:
            raise DomainError("epochs must be non-negative")

    def batch_spec(self) -> sampling.BatchSpec:
        mode = "classification"
        if self.loss_kind in losses.PAIR_KINDS:
            mode = "pairs"
        elif self.loss_kind in losses.TRIPLET_KINDS:
            mode = "triplets"
        return sampling.BatchSpec(self.speakers_per_batch, self.chunks_per_speaker, mode)

    def hyper(self) -> losses.LossHyper:
        return losses.LossHyper(alpha=self.alpha, margin=self.margin)


@dataclass
class Checkpoint:
    """Frozen parameter snapshot with its epoch index and dev EER."""

    epoch: int
    encoder: enc.EncoderParams
    centers: np.ndarray | None
    bias: np.ndarray | None
    gamma: np.ndarray | None
    dev_eer: float

    def __post_init__(self):
        if not 0.0 <= self.dev_eer <= 1.0:
            raise DomainError(f"dev EER out of [0, 1]: {self.dev_eer}")


@dataclass
class EvalPack:
    """File-level evaluation inputs: chunk features per file id plus trials."""

    files: Mapping[str, np.ndarray]  # file_id -> (n_chunks, feature_dim)
    trials: Sequence[scoring.Trial]
    speakers: Mapping[str, int] = field(default_factory=dict)  # file_id -> speaker


def embed_files(params: enc.EncoderParams, files: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Encode each file's chunks and average them into one embedding per file."""
    out = {}
    for file_id in sorted(files):
        chunk_emb, _ = enc.forward(params, files[file_id])
        out[file_id] = mean_embedding(chunk_emb)
    return out


def dev_eer(params: enc.EncoderParams, pack: EvalPack) -> float:
    scored = scoring.score_trials(pack.trials, embed_files(params, pack.files))
    return scoring.eer(scored).eer


def _check_finite_params(params: enc.EncoderParams, state: losses.LossState,
                         epoch: int, batch_index: int) -> None:
    arrays = list(params.arrays().values())
    if state.classifier is not None:
        arrays.append(state.classifier.centers)
        if state.classifier.bias is not None:
            arrays.append(state.classifier.bias)
    if state.center is not None:
        arrays.append(state.center.gamma)
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise TrainingDiverged(
                f"non-finite parameter after epoch {epoch} batch {batch_index}",
                epoch, batch_index,
            )


def init_run(
    config: TrainConfig, feature_dim: int, n_classes: int
) -> tuple[enc.EncoderParams, losses.LossState, np.random.Generator]:
    """Fresh encoder and loss state drawn from the run seed."""
    rng = np.random.default_rng(config.seed)
    params = enc.init_encoder(
        feature_dim, config.hidden_dim, config.embedding_dim, rng, config.activation
    )
    state = losses.init_loss_state(
        config.loss_kind, n_classes, config.embedding_dim, config.hyper(), rng,
        lam=config.lam, center_penalty=config.center_penalty,
    )
    return params, state, rng


def initial_checkpoint(
    chunks_by_speaker: Mapping[int, np.ndarray],
    config: TrainConfig,
    dev_pack: EvalPack,
    feature_dim: int | None = None,
) -> Checkpoint:
    """Untrained snapshot (epoch -1) under the run seed, dev EER included."""
    if feature_dim is None:
        feature_dim = next(iter(chunks_by_speaker.values())).shape[1]
    params, state, _ = init_run(config, feature_dim, len(chunks_by_speaker))
    return _snapshot(-1, params, state, dev_eer(params, dev_pack))


def train(
    chunks_by_speaker: Mapping[int, np.ndarray],
    config: TrainConfig,
    dev_pack: EvalPack,
    feature_dim: int | None = None,
) -> list[Checkpoint]:
    """Run `config.epochs` epochs of balanced-batch SGD; returns one
    checkpoint per epoch (parameters and dev EER after that epoch).

    Deterministic given the config seed. Raises TrainingDiverged naming
    the batch index if the loss or any parameter goes non-finite.
    """
    if feature_dim is None:
        feature_dim = next(iter(chunks_by_speaker.values())).shape[1]
    n_classes = len(chunks_by_speaker)
    label_set = sorted(chunks_by_speaker)
    if label_set != list(range(n_classes)):
        raise DomainError("training pool labels must be 0..K-1")

    params, state, rng = init_run(config, feature_dim, n_classes)
    spec = config.batch_spec()
    lr = config.learning_rate

    checkpoints = []
    for epoch in range(config.epochs):
        for batch_index, batch in enumerate(sampling.epoch_batches(chunks_by_speaker, spec, rng)):
            feats = batch.features
            if config.augment_snr_db is not None:
                feats = np.vstack([
                    sampling.augment_chunk(row, config.augment_snr_db, rng) for row in feats
                ])
            try:
                embeddings, cache = enc.forward(params, feats)
                tuples = sampling.form_tuples(batch.labels, spec.mode)
                out = losses.evaluate_loss(
                    config.loss_kind, embeddings, batch.labels, state, tuples
                )
            except DomainError as exc:
                # mid-run numeric failure (overflowed activations, non-finite
                # loss inputs) is divergence, not a caller contract violation
                raise TrainingDiverged(
                    f"loss evaluation failed at epoch {epoch} batch {batch_index}: {exc}",
                    epoch, batch_index,
                ) from exc
            if not np.isfinite(out.value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} batch {batch_index}",
                    epoch, batch_index,
                )
            grads = enc.backward(params, cache, out.grad_embeddings)
            enc.sgd_step(params, grads, lr)
            if out.grad_centers is not None:
                state.classifier.centers -= lr * out.grad_centers
            if out.grad_bias is not None:
                state.classifier.bias -= lr * out.grad_bias
            if out.grad_gamma is not None:
                state.center.gamma -= lr * out.grad_gamma
            _check_finite_params(params, state, epoch, batch_index)
        checkpoints.append(_snapshot(epoch, params, state, dev_eer(params, dev_pack)))
    return checkpoints


def _snapshot(epoch: int, params: enc.EncoderParams, state: losses.LossState, eer_value: float) -> Checkpoint:
    return Checkpoint(
        epoch=epoch,
        encoder=params.copy(),
        centers=None if state.classifier is None else state.classifier.centers.copy(),
        bias=None if state.classifier is None or state.classifier.bias is None
        else state.classifier.bias.copy(),
        gamma=None if state.center is None else state.center.gamma.copy(),
        dev_eer=eer_value,
    )


def select_best(checkpoints: Sequence[Checkpoint]) -> Checkpoint:
    """Checkpoint with the lowest dev EER; ties break to the earliest epoch."""
    if len(checkpoints) == 0:
        raise DomainError("select_best: empty checkpoint list")
    best = checkpoints[0]
    for ckpt in checkpoints[1:]:
        if ckpt.dev_eer < best.dev_eer:
            best = ckpt
    return best


def grid_search(
    chunks_by_speaker: Mapping[int, np.ndarray],
    grid: Sequence[TrainConfig],
    budget_epochs: int,
    dev_pack: EvalPack,
) -> TrainConfig:
    """Train every config for `budget_epochs` and return the one whose best
    dev EER is lowest (first in grid order on ties). A config that fails
    to train is disqualified with a logged warning.
    """
    if len(grid) == 0:
        raise DomainError("grid_search: empty grid")
    best_config, best_eer = None, None
    for config in grid:
        short = replace(config, epochs=budget_epochs)
        try:
            checkpoints = train(chunks_by_speaker, short, dev_pack)
        except (TrainingDiverged, DomainError) as exc:
            logger.warning("grid config %s disqualified: %s", short, exc)
            continue
        candidate = select_best(checkpoints).dev_eer
        if best_eer is None or candidate < best_eer:
            best_config, best_eer = config, candidate
    if best_config is None:
        raise DomainError("grid_search: every configuration failed to train")
    return best_config


# --- checkpoint container ----------------------------------------------------
#
# Textual, versioned, round-trip exact:
#
#   SPKLABCKPT 1
#   epoch <int>
#   dev_eer <repr float>
#   config <key> <value>        (zero or more lines, config echo)
#   array <name> <ndim> <d0> [<d1> ...]
#   <row-major values, one line, repr floats>
#   end


def _format_array(name: str, arr: np.ndarray) -> str:
    dims = " ".join(str(d) for d in arr.shape)
    values = " ".join(repr(float(v)) for v in arr.reshape(-1))
    return f"array {name} {arr.ndim} {dims}\n{values}\n"


def save_checkpoint(path, ckpt: Checkpoint, config: TrainConfig) -> None:
    parts = [
        f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n",
        f"epoch {ckpt.epoch}\n",
        f"dev_eer {ckpt.dev_eer!r}\n",
    ]
    for key, value in sorted(vars(config).items()):
        parts.append(f"config {key} {value!r}\n")
    parts.append(f"config_ext activation {ckpt.encoder.activation}\n")
    arrays = dict(ckpt.encoder.arrays())
    for name, arr in (("centers", ckpt.centers), ("bias", ckpt.bias), ("gamma", ckpt.gamma)):
        if arr is not None:
            arrays[name] = arr
    for name in sorted(arrays):
        parts.append(_format_array(name, arrays[name]))
    parts.append("end\n")
    with open(path, "w") as fh:
        fh.write("".join(parts))


def load_checkpoint(path) -> tuple[Checkpoint, dict]:
    """Read a checkpoint file back; returns (checkpoint, config echo dict)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].split() != [CHECKPOINT_MAGIC, str(CHECKPOINT_VERSION)]:
        raise DomainError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint file")

    epoch, eer_value = None, None
    config_echo: dict[str, str] = {}
    arrays: dict[str, np.ndarray] = {}
    activation = "tanh"
    i = 1
    while i < len(lines):
        line = lines[i]
        if line == "end":
            break
        head, _, rest = line.partition(" ")
        if head == "epoch":
            epoch = int(rest)
        elif head == "dev_eer":
            eer_value = float(rest)
        elif head == "config":
            key, _, value = rest.partition(" ")
            config_echo[key] = value
        elif head == "config_ext":
            key, _, value = rest.partition(" ")
            if key == "activation":
                activation = value
        elif head == "array":
            fields = rest.split()
            name, ndim = fields[0], int(fields[1])
            shape = tuple(int(d) for d in fields[2 : 2 + ndim])
            i += 1
            flat = np.array([float(v) for v in lines[i].split()], dtype=np.float64)
            arrays[name] = flat.reshape(shape)
        else:
            raise DomainError(f"{path}: unrecognized checkpoint line {line!r}")
        i += 1
    else:
        raise DomainError(f"{path}: missing end marker")

    if epoch is None or eer_value is None:
        raise DomainError(f"{path}: missing epoch or dev_eer")
    for required in ("w1", "b1", "w2", "b2"):
        if required not in arrays:
            raise DomainError(f"{path}: missing encoder array {required!r}")
    params = enc.EncoderParams(
        w1=arrays["w1"], b1=arrays["b1"], w2=arrays["w2"], b2=arrays["b2"],
        activation=activation,
    )
    ckpt = Checkpoint(
        epoch=epoch,
        encoder=params,
        centers=arrays.get("centers"),
        bias=arrays.get("bias"),
        gamma=arrays.get("gamma"),
        dev_eer=eer_value,
    )
    return ckpt, config_echo
