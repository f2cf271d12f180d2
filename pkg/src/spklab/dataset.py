"""Synthetic speaker datasets: clustered points on the unit sphere standing
in for audio-chunk features, split into disjoint train/dev/cohort/test
speaker partitions with file-level verification trials.

Each speaker owns a latent direction drawn uniformly on the sphere; every
chunk is that direction plus isotropic Gaussian noise of configurable
spread, optionally passed through the SNR augmentation. Files group a
fixed number of chunks; trials compare file-level embeddings.

On disk a dataset is a manifest (text) plus one flat .npy matrix holding
all chunk rows, so identical seeds produce byte-identical files.
"""

import os
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from spklab.errors import DomainError
from spklab.sampling import augment_chunk
from spklab.scoring import Trial, read_trials, write_trials
from spklab.training import EvalPack

PARTITIONS = ("train", "dev", "cohort", "test")

MANIFEST_NAME = "manifest.txt"
FEATURES_NAME = "features.npy"
SPEC_NAME = "dataset_spec.txt"
DEV_TRIALS_NAME = "trials_dev.txt"
TEST_TRIALS_NAME = "trials_test.txt"


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    """Shape and difficulty of a generated dataset."""

    n_speakers_train: int = 50
    n_speakers_dev: int = 10
    n_speakers_cohort: int = 20
    n_speakers_test: int = 10
    files_per_speaker: int = 5
    chunks_per_file: int = 5
    feature_dim: int = 32
    intra_speaker_spread: float = 0.3
    seed: int = 0
    trials_per_speaker: int = 20
    augment_snr_db: tuple[float, float] | None = None

    def __post_init__(self):
        counts = (
            self.n_speakers_train, self.n_speakers_dev,
            self.n_speakers_cohort, self.n_speakers_test,
            self.files_per_speaker, self.chunks_per_file, self.feature_dim,
        )
        if min(counts) < 1:
            raise DomainError("all dataset counts and dims must be positive")
        if self.intra_speaker_spread <= 0:
            raise DomainError("intra_speaker_spread must be positive")
        if self.trials_per_speaker < 2:
            raise DomainError("trials_per_speaker must be at least 2")

    @property
    def n_speakers_total(self) -> int:
        return (self.n_speakers_train + self.n_speakers_dev
                + self.n_speakers_cohort + self.n_speakers_test)

    def partition_sizes(self) -> dict[str, int]:
        return {
            "train": self.n_speakers_train,
            "dev": self.n_speakers_dev,
            "cohort": self.n_speakers_cohort,
            "test": self.n_speakers_test,
        }


@dataclass
class FileRecord:
    file_id: str
    speaker: int
    partition: str
    features: np.ndarray  # (chunks_per_file, feature_dim)


@dataclass
class SpeakerDataset:
    """In-memory dataset: partitioned speakers, their files, and trial lists."""

    feature_dim: int
    partitions: dict[str, list[int]]
    files: dict[str, FileRecord]
    trials_dev: list[Trial]
    trials_test: list[Trial]
    spec_echo: dict[str, str] = field(default_factory=dict)

    def speakers(self, partition: str) -> list[int]:
        if partition not in self.partitions:
            raise DomainError(f"unknown partition {partition!r}")
        return self.partitions[partition]

    def files_of(self, partition: str) -> dict[str, np.ndarray]:
        return {
            fid: rec.features
            for fid, rec in self.files.items()
            if rec.partition == partition
        }

    def train_pool(self) -> dict[int, np.ndarray]:
        """Chunks pooled per train speaker, keyed by train-local label 0..K-1."""
        speakers = self.partitions["train"]
        label_of = {spk: i for i, spk in enumerate(speakers)}
        pool: dict[int, list[np.ndarray]] = {i: [] for i in range(len(speakers))}
        for rec in self.files.values():
            if rec.partition == "train":
                pool[label_of[rec.speaker]].append(rec.features)
        return {label: np.vstack(rows) for label, rows in pool.items()}

    def eval_pack(self, partition: str) -> EvalPack:
        trials = self.trials_dev if partition == "dev" else self.trials_test
        speakers = {
            fid: rec.speaker for fid, rec in self.files.items()
            if rec.partition == partition
        }
        return EvalPack(files=self.files_of(partition), trials=trials, speakers=speakers)


def file_id(speaker: int, file_index: int) -> str:
    return f"s{speaker:04d}_f{file_index:02d}"


def speaker_chunks(
    latent: np.ndarray,
    n_chunks: int,
    spread: float,
    rng: np.random.Generator,
    augment_snr_db: tuple[float, float] | None = None,
) -> np.ndarray:
    """Draw chunk feature rows around one speaker's latent direction."""
    chunks = latent[None, :] + spread * rng.standard_normal((n_chunks, latent.size))
    if augment_snr_db is not None:
        chunks = np.vstack([augment_chunk(row, augment_snr_db, rng) for row in chunks])
    return chunks


def _unit_sphere(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    v = rng.standard_normal((n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _make_trials(
    files_by_speaker: Mapping[int, list[str]],
    spec: SyntheticDatasetSpec,
    rng: np.random.Generator,
) -> list[Trial]:
    """Per speaker: all same-speaker file pairs (capped at half the
    per-speaker trial budget) plus an equal number of sampled cross-speaker
    pairs."""
    speakers = sorted(files_by_speaker)
    trials: list[Trial] = []
    per_class = spec.trials_per_speaker // 2
    for spk in speakers:
        own = files_by_speaker[spk]
        targets = [(a, b) for i, a in enumerate(own) for b in own[i + 1:]]
        if len(targets) > per_class:
            picked = rng.choice(len(targets), size=per_class, replace=False)
            targets = [targets[i] for i in sorted(picked)]
        others = [fid for other in speakers if other != spk for fid in files_by_speaker[other]]
        seen = set()
        nontargets = []
        while len(nontargets) < len(targets) and others:
            pair = (own[rng.integers(0, len(own))], others[rng.integers(0, len(others))])
            if pair not in seen:
                seen.add(pair)
                nontargets.append(pair)
        trials.extend(Trial(a, b, True) for a, b in targets)
        trials.extend(Trial(a, b, False) for a, b in nontargets)
    return trials


def generate_dataset(spec: SyntheticDatasetSpec) -> SpeakerDataset:
    """Build the full dataset in memory, deterministically from the seed."""
    rng = np.random.default_rng(spec.seed)
    sizes = spec.partition_sizes()
    latents = _unit_sphere(rng, spec.n_speakers_total, spec.feature_dim)

    partitions: dict[str, list[int]] = {}
    next_speaker = 0
    for name in PARTITIONS:
        partitions[name] = list(range(next_speaker, next_speaker + sizes[name]))
        next_speaker += sizes[name]

    files: dict[str, FileRecord] = {}
    for name in PARTITIONS:
        for spk in partitions[name]:
            for f in range(spec.files_per_speaker):
                feats = speaker_chunks(
                    latents[spk], spec.chunks_per_file, spec.intra_speaker_spread,
                    rng, spec.augment_snr_db,
                )
                fid = file_id(spk, f)
                files[fid] = FileRecord(fid, spk, name, feats)

    def ids_by_speaker(partition: str) -> dict[int, list[str]]:
        return {
            spk: [file_id(spk, f) for f in range(spec.files_per_speaker)]
            for spk in partitions[partition]
        }

    trials_dev = _make_trials(ids_by_speaker("dev"), spec, rng)
    trials_test = _make_trials(ids_by_speaker("test"), spec, rng)

    spec_echo = {k: repr(v) for k, v in sorted(vars(spec).items())}
    return SpeakerDataset(
        feature_dim=spec.feature_dim,
        partitions=partitions,
        files=files,
        trials_dev=trials_dev,
        trials_test=trials_test,
        spec_echo=spec_echo,
    )


def save_dataset(ds: SpeakerDataset, out_dir) -> None:
    """Write manifest, flat feature matrix, spec echo, and trial lists."""
    os.makedirs(out_dir, exist_ok=True)
    order = sorted(ds.files)
    rows = []
    manifest_lines = [f"feature_dim {ds.feature_dim}\n"]
    start = 0
    for fid in order:
        rec = ds.files[fid]
        n = rec.features.shape[0]
        manifest_lines.append(f"{fid} {rec.partition} {rec.speaker} {start} {n}\n")
        rows.append(rec.features)
        start += n
    with open(os.path.join(out_dir, MANIFEST_NAME), "w") as fh:
        fh.writelines(manifest_lines)
    np.save(os.path.join(out_dir, FEATURES_NAME), np.vstack(rows))
    with open(os.path.join(out_dir, SPEC_NAME), "w") as fh:
        for key, value in ds.spec_echo.items():
            fh.write(f"{key} = {value}\n")
    write_trials(os.path.join(out_dir, DEV_TRIALS_NAME), ds.trials_dev)
    write_trials(os.path.join(out_dir, TEST_TRIALS_NAME), ds.trials_test)


def load_dataset(data_dir) -> SpeakerDataset:
    manifest_path = os.path.join(data_dir, MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise DomainError(f"no dataset manifest at {manifest_path}")
    features = np.load(os.path.join(data_dir, FEATURES_NAME))

    feature_dim = None
    partitions: dict[str, list[int]] = {name: [] for name in PARTITIONS}
    files: dict[str, FileRecord] = {}
    with open(manifest_path) as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "feature_dim":
                feature_dim = int(parts[1])
                continue
            if len(parts) != 5:
                raise DomainError(f"{manifest_path}:{line_no}: bad manifest line")
            fid, partition, speaker, start, n = (
                parts[0], parts[1], int(parts[2]), int(parts[3]), int(parts[4])
            )
            if partition not in PARTITIONS:
                raise DomainError(f"{manifest_path}:{line_no}: unknown partition {partition!r}")
            files[fid] = FileRecord(fid, speaker, partition, features[start : start + n])
            if speaker not in partitions[partition]:
                partitions[partition].append(speaker)
    if feature_dim is None:
        raise DomainError(f"{manifest_path}: missing feature_dim header")

    spec_echo = {}
    spec_path = os.path.join(data_dir, SPEC_NAME)
    if os.path.exists(spec_path):
        with open(spec_path) as fh:
            for line in fh:
                key, _, value = line.partition("=")
                if value:
                    spec_echo[key.strip()] = value.strip()

    return SpeakerDataset(
        feature_dim=feature_dim,
        partitions={k: sorted(v) for k, v in partitions.items()},
        files=files,
        trials_dev=read_trials(os.path.join(data_dir, DEV_TRIALS_NAME)),
        trials_test=read_trials(os.path.join(data_dir, TEST_TRIALS_NAME)),
        spec_echo=spec_echo,
    )


def gen_synthetic_dataset(spec: SyntheticDatasetSpec, out_dir) -> SpeakerDataset:
    """Generate a dataset and write it under `out_dir`."""
    ds = generate_dataset(spec)
    save_dataset(ds, out_dir)
    return ds
