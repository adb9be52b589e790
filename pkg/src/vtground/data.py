"""Datasets: a seeded synthetic planted-signal generator for desk-scale
training, plus ingestion of pre-extracted-feature datasets from JSON-lines
annotations and per-id feature files."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .core import (
    FeatureSequence,
    GroundingSample,
    Moment,
    relevance_from_moments,
    span_to_center_width,
)

DEFAULT_CLIP_DURATION = 2.0


@dataclass
class SyntheticConfig:
    n_samples: int = 100
    video_len: tuple[int, int] = (20, 40)  # inclusive range of L_v
    text_len: tuple[int, int] = (4, 12)
    video_dim: int = 64
    text_dim: int = 32
    signal_strength: float = 5.0
    noise_std: float = 0.5
    moments_per_video: tuple[int, int] = (1, 2)
    distractor_rate: float = 0.1
    concept_pool: int = 16  # vocabulary size per sub-concept slot
    seed: int = 0
    clip_duration: float = DEFAULT_CLIP_DURATION

    def __post_init__(self):
        for name in ("video_len", "text_len", "moments_per_video"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 1:
                raise ValueError(f"{name} range ({lo}, {hi}) is degenerate")
        if self.signal_strength < 0 or self.noise_std < 0:
            raise ValueError("signal_strength and noise_std must be non-negative")
        if self.concept_pool < 2:
            raise ValueError("concept_pool needs at least 2 entries per slot")


def _sample_windows(rng: np.random.Generator, n_clips: int, count: int) -> list[tuple[int, int]]:
    """Disjoint clip-aligned (start_clip, end_clip) windows, end exclusive."""
    windows: list[tuple[int, int]] = []
    max_width = max(2, n_clips // 4)
    min_width = max(1, n_clips // 10)
    for _ in range(count):
        for _attempt in range(50):
            width = int(rng.integers(min_width, max_width + 1))
            start = int(rng.integers(0, n_clips - width + 1))
            if all(start >= e or start + width <= s for s, e in windows):
                windows.append((start, start + width))
                break
    return sorted(windows)


def generate_synthetic(cfg: SyntheticConfig) -> list[GroundingSample]:
    """Plant a two-part latent query into text tokens and in-moment clips.

    Queries are pairs of sub-concepts drawn from a finite per-slot vocabulary
    (concept_pool entries each), packed into the halves of a text_dim vector.
    Every text token is a noisy view of ONE sub-concept, so only pooling the
    whole query recovers both. Clips inside GT windows carry a fixed random
    projection of the full latent scaled by signal_strength; out-of-window
    clips are noise, except that at distractor_rate they carry a half-match:
    the query's first sub-concept paired with a different vocabulary entry.
    Distractors therefore correlate with individual tokens but not with the
    query as a whole, and the shared vocabulary makes different videos
    partially confusable, so telling them apart requires looking at the right
    clips rather than pooling everything. Fully deterministic given the seed.
    """
    rng = np.random.default_rng(cfg.seed)
    if cfg.text_dim < 2:
        raise ValueError("text_dim must be >= 2 to hold two sub-concepts")
    proj = rng.normal(size=(cfg.text_dim, cfg.video_dim))
    proj /= np.linalg.norm(proj, axis=0, keepdims=True)
    half = cfg.text_dim - cfg.text_dim // 2

    def unit(v):
        return v / max(np.linalg.norm(v), 1e-12)

    vocab_a = np.stack([unit(rng.normal(size=half)) for _ in range(cfg.concept_pool)])
    vocab_b = np.stack(
        [unit(rng.normal(size=cfg.text_dim - half)) for _ in range(cfg.concept_pool)]
    )

    samples = []
    for i in range(cfg.n_samples):
        l_v = int(rng.integers(cfg.video_len[0], cfg.video_len[1] + 1))
        l_t = int(rng.integers(cfg.text_len[0], cfg.text_len[1] + 1))
        idx_a = int(rng.integers(cfg.concept_pool))
        idx_b = int(rng.integers(cfg.concept_pool))
        concept_a = vocab_a[idx_a]
        concept_b = vocab_b[idx_b]
        q_full = np.concatenate([concept_a, concept_b]) / np.sqrt(2.0)

        n_moments = int(rng.integers(cfg.moments_per_video[0], cfg.moments_per_video[1] + 1))
        windows = _sample_windows(rng, l_v, n_moments)

        pattern = cfg.signal_strength * unit(q_full @ proj)
        decoy_b = int(rng.integers(cfg.concept_pool - 1))
        decoy_b = decoy_b + 1 if decoy_b >= idx_b else decoy_b
        decoy_latent = np.concatenate([concept_a, vocab_b[decoy_b]]) / np.sqrt(2.0)
        distractor = cfg.signal_strength * unit(decoy_latent @ proj)

        video = rng.normal(scale=cfg.noise_std, size=(l_v, cfg.video_dim))
        labels = np.zeros(l_v, dtype=np.int64)
        inside = np.zeros(l_v, dtype=bool)
        for s, e in windows:
            inside[s:e] = True
        distract_mask = (~inside) & (rng.random(l_v) < cfg.distractor_rate)
        video[inside] += pattern
        video[distract_mask] += distractor
        labels[inside] = 4

        token_a = np.concatenate([concept_a, np.zeros(cfg.text_dim - half)])
        token_b = np.concatenate([np.zeros(half), concept_b])
        sides = rng.random(l_t) < 0.5
        sides[0] = True  # every query mentions both concepts
        sides[min(1, l_t - 1)] = False
        text = np.where(sides[:, None], token_a[None, :], token_b[None, :])
        text = text + rng.normal(scale=cfg.noise_std, size=(l_t, cfg.text_dim))

        duration = l_v * cfg.clip_duration
        moments = [
            span_to_center_width(s * cfg.clip_duration / duration, e * cfg.clip_duration / duration)
            for s, e in windows
        ]
        samples.append(
            GroundingSample(
                video=FeatureSequence.from_array(torch.from_numpy(video.astype(np.float32))),
                text=FeatureSequence.from_array(torch.from_numpy(text.astype(np.float32))),
                gt_moments=moments,
                relevance=relevance_from_moments(moments, l_v),
                duration=duration,
                saliency_labels=torch.from_numpy(labels),
                qid=f"syn_{cfg.seed}_{i:05d}",
                vid=f"syn_{cfg.seed}_{i:05d}",
                query=f"synthetic query {i}",
            )
        )
    return samples


@dataclass
class DatasetManifest:
    annotations: Path
    video_features: Path
    text_features: Path
    clip_duration: float = DEFAULT_CLIP_DURATION
    video_dim: int | None = None  # expected dims; checked when set
    text_dim: int | None = None
    l2_normalize: bool = True

    def __post_init__(self):
        self.annotations = Path(self.annotations)
        self.video_features = Path(self.video_features)
        self.text_features = Path(self.text_features)


class AnnotationError(ValueError):
    pass


class FeatureError(ValueError):
    pass


REQUIRED_FIELDS = ("qid", "query", "vid", "duration", "relevant_windows")


def load_annotations(manifest: DatasetManifest) -> list[dict]:
    """Parse the JSON-lines annotation file into plain records.

    Every record gets a `moments` list of normalized Moment objects alongside
    the raw fields. Malformed lines and out-of-range windows are rejected
    with the offending line number.
    """
    records = []
    with open(manifest.annotations) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise AnnotationError(f"line {lineno}: invalid JSON ({e})") from e
            missing = [k for k in REQUIRED_FIELDS if k not in rec]
            if missing:
                raise AnnotationError(f"line {lineno}: missing fields {missing}")
            duration = float(rec["duration"])
            moments = []
            for window in rec["relevant_windows"]:
                st, ed = float(window[0]), float(window[1])
                if not (0.0 <= st < ed <= duration):
                    raise AnnotationError(
                        f"line {lineno}: window [{st}, {ed}] outside [0, {duration}]"
                    )
                moments.append(span_to_center_width(st / duration, ed / duration))
            rec["moments"] = moments
            records.append(rec)
    return records


def serialize_annotations(records: list[dict], path: Path) -> None:
    """Inverse of load_annotations for the raw fields (moments are derived)."""
    with open(path, "w") as f:
        for rec in records:
            raw = {k: v for k, v in rec.items() if k != "moments"}
            f.write(json.dumps(raw) + "\n")


_BIN_MAGIC = b"FSEQ"


def save_feature_bin(path: Path, array: np.ndarray) -> None:
    """Write a (rows, cols) float32 matrix with a little-endian header."""
    array = np.ascontiguousarray(array, dtype="<f4")
    if array.ndim != 2:
        raise FeatureError("feature arrays must be 2-D")
    with open(path, "wb") as f:
        f.write(_BIN_MAGIC)
        f.write(struct.pack("<II", array.shape[0], array.shape[1]))
        f.write(array.tobytes())


def load_feature_file(path: Path) -> np.ndarray:
    """Load a feature matrix from .bin (native), .npy, or .npz files."""
    path = Path(path)
    if not path.exists():
        raise FeatureError(f"feature file not found: {path}")
    if path.suffix == ".bin":
        with open(path, "rb") as f:
            magic = f.read(4)
            if magic != _BIN_MAGIC:
                raise FeatureError(f"{path}: bad magic {magic!r}")
            rows, cols = struct.unpack("<II", f.read(8))
            data = np.frombuffer(f.read(), dtype="<f4")
        if data.size != rows * cols:
            raise FeatureError(f"{path}: payload size {data.size} != {rows}x{cols}")
        return data.reshape(rows, cols).copy()
    if path.suffix == ".npy":
        return np.load(path).astype(np.float32)
    if path.suffix == ".npz":
        archive = np.load(path)
        key = "features" if "features" in archive else archive.files[0]
        return archive[key].astype(np.float32)
    raise FeatureError(f"{path}: unsupported feature format {path.suffix!r}")


def _find_feature(directory: Path, stem: str) -> Path:
    for suffix in (".bin", ".npy", ".npz"):
        candidate = directory / f"{stem}{suffix}"
        if candidate.exists():
            return candidate
    raise FeatureError(f"no feature file for {stem!r} under {directory}")


def load_features(
    directory: Path, stem: str, expected_dim: int | None = None, l2_normalize: bool = True
) -> FeatureSequence:
    """Load one id's features as a FeatureSequence with an all-true mask."""
    array = load_feature_file(_find_feature(Path(directory), stem))
    if expected_dim is not None and array.shape[1] != expected_dim:
        raise FeatureError(
            f"{stem}: feature dim {array.shape[1]} does not match manifest {expected_dim}"
        )
    if l2_normalize:
        norms = np.linalg.norm(array, axis=1, keepdims=True)
        array = array / np.maximum(norms, 1e-12)
    return FeatureSequence.from_array(torch.from_numpy(array.astype(np.float32)))


def saliency_tensor_from_raw(raw, n_clips: int, lineno_hint: str) -> torch.Tensor:
    """Per-clip labels; per-annotator lists are averaged before use."""
    if len(raw) != n_clips:
        raise AnnotationError(
            f"{lineno_hint}: saliency_scores length {len(raw)} != clip count {n_clips}"
        )
    values = []
    for entry in raw:
        if isinstance(entry, (list, tuple)):
            values.append(float(np.mean(entry)))
        else:
            values.append(float(entry))
    return torch.tensor(values, dtype=torch.float32)


def load_dataset(manifest: DatasetManifest) -> list[GroundingSample]:
    """Assemble GroundingSamples from annotations plus feature files."""
    samples = []
    for rec in load_annotations(manifest):
        video = load_features(
            manifest.video_features, rec["vid"], manifest.video_dim, manifest.l2_normalize
        )
        text = load_features(
            manifest.text_features, rec["qid"], manifest.text_dim, manifest.l2_normalize
        )
        moments: list[Moment] = rec["moments"]
        saliency = None
        if "saliency_scores" in rec and rec["saliency_scores"] is not None:
            saliency = saliency_tensor_from_raw(
                rec["saliency_scores"], video.length, f"qid {rec['qid']}"
            )
        samples.append(
            GroundingSample(
                video=video,
                text=text,
                gt_moments=moments,
                relevance=relevance_from_moments(moments, video.length),
                duration=float(rec["duration"]),
                saliency_labels=saliency,
                qid=str(rec["qid"]),
                vid=str(rec["vid"]),
                query=str(rec["query"]),
            )
        )
    return samples


@dataclass
class SyntheticSplits:
    train: list[GroundingSample] = field(default_factory=list)
    val: list[GroundingSample] = field(default_factory=list)


def generate_synthetic_splits(cfg: SyntheticConfig, n_train: int, n_val: int) -> SyntheticSplits:
    """One generator call so both splits share the same planted projection."""
    full = generate_synthetic(
        SyntheticConfig(**{**vars(cfg), "n_samples": n_train + n_val})
    )
    return SyntheticSplits(train=full[:n_train], val=full[n_train:])
