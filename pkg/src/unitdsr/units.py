"""Discrete unit codec: K-means codebook training, quantization,
run-length tooling, and unit-level error rates."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dsp import FrameFeatures
from .errors import (
    DimensionMismatchError,
    DomainError,
    EmptyReferenceError,
    EmptySequenceError,
    InsufficientDataError,
    UnitRangeError,
)

DEFAULT_NUM_UNITS = 64  # desk-scale default; the full-scale preset is 1000
FULL_SCALE_NUM_UNITS = 1000


@dataclass(frozen=True)
class UnitSequence:
    """Frame-rate cluster-index sequence z_1..z_T."""

    units: tuple[int, ...]
    num_units: int
    frame_hop_ms: float = 20.0

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(int(u) for u in self.units))
        for u in self.units:
            if not 0 <= u < self.num_units:
                raise UnitRangeError(f"unit {u} outside [0, {self.num_units - 1}]")

    def __len__(self) -> int:
        return len(self.units)


@dataclass(frozen=True)
class NormUnitSequence:
    """Unit sequence with consecutive duplicates removed."""

    units: tuple[int, ...]
    num_units: int

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(int(u) for u in self.units))
        for a, b in zip(self.units, self.units[1:]):
            if a == b:
                raise DomainError("norm units must not contain adjacent duplicates")
        for u in self.units:
            if not 0 <= u < self.num_units:
                raise UnitRangeError(f"unit {u} outside [0, {self.num_units - 1}]")

    def __len__(self) -> int:
        return len(self.units)


@dataclass(frozen=True)
class DurationSequence:
    """Frames per norm unit; pairs positionally with a NormUnitSequence."""

    durations: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "durations", tuple(int(d) for d in self.durations))
        for d in self.durations:
            if d < 1:
                raise DomainError(f"durations must be >= 1, got {d}")

    def __len__(self) -> int:
        return len(self.durations)


@dataclass(frozen=True)
class UnitCodebook:
    centroids: np.ndarray  # K x D
    seed: int
    iterations: int = 0
    inertia: float = 0.0
    inertia_trace: tuple[float, ...] = field(default=())

    def __post_init__(self):
        centroids = np.asarray(self.centroids, dtype=np.float64)
        if centroids.ndim != 2 or centroids.shape[0] < 2:
            raise DomainError("codebook needs a K x D matrix with K >= 2")
        if not np.all(np.isfinite(centroids)):
            raise DomainError("codebook centroids contain non-finite values")
        object.__setattr__(self, "centroids", centroids)

    @property
    def num_units(self) -> int:
        return self.centroids.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.centroids.shape[1]

    def fingerprint(self) -> tuple[int, int]:
        return (self.num_units, self.seed)


# --------------------------------------------------------------------------
# K-means
# --------------------------------------------------------------------------

def _stack_features(features: Iterable[FrameFeatures | np.ndarray]) -> np.ndarray:
    mats = []
    for f in features:
        mats.append(np.asarray(f.frames if isinstance(f, FrameFeatures) else f, dtype=np.float64))
    if not mats:
        raise InsufficientDataError("no feature matrices given")
    dim = mats[0].shape[1]
    for m in mats:
        if m.shape[1] != dim:
            raise DimensionMismatchError(f"feature dims differ: {m.shape[1]} vs {dim}")
    return np.concatenate(mats, axis=0)


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centroids[i] = points[rng.integers(n)]
            continue
        probs = d2 / total
        centroids[i] = points[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, np.sum((points - centroids[i]) ** 2, axis=1))
    return centroids


def _assign(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centroid per point; ties broken toward the lowest index."""
    d2 = (
        np.sum(points**2, axis=1)[:, None]
        - 2.0 * points @ centroids.T
        + np.sum(centroids**2, axis=1)[None, :]
    )
    # recompute exact distances for the winners to avoid expansion roundoff
    labels = np.argmin(d2, axis=1)
    dist = np.sum((points - centroids[labels]) ** 2, axis=1)
    return labels, dist


def fit_kmeans(
    features: Iterable[FrameFeatures | np.ndarray],
    k: int,
    seed: int,
    max_iter: int = 100,
    rel_tol: float = 1e-4,
) -> UnitCodebook:
    """Lloyd iterations from a k-means++ start, deterministic given seed.

    Empty clusters are re-seeded to the point farthest from its assigned
    centroid. Stops when relative inertia improvement falls below rel_tol.
    """
    points = _stack_features(features)
    n = points.shape[0]
    if k < 2:
        raise DomainError(f"k must be >= 2, got {k}")
    if n < k:
        raise InsufficientDataError(f"{n} frames < {k} clusters")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(points, k, rng)
    trace: list[float] = []
    inertia = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        labels, dist = _assign(points, centroids)
        new_inertia = float(dist.sum())
        trace.append(new_inertia)
        # update step: fixed-order summation per cluster
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, points)
        counts = np.bincount(labels, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            farthest = np.argsort(-dist, kind="stable")
            for j, cluster in enumerate(empty):
                p = points[farthest[j]]
                sums[cluster] = p
                counts[cluster] = 1
        centroids = sums / counts[:, None]
        if new_inertia == 0.0 or (
            np.isfinite(inertia) and (inertia - new_inertia) < rel_tol * max(inertia, 1e-300)
        ):
            inertia = new_inertia
            break
        inertia = new_inertia
    return UnitCodebook(
        centroids=centroids,
        seed=seed,
        iterations=it,
        inertia=inertia,
        inertia_trace=tuple(trace),
    )


def quantize(f: FrameFeatures, cb: UnitCodebook) -> UnitSequence:
    """Map each frame to its nearest centroid (lowest index on ties)."""
    frames = np.asarray(f.frames if isinstance(f, FrameFeatures) else f, dtype=np.float64)
    if frames.shape[1] != cb.feature_dim:
        raise DimensionMismatchError(
            f"feature dim {frames.shape[1]} != codebook dim {cb.feature_dim}"
        )
    # exact squared distances, one centroid column at a time: bit-identical
    # to a brute-force scan, so exact ties resolve to the lowest index
    d2 = np.empty((frames.shape[0], cb.num_units))
    for j in range(cb.num_units):
        d2[:, j] = np.sum((frames - cb.centroids[j]) ** 2, axis=1)
    labels = np.argmin(d2, axis=1)
    hop = f.frame_hop_ms if isinstance(f, FrameFeatures) else 20.0
    return UnitSequence(tuple(int(x) for x in labels), cb.num_units, frame_hop_ms=hop)


# --------------------------------------------------------------------------
# Run-length tooling
# --------------------------------------------------------------------------

def dedup(s: UnitSequence | NormUnitSequence) -> NormUnitSequence:
    """Collapse consecutive runs to single occurrences."""
    out: list[int] = []
    for u in s.units:
        if not out or out[-1] != u:
            out.append(u)
    return NormUnitSequence(tuple(out), s.num_units)


def run_length_encode(s: UnitSequence) -> tuple[NormUnitSequence, DurationSequence]:
    """Split into maximal equal runs: (first of each run, run lengths)."""
    if len(s) == 0:
        raise EmptySequenceError("cannot run-length encode an empty sequence")
    units: list[int] = []
    durations: list[int] = []
    for u in s.units:
        if units and units[-1] == u:
            durations[-1] += 1
        else:
            units.append(u)
            durations.append(1)
    return NormUnitSequence(tuple(units), s.num_units), DurationSequence(tuple(durations))


def expand_units(norm: NormUnitSequence, durations: DurationSequence) -> UnitSequence:
    """Inverse of run_length_encode."""
    if len(norm) != len(durations):
        raise DomainError("norm units and durations must have equal length")
    out: list[int] = []
    for u, d in zip(norm.units, durations.durations):
        out.extend([u] * d)
    return UnitSequence(tuple(out), norm.num_units)


# --------------------------------------------------------------------------
# Unit error rate
# --------------------------------------------------------------------------

def levenshtein(a: Sequence, b: Sequence) -> int:
    """Edit distance with unit substitution/insertion/deletion costs."""
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, start=1):
            cost = 0 if x == y else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev = cur
    return prev[-1]


def unit_error_rate(hyp: NormUnitSequence, ref: NormUnitSequence) -> float:
    """Levenshtein(hyp, ref) / len(ref)."""
    if len(ref) == 0:
        raise EmptyReferenceError("reference norm units are empty")
    return levenshtein(hyp.units, ref.units) / len(ref)


# --------------------------------------------------------------------------
# File formats
# --------------------------------------------------------------------------

def save_codebook(cb: UnitCodebook, path: str | Path) -> None:
    """Header line `UDSC v1 K=<K> D=<D> seed=<seed>`, then K rows of floats."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"UDSC v1 K={cb.num_units} D={cb.feature_dim} seed={cb.seed}\n")
        for row in cb.centroids:
            f.write(" ".join(repr(float(x)) for x in row) + "\n")


def load_codebook(path: str | Path) -> UnitCodebook:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 5 or header[0] != "UDSC" or header[1] != "v1":
            raise DomainError(f"{path}: bad codebook header")
        fields = dict(part.split("=", 1) for part in header[2:])
        k, d, seed = int(fields["K"]), int(fields["D"]), int(fields["seed"])
        rows = [
            np.array([float(tok) for tok in line.split()]) for line in f if line.strip()
        ]
    centroids = np.vstack(rows)
    if centroids.shape != (k, d):
        raise DomainError(f"{path}: expected {k}x{d} centroids, got {centroids.shape}")
    return UnitCodebook(centroids=centroids, seed=seed)


def write_unit_file(path: str | Path, records: dict[str, Sequence[int]]) -> None:
    """One `<utterance_id>\\t<space-separated integers>` record per line."""
    with open(path, "w", encoding="utf-8") as f:
        for utt_id, units in records.items():
            f.write(f"{utt_id}\t{' '.join(str(int(u)) for u in units)}\n")


def read_unit_file(path: str | Path) -> dict[str, list[int]]:
    out: dict[str, list[int]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            utt_id, _, payload = line.rstrip("\n").partition("\t")
            out[utt_id] = [int(tok) for tok in payload.split()] if payload.strip() else []
    return out
