"""Track/frame dataset model, JSONL persistence, track-level splitting,
and a synthetic long-tail generator.

Each track is a short clip of one individual fish; every frame of a
track carries the same (group, species) label pair. The generator
places a centroid per group, offsets per species, adds a jitter vector
shared by all frames of a track (deformation/occlusion is correlated
within one catch), and independent per-frame noise. Species track
counts follow a Zipf profile over species rank.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    InconsistentLabels,
    InfeasibleConfig,
    MalformedRecord,
    SpeciesTooSmall,
)
from .taxonomy import Taxonomy

MODE_FEATURES = "features"        # raw vectors, fed to the trunk
MODE_PRECOMPUTED = "precomputed"  # (shallow, deep) pairs, trunk bypassed


@dataclass
class Frame:
    track_id: str
    frame_index: int
    group: str
    species: str
    features: np.ndarray | None = None
    shallow: np.ndarray | None = None
    deep: np.ndarray | None = None

    def model_input(self):
        if self.features is not None:
            return self.features
        return (self.shallow, self.deep)


@dataclass
class Track:
    track_id: str
    frames: list[Frame]

    @property
    def group(self) -> str:
        return self.frames[0].group

    @property
    def species(self) -> str:
        return self.frames[0].species

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class Dataset:
    tracks: list[Track]
    mode: str = MODE_FEATURES

    def frames(self):
        for t in self.tracks:
            yield from t.frames

    @property
    def n_frames(self) -> int:
        return sum(len(t) for t in self.tracks)

    def __len__(self) -> int:
        return len(self.tracks)


@dataclass
class GenConfig:
    taxonomy: Taxonomy
    zipf_exponent: float = 1.2
    tracks_total: int = 600
    frames_min: int = 8
    frames_max: int = 24
    sigma_group: float = 2.0
    sigma_species: float = 1.0
    sigma_track: float = 1.0
    sigma_frame: float = 3.0
    dim: int = 32
    seed: int = 0


def _scaled_normal(rng: np.random.Generator, sigma: float, dim: int) -> np.ndarray:
    # per-coordinate std sigma/sqrt(dim) so the vector norm is ~sigma
    return rng.normal(0.0, sigma / math.sqrt(dim), size=dim)


def species_track_counts(config: GenConfig) -> np.ndarray:
    """Zipf-profiled per-species track counts; non-increasing in rank,
    every species gets at least 2, total exactly tracks_total."""
    S = config.taxonomy.S
    if config.tracks_total < 2 * S:
        raise InfeasibleConfig(
            f"tracks_total={config.tracks_total} < 2*S={2 * S}"
        )
    ranks = np.arange(1, S + 1, dtype=np.float64)
    weights = ranks ** (-config.zipf_exponent)
    raw = config.tracks_total * weights / weights.sum()
    counts = np.maximum(np.floor(raw).astype(int), 2)
    # fix the total while keeping the profile non-increasing
    while counts.sum() > config.tracks_total:
        mx = counts.max()
        idx = np.nonzero(counts == mx)[0][-1]
        counts[idx] -= 1
    while counts.sum() < config.tracks_total:
        counts[0] += 1
    return counts


def generate(config: GenConfig) -> Dataset:
    """Deterministic synthetic dataset for a fixed seed."""
    tax = config.taxonomy
    if config.frames_min < 1 or config.frames_max < config.frames_min:
        raise InfeasibleConfig("bad frames_per_track range")
    counts = species_track_counts(config)
    rng = np.random.default_rng([config.seed, 100])
    dim = config.dim
    group_means = [_scaled_normal(rng, config.sigma_group, dim) for _ in range(tax.G)]
    species_offsets = [_scaled_normal(rng, config.sigma_species, dim) for _ in range(tax.S)]
    tracks: list[Track] = []
    tid = 0
    for s in range(tax.S):
        g, _ = tax.to_local(s)
        centroid = group_means[g] + species_offsets[s]
        gname = tax.groups[g]
        sname = tax.species_name(s)
        for _ in range(counts[s]):
            track_id = f"t{tid:05d}"
            tid += 1
            jitter = _scaled_normal(rng, config.sigma_track, dim)
            T = int(rng.integers(config.frames_min, config.frames_max + 1))
            frames = []
            for k in range(T):
                noise = _scaled_normal(rng, config.sigma_frame, dim)
                frames.append(
                    Frame(
                        track_id=track_id,
                        frame_index=k,
                        group=gname,
                        species=sname,
                        features=centroid + jitter + noise,
                    )
                )
            tracks.append(Track(track_id=track_id, frames=frames))
    return Dataset(tracks=tracks, mode=MODE_FEATURES)


def split_by_track(
    dataset: Dataset, ratio: float, seed: int
) -> tuple[Dataset, Dataset]:
    """Stratified per-species split at whole-track granularity.

    Every species keeps at least one track on the eval side; no track
    ever contributes frames to both sides.
    """
    if not (0.0 < ratio < 1.0):
        raise InfeasibleConfig(f"split ratio {ratio} not in (0, 1)")
    by_species: dict[str, list[Track]] = {}
    for t in dataset.tracks:
        by_species.setdefault(t.species, []).append(t)
    train: list[Track] = []
    evaln: list[Track] = []
    for species in sorted(by_species):
        tracks = sorted(by_species[species], key=lambda t: t.track_id)
        if len(tracks) < 2:
            raise SpeciesTooSmall(
                f"species {species!r} has {len(tracks)} track(s); need >= 2"
            )
        rng = np.random.default_rng([seed, 200, hash_str(species)])
        order = rng.permutation(len(tracks))
        # cap so at least one track lands on the eval side
        n_train = min(math.ceil(ratio * len(tracks)), len(tracks) - 1)
        for pos, j in enumerate(order):
            (train if pos < n_train else evaln).append(tracks[j])
    train.sort(key=lambda t: t.track_id)
    evaln.sort(key=lambda t: t.track_id)
    return (
        Dataset(tracks=train, mode=dataset.mode),
        Dataset(tracks=evaln, mode=dataset.mode),
    )


def hash_str(s: str) -> int:
    """Stable 32-bit hash (hash() is salted per process)."""
    h = 2166136261
    for ch in s.encode("utf-8"):
        h = ((h ^ ch) * 16777619) & 0xFFFFFFFF
    return h


def save_jsonl(dataset: Dataset, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for frame in dataset.frames():
            rec = {
                "track_id": frame.track_id,
                "frame_index": frame.frame_index,
                "group": frame.group,
                "species": frame.species,
            }
            if frame.features is not None:
                rec["features"] = frame.features.tolist()
            else:
                rec["shallow"] = frame.shallow.tolist()
                rec["deep"] = frame.deep.tolist()
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_jsonl(path: str) -> Dataset:
    frames_by_track: dict[str, list[Frame]] = {}
    track_order: list[str] = []
    mode = None
    dims = None
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise MalformedRecord(f"line {lineno}: invalid JSON: {e}") from e
            try:
                frame = Frame(
                    track_id=rec["track_id"],
                    frame_index=int(rec["frame_index"]),
                    group=rec["group"],
                    species=rec["species"],
                )
            except (KeyError, TypeError, ValueError) as e:
                raise MalformedRecord(f"line {lineno}: {e}") from e
            if "features" in rec:
                frame.features = np.asarray(rec["features"], dtype=np.float64)
                rec_mode = MODE_FEATURES
                rec_dims = (frame.features.shape[0],)
            elif "shallow" in rec and "deep" in rec:
                frame.shallow = np.asarray(rec["shallow"], dtype=np.float64)
                frame.deep = np.asarray(rec["deep"], dtype=np.float64)
                rec_mode = MODE_PRECOMPUTED
                rec_dims = (frame.shallow.shape[0], frame.deep.shape[0])
            else:
                raise MalformedRecord(
                    f"line {lineno}: needs 'features' or 'shallow'+'deep'"
                )
            if mode is None:
                mode, dims = rec_mode, rec_dims
            elif rec_mode != mode or rec_dims != dims:
                raise DimensionMismatch(
                    f"line {lineno}: feature layout {rec_mode}{rec_dims} "
                    f"disagrees with {mode}{dims}"
                )
            tid = frame.track_id
            if tid not in frames_by_track:
                frames_by_track[tid] = []
                track_order.append(tid)
            prev = frames_by_track[tid]
            if prev and (prev[0].group != frame.group or prev[0].species != frame.species):
                raise InconsistentLabels(
                    f"line {lineno}: track {tid!r} frames carry different labels"
                )
            prev.append(frame)
    tracks = [
        Track(track_id=tid, frames=sorted(frames_by_track[tid], key=lambda fr: fr.frame_index))
        for tid in track_order
    ]
    return Dataset(tracks=tracks, mode=mode or MODE_FEATURES)


def check_labels(dataset: Dataset, taxonomy: Taxonomy) -> None:
    """Raise if any frame's species does not map to its group."""
    for t in dataset.tracks:
        s = taxonomy.species_index(t.species)
        g = taxonomy.group_of(s)
        if taxonomy.groups[g] != t.group:
            raise InconsistentLabels(
                f"track {t.track_id!r}: species {t.species!r} is not in group {t.group!r}"
            )
