"""Dataset model, on-disk formats, splitting and synthetic benchmarks.

A dataset on disk is a directory holding ``manifest.json`` plus either
``records.jsonl`` (one JSON object per line: id, label, spatial, motion,
audio-or-null) or ``records.vfb`` (packed binary: magic ``VFUSEDS1``,
little-endian, explicit shapes, float64 payloads). Serialization is
canonical — sorted keys, shortest round-trip decimals — so writing the same
data twice yields byte-identical files.

The synthetic generators draw classes as latent means in a shared space,
mix them into per-modality features through fixed random maps, and support
three kinds of deliberately confusable class pairs:

* ``level``  — the second class's means sit a small offset away from the
  first's, so the classes overlap in feature space;
* ``order``  — both classes share the same segment content and differ only
  in segment order, so any order-agnostic pooling sees identical
  distributions;
* ``audio``  — visual streams are identically distributed and only the
  audio vector separates the classes.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .linalg import RngStream

MAGIC = b"VFUSEDS1"
SPLIT_NAMES = ("train", "validation", "test")


@dataclass
class VideoRecord:
    """One sample: per-frame spatial/motion features and one audio vector.

    Spatial and motion sequences may have different lengths. A missing
    audio track is imputed as a zero vector with ``audio_present`` False.
    """

    id: str
    label: int
    spatial_seq: np.ndarray  # T_s x d_s
    motion_seq: np.ndarray   # T_m x d_m
    audio_vec: np.ndarray    # d_a
    audio_present: bool = True


@dataclass
class DatasetManifest:
    classes: list[str]
    spatial_dim: int
    motion_dim: int
    audio_dim: int
    splits: dict[str, str] | None = None  # record id -> train|validation|test

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "feature_dims": {
                "spatial": self.spatial_dim,
                "motion": self.motion_dim,
                "audio": self.audio_dim,
            },
            "splits": self.splits,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        try:
            dims = d["feature_dims"]
            return cls(
                classes=list(d["classes"]),
                spatial_dim=int(dims["spatial"]),
                motion_dim=int(dims["motion"]),
                audio_dim=int(dims["audio"]),
                splits=dict(d["splits"]) if d.get("splits") is not None else None,
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed manifest: {exc}") from exc


def manifest_hash(manifest: DatasetManifest) -> str:
    """Stable fingerprint of the manifest (classes, dims and splits)."""
    blob = json.dumps(manifest.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def class_hash(classes: list[str]) -> str:
    """Stable fingerprint of the class list, carried by score files."""
    blob = json.dumps(list(classes), separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# serialization


def _record_to_json(rec: VideoRecord) -> str:
    obj = {
        "id": rec.id,
        "label": int(rec.label),
        "spatial": np.asarray(rec.spatial_seq, dtype=np.float64).tolist(),
        "motion": np.asarray(rec.motion_seq, dtype=np.float64).tolist(),
        "audio": np.asarray(rec.audio_vec, dtype=np.float64).tolist() if rec.audio_present else None,
    }
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _record_from_obj(obj: dict, manifest: DatasetManifest, where: str) -> VideoRecord:
    try:
        rec_id = str(obj["id"])
        label = int(obj["label"])
        spatial = np.asarray(obj["spatial"], dtype=np.float64)
        motion = np.asarray(obj["motion"], dtype=np.float64)
        audio_raw = obj["audio"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed record at {where}: {exc}") from exc
    if audio_raw is None:
        audio = np.zeros(manifest.audio_dim)
        audio_present = False
    else:
        audio = np.asarray(audio_raw, dtype=np.float64)
        audio_present = True
    rec = VideoRecord(rec_id, label, spatial, motion, audio, audio_present)
    _validate_record(rec, manifest)
    return rec


def _validate_record(rec: VideoRecord, manifest: DatasetManifest) -> None:
    if rec.spatial_seq.ndim != 2 or rec.spatial_seq.shape[1] != manifest.spatial_dim:
        raise DataError(
            f"record {rec.id!r}: spatial shape {rec.spatial_seq.shape} does not match "
            f"manifest dim {manifest.spatial_dim}")
    if rec.motion_seq.ndim != 2 or rec.motion_seq.shape[1] != manifest.motion_dim:
        raise DataError(
            f"record {rec.id!r}: motion shape {rec.motion_seq.shape} does not match "
            f"manifest dim {manifest.motion_dim}")
    if rec.audio_vec.shape != (manifest.audio_dim,):
        raise DataError(
            f"record {rec.id!r}: audio shape {rec.audio_vec.shape} does not match "
            f"manifest dim {manifest.audio_dim}")
    if rec.spatial_seq.shape[0] < 1 or rec.motion_seq.shape[0] < 1:
        raise DataError(f"record {rec.id!r}: sequences must have at least one step")
    if not 0 <= rec.label < manifest.num_classes:
        raise DataError(f"record {rec.id!r}: label {rec.label} outside class range")
    for name, arr in (("spatial", rec.spatial_seq), ("motion", rec.motion_seq),
                      ("audio", rec.audio_vec)):
        if not np.all(np.isfinite(arr)):
            raise DataError(f"record {rec.id!r}: non-finite values in {name} features")


def write_dataset(manifest: DatasetManifest, records: list[VideoRecord], path: str,
                  packed: bool = False) -> None:
    """Write a dataset directory; identical inputs give identical bytes."""
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "manifest.json"), "w") as f:
        json.dump(manifest.to_dict(), f, sort_keys=True, indent=2)
        f.write("\n")
    if packed:
        _write_packed(records, os.path.join(path, "records.vfb"))
    else:
        with open(os.path.join(path, "records.jsonl"), "w") as f:
            for rec in records:
                f.write(_record_to_json(rec))
                f.write("\n")


def _write_packed(records: list[VideoRecord], path: str) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", 1, len(records)))
        for rec in records:
            idb = rec.id.encode()
            f.write(struct.pack("<H", len(idb)))
            f.write(idb)
            f.write(struct.pack("<iB", int(rec.label), 1 if rec.audio_present else 0))
            for arr in (rec.spatial_seq, rec.motion_seq):
                a = np.ascontiguousarray(arr, dtype="<f8")
                f.write(struct.pack("<II", a.shape[0], a.shape[1]))
                f.write(a.tobytes())
            a = np.ascontiguousarray(rec.audio_vec, dtype="<f8")
            f.write(struct.pack("<I", a.shape[0]))
            f.write(a.tobytes())


def _read_packed(path: str, manifest: DatasetManifest) -> list[VideoRecord]:
    def take(f, n, what):
        buf = f.read(n)
        if len(buf) != n:
            raise DataError(f"truncated packed records file while reading {what}")
        return buf

    records = []
    with open(path, "rb") as f:
        if take(f, 8, "magic") != MAGIC:
            raise DataError("not a packed records file (bad magic)")
        version, count = struct.unpack("<II", take(f, 8, "header"))
        if version != 1:
            raise DataError(f"unsupported packed records version {version}")
        for k in range(count):
            (id_len,) = struct.unpack("<H", take(f, 2, f"record {k} id length"))
            rec_id = take(f, id_len, f"record {k} id").decode()
            label, audio_flag = struct.unpack("<iB", take(f, 5, f"record {k} label"))
            mats = []
            for part in ("spatial", "motion"):
                rows, cols = struct.unpack("<II", take(f, 8, f"record {k} {part} shape"))
                data = take(f, 8 * rows * cols, f"record {k} {part} data")
                mats.append(np.frombuffer(data, dtype="<f8").reshape(rows, cols).astype(np.float64))
            (alen,) = struct.unpack("<I", take(f, 4, f"record {k} audio shape"))
            audio = np.frombuffer(take(f, 8 * alen, f"record {k} audio data"), dtype="<f8").astype(np.float64)
            rec = VideoRecord(rec_id, label, mats[0], mats[1], audio, bool(audio_flag))
            _validate_record(rec, manifest)
            records.append(rec)
        if f.read(1):
            raise DataError("trailing bytes after last packed record")
    return records


def load_dataset(path: str) -> tuple[DatasetManifest, list[VideoRecord]]:
    """Load and fully validate a dataset directory."""
    mpath = os.path.join(path, "manifest.json")
    if not os.path.exists(mpath):
        raise DataError(f"no manifest.json under {path!r}")
    with open(mpath) as f:
        try:
            manifest = DatasetManifest.from_dict(json.load(f))
        except json.JSONDecodeError as exc:
            raise DataError(f"manifest.json: invalid JSON at line {exc.lineno}") from exc

    packed = os.path.join(path, "records.vfb")
    jsonl = os.path.join(path, "records.jsonl")
    if os.path.exists(packed):
        records = _read_packed(packed, manifest)
    elif os.path.exists(jsonl):
        records = []
        with open(jsonl) as f:
            for lineno, line in enumerate(f, start=1):
                if line.strip() == "":
                    continue
                if not line.endswith("\n"):
                    raise DataError(f"records.jsonl line {lineno}: truncated final line")
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"records.jsonl line {lineno}: invalid JSON ({exc.msg})") from exc
                records.append(_record_from_obj(obj, manifest, f"line {lineno}"))
    else:
        raise DataError(f"no records.jsonl or records.vfb under {path!r}")

    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate record ids in dataset")
    if manifest.splits is not None:
        unknown = set(manifest.splits) - set(ids)
        if unknown:
            raise DataError(f"splits reference unknown record ids: {sorted(unknown)[:3]}")
        for rid in ids:
            split = manifest.splits.get(rid)
            if split not in SPLIT_NAMES:
                raise DataError(f"record {rid!r} has invalid split assignment {split!r}")
    return manifest, records


def split_records(manifest: DatasetManifest, records: list[VideoRecord],
                  split: str) -> list[VideoRecord]:
    """Records assigned to one split, in file order."""
    if manifest.splits is None:
        raise DataError("dataset has no split assignments yet")
    if split not in SPLIT_NAMES:
        raise ConfigError(f"unknown split {split!r}")
    return [r for r in records if manifest.splits[r.id] == split]


def split_dataset(manifest: DatasetManifest, records: list[VideoRecord],
                  fractions: tuple[float, float, float], seed: int) -> DatasetManifest:
    """Stratified train/validation/test assignment, deterministic per seed.

    Fractions must be non-negative and sum to 1. Within each class the
    records are shuffled and allocated by largest remainder; every split
    with a positive fraction must receive at least one record of every
    class, otherwise the class is reported as too small.
    """
    fractions = tuple(float(x) for x in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must be 3 non-negative values summing to 1, got {fractions}")
    rng = RngStream(seed)
    by_class: dict[int, list[str]] = {}
    for rec in records:
        by_class.setdefault(rec.label, []).append(rec.id)

    splits: dict[str, str] = {}
    for label in sorted(by_class):
        ids = by_class[label]
        ids = [ids[i] for i in rng.permutation(len(ids))]
        n = len(ids)
        base = [int(np.floor(f * n)) for f in fractions]
        leftovers = n - sum(base)
        remainders = [f * n - b for f, b in zip(fractions, base)]
        for _ in range(leftovers):
            k = int(np.argmax(remainders))
            base[k] += 1
            remainders[k] = -1.0
        for frac, count in zip(fractions, base):
            if frac > 0 and count == 0:
                raise DataError(
                    f"class {manifest.classes[label]!r} is too small to appear in every split")
        cursor = 0
        for split_name, count in zip(SPLIT_NAMES, base):
            for rid in ids[cursor:cursor + count]:
                splits[rid] = split_name
            cursor += count
    return DatasetManifest(
        classes=list(manifest.classes),
        spatial_dim=manifest.spatial_dim,
        motion_dim=manifest.motion_dim,
        audio_dim=manifest.audio_dim,
        splits=splits,
    )


# ---------------------------------------------------------------------------
# synthetic benchmarks


@dataclass
class ConfusablePair:
    first: int
    second: int
    signal: str = "level"  # level | order | audio


@dataclass
class SynthConfig:
    """Knobs of the synthetic multimodal generator."""

    num_classes: int
    samples_per_class: int | tuple[int, ...]  # scalar, or one count per class
    shared_dim: int = 4
    unique_dims: tuple[int, int, int] = (2, 2, 2)
    noise_scale: float = 0.1
    temporal_mode: str = "stateless"  # stateless | ordered-segments
    pairs: list[ConfusablePair] = field(default_factory=list)
    seed: int = 0
    feature_dims: tuple[int, int, int] = (8, 8, 4)
    seq_len: int = 12
    motion_seq_len: int = 12
    num_segments: int = 3
    class_scale: float = 1.0
    audio_scale: float | None = None  # None: same as class_scale; 0: audio carries no label signal
    unique_scale: float = 1.0  # amplitude of the unique factors, as a multiple of noise_scale
    pair_offset: float = 0.25
    segment_scale: float = 1.0

    def class_sizes(self) -> tuple[int, ...]:
        if isinstance(self.samples_per_class, int):
            return (self.samples_per_class,) * self.num_classes
        return tuple(int(n) for n in self.samples_per_class)

    def validate(self) -> None:
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        sizes = self.class_sizes()
        if len(sizes) != self.num_classes or min(sizes) < 1:
            raise ConfigError(
                "samples_per_class must be a positive count or one positive count per class")
        if self.shared_dim < 1 or min(self.unique_dims) < 0 or min(self.feature_dims) < 1:
            raise ConfigError("latent and feature dims must be positive")
        if self.noise_scale < 0:
            raise ConfigError("noise_scale must be >= 0")
        if self.temporal_mode not in ("stateless", "ordered-segments"):
            raise ConfigError(f"unknown temporal_mode {self.temporal_mode!r}")
        if self.seq_len < 1 or self.motion_seq_len < 1:
            raise ConfigError("sequence lengths must be >= 1")
        if self.temporal_mode == "ordered-segments":
            if self.num_segments < 2:
                raise ConfigError("ordered-segments mode needs at least 2 segments")
            if self.seq_len % self.num_segments or self.motion_seq_len % self.num_segments:
                raise ConfigError("sequence lengths must be divisible by num_segments")
        for pair in self.pairs:
            if pair.signal not in ("level", "order", "audio"):
                raise ConfigError(f"unknown pair signal {pair.signal!r}")
            if pair.signal == "order" and self.temporal_mode != "ordered-segments":
                raise ConfigError("order pairs require ordered-segments mode")
            if pair.signal == "audio" and self.audio_scale == 0:
                raise ConfigError("audio pairs need a non-zero audio_scale")
            if not (0 <= pair.first < self.num_classes and 0 <= pair.second < self.num_classes):
                raise ConfigError(f"pair ({pair.first}, {pair.second}) outside class range")
            if pair.first == pair.second:
                raise ConfigError("pair members must be distinct classes")


@dataclass
class SynthModel:
    """The generative parameters behind a synthetic dataset."""

    mix_spatial: np.ndarray  # d_s x (shared_dim + u_s)
    mix_motion: np.ndarray
    mix_audio: np.ndarray
    visual_means: np.ndarray   # C x shared_dim
    audio_means: np.ndarray    # C x shared_dim
    segments: np.ndarray       # C x num_segments x shared_dim
    orders: np.ndarray         # C x num_segments (segment permutation)

    def class_feature_means(self, cfg: SynthConfig):
        """Expected frame-level / audio features per class at zero noise.

        In ordered-segments mode the per-frame mean varies per segment, so
        the returned visual means are the pooled (order-independent)
        values.
        """
        pad_s = np.zeros(cfg.unique_dims[0])
        pad_m = np.zeros(cfg.unique_dims[1])
        pad_a = np.zeros(cfg.unique_dims[2])
        spatial, motion, audio = [], [], []
        for c in range(cfg.num_classes):
            z = self.visual_means[c]
            if cfg.temporal_mode == "ordered-segments":
                z = z + self.segments[c].mean(axis=0)
            spatial.append(self.mix_spatial @ np.concatenate([z, pad_s]))
            motion.append(self.mix_motion @ np.concatenate([z, pad_m]))
            audio.append(self.mix_audio @ np.concatenate([self.audio_means[c], pad_a]))
        return np.stack(spatial), np.stack(motion), np.stack(audio)


def _class_directions(rng: RngStream, count: int, dim: int) -> np.ndarray:
    """Unit-norm class directions, mutually orthogonal when dim allows.

    A randomly oriented orthonormal frame keeps the between-class geometry
    identical across seeds, so benchmark difficulty depends only on the
    scale knobs; with more classes than dimensions the extra directions are
    plain normalized draws.
    """
    draws = rng.normal(size=(dim, count))
    out = np.empty((count, dim))
    n_orth = min(count, dim)
    q, r = np.linalg.qr(draws[:, :n_orth])
    q = q * np.sign(np.diag(r))  # fix LAPACK sign ambiguity
    out[:n_orth] = q.T
    for i in range(n_orth, count):
        v = draws[:, i]
        out[i] = v / np.sqrt((v * v).sum())
    return out


def synth_model(config: SynthConfig, rng: RngStream | None = None) -> SynthModel:
    """Draw the mixing maps and class profiles (the stream's first draws)."""
    config.validate()
    if rng is None:
        rng = RngStream(config.seed)
    k = config.shared_dim
    u_s, u_m, u_a = config.unique_dims
    d_s, d_m, d_a = config.feature_dims
    mix_s = rng.normal(size=(d_s, k + u_s)) / np.sqrt(k + u_s)
    mix_m = rng.normal(size=(d_m, k + u_m)) / np.sqrt(k + u_m)
    mix_a = rng.normal(size=(d_a, k + u_a)) / np.sqrt(k + u_a)

    c_n = config.num_classes
    audio_scale = config.audio_scale if config.audio_scale is not None else config.class_scale
    visual = config.class_scale * _class_directions(rng, c_n, k)
    audio = audio_scale * _class_directions(rng, c_n, k)
    segments = config.segment_scale * rng.normal(size=(c_n, config.num_segments, k))
    orders = np.tile(np.arange(config.num_segments), (c_n, 1))

    for pair in config.pairs:
        a, b = pair.first, pair.second
        if pair.signal == "level":
            direction = rng.normal(size=k)
            direction /= np.sqrt((direction * direction).sum())
            visual[b] = visual[a] + config.pair_offset * direction
            direction2 = rng.normal(size=k)
            direction2 /= np.sqrt((direction2 * direction2).sum())
            audio[b] = audio[a] + config.pair_offset * direction2
            segments[b] = segments[a]
        elif pair.signal == "order":
            visual[b] = visual[a]
            audio[b] = audio[a]
            segments[b] = segments[a]
            orders[b] = orders[a][::-1]
        elif pair.signal == "audio":
            visual[b] = visual[a]
            segments[b] = segments[a]
            orders[b] = orders[a]
            audio[b] = audio_scale * rng.normal(size=k)
    return SynthModel(mix_s, mix_m, mix_a, visual, audio, segments, orders)


def synth_generate(config: SynthConfig) -> tuple[DatasetManifest, list[VideoRecord]]:
    """Deterministic synthetic dataset; same config gives identical bytes."""
    rng = RngStream(config.seed)
    model = synth_model(config, rng)  # sampling continues the same stream

    k = config.shared_dim
    u_s, u_m, u_a = config.unique_dims
    d_s, d_m, d_a = config.feature_dims
    sigma = config.noise_scale
    records: list[VideoRecord] = []
    idx = 0
    for c in range(config.num_classes):
        order = model.orders[c]
        for _ in range(config.class_sizes()[c]):
            z = model.visual_means[c] + sigma * rng.normal(size=k)
            u_amp = sigma * config.unique_scale
            uniq_s = u_amp * rng.normal(size=u_s) if u_s else np.zeros(0)
            uniq_m = u_amp * rng.normal(size=u_m) if u_m else np.zeros(0)
            uniq_a = u_amp * rng.normal(size=u_a) if u_a else np.zeros(0)

            spatial = _emit_sequence(model.mix_spatial, z, uniq_s, model.segments[c],
                                     order, config.seq_len, config, rng, d_s)
            motion = _emit_sequence(model.mix_motion, z, uniq_m, model.segments[c],
                                    order, config.motion_seq_len, config, rng, d_m)
            audio_latent = model.audio_means[c] + sigma * rng.normal(size=k)
            audio = model.mix_audio @ np.concatenate([audio_latent, uniq_a])
            audio = audio + sigma * rng.normal(size=d_a)
            records.append(VideoRecord(f"vid{idx:05d}", c, spatial, motion, audio, True))
            idx += 1
    manifest = DatasetManifest(
        classes=[f"class{c:02d}" for c in range(config.num_classes)],
        spatial_dim=d_s, motion_dim=d_m, audio_dim=d_a, splits=None)
    return manifest, records


def _emit_sequence(mix: np.ndarray, z: np.ndarray, uniq: np.ndarray,
                   segments: np.ndarray, order: np.ndarray, length: int,
                   config: SynthConfig, rng: RngStream, out_dim: int) -> np.ndarray:
    noise = config.noise_scale * rng.normal(size=(length, out_dim))
    frames = np.empty((length, out_dim))
    if config.temporal_mode == "ordered-segments":
        per_seg = length // config.num_segments
        for t in range(length):
            seg = order[t // per_seg]
            latent = np.concatenate([z + segments[seg], uniq])
            frames[t] = mix @ latent
    else:
        latent = np.concatenate([z, uniq])
        frames[:] = mix @ latent
    return frames + noise


def stream_sequences(records: list[VideoRecord], stream: str) -> list[tuple[np.ndarray, int]]:
    """(sequence, label) pairs for one feature stream."""
    if stream == "spatial":
        return [(r.spatial_seq, r.label) for r in records]
    if stream == "motion":
        return [(r.motion_seq, r.label) for r in records]
    raise ConfigError(f"unknown stream {stream!r}")
