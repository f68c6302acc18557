"""Recording format, normalization, resampling, and modality masking.

A corpus is a directory: ``manifest.json`` (channel layout, normalization
spec, per-sequence object metadata) plus one text file per sequence under
``sequences/``. Sequence files are diff-able: a header line ``id T D t_ap``
followed by T rows of D space-separated decimals printed with 9 significant
digits, so write -> read -> write is byte-identical.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

NORM_TARGET = 0.9

SENSOR_GROUPS = ("image", "tactile", "force")
ACTUATOR_GROUPS = ("motor", "grip")


class DatasetError(ValueError):
    """Raised on malformed sequences, layouts, or corpus files."""


@dataclass(frozen=True)
class ChannelLayout:
    """Ordered channel groups; default mirrors the sensorimotor IO vector."""

    groups: tuple[tuple[str, int], ...] = (
        ("image", 15), ("motor", 7), ("tactile", 4), ("force", 6), ("grip", 1),
    )

    def __post_init__(self):
        for name, width in self.groups:
            if width <= 0:
                raise DatasetError(f"channel group {name!r} has non-positive width {width}")

    @property
    def width(self) -> int:
        return sum(w for _, w in self.groups)

    def slice_of(self, name: str) -> slice:
        start = 0
        for gname, width in self.groups:
            if gname == name:
                return slice(start, start + width)
            start += width
        raise DatasetError(f"no channel group named {name!r}")

    def indices_of(self, names) -> np.ndarray:
        idx: list[int] = []
        for name in names:
            s = self.slice_of(name)
            idx.extend(range(s.start, s.stop))
        return np.array(sorted(idx), dtype=np.intp)

    def group_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.groups)

    def sensor_indices(self) -> np.ndarray:
        return self.indices_of([g for g in self.group_names() if g in SENSOR_GROUPS])

    def actuator_indices(self) -> np.ndarray:
        return self.indices_of([g for g in self.group_names() if g in ACTUATOR_GROUPS])

    def to_json(self) -> list[list]:
        return [[name, width] for name, width in self.groups]

    @classmethod
    def from_json(cls, data) -> "ChannelLayout":
        return cls(groups=tuple((str(n), int(w)) for n, w in data))


@dataclass(frozen=True)
class NormalizationSpec:
    """Per-channel affine map: [low, high] -> [-NORM_TARGET, +NORM_TARGET].

    ``provenance`` records the corpus the bounds were fitted on; evaluation
    paths assert it matches the training corpus to rule out peeking at test
    ranges.
    """

    low: np.ndarray
    high: np.ndarray
    provenance: str

    def __post_init__(self):
        low = np.asarray(self.low, dtype=np.float64)
        high = np.asarray(self.high, dtype=np.float64)
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)
        if low.shape != high.shape or low.ndim != 1:
            raise DatasetError("normalization bounds must be matching 1-D arrays")
        if np.any(high < low):
            raise DatasetError("normalization bounds require low <= high per channel")

    @property
    def width(self) -> int:
        return self.low.size

    def degenerate(self) -> np.ndarray:
        return self.high == self.low

    @classmethod
    def fit(cls, rows: np.ndarray, provenance: str) -> "NormalizationSpec":
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise DatasetError("normalization fit needs a non-empty [T, D] matrix")
        return cls(low=rows.min(axis=0), high=rows.max(axis=0), provenance=provenance)

    def normalize(self, rows: np.ndarray, clamp: bool = True) -> tuple[np.ndarray, int]:
        """Map raw rows into [-NORM_TARGET, NORM_TARGET]; returns (rows, clamp count).

        Out-of-range values clamp to the target endpoints; degenerate channels
        (low == high) pin to 0. A warning is emitted in either case.
        """
        rows = np.asarray(rows, dtype=np.float64)
        if rows.shape[-1] != self.width:
            raise DatasetError(f"normalize: got {rows.shape[-1]} channels, spec has {self.width}")
        span = self.high - self.low
        degen = self.degenerate()
        safe_span = np.where(degen, 1.0, span)
        out = (rows - self.low) / safe_span * (2 * NORM_TARGET) - NORM_TARGET
        out = np.where(degen, 0.0, out)
        clamped = 0
        if clamp:
            over = (out > NORM_TARGET) | (out < -NORM_TARGET)
            clamped = int(np.count_nonzero(over))
            if clamped:
                warnings.warn(f"normalize: clamped {clamped} out-of-range value(s)")
                out = np.clip(out, -NORM_TARGET, NORM_TARGET)
        if np.any(degen):
            warnings.warn(
                f"normalize: {int(np.count_nonzero(degen))} degenerate channel(s) pinned to 0"
            )
        return out, clamped

    def denormalize(self, rows: np.ndarray) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.float64)
        if rows.shape[-1] != self.width:
            raise DatasetError(f"denormalize: got {rows.shape[-1]} channels, spec has {self.width}")
        span = self.high - self.low
        return (rows + NORM_TARGET) / (2 * NORM_TARGET) * span + self.low

    def to_json(self) -> dict:
        return {
            "low": [float(x) for x in self.low],
            "high": [float(x) for x in self.high],
            "target": NORM_TARGET,
            "provenance": self.provenance,
        }

    @classmethod
    def from_json(cls, data) -> "NormalizationSpec":
        return cls(low=np.array(data["low"]), high=np.array(data["high"]),
                   provenance=str(data["provenance"]))


@dataclass
class Sequence:
    """One recorded trial: a [T, D] matrix plus layout, phase split, metadata.

    ``mask`` flags channels that participate in losses and exploration
    objectives; zeroed-out modalities are excluded through it.
    ``normalized`` is True once values live in [-NORM_TARGET, NORM_TARGET].
    """

    id: str
    data: np.ndarray
    layout: ChannelLayout
    t_ap: int
    meta: dict = field(default_factory=dict)
    mask: np.ndarray | None = None
    normalized: bool = False
    norm_provenance: str | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise DatasetError(f"sequence {self.id!r}: data must be [T, D]")
        if self.steps < 2:
            raise DatasetError(f"sequence {self.id!r}: needs at least 2 steps, got {self.steps}")
        if not (0 < self.t_ap <= self.steps):
            raise DatasetError(
                f"sequence {self.id!r}: phase boundary {self.t_ap} outside 1..{self.steps}"
            )
        if self.layout.width != self.width:
            raise DatasetError(
                f"sequence {self.id!r}: layout width {self.layout.width} != data width {self.width}"
            )
        if self.mask is None:
            self.mask = np.ones(self.width, dtype=bool)
        else:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != (self.width,):
                raise DatasetError(f"sequence {self.id!r}: mask must have {self.width} entries")
        if self.normalized and float(np.abs(self.data).max(initial=0.0)) > 1.0:
            raise DatasetError(f"sequence {self.id!r}: normalized data outside [-1, 1]")

    @property
    def steps(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def stir_prefix(self) -> np.ndarray:
        return self.data[: self.t_ap]

    def channels(self, name: str) -> np.ndarray:
        return self.data[:, self.layout.slice_of(name)]


def normalize_sequence(seq: Sequence, spec: NormalizationSpec) -> Sequence:
    if seq.normalized:
        raise DatasetError(f"sequence {seq.id!r} is already normalized")
    data, _ = spec.normalize(seq.data)
    return replace(seq, data=data, normalized=True, norm_provenance=spec.provenance)


def denormalize_sequence(seq: Sequence, spec: NormalizationSpec) -> Sequence:
    if not seq.normalized:
        raise DatasetError(f"sequence {seq.id!r} is not normalized")
    if seq.norm_provenance != spec.provenance:
        raise DatasetError(
            f"sequence {seq.id!r} was normalized against {seq.norm_provenance!r}, "
            f"not {spec.provenance!r}"
        )
    return replace(seq, data=spec.denormalize(seq.data), normalized=False, norm_provenance=None)


def resample_4to1(highrate: np.ndarray) -> np.ndarray:
    """Average each block of 4 consecutive rows into one output row."""
    highrate = np.asarray(highrate, dtype=np.float64)
    if highrate.ndim != 2:
        raise DatasetError("resample_4to1 expects a [4T, D] matrix")
    t4, d = highrate.shape
    if t4 % 4 != 0:
        raise DatasetError(f"resample_4to1: {t4} rows not divisible by 4")
    return highrate.reshape(t4 // 4, 4, d).mean(axis=1)


def apply_modality_mask(seq: Sequence, subset) -> Sequence:
    """Zero the sensor groups outside ``subset`` and exclude them from the mask.

    ``subset`` is a collection of sensor group names out of
    {image, force, tactile}; actuator groups (motor, grip) always stay.
    """
    subset = set(subset)
    unknown = subset - set(SENSOR_GROUPS)
    if unknown:
        raise DatasetError(f"unknown sensor group(s) {sorted(unknown)}")
    if not subset:
        raise DatasetError("modality subset must keep at least one sensor group")
    dropped = [g for g in seq.layout.group_names() if g in SENSOR_GROUPS and g not in subset]
    data = seq.data.copy()
    mask = seq.mask.copy()
    for name in dropped:
        s = seq.layout.slice_of(name)
        data[:, s] = 0.0
        mask[s.start:s.stop] = False
    meta = dict(seq.meta)
    meta["modalities"] = sorted(subset)
    return replace(seq, data=data, mask=mask, meta=meta)


# ---------------------------------------------------------------------------
# Corpus directory IO
# ---------------------------------------------------------------------------

def _format_row(row: np.ndarray) -> str:
    return " ".join(format(v, ".9g") for v in row)


def write_sequence_file(path: Path, seq: Sequence) -> None:
    lines = [f"{seq.id} {seq.steps} {seq.width} {seq.t_ap}"]
    lines.extend(_format_row(row) for row in seq.data)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_sequence_file(path: Path, layout: ChannelLayout) -> Sequence:
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise DatasetError(f"{path}: empty sequence file")
    head = lines[0].split()
    if len(head) != 4:
        raise DatasetError(f"{path}: malformed header {lines[0]!r}")
    seq_id, steps, width, t_ap = head[0], int(head[1]), int(head[2]), int(head[3])
    if len(lines) - 1 != steps:
        raise DatasetError(f"{path}: header claims {steps} rows, file has {len(lines) - 1}")
    data = np.array([[float(v) for v in line.split()] for line in lines[1:]], dtype=np.float64)
    if data.shape != (steps, width):
        raise DatasetError(f"{path}: data shape {data.shape} != header ({steps}, {width})")
    return Sequence(id=seq_id, data=data, layout=layout, t_ap=t_ap)


@dataclass
class Corpus:
    """A named set of sequences with a shared layout and normalization spec."""

    name: str
    layout: ChannelLayout
    sequences: list[Sequence]
    norm: NormalizationSpec | None = None
    extra: dict = field(default_factory=dict)

    def by_id(self, seq_id: str) -> Sequence:
        for seq in self.sequences:
            if seq.id == seq_id:
                return seq
        raise DatasetError(f"corpus {self.name!r} has no sequence {seq_id!r}")


def fit_normalization(sequences: list[Sequence], provenance: str) -> NormalizationSpec:
    if not sequences:
        raise DatasetError("cannot fit normalization on an empty corpus")
    stacked = np.concatenate([s.data for s in sequences], axis=0)
    return NormalizationSpec.fit(stacked, provenance=provenance)


def save_corpus(corpus: Corpus, root: Path) -> None:
    root = Path(root)
    seq_dir = root / "sequences"
    seq_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "name": corpus.name,
        "layout": corpus.layout.to_json(),
        "normalization": corpus.norm.to_json() if corpus.norm else None,
        "sequences": {},
    }
    manifest.update(corpus.extra)
    for seq in corpus.sequences:
        manifest["sequences"][seq.id] = {
            "meta": seq.meta,
            "mask": [bool(b) for b in seq.mask],
            "normalized": bool(seq.normalized),
            "norm_provenance": seq.norm_provenance,
        }
        write_sequence_file(seq_dir / f"{seq.id}.txt", seq)
    (root / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def load_corpus(root: Path) -> Corpus:
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DatasetError(f"{root}: no manifest.json; not a corpus directory")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    layout = ChannelLayout.from_json(manifest["layout"])
    norm = None
    if manifest.get("normalization"):
        norm = NormalizationSpec.from_json(manifest["normalization"])
    sequences = []
    for seq_id in sorted(manifest["sequences"]):
        entry = manifest["sequences"][seq_id]
        seq = read_sequence_file(root / "sequences" / f"{seq_id}.txt", layout)
        seq.meta = dict(entry.get("meta", {}))
        seq.mask = np.array(entry.get("mask", [True] * layout.width), dtype=bool)
        seq.normalized = bool(entry.get("normalized", False))
        seq.norm_provenance = entry.get("norm_provenance")
        sequences.append(seq)
    extra = {k: v for k, v in manifest.items()
             if k not in ("name", "layout", "normalization", "sequences")}
    return Corpus(name=manifest["name"], layout=layout, sequences=sequences,
                  norm=norm, extra=extra)
