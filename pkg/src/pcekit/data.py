"""Domain types, dataset container, file I/O and stratified splitting."""
from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

OFF = "off"
MODALITIES = ("vis", "txt")
_AOI_RE = re.compile(r"^(vis|txt)_[a-z0-9_]+$")
_SUFFIX_RE = re.compile(r"^([a-z0-9_]+?)_(vis|txt|text)$")

FIXATION_HEADER = ("participant_id", "stimulus_id", "index", "aoi", "x", "y", "duration_ms")
LABEL_HEADER = ("participant_id", "stimulus_id", "label")


class DataFormatError(ValueError):
    """Raised for malformed or inconsistent input files."""


def is_aoi(symbol: str) -> bool:
    return symbol == OFF or bool(_AOI_RE.match(symbol))


def normalize_aoi(raw: str | None) -> str:
    """Map a raw AOI cell to its canonical ``<modality>_<label>`` form.

    Accepts both ``vis_wall`` and ``wall_vis`` (and ``wall_text``).  Empty
    or unrecognised cells become ``"off"``.
    """
    s = (raw or "").strip().lower().replace(" ", "_").replace("-", "_")
    if not s or s == OFF:
        return OFF
    if _AOI_RE.match(s):
        return s
    m = _SUFFIX_RE.match(s)
    if m:
        modality = "txt" if m.group(2) == "text" else m.group(2)
        return f"{modality}_{m.group(1)}"
    return OFF


def aoi_modality(symbol: str) -> str:
    return OFF if symbol == OFF else symbol.split("_", 1)[0]


def aoi_label(symbol: str) -> str:
    return OFF if symbol == OFF else symbol.split("_", 1)[1]


class PceLabel(IntEnum):
    YES = 0
    NO = 1
    UNCLEAR = 2

    @classmethod
    def parse(cls, text: str) -> "PceLabel":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown label {text!r} (expected yes/no/unclear)") from None

    @property
    def text(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class Fixation:
    index: int
    aoi: str
    x: float
    y: float
    duration_ms: float

    def __post_init__(self):
        if self.index < 1:
            raise ValueError(f"fixation index must be >= 1, got {self.index}")
        if not is_aoi(self.aoi):
            raise ValueError(f"invalid AOI symbol {self.aoi!r}")
        if not self.duration_ms > 0:
            raise ValueError(f"duration_ms must be positive, got {self.duration_ms}")
        if self.x < 0 or self.y < 0:
            raise ValueError(f"coordinates must be non-negative, got ({self.x}, {self.y})")


@dataclass(frozen=True)
class FixationSequence:
    participant_id: str
    stimulus_id: str
    fixations: tuple[Fixation, ...]

    def __post_init__(self):
        object.__setattr__(self, "fixations", tuple(self.fixations))
        if not self.fixations:
            raise ValueError("fixation sequence is empty")
        for expected, fx in enumerate(self.fixations, start=1):
            if fx.index != expected:
                raise ValueError(
                    f"fixation indices must be 1..n contiguous; position {expected} has index {fx.index}"
                )

    def __len__(self):
        return len(self.fixations)

    @property
    def aois(self) -> list[str]:
        return [f.aoi for f in self.fixations]


@dataclass(frozen=True)
class Region:
    aoi: str
    x: float
    y: float
    w: float
    h: float
    central: bool = False


@dataclass(frozen=True)
class CaptionSpan:
    aoi: str
    start: int
    end: int


@dataclass(frozen=True)
class Stimulus:
    stimulus_id: str
    caption: str
    image_w: float
    image_h: float
    regions: tuple[Region, ...] = ()
    caption_spans: tuple[CaptionSpan, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        object.__setattr__(self, "caption_spans", tuple(self.caption_spans))
        for r in self.regions:
            if aoi_modality(r.aoi) != "vis":
                raise ValueError(f"{self.stimulus_id}: region AOI {r.aoi!r} is not vis-modality")
            if r.x < 0 or r.y < 0 or r.w <= 0 or r.h <= 0 or r.x + r.w > self.image_w or r.y + r.h > self.image_h:
                raise ValueError(f"{self.stimulus_id}: region {r.aoi!r} lies outside the image extent")
        for s in self.caption_spans:
            if aoi_modality(s.aoi) != "txt":
                raise ValueError(f"{self.stimulus_id}: caption span AOI {s.aoi!r} is not txt-modality")
            if not 0 <= s.start < s.end <= len(self.caption):
                raise ValueError(f"{self.stimulus_id}: caption span {s.aoi!r} [{s.start},{s.end}) out of range")

    @property
    def aois(self) -> list[str]:
        return [r.aoi for r in self.regions] + [s.aoi for s in self.caption_spans]

    def mention_fraction(self) -> float:
        """Fraction of central image regions whose label also has a caption span.

        Stimuli without central flags treat every region as central.
        """
        central = [r for r in self.regions if r.central] or list(self.regions)
        if not central:
            return 0.0
        mentioned = {aoi_label(s.aoi) for s in self.caption_spans}
        return sum(aoi_label(r.aoi) in mentioned for r in central) / len(central)

    def to_json(self) -> dict:
        return {
            "stimulus_id": self.stimulus_id,
            "caption": self.caption,
            "image_w": _num(self.image_w),
            "image_h": _num(self.image_h),
            "regions": [
                {"aoi": r.aoi, "x": _num(r.x), "y": _num(r.y), "w": _num(r.w), "h": _num(r.h), "central": r.central}
                for r in self.regions
            ],
            "caption_spans": [{"aoi": s.aoi, "start": s.start, "end": s.end} for s in self.caption_spans],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "Stimulus":
        return cls(
            stimulus_id=str(obj["stimulus_id"]),
            caption=str(obj["caption"]),
            image_w=float(obj["image_w"]),
            image_h=float(obj["image_h"]),
            regions=tuple(
                Region(normalize_aoi(r["aoi"]), float(r["x"]), float(r["y"]), float(r["w"]), float(r["h"]),
                       bool(r.get("central", False)))
                for r in obj.get("regions", [])
            ),
            caption_spans=tuple(
                CaptionSpan(normalize_aoi(s["aoi"]), int(s["start"]), int(s["end"]))
                for s in obj.get("caption_spans", [])
            ),
        )


@dataclass(frozen=True)
class PceSample:
    participant_id: str
    stimulus_id: str
    sequence: FixationSequence
    label: PceLabel

    def __post_init__(self):
        if (self.sequence.participant_id, self.sequence.stimulus_id) != (self.participant_id, self.stimulus_id):
            raise ValueError("sample ids do not match its fixation sequence")


class Vocab:
    """Bijection between symbols and dense indices, in insertion order."""

    def __init__(self, symbols: Iterable[str] = ()):
        self._symbols: list[str] = []
        self._index: dict[str, int] = {}
        for s in symbols:
            self.add(s)

    def add(self, symbol: str) -> int:
        idx = self._index.get(symbol)
        if idx is None:
            idx = self._index[symbol] = len(self._symbols)
            self._symbols.append(symbol)
        return idx

    def index(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise KeyError(f"symbol {symbol!r} not in vocabulary") from None

    def symbol(self, idx: int) -> str:
        return self._symbols[idx]

    def __contains__(self, symbol) -> bool:
        return symbol in self._index

    def __len__(self) -> int:
        return len(self._symbols)

    def __iter__(self):
        return iter(self._symbols)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self._symbols == other._symbols

    def __repr__(self) -> str:
        return f"Vocab({len(self)} symbols)"


@dataclass(frozen=True, eq=True)
class Dataset:
    samples: tuple[PceSample, ...]
    stimuli: Mapping[str, Stimulus]
    aoi_vocab: Vocab = field(compare=True)
    participant_vocab: Vocab = field(compare=True)

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        seen = set()
        for s in self.samples:
            key = (s.participant_id, s.stimulus_id)
            if key in seen:
                raise ValueError(f"duplicate (participant, stimulus) pair {key}")
            seen.add(key)
            if s.participant_id not in self.participant_vocab:
                raise ValueError(f"participant {s.participant_id!r} missing from vocabulary")
            for a in s.sequence.aois:
                if a not in self.aoi_vocab:
                    raise ValueError(f"AOI {a!r} missing from vocabulary")

    @classmethod
    def build(cls, samples: Sequence[PceSample], stimuli: Mapping[str, Stimulus]) -> "Dataset":
        """Build vocabularies in first-occurrence order over ``samples``."""
        aoi_vocab, part_vocab = Vocab(), Vocab()
        for s in samples:
            part_vocab.add(s.participant_id)
            for a in s.sequence.aois:
                aoi_vocab.add(a)
        return cls(tuple(samples), dict(stimuli), aoi_vocab, part_vocab)

    def subset(self, indices: Iterable[int]) -> "Dataset":
        """Same stimuli and vocabularies, a subset of the samples."""
        return Dataset(tuple(self.samples[i] for i in indices), self.stimuli, self.aoi_vocab, self.participant_vocab)

    def __len__(self) -> int:
        return len(self.samples)

    def labels(self) -> np.ndarray:
        return np.array([int(s.label) for s in self.samples], dtype=np.int64)

    def class_counts(self) -> tuple[int, int, int]:
        c = np.bincount(self.labels(), minlength=3)
        return int(c[0]), int(c[1]), int(c[2])

    def find(self, participant_id: str, stimulus_id: str) -> PceSample:
        for s in self.samples:
            if s.participant_id == participant_id and s.stimulus_id == stimulus_id:
                return s
        raise KeyError(f"no sample for participant {participant_id!r}, stimulus {stimulus_id!r}")


def _num(v: float):
    """Integral floats as ints, everything else via repr (round-trips exactly)."""
    v = float(v)
    return int(v) if v.is_integer() and abs(v) < 2**53 else v


def _fmt(v: float) -> str:
    return str(_num(v))


def _read_csv(path: Path, header: tuple[str, ...]):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None:
            return
        cols = [c.strip() for c in first]
        if cols != list(header):
            raise DataFormatError(f"{path}: line 1: expected header {','.join(header)}, got {','.join(cols)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}: line {lineno}: expected {len(header)} columns, got {len(row)}")
            yield lineno, dict(zip(header, (c.strip() for c in row)))


def _parse_number(path, lineno, column, text, kind=float):
    try:
        return kind(text)
    except ValueError:
        raise DataFormatError(f"{path}: line {lineno}, column {column!r}: cannot parse {text!r}") from None


def load_stimuli(path: str | Path) -> dict[str, Stimulus]:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        try:
            arr = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(arr, list):
        raise DataFormatError(f"{path}: expected a JSON array of stimuli")
    out: dict[str, Stimulus] = {}
    for i, obj in enumerate(arr):
        try:
            st = Stimulus.from_json(obj)
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"{path}: stimulus #{i}: {exc}") from None
        if st.stimulus_id in out:
            raise DataFormatError(f"{path}: duplicate stimulus_id {st.stimulus_id!r}")
        out[st.stimulus_id] = st
    return out


def load_dataset(fixations_path: str | Path, labels_path: str | Path, stimuli_path: str | Path) -> Dataset:
    """Load the three-file dataset format.

    Sample order, and therefore both vocabularies, follow first occurrence
    in the fixations file.
    """
    fixations_path, labels_path = Path(fixations_path), Path(labels_path)
    stimuli = load_stimuli(stimuli_path)

    groups: dict[tuple[str, str], dict[int, Fixation]] = {}
    for lineno, row in _read_csv(fixations_path, FIXATION_HEADER):
        key = (row["participant_id"], row["stimulus_id"])
        if not key[0] or not key[1]:
            raise DataFormatError(f"{fixations_path}: line {lineno}: empty participant_id or stimulus_id")
        idx = _parse_number(fixations_path, lineno, "index", row["index"], int)
        x = _parse_number(fixations_path, lineno, "x", row["x"])
        y = _parse_number(fixations_path, lineno, "y", row["y"])
        dur = _parse_number(fixations_path, lineno, "duration_ms", row["duration_ms"])
        try:
            fx = Fixation(idx, normalize_aoi(row["aoi"]), x, y, dur)
        except ValueError as exc:
            raise DataFormatError(f"{fixations_path}: line {lineno}: {exc}") from None
        seq = groups.setdefault(key, {})
        if idx in seq:
            raise DataFormatError(f"{fixations_path}: line {lineno}: duplicate fixation index {idx} for {key}")
        seq[idx] = fx
    if not groups:
        raise DataFormatError(f"{fixations_path}: no samples")

    labels: dict[tuple[str, str], PceLabel] = {}
    for lineno, row in _read_csv(labels_path, LABEL_HEADER):
        key = (row["participant_id"], row["stimulus_id"])
        if key in labels:
            raise DataFormatError(f"{labels_path}: line {lineno}: duplicate (participant, stimulus) pair {key}")
        try:
            labels[key] = PceLabel.parse(row["label"])
        except ValueError as exc:
            raise DataFormatError(f"{labels_path}: line {lineno}, column 'label': {exc}") from None

    missing_stim = sorted({k[1] for k in groups} - set(stimuli))
    if missing_stim:
        raise DataFormatError(f"dangling stimulus ids (not in {stimuli_path}): {', '.join(missing_stim)}")
    unlabeled = [k for k in groups if k not in labels]
    if unlabeled:
        raise DataFormatError(f"{labels_path}: no label for {len(unlabeled)} sequence(s), e.g. {unlabeled[0]}")
    orphan = [k for k in labels if k not in groups]
    if orphan:
        raise DataFormatError(f"{labels_path}: label without fixation sequence, e.g. {orphan[0]}")

    samples = []
    for (pid, sid), fxs in groups.items():
        ordered = [fxs[i] for i in sorted(fxs)]
        try:
            seq = FixationSequence(pid, sid, tuple(ordered))
        except ValueError as exc:
            raise DataFormatError(f"{fixations_path}: sequence {(pid, sid)}: {exc}") from None
        samples.append(PceSample(pid, sid, seq, labels[(pid, sid)]))
    return Dataset.build(samples, stimuli)


DATASET_FILES = ("fixations.csv", "labels.csv", "stimuli.json")


def load_dataset_dir(directory: str | Path) -> Dataset:
    d = Path(directory)
    return load_dataset(*(d / name for name in DATASET_FILES))


def save_dataset(ds: Dataset, directory: str | Path) -> tuple[Path, Path, Path]:
    """Write fixations.csv, labels.csv and stimuli.json into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    fpath, lpath, spath = (d / name for name in DATASET_FILES)
    with open(fpath, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIXATION_HEADER)
        for s in ds.samples:
            for fx in s.sequence.fixations:
                w.writerow([s.participant_id, s.stimulus_id, fx.index, fx.aoi, _fmt(fx.x), _fmt(fx.y), _fmt(fx.duration_ms)])
    with open(lpath, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_HEADER)
        for s in ds.samples:
            w.writerow([s.participant_id, s.stimulus_id, s.label.text])
    # stimuli in sorted id order so that output bytes do not depend on dict history
    stim = [ds.stimuli[k].to_json() for k in sorted(ds.stimuli)]
    with open(spath, "w", encoding="utf-8") as fh:
        json.dump(stim, fh, indent=1)
        fh.write("\n")
    return fpath, lpath, spath


def _allocate(n: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder allocation of ``n`` items to ``fractions``."""
    raw = [n * f for f in fractions]
    counts = [int(np.floor(r + 1e-9)) for r in raw]
    rest = n - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:rest]:
        counts[i] += 1
    return counts


def stratified_split(ds: Dataset, fractions: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0):
    """Split into len(fractions) datasets that keep the global class shares.

    Per class, shuffled samples are dealt out by largest-remainder
    allocation, so every split's class count is within one sample of its
    exact proportional share.  Within a split, original sample order is kept.
    """
    fractions = tuple(float(f) for f in fractions)
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be non-negative and sum to 1, got {fractions}")
    n_active = sum(f > 0 for f in fractions)
    labels = ds.labels()
    rng = np.random.default_rng(seed)
    parts: list[list[int]] = [[] for _ in fractions]
    for cls in PceLabel:
        idx = np.flatnonzero(labels == int(cls))
        if idx.size == 0:
            continue
        if idx.size < n_active:
            raise ValueError(
                f"class {cls.text!r} has {idx.size} sample(s), fewer than the {n_active} non-empty splits"
            )
        idx = rng.permutation(idx)
        start = 0
        for part, count in zip(parts, _allocate(idx.size, fractions)):
            part.extend(idx[start:start + count].tolist())
            start += count
    return tuple(ds.subset(sorted(p)) for p in parts)


def save_metrics(report, path: str | Path, config: Mapping | None = None) -> Path:
    """Write an evaluation report as JSON, with an optional config echo."""
    from .evaluation import EvalReport

    if not isinstance(report, EvalReport):
        raise TypeError("save_metrics expects an EvalReport")
    obj = report.to_json()
    if not all(np.isfinite(v) for v in (obj["accuracy"], obj["macro_f1"])):
        raise ValueError("report contains non-finite metrics")
    if config is not None:
        obj["config"] = dict(config)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_metrics(path: str | Path):
    from .evaluation import EvalReport

    with open(path, encoding="utf-8") as fh:
        return EvalReport.from_json(json.load(fh))
