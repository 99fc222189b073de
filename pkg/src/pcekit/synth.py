"""Seeded synthetic PCE corpora with participant-specific planted signal.

Each sample's label comes from a multinomial logit over the stimulus'
mention fraction (share of central regions named in the caption) plus the
participant's label bias; Gumbel noise weighted by ``1 - signal_strength``
dilutes that signal, and at strength 0 labels are pure draws from
``class_probs``.  The fixation walk is then generated *conditioned on the
label*, again scaled by signal strength, so gaze carries the participant's
verdict.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .data import (
    CaptionSpan,
    Dataset,
    Fixation,
    FixationSequence,
    OFF,
    PceLabel,
    PceSample,
    Region,
    Stimulus,
    aoi_label,
    aoi_modality,
)
from .encoding import caption_tokens

IMAGE_W, IMAGE_H = 1024, 768

_NOUNS = (
    "wall rock tree sky cloud man woman boy girl dog cat horse cow sheep bird car bus truck bike "
    "train boat plane road street sign pole light window door roof house building tower bridge "
    "fence grass field hill mountain river lake water wave beach sand snow ice table chair bench "
    "bed lamp shelf book cup plate bowl bottle glass fork knife spoon pizza cake bread fruit apple "
    "banana orange flower plant pot vase clock phone laptop screen keyboard bag hat shirt jacket "
    "shoe umbrella kite ball racket frisbee board skier surfer player crowd shadow leaf branch "
    "trunk stone path floor ceiling curtain mirror sink towel"
).split()
_LINK = "near beside with behind under above and".split()
_LETTERS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"

# label-conditioned walk modulation, indexed by PceLabel code (yes, no, unclear)
_OFF_BOOST = np.array([0.0, 0.6, 2.5])
_CROSS_BOOST = np.array([1.2, 0.0, 0.4])
_MATCH_SHIFT = np.array([0.65, -0.3, 0.1])
_BASE_MATCH = 0.3


@dataclass(frozen=True)
class GeneratorConfig:
    n_participants: int = 109
    n_stimuli: int = 153
    n_samples: int = 5400
    mean_fixations: float = 27.42
    class_probs: tuple = (0.674, 0.201, 0.125)
    signal_strength: float = 1.0
    feature_dim_text: int = 768
    feature_dim_image: int = 2048
    seed: int = 0
    n_concepts: int = 420
    content_weight: float = 4.0
    label_bias_scale: float = 1.0
    concept_weight: float = 1.0
    tendency_weight: float = 0.6

    def __post_init__(self):
        object.__setattr__(self, "class_probs", tuple(float(p) for p in self.class_probs))
        self.validate()

    def validate(self):
        if len(self.class_probs) != 3 or min(self.class_probs) <= 0 or abs(sum(self.class_probs) - 1) > 1e-9:
            raise ValueError(f"class_probs must be 3 positive values summing to 1, got {self.class_probs}")
        if self.mean_fixations < 2:
            raise ValueError("mean_fixations must be >= 2")
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ValueError("signal_strength must lie in [0, 1]")
        if min(self.n_participants, self.n_stimuli, self.n_samples) < 1:
            raise ValueError("n_participants, n_stimuli and n_samples must be positive")
        if self.n_samples > self.n_participants * self.n_stimuli:
            raise ValueError(
                f"n_samples={self.n_samples} exceeds the {self.n_participants * self.n_stimuli} "
                "unique (participant, stimulus) pairs"
            )
        if self.feature_dim_text < 1 or self.feature_dim_image < 1:
            raise ValueError("feature dimensions must be positive")
        if self.n_concepts < 8:
            raise ValueError("n_concepts must be at least 8")

    def to_json(self) -> dict:
        d = asdict(self)
        d["class_probs"] = list(self.class_probs)
        return d


@dataclass(frozen=True)
class ParticipantProfile:
    participant_id: str
    label_bias: np.ndarray
    crossmodal_rate: float
    off_rate: float

    def __post_init__(self):
        if not (0 <= self.crossmodal_rate <= 1 and 0 <= self.off_rate <= 1):
            raise ValueError("participant rates must lie in [0, 1]")


@dataclass
class SyntheticCorpus:
    """Generated dataset plus the latent quantities used to build it."""

    dataset: Dataset
    config: GeneratorConfig
    profiles: dict[str, ParticipantProfile] = field(default_factory=dict)
    label_offsets: np.ndarray = field(default_factory=lambda: np.zeros(3))


def concept_names(n: int) -> list[str]:
    k = len(_NOUNS)
    return [_NOUNS[i % k] + ("" if i < k else str(i // k)) for i in range(n)]


def _make_stimulus(rng: np.random.Generator, sid: str, names: list[str]) -> Stimulus:
    n_regions = int(rng.integers(3, 7))
    n_central = int(rng.integers(1, min(3, n_regions) + 1))
    picked = rng.choice(len(names), size=n_regions + 2, replace=False)
    concepts = [names[i] for i in picked[:n_regions]]
    distractor_pool = [names[i] for i in picked[n_regions:]]
    regions = []
    for j, c in enumerate(concepts):
        w = float(rng.integers(80, 360))
        h = float(rng.integers(80, 300))
        x = float(rng.integers(0, IMAGE_W - int(w)))
        y = float(rng.integers(0, IMAGE_H - int(h)))
        regions.append(Region(f"vis_{c}", x, y, w, h, central=j < n_central))

    n_mentioned = int(rng.integers(0, n_central + 1))
    mentioned = list(rng.permutation(n_central)[:n_mentioned])
    mentioned += [j for j in range(n_central, n_regions) if rng.random() < 0.5]
    words = [concepts[j] for j in mentioned]
    words += distractor_pool[: int(rng.integers(0, 2))]
    words = [words[i] for i in rng.permutation(len(words))]

    if not words:
        return Stimulus(sid, "an ordinary everyday scene", IMAGE_W, IMAGE_H, tuple(regions), ())
    text, spans = "", []
    for i, wd in enumerate(words):
        if i:
            text += f" {_LINK[int(rng.integers(len(_LINK)))]} "
        text += "a " if i == 0 else "the "
        spans.append(CaptionSpan(f"txt_{wd}", len(text), len(text) + len(wd)))
        text += wd
    return Stimulus(sid, text, IMAGE_W, IMAGE_H, tuple(regions), tuple(spans))


def _unique_ids(rng, n, make):
    out, seen = [], set()
    while len(out) < n:
        s = make(rng)
        if s not in seen:
            seen.add(s)
            out.append(s)
    return out


def _participant_code(rng) -> str:
    return "".join(_LETTERS[i] for i in rng.integers(0, 26, size=4))


def _stimulus_code(rng) -> str:
    return str(int(rng.integers(1_000_000, 10_000_000)))


def content_logits(m: np.ndarray, weight: float) -> np.ndarray:
    """Per-class content score of a mention fraction (yes rises, no falls, unclear peaks mid-way)."""
    m = np.asarray(m, dtype=np.float64)
    amb = 1.0 - np.abs(2.0 * m - 1.0)
    return weight * np.stack([m - 0.5, 0.5 - m, amb - 0.5], axis=-1)


def _calibrate(base: np.ndarray, target: np.ndarray, iters: int = 400) -> np.ndarray:
    """Per-class logit offsets that make argmax frequencies match ``target``."""
    off = np.zeros(3)
    n = base.shape[0]
    for _ in range(iters):
        freq = np.bincount(np.argmax(base + off, axis=1), minlength=3) / n
        if np.max(np.abs(freq - target)) < 0.002:
            break
        off += 0.5 * (np.log(target) - np.log(np.maximum(freq, 0.5 / n)))
        off -= off.mean()
    return off


def local_aoi_table(stimulus: Stimulus):
    """(symbols, n_vis, n_txt, partner) for the walk kernel; off is last."""
    vis = [r.aoi for r in stimulus.regions]
    txt = [s.aoi for s in stimulus.caption_spans]
    txt = list(dict.fromkeys(txt))
    symbols = vis + txt + [OFF]
    pos = {a: i for i, a in enumerate(symbols)}
    partner = np.full(len(symbols), -1, dtype=np.int64)
    for a in vis + txt:
        other = ("txt_" if aoi_modality(a) == "vis" else "vis_") + aoi_label(a)
        if other in pos:
            partner[pos[a]] = pos[other]
    return symbols, len(vis), len(txt), partner


def _fixation_xy(rng, stimulus: Stimulus, aoi: str):
    if aoi == OFF:
        return float(rng.integers(0, IMAGE_W)), float(rng.integers(0, IMAGE_H))
    for r in stimulus.regions:
        if r.aoi == aoi:
            return float(int(r.x + rng.random() * r.w)), float(int(r.y + rng.random() * r.h))
    # caption is rendered as one line above the image, ~9 px per character
    for s in stimulus.caption_spans:
        if s.aoi == aoi:
            cx = 40 + 9 * (s.start + rng.random() * (s.end - s.start))
            return float(int(cx)), float(int(20 + rng.random() * 30))
    raise KeyError(aoi)


def walk_parameters(profile: ParticipantProfile, label: int, strength: float):
    p_off = min(profile.off_rate * (1.0 + strength * _OFF_BOOST[label]), 0.9)
    p_cross = min(profile.crossmodal_rate * (1.0 + strength * _CROSS_BOOST[label]), 1.0 - p_off)
    p_match = float(np.clip(_BASE_MATCH + strength * _MATCH_SHIFT[label], 0.0, 1.0))
    return p_off, p_cross, p_match


def synthesize(cfg: GeneratorConfig) -> SyntheticCorpus:
    cfg.validate()
    s = cfg.signal_strength
    names = concept_names(cfg.n_concepts)

    rng_stim = np.random.default_rng([cfg.seed, 1])
    stim_ids = _unique_ids(rng_stim, cfg.n_stimuli, _stimulus_code)
    stimuli = [_make_stimulus(rng_stim, sid, names) for sid in stim_ids]

    rng_part = np.random.default_rng([cfg.seed, 2])
    part_ids = _unique_ids(rng_part, cfg.n_participants, _participant_code)
    profiles = {
        pid: ParticipantProfile(
            pid,
            rng_part.normal(0.0, cfg.label_bias_scale, size=3),
            float(rng_part.uniform(0.15, 0.45)),
            float(rng_part.uniform(0.03, 0.12)),
        )
        for pid in part_ids
    }

    rng_pairs = np.random.default_rng([cfg.seed, 3])
    flat = np.sort(rng_pairs.choice(cfg.n_participants * cfg.n_stimuli, size=cfg.n_samples, replace=False))
    p_idx, s_idx = flat // cfg.n_stimuli, flat % cfg.n_stimuli

    streams = [np.random.default_rng([cfg.seed, 4, i]) for i in range(cfg.n_samples)]
    mention = np.array([stimuli[j].mention_fraction() for j in s_idx])
    bias = np.stack([profiles[part_ids[i]].label_bias for i in p_idx])
    gumbel = np.stack([-np.log(-np.log(r.random(3))) for r in streams])
    base = np.log(np.asarray(cfg.class_probs)) + s * (content_logits(mention, cfg.content_weight) + bias) + (1.0 - s) * gumbel
    offsets = _calibrate(base, np.asarray(cfg.class_probs))
    labels = np.argmax(base + offsets, axis=1)

    tables = {}
    p_geom = 1.0 / (cfg.mean_fixations - 1.0)
    samples = []
    for i, (pi, sj) in enumerate(zip(p_idx, s_idx)):
        rng = streams[i]
        stim = stimuli[sj]
        prof = profiles[part_ids[pi]]
        if stim.stimulus_id not in tables:
            tables[stim.stimulus_id] = local_aoi_table(stim)
        symbols, n_vis, n_txt, partner = tables[stim.stimulus_id]
        length = 1 + int(rng.geometric(p_geom))
        u = rng.random((length, 4))
        walk = kernels.gaze_walk(u, n_vis, n_txt, partner, *walk_parameters(prof, int(labels[i]), s))
        durations = np.exp(rng.normal(np.log(150.0), 0.45, size=length))
        fixations = []
        for k, a in enumerate(walk):
            aoi = symbols[a]
            x, y = _fixation_xy(rng, stim, aoi)
            fixations.append(Fixation(k + 1, aoi, x, y, max(round(float(durations[k]), 2), 1.0)))
        seq = FixationSequence(prof.participant_id, stim.stimulus_id, tuple(fixations))
        samples.append(PceSample(prof.participant_id, stim.stimulus_id, seq, PceLabel(int(labels[i]))))

    ds = Dataset.build(samples, {st.stimulus_id: st for st in stimuli})
    return SyntheticCorpus(ds, cfg, profiles, offsets)


def generate(cfg: GeneratorConfig) -> Dataset:
    return synthesize(cfg).dataset


# -- features -------------------------------------------------------------

def _seeded_unit(key: str, dim: int) -> np.ndarray:
    h = hashlib.sha256(key.encode("utf-8")).digest()
    v = np.random.default_rng(int.from_bytes(h[:8], "little")).normal(size=dim)
    return v / np.linalg.norm(v)


def _pad(v: np.ndarray, dim: int) -> np.ndarray:
    out = np.zeros(dim)
    n = min(dim, v.size)
    out[:n] = v[:n]
    return out


class FeatureStore:
    """Frozen per-token and per-region vectors keyed by ``<stimulus_id>/<slot>``.

    Caption token ``i`` lives under ``<sid>/w<i>``; region AOI ``a`` under
    ``<sid>/<a>``.  Vectors are stored as float32.
    """

    def __init__(self, vectors: dict[str, np.ndarray], meta: dict | None = None):
        self.vectors = {k: np.asarray(v, dtype=np.float32) for k, v in vectors.items()}
        self.meta = dict(meta or {})

    def __contains__(self, key):
        return key in self.vectors

    def __len__(self):
        return len(self.vectors)

    def get(self, key: str) -> np.ndarray:
        try:
            return self.vectors[key]
        except KeyError:
            raise KeyError(f"no feature vector for {key!r}") from None

    def save(self, directory: str | Path, stem: str = "features") -> tuple[Path, Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        index, offset, chunks = {}, 0, []
        for key in sorted(self.vectors):
            v = self.vectors[key]
            index[key] = {"offset": offset, "dim": int(v.size)}
            offset += int(v.size)
            chunks.append(v.astype("<f4"))
        bin_path, json_path = d / f"{stem}.bin", d / f"{stem}.json"
        bin_path.write_bytes(np.concatenate(chunks).tobytes() if chunks else b"")
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump({"dtype": "<f4", "count": offset, "index": index, "meta": self.meta}, fh, indent=1, sort_keys=True)
            fh.write("\n")
        return bin_path, json_path

    @classmethod
    def load(cls, directory: str | Path, stem: str = "features") -> "FeatureStore":
        d = Path(directory)
        with open(d / f"{stem}.json", encoding="utf-8") as fh:
            head = json.load(fh)
        blob = np.frombuffer((d / f"{stem}.bin").read_bytes(), dtype="<f4")
        if blob.size != head["count"]:
            raise ValueError(f"{d / stem}.bin holds {blob.size} floats, index expects {head['count']}")
        vectors = {k: blob[e["offset"]:e["offset"] + e["dim"]].copy() for k, e in head["index"].items()}
        return cls(vectors, head.get("meta"))


def caption_key(stimulus_id: str, i: int) -> str:
    return f"{stimulus_id}/w{i}"


def region_key(stimulus_id: str, aoi: str) -> str:
    return f"{stimulus_id}/{aoi}"


def generate_features(cfg: GeneratorConfig, ds: Dataset, seed: int | None = None) -> FeatureStore:
    """Stand-in for frozen text/image extractors.

    Each vector is a unit-norm mix of a random direction keyed by the
    symbol (word or region AOI), a concept direction shared by matching
    region and caption-span vectors, and a direction tracking the stimulus'
    mention fraction.  The last two are scaled by ``signal_strength``.
    Concept directions occupy the leading ``min(text_dim, image_dim)``
    coordinates so cross-modal pairs can be compared there.
    """
    seed = cfg.seed if seed is None else seed
    s = cfg.signal_strength
    dt, di = cfg.feature_dim_text, cfg.feature_dim_image
    shared = min(dt, di)
    if dt < 1 or di < 1:
        raise ValueError("feature dimensions must be positive")

    def concept(label):
        return _seeded_unit(f"{seed}|concept|{label}", shared)

    def tendency(m, dim):
        yes = _seeded_unit(f"{seed}|tendency|0|{dim}", dim)
        unc = _seeded_unit(f"{seed}|tendency|2|{dim}", dim)
        return (2 * m - 1) * yes + (1 - abs(2 * m - 1)) * unc

    vectors = {}
    for sid in sorted(ds.stimuli):
        st = ds.stimuli[sid]
        m = st.mention_fraction()
        t_txt = s * cfg.tendency_weight * tendency(m, dt)
        t_img = s * cfg.tendency_weight * tendency(m, di)
        for r in st.regions:
            v = _seeded_unit(f"{seed}|region|{r.aoi}", di) + s * cfg.concept_weight * _pad(concept(aoi_label(r.aoi)), di) + t_img
            vectors[region_key(sid, r.aoi)] = v / np.linalg.norm(v)
        for i, (word, start, end) in enumerate(caption_tokens(st.caption)):
            v = _seeded_unit(f"{seed}|word|{word.lower()}", dt) + t_txt
            for span in st.caption_spans:
                if start < span.end and span.start < end:
                    v = v + s * cfg.concept_weight * _pad(concept(aoi_label(span.aoi)), dt)
                    break
            vectors[caption_key(sid, i)] = v / np.linalg.norm(v)
    return FeatureStore(vectors, {"seed": seed, "text_dim": dt, "image_dim": di, "signal_strength": s})


def shared_cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity over the leading coordinates both vectors share."""
    n = min(a.size, b.size)
    a, b = np.asarray(a[:n], dtype=np.float64), np.asarray(b[:n], dtype=np.float64)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


class StoreFeatureProvider:
    """Feature provider backed by a :class:`FeatureStore`; results are cached per stimulus."""

    def __init__(self, store: FeatureStore, text_dim: int | None = None, image_dim: int | None = None):
        self.store = store
        self.text_dim = text_dim or int(store.meta.get("text_dim", 768))
        self.image_dim = image_dim or int(store.meta.get("image_dim", 2048))
        self._cache: dict = {}

    def caption_features(self, stimulus: Stimulus) -> np.ndarray:
        key = ("txt", stimulus.stimulus_id)
        if key not in self._cache:
            n = len(caption_tokens(stimulus.caption))
            rows = [self.store.get(caption_key(stimulus.stimulus_id, i)) for i in range(n)]
            arr = np.array(rows, dtype=np.float64).reshape(n, self.text_dim)
            arr.setflags(write=False)
            self._cache[key] = arr
        return self._cache[key]

    def region_features(self, stimulus: Stimulus) -> np.ndarray:
        key = ("img", stimulus.stimulus_id)
        if key not in self._cache:
            rows = [self.store.get(region_key(stimulus.stimulus_id, r.aoi)) for r in stimulus.regions]
            arr = np.array(rows, dtype=np.float64).reshape(len(rows), self.image_dim)
            arr.setflags(write=False)
            self._cache[key] = arr
        return self._cache[key]
