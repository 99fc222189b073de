"""Perception-LSTM, Content Transformer, PGMT and their ensemble.

All classifiers map a batch of samples to 3-class logits; ``predict``
turns them into :class:`Prediction` objects.  Per-sample encodings
(AOI index sequences, token layouts, gaze biases) are cached on the model
because they depend only on the sample and the fixed configuration.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from . import kernels
from .data import Dataset, PceSample, Stimulus
from .encoding import caption_tokens, encode_sequence, sequence_bias, token_aoi_map
from .numerics import (
    LSTM,
    Embedding,
    Encoder,
    Linear,
    Module,
    Tensor,
    concat,
    embedding_lookup,
    load_checkpoint,
    no_grad,
    save_checkpoint,
    tanh,
)
from .numerics.layers import PackPlan, uniform_init
from .prediction import Prediction

MODEL_KINDS = ("lstm", "transformer", "pgmt", "ensemble")
FF_DIMS = (32, 64, 128, 256)
EMB_DIMS = (8, 16, 32)
MASK_VALUE = -1e9


@dataclass(frozen=True)
class ModelConfig:
    n_heads: int = 6
    n_layers: int = 6
    ff_dim: int = 64
    emb_dim: int = 16
    lam: float = 500.0
    model_dim: int = 48
    text_dim: int = 768
    image_dim: int = 2048
    lstm_hidden: int = 64
    use_participant: bool = True
    positional: bool = False
    bias_layers: str = "all"
    counted: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("n_heads", "n_layers", "ff_dim", "emb_dim", "model_dim", "text_dim", "image_dim", "lstm_hidden"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if self.model_dim % self.n_heads:
            raise ValueError(f"model_dim {self.model_dim} is not divisible by n_heads {self.n_heads}")
        if self.bias_layers not in ("all", "first"):
            raise ValueError(f"bias_layers must be 'all' or 'first', got {self.bias_layers!r}")
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError(f"lam must be finite and non-negative, got {self.lam}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


class FeatureProvider(Protocol):
    """Frozen per-stimulus features; no gradient ever reaches them."""

    def caption_features(self, stimulus: Stimulus) -> np.ndarray: ...

    def region_features(self, stimulus: Stimulus) -> np.ndarray: ...


def ensemble_forward(p_lstm: Prediction, p_transformer: Prediction) -> Prediction:
    return Prediction((p_lstm.probs + p_transformer.probs) / 2.0)


def _probs(logits: np.ndarray) -> np.ndarray:
    p = kernels.softmax_rows(logits)
    return p / p.sum(axis=1, keepdims=True)


def sinusoidal_positions(n: int, dim: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


class Classifier(Module):
    kind = ""

    def __init__(self, cfg: ModelConfig, ds: Dataset):
        self.cfg = cfg
        self._aoi_vocab = ds.aoi_vocab
        self._part_vocab = ds.participant_vocab
        self._stimuli = ds.stimuli
        self._cache: dict = {}

    def bind(self, ds: Dataset):
        """Point the model at another dataset sharing the same vocabularies."""
        if ds.aoi_vocab != self._aoi_vocab or ds.participant_vocab != self._part_vocab:
            raise ValueError("dataset vocabularies differ from the ones the model was built with")
        self._stimuli = ds.stimuli
        self._cache.clear()

    def encoded(self, sample: PceSample):
        key = (sample.participant_id, sample.stimulus_id)
        enc = self._cache.get(key)
        if enc is None:
            enc = self._cache[key] = self.encode(sample)
        return enc

    def encode(self, sample: PceSample):
        raise NotImplementedError

    def forward(self, samples: Sequence[PceSample]) -> Tensor:
        """(B, 3) logits."""
        raise NotImplementedError

    def predict_proba(self, samples: Sequence[PceSample], batch_size: int = 256) -> np.ndarray:
        out = []
        with no_grad():
            for i in range(0, len(samples), batch_size):
                out.append(_probs(self.forward(samples[i:i + batch_size]).data))
        return np.concatenate(out) if out else np.zeros((0, 3))

    def predict(self, samples: Sequence[PceSample], batch_size: int = 256) -> list[Prediction]:
        return [Prediction(p) for p in self.predict_proba(samples, batch_size)]

    def meta(self) -> dict:
        return {
            "kind": self.kind,
            "config": self.cfg.to_json(),
            "aoi_vocab": list(self._aoi_vocab),
            "participant_vocab": list(self._part_vocab),
        }


class PerceptionLSTM(Classifier):
    """AOI embeddings (+ participant embedding per step) -> FF -> LSTM -> last hidden -> 3 logits."""

    kind = "lstm"

    def __init__(self, cfg: ModelConfig, ds: Dataset, rng: np.random.Generator):
        super().__init__(cfg, ds)
        self.aoi_emb = Embedding(len(ds.aoi_vocab), cfg.emb_dim, rng)
        in_dim = cfg.emb_dim
        if cfg.use_participant:
            self.part_emb = Embedding(len(ds.participant_vocab), cfg.emb_dim, rng)
            in_dim += cfg.emb_dim
        self.ff = Linear(in_dim, cfg.ff_dim, rng)
        self.lstm = LSTM(cfg.ff_dim, cfg.lstm_hidden, rng)
        self.head = Linear(cfg.lstm_hidden, 3, rng)

    def encode(self, sample):
        return encode_sequence(sample.sequence, self._aoi_vocab), self._part_vocab.index(sample.participant_id)

    def forward_packed(self, tokens: np.ndarray, parts: np.ndarray | None, plan: PackPlan) -> Tensor:
        """``tokens``/``parts``: per packed position AOI and participant indices."""
        x = self.aoi_emb(tokens)
        if self.cfg.use_participant:
            x = concat([x, self.part_emb(parts)], axis=-1)
        h = self.lstm.forward_packed(tanh(self.ff(x)), plan)
        return self.head(h)

    def forward(self, samples):
        encs = [self.encoded(s) for s in samples]
        plan = PackPlan.from_lengths([e[0].size for e in encs])
        tokens = np.array([encs[r][0][t] for r, t in zip(plan.rows, plan.steps)], dtype=np.int64)
        parts = np.array([e[1] for e in encs], dtype=np.int64)[plan.rows]
        return self.forward_packed(tokens, parts, plan)


@dataclass(frozen=True)
class _TokenEncoding:
    stimulus_id: str
    n_words: int
    n_regions: int
    participant: int
    gaze_bias: np.ndarray | None


class ContentTransformer(Classifier):
    """[CLS] + projected caption tokens + projected regions -> encoder -> CLS (+ participant) -> 3 logits."""

    kind = "transformer"

    def __init__(self, cfg: ModelConfig, ds: Dataset, provider: FeatureProvider, rng: np.random.Generator):
        super().__init__(cfg, ds)
        self.provider = provider
        d = cfg.model_dim
        self.cls = uniform_init(rng, (1, d), d)
        self.text_proj = Linear(cfg.text_dim, d, rng)
        self.image_proj = Linear(cfg.image_dim, d, rng)
        self.encoder = Encoder(cfg.n_layers, d, cfg.n_heads, cfg.ff_dim, rng)
        head_in = d
        if cfg.use_participant:
            self.part_emb = Embedding(len(ds.participant_vocab), cfg.emb_dim, rng)
            head_in += cfg.emb_dim
        self.head = Linear(head_in, 3, rng)

    def _features(self, stimulus: Stimulus):
        try:
            txt = np.asarray(self.provider.caption_features(stimulus), dtype=np.float64)
            img = np.asarray(self.provider.region_features(stimulus), dtype=np.float64)
        except KeyError as exc:
            raise ValueError(f"missing features for stimulus {stimulus.stimulus_id}: {exc}") from None
        n_words, n_regions = len(caption_tokens(stimulus.caption)), len(stimulus.regions)
        if txt.shape != (n_words, self.cfg.text_dim) or img.shape != (n_regions, self.cfg.image_dim):
            raise ValueError(
                f"stimulus {stimulus.stimulus_id}: features {txt.shape}/{img.shape} do not match "
                f"{n_words} words x {self.cfg.text_dim} and {n_regions} regions x {self.cfg.image_dim}"
            )
        return txt, img

    def gaze_bias(self, sample: PceSample, stimulus: Stimulus) -> np.ndarray | None:
        return None

    def encode(self, sample):
        st = self._stimuli[sample.stimulus_id]
        return _TokenEncoding(
            st.stimulus_id,
            len(caption_tokens(st.caption)),
            len(st.regions),
            self._part_vocab.index(sample.participant_id),
            self.gaze_bias(sample, st),
        )

    def forward(self, samples):
        encs = [self.encoded(s) for s in samples]
        cfg = self.cfg
        order = list(dict.fromkeys(e.stimulus_id for e in encs))
        feats = {sid: self._features(self._stimuli[sid]) for sid in order}
        # one table: row 0 = CLS, then every stimulus' words, then regions, last row = padding
        txt_all = np.concatenate([feats[sid][0] for sid in order])
        img_all = np.concatenate([feats[sid][1] for sid in order])
        txt_off, img_off = {}, {}
        t = i = 0
        for sid in order:
            txt_off[sid], img_off[sid] = t, i
            t += feats[sid][0].shape[0]
            i += feats[sid][1].shape[0]
        parts = [self.cls]
        if t:
            parts.append(self.text_proj(Tensor(txt_all)))
        if i:
            parts.append(self.image_proj(Tensor(img_all)))
        parts.append(Tensor(np.zeros((1, cfg.model_dim))))
        table = concat(parts, axis=0)
        pad_row = 1 + t + i

        lengths = [1 + e.n_words + e.n_regions for e in encs]
        steps = max(lengths)
        bsz = len(encs)
        index = np.full((bsz, steps), pad_row, dtype=np.int64)
        mask = np.zeros((bsz, steps, steps))
        for b, e in enumerate(encs):
            index[b, 0] = 0
            index[b, 1:1 + e.n_words] = 1 + txt_off[e.stimulus_id] + np.arange(e.n_words)
            index[b, 1 + e.n_words:lengths[b]] = 1 + t + img_off[e.stimulus_id] + np.arange(e.n_regions)
            mask[b, :, lengths[b]:] = MASK_VALUE
        x = embedding_lookup(table, index)
        if cfg.positional:
            x = x + sinusoidal_positions(steps, cfg.model_dim)
        biases = self._layer_biases(encs, mask, steps)
        h = self.encoder(x, biases)
        cls_out = h[:, 0]
        if cfg.use_participant:
            cls_out = concat([cls_out, self.part_emb(np.array([e.participant for e in encs]))], axis=-1)
        return self.head(cls_out)

    def _layer_biases(self, encs, mask, steps):
        return [mask] * self.cfg.n_layers


class PGMT(ContentTransformer):
    """Content Transformer whose attention logits receive the amplified gaze-transition bias."""

    kind = "pgmt"

    def gaze_bias(self, sample, stimulus):
        return sequence_bias(stimulus, sample.sequence, self.cfg.lam, counted=self.cfg.counted,
                             token_map=token_aoi_map(stimulus))

    def _layer_biases(self, encs, mask, steps):
        gaze = np.zeros_like(mask)
        for b, e in enumerate(encs):
            n = e.gaze_bias.shape[0]
            gaze[b, :n, :n] = e.gaze_bias
        biased = mask + gaze
        if self.cfg.bias_layers == "first":
            return [biased] + [mask] * (self.cfg.n_layers - 1)
        return [biased] * self.cfg.n_layers


class Ensemble(Classifier):
    """Averages the class distributions of a Perception-LSTM and a Content Transformer."""

    kind = "ensemble"

    def __init__(self, lstm: PerceptionLSTM, transformer: ContentTransformer):
        self.cfg = transformer.cfg
        self.lstm = lstm
        self.transformer = transformer
        self._cache = {}

    def bind(self, ds):
        self.lstm.bind(ds)
        self.transformer.bind(ds)

    def forward(self, samples):
        raise TypeError("the ensemble has no joint logits; train and query its components")

    def predict_proba(self, samples, batch_size: int = 256) -> np.ndarray:
        return (self.lstm.predict_proba(samples, batch_size) + self.transformer.predict_proba(samples, batch_size)) / 2.0

    def meta(self) -> dict:
        return {"kind": self.kind, "lstm": self.lstm.meta(), "transformer": self.transformer.meta()}


def build_model(kind: str, cfg: ModelConfig, ds: Dataset, provider: FeatureProvider | None = None,
                seed: int = 0, transformer_cfg: ModelConfig | None = None) -> Classifier:
    """Construct a freshly initialized model of ``kind``.

    For ``"ensemble"``, ``cfg`` configures the LSTM component and
    ``transformer_cfg`` (default ``cfg``) the transformer one.
    """
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    rng = np.random.default_rng(seed)
    if kind == "lstm":
        return PerceptionLSTM(cfg, ds, rng)
    if provider is None:
        raise ValueError(f"model kind {kind!r} needs a feature provider")
    if kind == "transformer":
        return ContentTransformer(cfg, ds, provider, rng)
    if kind == "pgmt":
        return PGMT(cfg, ds, provider, rng)
    lstm = PerceptionLSTM(cfg, ds, rng)
    return Ensemble(lstm, ContentTransformer(transformer_cfg or cfg, ds, provider, rng))


def save_model(model: Classifier, stem: str | Path, extra: dict | None = None):
    meta = model.meta()
    if extra:
        meta.update(extra)
    return save_checkpoint(model.state_dict(), stem, meta)


def load_model(stem: str | Path, ds: Dataset, provider: FeatureProvider | None = None) -> Classifier:
    state, manifest = load_checkpoint(stem)
    meta = manifest["meta"]
    kind = meta.get("kind")
    if kind == "ensemble":
        lstm_cfg = ModelConfig.from_json(meta["lstm"]["config"])
        tr_cfg = ModelConfig.from_json(meta["transformer"]["config"])
        _check_vocab(meta["lstm"], ds)
        model = build_model(kind, lstm_cfg, ds, provider, transformer_cfg=tr_cfg)
    elif kind in MODEL_KINDS:
        _check_vocab(meta, ds)
        model = build_model(kind, ModelConfig.from_json(meta["config"]), ds, provider)
    else:
        raise ValueError(f"{stem}: checkpoint has unknown model kind {kind!r}")
    model.load_state_dict(state)
    return model


def _check_vocab(meta: dict, ds: Dataset):
    if meta.get("aoi_vocab") != list(ds.aoi_vocab) or meta.get("participant_vocab") != list(ds.participant_vocab):
        raise ValueError("checkpoint vocabularies do not match the dataset")


def with_lambda(cfg: ModelConfig, lam: float) -> ModelConfig:
    return replace(cfg, lam=float(lam))
