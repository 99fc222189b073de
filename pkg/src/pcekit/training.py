"""Mini-batch AdamW training with best-validation checkpointing, and grid search."""
from __future__ import annotations

import csv
import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Dataset
from .evaluation import evaluate
from .models import (
    EMB_DIMS,
    FF_DIMS,
    MODEL_KINDS,
    Classifier,
    Ensemble,
    FeatureProvider,
    ModelConfig,
    build_model,
    save_model,
)
from .numerics import AdamW, NonFiniteError, cross_entropy

LR_GRID = (1e-4, 5e-4, 1e-5, 5e-5)
BATCH_GRID = (16, 64, 128)
MAX_EPOCHS = 30


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    kind: str = "pgmt"
    lr: float = 1e-4
    batch_size: int = 128
    max_epochs: int = MAX_EPOCHS
    seed: int = 0
    weight_decay: float = 0.01
    model: ModelConfig = field(default_factory=ModelConfig)
    override: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.lr < 0 or self.weight_decay < 0:
            raise ValueError("batch_size and max_epochs must be positive; lr and weight_decay non-negative")
        if self.override:
            return
        if self.lr not in LR_GRID:
            raise ValueError(f"lr {self.lr} is outside {LR_GRID} (set override to allow)")
        if self.batch_size not in BATCH_GRID:
            raise ValueError(f"batch_size {self.batch_size} is outside {BATCH_GRID} (set override to allow)")
        if self.max_epochs > MAX_EPOCHS:
            raise ValueError(f"max_epochs {self.max_epochs} exceeds {MAX_EPOCHS} (set override to allow)")
        if self.model.ff_dim not in FF_DIMS or self.model.emb_dim not in EMB_DIMS:
            raise ValueError(f"ff_dim/emb_dim must come from {FF_DIMS}/{EMB_DIMS} (set override to allow)")

    def to_json(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_json()
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        obj = dict(obj)
        obj["model"] = ModelConfig.from_json(obj.get("model", {}))
        return cls(**obj)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float
    val_macro_f1: float


@dataclass
class TrainReport:
    kind: str
    config: dict
    epochs: list[EpochRecord]
    best_epoch: int
    best_val_macro_f1: float
    best_val_accuracy: float
    checkpoint: str | None = None
    components: dict = field(default_factory=dict)
    model: Classifier | None = field(default=None, repr=False, compare=False)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "config": self.config,
            "epochs": [asdict(e) for e in self.epochs],
            "best_epoch": self.best_epoch,
            "best_val_macro_f1": self.best_val_macro_f1,
            "best_val_accuracy": self.best_val_accuracy,
            "checkpoint": self.checkpoint,
            "components": {k: v.to_json() for k, v in self.components.items()},
        }


class _Log:
    def __init__(self, path):
        self.fh = open(path, "w", encoding="utf-8") if path else None

    def __call__(self, **event):
        if self.fh:
            self.fh.write(json.dumps(event, sort_keys=True) + "\n")
            self.fh.flush()

    def close(self):
        if self.fh:
            self.fh.close()


def _splits(splits) -> tuple[Dataset, Dataset]:
    train_ds, val_ds = splits[0], splits[1]
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise ValueError("training and validation splits must be non-empty")
    return train_ds, val_ds


def _validate(model: Classifier, val_ds: Dataset):
    rep = evaluate(model.predict(val_ds.samples), val_ds.labels(), "3class")
    return rep.accuracy, rep.macro_f1


def train(kind: str | None, splits: Sequence[Dataset], cfg: TrainConfig,
          provider: FeatureProvider | None = None, out_dir: str | Path | None = None,
          log_path: str | Path | None = None, model: Classifier | None = None) -> TrainReport:
    """Train one model; keeps the parameters of the best validation macro-F1 epoch.

    ``splits`` is (train, validation[, test]); the test split is ignored.
    With ``out_dir`` the best parameters are written to
    ``<out_dir>/<kind>.json|.bin``.
    """
    kind = kind or cfg.kind
    if kind == "ensemble":
        return train_ensemble(splits, replace(cfg, kind="lstm"), replace(cfg, kind="transformer"),
                              provider=provider, out_dir=out_dir, log_path=log_path)
    if kind != cfg.kind:
        cfg = replace(cfg, kind=kind)
    train_ds, val_ds = _splits(splits)
    if model is None:
        model = build_model(kind, cfg.model, train_ds, provider, seed=cfg.seed)
    params = model.parameters()
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 1])
    labels = train_ds.labels()
    samples = train_ds.samples
    log = _Log(log_path)
    log(event="start", kind=kind, config=cfg.to_json(), n_train=len(train_ds), n_val=len(val_ds))

    epochs: list[EpochRecord] = []
    best = (-1.0, 0.0, 0)
    best_state = model.state_dict()
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            perm = rng.permutation(len(samples))
            total = 0.0
            for b, start in enumerate(range(0, len(perm), cfg.batch_size)):
                idx = perm[start:start + cfg.batch_size]
                opt.zero_grad()
                try:
                    loss = cross_entropy(model.forward([samples[i] for i in idx]), labels[idx])
                    if not math.isfinite(loss.item()):
                        raise NonFiniteError("loss")
                    loss.backward()
                    opt.step()
                except NonFiniteError as exc:
                    log(event="diverged", epoch=epoch, batch=b)
                    raise TrainingDiverged(f"{kind}: non-finite values at epoch {epoch}, batch {b}: {exc}") from exc
                total += loss.item() * idx.size
            acc, f1 = _validate(model, val_ds)
            rec = EpochRecord(epoch, total / len(samples), acc, f1)
            epochs.append(rec)
            log(event="epoch", **asdict(rec))
            if f1 > best[0]:
                best = (f1, acc, epoch)
                best_state = model.state_dict()
        model.load_state_dict(best_state)
        ckpt = None
        if out_dir is not None:
            ckpt = str(save_model(model, Path(out_dir) / kind, {"train_config": cfg.to_json(), "best_epoch": best[2]})[0])
        log(event="end", best_epoch=best[2], best_val_macro_f1=best[0])
    finally:
        log.close()
    return TrainReport(kind, cfg.to_json(), epochs, best[2], best[0], best[1], ckpt, model=model)


def train_ensemble(splits: Sequence[Dataset], cfg_lstm: TrainConfig, cfg_transformer: TrainConfig,
                   provider: FeatureProvider | None = None, out_dir: str | Path | None = None,
                   log_path: str | Path | None = None, trained: dict | None = None) -> TrainReport:
    """Train an LSTM and a Content Transformer on the same splits and average them.

    ``trained`` may supply already-trained component reports under the keys
    ``"lstm"`` and ``"transformer"``.
    """
    trained = dict(trained or {})
    sub_log = (lambda name: str(Path(log_path).with_suffix(f".{name}.jsonl"))) if log_path else (lambda name: None)
    if "lstm" not in trained:
        trained["lstm"] = train("lstm", splits, cfg_lstm, provider, log_path=sub_log("lstm"))
    if "transformer" not in trained:
        trained["transformer"] = train("transformer", splits, cfg_transformer, provider, log_path=sub_log("transformer"))
    ens = Ensemble(trained["lstm"].model, trained["transformer"].model)
    _, val_ds = _splits(splits)
    acc, f1 = _validate(ens, val_ds)
    ckpt = None
    if out_dir is not None:
        ckpt = str(save_model(ens, Path(out_dir) / "ensemble")[0])
    config = {"lstm": cfg_lstm.to_json(), "transformer": cfg_transformer.to_json()}
    return TrainReport("ensemble", config, [], 0, f1, acc, ckpt, components=trained, model=ens)


# -- grid search ------------------------------------------------------------

@dataclass(frozen=True)
class Grids:
    lr: tuple = LR_GRID
    ff_dim: tuple = FF_DIMS
    emb_dim: tuple = EMB_DIMS
    batch_size: tuple = BATCH_GRID

    def cells(self):
        return list(itertools.product(self.lr, self.ff_dim, self.emb_dim, self.batch_size))

    def __post_init__(self):
        if not all(len(getattr(self, n)) for n in ("lr", "ff_dim", "emb_dim", "batch_size")):
            raise ValueError("every grid needs at least one value")


@dataclass
class GridCell:
    index: int
    lr: float
    ff_dim: int
    emb_dim: int
    batch_size: int
    seed: int
    status: str = "ok"
    val_macro_f1: float = float("nan")
    val_accuracy: float = float("nan")
    best_epoch: int = 0
    error: str = ""

    @property
    def key(self):
        return (self.lr, self.ff_dim, self.emb_dim, self.batch_size)


GRID_COLUMNS = ("rank", "cell", "lr", "ff_dim", "emb_dim", "batch_size", "seed", "status",
                "val_macro_f1", "val_accuracy", "best_epoch", "error")


def cell_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


def grid_search(kind: str, splits: Sequence[Dataset], grids: Grids | None = None, base: TrainConfig | None = None,
                provider: FeatureProvider | None = None, out_csv: str | Path | None = None,
                workers: int = 1) -> list[GridCell]:
    """Train every grid combination and rank by validation macro-F1.

    Ties (and the order among failed cells) are broken by the config tuple
    (lr, ff_dim, emb_dim, batch_size).  A failing cell is recorded with
    status ``failed`` and the grid continues.
    """
    grids = grids or Grids()
    base = base or TrainConfig(kind=kind)
    cells = [GridCell(i, lr, ff, emb, bs, cell_seed(base.seed, i)) for i, (lr, ff, emb, bs) in enumerate(grids.cells())]

    def run(cell: GridCell) -> GridCell:
        try:
            cfg = replace(base, kind=kind, lr=cell.lr, batch_size=cell.batch_size, seed=cell.seed,
                          model=replace(base.model, ff_dim=cell.ff_dim, emb_dim=cell.emb_dim))
            rep = train(kind, splits, cfg, provider)
            cell.val_macro_f1, cell.val_accuracy, cell.best_epoch = rep.best_val_macro_f1, rep.best_val_accuracy, rep.best_epoch
        except Exception as exc:  # noqa: BLE001 - a failing cell must not stop the grid
            cell.status, cell.error = "failed", f"{type(exc).__name__}: {exc}"
        return cell

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            done = list(pool.map(run, cells))
    else:
        done = [run(c) for c in cells]
    ranked = sorted(done, key=lambda c: (c.status != "ok", -c.val_macro_f1 if c.status == "ok" else 0.0, c.key))
    if out_csv is not None:
        write_grid_csv(ranked, out_csv)
    return ranked


def write_grid_csv(ranked: Sequence[GridCell], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GRID_COLUMNS)
        for rank, c in enumerate(ranked, 1):
            w.writerow([rank, c.index, repr(c.lr), c.ff_dim, c.emb_dim, c.batch_size, c.seed, c.status,
                        f"{c.val_macro_f1:.6f}", f"{c.val_accuracy:.6f}", c.best_epoch, c.error])
    return path


# -- signal ablation ------------------------------------------------------------

def train_ablation(splits: Sequence[Dataset], cfg: TrainConfig, provider: FeatureProvider) -> dict:
    """Train every learned row of the signal ablation and return test predictions per variant key."""
    test_ds = splits[2]
    no_user = replace(cfg.model, use_participant=False)
    with_user = replace(cfg.model, use_participant=True)
    lstm_nu = train("lstm", splits, replace(cfg, kind="lstm", model=no_user))
    lstm_u = train("lstm", splits, replace(cfg, kind="lstm", model=with_user))
    tr_nu = train("transformer", splits, replace(cfg, kind="transformer", model=no_user), provider)
    tr_u = train("transformer", splits, replace(cfg, kind="transformer", model=with_user), provider)
    ens = train_ensemble(splits, replace(cfg, kind="lstm", model=with_user),
                         replace(cfg, kind="transformer", model=with_user), provider,
                         trained={"lstm": lstm_u, "transformer": tr_u})
    samples = test_ds.samples
    return {
        ("LSTM", True, False, False): lstm_nu.model.predict(samples),
        ("LSTM", True, True, False): lstm_u.model.predict(samples),
        ("Transformer", False, False, True): tr_nu.model.predict(samples),
        ("Transformer", False, True, True): tr_u.model.predict(samples),
        ("Ensemble", True, True, True): ens.model.predict(samples),
    }
