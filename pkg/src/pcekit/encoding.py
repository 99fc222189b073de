"""Fixation sequences to model inputs.

Index sequences feed the LSTM; transition matrices, once amplified, become
an additive attention bias over transformer token positions.  Token layout
for a stimulus is ``[CLS] + caption word tokens + region tokens``.
"""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .data import FixationSequence, Stimulus, Vocab

_WORD_RE = re.compile(r"\S+")


def _aois(seq) -> list[str]:
    return seq.aois if isinstance(seq, FixationSequence) else list(seq)


def encode_sequence(seq, vocab: Vocab) -> np.ndarray:
    aois = _aois(seq)
    if not aois:
        raise ValueError("cannot encode an empty fixation sequence")
    try:
        return np.array([vocab.index(a) for a in aois], dtype=np.int64)
    except KeyError as exc:
        raise KeyError(f"unknown AOI in sequence: {exc.args[0]}") from None


def decode_sequence(indices, vocab: Vocab) -> list[str]:
    return [vocab.symbol(int(i)) for i in indices]


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    order: tuple[str, ...]
    m: np.ndarray

    def index(self, aoi: str) -> int:
        return self.order.index(aoi)

    def __eq__(self, other):
        return isinstance(other, TransitionMatrix) and self.order == other.order and np.array_equal(self.m, other.m)


def transition_matrix(seq, counted: bool = False, order: Sequence[str] | None = None) -> TransitionMatrix:
    """Successor matrix over the AOIs of one stimulus exposure.

    ``m[a, b] = 1`` iff AOI ``b`` directly follows ``a`` somewhere in the
    sequence (repeats included on the diagonal).  Rows/columns follow first
    appearance unless ``order`` is given.  ``counted`` keeps transition
    counts instead of 0/1.
    """
    aois = _aois(seq)
    if order is None:
        order = list(dict.fromkeys(aois))
    order = tuple(order)
    pos = {a: i for i, a in enumerate(order)}
    try:
        local = np.array([pos[a] for a in aois], dtype=np.int64)
    except KeyError as exc:
        raise KeyError(f"AOI {exc.args[0]!r} missing from the matrix order") from None
    return TransitionMatrix(order, kernels.transition_fill(local, len(order), counted))


def amplify(t: TransitionMatrix, lam: float) -> np.ndarray:
    """lam * (M + M^T)."""
    if lam < 0 or not np.isfinite(lam):
        raise ValueError(f"lambda must be a finite non-negative number, got {lam}")
    m = t.m.astype(np.float64)
    return lam * (m + m.T)


def caption_tokens(caption: str) -> list[tuple[str, int, int]]:
    """Whitespace word tokens with their character ranges."""
    return [(m.group(), m.start(), m.end()) for m in _WORD_RE.finditer(caption)]


TokenAoiMap = tuple  # tuple[Optional[str], ...], one entry per token position


def token_aoi_map(stimulus: Stimulus) -> TokenAoiMap:
    """AOI carried by each transformer position (None for CLS / unannotated words)."""
    words = []
    for _, start, end in caption_tokens(stimulus.caption):
        owner = None
        for span in stimulus.caption_spans:
            if start < span.end and span.start < end:
                owner = span.aoi
                break
        words.append(owner)
    return (None, *words, *(r.aoi for r in stimulus.regions))


def restrict_map(token_map: TokenAoiMap, order: Sequence[str]) -> TokenAoiMap:
    """Unmap tokens whose AOI has no row in ``order`` (never fixated)."""
    known = set(order)
    return tuple(a if a in known else None for a in token_map)


def token_bias(amplified: np.ndarray, order: Sequence[str], token_map: TokenAoiMap) -> np.ndarray:
    """Project an AOI x AOI matrix onto token positions.

    ``bias[i, j] = amplified[aoi(i), aoi(j)]`` when both positions carry an
    AOI, else 0.
    """
    pos = {a: i for i, a in enumerate(order)}
    amplified = np.asarray(amplified, dtype=np.float64)
    if amplified.shape != (len(order), len(order)):
        raise ValueError(f"amplified matrix shape {amplified.shape} does not match order of {len(order)} AOIs")
    tok = np.full(len(token_map), -1, dtype=np.int64)
    for i, a in enumerate(token_map):
        if a is None:
            continue
        if a not in pos:
            raise ValueError(f"token {i} maps to AOI {a!r}, which has no row in the matrix")
        tok[i] = pos[a]
    return kernels.token_bias_gather(amplified, tok)


def sequence_bias(stimulus: Stimulus, seq, lam: float, counted: bool = False,
                  token_map: Optional[TokenAoiMap] = None) -> np.ndarray:
    """Token-level attention bias for one (stimulus, fixation sequence) pair."""
    t = transition_matrix(seq, counted=counted)
    tmap = restrict_map(token_map or token_aoi_map(stimulus), t.order)
    return token_bias(amplify(t, lam), t.order, tmap)


def dump_matrix_csv(matrix: np.ndarray, order: Sequence[str], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["", *order])
        for name, row in zip(order, np.asarray(matrix)):
            w.writerow([name, *(f"{v:g}" for v in row)])
    return path


def format_matrix(matrix: np.ndarray, order: Sequence[str]) -> str:
    cells = [[f"{v:g}" for v in row] for row in np.asarray(matrix)]
    width = max([len(a) for a in order] + [len(c) for row in cells for c in row])
    head = " " * width + " " + " ".join(a.rjust(width) for a in order)
    body = [name.rjust(width) + " " + " ".join(c.rjust(width) for c in row) for name, row in zip(order, cells)]
    return "\n".join([head, *body])
