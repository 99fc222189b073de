from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import PceLabel


@dataclass(frozen=True, eq=False)
class Prediction:
    """A 3-class probability vector; ``label`` breaks ties toward the lowest code."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        if p.shape != (3,):
            raise ValueError(f"prediction needs 3 probabilities, got shape {p.shape}")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"not a probability distribution: {p}")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def label(self) -> PceLabel:
        return PceLabel(int(np.argmax(self.probs)))

    def runner_up(self, exclude: PceLabel) -> PceLabel:
        p = self.probs.copy()
        p[int(exclude)] = -1.0
        return PceLabel(int(np.argmax(p)))

    @classmethod
    def certain(cls, label: PceLabel | int) -> "Prediction":
        p = np.zeros(3)
        p[int(label)] = 1.0
        return cls(p)

    def __eq__(self, other):
        return isinstance(other, Prediction) and np.array_equal(self.probs, other.probs)

    def __repr__(self):
        return f"Prediction({np.array2string(self.probs, precision=4)}, {self.label.text})"
