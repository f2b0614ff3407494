"""Concatenated observation blocks with block-boundary bookkeeping."""
from __future__ import annotations

import numpy as np


class Dataset:
    """Observation blocks laid end to end.

    ``starts[t]`` marks the first step of a block; transitions are never
    counted across a block boundary. For autoregressive emissions ``ctx[t]``
    is the previous observation and ``valid[t]`` is False at block starts.
    """

    def __init__(self, blocks, autoregressive=False):
        blocks = [np.asarray(b) for b in blocks]
        blocks = [b for b in blocks if len(b)]
        if not blocks:
            raise ValueError("dataset has no observations")
        self.lengths = np.array([len(b) for b in blocks])
        self.y = np.concatenate(blocks, axis=0)
        self.T = self.y.shape[0]
        self.starts = np.zeros(self.T, dtype=bool)
        self.starts[np.concatenate(([0], np.cumsum(self.lengths)[:-1]))] = True
        self.ends = np.zeros(self.T, dtype=bool)
        self.ends[np.cumsum(self.lengths) - 1] = True
        self.autoregressive = autoregressive
        if autoregressive:
            self.ctx = np.zeros_like(self.y, dtype=float)
            self.ctx[1:] = self.y[:-1]
            self.valid = ~self.starts
        else:
            self.ctx = None
            self.valid = np.ones(self.T, dtype=bool)

    @classmethod
    def single(cls, y, autoregressive=False):
        return cls([y], autoregressive)

    def context(self, t):
        if self.ctx is None or not self.valid[t]:
            return None
        return self.ctx[t]

    def blocks(self):
        edges = np.concatenate(([0], np.cumsum(self.lengths)))
        return [self.y[a:b] for a, b in zip(edges[:-1], edges[1:])]

    def split_labels(self, z):
        edges = np.concatenate(([0], np.cumsum(self.lengths)))
        return [np.asarray(z)[a:b] for a, b in zip(edges[:-1], edges[1:])]

    def __len__(self):
        return self.T
