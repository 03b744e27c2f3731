"""Dataset-level class representations maintained by a momentum update.

The bank is a statistics buffer, not a parameter: rows never join gradient
accumulation. Per-image class centers are extracted from detached features
under the ground-truth masks; the bank blends them in with momentum ``mu``,
except that the first sighting of a class overwrites its zero row outright.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError
from .grid import Grid, matmul
from .labels import LabelMask


@dataclass(frozen=True)
class MaskedCenters:
    """Per-class feature means over ground-truth regions of one batch."""

    centers: Grid  # [n, d], detached
    pixel_counts: np.ndarray  # int64 [n]
    present: np.ndarray  # bool [n]


def masked_class_centers(features: Grid, labels: LabelMask, n_classes: int) -> MaskedCenters:
    """Average-pool detached features over each class's labeled region.

    Classes with no labeled pixels get a zero row and ``present=False``.
    """
    d = features.shape[0]
    flat = features.data.reshape(d, -1)
    if flat.shape[1] != labels.values.size:
        raise DimensionError(
            f"masked_class_centers: features cover {flat.shape[1]} pixels, "
            f"labels cover {labels.values.size}"
        )
    onehot = labels.onehot(n_classes)  # [n, hw]
    counts = onehot.sum(axis=1)
    sums = onehot @ flat.T  # [n, d]
    present = counts > 0
    centers = np.zeros_like(sums)
    centers[present] = sums[present] / counts[present, None]
    return MaskedCenters(
        centers=Grid(centers),
        pixel_counts=counts.astype(np.int64),
        present=present,
    )


def combine_centers(parts: list[MaskedCenters]) -> MaskedCenters:
    """Pixel-weighted merge of per-image centers into one batch-level center set."""
    if not parts:
        raise ContractError("combine_centers: empty batch")
    if len(parts) == 1:
        return parts[0]
    counts = np.sum([p.pixel_counts for p in parts], axis=0)
    sums = np.sum(
        [p.centers.data * p.pixel_counts[:, None] for p in parts], axis=0
    )
    present = counts > 0
    centers = np.zeros_like(sums)
    centers[present] = sums[present] / counts[present, None]
    return MaskedCenters(Grid(centers), counts.astype(np.int64), present)


class MemoryBank:
    """n x d momentum-averaged class representations."""

    def __init__(self, n_classes: int, depth: int, momentum: float = 0.1):
        if not 0.0 <= momentum <= 1.0:
            raise ContractError(f"MemoryBank: momentum must lie in [0, 1], got {momentum}")
        self.rows = Grid(np.zeros((n_classes, depth)))
        self.initialized = np.zeros(n_classes, dtype=bool)
        self.momentum = float(momentum)
        self.update_count = 0

    @property
    def n_classes(self) -> int:
        return self.rows.shape[0]

    @property
    def depth(self) -> int:
        return self.rows.shape[1]

    def update(self, centers: MaskedCenters) -> None:
        """Blend present classes into the bank; absent classes stay untouched."""
        if centers.centers.shape != self.rows.shape:
            raise DimensionError(
                f"MemoryBank.update: centers shape {centers.centers.shape} "
                f"does not match bank shape {self.rows.shape}"
            )
        z = centers.centers.data
        rows = self.rows.data
        mu = self.momentum
        for i in np.nonzero(centers.present)[0]:
            if self.initialized[i]:
                rows[i] = (1.0 - mu) * rows[i] + mu * z[i]
            else:
                rows[i] = z[i]
                self.initialized[i] = True
        self.update_count += 1

    def snapshot(self) -> Grid:
        """Detached copy of the rows, safe to embed in a forward graph."""
        return Grid(self.rows.data.copy())


def memory_logits(bank: MemoryBank, features: Grid) -> Grid:
    """Score pixels against the bank rows used as a fixed linear classifier.

    Gradient flows into the features only; the bank rows are constants.
    """
    d, h, w = features.shape
    if bank.depth != d:
        raise DimensionError(
            f"memory_logits: bank depth {bank.depth} does not match feature depth {d}"
        )
    flat = features.reshape(d, h * w)
    return matmul(bank.snapshot(), flat).reshape(bank.n_classes, h, w)
