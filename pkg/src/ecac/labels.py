"""Per-pixel integer category maps with an ignore sentinel."""

from __future__ import annotations

import numpy as np

from .errors import LabelRangeError

IGNORE = 255


class LabelMask:
    """Integer label map of shape [h, w]; value 255 marks ignored pixels."""

    __slots__ = ("values",)

    def __init__(self, values):
        arr = np.ascontiguousarray(values, dtype=np.int64)
        if arr.ndim != 2:
            raise LabelRangeError(f"LabelMask: expected a 2-D map, got shape {arr.shape}")
        if arr.min(initial=0) < 0:
            raise LabelRangeError(f"LabelMask: negative label {int(arr.min())}")
        self.values = arr

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def validate(self, n_classes: int) -> None:
        bad = self.values[(self.values != IGNORE) & (self.values >= n_classes)]
        if bad.size:
            raise LabelRangeError(
                f"label {int(bad.flat[0])} out of range for {n_classes} classes"
            )

    def valid(self) -> np.ndarray:
        """Boolean [h, w] map of non-ignored pixels."""
        return self.values != IGNORE

    def onehot(self, n_classes: int) -> np.ndarray:
        """One-hot class masks as a [n, h*w] float64 array; ignore rows are zero."""
        self.validate(n_classes)
        flat = self.values.reshape(-1)
        out = np.zeros((n_classes, flat.size), dtype=np.float64)
        ok = flat != IGNORE
        out[flat[ok], np.nonzero(ok)[0]] = 1.0
        return out

    def class_counts(self, n_classes: int) -> np.ndarray:
        """Non-ignored pixel count per class, int64 [n]."""
        self.validate(n_classes)
        flat = self.values.reshape(-1)
        flat = flat[flat != IGNORE]
        return np.bincount(flat, minlength=n_classes).astype(np.int64)
