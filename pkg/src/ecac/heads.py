"""Teacher and student context-aware classifier heads.

A head turns per-class context (image-level class centers concatenated with
the memory bank rows) into classifier weights through a small two-layer
projector, scores features with those weights, and applies a learnable
per-class affine calibration to the resulting logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError, RoleError
from .grid import Grid, concat, matmul, softmax
from .labels import LabelMask
from .memory import MemoryBank, masked_class_centers


@dataclass
class ProjectorParams:
    """Two affine layers mapping concatenated context rows [n, 2d] to weights [n, d]."""

    w1: Grid  # [2d, d]
    b1: Grid  # [d]
    w2: Grid  # [d, d]
    b2: Grid  # [d]
    relu: bool = True

    def __post_init__(self):
        d = self.w1.shape[1]
        if self.w1.shape[0] != 2 * d or self.w2.shape != (d, d):
            raise DimensionError(
                f"ProjectorParams: expected [2d, d] and [d, d] layers, "
                f"got {self.w1.shape} and {self.w2.shape}"
            )
        if self.b1.shape != (d,) or self.b2.shape != (d,):
            raise DimensionError("ProjectorParams: bias lengths must equal d")

    @property
    def depth(self) -> int:
        return self.w1.shape[1]


@dataclass
class CalibrationParams:
    """Learnable per-class scale and offset applied to logits."""

    gamma: Grid  # [n]
    delta: Grid  # [n]

    def __post_init__(self):
        if self.gamma.shape != self.delta.shape or self.gamma.ndim != 1:
            raise DimensionError(
                f"CalibrationParams: gamma {self.gamma.shape} and delta "
                f"{self.delta.shape} must be equal-length vectors"
            )


@dataclass
class CoarseClassifier:
    """Plain linear pixel classifier; the student's soft class-assignment source."""

    weights: Grid  # [n, d]
    bias: Grid  # [n]


@dataclass
class EcacHead:
    """One branch of the teacher-student pair."""

    projector: ProjectorParams
    calibration: CalibrationParams | None
    role: str  # "teacher" | "student"
    coarse: CoarseClassifier | None = None

    def __post_init__(self):
        if self.role not in ("teacher", "student"):
            raise ContractError(f"EcacHead: unknown role {self.role!r}")
        if self.role == "teacher" and self.coarse is not None:
            raise ContractError("EcacHead: teacher heads carry no coarse classifier")
        if self.role == "student" and self.coarse is None:
            raise ContractError("EcacHead: student heads need a coarse classifier")


def init_head(
    role: str,
    n_classes: int,
    depth: int,
    rng: np.random.Generator,
    calibration: bool = True,
    relu: bool = True,
    projector: ProjectorParams | None = None,
) -> EcacHead:
    """Fresh head with small random projector weights and identity calibration."""
    if projector is None:
        s1 = 1.0 / np.sqrt(2 * depth)
        s2 = 1.0 / np.sqrt(depth)
        projector = ProjectorParams(
            w1=Grid(rng.normal(0.0, s1, (2 * depth, depth)), requires_grad=True),
            b1=Grid(np.zeros(depth), requires_grad=True),
            w2=Grid(rng.normal(0.0, s2, (depth, depth)), requires_grad=True),
            b2=Grid(np.zeros(depth), requires_grad=True),
            relu=relu,
        )
    calib = None
    if calibration:
        calib = CalibrationParams(
            gamma=Grid(np.ones(n_classes), requires_grad=True),
            delta=Grid(np.zeros(n_classes), requires_grad=True),
        )
    coarse = None
    if role == "student":
        coarse = CoarseClassifier(
            weights=Grid(rng.normal(0.0, 1.0 / np.sqrt(depth), (n_classes, depth)), requires_grad=True),
            bias=Grid(np.zeros(n_classes), requires_grad=True),
        )
    return EcacHead(projector=projector, calibration=calib, role=role, coarse=coarse)


def teacher_class_center(features: Grid, labels: LabelMask, bank: MemoryBank) -> Grid:
    """Ground-truth class centers; absent classes fall back to the bank row.

    Present rows carry gradient into the features; bank fallbacks are constant.
    """
    n = bank.n_classes
    d, h, w = features.shape
    labels.validate(n)
    onehot = labels.onehot(n)  # [n, hw] constant
    counts = onehot.sum(axis=1)
    present = counts > 0
    inv = np.where(present, 1.0 / np.maximum(counts, 1.0), 0.0)[:, None]  # [n, 1]
    flat = features.reshape(d, h * w)
    sums = matmul(Grid(onehot), flat.T)  # [n, d]
    fallback = bank.snapshot().data * (~present)[:, None]
    return sums * Grid(inv) + Grid(fallback)


def student_class_center(features: Grid, coarse_logits: Grid) -> Grid:
    """Soft class centers: pixel-axis attention over the coarse logits.

    Each class row of the attention sums to one across pixels, so every
    center is a convex combination of pixel features.
    """
    d, h, w = features.shape
    n = coarse_logits.shape[0]
    if coarse_logits.shape[1:] != (h, w):
        raise DimensionError(
            f"student_class_center: coarse logits {coarse_logits.shape} do not "
            f"cover features {features.shape}"
        )
    attn = softmax(coarse_logits.reshape(n, h * w), axis=1)
    return matmul(attn, features.reshape(d, h * w).T)


def build_classifier(head: EcacHead, centers: Grid, bank_rows: Grid) -> Grid:
    """Project per-class context pairs into classifier weight rows [n, d].

    Bank rows enter as constants; gradient reaches the centers and the
    projector parameters only.
    """
    if centers.shape != bank_rows.shape:
        raise DimensionError(
            f"build_classifier: centers {centers.shape} and bank rows "
            f"{bank_rows.shape} must agree"
        )
    proj = head.projector
    if centers.shape[1] != proj.depth:
        raise DimensionError(
            f"build_classifier: context width {centers.shape[1]} does not match "
            f"projector depth {proj.depth}"
        )
    x = concat([centers, bank_rows.detach()], axis=1)  # [n, 2d]
    hidden = matmul(x, proj.w1) + proj.b1
    if proj.relu:
        hidden = hidden.relu()
    return matmul(hidden, proj.w2) + proj.b2


def classify(weights: Grid, features: Grid) -> Grid:
    """Per-pixel inner products of classifier rows with features: [n, h, w]."""
    d, h, w = features.shape
    if weights.ndim != 2 or weights.shape[1] != d:
        raise DimensionError(
            f"classify: weights {weights.shape} do not match feature depth {d}"
        )
    return matmul(weights, features.reshape(d, h * w)).reshape(weights.shape[0], h, w)


def calibrate(logits: Grid, params: CalibrationParams) -> Grid:
    """Class-wise affine transform of logits, broadcast over all pixels."""
    n = logits.shape[0]
    if params.gamma.shape[0] != n:
        raise DimensionError(
            f"calibrate: {params.gamma.shape[0]} calibration classes for {n} logit planes"
        )
    gamma = params.gamma.reshape(n, 1, 1)
    delta = params.delta.reshape(n, 1, 1)
    return logits * gamma + delta


def coarse_segment(head: EcacHead, features: Grid) -> Grid:
    """Vanilla linear classifier logits from the student's coarse classifier."""
    if head.role != "student":
        raise RoleError("coarse_segment: only student heads carry a coarse classifier")
    n = head.coarse.weights.shape[0]
    return classify(head.coarse.weights, features) + head.coarse.bias.reshape(n, 1, 1)


def head_param_count(depth: int, n_classes: int, role: str, count_projector: bool = True) -> int:
    """Closed-form parameter count of one head."""
    d, n = depth, n_classes
    total = 0
    if count_projector:
        total += (2 * d * d + d) + (d * d + d)
    total += 2 * n
    if role == "student":
        total += n * d + n
    return total


def ecac_overhead_param_count(depth: int, n_classes: int) -> int:
    """Parameters the shared-projector head pair adds on top of a bare encoder."""
    d, n = depth, n_classes
    return (2 * d * d + d) + (d * d + d) + 2 * (2 * n) + (n * d + n)
