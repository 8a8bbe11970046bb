from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError, ValidationError


def boxes_from_masks(stack, threshold=0.5):
    """Tight [x0, y0, x1, y1) pixel boxes (exclusive upper corner); empty masks give zeros."""
    stack = np.asarray(stack) >= threshold
    boxes = np.zeros((len(stack), 4))
    for i, m in enumerate(stack):
        rows = np.flatnonzero(m.any(axis=1))
        cols = np.flatnonzero(m.any(axis=0))
        if len(rows):
            boxes[i] = [cols[0], rows[0], cols[-1] + 1, rows[-1] + 1]
    return boxes


@dataclass
class InstanceMaskSet:
    """Stack of M soft or binary instance masks with per-instance metadata."""

    masks: np.ndarray
    scores: np.ndarray = None
    boxes: np.ndarray = None
    labels: np.ndarray = None

    def __post_init__(self):
        self.masks = np.asarray(self.masks, dtype=np.float64)
        if self.masks.ndim != 3:
            raise ShapeMismatchError(f"mask stack must be M x H x W, got {self.masks.shape}")
        if self.masks.size and (self.masks.min() < 0 or self.masks.max() > 1):
            raise ValidationError("mask entries must lie in [0, 1]", field="masks")
        m = len(self.masks)
        h, w = self.masks.shape[1:]
        self.scores = np.ones(m) if self.scores is None else np.asarray(self.scores, dtype=np.float64)
        self.boxes = (boxes_from_masks(self.masks) if self.boxes is None
                      else np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4))
        self.labels = (np.zeros(m, dtype=np.int64) if self.labels is None
                       else np.asarray(self.labels, dtype=np.int64))
        for name in ("scores", "boxes", "labels"):
            if len(getattr(self, name)) != m:
                raise ValidationError(f"{name} has {len(getattr(self, name))} entries for {m} masks",
                                      field=name)
        if m and (self.scores.min() < 0 or self.scores.max() > 1):
            raise ValidationError("scores must lie in [0, 1]", field="scores")
        b = self.boxes
        if m and ((b[:, :2] < 0).any() or (b[:, 2] > w).any() or (b[:, 3] > h).any()
                  or (b[:, 2] < b[:, 0]).any() or (b[:, 3] < b[:, 1]).any()):
            raise ValidationError("boxes must lie inside the image", field="boxes")

    def __len__(self):
        return len(self.masks)

    @property
    def shape(self):
        return self.masks.shape[1:]

    @classmethod
    def empty(cls, height, width):
        return cls(np.zeros((0, height, width)))

    @classmethod
    def from_id_grid(cls, seg, scores=None, labels=None, num_instances=None):
        """Binary stack for ids 1..max(seg); 0 is background."""
        seg = np.asarray(seg)
        n = int(seg.max()) if num_instances is None and seg.size else (num_instances or 0)
        masks = np.stack([seg == i for i in range(1, n + 1)]) if n else np.zeros((0,) + seg.shape)
        return cls(masks.astype(np.float64), scores, None, labels)

    def binarized(self, threshold=0.5):
        return self.masks >= threshold

    def to_id_grid(self, threshold=0.5):
        """Inverse of :meth:`from_id_grid`; later instances win on overlap."""
        seg = np.zeros(self.shape, dtype=np.int64)
        for i, m in enumerate(self.binarized(threshold)):
            seg[m] = i + 1
        return seg
