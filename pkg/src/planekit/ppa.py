"""Reference forward pass of plane-prior attention fusion.

reduce (1x1 conv over mask channels) -> bilinear resize to the feature grid
-> grouped multiply with the features -> concatenate with the features ->
3x3 conv (replicate padding) + bias -> ReLU.
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import FormatError, ShapeMismatchError

WEIGHTS_MAGIC = b"PPAW"
WEIGHTS_VERSION = 1


@dataclass
class FeatureGrid:
    data: np.ndarray  # (C, H, W)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[0] < 1:
            raise ShapeMismatchError(f"features must be C x H x W with C >= 1, got {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ValueError("features must be finite")

    @property
    def channels(self):
        return self.data.shape[0]


@dataclass
class PpaWeights:
    reduce_kernel: np.ndarray  # (C', M)
    fuse_kernel: np.ndarray  # (C_out, 2C, 3, 3)
    fuse_bias: np.ndarray  # (C_out,)

    def __post_init__(self):
        self.reduce_kernel = np.asarray(self.reduce_kernel, dtype=np.float64)
        self.fuse_kernel = np.asarray(self.fuse_kernel, dtype=np.float64)
        self.fuse_bias = np.asarray(self.fuse_bias, dtype=np.float64)
        if self.reduce_kernel.ndim != 2:
            raise ShapeMismatchError("reduce_kernel must be C' x M")
        if self.fuse_kernel.ndim != 4 or self.fuse_kernel.shape[2:] != (3, 3):
            raise ShapeMismatchError("fuse_kernel must be C_out x C_in x 3 x 3")
        if self.fuse_bias.shape != (self.fuse_kernel.shape[0],):
            raise ShapeMismatchError("fuse_bias length must equal C_out")
        for name in ("reduce_kernel", "fuse_kernel", "fuse_bias"):
            if not np.isfinite(getattr(self, name)).all():
                raise ValueError(f"{name} must be finite")

    @classmethod
    def random(cls, n_masks, reduced, channels, out_channels, rng=None, scale=0.5):
        rng = np.random.default_rng(rng)
        return cls(rng.normal(0, scale, (reduced, n_masks)),
                   rng.normal(0, scale, (out_channels, 2 * channels, 3, 3)),
                   rng.normal(0, scale, out_channels))


def resize_matrix(n_in, n_out):
    """(n_out, n_in) bilinear interpolation weights with half-pixel centers."""
    r = np.zeros((n_out, n_in))
    src = np.maximum((np.arange(n_out) + 0.5) * n_in / n_out - 0.5, 0.0)
    i0 = np.minimum(np.floor(src).astype(int), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    np.add.at(r, (np.arange(n_out), i0), 1.0 - frac)
    np.add.at(r, (np.arange(n_out), i1), frac)
    return r


def resize_bilinear(stack, height, width):
    stack = np.asarray(stack, dtype=np.float64)
    ry = resize_matrix(stack.shape[1], height)
    rx = resize_matrix(stack.shape[2], width)
    return np.einsum("Hh,chw,Ww->cHW", ry, stack, rx)


def ppa_forward(masks, feats, weights):
    """Fused C_out x H x W features from M x h x w mask candidates and C x H x W features."""
    stack = masks.masks if hasattr(masks, "masks") else np.asarray(masks, dtype=np.float64)
    data = feats.data if isinstance(feats, FeatureGrid) else FeatureGrid(feats).data
    if stack.ndim != 3 or len(stack) < 1:
        raise ShapeMismatchError(f"need at least one mask candidate, got shape {stack.shape}")
    m = len(stack)
    c, h, w = data.shape
    reduced, m_w = weights.reduce_kernel.shape
    if m_w != m:
        raise ShapeMismatchError(f"reduce_kernel expects {m_w} masks, got {m}")
    if c % reduced:
        raise ShapeMismatchError(f"{reduced} attention channels do not divide {c} feature channels")
    if weights.fuse_kernel.shape[1] != 2 * c:
        raise ShapeMismatchError(
            f"fuse_kernel takes {weights.fuse_kernel.shape[1]} channels, fusion yields {2 * c}"
        )

    attention = np.einsum("rm,mhw->rhw", weights.reduce_kernel, stack)
    attention = resize_bilinear(attention, h, w)
    product = data * np.repeat(attention, c // reduced, axis=0)
    fused = kernels.conv3x3_replicate(np.concatenate([product, data]), weights.fuse_kernel)
    return FeatureGrid(np.maximum(fused + weights.fuse_bias[:, None, None], 0.0))


def save_weights(path, weights):
    """Little-endian container: magic, version, M, C', C_out, C_in, then float32 arrays."""
    reduced, m = weights.reduce_kernel.shape
    c_out, c_in = weights.fuse_kernel.shape[:2]
    with open(path, "wb") as f:
        f.write(WEIGHTS_MAGIC)
        f.write(struct.pack("<5I", WEIGHTS_VERSION, m, reduced, c_out, c_in))
        for arr in (weights.reduce_kernel, weights.fuse_kernel, weights.fuse_bias):
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_weights(path):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != WEIGHTS_MAGIC:
        raise FormatError("not a PPA weights file", offset=0)
    if len(raw) < 24:
        raise FormatError("truncated header", offset=len(raw))
    version, m, reduced, c_out, c_in = struct.unpack_from("<5I", raw, 4)
    if version != WEIGHTS_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    sizes = [reduced * m, c_out * c_in * 9, c_out]
    expected = 24 + 4 * sum(sizes)
    if len(raw) != expected:
        raise FormatError(f"payload is {len(raw)} bytes, header implies {expected}",
                          offset=min(len(raw), expected))
    flat = np.frombuffer(raw, dtype="<f4", offset=24).astype(np.float64)
    a, b = sizes[0], sizes[0] + sizes[1]
    return PpaWeights(flat[:a].reshape(reduced, m), flat[a:b].reshape(c_out, c_in, 3, 3), flat[b:])
