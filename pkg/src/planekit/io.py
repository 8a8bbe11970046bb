"""File formats: depth maps, instance masks, point clouds, normal maps, manifests.

Depth maps are chosen by extension:

* ``.png`` -- 16-bit unsigned millimetres, 0 = invalid
* ``.pfm`` -- 32-bit float metres, non-positive = invalid
* ``.npy`` -- 64-bit float metres, non-positive = invalid (lossless for rendered depth)
"""

import json
import os
import re
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError, ValidationError
from .geometry import DepthMap
from .masks import InstanceMaskSet, boxes_from_masks

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
MAX_DIM = 1 << 16


# -- PFM -----------------------------------------------------------------------

def write_pfm(path, array):
    """Little-endian PFM; (H, W) writes ``Pf``, (H, W, 3) writes ``PF``."""
    a = np.asarray(array, dtype="<f4")
    if a.ndim == 2:
        tag = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError(f"PFM stores H x W or H x W x 3 arrays, got {a.shape}")
    h, w = a.shape[:2]
    with open(path, "wb") as f:
        f.write(tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        f.write(np.ascontiguousarray(a[::-1]).tobytes())


def _header_token(raw, pos):
    """Next whitespace-delimited token and the position after its terminator."""
    while pos < len(raw) and raw[pos:pos + 1].isspace():
        pos += 1
    start = pos
    while pos < len(raw) and not raw[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError("unexpected end of header", offset=min(start, len(raw)))
    return raw[start:pos], start, pos + 1


def read_pfm(path):
    raw = Path(path).read_bytes()
    tag, off, pos = _header_token(raw, 0)
    if tag not in (b"Pf", b"PF"):
        raise FormatError(f"bad PFM magic {tag!r}", offset=off)
    channels = 1 if tag == b"Pf" else 3
    dims = []
    for _ in range(2):
        tok, off, pos = _header_token(raw, pos)
        if not tok.isdigit():
            raise FormatError(f"bad PFM dimension {tok!r}", offset=off)
        n = int(tok)
        if not 0 < n <= MAX_DIM:
            raise FormatError(f"PFM dimension {n} out of range", offset=off)
        dims.append(n)
    tok, off, pos = _header_token(raw, pos)
    try:
        scale = float(tok)
    except ValueError:
        raise FormatError(f"bad PFM scale {tok!r}", offset=off) from None
    if scale == 0:
        raise FormatError("PFM scale must be nonzero", offset=off)
    w, h = dims
    need = w * h * channels * 4
    if len(raw) - pos < need:
        raise FormatError(f"PFM raster needs {need} bytes, {len(raw) - pos} present", offset=pos)
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(raw, dtype=dtype, count=w * h * channels, offset=pos)
    shape = (h, w) if channels == 1 else (h, w, 3)
    return data.reshape(shape)[::-1].astype(np.float32)


# -- PNG -----------------------------------------------------------------------

def _check_png_header(raw):
    if raw[:8] != PNG_SIGNATURE:
        raise FormatError("not a PNG file", offset=0)
    if len(raw) < 33 or raw[12:16] != b"IHDR":
        raise FormatError("missing IHDR chunk", offset=8)
    w, h = struct.unpack(">II", raw[16:24])
    if not (0 < w <= MAX_DIM and 0 < h <= MAX_DIM):
        raise FormatError(f"PNG dimensions {w}x{h} out of range", offset=16)


def _open_png(path):
    raw = Path(path).read_bytes()
    _check_png_header(raw)
    try:
        img = Image.open(path)
        img.load()
    except (OSError, SyntaxError) as exc:
        raise FormatError(f"undecodable PNG: {exc}", offset=33) from None
    return img


def write_depth_png(path, depth):
    mm = np.where(depth.valid, np.round(depth.filled(0.0) * 1000.0), 0.0)
    if mm.max(initial=0) > 65535:
        raise ValueError("depth exceeds 65.535 m, the 16-bit millimetre range")
    Image.fromarray(mm.astype(np.uint16)).save(path)


def read_depth_png(path):
    img = _open_png(path)
    mm = np.asarray(img)
    if mm.ndim != 2:
        raise FormatError(f"depth PNG must be single-channel, got mode {img.mode}", offset=25)
    return DepthMap(mm.astype(np.float64) / 1000.0)


# -- depth dispatch --------------------------------------------------------------

def write_depth(path, depth):
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".png":
        write_depth_png(path, depth)
    elif ext == ".pfm":
        write_pfm(path, depth.filled(0.0))
    elif ext == ".npy":
        np.save(path, depth.filled(0.0))
    else:
        raise ValueError(f"unknown depth format {ext!r}")


def read_depth(path):
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".png":
        return read_depth_png(path)
    if ext == ".pfm":
        values = read_pfm(path)
        if values.ndim != 2:
            raise FormatError("depth PFM must be single-channel (Pf)", offset=0)
        return DepthMap(values.astype(np.float64))
    if ext == ".npy":
        try:
            values = np.load(path, allow_pickle=False)
        except ValueError as exc:
            raise FormatError(f"bad npy file: {exc}", offset=0) from None
        if values.ndim != 2:
            raise FormatError(f"depth array must be 2-D, got {values.shape}", offset=0)
        return DepthMap(values.astype(np.float64))
    raise ValueError(f"unknown depth format {ext!r}")


# -- instance masks ----------------------------------------------------------------

def _palette():
    rng = np.random.default_rng(7)
    colors = rng.integers(40, 256, size=(256, 3))
    colors[0] = 0
    return colors.astype(np.uint8).ravel().tolist()


def sidecar_path(path):
    return Path(path).with_suffix(".json")


def write_instance_masks(path, seg, scores=None, boxes=None, labels=None):
    """Indexed PNG of instance ids plus an optional JSON sidecar."""
    seg = np.asarray(seg)
    if seg.min(initial=0) < 0 or seg.max(initial=0) > 255:
        raise ValueError("instance ids must lie in 0..255 for an indexed PNG")
    img = Image.fromarray(seg.astype(np.uint8), mode="P")
    img.putpalette(_palette())
    img.save(path)
    if scores is not None or boxes is not None or labels is not None:
        n = int(seg.max(initial=0))
        side = {
            "scores": [float(s) for s in (scores if scores is not None else np.ones(n))],
            "boxes": [[float(c) for c in b] for b in
                      (boxes if boxes is not None else _boxes_of(seg, n))],
            "labels": [int(x) for x in (labels if labels is not None else np.zeros(n, int))],
        }
        validate_sidecar(side, n)
        sidecar_path(path).write_text(json.dumps(side) + "\n")


def _boxes_of(seg, n):
    return boxes_from_masks(np.stack([seg == i for i in range(1, n + 1)])) if n else np.zeros((0, 4))


def validate_sidecar(side, n_instances):
    for name in ("scores", "boxes", "labels"):
        if name not in side:
            raise ValidationError(f"sidecar lacks field {name!r}", field=name)
        if len(side[name]) != n_instances:
            raise ValidationError(
                f"sidecar field {name!r} has {len(side[name])} entries, mask has {n_instances} instances",
                field=name)
    for i, b in enumerate(side["boxes"]):
        if len(b) != 4:
            raise ValidationError(f"box {i} must have 4 coordinates", field="boxes")


def read_instance_masks(path):
    """(id grid, sidecar dict or None)."""
    img = _open_png(path)
    seg = np.asarray(img)
    if seg.ndim != 2:
        raise FormatError(f"instance PNG must be single-channel, got mode {img.mode}", offset=25)
    seg = seg.astype(np.int64)
    side = None
    sp = sidecar_path(path)
    if sp.exists():
        try:
            side = json.loads(sp.read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad sidecar JSON: {exc.msg}", offset=exc.pos) from None
        validate_sidecar(side, int(seg.max(initial=0)))
    return seg, side


def load_mask_set(path):
    seg, side = read_instance_masks(path)
    n = int(seg.max(initial=0))
    if side is None:
        return InstanceMaskSet.from_id_grid(seg, num_instances=n)
    ms = InstanceMaskSet.from_id_grid(seg, side["scores"], side["labels"], num_instances=n)
    ms.boxes = np.asarray(side["boxes"], dtype=np.float64).reshape(-1, 4)
    return ms


def write_soft_masks(prefix, stack):
    """One 8-bit PNG per candidate (value * 255); returns the written paths."""
    prefix = Path(prefix)
    paths = []
    for i, m in enumerate(np.asarray(stack, dtype=np.float64)):
        p = prefix.with_name(f"{prefix.name}_{i:03d}.png")
        Image.fromarray(np.round(np.clip(m, 0, 1) * 255).astype(np.uint8), mode="L").save(p)
        paths.append(p)
    return paths


def read_soft_masks(paths):
    return np.stack([np.asarray(_open_png(p), dtype=np.float64) / 255.0 for p in paths])


# -- point clouds and normal maps ------------------------------------------------------

def write_ply(path, cloud, with_groups=True):
    """ASCII PLY with x y z and optionally an integer group per vertex."""
    lines = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}",
             "property float x", "property float y", "property float z"]
    if with_groups:
        lines.append("property int group")
    lines.append("end_header")
    body = []
    for p, g in zip(cloud.points, cloud.group_of):
        row = f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}"
        body.append(f"{row} {int(g)}" if with_groups else row)
    Path(path).write_text("\n".join(lines + body) + "\n")


def read_ply(path):
    """(points, groups or None) from an ASCII PLY written by :func:`write_ply`."""
    text = Path(path).read_text().splitlines()
    if not text or text[0] != "ply":
        raise FormatError("not a PLY file", offset=0)
    end = text.index("end_header")
    header = text[:end]
    match = [re.match(r"element vertex (\d+)", line) for line in header]
    n = next(int(m.group(1)) for m in match if m)
    has_group = "property int group" in header
    rows = np.array([line.split() for line in text[end + 1:end + 1 + n]], dtype=np.float64).reshape(n, -1)
    return rows[:, :3], (rows[:, 3].astype(np.int64) if has_group else None)


def write_normals_pfm(path, normals):
    write_pfm(path, normals)


def normals_to_rgb(normals, valid=None):
    rgb = np.round((np.asarray(normals) + 1.0) / 2.0 * 255.0)
    rgb = np.clip(rgb, 0, 255).astype(np.uint8)
    if valid is not None:
        rgb[~np.asarray(valid, dtype=bool)] = 0
    return rgb


def write_normals_png(path, normals, valid=None):
    Image.fromarray(normals_to_rgb(normals, valid), mode="RGB").save(path)


def write_gradient_pfm(path, gradient):
    write_pfm(path, gradient.values)


# -- manifests ---------------------------------------------------------------------

MANIFEST_FIELDS = ("id", "depth_path", "gt_depth_path", "seg_path", "meta_path", "intrinsics_path")


@dataclass
class ManifestEntry:
    id: str
    depth_path: str
    gt_depth_path: str
    seg_path: str
    meta_path: str
    intrinsics_path: str
    pred_seg_path: str = None  # predicted instance masks, when present

    def resolved(self, root):
        root = Path(root)
        kw = {k: (str((root / v).resolve()) if v and k != "id" else v)
              for k, v in asdict(self).items()}
        return ManifestEntry(**kw)


def read_manifest(path):
    """Line-delimited JSON records; relative paths resolve against the manifest directory."""
    path = Path(path)
    entries, seen = [], set()
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"manifest line {lineno}: {exc.msg}") from None
        for name in MANIFEST_FIELDS:
            if name not in rec:
                raise ValidationError(f"manifest line {lineno} lacks {name!r}", field=name)
        unknown = set(rec) - set(MANIFEST_FIELDS) - {"pred_seg_path"}
        if unknown:
            raise ValidationError(f"manifest line {lineno}: unknown fields {sorted(unknown)}",
                                  field=sorted(unknown)[0])
        if rec["id"] in seen:
            raise ValidationError(f"duplicate manifest id {rec['id']!r}", field="id")
        seen.add(rec["id"])
        entry = ManifestEntry(**rec).resolved(path.parent)
        for name in MANIFEST_FIELDS[1:] + ("pred_seg_path",):
            p = getattr(entry, name)
            if p is not None and not Path(p).exists():
                raise ValidationError(f"{name} for {entry.id!r} not found: {p}", field=name)
        entries.append(entry)
    return entries


def write_manifest(path, entries):
    """JSON lines; paths are stored relative to the manifest's directory."""
    path = Path(path)
    base = path.parent.resolve()
    lines = []
    for e in entries:
        rec = {k: v for k, v in asdict(e).items() if v is not None}
        for k in rec:
            if k != "id" and Path(rec[k]).is_absolute():
                rec[k] = os.path.relpath(rec[k], base)
        lines.append(json.dumps(rec))
    path.write_text("\n".join(lines) + ("\n" if lines else ""))


def read_json(path):
    return json.loads(Path(path).read_text())


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")
