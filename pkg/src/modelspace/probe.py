"""Probe datasets: the shared unlabeled image set all models are fed.

Probe images live on a single common canvas (W,H,C) with values in [0,1].
Binary PPM (P6) and PGM (P5) files are accepted; the probe manifest is a
JSON object declaring the canvas plus an ordered list of relative paths.
"""

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .bundle import bilinear_resize
from .errors import BadSampleSize, DecodeError, EmptyProbe

_MAGIC_CHANNELS = {b"P5": 1, b"P6": 3}


def read_pnm(path):
    """Decode a binary PGM/PPM file to a (W,H,C) float64 array in [0,1]."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise DecodeError(f"{path}: {exc}") from exc

    pos = 0

    def token():
        nonlocal pos
        while pos < len(data):
            ch = data[pos : pos + 1]
            if ch == b"#":  # comment to end of line
                while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DecodeError(f"{path}: truncated header")
        return data[start:pos]

    magic = token()
    if magic not in _MAGIC_CHANNELS:
        raise DecodeError(f"{path}: unsupported magic {magic!r} (only binary P5/P6)")
    channels = _MAGIC_CHANNELS[magic]
    try:
        width = int(token())
        height = int(token())
        maxval = int(token())
    except (ValueError, DecodeError) as exc:
        raise DecodeError(f"{path}: bad header: {exc}") from exc
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise DecodeError(f"{path}: invalid dimensions/maxval {width}x{height}/{maxval}")
    pos += 1  # single whitespace byte after maxval
    dtype = np.uint8 if maxval < 256 else ">u2"
    count = width * height * channels
    raster = np.frombuffer(data, dtype=dtype, offset=pos)
    if raster.size < count:
        raise DecodeError(f"{path}: raster truncated ({raster.size} of {count} samples)")
    raster = raster[:count].astype(np.float64) / maxval
    # raster order is rows of pixels: (H, W, C) -> transpose to (W, H, C)
    return np.ascontiguousarray(raster.reshape(height, width, channels).transpose(1, 0, 2))


def write_pnm(path, image, comment=None):
    """Write a (W,H,C) array in [0,1] as 8-bit binary PGM (C=1) or PPM (C=3)."""
    image = np.asarray(image, dtype=np.float64)
    w, h, c = image.shape
    if c not in (1, 3):
        raise ValueError(f"cannot encode {c}-channel image as PNM")
    magic = b"P5" if c == 1 else b"P6"
    raster = np.rint(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(magic + b"\n")
        if comment:
            fh.write(b"# " + comment.encode() + b"\n")
        fh.write(b"%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(raster.transpose(1, 0, 2)).tobytes())
    return path


def _probe_checksum(images):
    n, w, h, c = images.shape
    digest = hashlib.sha256()
    digest.update(f"probe:{n}:{w}:{h}:{c}:".encode())
    digest.update(np.ascontiguousarray(images).tobytes())
    return digest.hexdigest()


@dataclass(frozen=True, eq=False)
class ProbeSet:
    name: str
    images: np.ndarray  # (N, W, H, C) float64 in [0,1]
    sources: tuple[str, ...]
    checksum: str = field(init=False)

    def __post_init__(self):
        images = np.ascontiguousarray(self.images, dtype=np.float64)
        if images.ndim != 4 or images.shape[0] < 1:
            raise EmptyProbe(f"probe {self.name!r} holds no images")
        if len(self.sources) != images.shape[0]:
            raise ValueError("one source entry per image required")
        if images.min() < 0.0 or images.max() > 1.0:
            raise ValueError("probe values must lie in [0,1]")
        images.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "checksum", _probe_checksum(images))

    def __len__(self):
        return self.images.shape[0]

    @property
    def shape(self):
        """Common image canvas (W, H, C)."""
        return self.images.shape[1:]


def load_probe(directory, manifest="manifest.json"):
    """Load a probe set from a manifest of image files.

    The manifest declares the target canvas; every image is decoded, resized
    to it (bilinear), channel-adapted (gray replicates, color averages) and
    kept in manifest order.
    """
    manifest_path = os.path.join(directory, manifest)
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            spec = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DecodeError(f"{manifest_path}: {exc}") from exc
    try:
        width = int(spec["width"])
        height = int(spec["height"])
        channels = int(spec["channels"])
        files = list(spec["images"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DecodeError(f"{manifest_path}: {exc}") from exc
    if not files:
        raise EmptyProbe(f"{manifest_path}: empty image list")
    if channels not in (1, 3):
        raise DecodeError(f"{manifest_path}: probe channels must be 1 or 3")

    images = np.empty((len(files), width, height, channels))
    for j, rel in enumerate(files):
        img = read_pnm(os.path.join(directory, rel))
        img = bilinear_resize(img, width, height)
        if img.shape[2] != channels:
            if img.shape[2] == 1:
                img = np.repeat(img, channels, axis=2)
            else:
                img = img.mean(axis=2, keepdims=True)
        images[j] = img
    name = spec.get("name", os.path.basename(os.path.normpath(directory)))
    return ProbeSet(name=name, images=images, sources=tuple(files))


def sample_probe(probe, n, seed):
    """Deterministic subset of n images without replacement, original order."""
    total = len(probe)
    if not 1 <= n <= total:
        raise BadSampleSize(f"sample size {n} not in [1, {total}]")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(total, size=n, replace=False))
    return ProbeSet(
        name=f"{probe.name}[n={n},seed={seed}]",
        images=probe.images[idx],
        sources=tuple(probe.sources[i] for i in idx),
    )
