"""Model bundles: serialized encoder chains plus their preprocessing contract.

A bundle is a directory holding `manifest.json` and `weights.bin`:

* manifest.json — id, task, preprocessing fields, ordered layer descriptors
  (kind, stride/padding/window, weight/bias blob slices with shapes), and the
  SHA-256 of the weights blob.
* weights.bin — little-endian float32 values, row-major, concatenated at the
  offsets the manifest declares.  Offsets and lengths are in bytes.

Preprocessing maps a probe image onto a model's input canvas (bilinear
resize, channel policy, per-channel normalization).  The inverse mapping used
for attribution maps is geometric only: resize back and undo the channel
policy, never the normalization — relevances are not pixel values.
"""

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import ChecksumMismatch, ParseError, ShapeMismatch, UnsupportedChannels
from .graph import Graph, LayerSpec

CHANNEL_POLICIES = ("replicate-gray", "average-to-gray")


def _lerp_coords(n_src, n_dst):
    """Half-pixel-center source coordinates for a 1-d bilinear resize."""
    x = (np.arange(n_dst) + 0.5) * (n_src / n_dst) - 0.5
    x0 = np.floor(x).astype(np.int64)
    t = x - x0
    i0 = np.clip(x0, 0, n_src - 1)
    i1 = np.clip(x0 + 1, 0, n_src - 1)
    return i0, i1, t


def bilinear_resize(image, out_w, out_h):
    """Resize (W,H,C) -> (out_w,out_h,C) with half-pixel-center alignment.

    Uses the lerp form a + t*(b-a), so constant inputs are preserved exactly
    and same-size resizes are the identity.
    """
    image = np.asarray(image, dtype=np.float64)
    w, h, _ = image.shape
    ix0, ix1, tx = _lerp_coords(w, out_w)
    iy0, iy1, ty = _lerp_coords(h, out_h)
    a = image[ix0]
    cols = a + tx[:, None, None] * (image[ix1] - a)
    a = cols[:, iy0]
    return a + ty[None, :, None] * (cols[:, iy1] - a)


def _adapt_channels(image, target_c, policy, where):
    c = image.shape[2]
    if c == target_c:
        return image
    if target_c == 1:
        if policy != "average-to-gray":
            raise UnsupportedChannels(
                f"{where}: policy {policy!r} cannot map {c} channels to 1"
            )
        return image.mean(axis=2, keepdims=True)
    if c == 1:
        if policy != "replicate-gray":
            raise UnsupportedChannels(
                f"{where}: policy {policy!r} cannot map 1 channel to {target_c}"
            )
        return np.repeat(image, target_c, axis=2)
    raise UnsupportedChannels(f"{where}: cannot map {c} channels to {target_c}")


@dataclass(frozen=True, eq=False)
class PreprocSpec:
    width: int
    height: int
    channels: int
    mean: tuple[float, ...]
    std: tuple[float, ...]
    channel_policy: str = "replicate-gray"

    def __post_init__(self):
        if min(self.width, self.height, self.channels) < 1:
            raise ValueError("preproc extents must be >= 1")
        object.__setattr__(self, "mean", tuple(float(v) for v in self.mean))
        object.__setattr__(self, "std", tuple(float(v) for v in self.std))
        if len(self.mean) != self.channels or len(self.std) != self.channels:
            raise ValueError("mean/std length must equal the channel count")
        if any(s <= 0 for s in self.std):
            raise ValueError("std entries must be strictly positive")
        if self.channel_policy not in CHANNEL_POLICIES:
            raise ValueError(f"unknown channel policy {self.channel_policy!r}")


def preprocess(spec, image):
    """Probe image (W,H,C in [0,1]) -> model input (W_i,H_i,C_i), normalized."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise UnsupportedChannels(f"probe images must have 1 or 3 channels, got shape {image.shape}")
    out = bilinear_resize(image, spec.width, spec.height)
    out = _adapt_channels(out, spec.channels, spec.channel_policy, "preprocess")
    mean = np.asarray(spec.mean)
    std = np.asarray(spec.std)
    return (out - mean) / std


def unpreprocess_attribution(spec, attr, probe_shape):
    """Map an attribution from the model canvas back to the probe canvas.

    Spatial resize plus channel-policy inversion only; normalization is not
    undone.  Gray attributions replicate across the probe channels and
    replicated channels average back down.
    """
    attr = np.asarray(attr, dtype=np.float64)
    model_shape = (spec.width, spec.height, spec.channels)
    if attr.shape != model_shape:
        raise ShapeMismatch("attribution", model_shape, attr.shape)
    pw, ph, pc = probe_shape
    out = bilinear_resize(attr, pw, ph)
    c = out.shape[2]
    if c == pc:
        return out
    if c == 1:
        return np.repeat(out, pc, axis=2)
    if pc == 1:
        return out.mean(axis=2, keepdims=True)
    raise ShapeMismatch("attribution channels", pc, c)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    model_id: str
    task: str
    preproc: PreprocSpec
    graph: Graph
    checksum: str  # SHA-256 hex digest of weights.bin

    def __post_init__(self):
        expected = (self.preproc.width, self.preproc.height, self.preproc.channels)
        if self.graph.input_shape != expected:
            raise ShapeMismatch(f"model {self.model_id!r} graph input", expected, self.graph.input_shape)

    @property
    def dim(self):
        return self.graph.dim


_PARAM_LAYERS = ("dense", "conv2d")


def _blob_slice(blob, entry, where):
    try:
        shape = tuple(int(s) for s in entry["shape"])
        offset = int(entry["offset"])
        length = int(entry["length"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{where}: malformed blob slice: {exc}") from exc
    expected = 4 * int(np.prod(shape))
    if length != expected:
        raise ParseError(f"{where}: blob length {length} does not match shape {shape}")
    if offset < 0 or offset + length > len(blob):
        raise ParseError(f"{where}: blob slice [{offset}:{offset + length}] is out of range (weights truncated?)")
    flat = np.frombuffer(blob, dtype="<f4", count=length // 4, offset=offset)
    return flat.astype(np.float64).reshape(shape)


def load_model(path):
    """Load and fully validate a model bundle directory."""
    manifest_path = f"{path}/manifest.json"
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"{manifest_path}: {exc}") from exc
    try:
        with open(f"{path}/weights.bin", "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise ParseError(f"{path}/weights.bin: {exc}") from exc

    digest = hashlib.sha256(blob).hexdigest()
    declared = manifest.get("weights_sha256")
    if declared != digest:
        raise ChecksumMismatch(f"{path}: weights.bin digest {digest} != declared {declared}")

    try:
        pp = manifest["preproc"]
        preproc = PreprocSpec(
            width=int(pp["width"]),
            height=int(pp["height"]),
            channels=int(pp["channels"]),
            mean=pp["mean"],
            std=pp["std"],
            channel_policy=pp.get("channel_policy", "replicate-gray"),
        )
        model_id = str(manifest["id"])
        task = str(manifest["task"])
        layer_entries = manifest["layers"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{manifest_path}: {exc}") from exc

    layers = []
    for i, entry in enumerate(layer_entries):
        kind = entry.get("kind")
        where = f"{path} layer {i} ({kind})"
        weight = bias = None
        if kind in _PARAM_LAYERS:
            if "weight" not in entry:
                raise ParseError(f"{where}: missing weight descriptor")
            weight = _blob_slice(blob, entry["weight"], where)
            if "bias" in entry and entry["bias"] is not None:
                bias = _blob_slice(blob, entry["bias"], where)
        try:
            layers.append(
                LayerSpec(
                    kind=kind,
                    weight=weight,
                    bias=bias,
                    stride=int(entry.get("stride", 1)),
                    padding=int(entry.get("padding", 0)),
                    window=int(entry.get("window", 0)),
                )
            )
        except ValueError as exc:
            raise ParseError(f"{where}: {exc}") from exc

    graph = Graph(tuple(layers), (preproc.width, preproc.height, preproc.channels))
    return ModelSpec(model_id=model_id, task=task, preproc=preproc, graph=graph, checksum=digest)


def save_model(path, model_id, task, preproc, layers):
    """Write a bundle directory for a chain of LayerSpec; returns the path."""
    import os

    os.makedirs(path, exist_ok=True)
    blob = bytearray()
    entries = []
    for layer in layers:
        entry = {"kind": layer.kind}
        if layer.kind == "conv2d":
            entry["stride"] = layer.stride
            entry["padding"] = layer.padding
        if layer.kind in ("avgpool", "maxpool"):
            entry["window"] = layer.window
            entry["stride"] = layer.stride
            entry["padding"] = layer.padding
        for name in ("weight", "bias"):
            arr = getattr(layer, name)
            if arr is None:
                continue
            raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            entry[name] = {"shape": list(arr.shape), "offset": len(blob), "length": len(raw)}
            blob.extend(raw)
        entries.append(entry)
    blob = bytes(blob)
    manifest = {
        "id": model_id,
        "task": task,
        "preproc": {
            "width": preproc.width,
            "height": preproc.height,
            "channels": preproc.channels,
            "mean": list(preproc.mean),
            "std": list(preproc.std),
            "channel_policy": preproc.channel_policy,
        },
        "layers": entries,
        "weights_sha256": hashlib.sha256(blob).hexdigest(),
    }
    with open(f"{path}/weights.bin", "wb") as fh:
        fh.write(blob)
    with open(f"{path}/manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
