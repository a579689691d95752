"""Attribution maps over a probe set.

Three gradient-based methods are supported, all with respect to the encoder
representation R:

* saliency          |dr/dx| elementwise
* gradxinput        x * dr/dx
* elrp              x * d^g r/dx, the modified-derivative pass where every
                    nonlinearity contributes g(z) = f(z)/(z + eps*sign(z))

Per-unit maps target a single representation unit r_k.  The production path
is a single pass with the averaged seed (1/D)*ones: for gradxinput and elrp
this equals the mean of the per-unit maps exactly (the backward pass is
linear in the seed); for saliency the absolute value is applied after
averaging, which lower-bounds the per-unit mean elementwise.  The per-unit
"exact" mode is retained as a verification oracle and costs one pass per
unit per image.

Computed maps are mapped back to the probe canvas, so every model's maps are
comparable regardless of its input size.
"""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .bundle import preprocess, unpreprocess_attribution
from .errors import ExactModeTooLarge, ParseError, UnitOutOfRange
from .graph import backward, backward_modified, forward, mean_seed, unit_seed
from .probe import write_pnm

SALIENCY = "saliency"
GRAD_X_INPUT = "gradxinput"
ELRP = "elrp"
METHODS = (SALIENCY, GRAD_X_INPUT, ELRP)

DEFAULT_EPSILON = 1e-4
DEFAULT_EXACT_CAP = 512

MODE_SINGLE_PASS = "single_pass"
MODE_EXACT = "exact"


def _check_method(method):
    if method not in METHODS:
        raise ValueError(f"unknown attribution method {method!r}")


def _combine(method, model_input, grad):
    if method == SALIENCY:
        return np.abs(grad)
    return model_input * grad


@dataclass(frozen=True, eq=False)
class AttributionMap:
    """One probe image's relevance map, already on the probe canvas."""

    values: np.ndarray  # (W, H, C) float64
    model_id: str
    image_index: int
    method: str


@dataclass(eq=False)
class AttributionSet:
    """All of one model's maps over a probe set: one point in model space."""

    model_id: str
    method: str
    epsilon: float
    probe_checksum: str
    maps: np.ndarray  # (N, W, H, C) float64, probe order
    passes: int = 0  # forward-and-backward propagations spent (not serialized)

    def __len__(self):
        return self.maps.shape[0]

    @property
    def probe_shape(self):
        return self.maps.shape[1:]


def attribute_per_unit(model, image, method, unit, epsilon=DEFAULT_EPSILON):
    """Relevance map of a single representation unit, on the model canvas."""
    _check_method(method)
    if not 0 <= unit < model.dim:
        raise UnitOutOfRange(f"unit {unit} out of range for D={model.dim}")
    x = preprocess(model.preproc, image)
    _, tape = forward(model.graph, x)
    seed = unit_seed(model.graph, unit)
    if method == ELRP:
        grad = backward_modified(model.graph, tape, seed, epsilon)
    else:
        grad = backward(model.graph, tape, seed)
    return _combine(method, x, grad)


def _single_pass_values(model, image, method, epsilon):
    x = preprocess(model.preproc, image)
    _, tape = forward(model.graph, x)
    seed = mean_seed(model.graph)
    if method == ELRP:
        grad = backward_modified(model.graph, tape, seed, epsilon)
    else:
        grad = backward(model.graph, tape, seed)
    combined = _combine(method, x, grad)
    return unpreprocess_attribution(model.preproc, combined, image.shape)


def _exact_values(model, image, method, epsilon):
    x = preprocess(model.preproc, image)
    _, tape = forward(model.graph, x)
    total = np.zeros(model.graph.input_shape)
    for k in range(model.dim):
        seed = unit_seed(model.graph, k)
        if method == ELRP:
            grad = backward_modified(model.graph, tape, seed, epsilon)
        else:
            grad = backward(model.graph, tape, seed)
        total += _combine(method, x, grad)
    total /= model.dim
    return unpreprocess_attribution(model.preproc, total, image.shape)


def attribute_single_pass(model, image, method, epsilon=DEFAULT_EPSILON, image_index=-1):
    """One image's overall map via a single forward-and-backward pass."""
    _check_method(method)
    values = _single_pass_values(model, image, method, epsilon)
    return AttributionMap(values=values, model_id=model.model_id, image_index=image_index, method=method)


def attribute_image_exact(model, image, method, epsilon=DEFAULT_EPSILON):
    """Per-unit-mean oracle for one image (D passes), on the probe canvas."""
    _check_method(method)
    return _exact_values(model, image, method, epsilon)


def attribute_probe(
    model,
    probe,
    method,
    mode=MODE_SINGLE_PASS,
    epsilon=DEFAULT_EPSILON,
    exact_cap=DEFAULT_EXACT_CAP,
    threads=1,
):
    """Maps for every probe image; counts forward-and-backward passes.

    single_pass spends exactly one pass per image; exact spends D per image
    and is refused above `exact_cap` units.  Per-image work is independent
    and pure, so results land in preassigned slots and are identical for any
    thread count.
    """
    _check_method(method)
    if mode not in (MODE_SINGLE_PASS, MODE_EXACT):
        raise ValueError(f"unknown attribution mode {mode!r}")
    if mode == MODE_EXACT and model.dim > exact_cap:
        raise ExactModeTooLarge(model.dim, exact_cap)

    n = len(probe)
    w, h, c = probe.shape
    maps = np.empty((n, w, h, c))

    def compute(j):
        image = probe.images[j]
        if mode == MODE_SINGLE_PASS:
            maps[j] = _single_pass_values(model, image, method, epsilon)
        else:
            maps[j] = _exact_values(model, image, method, epsilon)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(compute, range(n)))
    else:
        for j in range(n):
            compute(j)

    passes = n if mode == MODE_SINGLE_PASS else n * model.dim
    eps = epsilon if method == ELRP else 0.0
    return AttributionSet(
        model_id=model.model_id,
        method=method,
        epsilon=eps,
        probe_checksum=probe.checksum,
        maps=maps,
        passes=passes,
    )


# --- binary cache ---------------------------------------------------------
#
# Layout: one JSON header line (sorted keys, '\n' terminated) followed by the
# maps as little-endian float32 in probe order.  float32 is the canonical
# precision of stored maps; loading upcasts to float64.


def save_attribution_set(aset, path):
    n, w, h, c = aset.maps.shape
    header = {
        "channels": c,
        "epsilon": aset.epsilon,
        "height": h,
        "method": aset.method,
        "model_id": aset.model_id,
        "n_images": n,
        "probe_checksum": aset.probe_checksum,
        "width": w,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode())
        fh.write(b"\n")
        fh.write(np.ascontiguousarray(aset.maps, dtype="<f4").tobytes())
    return path


def load_attribution_set(path):
    with open(path, "rb") as fh:
        header_line = fh.readline()
        raw = fh.read()
    try:
        header = json.loads(header_line)
        n = int(header["n_images"])
        w = int(header["width"])
        h = int(header["height"])
        c = int(header["channels"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: bad attribution cache header: {exc}") from exc
    count = n * w * h * c
    flat = np.frombuffer(raw, dtype="<f4", count=-1)
    if flat.size != count:
        raise ParseError(f"{path}: expected {count} float32 values, found {flat.size}")
    return AttributionSet(
        model_id=str(header["model_id"]),
        method=str(header["method"]),
        epsilon=float(header["epsilon"]),
        probe_checksum=str(header["probe_checksum"]),
        maps=flat.astype(np.float64).reshape(n, w, h, c),
    )


def export_heatmap(aset, index, path):
    """Write one map as a min-max normalized PGM heatmap."""
    if not 0 <= index < len(aset):
        raise UnitOutOfRange(f"image index {index} out of range for {len(aset)} maps")
    values = aset.maps[index].mean(axis=2, keepdims=True)
    lo, hi = values.min(), values.max()
    if hi > lo:
        values = (values - lo) / (hi - lo)
    else:
        values = np.zeros_like(values)
    comment = (
        f"model={aset.model_id} method={aset.method} image={index} "
        f"probe_checksum={aset.probe_checksum}"
    )
    return write_pnm(path, values, comment=comment)


def cache_key(model_checksum, probe_checksum, method, epsilon, mode):
    """Stable file stem for an attribution cache entry."""
    eps_tag = f"{epsilon:.9g}".replace(".", "p").replace("-", "m").replace("+", "")
    return f"{model_checksum[:12]}_{probe_checksum[:12]}_{method}_{eps_tag}_{mode}"


def ensure_attribution_set(model, probe, method, mode, epsilon, cache_dir, threads=1):
    """Return the cached set for this configuration, computing it if absent.

    Always returns the cache-file representation (float32-rounded maps), so
    cold and warm runs see identical numbers.  The second element reports the
    passes spent by this call (0 on a cache hit).
    """
    eps = epsilon if method == ELRP else 0.0
    key = cache_key(model.checksum, probe.checksum, method, eps, mode)
    path = os.path.join(cache_dir, key + ".attr")
    passes = 0
    if not os.path.exists(path):
        aset = attribute_probe(model, probe, method, mode=mode, epsilon=epsilon, threads=threads)
        passes = aset.passes
        os.makedirs(cache_dir, exist_ok=True)
        save_attribution_set(aset, path)
    loaded = load_attribution_set(path)
    loaded.passes = passes
    return loaded, path
