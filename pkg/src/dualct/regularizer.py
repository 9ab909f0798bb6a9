"""Composite group-sparsity regularizer.

A small convolutional feature extractor g maps a 2-D field to an
(site x channel) feature array; the regularizer is the l2,1 norm of the
features, Huber-smoothed with half-width eps so that it is C^1. The
gradient is obtained by hand-rolled backpropagation through g (transpose
convolutions + activation derivative at cached pre-activations).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError, FormatError, InputError

WEIGHT_MAGIC = b"DCTW"
WEIGHT_VERSION = 1


def smoothed_relu(t, delta):
    """C^1 quadratic-spline ReLU: 0 below -delta, identity above delta."""
    if not delta > 0:
        raise ConfigError("activation delta must be positive")
    t = np.asarray(t, dtype=float)
    return np.where(t <= -delta, 0.0,
                    np.where(t >= delta, t, (t + delta) ** 2 / (4.0 * delta)))


def smoothed_relu_deriv(t, delta):
    """Derivative of :func:`smoothed_relu`; lies in [0, 1]."""
    if not delta > 0:
        raise ConfigError("activation delta must be positive")
    t = np.asarray(t, dtype=float)
    return np.where(t <= -delta, 0.0,
                    np.where(t >= delta, 1.0, (t + delta) / (2.0 * delta)))


@dataclass(frozen=True)
class ConvStack:
    """Weights of the feature extractor: pure convolutions, no bias.

    Each layer is an array of shape (out_channels, in_channels, kh, kw)
    with odd kernel dims; layers are applied with stride 1 and zero "same"
    padding, separated by the smoothed ReLU (the last layer stays linear).
    """

    layers: tuple[np.ndarray, ...]
    activation_delta: float = 0.01

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("ConvStack needs at least one layer")
        if not self.activation_delta > 0:
            raise ConfigError("activation_delta must be positive")
        in_c = 1
        for li, w in enumerate(self.layers):
            if w.ndim != 4:
                raise ConfigError(f"layer {li}: weights must be 4-D (out, in, kh, kw)")
            if w.shape[1] != in_c:
                raise ConfigError(f"layer {li}: expected {in_c} input channels, got {w.shape[1]}")
            if w.shape[2] % 2 == 0 or w.shape[3] % 2 == 0:
                raise ConfigError(f"layer {li}: kernel dims must be odd")
            if not np.all(np.isfinite(w)):
                raise ConfigError(f"layer {li}: non-finite weights")
            in_c = w.shape[0]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def out_channels(self) -> int:
        return self.layers[-1].shape[0]

    def is_zero(self) -> bool:
        return all(not np.any(w) for w in self.layers)


@dataclass
class FeatureField:
    """Extractor output: (sites x channels) array over the input grid."""

    shape: tuple[int, int]   # spatial shape of the underlying field
    values: np.ndarray       # (n_sites, n_channels)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != self.shape[0] * self.shape[1]:
            raise InputError("feature values must be (n_sites, n_channels)")

    @property
    def n_sites(self) -> int:
        return self.values.shape[0]

    def site_norms(self) -> np.ndarray:
        return np.sqrt(np.sum(self.values**2, axis=1))


def _conv_layer(h, w):
    """Apply one layer: h (in_c, H, W) -> (out_c, H, W), zero same padding."""
    out = np.empty((w.shape[0],) + h.shape[1:])
    for o in range(w.shape[0]):
        acc = ndimage.correlate(h[0], w[o, 0], mode="constant")
        for i in range(1, w.shape[1]):
            acc += ndimage.correlate(h[i], w[o, i], mode="constant")
        out[o] = acc
    return out


def _conv_layer_transpose(g, w):
    """Transpose of :func:`_conv_layer`: g (out_c, H, W) -> (in_c, H, W)."""
    out = np.empty((w.shape[1],) + g.shape[1:])
    for i in range(w.shape[1]):
        acc = ndimage.convolve(g[0], w[0, i], mode="constant")
        for o in range(1, w.shape[0]):
            acc += ndimage.convolve(g[o], w[o, i], mode="constant")
        out[i] = acc
    return out


def feature_forward(y: np.ndarray, stack: ConvStack, with_cache: bool = False):
    """Run the extractor on a 2-D field.

    Returns the FeatureField, or (FeatureField, pre_activations) when
    ``with_cache`` is set; the cache feeds the transpose pass.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 2:
        raise InputError("feature_forward expects a 2-D field")
    h = y[None]
    pre = []
    for li, w in enumerate(stack.layers):
        z = _conv_layer(h, w)
        if li < stack.n_layers - 1:
            pre.append(z)
            h = smoothed_relu(z, stack.activation_delta)
        else:
            h = z
    field = FeatureField(y.shape, h.reshape(h.shape[0], -1).T)
    if with_cache:
        return field, pre
    return field


def feature_vjp(y: np.ndarray, stack: ConvStack, cotangent: np.ndarray,
                cache=None) -> np.ndarray:
    """Jacobian-transpose of the extractor at ``y`` applied to ``cotangent``.

    ``cotangent`` is (n_sites, out_channels); the result has the shape of
    ``y``. Pass the pre-activation cache from feature_forward to skip the
    recompute.
    """
    y = np.asarray(y, dtype=float)
    cot = np.asarray(cotangent, dtype=float)
    n_sites = y.shape[0] * y.shape[1]
    if cot.shape != (n_sites, stack.out_channels):
        raise InputError("cotangent shape does not match extractor output")
    if cache is None:
        _, cache = feature_forward(y, stack, with_cache=True)
    g = cot.T.reshape(stack.out_channels, *y.shape)
    for li in range(stack.n_layers - 1, -1, -1):
        g = _conv_layer_transpose(g, stack.layers[li])
        if li > 0:
            g = g * smoothed_relu_deriv(cache[li - 1], stack.activation_delta)
    return g[0]


def feature_jvp(y: np.ndarray, stack: ConvStack, tangent: np.ndarray) -> np.ndarray:
    """Directional derivative of the extractor at ``y`` along ``tangent``.

    Returns an (n_sites, out_channels) array; used by the power iteration
    in :func:`lipschitz_estimate`.
    """
    y = np.asarray(y, dtype=float)
    v = np.asarray(tangent, dtype=float)
    if v.shape != y.shape:
        raise InputError("tangent shape must match the input field")
    _, pre = feature_forward(y, stack, with_cache=True)
    hv = v[None]
    for li, w in enumerate(stack.layers):
        hv = _conv_layer(hv, w)
        if li < stack.n_layers - 1:
            hv = hv * smoothed_relu_deriv(pre[li], stack.activation_delta)
    return hv.reshape(hv.shape[0], -1).T


def l21_norm(field: FeatureField) -> float:
    """Sum over sites of the Euclidean norm across channels."""
    return float(np.sum(field.site_norms()))


def _huber_cotangent(values: np.ndarray, eps: float) -> np.ndarray:
    norms = np.sqrt(np.sum(values**2, axis=1))
    inner = norms <= eps
    scale = np.where(inner, 1.0 / eps, 1.0 / np.where(norms > 0, norms, 1.0))
    return values * scale[:, None]


def smoothed_value(y: np.ndarray, stack: ConvStack, eps: float) -> float:
    """Huber-smoothed l2,1 regularizer value.

    Sites with feature norm <= eps contribute quadratically, the rest
    contribute their norm minus eps/2.
    """
    if not eps > 0:
        raise ConfigError("smoothing eps must be positive")
    norms = feature_forward(y, stack).site_norms()
    inner = norms <= eps
    return float(np.sum(np.where(inner, norms**2 / (2.0 * eps), norms - 0.5 * eps)))


def smoothed_grad(y: np.ndarray, stack: ConvStack, eps: float) -> np.ndarray:
    """Gradient of :func:`smoothed_value` with respect to ``y``."""
    if not eps > 0:
        raise ConfigError("smoothing eps must be positive")
    field, cache = feature_forward(y, stack, with_cache=True)
    cot = _huber_cotangent(field.values, eps)
    return feature_vjp(y, stack, cot, cache=cache)


def lipschitz_estimate(stack: ConvStack, eps: float, probe_shape: tuple[int, int],
                       seed: int = 0, power_iters: int = 30,
                       curvature: float | None = None) -> float:
    """Estimate of the Lipschitz constant of the smoothed-regularizer gradient.

    sqrt(m)*L_g + M^2/eps, where M is a power-iteration estimate of the
    spectral norm of the extractor's Jacobian at a random probe and L_g is
    a curvature constant for the extractor (0 for a single linear layer;
    otherwise max|a''| = 1/(2*delta) times the product of layer Frobenius
    norms, overridable via ``curvature``).
    """
    if not eps > 0:
        raise ConfigError("smoothing eps must be positive")
    rng = np.random.default_rng(seed)
    y = rng.standard_normal(probe_shape)
    v = rng.standard_normal(probe_shape)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(power_iters):
        jv = feature_jvp(y, stack, v)
        v = feature_vjp(y, stack, jv)
        nrm = np.linalg.norm(v)
        if nrm == 0.0:
            lam = 0.0
            break
        lam = nrm
        v /= nrm
    m_spec_sq = lam  # largest eigenvalue of J^T J
    if curvature is None:
        if stack.n_layers == 1:
            curvature = 0.0
        else:
            prod = 1.0
            for w in stack.layers:
                prod *= float(np.linalg.norm(w))
            curvature = prod / (2.0 * stack.activation_delta)
    m_sites = probe_shape[0] * probe_shape[1]
    return float(np.sqrt(m_sites) * curvature + m_spec_sq / eps)


# ---------------------------------------------------------------------------
# Weight provisioning and I/O
# ---------------------------------------------------------------------------

def make_tv_weights(domain: str = "image", scale: float = 1.0,
                    activation_delta: float = 0.01) -> ConvStack:
    """Single linear layer with forward-difference kernels.

    Two 3x3 kernels (horizontal and vertical difference, zero beyond the
    far edge) make the regularizer ``scale`` times the isotropic discrete
    total variation. ``domain`` is accepted for interface symmetry; both
    domains use the same kernels.
    """
    if domain not in ("image", "sinogram"):
        raise ConfigError(f"unknown domain {domain!r}")
    kh = np.zeros((3, 3))
    kh[1, 1] = -scale
    kh[1, 2] = scale
    kv = np.zeros((3, 3))
    kv[1, 1] = -scale
    kv[2, 1] = scale
    w = np.stack([kh, kv])[:, None]
    return ConvStack((w,), activation_delta)


def make_zero_weights(n_channels: int = 1, kernel: tuple[int, int] = (3, 3)) -> ConvStack:
    """All-zero single layer; the regularizer vanishes identically."""
    return ConvStack((np.zeros((n_channels, 1) + kernel),))


def make_random_weights(seed: int, n_layers: int = 3, n_channels: int = 16,
                        kernel: tuple[int, int] = (3, 3), scale: float = 0.1,
                        activation_delta: float = 0.01) -> ConvStack:
    """Deterministic random stack; identical for identical seeds."""
    rng = np.random.default_rng(seed)
    layers = []
    in_c = 1
    for _ in range(n_layers):
        fan_in = in_c * kernel[0] * kernel[1]
        layers.append(rng.standard_normal((n_channels, in_c) + kernel) * scale / np.sqrt(fan_in))
        in_c = n_channels
    return ConvStack(tuple(layers), activation_delta)


def save_weights(stack: ConvStack, path) -> None:
    """Write the versioned binary weight file plus a JSON metadata sidecar."""
    path = str(path)
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(struct.pack("<II", WEIGHT_VERSION, stack.n_layers))
        fh.write(struct.pack("<d", stack.activation_delta))
        for w in stack.layers:
            fh.write(struct.pack("<IIII", *w.shape))
        for w in stack.layers:
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
    meta = {
        "version": WEIGHT_VERSION,
        "n_layers": stack.n_layers,
        "activation_delta": stack.activation_delta,
        "layer_shapes": [list(w.shape) for w in stack.layers],
    }
    with open(path + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")


def load_weights(path) -> ConvStack:
    """Read a weight file written by :func:`save_weights`."""
    with open(str(path), "rb") as fh:
        data = fh.read()
    if data[:4] != WEIGHT_MAGIC:
        raise FormatError("bad magic in weight file", offset=0)
    off = 4
    try:
        version, n_layers = struct.unpack_from("<II", data, off)
        off += 8
        if version != WEIGHT_VERSION:
            raise FormatError(f"unsupported weight file version {version}", offset=4)
        (delta,) = struct.unpack_from("<d", data, off)
        off += 8
        shapes = []
        for _ in range(n_layers):
            shapes.append(struct.unpack_from("<IIII", data, off))
            off += 16
        layers = []
        for shp in shapes:
            count = int(np.prod(shp))
            end = off + 8 * count
            if end > len(data):
                raise FormatError("truncated weight payload", offset=off)
            layers.append(np.frombuffer(data[off:end], dtype="<f8").reshape(shp).copy())
            off = end
    except struct.error as exc:
        raise FormatError(f"truncated weight header: {exc}", offset=off) from exc
    return ConvStack(tuple(layers), delta)
