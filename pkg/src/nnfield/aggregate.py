"""Relevance-guided aggregation of reference features.

Standard aggregation gathers a 3x3 neighbourhood of ``V`` around each
matched position, dynamic aggregation adds per-tap fractional offsets
sampled bilinearly, and multi-scale fusion blends per-scale results with a
softmax over their relevance maps.
"""
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_feature_map, check_position_map

# Tap j sits at kernel cell (j // 3, j % 3), i.e. offset (dy, dx) below.
TAP_OFFSETS = np.array([(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)], dtype=np.int64)
N_TAPS = len(TAP_OFFSETS)
OFFSET_SOURCES = ("zero", "file", "callback")


def delta_kernel():
    """Centre-one-hot 3x3 kernel: aggregation returns ``V`` at the match."""
    w = np.zeros((3, 3))
    w[1, 1] = 1.0
    return w


def _kernel(weights, channels):
    """Normalise kernel weights to ``("depthwise", (C, 9))`` or ``("full", (O, C, 9))``."""
    if weights is None:
        return "depthwise", np.full((channels, N_TAPS), 1.0 / N_TAPS)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape in ((3, 3), (N_TAPS,)):
        return "depthwise", np.tile(w.reshape(1, N_TAPS), (channels, 1))
    if w.ndim == 3 and w.shape == (channels, 3, 3):
        return "depthwise", w.reshape(channels, N_TAPS)
    if w.ndim == 4 and w.shape[2:] == (3, 3):
        o, i = w.shape[:2]
        if i == 1 and o in (1, channels):
            return "depthwise", np.tile(w.reshape(o, N_TAPS), (channels // o, 1))
        if i == channels:
            return "full", w.reshape(o, i, N_TAPS)
    raise ValueError(f"kernel weights of shape {w.shape} do not fit {channels} channels")


def _accumulate(kind, w, sample_tap):
    out = None
    for j in range(N_TAPS):
        s = sample_tap(j)
        if kind == "depthwise":
            term = w[:, j][:, None, None] * s
        else:
            term = np.einsum("oc,chw->ohw", w[:, :, j], s)
        if out is None:
            out = np.zeros(term.shape)
        out += term
    return out


def bilinear_sample(v, ys, xs):
    """Sample ``v`` (C, H, W) at fractional ``(ys, xs)`` with clamp-to-edge."""
    _, h, w = v.shape
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    fy = ys - y0
    fx = xs - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    ya, yb = np.clip(y0, 0, h - 1), np.clip(y0 + 1, 0, h - 1)
    xa, xb = np.clip(x0, 0, w - 1), np.clip(x0 + 1, 0, w - 1)
    top = v[:, ya, xa] * (1.0 - fx) + v[:, ya, xb] * fx
    bottom = v[:, yb, xa] * (1.0 - fx) + v[:, yb, xb] * fx
    return top * (1.0 - fy) + bottom * fy


def _centres(v, h):
    v = check_feature_map(v, "V")
    h = check_position_map(h, v.shape[1:])
    return v, h[..., 0], h[..., 1]


def standard_aggregate(v, h, weights=None):
    """``Y'(p) = sum_j w_j V(H_p + p_j)``, taps clamped to ``V``'s edges.

    Parameters
    ----------
    v : array, shape (C, H_V, W_V)
    h : int array, shape (H, W, 2)
        Matched positions in ``v``.
    weights : array, optional
        ``(3, 3)`` shared taps, ``(C, 3, 3)`` per-channel taps, or a full
        ``(O, C, 3, 3)`` kernel. Defaults to a uniform 1/9 box.
    """
    v, cy, cx = _centres(v, h)
    kind, w = _kernel(weights, v.shape[0])
    _, hv, wv = v.shape

    def tap(j):
        dy, dx = TAP_OFFSETS[j]
        return v[:, np.clip(cy + dy, 0, hv - 1), np.clip(cx + dx, 0, wv - 1)]

    return _accumulate(kind, w, tap)


def _conv_clamped(x, weights):
    """Correlate ``x`` (I, H, W) with ``weights`` (O, I, kh, kw), edge padding, same size."""
    o, i, kh, kw = weights.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("convolution kernels must have odd size")
    if i != x.shape[0]:
        raise ValueError(f"kernel expects {i} input channels, got {x.shape[0]}")
    ry, rx = kh // 2, kw // 2
    _, hh, ww = x.shape
    pad = np.pad(x, ((0, 0), (ry, ry), (rx, rx)), mode="edge")
    out = np.zeros((o, hh, ww))
    for ky in range(kh):
        for kx in range(kw):
            out += np.einsum("oi,ihw->ohw", weights[:, :, ky, kx], pad[:, ky:ky + hh, kx:kx + ww])
    return out


def predict_offsets(f, y_prime, offset_source="zero", weights=None, fn=None):
    """Per-tap offsets ``(9, 2, H, W)`` from ``[F ; Y']``.

    ``zero`` gives an all-zero field; ``file`` applies an ``(18, C_F + C_Y,
    kh, kw)`` filter bank (channel ``2j`` is tap ``j``'s row offset, ``2j+1``
    its column offset); ``callback`` returns ``fn(f, y_prime)``.
    """
    f = check_feature_map(f, "F")
    y_prime = check_feature_map(y_prime, "Y'")
    if f.shape[1:] != y_prime.shape[1:]:
        raise ValueError(f"F {f.shape[1:]} and Y' {y_prime.shape[1:]} differ in size")
    hh, ww = f.shape[1:]
    if offset_source == "zero":
        return np.zeros((N_TAPS, 2, hh, ww))
    if offset_source == "file":
        if weights is None:
            raise ValueError("offset_source='file' needs weights")
        weights = np.asarray(weights, dtype=np.float64)
        expected = (2 * N_TAPS, f.shape[0] + y_prime.shape[0])
        if weights.ndim != 4 or weights.shape[:2] != expected:
            raise ValueError(f"offset weights must be {expected} x kh x kw, got {weights.shape}")
        out = _conv_clamped(np.concatenate([f, y_prime]), weights)
        return out.reshape(N_TAPS, 2, hh, ww)
    if offset_source == "callback":
        if fn is None:
            raise ValueError("offset_source='callback' needs fn")
        out = np.asarray(fn(f, y_prime), dtype=np.float64)
        if out.shape != (N_TAPS, 2, hh, ww):
            raise ValueError(f"offset callback returned shape {out.shape}")
        return out
    raise ValueError(f"offset_source must be one of {OFFSET_SOURCES}, got {offset_source!r}")


def dynamic_aggregate(v, h, offsets, weights=None):
    """``Y(p) = sum_j w_j V(H_p + p_j + dP_j(p))`` with bilinear sampling.

    With zero offsets the result is bit-identical to
    :func:`standard_aggregate`.
    """
    v, cy, cx = _centres(v, h)
    offsets = np.asarray(offsets, dtype=np.float64)
    if offsets.shape != (N_TAPS, 2) + cy.shape:
        raise ValueError(f"offsets must be {(N_TAPS, 2) + cy.shape}, got {offsets.shape}")
    if not np.all(np.isfinite(offsets)):
        raise ValueError("offsets contain non-finite values")
    kind, w = _kernel(weights, v.shape[0])

    def tap(j):
        dy, dx = TAP_OFFSETS[j]
        return bilinear_sample(v, cy + dy + offsets[j, 0], cx + dx + offsets[j, 1])

    return _accumulate(kind, w, tap)


def softmax_weights(ss):
    """Per-position softmax across a stack of relevance maps."""
    s = np.stack([np.asarray(x, dtype=np.float64) for x in ss])
    e = np.exp(s - s.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def fuse_multiscale(ys, ss, output_weights=None):
    """Blend per-scale features by the softmax of their relevances.

    Returns ``(fused, weights)`` where ``weights[i]`` is scale ``i``'s
    softmax map. ``output_weights`` (O, C, kh, kw) applies a final
    edge-padded convolution; the default is the identity.
    """
    if len(ys) != len(ss) or not ys:
        raise ValueError(f"need matching non-empty lists, got {len(ys)} features and {len(ss)} relevances")
    ys = [check_feature_map(y, f"Y[{i}]") for i, y in enumerate(ys)]
    if any(y.shape != ys[0].shape for y in ys):
        raise ValueError("all per-scale features must share one shape")
    if any(np.shape(s) != ys[0].shape[1:] for s in ss):
        raise ValueError("relevance maps must match the feature grid")
    weights = softmax_weights(ss)
    fused = np.zeros_like(ys[0])
    for y, wgt in zip(ys, weights):
        fused += y * wgt
    if output_weights is not None:
        fused = _conv_clamped(fused, np.asarray(output_weights, dtype=np.float64))
    return fused, list(weights)


class DynamicAggregator(TransformerMixin, BaseEstimator):
    """Estimator wrapper around standard and dynamic aggregation.

    ``fit(V)`` stores the reference content features; ``transform(H, F)``
    returns the dynamically aggregated map, predicting offsets from
    ``[F ; Y']``. ``standard_`` holds the last ``Y'``.
    """

    def __init__(self, weights=None, offset_source="zero", offset_weights=None, offset_fn=None):
        self.weights = weights
        self.offset_source = offset_source
        self.offset_weights = offset_weights
        self.offset_fn = offset_fn

    def fit(self, X, y=None):
        if self.offset_source not in OFFSET_SOURCES:
            raise ValueError(f"offset_source must be one of {OFFSET_SOURCES}")
        self.ref_features_ = check_feature_map(X, "V")
        _kernel(self.weights, self.ref_features_.shape[0])
        return self

    def transform(self, X, F=None):
        check_is_fitted(self, "ref_features_")
        y_prime = standard_aggregate(self.ref_features_, X, self.weights)
        self.standard_ = y_prime
        if self.offset_source == "zero" and F is None:
            offsets = np.zeros((N_TAPS, 2) + y_prime.shape[1:])
        else:
            if F is None:
                raise ValueError("F is required to predict offsets")
            offsets = predict_offsets(F, y_prime, self.offset_source,
                                      self.offset_weights, self.offset_fn)
        self.offsets_ = offsets
        return dynamic_aggregate(self.ref_features_, X, offsets, self.weights)
