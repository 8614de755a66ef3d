"""Image containers, bicubic resampling and the dense patch-descriptor extractor.

Images are float64 ``(H, W, C)`` arrays (channel-last, values nominally in
[0, 1]); feature maps are float64 ``(C, H, W)`` arrays.
"""
import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_feature_map, check_image

CATMULL_ROM_A = -0.5


def round_half_away(x):
    """Round half away from zero (``round(2.5) == 3``), unlike :func:`round`."""
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def cubic_kernel(x, a=CATMULL_ROM_A):
    """Keys cubic convolution kernel evaluated at ``x``."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    far = a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


def _resize_matrix(n_in, n_out):
    # Half-pixel-centre mapping; taps outside [0, n_in) fold onto the edge.
    mat = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(np.int64)
    frac = src - base
    rows = np.arange(n_out)
    for tap in range(-1, 3):
        w = cubic_kernel(frac - tap)
        idx = np.clip(base + tap, 0, n_in - 1)
        np.add.at(mat, (rows, idx), w)
    return mat


def bicubic_resize(img, out_h, out_w):
    """Separable Catmull-Rom resize with clamp-to-edge boundaries.

    Parameters
    ----------
    img : array-like, shape (H, W) or (H, W, C)
    out_h, out_w : int
        Output size, both >= 1.

    Returns
    -------
    ndarray, shape (out_h, out_w, C)
    """
    arr = check_image(img)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got {out_h}x{out_w}")
    h, w, _ = arr.shape
    if (h, w) == (out_h, out_w):
        return arr.copy()
    my = _resize_matrix(h, out_h)
    mx = _resize_matrix(w, out_w)
    return np.einsum("oh,hwc,pw->opc", my, arr, mx, optimize=True)


def pyramid_sizes(h, w, k, n):
    """Level sizes ``round(H k^i) x round(W k^i)`` for ``i < n``."""
    return [(round_half_away(h * k**i), round_half_away(w * k**i)) for i in range(n)]


def make_ref_pyramid(ref, k=0.8, n=5, patch_size=3):
    """Bicubic pyramid ``[Ref_0, ..., Ref_{n-1}]`` with ``Ref_i`` scaled by ``k**i``.

    Raises ``ValueError`` naming the first level whose size falls below
    ``patch_size``.
    """
    arr = check_image(ref, "reference image")
    if not 0.0 < k <= 1.0:
        raise ValueError(f"k must lie in (0, 1], got {k}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    h, w, _ = arr.shape
    levels = []
    for i, (lh, lw) in enumerate(pyramid_sizes(h, w, k, n)):
        if lh < patch_size or lw < patch_size:
            raise ValueError(
                f"pyramid level {i} is {lh}x{lw}, smaller than patch size {patch_size}"
            )
        levels.append(arr.copy() if i == 0 else bicubic_resize(arr, lh, lw))
    return levels


def extract_descriptors(img, patch_size=3, mean_subtract=True):
    """Dense flattened-patch descriptors.

    Each position gets the clamp-padded ``patch_size x patch_size``
    neighbourhood of every channel, flattened channel-major then row-major,
    so the output has ``C * patch_size**2`` channels.
    """
    arr = check_image(img)
    if patch_size < 1 or patch_size % 2 == 0:
        raise ValueError(f"patch_size must be odd and >= 1, got {patch_size}")
    h, w, c = arr.shape
    if h < patch_size or w < patch_size:
        raise ValueError(f"image {h}x{w} is smaller than patch size {patch_size}")
    r = patch_size // 2
    padded = np.pad(arr, ((r, r), (r, r), (0, 0)), mode="edge")
    out = np.empty((c, patch_size, patch_size, h, w))
    for dy in range(patch_size):
        for dx in range(patch_size):
            out[:, dy, dx] = padded[dy:dy + h, dx:dx + w].transpose(2, 0, 1)
    out = out.reshape(c * patch_size * patch_size, h, w)
    if mean_subtract:
        out = out - out.mean(axis=0, keepdims=True)
    return np.ascontiguousarray(out)


class PatchDescriptor(TransformerMixin, BaseEstimator):
    """Stateless transformer wrapping :func:`extract_descriptors`.

    Stands in for a learned feature extractor: ``transform`` maps an image
    to a ``(C * patch_size**2, H, W)`` feature map.
    """

    def __init__(self, patch_size=3, mean_subtract=True):
        self.patch_size = patch_size
        self.mean_subtract = mean_subtract

    def fit(self, X=None, y=None):
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ValueError(f"patch_size must be odd and >= 1, got {self.patch_size}")
        return self

    def transform(self, X):
        return extract_descriptors(X, self.patch_size, self.mean_subtract)


def to_feature_map(img):
    """Reinterpret an image as a raw-pixel feature map ``(C, H, W)``."""
    return check_feature_map(check_image(img).transpose(2, 0, 1))
