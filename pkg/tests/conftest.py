import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def smooth_texture(rng, h, w, c=3, sigma=2.0):
    """Gaussian-blurred white noise (separable, wrap-free), values roughly in [0, 1]."""
    r = int(3 * sigma)
    x = np.arange(-r, r + 1)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    g /= g.sum()
    noise = rng.random((h + 2 * r, w + 2 * r, c))
    tmp = np.stack([np.convolve(noise[:, j, k], g, mode="valid")
                    for j in range(noise.shape[1]) for k in range(c)], axis=1)
    tmp = tmp.reshape(h, w + 2 * r, c)
    out = np.stack([np.convolve(tmp[i, :, k], g, mode="valid")
                    for i in range(h) for k in range(c)], axis=0)
    out = out.reshape(h, c, w).transpose(0, 2, 1)
    lo, hi = out.min(), out.max()
    return (out - lo) / (hi - lo)
