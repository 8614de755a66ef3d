"""Coarse-to-fine Embedded PatchMatch over 1/8, 1/4, 1/2 and full scale."""
import math
import time

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_feature_map, check_same_channels
from .accounting import CostLedger
from .matcher import EPS_NORM, NNF, run_embedded_patchmatch

DEFAULT_SCALES = (0.125, 0.25, 0.5, 1.0)
DEFAULT_ITERS = (1, 1, 2, 6)


def halvings(factor):
    """Number of 2x reductions encoded by ``factor`` (1 -> 0, 1/8 -> 3)."""
    if factor <= 0 or factor > 1:
        raise ValueError(f"scale factor must be in (0, 1], got {factor}")
    s = round(-math.log2(factor))
    if not math.isclose(2.0**-s, factor, rel_tol=0, abs_tol=1e-12):
        raise ValueError(f"scale factor must be a reciprocal power of two, got {factor}")
    return s


def check_schedule(scales, iters_per_level):
    scales = [float(s) for s in scales]
    iters = [int(m) for m in iters_per_level]
    if not scales:
        raise ValueError("at least one scale is required")
    if len(scales) != len(iters):
        raise ValueError("scales and iters_per_level must have the same length")
    if any(b <= a for a, b in zip(scales, scales[1:])):
        raise ValueError(f"scales must be strictly increasing, got {scales}")
    if scales[-1] != 1.0:
        raise ValueError("the last scale must be 1")
    if any(m < 1 for m in iters):
        raise ValueError("every iters_per_level entry must be >= 1")
    return [halvings(s) for s in scales], iters


def level_dims(h, w, n_halvings):
    return h >> n_halvings, w >> n_halvings


def downscale_features(fm, factor):
    """Repeated 2x2 average pooling; odd trailing rows/cols are dropped."""
    out = check_feature_map(fm)
    for _ in range(halvings(factor)):
        c, h, w = out.shape
        h2, w2 = h // 2, w // 2
        if h2 == 0 or w2 == 0:
            raise ValueError(f"downscaling a {h}x{w} map by 2 leaves a zero dimension")
        v = out[:, :2 * h2, :2 * w2].reshape(c, h2, 2, w2, 2)
        out = (v[:, :, 0, :, 0] + v[:, :, 0, :, 1] + v[:, :, 1, :, 0] + v[:, :, 1, :, 1]) * 0.25
    return np.ascontiguousarray(out)


def upscale_seed(h, s_target_dims, q_target_dims, factor=2):
    """Lift a coarse position map: nearest replication, coordinates times
    ``factor``, clamped into ``q_target_dims``."""
    h = np.asarray(h, dtype=np.int64)
    th, tw = s_target_dims
    qh, qw = q_target_dims
    ch, cw = h.shape[:2]
    rows = np.minimum(np.arange(th) // factor, ch - 1)
    cols = np.minimum(np.arange(tw) // factor, cw - 1)
    lifted = h[rows[:, None], cols[None, :]] * factor
    lifted[..., 0] = np.clip(lifted[..., 0], 0, qh - 1)
    lifted[..., 1] = np.clip(lifted[..., 1], 0, qw - 1)
    return lifted


def run_cfe(k_map, q_map, scales=DEFAULT_SCALES, iters_per_level=DEFAULT_ITERS,
            random_state=0, eps=EPS_NORM, n_jobs=1, ledger=None, callback=None,
            on_level=None):
    """Coarse-to-fine Embedded PatchMatch.

    The coarsest level starts from a random field; each finer level starts
    from the lifted previous result with relevances recomputed on entry.
    ``on_level(level, nnf)`` is called after each level finishes.
    """
    k_map = check_feature_map(k_map, "k_map")
    q_map = check_feature_map(q_map, "q_map")
    check_same_channels(k_map, q_map)
    if min(k_map.shape[1:]) < 8 or min(q_map.shape[1:]) < 8:
        raise ValueError("coarse-to-fine matching needs maps of at least 8x8")
    shifts, iters = check_schedule(scales, iters_per_level)
    prev = None
    prev_shift = None
    nnf = None
    for level, (s, m) in enumerate(zip(shifts, iters)):
        k_l = downscale_features(k_map, 2.0**-s)
        q_l = downscale_features(q_map, 2.0**-s)
        seed = None
        if prev is not None:
            seed = upscale_seed(prev, k_l.shape[1:], q_l.shape[1:], 2 ** (prev_shift - s))
        nnf = run_embedded_patchmatch(k_l, q_l, m, random_state, seed, eps, n_jobs,
                                      ledger, level, callback)
        if on_level is not None:
            on_level(level, nnf)
        prev, prev_shift = nnf.positions, s
    return nnf


class CoarseToFinePatchMatch(BaseEstimator):
    """Coarse-to-fine Embedded PatchMatch estimator.

    ``fit`` stores the reference map Q, ``match`` returns the finest-level
    :class:`~nnfield.matcher.NNF` for a query map K and records per-level
    fields in ``levels_`` and counts in ``ledger_``.
    """

    def __init__(self, scales=DEFAULT_SCALES, iters_per_level=DEFAULT_ITERS,
                 random_state=0, eps=EPS_NORM, n_jobs=1):
        self.scales = scales
        self.iters_per_level = iters_per_level
        self.random_state = random_state
        self.eps = eps
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        check_schedule(self.scales, self.iters_per_level)
        self.ref_map_ = check_feature_map(X, "reference map")
        self.n_features_in_ = self.ref_map_.shape[0]
        return self

    def match(self, X, callback=None):
        check_is_fitted(self, "ref_map_")
        self.ledger_ = CostLedger()
        self.levels_ = []
        start = time.perf_counter()
        nnf = run_cfe(X, self.ref_map_, self.scales, self.iters_per_level,
                      self.random_state, self.eps, self.n_jobs, self.ledger_, callback,
                      on_level=lambda level, res: self.levels_.append(res))
        self.ledger_.wall_time = time.perf_counter() - start
        return nnf

    def predict(self, X):
        return self.match(X).positions

    def score(self, X, y=None):
        return float(self.match(X).relevance.mean())

