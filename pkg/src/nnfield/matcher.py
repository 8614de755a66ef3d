"""Embedded PatchMatch: random init plus alternating query-side and
reference-side propagation with jump-flood dilations ``2**t``.

Positions are ``(row, col)`` pairs. A position map ``H`` has shape
``(H_K, W_K, 2)`` and indexes the reference map ``Q``; the relevance map
``S`` has shape ``(H_K, W_K)``.
"""
import time
from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple, Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_feature_map, check_position_map, check_same_channels
from .accounting import CostLedger

EPS_NORM = 1e-12

# Candidate scan order after the incumbent: the 8 unit offsets, row-major.
NEIGHBOR_OFFSETS = np.array(
    [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)],
    dtype=np.int64,
)
CANDIDATES_PER_STEP = 1 + len(NEIGHBOR_OFFSETS)

_CHUNK = 16384


class NNF(NamedTuple):
    positions: np.ndarray
    relevance: np.ndarray


class StepInfo(NamedTuple):
    """Snapshot handed to ``callback`` after every propagation step."""

    level: int
    outer: int
    dilation_exp: int
    phase: str
    positions: np.ndarray
    relevance: np.ndarray
    evals: int


def unit_vectors(fm, eps=EPS_NORM):
    """Flatten a (C, H, W) map to (C, H*W) unit columns; zero where the norm < eps."""
    c = fm.shape[0]
    flat = fm.reshape(c, -1)
    sq = flat[0] * flat[0]
    for ch in range(1, c):
        sq += flat[ch] * flat[ch]
    norm = np.sqrt(sq)
    ok = norm >= eps
    unit = np.zeros_like(flat)
    unit[:, ok] = flat[:, ok] / norm[ok]
    return np.ascontiguousarray(unit)


def _dot(uk, kidx, uq, qidx):
    # Fixed channel order so every evaluation of a pair is bit-identical.
    acc = uk[0][kidx] * uq[0][qidx]
    for ch in range(1, uk.shape[0]):
        acc += uk[ch][kidx] * uq[ch][qidx]
    return np.clip(acc, -1.0, 1.0, out=acc)


def num_dilations(h, w):
    """Sweep length ``max(1, floor(log2(max(h, w) / 8)))``, computed exactly."""
    return max(1, max(h, w).bit_length() - 1 - 3)


def relevance(k_map, q_map, j, j_prime, eps=EPS_NORM):
    """Normalized inner product between ``K[:, j]`` and ``Q[:, j_prime]``.

    Returns 0 when either vector has norm below ``eps``.
    """
    k_map = check_feature_map(k_map, "k_map")
    q_map = check_feature_map(q_map, "q_map")
    check_same_channels(k_map, q_map)
    (r0, c0), (r1, c1) = j, j_prime
    a = k_map[:, r0, c0][:, None, None]
    b = q_map[:, r1, c1][:, None, None]
    idx = np.zeros(1, dtype=np.int64)
    return float(_dot(unit_vectors(a, eps), idx, unit_vectors(b, eps), idx)[0])


class _Problem:
    """Normalized K/Q pair plus the parallel map used by every step."""

    def __init__(self, k_map, q_map, eps=EPS_NORM, n_jobs=1, uq=None):
        self.hk, self.wk = k_map.shape[1:]
        self.hq, self.wq = q_map.shape[1:]
        self.uk = unit_vectors(k_map, eps)
        self.uq = unit_vectors(q_map, eps) if uq is None else uq
        self.n = self.hk * self.wk
        self.n_jobs = n_jobs
        rows, cols = np.divmod(np.arange(self.n), self.wk)
        self.rows, self.cols = rows, cols

    def chunks(self):
        return [slice(s, min(s + _CHUNK, self.n)) for s in range(0, self.n, _CHUNK)]

    def map_chunks(self, fn):
        chunks = self.chunks()
        if self.n_jobs is None or self.n_jobs == 1 or len(chunks) == 1:
            return [fn(sl) for sl in chunks]
        workers = None if self.n_jobs < 0 else self.n_jobs
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, chunks))

    def evaluate(self, qlin):
        """Relevance of every K position against ``qlin`` (flat Q index per position)."""
        out = np.empty(self.n)

        def work(sl):
            out[sl] = _dot(self.uk, np.arange(sl.start, sl.stop), self.uq, qlin[sl])

        self.map_chunks(work)
        return out

    def to_lin(self, positions):
        return positions[..., 0].reshape(-1) * self.wq + positions[..., 1].reshape(-1)

    def to_positions(self, qlin):
        return np.stack(np.divmod(qlin, self.wq), axis=-1).reshape(self.hk, self.wk, 2)

    def step(self, qlin, rel, cand_fn):
        """Evaluate the 9 candidates per position and keep the strict maximiser."""
        new_lin = np.empty_like(qlin)
        new_rel = np.empty_like(rel)

        def work(sl):
            kidx = np.arange(sl.start, sl.stop)
            cand = cand_fn(sl, qlin)  # (9, n), slot 0 is the incumbent
            r = _dot(self.uk, kidx[None, :], self.uq, cand)
            best = np.argmax(r, axis=0)  # first maximum: incumbent wins ties
            idx = np.arange(best.size)
            keep = best == 0
            new_lin[sl] = np.where(keep, qlin[sl], cand[best, idx])
            new_rel[sl] = np.where(keep, rel[sl], r[best, idx])

        self.map_chunks(work)
        return new_lin, new_rel

    def lr_candidates(self, d):
        def cand_fn(sl, qlin):
            rows, cols = self.rows[sl], self.cols[sl]
            own = np.arange(sl.start, sl.stop)
            out = np.empty((CANDIDATES_PER_STEP, own.size), dtype=np.int64)
            out[0] = qlin[own]
            for i, (dy, dx) in enumerate(NEIGHBOR_OFFSETS, start=1):
                ny, nx = rows + dy * d, cols + dx * d
                inside = (ny >= 0) & (ny < self.hk) & (nx >= 0) & (nx < self.wk)
                # Out-of-bounds neighbours fall back to the incumbent, which can never win.
                u = np.where(inside, ny * self.wk + nx, own)
                out[i] = qlin[u]
            return out

        return cand_fn

    def ref_candidates(self, d):
        def cand_fn(sl, qlin):
            cur = qlin[sl]
            qy, qx = np.divmod(cur, self.wq)
            out = np.empty((CANDIDATES_PER_STEP, cur.size), dtype=np.int64)
            out[0] = cur
            for i, (dy, dx) in enumerate(NEIGHBOR_OFFSETS, start=1):
                ny = np.clip(qy + dy * d, 0, self.hq - 1)
                nx = np.clip(qx + dx * d, 0, self.wq - 1)
                out[i] = ny * self.wq + nx
            return out

        return cand_fn


def _splitmix64(x):
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def random_positions(hk, wk, hq, wq, seed):
    """Uniform Q coordinates for every K position from a counter-based generator.

    Each draw depends only on ``(seed, position)``, so results do not depend
    on evaluation order or chunking.
    """
    key = _splitmix64(np.array([int(seed) % 2**64], dtype=np.uint64))[0]
    counter = np.arange(hk * wk, dtype=np.uint64) * np.uint64(2) + key
    rows = _splitmix64(counter) % np.uint64(hq)
    cols = _splitmix64(counter + np.uint64(1)) % np.uint64(wq)
    return np.stack([rows, cols], axis=-1).astype(np.int64).reshape(hk, wk, 2)


def _init(prob, seed_map, random_state):
    if seed_map is None:
        positions = random_positions(prob.hk, prob.wk, prob.hq, prob.wq, random_state)
    else:
        positions = check_position_map(seed_map, (prob.hq, prob.wq), "seed_map")
        if positions.shape[:2] != (prob.hk, prob.wk):
            raise ValueError(f"seed_map shape {positions.shape[:2]} does not match K")
    qlin = prob.to_lin(positions)
    return qlin, prob.evaluate(qlin)


def _prepare(k_map, q_map, eps, n_jobs=1):
    k_map = check_feature_map(k_map, "k_map")
    q_map = check_feature_map(q_map, "q_map")
    check_same_channels(k_map, q_map)
    return _Problem(k_map, q_map, eps, n_jobs)


def init_nnf(k_map, q_map, seed_map=None, random_state=0, eps=EPS_NORM):
    """Initial position map (random or ``seed_map``) and its relevance map."""
    prob = _prepare(k_map, q_map, eps)
    qlin, rel = _init(prob, seed_map, random_state)
    return NNF(prob.to_positions(qlin), rel.reshape(prob.hk, prob.wk))


def _propagate(kind, state, k_map, q_map, t, eps):
    prob = _prepare(k_map, q_map, eps)
    positions = check_position_map(state[0], (prob.hq, prob.wq))
    rel = np.asarray(state[1], dtype=np.float64).reshape(-1)
    if positions.shape[:2] != (prob.hk, prob.wk) or rel.size != prob.n:
        raise ValueError("state maps must match k_map")
    cand = prob.lr_candidates(2**t) if kind == "lr" else prob.ref_candidates(2**t)
    qlin, rel = prob.step(prob.to_lin(positions), rel.copy(), cand)
    return NNF(prob.to_positions(qlin), rel.reshape(prob.hk, prob.wk))


def lr_propagate(state, k_map, q_map, t, eps=EPS_NORM):
    """One synchronous query-side step: adopt the best match among ``j`` and
    its eight neighbours at distance ``2**t`` in K (out-of-bounds skipped)."""
    return _propagate("lr", state, k_map, q_map, t, eps)


def ref_propagate(state, k_map, q_map, t, eps=EPS_NORM):
    """One synchronous reference-side step: test the current match and its
    eight neighbours at distance ``2**t`` in Q (clamped into Q)."""
    return _propagate("ref", state, k_map, q_map, t, eps)


def _run(prob, qlin, rel, n_iter, ledger, level, callback):
    n_sweeps = num_dilations(prob.hk, prob.wk)
    per_step = CANDIDATES_PER_STEP * prob.n
    for outer in range(n_iter):
        for t in range(n_sweeps):
            for phase in ("lr", "ref"):
                cand = prob.lr_candidates(2**t) if phase == "lr" else prob.ref_candidates(2**t)
                qlin, rel = prob.step(qlin, rel, cand)
                if ledger is not None:
                    ledger.add(level, per_step)
                if callback is not None:
                    callback(StepInfo(level, outer, t, phase, prob.to_positions(qlin),
                                      rel.reshape(prob.hk, prob.wk), per_step))
    return qlin, rel


def run_embedded_patchmatch(k_map, q_map, n_iter=6, random_state=0, seed_map=None,
                            eps=EPS_NORM, n_jobs=1, ledger=None, level=0, callback=None):
    """Full Embedded PatchMatch on one scale.

    Runs ``n_iter`` outer rounds, each sweeping ``t = 0..L-1`` with one
    query-side and one reference-side step per ``t``, where ``L`` is
    :func:`num_dilations` of K. Propagation evaluations are added to
    ``ledger`` (``18 * H_K * W_K * n_iter * L`` in total); the initial
    relevance pass is recorded in ``ledger.init_evals``.
    """
    if n_iter < 1:
        raise ValueError(f"n_iter must be >= 1, got {n_iter}")
    prob = _prepare(k_map, q_map, eps, n_jobs)
    qlin, rel = _init(prob, seed_map, random_state)
    if ledger is not None:
        ledger.init_evals += prob.n
    if callback is not None:
        callback(StepInfo(level, -1, -1, "init", prob.to_positions(qlin),
                          rel.reshape(prob.hk, prob.wk), 0))
    qlin, rel = _run(prob, qlin, rel, n_iter, ledger, level, callback)
    return NNF(prob.to_positions(qlin), rel.reshape(prob.hk, prob.wk))


class EmbeddedPatchMatch(BaseEstimator):
    """Single-scale Embedded PatchMatch as an estimator.

    ``fit`` stores the reference feature map Q; ``match`` computes the NNF of
    a query map K into it.

    Parameters
    ----------
    n_iter : int
        Outer rounds M.
    random_state : int
        Seed for the counter-based initialisation.
    eps : float
        Norm guard; vectors with a smaller norm have relevance 0.
    n_jobs : int
        Threads used per step. Never changes the result.
    """

    def __init__(self, n_iter=6, random_state=0, eps=EPS_NORM, n_jobs=1):
        self.n_iter = n_iter
        self.random_state = random_state
        self.eps = eps
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        self.ref_map_ = check_feature_map(X, "reference map")
        self.n_features_in_ = self.ref_map_.shape[0]
        return self

    def match(self, X, init=None, callback=None):
        check_is_fitted(self, "ref_map_")
        self.ledger_ = CostLedger()
        start = time.perf_counter()
        nnf = run_embedded_patchmatch(X, self.ref_map_, self.n_iter, self.random_state,
                                      init, self.eps, self.n_jobs, self.ledger_,
                                      callback=callback)
        self.ledger_.wall_time = time.perf_counter() - start
        return nnf

    def predict(self, X):
        return self.match(X).positions

    def score(self, X, y=None):
        """Mean relevance of the matched field."""
        return float(self.match(X).relevance.mean())
