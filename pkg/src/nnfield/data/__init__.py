"""Bundled benchmark images.

``bench_ref.ppm`` is a 96x96 crop of the NASA astronaut portrait (public
domain, as distributed with scikit-image); ``bench_hr.ppm`` is its centred
64x64 sub-window and ``bench_lr.ppm`` that window downsampled 4x.
"""
from pathlib import Path

DATA_DIR = Path(__file__).resolve().parent


def benchmark_paths():
    """Return ``{"lr": ..., "hr": ..., "ref": ...}`` paths of the bundled pair."""
    return {name: DATA_DIR / f"bench_{name}.ppm" for name in ("lr", "hr", "ref")}
