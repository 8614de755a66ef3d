"""Input validation helpers shared by the estimators and the functional API."""
import numpy as np


def check_image(img, name="image"):
    """Return ``img`` as a float64 (H, W, C) array.

    2-D input is promoted to a single channel.
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"{name} must be (H, W) or (H, W, C), got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0 or arr.shape[2] == 0:
        raise ValueError(f"{name} has a zero-sized dimension: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_feature_map(fm, name="feature map"):
    """Return ``fm`` as a C-contiguous float64 (C, H, W) array."""
    arr = np.ascontiguousarray(fm, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"{name} must be (C, H, W), got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ValueError(f"{name} has a zero-sized dimension: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_same_channels(a, b):
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"channel mismatch: {a.shape[0]} vs {b.shape[0]}")


def check_position_map(pos, target_shape, name="position map"):
    """Validate an (H, W, 2) integer map whose coordinates index ``target_shape``."""
    arr = np.asarray(pos)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ValueError(f"{name} must be (H, W, 2), got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.round(arr)):
            raise ValueError(f"{name} must hold integer coordinates")
    arr = arr.astype(np.int64)
    th, tw = target_shape
    rows, cols = arr[..., 0], arr[..., 1]
    if rows.min() < 0 or cols.min() < 0 or rows.max() >= th or cols.max() >= tw:
        raise ValueError(f"{name} has coordinates outside a {th}x{tw} target")
    return arr
