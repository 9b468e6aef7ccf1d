"""Input validation helpers shared by the public functions and the estimator."""
import numpy as np

from .errors import PairDimensionError, SizeError

MIN_SIDE = 8


def check_gray_image(x, name="image", min_side=MIN_SIDE, clip=False):
    """Validate a single-channel image in [0, 1] and return it as float64.

    Parameters
    ----------
    x : array-like of shape (H, W)
    name : str
        Used in error messages.
    min_side : int
        Minimum height and width.
    clip : bool
        Clip out-of-range values instead of raising.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < min_side or arr.shape[1] < min_side:
        raise SizeError(f"{name} must be at least {min_side}x{min_side}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if clip:
        return np.clip(arr, 0.0, 1.0)
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def check_same_shape(*arrays, names=None):
    shapes = [np.shape(a) for a in arrays]
    if any(s != shapes[0] for s in shapes[1:]):
        names = names or [f"arg{i}" for i in range(len(arrays))]
        desc = ", ".join(f"{n}={s}" for n, s in zip(names, shapes))
        raise PairDimensionError(f"dimension mismatch: {desc}")


def check_pair_stack(X):
    """Validate an estimator input of shape (n_samples, 2, H, W).

    Returns a float64 array. Channel 0 is the MRI plane, channel 1 the
    functional-modality luma plane.
    """
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[0] == 2:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1] != 2:
        raise ValueError(f"expected shape (n_samples, 2, H, W), got {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError("no samples given")
    for i in range(arr.shape[0]):
        check_gray_image(arr[i, 0], name=f"X[{i}, 0]")
        check_gray_image(arr[i, 1], name=f"X[{i}, 1]")
    return arr
