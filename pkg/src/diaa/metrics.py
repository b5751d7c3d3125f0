import numpy as np

from .errors import ShapeError

L0_THRESHOLD = 1e-9


def lp_norms(x, x_adv):
    """``(L0, L1, L2)`` of ``x - x_adv``; L0 counts coordinates changed by more than 1e-9."""
    x = np.asarray(x, dtype=np.float64)
    x_adv = np.asarray(x_adv, dtype=np.float64)
    if x.shape != x_adv.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {x_adv.shape}")
    d = np.abs(x - x_adv).ravel()
    return int(np.count_nonzero(d > L0_THRESHOLD)), float(d.sum()), float(np.sqrt(np.dot(d, d)))


def summary(values):
    """Mean, population std, min and max; NaN for an empty sample."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return {"mean": float("nan"), "std": float("nan"), "min": float("nan"), "max": float("nan")}
    return {"mean": float(v.mean()), "std": float(v.std()), "min": float(v.min()), "max": float(v.max())}
