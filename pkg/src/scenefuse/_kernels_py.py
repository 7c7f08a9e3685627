"""Pure numpy lane of the hot kernels.

Mirrors the signatures of the compiled lane in ``_kernels.pyx``; the
dispatcher in ``kernels.py`` picks whichever is available. Matrix-vector
products stay out of both lanes on purpose: BLAS already owns those.
"""

import numpy as np


def gap_pool(maps: np.ndarray) -> np.ndarray:
    """Mean of each row of a (depth, h*w) map matrix."""
    return maps.mean(axis=1)


def threshold_scale(v: np.ndarray) -> np.ndarray:
    """Zero out entries below the vector mean, scale survivors by the max.

    A zero maximum yields the all-zero vector (the only consistent limit).
    """
    m = v.mean()
    mx = v.max()
    if mx == 0.0:
        return np.zeros_like(v)
    return np.where(v < m, 0.0, v / mx)


def logistic_terms(margins: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Per-sample logistic-loss pieces for margins m_i = y_i * (w . x_i).

    Returns ``(loss_sum, sneg, curv)`` where loss_sum = sum log(1+exp(-m)),
    sneg[i] = sigmoid(-m_i) (the gradient coefficient) and
    curv[i] = sigmoid(m_i) * sigmoid(-m_i) (the Hessian diagonal).
    All three are computed with overflow-safe branches.
    """
    m = margins
    loss_sum = float(np.logaddexp(0.0, -m).sum())
    sneg = np.empty_like(m)
    pos = m >= 0
    e = np.exp(-m[pos])
    sneg[pos] = e / (1.0 + e)
    e = np.exp(m[~pos])
    sneg[~pos] = 1.0 / (1.0 + e)
    curv = sneg * (1.0 - sneg)
    return loss_sum, sneg, curv
