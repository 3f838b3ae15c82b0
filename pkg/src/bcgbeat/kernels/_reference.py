"""NumPy reference implementation of the batched ISTA coding kernels.

These are the hot inner loops of both training (per-EM-iteration code
updates) and detection (per-candidate-peak test coding).  The compiled
fast path in ``_fastpath.pyx`` implements the same iteration math; either
backend may serve every call site.

Shapes use the column-instance convention: a batch of N codes over K atoms
is a (K, N) array, correlations Dᵀ·X likewise.
"""

import numpy as np


def soft_threshold_array(v: np.ndarray, thr) -> np.ndarray:
    """Elementwise sign(v) * max(|v| - thr, 0); thr broadcasts against v."""
    return np.sign(v) * np.maximum(np.abs(v) - thr, 0.0)


def ista_negative(
    gram: np.ndarray,
    corr: np.ndarray,
    codes0: np.ndarray,
    lam: float,
    eta: float,
    n_iter: int,
) -> np.ndarray:
    """Batched ISTA for background-only coding.

    Minimizes 0.5*||x - B a||^2 + lam*||a||_1 per instance, where
    gram = BᵀB (M, M) and corr = BᵀX (M, N).  Each iteration is a full
    gradient step of length eta followed by soft-thresholding at eta*lam.
    """
    A = np.array(codes0, dtype=float, copy=True)
    thr = eta * lam
    for _ in range(n_iter):
        A = soft_threshold_array(A - eta * (gram @ A - corr), thr)
    return A


def ista_positive(
    gram: np.ndarray,
    gram_bg: np.ndarray,
    corr: np.ndarray,
    post: np.ndarray,
    codes0: np.ndarray,
    lam: float,
    eta: float,
    n_iter: int,
    n_target: int,
) -> np.ndarray:
    """Batched ISTA on the expected reconstruction model.

    Per instance i with target posterior p = post[i], the smooth part is
        0.5*p*||x - D a||^2 + 0.5*(1-p)*||x - B a_bg||^2
    with gram = DᵀD (K, K), gram_bg = BᵀB (M, M) over the background block,
    and corr rows [D_tgtᵀX ; BᵀX] (K, N).  The L1 weights follow the
    posterior: eta*lam*p on the target block, eta*lam on the background
    block.  post == 1 reduces to plain lasso coding on the full dictionary.
    """
    A = np.array(codes0, dtype=float, copy=True)
    post = np.asarray(post, dtype=float)
    thr_t = eta * lam * post
    thr_b = eta * lam
    for _ in range(n_iter):
        ga = gram @ A
        gb = gram_bg @ A[n_target:]
        grad_t = post * (ga[:n_target] - corr[:n_target])
        grad_b = post * ga[n_target:] + (1.0 - post) * gb - corr[n_target:]
        A_t = soft_threshold_array(A[:n_target] - eta * grad_t, thr_t)
        A_b = soft_threshold_array(A[n_target:] - eta * grad_b, thr_b)
        A = np.vstack([A_t, A_b])
    return A
