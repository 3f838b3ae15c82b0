"""Multiple-instance discriminative dictionary learning (DL-FUMI).

Learns a concept dictionary D = [D_tgt | D_bg] from labeled bags of
instances: positive bags are only guaranteed to contain at least one true
target instance, negative bags contain none.  An EM loop alternates

  E-step   per-instance probability that a positive-bag instance is a
           true target, driven by how badly the background dictionary
           alone reconstructs it,
  M-step   closed-form per-atom updates of the expected objective with
           immediate renormalization to unit norm, followed by ISTA
           updates of the sparse codes.

A cross-coherence penalty (adaptive_gamma) pushes background atoms away
from the previous iteration's target atoms so the target structure is not
absorbed into the background model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .signals import Bag

_POSTERIOR_CLAMP = 1e-12
_STALE_LIMIT = 3
_WARMUP_STEPS = 5


@dataclass
class FumiParams:
    """Learner hyperparameters.

    T / M        : number of target / background atoms
    lam          : sparsity weight on the code L1 norm
    gamma        : scale of the target/background cross-coherence penalty
    beta         : E-step sensitivity; larger beta makes any background
                   reconstruction residual look more target-like
    psi          : weight of positive-bag instances in the objective;
                   None resolves to (#negative instances / #positive)
    inner_iters  : ISTA code steps per EM iteration
    max_em_iters : EM iteration cap
    tol          : stop when no atom moved more than this (L2) in one
                   iteration
    """

    T: int = 3
    M: int = 3
    lam: float = 5e-3
    gamma: float = 5e-3
    beta: float = 90.0
    psi: float | None = None
    inner_iters: int = 5
    max_em_iters: int = 100
    tol: float = 1e-5

    def validate(self):
        if self.T < 1 or self.M < 1:
            raise ValueError("T and M must be >= 1")
        if self.lam < 0 or self.gamma < 0:
            raise ValueError("lam and gamma must be >= 0")
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.psi is not None and self.psi <= 0:
            raise ValueError("psi must be > 0")
        if self.inner_iters < 1 or self.max_em_iters < 1:
            raise ValueError("inner_iters and max_em_iters must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")


@dataclass
class Dictionary:
    """Column-atom dictionary split into target and background blocks."""

    target_atoms: np.ndarray
    background_atoms: np.ndarray

    def __post_init__(self):
        self.target_atoms = np.atleast_2d(np.asarray(self.target_atoms, dtype=float))
        self.background_atoms = np.atleast_2d(
            np.asarray(self.background_atoms, dtype=float)
        )
        if self.target_atoms.shape[0] != self.background_atoms.shape[0]:
            raise ValueError("target and background atoms must share a dimension")

    @property
    def d(self) -> int:
        return self.target_atoms.shape[0]

    @property
    def n_target(self) -> int:
        return self.target_atoms.shape[1]

    @property
    def n_background(self) -> int:
        return self.background_atoms.shape[1]

    @property
    def atoms(self) -> np.ndarray:
        return np.hstack([self.target_atoms, self.background_atoms])

    def copy(self) -> "Dictionary":
        return Dictionary(self.target_atoms.copy(), self.background_atoms.copy())


@dataclass
class SparseCode:
    """Per-instance code over the dictionary blocks."""

    target_weights: np.ndarray
    background_weights: np.ndarray

    def __post_init__(self):
        self.target_weights = np.asarray(self.target_weights, dtype=float).ravel()
        self.background_weights = np.asarray(
            self.background_weights, dtype=float
        ).ravel()

    @property
    def full(self) -> np.ndarray:
        return np.concatenate([self.target_weights, self.background_weights])


@dataclass
class FitResult:
    """Everything fit() produces.

    codes is a (T+M, N) matrix over the canonical flattening of the input
    bags (bag order, instance order within each bag); target rows are zero
    for negative-bag instances.  posteriors holds P(z=1) per instance and
    is exactly 0 on negative bags.
    """

    dictionary: Dictionary
    codes: np.ndarray
    posteriors: np.ndarray
    objective_trace: list[float]
    is_positive: np.ndarray
    bag_index: np.ndarray
    psi: float
    n_iterations: int
    inner_objective_trace: list[np.ndarray] = field(default_factory=list)


def flatten_bags(bags: list[Bag]):
    """Stack all bag instances column-wise in canonical order.

    Returns (X, is_positive, bag_index) with X of shape (d, N).
    """
    if not bags:
        raise ValueError("no bags given")
    cols, pos, bidx = [], [], []
    for j, bag in enumerate(bags):
        for inst in bag.instances:
            cols.append(np.asarray(inst.features, dtype=float))
            pos.append(bag.label == 1)
            bidx.append(j)
    d = cols[0].size
    for c in cols:
        if c.size != d:
            raise ValueError("instances disagree on feature dimension")
    X = np.column_stack(cols)
    return X, np.asarray(pos, dtype=bool), np.asarray(bidx, dtype=int)


def resolve_psi(is_positive: np.ndarray, params: FumiParams) -> float:
    """params.psi, defaulting to the negative/positive instance count ratio."""
    if params.psi is not None:
        return float(params.psi)
    n_pos = int(np.count_nonzero(is_positive))
    n_neg = int(is_positive.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("psi default needs both positive and negative instances")
    return n_neg / n_pos


def soft_threshold(v, thr):
    """sign(v) * max(|v| - thr, 0), elementwise; thr broadcasts."""
    v = np.asarray(v, dtype=float)
    out = np.sign(v) * np.maximum(np.abs(v) - thr, 0.0)
    return float(out) if out.ndim == 0 else out


def step_length(D) -> float:
    """1 / lambda_max(D^T D) via power iteration.

    Accepts a Dictionary or a (d, K) array.  Rayleigh quotient convergence
    at relative tolerance 1e-10, at most 1000 iterations; raises
    RuntimeError if that budget is exhausted and ValueError on an
    all-zero dictionary.
    """
    A = D.atoms if isinstance(D, Dictionary) else np.asarray(D, dtype=float)
    G = A.T @ A
    k = G.shape[0]
    if not np.any(G):
        raise ValueError("dictionary gram matrix is zero")
    rng = np.random.default_rng(0)
    v = rng.standard_normal(k)
    v /= np.linalg.norm(v)
    lam_prev = np.inf
    for _ in range(1000):
        w = G @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # v landed in the null space; reseed deterministically
            v = rng.standard_normal(k)
            v /= np.linalg.norm(v)
            continue
        lam = float(v @ w)
        v = w / nw
        if abs(lam - lam_prev) <= 1e-10 * abs(lam):
            return 1.0 / lam
        lam_prev = lam
    raise RuntimeError("power iteration did not converge in 1000 iterations")


def safe_step_length(D) -> float:
    """step_length with a smaller guaranteed-valid fallback.

    When the power iteration stalls (near-degenerate top eigenvalues of
    the gram, e.g. two atoms drifting together), fall back to
    1/||G||_F >= 1/lambda_max, which keeps every ISTA step monotone at
    the cost of smaller steps.
    """
    try:
        return step_length(D)
    except RuntimeError:
        A = D.atoms if isinstance(D, Dictionary) else np.asarray(D, dtype=float)
        G = A.T @ A
        return 1.0 / float(np.linalg.norm(G, "fro"))


def e_step(x: np.ndarray, D: Dictionary, code: SparseCode, beta: float) -> float:
    """P(z=1 | x) = 1 - exp(-beta * ||x - D_bg a_bg||^2) for a positive-bag
    instance.  Negative-bag instances carry P(z=1) = 0 by definition; that
    forcing happens in fit(), not here."""
    x = np.asarray(x, dtype=float)
    r = x - D.background_atoms @ code.background_weights
    return float(-np.expm1(-beta * float(r @ r)))


def adaptive_gamma(d_bg: np.ndarray, d_tgt_old: np.ndarray, scale: float) -> float:
    """Cross-coherence penalty coefficient: scale * cos(angle between the
    background atom and a previous-iteration target atom).  The resulting
    penalty term gamma * <d_bg, d_tgt_old> is therefore never negative."""
    d_bg = np.asarray(d_bg, dtype=float)
    d_tgt_old = np.asarray(d_tgt_old, dtype=float)
    nb = float(np.linalg.norm(d_bg))
    nt = float(np.linalg.norm(d_tgt_old))
    if nb == 0.0 or nt == 0.0:
        raise ValueError("adaptive_gamma needs nonzero atoms")
    return scale * float(d_bg @ d_tgt_old) / (nb * nt)


def gamma_matrix(D: Dictionary, scale: float, target_atoms_old: np.ndarray | None = None) -> np.ndarray:
    """adaptive_gamma over all (background, target) pairs, shape (M, T);
    targets default to the dictionary's own (i.e., treat the current
    iteration's atoms as the previous ones)."""
    tgt = D.target_atoms if target_atoms_old is None else np.asarray(target_atoms_old, dtype=float)
    bg = D.background_atoms
    bn = np.linalg.norm(bg, axis=0)
    tn = np.linalg.norm(tgt, axis=0)
    if np.any(bn == 0.0) or np.any(tn == 0.0):
        raise ValueError("adaptive_gamma needs nonzero atoms")
    return scale * (bg.T @ tgt) / np.outer(bn, tn)


def alpha_gradient(x: np.ndarray, D: Dictionary, code: SparseCode, p_target: float) -> np.ndarray:
    """Gradient of the smooth (expected reconstruction) part of the
    objective with respect to the full code of one positive-bag instance:

        -[p*D_tgt, D_bg]^T x + (p*D^T D + (1-p)*[0, D_bg]^T [0, D_bg]) a
    """
    x = np.asarray(x, dtype=float)
    T = D.n_target
    a = code.full
    full = D.atoms
    ga = full.T @ (full @ a)
    gb = D.background_atoms.T @ (D.background_atoms @ code.background_weights)
    g = np.empty_like(a)
    g[:T] = p_target * (ga[:T] - D.target_atoms.T @ x)
    g[T:] = p_target * ga[T:] + (1.0 - p_target) * gb - D.background_atoms.T @ x
    return g


def code_step_positive(
    x: np.ndarray,
    D: Dictionary,
    code: SparseCode,
    p_target: float,
    lam: float,
    eta: float,
) -> SparseCode:
    """One ISTA step on a positive-bag instance: gradient step of length
    eta on the smooth part, then the exact weighted-L1 prox, i.e.
    soft-thresholding at eta*lam*p_target (target block) and eta*lam
    (background block)."""
    g = alpha_gradient(x, D, code, p_target)
    a = code.full - eta * g
    T = D.n_target
    new_t = soft_threshold(a[:T], eta * lam * p_target)
    new_b = soft_threshold(a[T:], eta * lam)
    return SparseCode(new_t, new_b)


def code_step_negative(
    x: np.ndarray, D: Dictionary, code: SparseCode, lam: float, eta: float
) -> SparseCode:
    """One ISTA step for a negative-bag instance.  Only the background
    block is active; target weights stay pinned at zero."""
    x = np.asarray(x, dtype=float)
    b = code.background_weights
    grad = D.background_atoms.T @ (D.background_atoms @ b - x)
    new_b = soft_threshold(b - eta * grad, eta * lam)
    return SparseCode(np.zeros(D.n_target), new_b)


def _column_sq_norms(R: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->j", R, R)


def _objective_matrices(
    X: np.ndarray,
    is_pos: np.ndarray,
    D: Dictionary,
    codes: np.ndarray,
    posteriors: np.ndarray,
    params: FumiParams,
    psi: float,
    gamma: np.ndarray | None,
    target_atoms_old: np.ndarray | None,
) -> float:
    T = D.n_target
    p = np.where(is_pos, posteriors, 0.0)
    w = np.where(is_pos, psi, 1.0)
    R_full = X - D.atoms @ codes
    R_bg = X - D.background_atoms @ codes[T:]
    recon = 0.5 * np.sum(
        w * (p * _column_sq_norms(R_full) + (1.0 - p) * _column_sq_norms(R_bg))
    )
    l1 = params.lam * np.sum(
        w
        * (
            p * np.sum(np.abs(codes[:T]), axis=0)
            + np.sum(np.abs(codes[T:]), axis=0)
        )
    )
    tgt_old = D.target_atoms if target_atoms_old is None else target_atoms_old
    if gamma is None:
        gamma = gamma_matrix(D, params.gamma, tgt_old)
    disc = float(np.sum(gamma * (D.background_atoms.T @ tgt_old)))
    return float(recon + l1 + disc)


def objective(
    bags: list[Bag],
    D: Dictionary,
    codes: np.ndarray,
    posteriors: np.ndarray,
    params: FumiParams,
    gamma: np.ndarray | None = None,
    target_atoms_old: np.ndarray | None = None,
) -> float:
    """Expected objective value over all bag instances.

    Sums, per instance with weight w (psi on positive bags, 1 otherwise),

        w * ( P(z=1)/2 * ||x - D a||^2 + P(z=0)/2 * ||x - D_bg a_bg||^2
              + lam * (P(z=1)*||a_tgt||_1 + ||a_bg||_1) )

    plus the cross-coherence penalty sum_kt gamma[k,t] <d_bg_k, d_tgt_t_old>.
    `codes` is a (T+M, N) matrix over the canonical bag flattening.  When
    gamma / target_atoms_old are omitted they are taken from D itself
    (self-consistent evaluation); pass the frozen per-iteration values to
    reproduce the EM surrogate exactly.
    """
    X, is_pos, _ = flatten_bags(bags)
    codes = np.asarray(codes, dtype=float)
    posteriors = np.asarray(posteriors, dtype=float)
    if codes.shape != (D.n_target + D.n_background, X.shape[1]):
        raise ValueError("codes matrix shape does not match bags and dictionary")
    psi = resolve_psi(is_pos, params)
    return _objective_matrices(
        X, is_pos, D, codes, posteriors, params, psi, gamma, target_atoms_old
    )


def _clamp_posteriors(p: np.ndarray) -> np.ndarray:
    return np.clip(p, _POSTERIOR_CLAMP, 1.0 - _POSTERIOR_CLAMP)


def update_target_atom(
    bags: list[Bag],
    codes: np.ndarray,
    posteriors: np.ndarray,
    D: Dictionary,
    t: int,
):
    """Closed-form minimizer of the expected objective over target atom t,
    everything else held fixed.  Returns (new_atom, stale): the atom is
    pre-normalization, and stale=True (atom returned unchanged) when the
    update is undefined because sum_i P_i * a_it^2 is exactly zero.
    The positive-bag weight psi cancels and does not appear."""
    X, is_pos, _ = flatten_bags(bags)
    codes = np.asarray(codes, dtype=float)
    p = np.where(is_pos, np.asarray(posteriors, dtype=float), 0.0)
    Xp, cp, pp = X[:, is_pos], codes[:, is_pos], p[is_pos]
    a_t = cp[t, :]
    den_exact = float(np.sum(pp * a_t * a_t))
    if den_exact == 0.0:
        return D.target_atoms[:, t].copy(), True
    pc = _clamp_posteriors(pp)
    den = float(np.sum(pc * a_t * a_t))
    R_full = Xp - D.atoms @ cp
    num = R_full @ (pc * a_t) + den * D.target_atoms[:, t]
    return num / den, False


def update_background_atom(
    bags: list[Bag],
    codes: np.ndarray,
    posteriors: np.ndarray,
    D: Dictionary,
    k: int,
    params: FumiParams,
    target_atoms_old: np.ndarray | None = None,
):
    """Closed-form minimizer of the expected objective over background
    atom k, everything else held fixed, including the cross-coherence pull
    away from the previous target atoms.  Returns (new_atom, stale) like
    update_target_atom; stale when psi*sum_pos a_ik^2 + sum_neg a_ik^2 is
    exactly zero."""
    X, is_pos, _ = flatten_bags(bags)
    codes = np.asarray(codes, dtype=float)
    T = D.n_target
    psi = resolve_psi(is_pos, params)
    p = np.where(is_pos, np.asarray(posteriors, dtype=float), 0.0)
    a_k = codes[T + k, :]
    den = float(psi * np.sum(a_k[is_pos] ** 2) + np.sum(a_k[~is_pos] ** 2))
    if den == 0.0:
        return D.background_atoms[:, k].copy(), True
    tgt_old = D.target_atoms if target_atoms_old is None else np.asarray(target_atoms_old, dtype=float)
    gamma_row = gamma_matrix(D, params.gamma, tgt_old)[k]

    pc = _clamp_posteriors(p[is_pos])
    Xp, cp = X[:, is_pos], codes[:, is_pos]
    Xn, cn = X[:, ~is_pos], codes[:, ~is_pos]
    R_full_pos = Xp - D.atoms @ cp
    R_bg_pos = Xp - D.background_atoms @ cp[T:]
    R_bg_neg = Xn - D.background_atoms @ cn[T:]
    num = (
        psi * (R_full_pos @ (pc * a_k[is_pos]) + R_bg_pos @ ((1.0 - pc) * a_k[is_pos]))
        + R_bg_neg @ a_k[~is_pos]
        + den * D.background_atoms[:, k]
        - tgt_old @ gamma_row
    )
    return num / den, False


def _normalize_or_none(v: np.ndarray):
    n = np.linalg.norm(v)
    return None if n == 0.0 else v / n


def _farthest_point_init(Xn: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """Pick m negative instances by farthest-point sampling on cosine
    distance and return them normalized as initial background atoms."""
    d, n = Xn.shape
    norms = np.linalg.norm(Xn, axis=0)
    ok = norms > 0
    U = np.where(ok, 1.0, 0.0) * Xn / np.where(ok, norms, 1.0)
    atoms = np.empty((d, m))
    if n == 0:
        for j in range(m):
            atoms[:, j] = _random_unit(d, rng)
        return atoms
    first = int(rng.integers(n))
    chosen = [first]
    min_dist = 1.0 - U.T @ U[:, first]
    min_dist[first] = -np.inf
    for j in range(1, min(m, n)):
        nxt = int(np.argmax(min_dist))
        chosen.append(nxt)
        min_dist = np.minimum(min_dist, 1.0 - U.T @ U[:, nxt])
        min_dist[nxt] = -np.inf
    for j, idx in enumerate(chosen):
        a = _normalize_or_none(Xn[:, idx])
        atoms[:, j] = a if a is not None else _random_unit(d, rng)
    for j in range(len(chosen), m):
        atoms[:, j] = _random_unit(d, rng)
    return atoms


def _random_unit(d: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(d)
    n = np.linalg.norm(v)
    while n == 0.0:
        v = rng.standard_normal(d)
        n = np.linalg.norm(v)
    return v / n


def fit(bags: list[Bag], params: FumiParams, seed: int = 0, inner_objective_trace: bool = False) -> FitResult:
    """Run the full EM learner on labeled bags.

    Deterministic given (bags, params, seed).  Background atoms start from
    farthest-point-sampled negative instances (cosine distance), target
    atoms from the positive instances the initial background dictionary
    reconstructs worst (their background-removed residuals, normalized);
    codes get a short ISTA warm-up before the first E-step.

    Per EM iteration: E-step posteriors from the current background
    reconstruction; per-atom closed-form updates applied sequentially,
    each renormalized to unit norm immediately; an atom whose update is
    undefined (stale) is kept, and after 3 consecutive stale iterations is
    re-seeded from the highest-residual instance of its class; then
    inner_iters ISTA code steps.  Stops when no atom moves more than
    params.tol or after max_em_iters iterations.

    With inner_objective_trace=True the result also carries, per EM
    iteration, the objective value before the code updates and after each
    individual inner code step (atoms, posteriors, and the coherence
    penalty frozen), which is the quantity the step-size bound guarantees
    to be non-increasing.
    """
    params.validate()
    X, is_pos, bag_index = flatten_bags(bags)
    d, n = X.shape
    n_pos = int(np.count_nonzero(is_pos))
    n_neg = n - n_pos
    if n_pos == 0:
        raise ValueError("cannot learn target concept: no positive bags")
    if n_neg == 0:
        raise ValueError("cannot model background: no negative bags")
    psi = resolve_psi(is_pos, params)
    T, M = params.T, params.M
    rng = np.random.default_rng(seed)

    Xp = np.ascontiguousarray(X[:, is_pos])
    Xn = np.ascontiguousarray(X[:, ~is_pos])

    # --- initialization ---------------------------------------------------
    D_bg = _farthest_point_init(Xn, M, rng)
    eta_bg = safe_step_length(D_bg)
    G_bg = D_bg.T @ D_bg
    A_neg = kernels.ista_negative(
        G_bg, D_bg.T @ Xn, np.zeros((M, n_neg)), params.lam, eta_bg, _WARMUP_STEPS
    )
    A_pos_bg = kernels.ista_negative(
        G_bg, D_bg.T @ Xp, np.zeros((M, n_pos)), params.lam, eta_bg, _WARMUP_STEPS
    )
    R_init = Xp - D_bg @ A_pos_bg
    resid = _column_sq_norms(R_init)
    order = sorted(range(n_pos), key=lambda j: (-resid[j], j))
    D_tgt = np.empty((d, T))
    for j in range(T):
        a = None
        if j < len(order):
            a = _normalize_or_none(R_init[:, order[j]])
        D_tgt[:, j] = a if a is not None else _random_unit(d, rng)

    D = Dictionary(D_tgt, D_bg)
    eta = safe_step_length(D)
    corr_pos = np.vstack([D.target_atoms.T @ Xp, D.background_atoms.T @ Xp])
    A_pos = kernels.ista_positive(
        D.atoms.T @ D.atoms,
        G_bg,
        corr_pos,
        np.ones(n_pos),
        np.vstack([np.zeros((T, n_pos)), A_pos_bg]),
        params.lam,
        eta,
        _WARMUP_STEPS,
        T,
    )

    # residual caches over positive / negative instance blocks
    R_full_pos = Xp - D.atoms @ A_pos
    R_bg_pos = Xp - D.background_atoms @ A_pos[T:]
    R_bg_neg = Xn - D.background_atoms @ A_neg

    stale_tgt = np.zeros(T, dtype=int)
    stale_bg = np.zeros(M, dtype=int)
    trace: list[float] = []
    inner_trace: list[np.ndarray] = []
    p_pos = np.zeros(n_pos)
    n_iterations = 0

    def _objective_now(gamma, tgt_old):
        codes = np.zeros((T + M, n))
        codes[:, is_pos] = A_pos
        codes[T:, ~is_pos] = A_neg
        post = np.zeros(n)
        post[is_pos] = p_pos
        return _objective_matrices(
            X, is_pos, D, codes, post, params, psi, gamma, tgt_old
        )

    for em in range(params.max_em_iters):
        n_iterations = em + 1
        # --- E-step: posterior from current background reconstruction ----
        p_pos = -np.expm1(-params.beta * _column_sq_norms(R_bg_pos))
        np.clip(p_pos, 0.0, 1.0, out=p_pos)
        pc = _clamp_posteriors(p_pos)

        tgt_old = D.target_atoms.copy()
        atoms_before = D.atoms.copy()
        gamma = gamma_matrix(D, params.gamma, tgt_old)

        # --- M-step: sequential closed-form atom updates ------------------
        for t in range(T):
            a_t = A_pos[t, :]
            den_exact = float(np.sum(p_pos * a_t * a_t))
            new_atom = None
            if den_exact != 0.0:
                den = float(np.sum(pc * a_t * a_t))
                raw = R_full_pos @ (pc * a_t) + den * D.target_atoms[:, t]
                new_atom = _normalize_or_none(raw / den)
            if new_atom is None:
                stale_tgt[t] += 1
                if stale_tgt[t] >= _STALE_LIMIT:
                    j = int(np.argmax(_column_sq_norms(R_full_pos)))
                    seed_atom = _normalize_or_none(Xp[:, j])
                    new_atom = seed_atom if seed_atom is not None else _random_unit(d, rng)
                    stale_tgt[t] = 0
                else:
                    continue
            else:
                stale_tgt[t] = 0
            delta = new_atom - D.target_atoms[:, t]
            D.target_atoms[:, t] = new_atom
            R_full_pos -= np.outer(delta, a_t)

        for k in range(M):
            a_kp = A_pos[T + k, :]
            a_kn = A_neg[k, :]
            den = float(psi * (a_kp @ a_kp) + a_kn @ a_kn)
            new_atom = None
            if den != 0.0:
                raw = (
                    psi * (R_full_pos @ (pc * a_kp) + R_bg_pos @ ((1.0 - pc) * a_kp))
                    + R_bg_neg @ a_kn
                    + den * D.background_atoms[:, k]
                    - tgt_old @ gamma[k]
                )
                new_atom = _normalize_or_none(raw / den)
            if new_atom is None:
                stale_bg[k] += 1
                if stale_bg[k] >= _STALE_LIMIT:
                    j = int(np.argmax(_column_sq_norms(R_bg_neg)))
                    seed_atom = _normalize_or_none(Xn[:, j])
                    new_atom = seed_atom if seed_atom is not None else _random_unit(d, rng)
                    stale_bg[k] = 0
                else:
                    continue
            else:
                stale_bg[k] = 0
            delta = new_atom - D.background_atoms[:, k]
            D.background_atoms[:, k] = new_atom
            R_full_pos -= np.outer(delta, a_kp)
            R_bg_pos -= np.outer(delta, a_kp)
            R_bg_neg -= np.outer(delta, a_kn)

        # --- code updates --------------------------------------------------
        eta = safe_step_length(D)
        eta_bg = safe_step_length(D.background_atoms)
        G = D.atoms.T @ D.atoms
        G_bg = D.background_atoms.T @ D.background_atoms
        corr_pos = np.vstack(
            [D.target_atoms.T @ Xp, D.background_atoms.T @ Xp]
        )
        corr_neg = D.background_atoms.T @ Xn
        if inner_objective_trace:
            vals = [_objective_now(gamma, tgt_old)]
            for _ in range(params.inner_iters):
                A_pos = kernels.ista_positive(
                    G, G_bg, corr_pos, p_pos, A_pos, params.lam, eta, 1, T
                )
                A_neg = kernels.ista_negative(
                    G_bg, corr_neg, A_neg, params.lam, eta_bg, 1
                )
                R_full_pos = Xp - D.atoms @ A_pos
                R_bg_pos = Xp - D.background_atoms @ A_pos[T:]
                R_bg_neg = Xn - D.background_atoms @ A_neg
                vals.append(_objective_now(gamma, tgt_old))
            inner_trace.append(np.asarray(vals))
        else:
            A_pos = kernels.ista_positive(
                G, G_bg, corr_pos, p_pos, A_pos, params.lam, eta, params.inner_iters, T
            )
            A_neg = kernels.ista_negative(
                G_bg, corr_neg, A_neg, params.lam, eta_bg, params.inner_iters
            )
            R_full_pos = Xp - D.atoms @ A_pos
            R_bg_pos = Xp - D.background_atoms @ A_pos[T:]
            R_bg_neg = Xn - D.background_atoms @ A_neg

        trace.append(_objective_now(gamma, tgt_old))

        atom_change = np.linalg.norm(D.atoms - atoms_before, axis=0).max()
        if atom_change < params.tol:
            break

    codes = np.zeros((T + M, n))
    codes[:, is_pos] = A_pos
    codes[T:, ~is_pos] = A_neg
    posteriors = np.zeros(n)
    posteriors[is_pos] = p_pos
    return FitResult(
        dictionary=D,
        codes=codes,
        posteriors=posteriors,
        objective_trace=trace,
        is_positive=is_pos,
        bag_index=bag_index,
        psi=psi,
        n_iterations=n_iterations,
        inner_objective_trace=inner_trace,
    )
