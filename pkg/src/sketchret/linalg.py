"""Dense numerical substrate: eigensolver, Sylvester solver, cosine
similarity, Lloyd k-means and seeded Gaussian sampling.

Matrices are C-ordered float64 numpy arrays throughout.  Randomness always
flows through an explicit ``numpy.random.Generator`` seeded with PCG64
(``make_rng``), so every operation is reproducible from a 64-bit seed.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    CardinalityError,
    DegenerateInputError,
    DimensionError,
    SingularityError,
    SymmetryError,
)

SYMMETRY_RTOL = 1e-10
KMEANS_SHIFT_TOL = 1e-6
KMEANS_MAX_ITER = 100


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator (PCG64) for the given 64-bit seed.

    Identical seeds yield identical streams on every platform; normal
    variates come from numpy's ziggurat transform and are drawn
    sequentially in C order, so the first rows of a large sample equal a
    smaller sample under the same seed.
    """
    return np.random.Generator(np.random.PCG64(seed))


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-d float64 array, rejecting non-finite entries."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-d, got ndim={arr.ndim}")
    if not np.isfinite(arr).all():
        raise DegenerateInputError(f"{name} contains non-finite entries")
    return arr


def sym_eig(a) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix.

    Returns (eigvals, eigvecs) with eigenvalues sorted descending and
    eigenvectors as orthonormal columns, so a = V @ diag(w) @ V.T.
    """
    a = as_matrix(a, "a")
    n, m = a.shape
    if n != m:
        raise DimensionError(f"expected square matrix, got {n}x{m}")
    scale = max(1.0, float(np.abs(a).max()))
    if np.abs(a - a.T).max() > SYMMETRY_RTOL * scale:
        raise SymmetryError("matrix is not symmetric within 1e-10 relative")
    a = 0.5 * (a + a.T)
    try:
        w, v = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:  # LAPACK iteration cap exceeded
        from .errors import ConvergenceError

        raise ConvergenceError(f"eigendecomposition did not converge: {exc}") from exc
    order = np.argsort(w)[::-1]
    return w[order], v[:, order]


def solve_sylvester(a, b, c) -> np.ndarray:
    """Solve A @ W + W @ B = C for symmetric PSD A (n x n) and B (m x m).

    Both coefficients are diagonalized (A = U diag(p) U', B = V diag(q) V'),
    the equation becomes elementwise in the rotated frame, and W is rotated
    back: W = U @ (U'CV / (p_i + q_j)) @ V'.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    c = as_matrix(c, "c")
    n, m = a.shape[0], b.shape[0]
    if c.shape != (n, m):
        raise DimensionError(
            f"c must be {n}x{m} to match a ({a.shape[0]}x{a.shape[1]}) and "
            f"b ({b.shape[0]}x{b.shape[1]}), got {c.shape[0]}x{c.shape[1]}"
        )
    p, u = sym_eig(a)
    q, v = sym_eig(b)
    denom = p[:, None] + q[None, :]
    tol = 1e-12 * max(1.0, float(np.abs(p).max() + np.abs(q).max()))
    bad = np.abs(denom) <= tol
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise SingularityError(
            f"singular pencil: eigenvalue pair ({p[i]:.6e}, {q[j]:.6e}) "
            f"at indices ({i}, {j}) sums to zero"
        )
    c_rot = u.T @ c @ v
    return u @ (c_rot / denom) @ v.T


def kron_solve_oracle(a, b, c) -> np.ndarray:
    """Brute-force Sylvester solve via the Kronecker-product linear system.

    Builds the dense (n*m) x (n*m) system (I (x) A + B' (x) I) vec(W) = vec(C)
    with column-stacking vec and solves it by direct elimination.  Test
    oracle only; dimensions are capped at 16.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    c = as_matrix(c, "c")
    n, m = a.shape[0], b.shape[0]
    if a.shape != (n, n) or b.shape != (m, m) or c.shape != (n, m):
        raise DimensionError("kron_solve_oracle: inconsistent shapes")
    if n > 16 or m > 16:
        raise DimensionError("kron_solve_oracle supports dims <= 16 only")
    big = np.kron(np.eye(m), a) + np.kron(b.T, np.eye(n))
    try:
        vec_w = np.linalg.solve(big, c.reshape(-1, order="F"))
    except np.linalg.LinAlgError as exc:
        raise SingularityError(f"Kronecker system is singular: {exc}") from exc
    return vec_w.reshape((n, m), order="F")


def cosine_similarity(u, v) -> float:
    """Cosine of the angle between two vectors, in [-1, 1]."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise DimensionError(f"vector lengths differ: {u.size} vs {v.size}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise DegenerateInputError("cosine similarity of a zero-norm vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def _kmeans_assign(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, float]:
    # squared distances point -> centroid; ties go to the lower index via argmin
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    assign = np.argmin(d2, axis=1)
    objective = float(d2[np.arange(points.shape[0]), assign].sum())
    return assign, objective


def kmeans(
    points,
    k: int,
    rng: np.random.Generator,
    max_iter: int = KMEANS_MAX_ITER,
    shift_tol: float = KMEANS_SHIFT_TOL,
    trace: list | None = None,
) -> np.ndarray:
    """Lloyd k-means; returns the k x d centroid matrix.

    Initialization samples k distinct rows through ``rng``.  An empty
    cluster is reseeded with the point currently farthest from its
    centroid.  Iteration stops when the max centroid shift drops below
    ``shift_tol`` or after ``max_iter`` rounds.  If ``trace`` is a list it
    receives the post-assignment objective of every iteration; the
    objective is asserted nonincreasing.
    """
    points = as_matrix(points, "points")
    n, _ = points.shape
    if k < 1 or n < k:
        raise CardinalityError(f"kmeans needs n >= k >= 1, got n={n}, k={k}")
    idx = rng.choice(n, size=k, replace=False)
    centroids = points[idx].copy()
    prev_objective = np.inf
    for _ in range(max_iter):
        assign, objective = _kmeans_assign(points, centroids)
        if objective > prev_objective + 1e-9 * max(1.0, prev_objective):
            raise AssertionError("k-means objective increased across an iteration")
        if trace is not None:
            trace.append(objective)
        prev_objective = objective
        new_centroids = centroids.copy()
        for j in range(k):
            members = assign == j
            if members.any():
                new_centroids[j] = points[members].mean(axis=0)
        empty = [j for j in range(k) if not (assign == j).any()]
        if empty:
            d = ((points - new_centroids[assign]) ** 2).sum(axis=1)
            for j in empty:
                far = int(np.argmax(d))
                new_centroids[j] = points[far]
                d[far] = -1.0  # each empty cluster takes a distinct point
        shift = float(np.abs(new_centroids - centroids).max())
        centroids = new_centroids
        if shift < shift_tol and not empty:
            break
    return centroids


def gaussian_sample(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """n x d matrix of i.i.d. standard normal draws from ``rng``."""
    if n < 1 or d < 1:
        raise CardinalityError(f"sample shape must be positive, got {n}x{d}")
    return rng.standard_normal((n, d))
