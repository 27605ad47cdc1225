"""Small dense linear algebra helpers.

The eigensolver is a cyclic Jacobi method that works on stacks of real
symmetric matrices, so a whole detuning scan can be diagonalized with one
call.  Matrices here are at most 16x16.
"""

import numpy as np

__all__ = ["jacobi_eigh", "gram_schmidt", "check_symmetric", "fix_signs"]


def check_symmetric(a, atol=1e-12):
    """Raise ``ValueError`` unless ``a`` (or every matrix in a stack) is symmetric.

    The tolerance is relative to the largest entry of each matrix.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {a.shape}")
    scale = np.maximum(np.abs(a).max(axis=(-2, -1)), np.finfo(float).tiny)
    asym = np.abs(a - np.swapaxes(a, -1, -2)).max(axis=(-2, -1))
    if np.any(asym > atol * scale):
        raise ValueError(
            f"matrix is not symmetric (max relative asymmetry {np.max(asym / scale):.3e})"
        )


def fix_signs(vectors):
    """Flip eigenvector columns so their largest-magnitude component is positive."""
    idx = np.argmax(np.abs(vectors), axis=-2)
    pivot = np.take_along_axis(vectors, idx[..., None, :], axis=-2)
    return vectors * np.where(pivot < 0, -1.0, 1.0)


def jacobi_eigh(a, tol=1e-14, max_sweeps=60):
    """Eigen-decomposition of real symmetric matrices by cyclic Jacobi rotations.

    Parameters
    ----------
    a : array_like, shape (..., n, n)
        Symmetric matrix or stack of matrices.
    tol : float
        Sweeps stop once the off-diagonal Frobenius norm falls below
        ``tol * ||a||_F`` for every matrix in the stack.
    max_sweeps : int
        Hard limit on the number of sweeps.

    Returns
    -------
    w : ndarray, shape (..., n)
        Eigenvalues in ascending order.
    v : ndarray, shape (..., n, n)
        Orthonormal eigenvectors as columns; the largest-magnitude component
        of each column is positive.
    """
    a = np.array(a, dtype=float)
    check_symmetric(a)
    n = a.shape[-1]
    a = 0.5 * (a + np.swapaxes(a, -1, -2))
    # Work at unit scale so squared norms neither underflow nor overflow.
    scale = np.abs(a).max(axis=(-2, -1), keepdims=True)
    scale = np.where(scale > 0, scale, 1.0)
    a = a / scale
    v = np.broadcast_to(np.eye(n), a.shape).copy()
    norm = np.sqrt(np.sum(a * a, axis=(-2, -1)))
    mask_off = ~np.eye(n, dtype=bool)

    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.where(mask_off, a, 0.0) ** 2, axis=(-2, -1)))
        if np.all(off <= tol * norm):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[..., p, q]
                if not np.any(apq):
                    continue
                app = a[..., p, p]
                aqq = a[..., q, q]
                nonzero = apq != 0.0
                safe_apq = np.where(nonzero, apq, 1.0)
                with np.errstate(over="ignore"):
                    # a negligible apq sends theta to inf and t to 0: no rotation
                    theta = (aqq - app) / (2.0 * safe_apq)
                t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
                t = np.where(theta == 0.0, 1.0, t)
                t = np.where(nonzero, t, 0.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                c_ = c[..., None]
                s_ = s[..., None]

                col_p = a[..., :, p].copy()
                col_q = a[..., :, q].copy()
                a[..., :, p] = c_ * col_p - s_ * col_q
                a[..., :, q] = s_ * col_p + c_ * col_q
                row_p = a[..., p, :].copy()
                row_q = a[..., q, :].copy()
                a[..., p, :] = c_ * row_p - s_ * row_q
                a[..., q, :] = s_ * row_p + c_ * row_q

                vp = v[..., :, p].copy()
                vq = v[..., :, q].copy()
                v[..., :, p] = c_ * vp - s_ * vq
                v[..., :, q] = s_ * vp + c_ * vq
    else:
        raise RuntimeError("Jacobi iteration did not converge")

    w = np.diagonal(a, axis1=-2, axis2=-1) * scale[..., 0]
    order = np.argsort(w, axis=-1, kind="stable")
    w = np.take_along_axis(w, order, axis=-1)
    v = np.take_along_axis(v, order[..., None, :], axis=-1)
    return w, fix_signs(v)


def gram_schmidt(vectors):
    """Orthonormalize the columns of ``vectors`` in order (modified Gram-Schmidt)."""
    q = np.array(vectors, dtype=float)
    n = q.shape[1]
    for k in range(n):
        for j in range(k):
            q[:, k] -= np.dot(q[:, j], q[:, k]) * q[:, j]
        q[:, k] /= np.linalg.norm(q[:, k])
    return q
