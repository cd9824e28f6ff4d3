"""Uncertainty scores computed from model evidence.

Entropy scores
    ``pe_white`` / ``pe_black`` are the Shannon entropy of the option
    distribution, taken from model probabilities or from sampled-answer
    frequencies. ``se_black`` / ``se_white`` are the entropy over semantic
    clusters, with cluster mass given by member counts or by summed sequence
    probabilities (renormalized across clusters).

Similarity-graph scores (``W`` is a symmetric response-similarity matrix,
``L = I - D^-1/2 W D^-1/2`` its normalized Laplacian)
    ``u_deg``  = 1 - mean(W)
    ``u_eigv`` = sum_k max(0, 1 - lambda_k(L))
    ``u_ecc``  = Frobenius norm of the centered spectral embedding built from
    the ``k`` lowest eigenvectors of ``L`` whose eigenvalue is below 1.

Higher is more uncertain for every score. All natural logarithms.
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

import numpy as np

PROB_SUM_TOL = 1e-6
JACOBI_TOL = 1e-10
JACOBI_MAX_SWEEPS = 100
# eigenvalues at or above this carry no cluster structure and are excluded from
# the eccentricity embedding
ECC_EIGEN_CUTOFF = 1.0 - 1e-9


def shannon_entropy(probs: Sequence[float]) -> float:
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("probability vector must be a nonempty 1-d sequence")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError("probabilities must be finite and nonnegative")
    total = math.fsum(p)
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise ValueError(f"probabilities sum to {total:.6g}, not 1")
    nz = p[p > 0]
    return max(0.0, -math.fsum(nz * np.log(nz)))


def pe_white(option_probs: Sequence[float]) -> float:
    return shannon_entropy(option_probs)


def pe_black(sampled_option_ids: Sequence[int], k: int) -> float:
    """Entropy of the empirical answer frequencies over ``k`` options."""
    ids = np.asarray(sampled_option_ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("need at least one sampled answer")
    if k < 1:
        raise ValueError(f"option count must be positive, got {k}")
    if ids.min() < 0 or ids.max() >= k:
        raise ValueError(f"sampled option ids must lie in [0, {k})")
    freq = np.bincount(ids, minlength=k) / ids.size
    return shannon_entropy(freq)


def se_black(cluster_labels: Sequence[int]) -> float:
    if len(cluster_labels) == 0:
        raise ValueError("need at least one sampled response")
    counts = Counter(cluster_labels)
    n = len(cluster_labels)
    # sorted so the fsum order does not depend on label order
    return shannon_entropy(sorted(c / n for c in counts.values()))


def se_white(cluster_labels: Sequence[int], sequence_probs: Sequence[float]) -> float:
    if len(cluster_labels) != len(sequence_probs):
        raise ValueError(
            f"{len(cluster_labels)} cluster labels but {len(sequence_probs)} sequence probabilities"
        )
    if len(cluster_labels) == 0:
        raise ValueError("need at least one sampled response")
    mass: dict[int, list[float]] = {}
    for label, prob in zip(cluster_labels, sequence_probs):
        if not 0.0 < prob <= 1.0:
            raise ValueError(f"sequence probabilities must lie in (0, 1], got {prob}")
        mass.setdefault(label, []).append(prob)
    sums = sorted(math.fsum(sorted(v)) for v in mass.values())
    total = math.fsum(sums)
    return shannon_entropy([s / total for s in sums])


# -- similarity graphs -------------------------------------------------------


def normalize(raw) -> np.ndarray:
    """Symmetrize, clamp to [0, 1] and set a unit diagonal."""
    w = np.asarray(raw, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError(f"similarity matrix must be square, got shape {w.shape}")
    if w.shape[0] == 0:
        raise ValueError("similarity matrix is empty")
    if not np.all(np.isfinite(w)):
        raise ValueError("similarity matrix has non-finite entries")
    w = np.clip(0.5 * (w + w.T), 0.0, 1.0)
    np.fill_diagonal(w, 1.0)
    return w


def jacobi_eigh(a, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS):
    """Eigen-decomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues ascending and
    eigenvectors as columns. Sweeps stop once the off-diagonal Frobenius norm
    drops to ``tol``.
    """
    a = np.array(a, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("matrix must be square")
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-12 * max(1.0, float(np.abs(a).max(initial=0.0)))):
        raise ValueError("matrix must be symmetric")
    v = np.eye(n)
    for _ in range(max_sweeps):
        off = float(np.linalg.norm(a - np.diag(np.diag(a))))
        if off <= tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                diff = a[q, q] - a[p, p]
                if abs(apq) < 1e-150 * max(abs(diff), 1.0):
                    a[p, q] = a[q, p] = 0.0
                    continue
                theta = diff / (2.0 * apq)
                if abs(theta) > 1e100:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise RuntimeError("Jacobi iteration did not converge")
    vals = np.diag(a).copy()
    order = np.argsort(vals, kind="stable")
    return vals[order], v[:, order]


def _laplacian(w: np.ndarray) -> np.ndarray:
    d = w.sum(axis=1)
    if np.any(d <= 0):
        raise ValueError("similarity rows must have positive sums")
    inv = 1.0 / np.sqrt(d)
    lap = np.eye(w.shape[0]) - inv[:, None] * w * inv[None, :]
    return 0.5 * (lap + lap.T)


def laplacian_spectrum(w) -> np.ndarray:
    """Ascending eigenvalues of the normalized Laplacian of ``w``."""
    vals, _ = jacobi_eigh(_laplacian(np.asarray(w, dtype=float)))
    return vals


def u_eigv(w) -> float:
    lam = laplacian_spectrum(w)
    return float(math.fsum(np.maximum(0.0, 1.0 - lam)))


def u_deg(w) -> float:
    w = np.asarray(w, dtype=float)
    n = w.shape[0]
    return float(1.0 - math.fsum(w.ravel()) / (n * n))


def _canonical_signs(vecs: np.ndarray) -> np.ndarray:
    vecs = vecs.copy()
    for j in range(vecs.shape[1]):
        col = vecs[:, j]
        i = int(np.argmax(np.abs(col)))
        if col[i] < 0:
            vecs[:, j] = -col
    return vecs


def u_ecc(w, k: int = 2) -> float:
    w = np.asarray(w, dtype=float)
    n = w.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"embedding dimension must lie in [1, {n}], got {k}")
    vals, vecs = jacobi_eigh(_laplacian(w))
    keep = [j for j in range(k) if vals[j] < ECC_EIGEN_CUTOFF]
    if not keep:
        return 0.0
    emb = _canonical_signs(vecs[:, keep])
    centered = emb - emb.mean(axis=0, keepdims=True)
    return float(np.linalg.norm(centered))
