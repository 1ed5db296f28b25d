"""Two-node matrix-product-operator (MPO) algebra.

An :class:`MpoPair` factorises a large weight matrix into two rank-3
tensors joined by a virtual bond of dimension ``chi``.  Index
conventions, fixed once here and relied on everywhere else:

* ``w1`` has shape ``(p, chi, p)`` — bond index in the middle; the bond
  slice ``w1[:, a, :]`` is the ``p x p`` left Kronecker factor ``A_a``.
* ``w2`` has shape ``(chi, q, q)`` — bond index first; ``w2[a]`` is the
  ``q x q`` right factor ``B_a``.
* The contracted weight matrix is ``sum_a kron(A_a, B_a)`` of shape
  ``(p*q, p*q)``, stored row-major, and is applied to row vectors as
  ``x @ W``.

The symmetric case ``p == q == d`` carries ``2*chi*d**2`` trainable
entries while the contracted matrix has ``d**4``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return `a` as a finite float64 2-D array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"{name} must be 2-D with positive dims, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def as_rank3(a, name: str = "tensor") -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 3 or min(m.shape) < 1:
        raise ValueError(f"{name} must be 3-D with positive dims, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


@dataclass(frozen=True)
class MpoPair:
    """Two rank-3 weight tensors joined by a bond of dimension chi."""

    w1: np.ndarray  # (p, chi, p)
    w2: np.ndarray  # (chi, q, q)

    def __post_init__(self):
        w1 = as_rank3(self.w1, "w1")
        w2 = as_rank3(self.w2, "w2")
        object.__setattr__(self, "w1", w1)
        object.__setattr__(self, "w2", w2)
        if w1.shape[0] != w1.shape[2]:
            raise ValueError(f"w1 must have shape (p, chi, p), got {w1.shape}")
        if w2.shape[1] != w2.shape[2]:
            raise ValueError(f"w2 must have shape (chi, q, q), got {w2.shape}")
        if w1.shape[1] != w2.shape[0]:
            raise ValueError(
                f"bond dims disagree: w1 has {w1.shape[1]}, w2 has {w2.shape[0]}"
            )

    @property
    def bond_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def phys_dims(self) -> tuple[int, int]:
        return self.w1.shape[0], self.w2.shape[1]

    @property
    def width(self) -> int:
        """Input/output dimension of the contracted matrix."""
        p, q = self.phys_dims
        return p * q

    @property
    def param_count(self) -> int:
        return self.w1.size + self.w2.size


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product of square matrices.

    ``kron(a, b)[i1*q + j1, i2*q + j2] == a[i1, i2] * b[j1, j2]`` where
    q is the dimension of b.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[0] != a.shape[1] or b.shape[0] != b.shape[1]:
        raise ValueError(f"kron factors must be square, got {a.shape} and {b.shape}")
    return np.kron(a, b)


def contract_mpo(mpo: MpoPair) -> np.ndarray:
    """Contract the bond index and reshape to the (p*q, p*q) weight matrix.

    Equals sum over bond slices of kron(A_a, B_a); computed as a single
    einsum so the kron-sum form remains an independent test oracle.
    """
    p, q = mpo.phys_dims
    w = np.einsum("uav,aij->uivj", mpo.w1, mpo.w2)
    return np.ascontiguousarray(w.reshape(p * q, p * q))


def rearrangement(w: np.ndarray, d: int | None = None) -> np.ndarray:
    """Kronecker-rank rearrangement of a (d*d, d*d) matrix.

    Maps ``w[(i1*d + j1), (i2*d + j2)]`` to ``R[(i1*d + i2), (j1*d + j2)]``
    so that a Kronecker product ``kron(a, b)`` becomes the rank-1 outer
    product ``vec(a) vec(b)^T`` (row-major vec).  The rank of R bounds
    the bond dimension needed to represent w as an MpoPair.  Applying
    the rearrangement twice returns the input.
    """
    w = as_matrix(w, "w")
    n = w.shape[0]
    if w.shape[1] != n:
        raise ValueError(f"rearrangement needs a square matrix, got {w.shape}")
    if d is None:
        d = round(np.sqrt(n))
        if d * d != n:
            raise ValueError(f"matrix size {n} is not a perfect square; pass d")
    q = n // d
    if d * q != n:
        raise ValueError(f"declared factor {d} does not divide size {n}")
    blocks = w.reshape(d, q, d, q)  # [i1, j1, i2, j2]
    return np.ascontiguousarray(blocks.transpose(0, 2, 1, 3).reshape(d * d, q * q))


def kron_rank(w: np.ndarray, d: int | None = None, rel_tol: float = 1e-10) -> int:
    """Numerical Kronecker rank: singular values of the rearrangement
    above ``rel_tol`` times the largest one."""
    s = np.linalg.svd(rearrangement(w, d), compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def fit_mpo_to_matrix(w: np.ndarray, chi: int, d: int | None = None) -> MpoPair:
    """Best Frobenius-norm MpoPair approximation of a (d*d, d*d) matrix.

    Truncated SVD of the rearrangement gives the optimal rank-chi
    Kronecker-sum approximation; with chi >= kron_rank(w) the fit is
    exact up to floating-point error.
    """
    w = as_matrix(w, "w")
    n = w.shape[0]
    if d is None:
        d = round(np.sqrt(n))
    q = n // d
    u, s, vt = np.linalg.svd(rearrangement(w, d))
    chi = min(chi, len(s))
    scale = np.sqrt(s[:chi])
    w1 = (u[:, :chi] * scale).reshape(d, d, chi).transpose(0, 2, 1)
    w2 = (vt[:chi] * scale[:, None]).reshape(chi, q, q)
    return MpoPair(np.ascontiguousarray(w1), np.ascontiguousarray(w2))
