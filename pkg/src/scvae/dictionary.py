"""Fixed overcomplete DCT dictionary and its Lipschitz bound."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError

SAFETY_FACTOR = 1.01


@dataclass(frozen=True)
class Dictionary:
    """n x K matrix of unit-norm atoms (columns) plus L >= lambda_max(D^T D)."""

    atoms: np.ndarray
    lipschitz_bound: float

    @property
    def n(self) -> int:
        return self.atoms.shape[0]

    @property
    def K(self) -> int:
        return self.atoms.shape[1]

    def gram(self) -> np.ndarray:
        return self.atoms.T @ self.atoms


def _square_split(v: int) -> tuple[int, int]:
    """v = a * b with a <= b and a as large as possible."""
    a = math.isqrt(v)
    while v % a:
        a -= 1
    return a, v // a


def atom_grid(n: int, K: int) -> tuple[tuple[int, int], tuple[int, int]]:
    """Per-axis patch sizes (p1, p2) and frequency counts (q1, q2) with q_i >= p_i.

    Square n gives sqrt(n) x sqrt(n) patches. Among the admissible splits of K
    the one with the lowest mutual coherence wins, then the most square one.
    """
    if n < 1 or K < 1:
        raise ConfigError(f"n and K must be >= 1, got n={n}, K={K}")
    if K < n:
        raise ConfigError(f"need K >= n, got K={K}, n={n}")
    p1, p2 = _square_split(n)
    best, best_key = None, None
    for q1 in range(p1, K // p2 + 1):
        if K % q1:
            continue
        q2 = K // q1
        key = (round(_coherence(_kron_atoms(p1, p2, q1, q2)), 9), abs(q1 - q2))
        if best_key is None or key < best_key:
            best, best_key = (q1, q2), key
    if best is None:
        raise ConfigError(f"K={K} has no split q1 * q2 with q1 >= {p1} and q2 >= {p2}")
    return (p1, p2), best


def _coherence(atoms):
    g = np.abs(atoms.T @ atoms)
    np.fill_diagonal(g, 0.0)
    return float(g.max()) if g.size > 1 else 0.0


def _cosines(p: int, q: int) -> np.ndarray:
    i = np.arange(p)[:, None]
    j = np.arange(q)[None, :]
    m = np.cos(np.pi * (2 * i + 1) * j / (2 * q))
    # a no-op when q == p (DCT-II columns already sum to zero)
    if p > 1:
        m[:, 1:] -= m[:, 1:].mean(axis=0)
    return m


def _kron_atoms(p1, p2, q1, q2):
    atoms = np.kron(_cosines(p1, q1), _cosines(p2, q2))
    return atoms / np.linalg.norm(atoms, axis=0)


def dct_atoms(n: int, K: int) -> np.ndarray:
    """Separable overcomplete DCT atoms; columns reshape to p1 x p2 patches.

    With K == n this is the orthonormal 2-d DCT-II basis.
    """
    (p1, p2), (q1, q2) = atom_grid(n, K)
    return _kron_atoms(p1, p2, q1, q2)


def estimate_lipschitz(atoms, iters: int = 1000, tol: float = 1e-12, safety: float = SAFETY_FACTOR) -> float:
    """Power iteration on D^T D; returns the Rayleigh quotient times ``safety``.

    ``atoms`` may be a :class:`Dictionary` or a raw matrix (the latter is how
    tests exercise non-normalised matrices).
    """
    if iters < 1:
        raise ConfigError("iters must be >= 1")
    d = atoms.atoms if isinstance(atoms, Dictionary) else np.asarray(atoms, dtype=np.float64)
    gram = d.T @ d
    # deterministic start with mass on every eigendirection
    v = np.linspace(1.0, 2.0, gram.shape[0])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = gram @ v
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        new = float(v @ w)
        v = w / nrm
        if abs(new - est) <= tol * max(1.0, abs(new)):
            return float(v @ gram @ v) * safety
        est = new
    raise NumericalError(f"power iteration did not converge in {iters} iterations", last_estimate=est * safety)


def build_dct_dictionary(n: int, K: int) -> Dictionary:
    atoms = dct_atoms(n, K)
    atoms.setflags(write=False)
    return Dictionary(atoms=atoms, lipschitz_bound=estimate_lipschitz(atoms))


def dictionary_from_atoms(atoms: np.ndarray, iters: int = 1000) -> Dictionary:
    atoms = np.array(atoms, dtype=np.float64)
    atoms.setflags(write=False)
    return Dictionary(atoms=atoms, lipschitz_bound=estimate_lipschitz(atoms, iters=iters))
