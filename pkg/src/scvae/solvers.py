"""Lasso solvers over a fixed dictionary: ISTA/FISTA references and unrolled LISTA."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .dictionary import Dictionary
from .errors import ConfigError, DimensionError, DomainError, NumericalError

DIVERGENCE_TOL = 1e-6


@dataclass
class SparseProblem:
    x: np.ndarray
    dictionary: Dictionary
    alpha: float

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.alpha < 0:
            raise DomainError(f"alpha must be >= 0, got {self.alpha}")
        if self.x.shape != (self.dictionary.n,):
            raise DimensionError(f"x has shape {self.x.shape}, dictionary expects ({self.dictionary.n},)")
        if not np.all(np.isfinite(self.x)):
            raise DomainError("x must be finite")


@dataclass
class SparseCode:
    z: np.ndarray
    iterations_run: int
    final_energy: float
    energies: list = field(default_factory=list, repr=False)


def energy(problem: SparseProblem, z) -> float:
    """0.5 * ||x - D z||^2 + alpha * ||z||_1."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (problem.dictionary.K,):
        raise DimensionError(f"z has shape {z.shape}, expected ({problem.dictionary.K},)")
    r = problem.x - problem.dictionary.atoms @ z
    return 0.5 * float(r @ r) + problem.alpha * float(np.abs(z).sum())


def ista_operators(dictionary: Dictionary, alpha: float):
    """Filter matrix, mutual inhibition matrix and threshold vector of the ISTA recursion."""
    L = dictionary.lipschitz_bound
    d = dictionary.atoms
    w_e = d.T / L
    s = np.eye(dictionary.K) - (d.T @ d) / L
    theta = np.full(dictionary.K, alpha / L)
    return w_e, s, theta


def _check_budget(max_iters, tol):
    if max_iters < 1:
        raise ConfigError("max_iters must be >= 1")
    if tol <= 0:
        raise ConfigError("tol must be > 0")


def _loop_inputs(problem: SparseProblem, max_iters: int):
    """Stacked operator [S; -D] and offset [W_e x; x] shared by both compiled loops."""
    w_e, s, theta = ista_operators(problem.dictionary, problem.alpha)
    m = np.asfortranarray(np.vstack([s, -problem.dictionary.atoms]))
    c = np.concatenate([w_e @ problem.x, problem.x])
    return m, c, theta, np.zeros(max_iters + 1)


def ista_solve(problem: SparseProblem, max_iters: int = 1000, tol: float = 1e-8) -> SparseCode:
    _check_budget(max_iters, tol)
    from ._kernels import ista_loop

    m, c, theta, energies = _loop_inputs(problem, max_iters)
    z, it, status = ista_loop(m, c, theta, float(problem.alpha), max_iters, tol, DIVERGENCE_TOL, energies)
    if status:
        raise NumericalError(
            f"ISTA diverged at iteration {it}: energy {energies[it - 1]:.6g} -> {energies[it]:.6g}")
    trace = energies[:it + 1].tolist()
    return SparseCode(z=z, iterations_run=int(it), final_energy=trace[-1], energies=trace)


def fista_solve(problem: SparseProblem, max_iters: int = 1000, tol: float = 1e-8) -> SparseCode:
    """FISTA. Momentum makes single steps (and short windows) non-monotone, so a
    diverging run is one whose 10-step mean energy climbs above the mean of the
    first 10 energies."""
    _check_budget(max_iters, tol)
    from ._kernels import fista_loop

    m, c, theta, energies = _loop_inputs(problem, max_iters)
    z, it, status = fista_loop(m, c, theta, float(problem.alpha), max_iters, tol, DIVERGENCE_TOL, energies)
    if status:
        recent = energies[it - 9:it + 1].mean()
        raise NumericalError(f"FISTA diverged at iteration {it}: 10-step mean energy rose to {recent:.6g}")
    trace = energies[:it + 1].tolist()
    return SparseCode(z=z, iterations_run=int(it), final_energy=trace[-1], energies=trace)


# ------------------------------------------------------------------- LISTA


@dataclass
class ListaParams:
    """Trainable unrolled-ISTA parameters; ``s_matrix`` is shared by every step."""

    w_e: ad.Tensor
    s_matrix: ad.Tensor
    theta: ad.Tensor
    steps: int

    def __post_init__(self):
        K, n = self.w_e.shape
        if self.s_matrix.shape != (K, K) or self.theta.shape != (K,):
            raise DimensionError(
                f"inconsistent LISTA shapes w_e={self.w_e.shape} s={self.s_matrix.shape} theta={self.theta.shape}")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")

    @property
    def K(self):
        return self.w_e.shape[0]

    @property
    def n(self):
        return self.w_e.shape[1]

    def tensors(self):
        return {"lista.w_e": self.w_e, "lista.s": self.s_matrix, "lista.theta": self.theta}

    def clamp_theta(self):
        np.maximum(self.theta.data, 0.0, out=self.theta.data)


def lista_init_from_dictionary(dictionary: Dictionary, alpha: float, steps: int, dtype=np.float64) -> ListaParams:
    if alpha < 0:
        raise DomainError(f"alpha must be >= 0, got {alpha}")
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    w_e, s, theta = ista_operators(dictionary, alpha)
    return ListaParams(
        w_e=ad.Tensor(w_e, requires_grad=True, dtype=dtype),
        s_matrix=ad.Tensor(s, requires_grad=True, dtype=dtype),
        theta=ad.Tensor(theta, requires_grad=True, dtype=dtype),
        steps=steps,
    )


def lista_batch_forward(params: ListaParams, xs: ad.Tensor) -> ad.Tensor:
    """Row-wise unrolled ISTA: z0 = h(W_e x), z_{t+1} = h(W_e x + S z_t); ``steps`` shrinkages."""
    if xs.ndim != 2 or xs.shape[1] != params.n:
        raise DimensionError(f"expected M x {params.n} inputs, got {xs.shape}")
    b = ad.matmul(xs, ad.transpose(params.w_e))
    z = ad.soft_threshold(b, params.theta)
    if params.steps > 1:
        s_t = ad.transpose(params.s_matrix)
        for _ in range(params.steps - 1):
            z = ad.soft_threshold(ad.add(b, ad.matmul(z, s_t)), params.theta)
    return z


def lista_forward(params: ListaParams, x: ad.Tensor) -> ad.Tensor:
    if not isinstance(x, ad.Tensor):
        x = ad.Tensor(x, dtype=params.w_e.dtype)
    if x.shape != (params.n,):
        raise DimensionError(f"expected a length-{params.n} vector, got {x.shape}")
    z = lista_batch_forward(params, ad.reshape(x, (1, params.n)))
    return ad.reshape(z, (params.K,))
