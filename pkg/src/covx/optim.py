"""Minimizers, cross-validation folds and seeded random streams.

Both minimizers work on unconstrained parameter vectors. Constraints are
expressed by the caller, either through reparameterization or by returning
``+inf`` from the objective at infeasible points.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .exceptions import NumericalError

TOL_F = 1e-8
TOL_X = 1e-8
TOL_G = 1e-6
MAX_ITER = 5000
MAX_HALVINGS = 30


@dataclass
class OptimResult:
    x_min: np.ndarray
    f_min: float
    iterations: int
    converged: bool
    n_evaluations: int = 0


def nelder_mead(
    objective: Callable[[np.ndarray], float],
    x0: Sequence[float],
    tol_f: float = TOL_F,
    tol_x: float = TOL_X,
    max_iter: int = MAX_ITER,
    step: float | Sequence[float] | None = None,
) -> OptimResult:
    """Minimize ``objective`` with the Nelder-Mead simplex method.

    Uses reflection 1, expansion 2, contraction 0.5 and shrink 0.5. Iteration
    stops once the spread of objective values over the simplex is below
    ``tol_f`` and the spread of vertices (max-norm about the best vertex) is
    below ``tol_x``, or after ``max_iter`` iterations.

    Args:
        objective: Function of a 1-D array returning a float. ``+inf`` marks
            infeasible points.
        x0: Starting point. The objective must be finite here.
        tol_f: Tolerance on the objective spread.
        tol_x: Tolerance on the vertex spread.
        max_iter: Iteration cap.
        step: Initial simplex edge lengths. Defaults to 5% of each
            coordinate, or 0.1 for zero coordinates.

    Returns:
        OptimResult with the best vertex found.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    n = x0.size
    f0 = float(objective(x0))
    if not np.isfinite(f0):
        raise NumericalError("objective is not finite at the starting point")

    if step is None:
        steps = np.where(x0 != 0.0, 0.05 * np.abs(x0), 0.1)
    else:
        steps = np.broadcast_to(np.asarray(step, dtype=float), (n,)).copy()

    sim = np.empty((n + 1, n))
    fsim = np.empty(n + 1)
    sim[0] = x0
    fsim[0] = f0
    for i in range(n):
        v = x0.copy()
        v[i] += steps[i]
        sim[i + 1] = v
        fsim[i + 1] = objective(v)
    n_eval = n + 1

    iterations = 0
    converged = False
    while iterations < max_iter:
        order = np.argsort(fsim, kind="stable")
        sim = sim[order]
        fsim = fsim[order]
        if (
            np.max(np.abs(fsim[1:] - fsim[0])) <= tol_f
            and np.max(np.abs(sim[1:] - sim[0])) <= tol_x
        ):
            converged = True
            break
        iterations += 1

        centroid = sim[:-1].mean(axis=0)
        worst = sim[-1]
        xr = centroid + (centroid - worst)
        fr = objective(xr)
        n_eval += 1

        if fr < fsim[0]:
            xe = centroid + 2.0 * (centroid - worst)
            fe = objective(xe)
            n_eval += 1
            if fe < fr:
                sim[-1], fsim[-1] = xe, fe
            else:
                sim[-1], fsim[-1] = xr, fr
            continue
        if fr < fsim[-2]:
            sim[-1], fsim[-1] = xr, fr
            continue

        if fr < fsim[-1]:
            xc = centroid + 0.5 * (xr - centroid)
            fc = objective(xc)
            n_eval += 1
            if fc <= fr:
                sim[-1], fsim[-1] = xc, fc
                continue
        else:
            xc = centroid + 0.5 * (worst - centroid)
            fc = objective(xc)
            n_eval += 1
            if fc < fsim[-1]:
                sim[-1], fsim[-1] = xc, fc
                continue

        # shrink toward the best vertex
        for i in range(1, n + 1):
            sim[i] = sim[0] + 0.5 * (sim[i] - sim[0])
            fsim[i] = objective(sim[i])
        n_eval += n

    best = int(np.argmin(fsim))
    return OptimResult(sim[best].copy(), float(fsim[best]), iterations, converged, n_eval)


def fd_hessian(
    gradient: Callable[[np.ndarray], np.ndarray], x: np.ndarray, rel_step: float = 1e-5
) -> np.ndarray:
    """Symmetrized central-difference Hessian of a gradient function."""
    n = x.size
    H = np.empty((n, n))
    for i in range(n):
        h = rel_step * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        H[:, i] = (np.asarray(gradient(xp)) - np.asarray(gradient(xm))) / (2.0 * h)
    return 0.5 * (H + H.T)


def newton_raphson(
    objective: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray],
    x0: Sequence[float],
    tol_g: float = TOL_G,
    max_iter: int = MAX_ITER,
    max_step: float | None = None,
) -> OptimResult:
    """Damped Newton-Raphson minimization with a finite-difference Hessian.

    Each Newton step is halved (at most 30 times) until the objective
    decreases. If the Hessian system cannot be solved, or the Newton
    direction is not a descent direction, a steepest-descent step is tried
    instead; an indefinite Hessian first has its eigenvalues replaced by
    their absolute values. ``max_step`` optionally caps the max-norm of a
    trial step. Converged when the max-norm of the gradient is below
    ``tol_g``.
    """
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    f = float(objective(x))
    g = np.asarray(gradient(x), dtype=float)
    if not np.all(np.isfinite(g)) or not np.isfinite(f):
        raise NumericalError("gradient is not finite at the starting point")
    n_eval = 1

    iterations = 0
    converged = False
    while iterations < max_iter:
        if np.max(np.abs(g)) < tol_g:
            converged = True
            break
        iterations += 1

        directions = []
        try:
            H = fd_hessian(gradient, x)
            d = np.linalg.solve(H, -g)
            if np.all(np.isfinite(d)) and d @ g < 0.0:
                directions.append(d)
            elif np.all(np.isfinite(H)):
                # indefinite Hessian: flip and floor its eigenvalues
                w, V = np.linalg.eigh(H)
                w = np.maximum(np.abs(w), 1e-8 * max(np.abs(w).max(), 1e-300))
                directions.append(-(V @ ((V.T @ g) / w)))
        except np.linalg.LinAlgError:
            pass
        gnorm = np.linalg.norm(g)
        directions.append(-g / max(1.0, gnorm))

        moved = False
        for d in directions:
            t = 1.0
            if max_step is not None:
                t = min(1.0, max_step / max(np.max(np.abs(d)), 1e-300))
            for _ in range(MAX_HALVINGS + 1):
                x_new = x + t * d
                f_new = float(objective(x_new))
                n_eval += 1
                if f_new < f:
                    moved = True
                    break
                t *= 0.5
            if moved:
                break
        if not moved:
            break
        g_new = np.asarray(gradient(x_new), dtype=float)
        if not np.all(np.isfinite(g_new)):
            break
        x, f, g = x_new, f_new, g_new

    return OptimResult(x, f, iterations, converged, n_eval)


def rng_stream(master_seed: int, stream_id: int | Sequence[int] = 0) -> np.random.Generator:
    """Independent, reproducible generator for ``(master_seed, stream_id)``.

    Streams are spawned through ``numpy.random.SeedSequence`` so that work
    split across processes draws the same numbers regardless of scheduling.
    """
    key = (stream_id,) if np.isscalar(stream_id) else tuple(stream_id)
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def kfold_split(n: int, k: int, seed: int | np.random.Generator = 0) -> list[np.ndarray]:
    """Randomly partition ``range(n)`` into ``k`` folds of near-equal size."""
    if k < 2:
        raise ValueError("need at least two folds")
    if k > n:
        raise ValueError(f"cannot split {n} items into {k} folds")
    rng = seed if isinstance(seed, np.random.Generator) else rng_stream(seed, 0)
    perm = rng.permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]
