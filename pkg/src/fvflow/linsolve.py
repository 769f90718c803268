"""Jacobi-preconditioned Krylov solvers over hybrid sparse matrices.

cg handles the symmetric pressure systems, bicgstab the nonsymmetric
momentum systems.  Both normalize residuals as ||b - Ax||_2 / max(||b||_2,
1e-30), check convergence on entry and after every iteration, and leave
the initial-guess array untouched (the solution is returned as a new
array).  When record_stages is on, wall time is attributed to six kernel
groups: smvp, daxpy, dot, reduction, precond, other.
"""

from dataclasses import dataclass, field
from time import perf_counter

import numpy as np

from .sparse import HybridMatrix, diagonal, smvp

STAGES = ("smvp", "daxpy", "dot", "reduction", "precond", "other")

RESIDUAL_FLOOR = 1e-30
BREAKDOWN_EPS = 1e-300


class SolverError(Exception):
    pass


@dataclass
class SolveConfig:
    tolerance: float = 1e-7  # on the normalized residual
    abs_tolerance: float = 0.0  # on the raw 2-norm of the residual
    max_iters: int = 1000
    record_stages: bool = False

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class SolveReport:
    iterations: int
    initial_residual: float
    final_residual: float
    converged: bool
    wall_time: float = 0.0
    stage_times: dict = field(default_factory=dict)


class StageTimer:
    """Accumulates wall time per kernel group; near-free when disabled."""

    __slots__ = ("enabled", "times", "_t0", "_name")

    def __init__(self, enabled: bool):
        self.enabled = enabled
        self.times = dict.fromkeys(STAGES, 0.0)
        self._t0 = 0.0
        self._name = None

    def start(self, name):
        if self.enabled:
            self._name = name
            self._t0 = perf_counter()

    def stop(self):
        if self.enabled and self._name is not None:
            self.times[self._name] += perf_counter() - self._t0
            self._name = None

    def finish(self, wall: float) -> dict:
        """Close the books: the unattributed remainder becomes 'other'."""
        if not self.enabled:
            return {}
        accounted = sum(self.times[s] for s in STAGES if s != "other")
        self.times["other"] = max(wall - accounted, 0.0)
        return dict(self.times)


def jacobi_apply(diag: np.ndarray, r: np.ndarray) -> np.ndarray:
    """z = r / diag, the Jacobi (diagonal) preconditioner."""
    zero = diag == 0.0
    if zero.any():
        raise SolverError(f"singular preconditioner: zero diagonal at row {int(np.argmax(zero))}")
    return r / diag


def residual_norm(A: HybridMatrix, x: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(b - smvp(A, x)) / max(np.linalg.norm(b), RESIDUAL_FLOOR))


def _check_diag(A):
    d = diagonal(A)
    zero = d == 0.0
    if zero.any():
        raise SolverError(f"singular preconditioner: zero diagonal at row {int(np.argmax(zero))}")
    return d


def cg(A: HybridMatrix, b: np.ndarray, x0: np.ndarray, cfg: SolveConfig):
    """Preconditioned conjugate gradient; A must be symmetric in values."""
    t_start = perf_counter()
    timer = StageTimer(cfg.record_stages)
    inv_diag = 1.0 / _check_diag(A)
    x = x0.astype(float).copy()

    timer.start("smvp")
    r = b - smvp(A, x)
    timer.stop()
    timer.start("reduction")
    bnorm = max(float(np.linalg.norm(b)), RESIDUAL_FLOOR)
    res = float(np.linalg.norm(r)) / bnorm
    timer.stop()
    res0 = res
    iterations = 0
    converged = res <= cfg.tolerance or res * bnorm <= cfg.abs_tolerance

    if not converged:
        timer.start("precond")
        z = r * inv_diag
        timer.stop()
        p = z.copy()
        timer.start("dot")
        rz = float(r @ z)
        timer.stop()
        while iterations < cfg.max_iters:
            iterations += 1
            timer.start("smvp")
            q = smvp(A, p)
            timer.stop()
            timer.start("dot")
            pq = float(p @ q)
            timer.stop()
            if pq <= 0.0 or not np.isfinite(pq):
                raise SolverError(f"cg: matrix not positive definite at iteration {iterations}")
            alpha = rz / pq
            timer.start("daxpy")
            x += alpha * p
            r -= alpha * q
            timer.stop()
            timer.start("reduction")
            res = float(np.linalg.norm(r)) / bnorm
            timer.stop()
            if not np.isfinite(res):
                raise SolverError(f"cg: residual diverged at iteration {iterations}")
            if res <= cfg.tolerance or res * bnorm <= cfg.abs_tolerance:
                converged = True
                break
            timer.start("precond")
            z = r * inv_diag
            timer.stop()
            timer.start("dot")
            rz_new = float(r @ z)
            timer.stop()
            beta = rz_new / rz
            rz = rz_new
            timer.start("daxpy")
            p *= beta
            p += z
            timer.stop()

    wall = perf_counter() - t_start
    return x, SolveReport(
        iterations=iterations,
        initial_residual=res0,
        final_residual=res,
        converged=converged,
        wall_time=wall,
        stage_times=timer.finish(wall),
    )


def bicgstab(A: HybridMatrix, b: np.ndarray, x0: np.ndarray, cfg: SolveConfig):
    """Preconditioned BiCGStab for nonsymmetric systems."""
    t_start = perf_counter()
    timer = StageTimer(cfg.record_stages)
    inv_diag = 1.0 / _check_diag(A)
    x = x0.astype(float).copy()

    timer.start("smvp")
    r = b - smvp(A, x)
    timer.stop()
    timer.start("reduction")
    bnorm = max(float(np.linalg.norm(b)), RESIDUAL_FLOOR)
    res = float(np.linalg.norm(r)) / bnorm
    timer.stop()
    res0 = res
    iterations = 0
    converged = res <= cfg.tolerance or res * bnorm <= cfg.abs_tolerance

    r_hat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(b, dtype=float)
    p = np.zeros_like(b, dtype=float)

    while not converged and iterations < cfg.max_iters:
        iterations += 1
        timer.start("dot")
        rho_new = float(r_hat @ r)
        timer.stop()
        restart = abs(rho_new) < BREAKDOWN_EPS
        if restart:
            # the shadow residual has drifted orthogonal to r (Lanczos
            # breakdown); restart the recurrence from the current iterate
            r_hat = r.copy()
            rho_new = float(r_hat @ r)
            if rho_new < BREAKDOWN_EPS:
                raise SolverError(f"bicgstab: rho breakdown at iteration {iterations}")
        if iterations == 1 or restart:
            p[:] = r
        else:
            beta = (rho_new / rho) * (alpha / omega)
            timer.start("daxpy")
            p -= omega * v
            p *= beta
            p += r
            timer.stop()
        rho = rho_new
        timer.start("precond")
        p_hat = p * inv_diag
        timer.stop()
        timer.start("smvp")
        v = smvp(A, p_hat)
        timer.stop()
        timer.start("dot")
        rv = float(r_hat @ v)
        timer.stop()
        if abs(rv) < BREAKDOWN_EPS:
            raise SolverError(f"bicgstab: breakdown (r_hat . v = 0) at iteration {iterations}")
        alpha = rho / rv
        timer.start("daxpy")
        s = r - alpha * v
        timer.stop()
        timer.start("reduction")
        snorm = float(np.linalg.norm(s))
        timer.stop()
        if snorm / bnorm <= cfg.tolerance or snorm <= cfg.abs_tolerance:
            timer.start("daxpy")
            x += alpha * p_hat
            timer.stop()
            res = snorm / bnorm
            converged = True
            break
        timer.start("precond")
        s_hat = s * inv_diag
        timer.stop()
        timer.start("smvp")
        t = smvp(A, s_hat)
        timer.stop()
        timer.start("dot")
        tt = float(t @ t)
        ts = float(t @ s)
        timer.stop()
        if tt == 0.0:
            raise SolverError(f"bicgstab: omega breakdown at iteration {iterations}")
        omega = ts / tt
        if abs(omega) < BREAKDOWN_EPS:
            raise SolverError(f"bicgstab: omega breakdown at iteration {iterations}")
        timer.start("daxpy")
        x += alpha * p_hat
        x += omega * s_hat
        r = s - omega * t
        timer.stop()
        timer.start("reduction")
        res = float(np.linalg.norm(r)) / bnorm
        timer.stop()
        if not np.isfinite(res):
            raise SolverError(f"bicgstab: residual diverged at iteration {iterations}")
        if res <= cfg.tolerance or res * bnorm <= cfg.abs_tolerance:
            converged = True

    wall = perf_counter() - t_start
    return x, SolveReport(
        iterations=iterations,
        initial_residual=res0,
        final_residual=res,
        converged=converged,
        wall_time=wall,
        stage_times=timer.finish(wall),
    )
