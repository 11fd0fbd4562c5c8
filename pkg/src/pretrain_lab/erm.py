"""Projected gradient descent for truncated least squares over a norm ball."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pretrain_lab.errors import ParameterError
from pretrain_lab.rng import as_generator


@dataclass
class ErmResult:
    beta: np.ndarray
    objective: float
    flagged: bool = False
    message: str = ""


def _project_ball(beta, D):
    nrm = np.linalg.norm(beta)
    return beta if nrm <= D else beta * (D / nrm)


def truncated_objective(beta, features, y, L) -> float:
    res2 = (y - features @ beta) ** 2
    return float(np.mean(np.minimum(res2, L)))


@dataclass(frozen=True)
class OptConfig:
    iterations: int = 500
    restarts: int = 5
    tol: float = 1e-12
    seed: int = 0


def truncated_ls(features: np.ndarray, y: np.ndarray, L: float, D: float, opt: OptConfig | None = None, rng=None) -> ErmResult:
    """Projected gradient descent on the truncated least-squares objective over ||beta|| <= D.

    Starts from the projected OLS solution plus ``restarts - 1`` uniform draws
    in the ball; the best iterate seen is returned, so the result never does
    worse than projected OLS.
    """
    opt = opt or OptConfig()
    if not L > 0 or not D > 0:
        raise ParameterError("L and D must be positive")
    n, r = features.shape
    gen = as_generator(rng if rng is not None else opt.seed)
    ols = np.linalg.lstsq(features, y, rcond=None)[0]
    starts = [_project_ball(ols, D)]
    for _ in range(opt.restarts - 1):
        u = gen.standard_normal(r)
        starts.append(u / np.linalg.norm(u) * D * gen.uniform() ** (1.0 / r))
    lam = np.linalg.eigvalsh(features.T @ features / n)[-1]
    step = 1.0 / (2.0 * lam) if lam > 0 else 1.0

    best_beta, best_obj, converged = starts[0], truncated_objective(starts[0], features, y, L), False
    for beta in starts:
        run_converged = False
        for _ in range(opt.iterations):
            res = y - features @ beta
            active = res * res < L
            grad = -2.0 / n * features[active].T @ res[active]
            new = _project_ball(beta - step * grad, D)
            obj = truncated_objective(new, features, y, L)
            if obj < best_obj:
                best_beta, best_obj = new, obj
            if np.linalg.norm(new - beta) <= opt.tol * (1.0 + np.linalg.norm(beta)):
                run_converged = True
                beta = new
                break
            beta = new
        converged = converged or run_converged
    msg = "" if converged else f"no restart converged within {opt.iterations} iterations"
    return ErmResult(best_beta, best_obj, flagged=not converged, message=msg)


