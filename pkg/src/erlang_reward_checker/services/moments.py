"""Exact raw moments of the cumulative reward to absorption.

The k-th moment vector over transient states solves

    (I - P_CC) u_k = r^k + sum_{i=1}^{k-1} C(k, i) r^(k-i) * (P_CC u_i)

so K moments cost K solves against one factorization of (I - P_CC).
"""

import logging
import math
import warnings
from collections.abc import Callable

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import linalg as spla

from erlang_reward_checker.config import settings
from erlang_reward_checker.errors import MomentSolverError
from erlang_reward_checker.models import Dtmc, MomentSystem, MomentTable, MomentVector

logger = logging.getLogger(__name__)

HANKEL_TOLERANCE = 1e-9


def moment_system(d: Dtmc) -> MomentSystem:
    transient = ~d.absorbing_mask
    states = tuple(s for s, keep in zip(d.states, transient) if keep)
    p = d.transition_matrix
    p_cc = p[transient][:, transient].tocsr()
    return MomentSystem(
        transient_states=states,
        transient_index={state: i for i, state in enumerate(states)},
        p_cc=p_cc,
        reward_vec=d.reward_vector[transient],
    )


def _factorize(a: sparse.csr_matrix) -> tuple[Callable[[np.ndarray], np.ndarray], str]:
    """Factor (I - P_CC) once and return a solver reused for every right-hand side."""
    size = a.shape[0]
    if size < settings.dense_solver_limit:
        with warnings.catch_warnings():
            warnings.simplefilter("error", linalg.LinAlgWarning)
            try:
                lu, piv = linalg.lu_factor(a.toarray())
            except (linalg.LinAlgWarning, ValueError) as e:
                raise MomentSolverError(
                    f"singular moment system; a recurrent class avoids absorption ({e})"
                ) from e
        if np.min(np.abs(np.diag(lu))) < 1e-13:
            raise MomentSolverError(
                "singular moment system; a recurrent class avoids absorption"
            )
        return (lambda b: linalg.lu_solve((lu, piv), b)), "dense-lu"

    try:
        ilu = spla.spilu(a.tocsc())
    except RuntimeError as e:
        raise MomentSolverError(f"singular moment system ({e})") from e
    preconditioner = spla.LinearOperator(a.shape, ilu.solve)

    def solve(b: np.ndarray) -> np.ndarray:
        x, info = spla.bicgstab(
            a, b, rtol=settings.iterative_tolerance, atol=0.0, M=preconditioner
        )
        if info != 0:
            raise MomentSolverError(f"BiCGSTAB did not converge (info={info})")
        return x

    return solve, "bicgstab-ilu"


def reward_moments(d: Dtmc, k: int, scaling: str | None = None) -> MomentTable:
    """
    Compute the first k raw moments of the reward to absorption.

    Args:
        d: A valid chain (absorption with probability 1).
        k: Number of moments.
        scaling: Standardization rule for derived stats; defaults to settings.

    Returns:
        MomentTable with the vector at s0 and u_k(x) for every transient x.
    """
    if k < 1:
        raise MomentSolverError(f"number of moments must be >= 1, got {k}")

    system = moment_system(d)
    size = len(system.transient_states)
    per_state = np.zeros((k, size))
    solver = "none"

    if size:
        a = (sparse.identity(size, format="csr") - system.p_cc).tocsr()
        solve, solver = _factorize(a)
        r = system.reward_vec
        for order in range(1, k + 1):
            rhs = r**order
            for i in range(1, order):
                rhs = rhs + math.comb(order, i) * r ** (order - i) * (
                    system.p_cc @ per_state[i - 1]
                )
            per_state[order - 1] = solve(rhs)
        if not np.all(np.isfinite(per_state)):
            raise MomentSolverError("moment system produced non-finite values")

    start = system.transient_index.get(d.initial)
    raw = tuple(
        float(per_state[i, start]) if start is not None else 0.0 for i in range(k)
    )
    vector = derived_stats(
        MomentVector(raw=raw), scaling=scaling or settings.moment_scaling
    )
    logger.info("Solved %d moments over %d transient states (%s)", k, size, solver)
    return MomentTable(
        vector=vector,
        transient_states=system.transient_states,
        per_state=per_state,
        solver=solver,
    )


def derived_stats(m: MomentVector, scaling: str = "per-order") -> MomentVector:
    """Fill variance, sigma and standardized moments 3..K.

    ``per-order`` divides mu_k by c^k and ``paper-literal`` by c, with
    c = sqrt(mu_2).
    """
    if m.k < 2:
        return MomentVector(raw=m.raw, scaling=scaling)

    mu1, mu2 = m.raw[0], m.raw[1]
    variance = mu2 - mu1 * mu1
    if variance < -HANKEL_TOLERANCE * max(1.0, mu2):
        raise MomentSolverError(
            f"inconsistent moments: mu2={mu2!r} < mu1^2={mu1 * mu1!r}"
        )
    variance = max(variance, 0.0)

    c = math.sqrt(max(mu2, 0.0))
    standardized = []
    for order, mu in enumerate(m.raw[2:], start=3):
        if c == 0.0:
            standardized.append(0.0)
        elif scaling == "paper-literal":
            standardized.append(mu / c)
        else:
            standardized.append(mu / c**order)

    return MomentVector(
        raw=m.raw,
        variance=variance,
        sigma=math.sqrt(variance),
        standardized=tuple(standardized),
        scaling=scaling,
    )
