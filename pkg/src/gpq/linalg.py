"""Small dense linear-algebra helpers built on scipy.linalg."""

import logging

import numpy as np
from scipy import linalg

from .errors import NumericalFailure

logger = logging.getLogger(__name__)

JITTER_START = 1e-10
JITTER_STOP = 1e-4


def symmetrize(a):
    return 0.5 * (a + a.T)


def jittered_cholesky(a, *, jitter=True):
    """Lower Cholesky factor of a symmetric matrix with escalating jitter.

    On failure, ``1e-10 * trace(a) / n`` is added to the diagonal and
    multiplied by ten on each retry up to ``1e-4 * trace(a) / n``.

    Returns
    -------
    L : ndarray
        Lower-triangular factor of ``a + added * I``.
    added : float
        The diagonal jitter actually used (0.0 when none was needed).
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    try:
        return linalg.cholesky(a, lower=True, check_finite=True), 0.0
    except linalg.LinAlgError:
        if not jitter:
            raise NumericalFailure("matrix is not positive definite", jitter=0.0)
    except ValueError as exc:
        raise NumericalFailure(f"non-finite matrix entries: {exc}") from exc

    scale = np.trace(a) / n
    if not np.isfinite(scale) or scale <= 0.0:
        scale = 1.0
    level = JITTER_START
    eye = np.eye(n)
    while level <= JITTER_STOP * (1 + 1e-9):
        added = level * scale
        try:
            chol = linalg.cholesky(a + added * eye, lower=True)
        except linalg.LinAlgError:
            level *= 10.0
            continue
        logger.debug("cholesky succeeded with jitter %.3g", added)
        return chol, added
    raise NumericalFailure(
        f"cholesky failed after jitter escalation to {JITTER_STOP * scale:.3g}",
        jitter=JITTER_STOP * scale,
    )


def cho_solve_lower(chol, b):
    """Solve ``(L L^T) x = b`` given the lower factor ``L``."""
    return linalg.cho_solve((chol, True), b, check_finite=False)


def solve_lower(chol, b):
    return linalg.solve_triangular(chol, b, lower=True, check_finite=False)


def logdet_from_cholesky(chol):
    return 2.0 * np.sum(np.log(np.diag(chol)))


def inverse_from_cholesky(chol):
    """``(L L^T)^{-1}`` from the lower factor, via LAPACK ``potri``."""
    inv, info = linalg.lapack.dpotri(chol, lower=1)
    if info != 0:
        raise NumericalFailure(f"potri failed with info={info}")
    inv = np.tril(inv)
    return inv + np.tril(inv, -1).T
