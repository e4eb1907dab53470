"""Linear solves for ``(A + B) u = f``.

``A`` is the sparse volume matrix and ``B`` the DtN coupling (a
:class:`~dtngrating.dtn.DtnBlock`, a sparse matrix, or ``None``). The direct
path merges ``B`` into the sparse pattern and factors with MKL PARDISO when
the runtime library is present, otherwise with SuperLU. The iterative path
runs restarted GMRES preconditioned by an incomplete LU of ``A`` and applies
``B`` from its rank factors.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from dtngrating import pardiso
from dtngrating.errors import ConfigError, NoConvergenceError, SingularMatrixError

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
PIVOT_TOL = 1e-14


@dataclasses.dataclass
class SolveReport:
    """Solution and diagnostics of one linear solve."""

    solution: np.ndarray
    residual: float
    method: str
    seconds: float
    stats: dict = dataclasses.field(default_factory=dict)


def _merge(A, B):
    A = sp.csr_matrix(A, dtype=complex)
    if B is None:
        return A
    if sp.issparse(B):
        return (A + B).tocsr()
    return (A + B.to_sparse()).tocsr()


def _apply_B(B, x):
    if B is None:
        return 0.0
    if sp.issparse(B):
        return B @ x
    return B.matvec(x)


def relative_residual(A, B, f, u) -> float:
    r = A @ u + _apply_B(B, u) - f
    nf = np.linalg.norm(f)
    return float(np.linalg.norm(r) / nf) if nf > 0 else float(np.linalg.norm(r))


def _max_row_norm(K) -> float:
    return float(np.abs(K).sum(axis=1).max()) if K.nnz else 0.0


class _SuperLU:
    name = "superlu"

    def __init__(self, K):
        self.lu = spla.splu(
            K.tocsc(), permc_spec="MMD_AT_PLUS_A", options=dict(Equil=False)
        )
        self.pivots = self.lu.U.diagonal()
        self.scale = _max_row_norm(K)
        self.stats = {"factor_nnz": int(self.lu.L.nnz + self.lu.U.nnz)}

    def solve(self, b):
        return self.lu.solve(b)


class _Pardiso:
    name = "pardiso"

    def __init__(self, K):
        self.lu = pardiso.PardisoLU(K)
        self.pivots = self.lu.factor_diagonal()
        # pivots live in the scaled-and-matched system; compare against their own range
        self.scale = float(np.abs(self.pivots).max()) if len(self.pivots) else 0.0
        self.stats = {
            "factor_nnz": self.lu.factor_nnz,
            "perturbed_pivots": self.lu.perturbed_pivots,
        }

    def solve(self, b):
        return self.lu.solve(b)


def factorize(K, backend: str = "auto"):
    """Factor ``K`` with the requested backend (``auto``, ``pardiso`` or ``superlu``).

    Raises:
        SingularMatrixError: if a pivot falls below ``1e-14`` times the reference scale.
    """
    if backend == "auto":
        backend = "pardiso" if pardiso.available() else "superlu"
    if backend == "pardiso":
        fac = _Pardiso(K)
    elif backend == "superlu":
        try:
            fac = _SuperLU(K)
        except RuntimeError as exc:  # exactly singular
            raise SingularMatrixError(str(exc)) from None
    else:
        raise ConfigError(f"unknown direct backend {backend!r}")
    if K.shape[0]:
        small = np.abs(fac.pivots) < PIVOT_TOL * fac.scale
        if fac.scale == 0 or small.any():
            raise SingularMatrixError(
                f"{int(small.sum())} pivots below {PIVOT_TOL:g} x reference scale"
            )
    return fac


def solve_direct(A, B, f, solver_tol: float = DEFAULT_TOL, backend: str = "auto") -> SolveReport:
    """Sparse LU solve of the merged system with one iterative-refinement step."""
    t0 = time.perf_counter()
    f = np.asarray(f, dtype=complex)
    K = _merge(A, B)
    if K.shape != (len(f), len(f)):
        raise ValueError("inconsistent system dimensions")
    if not np.any(f):
        return SolveReport(np.zeros_like(f), 0.0, "direct", time.perf_counter() - t0)
    fac = factorize(K, backend)
    u = fac.solve(f)
    u = u + fac.solve(f - K @ u)
    nf = np.linalg.norm(f)
    res = float(np.linalg.norm(K @ u - f) / nf)
    steps = 1
    while res > solver_tol and steps < 4:
        u = u + fac.solve(f - K @ u)
        res = float(np.linalg.norm(K @ u - f) / nf)
        steps += 1
    if not np.isfinite(res) or res > max(solver_tol, 1e-6):
        raise SingularMatrixError(f"direct solve residual {res:.3e}; matrix is numerically singular")
    stats = dict(fac.stats, backend=fac.name, refinement_steps=steps, n=K.shape[0], nnz=K.nnz)
    return SolveReport(u, res, "direct", time.perf_counter() - t0, stats)


def solve_iterative(
    A, B, f, solver_tol: float = DEFAULT_TOL, max_iter: int = 2000, restart: int = 200,
    drop_tol: float = 1e-5, fill_factor: float = 20.0,
) -> SolveReport:
    """GMRES on ``A + B`` with an incomplete LU of ``A`` as right preconditioner.

    Raises:
        NoConvergenceError: when the residual is still above ``solver_tol`` after
            ``max_iter`` inner iterations; carries the best residual and iterate.
    """
    t0 = time.perf_counter()
    f = np.asarray(f, dtype=complex)
    n = len(f)
    nf = np.linalg.norm(f)
    if nf == 0:
        return SolveReport(np.zeros_like(f), 0.0, "iterative", time.perf_counter() - t0)
    if max_iter <= 0:
        raise NoConvergenceError("no iterations allowed", best_residual=1.0, solution=np.zeros_like(f))
    A = sp.csc_matrix(A, dtype=complex)
    ilu = spla.spilu(A, drop_tol=drop_tol, fill_factor=fill_factor)
    Kop = spla.LinearOperator((n, n), matvec=lambda x: A @ x + _apply_B(B, x), dtype=complex)
    Mop = spla.LinearOperator((n, n), matvec=ilu.solve, dtype=complex)
    count = [0]

    def cb(_):
        count[0] += 1

    restart = min(restart, max_iter)
    u, info = spla.gmres(
        Kop, f, rtol=solver_tol, atol=0.0, restart=restart,
        maxiter=math.ceil(max_iter / restart), M=Mop, callback=cb, callback_type="pr_norm",
    )
    res = relative_residual(A, B, f, u)
    stats = {"iterations": count[0], "ilu_nnz": int(ilu.L.nnz + ilu.U.nnz)}
    if res > solver_tol:
        raise NoConvergenceError(
            f"GMRES stalled at relative residual {res:.3e} after {count[0]} iterations",
            best_residual=res, solution=u,
        )
    return SolveReport(u, res, "iterative", time.perf_counter() - t0, stats)


def solve(A, B, f, method: str = "direct", solver_tol: float = DEFAULT_TOL, **kw) -> SolveReport:
    if method == "direct":
        return solve_direct(A, B, f, solver_tol, **kw)
    if method == "iterative":
        return solve_iterative(A, B, f, solver_tol, **kw)
    raise ConfigError(f"unknown solver {method!r}")


def export_matrix_market(path, A, B=None, f=None):
    """Write ``A + B`` (and optionally ``f``) in Matrix Market coordinate format."""
    scipy.io.mmwrite(str(path), _merge(A, B).tocoo())
    if f is not None:
        scipy.io.mmwrite(str(path).replace(".mtx", "") + "_rhs.mtx", np.asarray(f).reshape(-1, 1))
