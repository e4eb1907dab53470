"""Minimal ctypes binding to the MKL PARDISO sparse direct solver (complex, unsymmetric).

Only the pieces used by :mod:`dtngrating.solver` are exposed: factor once,
solve many right-hand sides, release. The shared library is looked up via
``DTNGRATING_MKL_RT``, the dynamic loader, and the installed ``mkl`` wheel.
"""

from __future__ import annotations

import ctypes
import glob
import os
import sys
from ctypes.util import find_library

import numpy as np
import scipy.sparse as sp

_MTYPE_COMPLEX_UNSYM = 13
_LIB = None


def _load():
    global _LIB
    if _LIB is not None:
        return _LIB
    cands = [os.environ.get("DTNGRATING_MKL_RT"), find_library("mkl_rt")]
    for root in {sys.prefix, "/usr/local", "/usr"}:
        cands += sorted(glob.glob(os.path.join(root, "lib*", "**", "libmkl_rt.so*"), recursive=True))
    for path in cands:
        if not path:
            continue
        try:
            lib = ctypes.CDLL(path)
            lib.pardiso  # noqa: B018 - probe the symbol
        except (OSError, AttributeError):
            continue
        i32 = ctypes.POINTER(ctypes.c_int32)
        lib.pardiso.argtypes = [
            ctypes.POINTER(ctypes.c_int64), i32, i32, i32, i32, i32, ctypes.c_void_p,
            i32, i32, i32, i32, i32, i32, ctypes.c_void_p, ctypes.c_void_p, i32,
        ]
        lib.pardiso.restype = None
        lib.pardiso_getdiag.argtypes = [
            ctypes.POINTER(ctypes.c_int64), ctypes.c_void_p, ctypes.c_void_p, i32, i32,
        ]
        lib.pardiso_getdiag.restype = None
        _LIB = lib
        return lib
    return None


def available() -> bool:
    return _load() is not None


class PardisoError(RuntimeError):
    def __init__(self, code, phase):
        super().__init__(f"PARDISO error {code} in phase {phase}")
        self.code = code


class PardisoLU:
    """LU factorization of a complex sparse matrix held by PARDISO.

    Args:
        A: square sparse matrix (converted to CSR with sorted indices).
    """

    def __init__(self, A):
        lib = _load()
        if lib is None:
            raise ImportError("MKL runtime (mkl_rt) not found")
        self._lib = lib
        A = sp.csr_matrix(A, dtype=np.complex128)
        A.sum_duplicates()
        A.sort_indices()
        self.n = A.shape[0]
        self._data = np.ascontiguousarray(A.data)
        self._ia = np.ascontiguousarray(A.indptr + 1, dtype=np.int32)
        self._ja = np.ascontiguousarray(A.indices + 1, dtype=np.int32)
        self._pt = np.zeros(64, dtype=np.int64)
        self.iparm = np.zeros(64, dtype=np.int32)
        self.iparm[0] = 1  # user-supplied parameters
        self.iparm[1] = 2  # nested dissection (METIS)
        self.iparm[7] = 2  # iterative refinement steps
        self.iparm[9] = 13  # pivot perturbation 1e-13
        self.iparm[10] = 1  # scaling
        self.iparm[12] = 1  # weighted matching
        self.iparm[17] = -1  # report factor nonzeros
        self.iparm[55] = 1  # keep the factor diagonal for pivot inspection
        self._released = False
        self._call(12, np.zeros(self.n, complex), np.zeros(self.n, complex), 1)

    @property
    def perturbed_pivots(self) -> int:
        return int(self.iparm[13])

    @property
    def factor_nnz(self) -> int:
        return int(self.iparm[17])

    def factor_diagonal(self) -> np.ndarray:
        """Pivots of the computed factorization (after scaling and matching)."""
        df = np.zeros(self.n, complex)
        da = np.zeros(self.n, complex)
        err = ctypes.c_int32(0)
        self._lib.pardiso_getdiag(
            self._pt.ctypes.data_as(ctypes.POINTER(ctypes.c_int64)), df.ctypes.data,
            da.ctypes.data, ctypes.byref(ctypes.c_int32(1)), ctypes.byref(err),
        )
        if err.value != 0:
            raise PardisoError(err.value, "getdiag")
        return df

    def _call(self, phase, b, x, nrhs):
        i32 = ctypes.c_int32
        err = i32(0)
        ptr = lambda v: ctypes.byref(i32(v))  # noqa: E731
        self._lib.pardiso(
            self._pt.ctypes.data_as(ctypes.POINTER(ctypes.c_int64)),
            ptr(1), ptr(1), ptr(_MTYPE_COMPLEX_UNSYM), ptr(phase), ptr(self.n),
            self._data.ctypes.data,
            self._ia.ctypes.data_as(ctypes.POINTER(i32)),
            self._ja.ctypes.data_as(ctypes.POINTER(i32)),
            ctypes.byref(i32(0)), ptr(nrhs),
            self.iparm.ctypes.data_as(ctypes.POINTER(i32)),
            ptr(0), b.ctypes.data, x.ctypes.data, ctypes.byref(err),
        )
        if err.value != 0:
            raise PardisoError(err.value, phase)

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=np.complex128)
        nrhs = 1 if b.ndim == 1 else b.shape[1]
        bf = np.asfortranarray(b)
        x = np.zeros_like(bf)
        self._call(33, bf, x, nrhs)
        return np.ascontiguousarray(x)

    def release(self):
        if not self._released:
            dummy = np.zeros(1, complex)
            self._call(-1, dummy, dummy, 1)
            self._released = True

    def __del__(self):
        try:
            self.release()
        except Exception:
            pass
