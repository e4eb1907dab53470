"""Quasi-periodic Fourier machinery for biperiodic gratings.

Lateral Bloch wavevectors, vertical wavenumbers on the outgoing branch,
truncated Rayleigh index sets, and the mode-wise capacity (DtN) coefficients.
All types are frozen dataclasses; all functions are pure.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from typing import Sequence

import numpy as np

from dtngrating.errors import ConfigError, ResonanceError

TRANSVERSALITY_TOL = 1e-12


@dataclasses.dataclass(frozen=True)
class MediumConstants:
    """Homogeneous medium with complex permittivity and real permeability."""

    eps: complex
    mu: float = 1.0

    def __post_init__(self):
        eps = complex(self.eps)
        if not (eps.real > 0 and eps.imag >= 0):
            raise ConfigError(f"need Re eps > 0 and Im eps >= 0, got {eps}")
        if not self.mu > 0:
            raise ConfigError(f"need mu > 0, got {self.mu}")
        object.__setattr__(self, "eps", eps)
        object.__setattr__(self, "mu", float(self.mu))

    def kappa_sq(self, omega: float) -> complex:
        return omega**2 * self.eps * self.mu

    @property
    def lossless(self) -> bool:
        return self.eps.imag == 0.0


@dataclasses.dataclass(frozen=True)
class IncidentWave:
    """Plane wave ``p exp(i q.x)`` incident from the top medium.

    Angles are in radians. The wave number uses units where the vacuum
    speed of light is 1, so ``omega = 2 pi / wavelength``.
    """

    wavelength: float
    theta1: float
    theta2: float
    polarization: tuple
    top: MediumConstants = MediumConstants(1.0)

    def __post_init__(self):
        if not 0 <= self.theta1 < math.pi / 2:
            raise ConfigError("theta1 must lie in [0, pi/2)")
        if self.top.eps.imag != 0:
            raise ConfigError("top medium must be lossless")
        p = np.asarray(self.polarization, dtype=complex)
        if p.shape != (3,):
            raise ConfigError("polarization must be a 3-vector")
        object.__setattr__(self, "polarization", tuple(complex(c) for c in p))
        q = self.q
        scale = max(np.linalg.norm(p) * np.linalg.norm(q), 1e-300)
        if abs(p @ q) > TRANSVERSALITY_TOL * scale:
            raise ConfigError(f"polarization not transverse: p.q = {p @ q}")

    @property
    def omega(self) -> float:
        return 2 * math.pi / self.wavelength

    @property
    def k1(self) -> float:
        return self.omega * math.sqrt(self.top.eps.real * self.top.mu)

    @property
    def q(self) -> np.ndarray:
        s1, c1 = math.sin(self.theta1), math.cos(self.theta1)
        return self.k1 * np.array(
            [s1 * math.cos(self.theta2), s1 * math.sin(self.theta2), -c1]
        )

    @property
    def alpha(self) -> np.ndarray:
        return self.q[:2].copy()

    @property
    def beta(self) -> float:
        return -self.q[2]

    @property
    def p(self) -> np.ndarray:
        return np.array(self.polarization, dtype=complex)

    @property
    def s(self) -> np.ndarray:
        """Magnetic amplitude ``q x p / (omega mu1)``."""
        return np.cross(self.q, self.p) / (self.omega * self.top.mu)

    def field(self, x):
        """Incident electric field at points ``x`` of shape ``(..., 3)``."""
        x = np.asarray(x, dtype=float)
        return np.exp(1j * (x @ self.q))[..., None] * self.p

    def with_polarization(self, p) -> "IncidentWave":
        return dataclasses.replace(self, polarization=tuple(p))


def te_polarization(wavelength, theta1, theta2, top=MediumConstants(1.0)):
    """Horizontal polarization ``(-alpha2, alpha1, 0)`` (unnormalized)."""
    probe = IncidentWave(wavelength, theta1, theta2, (0, 0, 0), top)
    a1, a2 = probe.alpha
    if a1 == 0 and a2 == 0:
        return (0.0, 1.0, 0.0)
    return (-a2, a1, 0.0)


def resonance_tol(kappa_sq) -> float:
    return 1e-10 * max(1.0, abs(kappa_sq))


def vertical_wavenumber(kappa_sq, alpha_n) -> complex:
    """Outgoing vertical wavenumber ``sqrt(kappa^2 - |alpha_n|^2)`` with Im >= 0.

    Raises:
        ResonanceError: when ``kappa^2`` is within tolerance of ``|alpha_n|^2``.
    """
    alpha_n = np.asarray(alpha_n, dtype=float)
    d = complex(kappa_sq) - float(alpha_n @ alpha_n)
    if abs(d) <= resonance_tol(kappa_sq):
        raise ResonanceError(f"resonant mode: kappa^2 - |alpha|^2 = {d}")
    return complex(_branch_sqrt(np.array([d]))[0])


def _branch_sqrt(d):
    d = np.asarray(d, dtype=complex)
    out = np.sqrt(d)
    neg_real = (d.imag == 0) & (d.real < 0)
    out[neg_real] = 1j * np.sqrt(-d.real[neg_real])
    flip = out.imag < 0
    out[flip] = -out[flip]
    return out


def vertical_wavenumbers(kappa_sq, alphas) -> np.ndarray:
    """Vectorized :func:`vertical_wavenumber` over ``alphas`` of shape ``(m, 2)``."""
    alphas = np.asarray(alphas, dtype=float).reshape(-1, 2)
    d = complex(kappa_sq) - np.einsum("ij,ij->i", alphas, alphas)
    bad = np.abs(d) <= resonance_tol(kappa_sq)
    if bad.any():
        raise ResonanceError(
            f"resonant mode at alpha = {alphas[bad][0]}", index=int(np.flatnonzero(bad)[0])
        )
    return _branch_sqrt(d)


@dataclasses.dataclass(frozen=True)
class Mode:
    n: tuple
    alpha: tuple
    beta1: complex
    beta2: complex

    def beta(self, j: int) -> complex:
        return self.beta1 if j == 1 else self.beta2


@dataclasses.dataclass(frozen=True)
class ModeSet:
    """Truncated index sets ``U_{N_j}`` for the top (j=1) and bottom (j=2) boundaries."""

    N1: int
    N2: int
    modes1: tuple
    modes2: tuple
    L1: float
    L2: float
    omega: float
    media: tuple  # (top, bottom) MediumConstants

    def modes(self, j: int) -> tuple:
        return self.modes1 if j == 1 else self.modes2

    def N(self, j: int) -> int:
        return self.N1 if j == 1 else self.N2

    def medium(self, j: int) -> MediumConstants:
        return self.media[j - 1]

    def kappa_sq(self, j: int) -> complex:
        return self.medium(j).kappa_sq(self.omega)

    def indices(self, j: int) -> np.ndarray:
        return np.array([m.n for m in self.modes(j)], dtype=int).reshape(-1, 2)

    def alphas(self, j: int) -> np.ndarray:
        return np.array([m.alpha for m in self.modes(j)], dtype=float).reshape(-1, 2)

    def betas(self, j: int) -> np.ndarray:
        return np.array([m.beta(j) for m in self.modes(j)], dtype=complex)

    def zero_index(self, j: int):
        """Position of ``n = (0, 0)`` in the mode list, or ``None``."""
        for i, m in enumerate(self.modes(j)):
            if m.n == (0, 0):
                return i
        return None

    def capacity_matrices(self, j: int) -> np.ndarray:
        """Stack of 2x2 maps ``(phi1, phi2) -> (r1, r2)``, shape ``(m, 2, 2)``."""
        med = self.medium(j)
        return capacity_matrices(
            self.alphas(j), self.betas(j), self.kappa_sq(j), med.mu, self.omega
        )

    def propagating(self, j: int) -> np.ndarray:
        k2 = self.kappa_sq(j).real
        a = self.alphas(j)
        return np.einsum("ij,ij->i", a, a) < k2


def truncation_radius(N, L1, L2) -> float:
    return 2 * math.pi * N / math.sqrt(L1 * L2)


def lattice_alphas(alpha, L1, L2, n) -> np.ndarray:
    n = np.asarray(n, dtype=float).reshape(-1, 2)
    return np.asarray(alpha, dtype=float) + 2 * math.pi * n / np.array([L1, L2])


def enumerate_index_set(alpha, L1, L2, N, margin=2) -> np.ndarray:
    """All lattice indices with ``|alpha_n| <= 2 pi N / sqrt(L1 L2)``, sorted.

    Order is lexicographic in ``(|alpha_n|, n1, n2)``.
    """
    R = truncation_radius(N, L1, L2)
    alpha = np.asarray(alpha, dtype=float)
    b1 = math.ceil((R + abs(alpha[0])) * L1 / (2 * math.pi)) + margin
    b2 = math.ceil((R + abs(alpha[1])) * L2 / (2 * math.pi)) + margin
    n1, n2 = np.meshgrid(np.arange(-b1, b1 + 1), np.arange(-b2, b2 + 1), indexing="ij")
    n = np.stack([n1.ravel(), n2.ravel()], axis=1)
    a = lattice_alphas(alpha, L1, L2, n)
    norm = np.sqrt(np.einsum("ij,ij->i", a, a))
    keep = norm <= R
    n, norm = n[keep], norm[keep]
    order = np.lexsort((n[:, 1], n[:, 0], norm))
    return n[order]


def build_mode_set(wave: IncidentWave, media: Sequence[MediumConstants], L1, L2, N1, N2) -> ModeSet:
    """Enumerate ``U_{N1}`` and ``U_{N2}`` with both vertical wavenumbers per mode."""
    if N1 < 1 or N2 < 1:
        raise ConfigError("truncation orders must be >= 1")
    omega = wave.omega
    top, bottom = media
    sets = []
    for N in (N1, N2):
        n = enumerate_index_set(wave.alpha, L1, L2, N)
        if not any((row == 0).all() for row in n):
            warnings.warn(f"truncation N={N} excludes the incident mode (0, 0)", stacklevel=2)
        a = lattice_alphas(wave.alpha, L1, L2, n)
        betas = []
        for med in (top, bottom):
            try:
                betas.append(vertical_wavenumbers(med.kappa_sq(omega), a))
            except ResonanceError as exc:
                idx = tuple(int(v) for v in n[exc.index])
                raise ResonanceError(f"resonant mode n={idx}", index=idx) from None
        sets.append(
            tuple(
                Mode(tuple(int(v) for v in n[i]), tuple(a[i]), complex(betas[0][i]), complex(betas[1][i]))
                for i in range(len(n))
            )
        )
    return ModeSet(N1, N2, sets[0], sets[1], float(L1), float(L2), omega, (top, bottom))


def capacity_matrices(alphas, betas, kappa_sq, mu, omega) -> np.ndarray:
    alphas = np.asarray(alphas, dtype=float).reshape(-1, 2)
    a1, a2 = alphas[:, 0], alphas[:, 1]
    scale = 1.0 / (omega * mu * np.asarray(betas, dtype=complex))
    C = np.empty((len(a1), 2, 2), dtype=complex)
    C[:, 0, 0] = (kappa_sq - a2**2) * scale
    C[:, 0, 1] = a1 * a2 * scale
    C[:, 1, 0] = C[:, 0, 1]
    C[:, 1, 1] = (kappa_sq - a1**2) * scale
    return C


def capacity_coefficients(alpha_n, beta, kappa_sq, mu, omega, phi1, phi2):
    """Mode-wise capacity operator: ``(phi1, phi2) -> (r1, r2)``."""
    a1, a2 = float(alpha_n[0]), float(alpha_n[1])
    c = 1.0 / (omega * mu * beta)
    r1 = ((kappa_sq - a2**2) * phi1 + a1 * a2 * phi2) * c
    r2 = ((kappa_sq - a1**2) * phi2 + a1 * a2 * phi1) * c
    return r1, r2


def adjoint_capacity_coefficients(alpha_n, beta, kappa_sq, mu, omega, phi1, phi2):
    """Adjoint operator coefficients: same map with conjugated ``kappa^2, mu, beta``."""
    return capacity_coefficients(
        alpha_n, np.conj(beta), np.conj(kappa_sq), np.conj(mu), omega, phi1, phi2
    )
