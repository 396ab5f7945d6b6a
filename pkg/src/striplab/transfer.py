"""Transfer matrices of the three-term recursion and their symplectic conjugates.

A formal solution of ``L_x psi(x+1) + V_x psi(x) + L_{x-1}^T psi(x-1) = E psi(x)``
is propagated by ``(psi(x+1), psi(x)) = T_x (psi(x), psi(x-1))``.  Conjugating
by ``D_x = diag(1, L_x^T)`` gives ``Q(L_x, E - V_x)``, which is symplectic.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ._validation import check_energy, check_int
from .errors import ConfigurationError

MAX_SEGMENT = 200
SYMPLECTIC_RTOL = 1e-10


@lru_cache(maxsize=None)
def _symplectic_form(W):
    J = np.zeros((2 * W, 2 * W))
    J[:W, W:] = -np.eye(W)
    J[W:, :W] = np.eye(W)
    J.flags.writeable = False
    return J


def symplectic_form(W):
    """The matrix ``J = [[0, -1], [1, 0]]`` in blocks of size W."""
    return _symplectic_form(check_int(W, "W", minimum=1))


def symplectic_defect(M):
    """Frobenius norm of ``M^T J M - J``."""
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] % 2:
        raise ConfigurationError(f"expected a 2W x 2W matrix, got shape {M.shape}")
    J = _symplectic_form(M.shape[0] // 2)
    return float(np.linalg.norm(M.T @ J @ M - J))


def relative_symplectic_defect(M):
    """``symplectic_defect(M) / ||M||_F^2``."""
    return symplectic_defect(M) / float(np.linalg.norm(M)) ** 2


def q_matrix(L, Z):
    """``Q(L, Z) = [[L^-1 Z, -L^-1], [L^T, 0]]``; symplectic for symmetric Z."""
    L = np.asarray(L)
    W = L.shape[0]
    Linv = np.linalg.inv(L)
    Q = np.zeros((2 * W, 2 * W), dtype=np.result_type(L, Z))
    Q[:W, :W] = Linv @ Z
    Q[:W, W:] = -Linv
    Q[W:, :W] = L.T
    return Q


def symplectic_inverse(M):
    """``J^-1 M^T J``, the inverse of a symplectic matrix."""
    J = _symplectic_form(M.shape[0] // 2)
    return -J @ M.T @ J


def conjugator(real, x):
    """``D_x = diag(1, L_x^T)``."""
    W = real.width
    D = np.eye(2 * W)
    D[W:, W:] = real.L_at(x).T
    return D


@dataclass(frozen=True, eq=False)
class TransferMatrix:
    entries: np.ndarray
    energy: float
    site: int
    conjugated: bool = False


@dataclass(frozen=True, eq=False)
class CocycleSegment:
    """``Phi_{to, from}``: maps ``(psi(from), psi(from-1))`` to ``(psi(to), psi(to-1))``."""

    entries: np.ndarray
    start: int
    stop: int
    energy: float
    conjugated: bool = False


def _raw_step(L, Lprev, V, E):
    W = L.shape[0]
    Linv = np.linalg.inv(L)
    T = np.zeros((2 * W, 2 * W), dtype=np.result_type(L, V, E))
    T[:W, :W] = Linv @ (E * np.eye(W) - V)
    T[:W, W:] = -Linv @ Lprev.T
    T[W:, :W] = np.eye(W)
    return T


def one_step(real, x, E):
    """``T_x(E) = [[L_x^-1 (E - V_x), -L_x^-1 L_{x-1}^T], [1, 0]]``."""
    x = check_int(x, "x")
    E = check_energy(E, allow_complex=True)
    T = _raw_step(real.L_at(x), real.L_at(x - 1), real.V_at(x), E)
    return TransferMatrix(T, E, x, False)


def conjugated_one_step(real, x, E):
    """``D_x T_x D_{x-1}^-1 = Q(L_x, E - V_x)``."""
    x = check_int(x, "x")
    E = check_energy(E, allow_complex=True)
    W = real.width
    T = q_matrix(real.L_at(x), E * np.eye(W) - real.V_at(x))
    return TransferMatrix(T, E, x, True)


def multi_step(real, x, y, E, conjugated=False, max_length=MAX_SEGMENT):
    """Ordered product ``Phi_{x,y}`` (or its conjugate).

    ``x > y``: ``T_{x-1} ... T_y``; ``x == y``: identity; ``x < y``:
    ``T_x^-1 ... T_{y-1}^-1``.  Segments longer than ``max_length`` are
    refused because raw products overflow; use the QR-stabilised
    accumulators in :mod:`striplab.lyapunov` instead.
    """
    x, y = check_int(x, "x"), check_int(y, "y")
    E = check_energy(E, allow_complex=True)
    if abs(x - y) > max_length:
        raise ConfigurationError(
            f"segment length {abs(x - y)} exceeds {max_length}; use the stabilised accumulators"
        )
    W = real.width
    step = conjugated_one_step if conjugated else one_step
    M = np.eye(2 * W, dtype=np.result_type(float, E))
    if x > y:
        for s in range(y, x):
            M = step(real, s, E).entries @ M
    elif x < y:
        for s in range(y - 1, x - 1, -1):
            T = step(real, s, E).entries
            Tinv = symplectic_inverse(T) if conjugated else np.linalg.inv(T)
            M = Tinv @ M
    return CocycleSegment(M, y, x, E, conjugated)


def conjugated_steps(L, V, E):
    """Stack of ``Q(L_k, E - V_k)`` for arrays ``L``, ``V`` of shape ``(..., W, W)``."""
    W = L.shape[-1]
    Linv = np.linalg.inv(L)
    Z = E * np.eye(W) - V
    shape = np.broadcast_shapes(L.shape, V.shape)[:-2]
    T = np.zeros(shape + (2 * W, 2 * W), dtype=np.result_type(L, V, E))
    T[..., :W, :W] = Linv @ Z
    T[..., :W, W:] = -Linv
    T[..., W:, :W] = np.swapaxes(L, -1, -2)
    return T
