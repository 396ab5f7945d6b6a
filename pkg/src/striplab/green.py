"""Finite-volume Green functions, resonant sites and Wegner statistics.

``G_E[H_box](i, j)`` is the ``(i, j)`` block of ``(H_box - E)^-1``.  It is
computed three ways that are cross-checked in the test-suite: block
tridiagonal elimination, the Psi-matrix formulas built from the two
boundary-normalised matrix solutions, and the symmetric ``X^+ - X^-``
representation built from the conjugated cocycle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.linalg import eig_banded, eigvalsh_tridiagonal

from ._validation import check_energy, check_int, check_real
from .errors import ConfigurationError, DegenerateConfigurationError, NearSingularError, NumericalError, OutOfRangeError
from .lyapunov import binomial_stderr, fit_exponential_tail, non_increasing
from .model import Window, _as_window, assemble_finite_operator, sample_realization
from .transfer import conjugated_one_step, multi_step, symplectic_inverse

NEAR_SINGULAR = 1e-12
DENSE_LIMIT = 4000
RESIDUAL_RTOL = 1e-8
_PIVOT_COND = 1e13
_DEGENERATE = 1e-13


class GreenMethod(str, Enum):
    DIRECT = "DirectSolve"
    PSI = "PsiFormula"
    X = "XFormula"


@dataclass(frozen=True, eq=False)
class GreenBlock:
    value: np.ndarray
    box: Window
    row_site: int
    col_site: int
    energy: complex
    method: GreenMethod


# --------------------------------------------------------------------------
# spectra


def spectrum(H):
    """All eigenvalues of a block operator, ascending (banded solver)."""
    if H.width == 1:
        if H.n_sites == 1:
            return np.array([H.diag[0, 0, 0]])
        return eigvalsh_tridiagonal(H.diag[:, 0, 0], H.upper[:, 0, 0])
    return eig_banded(H.to_banded(), lower=True, eigvals_only=True)


def distance_to_spectrum(H, E):
    ev = spectrum(H)
    return float(np.min(np.abs(ev - E)))


# --------------------------------------------------------------------------
# direct solve


def _block_thomas(H, E, col):
    """Column ``col`` of ``(H - E)^-1`` as an array ``(n, W, W)``; ``None`` on a bad pivot."""
    n, W = H.n_sites, H.width
    dtype = np.result_type(H.diag, E)
    eye = np.eye(W)
    A = H.diag - E * eye
    B = H.upper
    Dinv = np.empty((n, W, W), dtype=dtype)
    y = np.zeros((n, W, W), dtype=dtype)
    y[col] = eye
    D = A[0]
    for k in range(n):
        if k:
            C = B[k - 1].T
            D = A[k] - C @ Dinv[k - 1] @ B[k - 1]
            y[k] = y[k] - C @ Dinv[k - 1] @ y[k - 1]
        if np.linalg.cond(D) > _PIVOT_COND:
            return None
        Dinv[k] = np.linalg.inv(D)
    X = np.empty_like(y)
    X[n - 1] = Dinv[n - 1] @ y[n - 1]
    for k in range(n - 2, -1, -1):
        X[k] = Dinv[k] @ (y[k] - B[k] @ X[k + 1])
    return X


def _dense_column(H, E, col):
    W = H.width
    M = H.toarray() - E * np.eye(H.dim)
    rhs = np.zeros((H.dim, W), dtype=np.result_type(M, E))
    rhs[col * W : (col + 1) * W] = np.eye(W)
    try:
        X = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        return None
    return X.reshape(H.n_sites, W, W)


def _residual(H, E, X, col):
    W = H.width
    R = (H.diag - E * np.eye(W)) @ X
    R[:-1] += H.upper @ X[1:]
    R[1:] += np.swapaxes(H.upper, 1, 2) @ X[:-1]
    R[col] -= np.eye(W)
    return float(np.linalg.norm(R))


def _operator_scale(H, E):
    """Frobenius norm of ``H - E`` (upper bound for its spectral norm)."""
    W = H.width
    return float(np.sqrt(np.sum(np.abs(H.diag - E * np.eye(W)) ** 2) + 2 * np.sum(H.upper**2)))


def green_column(H, E, j):
    """Block column ``G(., j)`` of ``(H - E)^-1``, shape ``(n_sites, W, W)``.

    Block elimination first; the dense solver takes over when a pivot block
    is ill-conditioned.  Raises :class:`NearSingularError` when ``E`` lies
    within ``1e-12`` of the spectrum.
    """
    E = check_energy(E, allow_complex=True)
    col = H.block_index(j)
    X = _block_thomas(H, E, col)
    if X is None or not np.all(np.isfinite(X)):
        X = _dense_column(H, E, col) if H.dim <= DENSE_LIMIT else None
    scale = _operator_scale(H, E)
    ok = X is not None and np.all(np.isfinite(X))
    if ok:
        normX = float(np.linalg.norm(X))
        ok = _residual(H, E, X, col) <= RESIDUAL_RTOL * max(normX * scale, 1.0) and normX < 1e10
    if not ok:
        if np.iscomplexobj(E) and abs(np.imag(E)) > NEAR_SINGULAR:
            dist = abs(np.imag(E))
        else:
            dist = distance_to_spectrum(H, np.real(E)) if not np.iscomplexobj(E) else abs(
                complex(np.min(spectrum(H) - E), 0)
            )
        if dist <= NEAR_SINGULAR:
            raise NearSingularError(f"E = {E} lies within {dist:.3g} of the spectrum", distance=dist)
        if X is None or not np.all(np.isfinite(X)):
            raise NumericalError(f"Green-function solve failed at E = {E} (dist to spectrum {dist:.3g})")
    return X


def green_direct(H, E, i, j):
    """``G_E[H](i, j)`` by block-tridiagonal elimination."""
    X = green_column(H, E, j)
    return GreenBlock(X[H.block_index(i)], H.window, i, j, E, GreenMethod.DIRECT)


def green_full(H, E):
    """Dense ``(H - E)^-1`` reshaped into blocks ``(n, n, W, W)`` (oracle use)."""
    n, W = H.n_sites, H.width
    G = np.linalg.inv(H.toarray() - E * np.eye(H.dim))
    return G.reshape(n, W, n, W).transpose(0, 2, 1, 3)


# --------------------------------------------------------------------------
# Psi matrices


@dataclass(frozen=True, eq=False)
class PsiPair:
    """Matrix solutions ``Psi^+`` (vanishing beyond the right edge) and
    ``Psi^-`` (vanishing beyond the left edge) on the box ``[x-N, x+N]``.

    Indexed by absolute site; both maps cover ``x-N .. x+N+1``.
    """

    Psi_plus: dict
    Psi_minus: dict
    center: int
    N: int
    energy: float


@dataclass
class _Propagation:
    """Column-normalised pairs ``(Psi_{s+1}; Psi_s) = P_s M_s``.

    ``pairs[s]`` holds ``P_s`` (orthonormal columns) and ``minv[s]`` holds
    ``M_s^-1``; ``logscale[s]`` is ``log|det M_s|``.
    """

    pairs: dict = field(default_factory=dict)
    minv: dict = field(default_factory=dict)
    logscale: dict = field(default_factory=dict)

    def top(self, s):
        return self.pairs[s][: self.pairs[s].shape[0] // 2]

    def bottom(self, s):
        return self.pairs[s][self.pairs[s].shape[0] // 2 :]


def _check_box(real, x, N):
    box = Window(x - N, x + N)
    if box not in real.window:
        raise OutOfRangeError(f"box [{box.lo}, {box.hi}] exceeds sampled window [{real.window.lo}, {real.window.hi}]")
    return box


def _propagate(real, x, N, E, side):
    """Pairs for ``Psi^+`` (side=+1, downward) or ``Psi^-`` (side=-1, upward)."""
    W = real.width
    dtype = np.result_type(float, E)
    eye = np.eye(W)
    out = _Propagation()
    Minv = np.eye(W, dtype=dtype)
    logscale = 0.0

    if side > 0:
        nxt, cur = np.zeros((W, W), dtype=dtype), eye.astype(dtype)  # Psi_{x+N+1}, Psi_{x+N}
        s = x + N
        out.pairs[s] = np.vstack([nxt, cur])
        out.minv[s] = Minv.copy()
        out.logscale[s] = logscale
        while s > x - N:
            # L_{s-1}^T Psi_{s-1} = (E - V_s) Psi_s - L_s Psi_{s+1}
            rhs = (E * eye - real.V_at(s)) @ cur
            if s < x + N:
                rhs = rhs - real.L_at(s) @ nxt
            prev = np.linalg.solve(real.L_at(s - 1).T, rhs)
            pair = np.vstack([cur, prev])
            Q, R = np.linalg.qr(pair)
            s -= 1
            Minv = Minv @ np.linalg.inv(R)
            logscale += float(np.sum(np.log(np.abs(np.diag(R)))))
            out.pairs[s], out.minv[s], out.logscale[s] = Q, Minv.copy(), logscale
            nxt, cur = Q[:W], Q[W:]
    else:
        cur, prev = eye.astype(dtype), np.zeros((W, W), dtype=dtype)  # Psi_{x-N}, Psi_{x-N-1}
        s = x - N
        while s <= x + N:
            # L_s Psi_{s+1} = (E - V_s) Psi_s - L_{s-1}^T Psi_{s-1}
            rhs = (E * eye - real.V_at(s)) @ cur
            if s > x - N:
                rhs = rhs - real.L_at(s - 1).T @ prev
            new = np.linalg.solve(real.L_at(s), rhs)
            pair = np.vstack([new, cur])
            Q, R = np.linalg.qr(pair)
            Minv = Minv @ np.linalg.inv(R)
            logscale += float(np.sum(np.log(np.abs(np.diag(R)))))
            out.pairs[s], out.minv[s], out.logscale[s] = Q, Minv.copy(), logscale
            cur, prev = Q[:W], Q[W:]
            s += 1
    return out


def _reconstruct(prop, s, which):
    """``Psi_s`` (which='bottom') or ``Psi_{s+1}`` (which='top') from pair ``s``."""
    A = prop.bottom(s) if which == "bottom" else prop.top(s)
    with np.errstate(over="raise", invalid="raise"):
        try:
            return A @ np.linalg.inv(prop.minv[s])
        except (FloatingPointError, np.linalg.LinAlgError) as exc:
            raise NumericalError("Psi matrices overflow; use the ratio form (green_via_psi)") from exc


def psi_matrices(real, x, N, E):
    """Boundary-normalised matrix solutions on ``[x-N, x+N]``.

    ``Psi^+`` solves the homogeneous three-term relation with
    ``Psi^+_{x+N+1} = 0, Psi^+_{x+N} = 1``; ``Psi^-`` with
    ``Psi^-_{x-N-1} = 0, Psi^-_{x-N} = 1``.
    """
    x = check_int(x, "x")
    N = check_int(N, "N", minimum=0)
    E = check_energy(E, allow_complex=True)
    _check_box(real, x, N)
    W = real.width
    plus_prop = _propagate(real, x, N, E, +1)
    minus_prop = _propagate(real, x, N, E, -1)
    plus = {x + N + 1: np.zeros((W, W))}
    for s in range(x - N, x + N + 1):
        plus[s] = _reconstruct(plus_prop, s, "bottom")
    minus = {}
    for s in range(x - N, x + N + 1):
        minus[s] = _reconstruct(minus_prop, s, "bottom")
    minus[x + N + 1] = _reconstruct(minus_prop, x + N, "top")
    if not all(np.all(np.isfinite(m)) for m in list(plus.values()) + list(minus.values())):
        raise NumericalError("Psi matrices overflow; use the ratio form (green_via_psi)")
    return PsiPair(plus, minus, x, N, E)


def psi_extractions(real, x, N, E, s):
    """``Psi^+_s`` and ``Psi^-_s`` read off cocycle products in two ways each.

    Returns ``{"plus": (top, shifted), "minus": (top, shifted)}`` where
    ``top`` is the upper block row of ``Phi_{s, .}`` and ``shifted`` the lower
    block row of ``Phi_{s+1, .}``.  Needs the sites ``x-N-1 .. x+N``.
    """
    W = real.width
    e_lo = np.vstack([np.zeros((W, W)), np.eye(W)])
    e_hi = np.vstack([np.eye(W), np.zeros((W, W))])
    out = {}
    for key, start, vec in (("plus", x + N + 1, e_lo), ("minus", x - N, e_hi)):
        top = (multi_step(real, s, start, E).entries @ vec)[:W]
        shifted = (multi_step(real, s + 1, start, E).entries @ vec)[W:]
        out[key] = (top, shifted)
    return out


def _checked_inv(M, what):
    s = np.linalg.svd(M, compute_uv=False)
    if s[-1] <= _DEGENERATE * max(s[0], 1.0):
        raise DegenerateConfigurationError(f"{what} is singular (s_min = {s[-1]:.3g})", smallest_singular_value=float(s[-1]))
    return np.linalg.inv(M)


def green_via_psi(real, x, N, E):
    """``G(x, x)``, ``G(x, x-N)`` and ``G(x, x+N)`` on the box ``[x-N, x+N]``.

    ``G(x, x) = (Psi^+_{x+1} (Psi^+_x)^-1 - Psi^-_{x+1} (Psi^-_x)^-1)^-1 L_x^-1``;
    the column ``G(., x)`` equals ``Psi^+_s (Psi^+_x)^-1 G(x, x)`` to the right
    and the analogue with ``Psi^-`` to the left, so the corner blocks follow
    from ``Psi^+_{x+N} = Psi^-_{x-N} = 1`` and symmetry of ``H``.

    Only ratios of the column-normalised pairs enter, so this stays finite
    where the raw Psi matrices overflow.
    """
    x = check_int(x, "x")
    N = check_int(N, "N", minimum=0)
    E = check_energy(E, allow_complex=True)
    box = _check_box(real, x, N)
    plus = _propagate(real, x, N, E, +1)
    minus = _propagate(real, x, N, E, -1)

    Ap_inv = _checked_inv(plus.bottom(x), "Psi^+_x")
    Am_inv = _checked_inv(minus.bottom(x), "Psi^-_x")
    ratio_p = plus.top(x) @ Ap_inv
    ratio_m = minus.top(x) @ Am_inv
    diff_inv = _checked_inv(ratio_p - ratio_m, "Psi ratio difference")
    G00 = diff_inv @ np.linalg.inv(real.L_at(x))

    # (Psi_x)^-1 = M_x^-1 A_x^-1 ; G(x+N, x) = (Psi^+_x)^-1 G(x, x) since Psi^+_{x+N} = 1
    G_right_col = plus.minv[x] @ Ap_inv @ G00
    G_left_col = minus.minv[x] @ Am_inv @ G00
    return {
        "diag": GreenBlock(G00, box, x, x, E, GreenMethod.PSI),
        "plus": GreenBlock(G_right_col.T, box, x, x + N, E, GreenMethod.PSI),
        "minus": GreenBlock(G_left_col.T, box, x, x - N, E, GreenMethod.PSI),
    }


# --------------------------------------------------------------------------
# X matrices


@dataclass(frozen=True, eq=False)
class XResult:
    """``X^+``, ``X^-`` and ``G(i, i) = L_i^-T (X^+ - X^-)^-1 L_i^-1``."""

    X_plus: np.ndarray
    X_minus: np.ndarray
    G: GreenBlock

    @property
    def symmetry_defects(self):
        """Relative ``||X - X^T|| / ||X||`` for ``X^+`` and ``X^-``."""
        out = []
        for X in (self.X_plus, self.X_minus):
            nrm = np.linalg.norm(X)
            out.append(float(np.linalg.norm(X - X.T) / nrm) if nrm > 0 else 0.0)
        return tuple(out)


def _frame_propagate(steps, frame):
    """Apply ``steps`` (first element first) to a 2W x W frame, re-orthonormalising each time.

    Only the span matters for ``top @ bottom^-1``, so the QR factors are
    dropped; this keeps the frame well conditioned where the raw product is not.
    """
    for M in steps:
        frame, _ = np.linalg.qr(M @ frame)
    return frame


def x_matrices(real, i, N, E, center=0, unit_boundary_hopping=False):
    """Symmetric matrices ``X^+`` and ``X^-`` on the box ``[center-N, center+N]``.

    ``X^+ = Y_12 Y_22^-1`` with ``Y = Phi~_{i+1, center+N+1}`` and
    ``X^- = Z_11 Z_21^-1`` with ``Z = Phi~_{i+1, center-N}``.  ``X^+`` does not
    depend on the hopping ``L_{center+N}`` leaving the box; with
    ``unit_boundary_hopping`` it is set to the identity first.

    The block columns ``Y (0; 1)`` and ``Z (1; 0)`` are propagated as
    orthonormalised frames, which leaves both ratios unchanged.
    """
    i, N, center = check_int(i, "i"), check_int(N, "N", minimum=0), check_int(center, "center")
    E = check_energy(E)
    box = _check_box(real, center, N)
    if i not in box:
        raise OutOfRangeError(f"site {i} outside box [{box.lo}, {box.hi}]")
    W = real.width
    right = real.with_hopping(center + N, np.eye(W)) if unit_boundary_hopping else real
    eye, zero = np.eye(W), np.zeros((W, W))
    # Phi~_{i+1, c+N+1} = T~_{i+1}^-1 ... T~_{c+N}^-1: T~_{c+N}^-1 acts first
    up = (symplectic_inverse(conjugated_one_step(right, s, E).entries) for s in range(center + N, i, -1))
    Y = _frame_propagate(up, np.vstack([zero, eye]))
    # Phi~_{i+1, c-N} = T~_i ... T~_{c-N}: T~_{c-N} acts first
    down = (conjugated_one_step(real, s, E).entries for s in range(center - N, i + 1))
    Z = _frame_propagate(down, np.vstack([eye, zero]))
    X_plus = Y[:W] @ _checked_inv(Y[W:], "(Phi~_{i+1,N+1})_22")
    X_minus = Z[:W] @ _checked_inv(Z[W:], "(Phi~_{i+1,-N})_21")
    Li_inv = np.linalg.inv(real.L_at(i))
    G = Li_inv.T @ _checked_inv(X_plus - X_minus, "X^+ - X^-") @ Li_inv
    return XResult(X_plus, X_minus, GreenBlock(G, box, i, i, E, GreenMethod.X))


# --------------------------------------------------------------------------
# batched local Green functions


def _local_boxes(real, centers, N):
    """Dense ``H_{[x-N, x+N]}`` for every centre, shape ``(S, n, n)``."""
    W = real.width
    n = 2 * N + 1
    lo = real.window.lo
    idx = np.asarray(centers)[:, None] + np.arange(-N, N + 1)[None, :] - lo
    V = real.V[idx]  # (S, n, W, W)
    S = len(centers)
    H = np.zeros((S, n, W, n, W))
    k = np.arange(n)
    H[:, k, :, k, :] = np.swapaxes(V, 0, 1)
    if N > 0:
        Lb = real.L[idx[:, :-1]]  # (S, n-1, W, W)
        k = np.arange(n - 1)
        H[:, k, :, k + 1, :] = np.swapaxes(Lb, 0, 1)
        H[:, k + 1, :, k, :] = np.swapaxes(np.swapaxes(Lb, 2, 3), 0, 1)
    return H.reshape(S, n * W, n * W)


def local_corner_blocks(real, centers, N, E):
    """``G(x, x-N)`` and ``G(x, x+N)`` on ``[x-N, x+N]`` for many centres at once.

    Returns arrays ``(S, W, W)`` for both corners; rows whose box is singular
    at ``E`` are ``inf``.
    """
    W = real.width
    centers = np.asarray(centers, dtype=int)
    for c in (centers.min(), centers.max()):
        _check_box(real, int(c), N)
    H = _local_boxes(real, centers, N)
    n = H.shape[1]
    M = H - E * np.eye(n)
    rhs = np.zeros((n, W))
    rhs[N * W : (N + 1) * W] = np.eye(W)
    try:
        col = np.linalg.solve(M, np.broadcast_to(rhs, M.shape[:1] + rhs.shape))
    except np.linalg.LinAlgError:
        col = np.empty((len(centers), n, W))
        for s in range(len(centers)):
            try:
                col[s] = np.linalg.solve(M[s], rhs)
            except np.linalg.LinAlgError:
                col[s] = np.inf
    # G(x, x+-N) = G(x+-N, x)^T
    minus = np.swapaxes(col[:, :W, :], 1, 2)
    plus = np.swapaxes(col[:, n - W :, :], 1, 2)
    return minus, plus


# --------------------------------------------------------------------------
# resonances


@dataclass(frozen=True, eq=False)
class ResonanceReport:
    """Resonant sites ``Res(tau, E, N)`` within ``window``.

    ``diameter`` is ``max - min`` of the resonant sites, ``0`` for a single
    site and ``-1`` when there is none.  Green-function blocks are measured in
    operator norm.
    """

    tau: float
    energy: float
    N: int
    window: Window
    resonant_sites: list
    diameter: int
    gammaW_used: float
    norm: str = "operator"
    green_norms: np.ndarray = field(default=None, repr=False)
    hopping_norms: np.ndarray = field(default=None, repr=False)

    def to_record(self):
        return {
            "kind": "resonance",
            "tau": self.tau,
            "E": self.energy,
            "N": self.N,
            "window": [self.window.lo, self.window.hi],
            "resonant_sites": list(self.resonant_sites),
            "diameter": self.diameter,
            "gammaW_used": self.gammaW_used,
            "norm": self.norm,
        }

    def csv_rows(self):
        res = set(self.resonant_sites)
        return [(int(x), self.energy, int(x in res)) for x in self.window.sites()]


def _diameter(sites):
    if not sites:
        return -1
    return int(max(sites) - min(sites))


def resonance_set(real, tau, E, N, scan_window, gammaW):
    """Sites ``x`` of ``scan_window`` failing ``||L_x|| <= e^{tau N}`` or
    ``||G_E[H_{[x-N,x+N]}](x, x+-N)|| <= e^{-(gammaW - tau) N}``."""
    tau = check_real(tau, "tau", positive=True)
    gammaW = check_real(gammaW, "gammaW", positive=True)
    if tau >= gammaW:
        raise ConfigurationError(f"tau = {tau} must be below gammaW = {gammaW}; the test is vacuous otherwise")
    E = check_energy(E)
    N = check_int(N, "N", minimum=1)
    scan = _as_window(scan_window)
    if Window(scan.lo - N, scan.hi + N) not in real.window:
        raise OutOfRangeError("scan window +- N exceeds the sampled window")
    centers = scan.sites()
    minus, plus = local_corner_blocks(real, centers, N, E)
    with np.errstate(invalid="ignore"):
        gnorm = np.maximum(_opnorm(minus), _opnorm(plus))
    gnorm = np.where(np.isfinite(gnorm), gnorm, np.inf)
    hnorm = _opnorm(real.L[centers - real.window.lo])
    resonant = (hnorm > np.exp(tau * N)) | ~(gnorm <= np.exp(-(gammaW - tau) * N))
    sites = [int(c) for c in centers[resonant]]
    return ResonanceReport(tau, E, N, scan, sites, _diameter(sites), gammaW, "operator", gnorm, hnorm)


def _opnorm(blocks):
    blocks = np.asarray(blocks)
    if not np.all(np.isfinite(blocks)):
        out = np.full(blocks.shape[0], np.inf)
        ok = np.all(np.isfinite(blocks), axis=(1, 2))
        if ok.any():
            out[ok] = np.linalg.norm(blocks[ok], ord=2, axis=(1, 2))
        return out
    return np.linalg.norm(blocks, ord=2, axis=(1, 2))


@dataclass(frozen=True, eq=False)
class ResonanceStatistics:
    """Empirical ``P{diam(Res(tau, E, N) within [-N^2, N^2]) > 2N}`` per N."""

    Ns: list
    probability: np.ndarray
    stderr: np.ndarray
    counts: np.ndarray
    replicas: int
    tau: float
    gammaW: float
    energy: float
    diameters: dict = field(repr=False)

    def to_record(self):
        return {
            "kind": "resonance_diameter",
            "Ns": list(self.Ns),
            "probability": self.probability.tolist(),
            "stderr": self.stderr.tolist(),
            "counts": self.counts.tolist(),
            "replicas": self.replicas,
            "tau": self.tau,
            "gammaW": self.gammaW,
            "E": self.energy,
        }


def resonance_diameter_statistics(spec, tau, E, Ns, replicas, gammaW, seed=0):
    Ns = [check_int(n, "N", minimum=1) for n in Ns]
    replicas = check_int(replicas, "replicas", minimum=1)
    counts, diams = [], {}
    for N in Ns:
        half = N * N
        d = np.empty(replicas, dtype=int)
        for r in range(replicas):
            real = sample_realization(spec, Window(-half - N, half + N), seed, r)
            d[r] = resonance_set(real, tau, E, N, Window(-half, half), gammaW).diameter
        diams[N] = d
        counts.append(int(np.sum(d > 2 * N)))
    counts = np.array(counts)
    p = counts / replicas
    return ResonanceStatistics(Ns, p, binomial_stderr(p, replicas), counts, replicas, tau, gammaW, E, diams)


@dataclass(frozen=True, eq=False)
class ResStarScan:
    """Grid energies where ``max_+- ||G_E(x, x+-N)||_{1,inf} >= e^{-(gamma - tau/2) N}``.

    ``||A||_{1,inf}`` is the entrywise maximum ``max |A_ab|``; ``runs`` counts
    maximal runs of consecutive marked grid points.
    """

    energies: np.ndarray
    marked: np.ndarray
    runs: int
    threshold: float
    x: int
    N: int
    norm: str = "entrywise_max"

    @property
    def marked_energies(self):
        return self.energies[self.marked]


def count_runs(mask):
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0:
        return 0
    return int(mask[0]) + int(np.sum(mask[1:] & ~mask[:-1]))


def res_star_scan(real, x, N, energy_grid, tau, gamma_ref):
    """Mark grid energies in ``Res*(tau, x, N)`` using one eigendecomposition of the box."""
    x, N = check_int(x, "x"), check_int(N, "N", minimum=1)
    tau = check_real(tau, "tau", positive=True)
    gamma_ref = check_real(gamma_ref, "gamma_ref")
    box = _check_box(real, x, N)
    H = assemble_finite_operator(real, box)
    W = real.width
    lam, vec = np.linalg.eigh(H.toarray())
    vec = vec.reshape(H.n_sites, W, -1)
    psi_x, psi_l, psi_r = vec[N], vec[0], vec[-1]  # (W, K)
    E = np.asarray(energy_grid, dtype=float)
    denom = lam[None, :] - E[:, None]
    scale = max(1.0, float(np.max(np.abs(lam))))
    on_pole = np.any(np.abs(denom) <= NEAR_SINGULAR * scale, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / denom
        inv[~np.isfinite(inv)] = 0.0
        Gl = np.einsum("ak,bk,ek->eab", psi_x, psi_l, inv)
        Gr = np.einsum("ak,bk,ek->eab", psi_x, psi_r, inv)
    entry = np.maximum(np.abs(Gl).max(axis=(1, 2)), np.abs(Gr).max(axis=(1, 2)))
    threshold = float(np.exp(-(gamma_ref - tau / 2) * N))
    marked = on_pole | (entry >= threshold)
    return ResStarScan(E, marked, count_runs(marked), threshold, x, N)


def res_star_run_bound(W, N):
    """Interval-count bound ``W(W+1)/2 * 2 * W(2N+1)/2``."""
    return W * (W + 1) * W * (2 * N + 1) // 2


# --------------------------------------------------------------------------
# Wegner statistics


@dataclass(frozen=True, eq=False)
class WegnerResult:
    """Empirical ``P{dist(E, sigma(H_{[-N,N]})) <= e^{-epsilon N}}`` per N."""

    energy: float
    epsilon: float
    Ns: list
    frequency: np.ndarray
    stderr: np.ndarray
    counts: np.ndarray
    replicas: int
    rate: float
    rate_ci: tuple
    rate_is_bound: bool
    monotone: bool
    distances: dict = field(repr=False)

    def to_record(self):
        return {
            "kind": "wegner",
            "E": self.energy,
            "epsilon": self.epsilon,
            "Ns": list(self.Ns),
            "frequency": self.frequency.tolist(),
            "stderr": self.stderr.tolist(),
            "counts": self.counts.tolist(),
            "replicas": self.replicas,
            "rate": self.rate,
            "rate_is_bound": self.rate_is_bound,
            "monotone": self.monotone,
        }


def wegner_sample(spec, E, Ns, replicas, epsilon, seed=0):
    """Distances from ``E`` to the spectrum of ``H_{[-N, N]}`` over replicas."""
    E = check_energy(E)
    epsilon = check_real(epsilon, "epsilon", positive=True)
    Ns = [check_int(n, "N", minimum=1) for n in np.atleast_1d(Ns)]
    replicas = check_int(replicas, "replicas", minimum=1)
    distances, counts = {}, []
    for N in Ns:
        box = Window(-N, N)
        d = np.empty(replicas)
        for r in range(replicas):
            H = assemble_finite_operator(sample_realization(spec, box, seed, r), box)
            d[r] = distance_to_spectrum(H, E)
        distances[N] = d
        counts.append(int(np.sum(d <= np.exp(-epsilon * N))))
    counts = np.array(counts)
    p = counts / replicas
    se = binomial_stderr(p, replicas)
    if len(Ns) >= 2:
        rate, ci, _, is_bound, _ = fit_exponential_tail(Ns, counts, replicas)
    else:
        rate, ci, is_bound = float("nan"), (float("nan"), float("nan")), True
    return WegnerResult(E, epsilon, Ns, p, se, counts, replicas, rate, ci, is_bound, non_increasing(p, se), distances)
