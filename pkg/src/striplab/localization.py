"""Finite-volume eigenfunctions, their decay rates and eigenfunction correlators."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from ._validation import check_int, check_interval, check_real
from .errors import ConfigurationError, InsufficientRangeError, NumericalError
from .model import Window, _as_window, assemble_finite_operator, sample_realization

DENSE_LIMIT = 4000
NORM_FLOOR = 1e-300
CLUSTER_TOL = 1e-10
EDGE_MARGIN = 10
MIN_FIT_POINTS = 10
CORRELATOR_SURROGATE = "sum_of_projection_block_norms"


# --------------------------------------------------------------------------
# eigenpairs


@dataclass(frozen=True, eq=False)
class EigenPair:
    """Normalised eigenpair of ``H_box``; ``vector[k]`` is the block at ``box.lo + k``."""

    energy: float
    vector: np.ndarray
    box: Window

    def block(self, x):
        return self.vector[x - self.box.lo]

    def site_norms(self):
        return np.linalg.norm(self.vector, axis=1)


def eigensystem(H):
    """Eigenvalues (ascending) and eigenvectors shaped ``(n_sites, W, K)``."""
    if H.dim > DENSE_LIMIT:
        raise ConfigurationError(f"dimension {H.dim} exceeds the dense limit {DENSE_LIMIT}")
    try:
        lam, vec = np.linalg.eigh(H.toarray())
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc
    return lam, vec.reshape(H.n_sites, H.width, -1)


def eigenpairs(H):
    """Complete orthonormal eigensystem of ``H`` as a list of :class:`EigenPair`."""
    lam, vec = eigensystem(H)
    return [EigenPair(float(lam[k]), vec[:, :, k], H.window) for k in range(lam.size)]


# --------------------------------------------------------------------------
# decay fits


@dataclass(frozen=True, eq=False)
class DecayFit:
    """One-sided least-squares fits of ``log ||psi(x)||`` against ``|x - peak|``.

    ``fit_range`` holds the distance ranges ``((d0, d1) left, (d0, d1) right)``
    actually used; ``decay_rate`` is ``min(-left_slope, -right_slope)``.
    """

    pair: EigenPair = field(repr=False)
    peak_site: int
    left_slope: float
    right_slope: float
    fit_range: tuple
    r2: tuple
    edge_state: bool

    @property
    def decay_rate(self):
        return min(-self.left_slope, -self.right_slope)

    def to_record(self):
        return {
            "kind": "decay_fit",
            "energy": self.pair.energy,
            "peak_site": self.peak_site,
            "left_slope": self.left_slope,
            "right_slope": self.right_slope,
            "fit_range": [list(r) for r in self.fit_range],
            "r2": list(self.r2),
            "edge_state": self.edge_state,
        }


def _line_fit(d, y):
    A = np.vstack([d, np.ones_like(d)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ np.array([slope, icpt])
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - float(resid @ resid) / ss if ss > 0 else 1.0
    return float(slope), r2


def _profile_fit(norms, peak, inner, outer_margin):
    """Slopes of ``log norms`` away from ``peak`` on both sides."""
    n = norms.size
    out = []
    for side in (-1, +1):
        edge = peak if side < 0 else n - 1 - peak
        d = np.arange(inner, edge - outer_margin + 1)
        vals = norms[peak + side * d] if d.size else np.empty(0)
        keep = vals >= NORM_FLOOR
        d, vals = d[keep], vals[keep]
        if d.size < MIN_FIT_POINTS:
            raise InsufficientRangeError(f"only {d.size} usable points on the {'left' if side < 0 else 'right'} side")
        slope, r2 = _line_fit(d.astype(float), np.log(vals))
        out.append((slope, r2, (int(d[0]), int(d[-1]))))
    return out


def decay_fit(pair, inner=5, outer_margin=5, edge_margin=EDGE_MARGIN):
    """Fit the exponential decay of an eigenfunction on both sides of its peak.

    Distances ``inner .. edge - outer_margin`` from the peak enter each fit;
    sites with ``||psi(x)|| < 1e-300`` are dropped.  Pairs peaking within
    ``edge_margin`` sites of the box boundary are flagged as edge states.
    """
    norms = pair.site_norms() if isinstance(pair, EigenPair) else np.asarray(pair, dtype=float)
    if not isinstance(pair, EigenPair):
        box = Window(0, norms.size - 1)
        pair = EigenPair(float("nan"), norms[:, None], box)
    peak = int(np.argmax(norms))
    n = norms.size
    edge_state = peak < edge_margin or n - 1 - peak < edge_margin
    (ls, lr2, lrange), (rs, rr2, rrange) = _profile_fit(norms, peak, inner, outer_margin)
    return DecayFit(pair, pair.box.lo + peak, ls, rs, (lrange, rrange), (lr2, rr2), edge_state)


@dataclass(frozen=True, eq=False)
class DecayStatistics:
    """Interior-eigenpair decay rates compared with ``threshold * gamma_W(lambda)``."""

    energies: np.ndarray
    rates: np.ndarray
    gamma: np.ndarray
    passed: np.ndarray
    fraction: float
    excluded: int
    threshold: float
    box_length: int
    replicas: int

    def to_record(self):
        return {
            "kind": "decay_rates",
            "n_interior": int(self.rates.size),
            "excluded": self.excluded,
            "fraction": self.fraction,
            "threshold": self.threshold,
            "median_ratio": float(np.median(self.rates / self.gamma)) if self.rates.size else float("nan"),
            "box_length": self.box_length,
            "replicas": self.replicas,
        }


def decay_statistics(spec, gamma, interval=(-0.5, 0.5), box_length=400, replicas=20, seed=0, threshold=0.9):
    """Fraction of interior eigenpairs with ``decay_rate >= threshold * gamma(lambda)``.

    ``gamma`` is a callable (e.g. a :class:`~striplab.lyapunov.GammaProfile`).
    Edge states and pairs with too short a fit range are counted in
    ``excluded``.
    """
    lo, hi = check_interval(interval, "interval")
    box_length = check_int(box_length, "box_length", minimum=40)
    replicas = check_int(replicas, "replicas", minimum=1)
    box = Window(0, box_length - 1)
    energies, rates, excluded = [], [], 0
    for r in range(replicas):
        H = assemble_finite_operator(sample_realization(spec, box, seed, r), box)
        lam, vec = eigensystem(H)
        for k in np.flatnonzero((lam >= lo) & (lam <= hi)):
            try:
                fit = decay_fit(np.linalg.norm(vec[:, :, k], axis=1))
            except InsufficientRangeError:
                excluded += 1
                continue
            if fit.edge_state:
                excluded += 1
                continue
            energies.append(lam[k])
            rates.append(fit.decay_rate)
    energies, rates = np.array(energies), np.array(rates)
    g = np.asarray(gamma(energies), dtype=float) if energies.size else np.empty(0)
    passed = rates >= threshold * g
    frac = float(passed.mean()) if passed.size else float("nan")
    return DecayStatistics(energies, rates, g, passed, frac, excluded, threshold, box_length, replicas)


# --------------------------------------------------------------------------
# eigenfunction correlator


@dataclass(frozen=True, eq=False)
class CorrelatorEstimate:
    """Sum over eigenvalue clusters in ``interval`` of ``||(Pi_k)_{x,y}||``.

    For a single box ``sup_over_boxes`` equals ``value``; ``box_family``
    lists the boxes that entered the maximum.
    """

    box: Window
    interval: tuple
    x: int
    y: int
    value: float
    sup_over_boxes: float
    box_family: tuple = ()
    surrogate: str = CORRELATOR_SURROGATE

    def to_record(self):
        return {
            "kind": "correlator",
            "box": [self.box.lo, self.box.hi],
            "interval": list(self.interval),
            "x": self.x,
            "y": self.y,
            "value": self.value,
            "sup_over_boxes": self.sup_over_boxes,
            "box_family": [list(b) for b in self.box_family],
            "surrogate": self.surrogate,
        }


def _clusters(lam):
    """Split indices of sorted ``lam`` into groups closer than ``CLUSTER_TOL``."""
    if lam.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(lam) > CLUSTER_TOL) + 1
    return np.split(np.arange(lam.size), breaks)


def correlator_values(lam, vec, interval, kx, kys):
    """Correlator between block ``kx`` and each block in ``kys`` (array-indexed)."""
    lo, hi = interval
    inside = np.flatnonzero((lam >= lo) & (lam <= hi))
    kys = np.atleast_1d(kys)
    out = np.zeros(kys.size)
    for group in _clusters(lam[inside]):
        idx = inside[group]
        # (Pi)_{x,y} = sum_k psi_k(x) psi_k(y)^T for each y, shape (ny, W, W)
        blocks = np.einsum("ak,ybk->yab", vec[kx][:, idx], vec[kys][:, :, idx])
        if blocks.shape[1] == 1:
            out += np.abs(blocks[:, 0, 0])
        else:
            out += np.linalg.norm(blocks, ord=2, axis=(1, 2))
    return out


def correlator(H, interval, x, y, eigen=None):
    """Eigenfunction-correlator surrogate on ``H`` for the energy interval."""
    interval = check_interval(interval, "interval")
    lam, vec = eigensystem(H) if eigen is None else eigen
    value = float(correlator_values(lam, vec, interval, H.block_index(x), H.block_index(y))[0])
    box = H.window
    return CorrelatorEstimate(box, interval, x, y, value, value, ((box.lo, box.hi),))


def correlator_sup(spec, interval, x, y, box_family, seed, replica_id=0):
    """Maximum of :func:`correlator` over a finite family of boxes containing ``x`` and ``y``."""
    boxes = [_as_window(b) for b in box_family]
    if not boxes:
        raise ConfigurationError("box_family must not be empty")
    for b in boxes:
        if x not in b or y not in b:
            raise ConfigurationError(f"box [{b.lo}, {b.hi}] does not contain both sites {x} and {y}")
    hull = Window(min(b.lo for b in boxes), max(b.hi for b in boxes))
    real = sample_realization(spec, hull, seed, replica_id)
    values = [correlator(assemble_finite_operator(real, b), interval, x, y).value for b in boxes]
    best = int(np.argmax(values))
    return CorrelatorEstimate(
        boxes[best],
        tuple(check_interval(interval, "interval")),
        x,
        y,
        values[0],
        float(max(values)),
        tuple((b.lo, b.hi) for b in boxes),
    )


@dataclass(frozen=True, eq=False)
class CorrelatorDecay:
    """Per-replica slopes of ``log Q(x, x + d)`` against ``d``."""

    slopes: np.ndarray
    median_slope: float
    max_value: float
    distances: tuple
    interval: tuple
    box_length: int
    profile: np.ndarray = field(default=None, repr=False)
    surrogate: str = CORRELATOR_SURROGATE

    def to_record(self):
        return {
            "kind": "correlator_decay",
            "slopes": self.slopes.tolist(),
            "median_profile": self.profile.tolist(),
            "median_slope": self.median_slope,
            "max_value": self.max_value,
            "distances": list(self.distances),
            "interval": list(self.interval),
            "box_length": self.box_length,
            "surrogate": self.surrogate,
        }


def correlator_decay(spec, interval=(-0.5, 0.5), box_length=400, replicas=20, seed=0, dmin=20, dmax=80):
    """Fit the decay of the correlator from the box centre over ``d in [dmin, dmax]``.

    Both directions are used: ``log Q(c, c+d)`` and ``log Q(c, c-d)`` are fitted
    jointly against ``d``.
    """
    interval = check_interval(interval, "interval")
    box_length = check_int(box_length, "box_length", minimum=2 * dmax + 1)
    box = Window(0, box_length - 1)
    c = box_length // 2
    d = np.arange(dmin, dmax + 1)
    slopes, logs, vmax = [], [], 0.0
    for r in range(check_int(replicas, "replicas", minimum=1)):
        H = assemble_finite_operator(sample_realization(spec, box, seed, r), box)
        lam, vec = eigensystem(H)
        q = correlator_values(lam, vec, interval, c, np.concatenate([c + d, c - d]))
        vmax = max(vmax, float(correlator_values(lam, vec, interval, c, np.arange(box_length)).max()))
        keep = q > NORM_FLOOR
        with np.errstate(divide="ignore"):
            logs.append(0.5 * (np.log(q[: d.size]) + np.log(q[d.size :])))
        dd = np.concatenate([d, d])[keep].astype(float)
        if dd.size >= MIN_FIT_POINTS:
            slopes.append(_line_fit(dd, np.log(q[keep]))[0])
    slopes = np.array(slopes)
    med = float(np.median(slopes)) if slopes.size else float("nan")
    # median over replicas of log Q at each distance, averaged over both directions
    profile = np.exp(np.median(np.array(logs), axis=0))
    return CorrelatorDecay(slopes, med, vmax, (dmin, dmax), interval, box_length, profile)


# --------------------------------------------------------------------------
# fractional moments


@dataclass(frozen=True, eq=False)
class FractionalMomentResult:
    """``(eps/2) * int_I ||G_E(x, y)||^(1-eps) dE`` per ``eps``.

    The integral is split at the eigenvalues inside ``I``; each half-segment
    next to a pole uses Gauss-Jacobi nodes for the weight ``|E - lambda|^(eps-1)``,
    other pieces use Gauss-Legendre.  ``quadrature_error`` is the change when
    the node count is doubled.
    """

    epsilons: tuple
    values: np.ndarray
    quadrature_error: np.ndarray
    correlator_value: float
    nodes: int
    warnings: tuple = ()
    method: str = "gauss-jacobi"

    def to_record(self):
        return {
            "kind": "fractional_moment",
            "epsilons": list(self.epsilons),
            "values": self.values.tolist(),
            "quadrature_error": self.quadrature_error.tolist(),
            "correlator_value": self.correlator_value,
            "nodes": self.nodes,
            "warnings": list(self.warnings),
            "method": self.method,
            "surrogate": CORRELATOR_SURROGATE,
        }


def _green_block_norms(lam, psi_x, psi_y, E, W):
    """``||G_E(x, y)||`` at each energy in ``E`` (spectral sum)."""
    inv = 1.0 / (lam[None, :] - E[:, None])
    G = np.einsum("ak,bk,ek->eab", psi_x, psi_y, inv)
    if W == 1:
        return np.abs(G[:, 0, 0])
    return np.linalg.norm(G, ord=2, axis=(1, 2))


def _fm_integral(lam, psi_x, psi_y, W, lo, hi, poles, eps, nodes):
    total = 0.0
    pts = np.unique(np.concatenate([[lo, hi], poles]))
    pole_set = set(poles.tolist())
    t_leg, w_leg = roots_legendre(nodes)
    # weight (1 + t)^(eps - 1) on [-1, 1]
    t_jac, w_jac = roots_jacobi(nodes, 0.0, eps - 1.0)
    for a, b in zip(pts[:-1], pts[1:]):
        m = 0.5 * (a + b)
        for left, right, pole in ((a, m, a if a in pole_set else None), (m, b, b if b in pole_set else None)):
            h = 0.5 * (right - left)
            if h <= 0:
                continue
            if pole is None:
                E = left + h * (t_leg + 1.0)
                f = _green_block_norms(lam, psi_x, psi_y, E, W) ** (1.0 - eps)
                total += h * float(w_leg @ f)
            else:
                # distance from the pole s = h (1 + t); integrand = s^(eps-1) * smooth(s)
                s = h * (1.0 + t_jac)
                E = pole + s if pole == left else pole - s
                f = (s * _green_block_norms(lam, psi_x, psi_y, E, W)) ** (1.0 - eps)
                total += h**eps * float(w_jac @ f)
    return 0.5 * eps * total


def fractional_moment_probe(H, interval, x, y, epsilons=(0.2, 0.1, 0.05, 0.02), nodes=24, rtol=1e-4):
    """Probe the fractional-moment bound ``(eps/2) int_I ||G_E(x,y)||^(1-eps) dE <= W``.

    A warning is attached (and emitted) when doubling the node count changes
    a value by more than ``rtol`` relative.
    """
    lo, hi = check_interval(interval, "interval")
    nodes = check_int(nodes, "nodes", minimum=2)
    eps_list = tuple(check_real(e, "epsilon", positive=True) for e in epsilons)
    if any(e >= 1 for e in eps_list):
        raise ConfigurationError("each epsilon must lie in (0, 1)")
    lam, vec = eigensystem(H)
    kx, ky = H.block_index(x), H.block_index(y)
    psi_x, psi_y = vec[kx], vec[ky]
    inside = lam[(lam >= lo) & (lam <= hi)]
    poles = np.array([lam_[0] for lam_ in (inside[g] for g in _clusters(inside))]) if inside.size else np.empty(0)
    vals, errs, notes = [], [], []
    for eps in eps_list:
        v1 = _fm_integral(lam, psi_x, psi_y, H.width, lo, hi, poles, eps, nodes)
        v2 = _fm_integral(lam, psi_x, psi_y, H.width, lo, hi, poles, eps, 2 * nodes)
        err = abs(v2 - v1)
        if err > rtol * max(abs(v2), 1e-300):
            msg = f"quadrature not converged at eps={eps}: change {err:.3g} on doubling nodes"
            notes.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
        vals.append(v2)
        errs.append(err)
    corr = float(correlator_values(lam, vec, (lo, hi), kx, ky)[0])
    return FractionalMomentResult(eps_list, np.array(vals), np.array(errs), corr, 2 * nodes, tuple(notes))
