"""Lyapunov spectra, restricted growth rates and large-deviation tails.

All estimators push frames through the conjugated (symplectic) one-step
matrices, batched over replicas, and re-orthogonalise with a sign-fixed QR
every ``reorth_period`` steps, accumulating ``log`` of the triangular
diagonal.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import unitary_group

from . import _rng
from ._validation import check_energy, check_increasing, check_int, check_real
from .errors import ConfigurationError, NumericalError
from .model import Window, sample_realization
from .transfer import conjugated_steps, multi_step, symplectic_form

ORTHONORMAL_TOL = 1e-12
ISOTROPY_TOL = 1e-10
DEFAULT_REORTH = 10
_CHUNK = 256


# --------------------------------------------------------------------------
# Lagrangian frames


@dataclass(frozen=True, eq=False)
class LagrangianFrame:
    """Orthonormal ``2W x W`` basis of a Lagrangian subspace ``F``.

    ``basis`` plays the role of ``pi_F^*`` and ``basis.T`` of ``pi_F``.
    """

    basis: np.ndarray

    def __post_init__(self):
        B = np.array(self.basis, dtype=float)
        if B.ndim != 2 or B.shape[0] != 2 * B.shape[1]:
            raise ConfigurationError(f"frame basis must be 2W x W, got {B.shape}")
        W = B.shape[1]
        if np.abs(B.T @ B - np.eye(W)).max() > ORTHONORMAL_TOL:
            raise ConfigurationError("frame basis is not orthonormal")
        if np.linalg.norm(B.T @ symplectic_form(W) @ B) > ISOTROPY_TOL:
            raise ConfigurationError("frame is not isotropic (not Lagrangian)")
        B.flags.writeable = False
        object.__setattr__(self, "basis", B)

    @property
    def width(self):
        return self.basis.shape[1]

    @classmethod
    def plus(cls, W):
        """``F_+ = {(x, 0)}``."""
        return cls(np.vstack([np.eye(W), np.zeros((W, W))]))

    @classmethod
    def minus(cls, W):
        """``F_- = {(0, y)}``."""
        return cls(np.vstack([np.zeros((W, W)), np.eye(W)]))

    @classmethod
    def from_symmetric(cls, X):
        """Graph ``{(x, -X x)}`` of a symmetric matrix, orthonormalised."""
        X = np.asarray(X, dtype=float)
        W = X.shape[0]
        Qm, _ = np.linalg.qr(np.vstack([np.eye(W), -X]))
        return cls(Qm)


def random_lagrangian(W, seed):
    """Haar-distributed Lagrangian frame.

    A Haar unitary ``A + iB`` corresponds to the orthogonal symplectic matrix
    ``[[A, -B], [B, A]]``; its first W columns ``[A; B]`` span a Lagrangian
    subspace and are orthonormal.
    """
    W = check_int(W, "W", minimum=1)
    rng = seed if isinstance(seed, np.random.Generator) else _rng.generator(seed, 0, "frame")
    U = np.atleast_2d(unitary_group.rvs(W, random_state=rng)) if W > 1 else np.array([[np.exp(2j * np.pi * rng.random())]])
    B = np.vstack([U.real, U.imag])
    # one Gram-Schmidt pass removes rounding drift
    B, R = np.linalg.qr(B)
    B = B * np.sign(np.diag(R))
    return LagrangianFrame(B)


# --------------------------------------------------------------------------
# stabilised accumulation


def _sample_stack(spec, lo, hi, seed, replica_ids):
    reals = [sample_realization(spec, Window(lo, hi), seed, r) for r in replica_ids]
    L = np.stack([r.L for r in reals])
    V = np.stack([r.V for r in reals])
    return L, V


def _qr_signfixed(Q):
    Qn, R = np.linalg.qr(Q)
    d = np.diagonal(R, axis1=-2, axis2=-1)
    s = np.where(d < 0, -1.0, 1.0)
    Qn = Qn * s[..., None, :]
    with np.errstate(divide="ignore"):
        logd = np.log(np.abs(d))
    return Qn, logd


class _Accumulator:
    """Pushes a batch of frames ``(R, 2W, k)`` along conjugated steps."""

    def __init__(self, L, V, E, frame, reorth_period, site0=0):
        self.L, self.V, self.E = L, V, E
        self.R = L.shape[0]
        self.Q = np.broadcast_to(frame, (self.R,) + frame.shape).copy()
        self.k = frame.shape[1]
        self.logs = np.zeros((self.R, self.k))
        self.logdet = np.zeros(self.R)
        self.p = reorth_period
        self.pos = 0
        self.site0 = site0
        self.since_qr = 0

    def _orthonormalise(self):
        if not np.all(np.isfinite(self.Q)):
            bad = np.flatnonzero(~np.isfinite(self.Q).all(axis=(1, 2)))
            first = self.site0 + self.pos - self.since_qr
            raise NumericalError(
                f"non-finite frame within sites {first}..{self.site0 + self.pos - 1} "
                f"(replicas {bad[:5].tolist()}); lower reorth_period",
                site=first,
            )
        self.Q, logd = _qr_signfixed(self.Q)
        self.since_qr = 0
        return logd

    def advance(self, steps, accumulate=True, track_det=False):
        end = self.pos + steps
        while self.pos < end:
            c = min(_CHUNK, end - self.pos)
            T = conjugated_steps(self.L[:, self.pos : self.pos + c], self.V[:, self.pos : self.pos + c], self.E)
            if track_det and accumulate:
                self.logdet += np.linalg.slogdet(T)[1].sum(axis=1)
            for j in range(c):
                self.Q = T[:, j] @ self.Q
                self.since_qr += 1
                self.pos += 1
                if self.since_qr == self.p:
                    logd = self._orthonormalise()
                    if accumulate:
                        self.logs += logd
        return self

    def flush(self, accumulate=True):
        if self.since_qr:
            logd = self._orthonormalise()
            if accumulate:
                self.logs += logd


# --------------------------------------------------------------------------
# full spectrum


@dataclass(frozen=True, eq=False)
class LyapunovEstimate:
    """Per-step mean log growth of all 2W directions, sorted descending.

    ``per_replica`` holds the individual replica estimates; ``log_det`` the
    per-replica ``(1/N) sum_x log|det T~_x|`` against which the exponent
    sums can be checked.
    """

    energy: float
    exponents: np.ndarray
    stderr: np.ndarray
    N: int
    replicas: int
    reorth_period: int
    burn_in: int
    seed: int
    per_replica: np.ndarray = field(repr=False)
    log_det: np.ndarray = field(repr=False)
    spec_hash: str = ""

    @property
    def width(self):
        return len(self.exponents) // 2

    @property
    def gamma_W(self):
        return float(self.exponents[self.width - 1])

    def to_record(self):
        return {
            "kind": "lyapunov",
            "spec_hash": self.spec_hash,
            "E": self.energy,
            "N": self.N,
            "replicas": self.replicas,
            "reorth_period": self.reorth_period,
            "burn_in": self.burn_in,
            "seed": self.seed,
            "exponents": self.exponents.tolist(),
            "stderr": self.stderr.tolist(),
        }


def _stderr(samples):
    R = samples.shape[0]
    if R < 2:
        return np.full(samples.shape[1:], np.nan)
    return samples.std(axis=0, ddof=1) / np.sqrt(R)


def default_burn_in(N):
    return N // 10


def estimate_spectrum(spec, E, N, replicas=1, reorth_period=DEFAULT_REORTH, seed=0, burn_in=None):
    """Estimate ``gamma_1 >= ... >= gamma_2W`` at energy ``E``.

    Parameters
    ----------
    spec : EnsembleSpec
    E : float
    N : int
        Number of accumulated steps (sites ``burn_in .. burn_in + N - 1``).
    replicas : int
        Independent realizations; replica ``r`` uses ``replica_id = r``.
    reorth_period : int
        Steps between QR re-orthogonalisations.
    seed : int
    burn_in : int, optional
        Steps pushed before accumulation starts, letting the frame align with
        the Oseledets filtration. Defaults to ``N // 10``.

    Returns
    -------
    LyapunovEstimate
    """
    E = check_energy(E)
    N = check_int(N, "N", minimum=1)
    replicas = check_int(replicas, "replicas", minimum=1)
    reorth_period = check_int(reorth_period, "reorth_period", minimum=1)
    if reorth_period > N:
        raise ConfigurationError("reorth_period must not exceed N")
    burn_in = default_burn_in(N) if burn_in is None else check_int(burn_in, "burn_in", minimum=0)
    W = spec.width

    L, V = _sample_stack(spec, 0, burn_in + N - 1, seed, range(replicas))
    acc = _Accumulator(L, V, E, np.eye(2 * W), reorth_period)
    if burn_in:
        acc.advance(burn_in, accumulate=False)
        acc.flush(accumulate=False)
    acc.advance(N, accumulate=True, track_det=True)
    acc.flush()
    per = acc.logs / N
    per = -np.sort(-per, axis=1, kind="stable")
    return LyapunovEstimate(
        energy=E,
        exponents=per.mean(axis=0),
        stderr=_stderr(per),
        N=N,
        replicas=replicas,
        reorth_period=reorth_period,
        burn_in=burn_in,
        seed=seed,
        per_replica=per,
        log_det=acc.logdet / N,
        spec_hash=spec.spec_hash(),
    )


# --------------------------------------------------------------------------
# restricted growth on a Lagrangian frame


@dataclass(frozen=True, eq=False)
class RestrictedEstimate:
    """Estimates of ``(1/N) log s_j(Phi~_N pi_F^*)``, ``j = 1..W``."""

    energy: float
    values: np.ndarray
    stderr: np.ndarray
    N: int
    replicas: int
    dropped: int
    per_replica: np.ndarray = field(repr=False)


def _restricted_logs(spec, E, Ns, frame, replicas, reorth_period, seed):
    """Accumulated log-diagonals at each checkpoint; shape ``(len(Ns), R, k)``."""
    Nmax = Ns[-1]
    L, V = _sample_stack(spec, 0, max(Nmax - 1, 0), seed, range(replicas))
    acc = _Accumulator(L, V, E, frame, reorth_period)
    out = []
    done = 0
    for n in Ns:
        acc.advance(n - done)
        acc.flush()
        done = n
        out.append(acc.logs.copy())
    return np.array(out)


def estimate_restricted(spec, E, N, F, replicas=1, seed=0, reorth_period=DEFAULT_REORTH):
    """Growth rates of the image of the Lagrangian subspace ``F`` under ``Phi~_N``.

    Singular values are read off the accumulated triangular diagonal. Replicas
    whose diagonal underflows (degenerate frame) are dropped and counted.
    """
    E = check_energy(E)
    N = check_int(N, "N", minimum=0)
    replicas = check_int(replicas, "replicas", minimum=1)
    if F.width != spec.width:
        raise ConfigurationError("frame width does not match ensemble width")
    W = spec.width
    if N == 0:
        zeros = np.zeros((replicas, W))
        return RestrictedEstimate(E, np.zeros(W), _stderr(zeros), 0, replicas, 0, zeros)
    logs = _restricted_logs(spec, E, [N], F.basis, replicas, min(reorth_period, N), seed)[0]
    ok = np.all(np.isfinite(logs), axis=1)
    per = logs[ok] / N
    if per.shape[0] == 0:
        raise NumericalError("every replica degenerated")
    return RestrictedEstimate(E, per.mean(axis=0), _stderr(per), N, replicas, int((~ok).sum()), per)


# --------------------------------------------------------------------------
# reference exponents


class _ReferenceCache:
    def __init__(self):
        self._data = {}
        self._lock = threading.Lock()

    def get(self, key):
        with self._lock:
            return self._data.get(key)

    def put(self, key, value):
        with self._lock:
            return self._data.setdefault(key, value)

    def clear(self):
        with self._lock:
            self._data.clear()


REFERENCE_CACHE = _ReferenceCache()
REFERENCE_N = 10_000
REFERENCE_REPLICAS = 64


def reference_gamma(spec, E, N=REFERENCE_N, replicas=REFERENCE_REPLICAS, seed=0, store=None):
    """``(gamma_W, stderr)`` computed once per ``(spec, E, N, replicas, seed)``."""
    key = (spec.spec_hash(), float(E), N, replicas, seed)
    hit = REFERENCE_CACHE.get(key)
    if hit is not None:
        return hit
    est = estimate_spectrum(spec, E, N, replicas, seed=seed)
    W = spec.width
    value = (est.gamma_W, float(est.stderr[W - 1]))
    value = REFERENCE_CACHE.put(key, value)
    if store is not None:
        rec = est.to_record()
        rec["kind"] = "reference_gamma"
        store.append(rec)
    return value


@dataclass(frozen=True)
class GammaProfile:
    """``gamma_W`` on an energy grid, linearly interpolated in between."""

    energies: np.ndarray
    values: np.ndarray
    stderr: np.ndarray

    def __call__(self, E):
        return np.interp(E, self.energies, self.values)

    def inf(self, lo, hi):
        inside = (self.energies >= lo) & (self.energies <= hi)
        candidates = list(self.values[inside]) + [float(self(lo)), float(self(hi))]
        return float(min(candidates))


def gamma_profile(spec, lo, hi, tau, N=2000, replicas=16, seed=0, initial_points=5, max_points=65):
    """Grid of ``gamma_W`` fine enough that neighbours differ by less than ``tau / 4``."""
    tau = check_real(tau, "tau", positive=True)
    W = spec.width

    def gw(E):
        est = estimate_spectrum(spec, E, N, replicas, seed=seed)
        return est.gamma_W, float(est.stderr[W - 1])

    grid = {float(E): gw(E) for E in np.linspace(lo, hi, initial_points)}
    while len(grid) < max_points:
        Es = sorted(grid)
        split = [
            (a, b) for a, b in zip(Es, Es[1:]) if abs(grid[a][0] - grid[b][0]) >= tau / 4 and b - a > 1e-9
        ]
        if not split:
            break
        for a, b in split[: max_points - len(grid)]:
            m = 0.5 * (a + b)
            grid[m] = gw(m)
    Es = np.array(sorted(grid))
    return GammaProfile(Es, np.array([grid[E][0] for E in Es]), np.array([grid[E][1] for E in Es]))


# --------------------------------------------------------------------------
# large-deviation tails


@dataclass(frozen=True, eq=False)
class TailFit:
    """Empirical ``P{|(1/N) log s_W - gamma_W| >= epsilon}`` per N and an exponential fit.

    ``rate`` is ``-slope`` of ``log tail_prob`` against N over the lengths with
    at least five exceedances; with fewer than two such lengths only
    ``rate_lower_bound`` is reported (``rate_is_bound``).
    """

    epsilon: float
    Ns: list
    tail_prob: np.ndarray
    stderr: np.ndarray
    exceedances: np.ndarray
    replicas: int
    gamma_ref: float
    rate: float
    rate_ci: tuple
    intercept: float
    rate_is_bound: bool
    rate_lower_bound: float
    monotone: bool
    statistics: np.ndarray = field(repr=False)

    def to_record(self):
        return {
            "kind": "ldp_tail",
            "epsilon": self.epsilon,
            "Ns": list(self.Ns),
            "tail_prob": self.tail_prob.tolist(),
            "stderr": self.stderr.tolist(),
            "exceedances": self.exceedances.tolist(),
            "replicas": self.replicas,
            "gamma_ref": self.gamma_ref,
            "rate": self.rate,
            "rate_ci": list(self.rate_ci),
            "rate_is_bound": self.rate_is_bound,
            "rate_lower_bound": self.rate_lower_bound,
            "monotone": self.monotone,
        }


def binomial_stderr(p, n):
    p = np.asarray(p, dtype=float)
    return np.sqrt(p * (1 - p) / n)


def non_increasing(p, se, k=2.0):
    """``p[i+1] <= p[i] + k * sqrt(se[i]^2 + se[i+1]^2)`` for every i."""
    p, se = np.asarray(p), np.asarray(se)
    return bool(np.all(p[1:] <= p[:-1] + k * np.hypot(se[:-1], se[1:])))


def fit_exponential_tail(Ns, counts, n, min_count=5):
    """Least-squares fit of ``log p`` against ``N``; returns ``(rate, ci, intercept, is_bound, lower_bound)``."""
    Ns = np.asarray(Ns, dtype=float)
    counts = np.asarray(counts)
    use = counts >= min_count
    if use.sum() >= 2:
        x, y = Ns[use], np.log(counts[use] / n)
        A = np.vstack([x, np.ones_like(x)]).T
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        slope, intercept = coef
        if use.sum() > 2:
            resid = y - A @ coef
            s2 = resid @ resid / (len(x) - 2)
            se = np.sqrt(s2 / np.sum((x - x.mean()) ** 2))
        else:
            # two points: propagate binomial error of the log-frequencies
            p = counts[use] / n
            se = np.sqrt(np.sum((1 - p) / (p * n))) / abs(x[1] - x[0])
        rate = -float(slope)
        return rate, (rate - 2 * se, rate + 2 * se), float(intercept), False, float("nan")
    # too few exceedances: a one-sided bound assuming a prefactor of one
    first_small = Ns[np.argmax(counts < min_count)]
    bound = float(np.log(n / max(min_count, 1)) / first_small)
    return float("nan"), (float("nan"), float("nan")), float("nan"), True, bound


def ldp_tail(spec, E, epsilon, Ns, replicas, F=None, seed=0, gamma_ref=None, reorth_period=DEFAULT_REORTH):
    """Empirical large-deviation tail of the slowest growth rate.

    With a frame ``F`` the statistic is ``(1/N) log s_W(Phi~_N pi_F^*)``; without
    one it is ``(1/N) log s_W(Phi~_N)``. Lengths are nested (the same replica
    disorder is read at every checkpoint).
    """
    E = check_energy(E)
    epsilon = check_real(epsilon, "epsilon", positive=True)
    Ns = check_increasing(Ns, "Ns")
    replicas = check_int(replicas, "replicas", minimum=1)
    W = spec.width
    if gamma_ref is None:
        gamma_ref = reference_gamma(spec, E)[0]
    frame = np.eye(2 * W) if F is None else F.basis
    logs = _restricted_logs(spec, E, Ns, frame, replicas, reorth_period, seed)
    stats = logs[:, :, W - 1] / np.asarray(Ns, dtype=float)[:, None]
    exceed = np.sum(np.abs(stats - gamma_ref) >= epsilon, axis=1)
    p = exceed / replicas
    se = binomial_stderr(p, replicas)
    rate, ci, intercept, is_bound, lower = fit_exponential_tail(Ns, exceed, replicas)
    return TailFit(
        epsilon=epsilon,
        Ns=list(Ns),
        tail_prob=p,
        stderr=se,
        exceedances=exceed,
        replicas=replicas,
        gamma_ref=float(gamma_ref),
        rate=rate,
        rate_ci=ci,
        intercept=intercept,
        rate_is_bound=is_bound,
        rate_lower_bound=lower,
        monotone=non_increasing(p, se),
        statistics=stats,
    )


# --------------------------------------------------------------------------
# SVD alignment


@dataclass(frozen=True)
class AlignmentResult:
    """``s_W(pi_{F+} V_N^T pi_F^*)`` and ``(1/N)`` times its log (``nan`` at N = 0)."""

    s_min: float
    log_rate: float
    N: int
    method: str


def svd_alignment(spec, E, N, F, seed=0, replica_id=0, direct_max=200):
    """Overlap between the top-W right singular subspace of ``Phi~_N`` and ``F``.

    Up to ``direct_max`` steps the product is formed and decomposed directly.
    Beyond that the subspace is obtained by QR iteration of the transposed
    product (``T~_{N-1}^T`` applied first), whose orthogonal factor converges
    to the same span.
    """
    E = check_energy(E)
    N = check_int(N, "N", minimum=0)
    W = spec.width
    if F.width != W:
        raise ConfigurationError("frame width does not match ensemble width")
    real = sample_realization(spec, Window(0, max(N - 1, 0)), seed, replica_id)
    try:
        if N <= direct_max:
            Phi = multi_step(real, N, 0, E, conjugated=True, max_length=direct_max).entries
            _, _, Vt = np.linalg.svd(Phi)
            top = Vt[:W].T
            method = "direct"
        else:
            T = conjugated_steps(real.L, real.V, E)
            # a generic start avoids an accidental orthogonality to the top space
            Q, _ = np.linalg.qr(_rng.generator(seed, replica_id, "frame").standard_normal((2 * W, W)))
            for k in range(N - 1, -1, -1):
                Q = T[k].T @ Q
                if k % DEFAULT_REORTH == 0:
                    Q, _ = np.linalg.qr(Q)
            Q, _ = np.linalg.qr(Q)
            top = Q
            method = "stabilised"
        s = np.linalg.svd(top.T @ F.basis, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed: {exc}") from exc
    s_min = float(s[-1])
    with np.errstate(divide="ignore"):
        rate = float(np.log(s_min) / N) if N > 0 else float("nan")
    return AlignmentResult(s_min, rate, N, method)
