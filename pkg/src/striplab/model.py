"""Disorder ensembles, reproducible realizations and finite-volume operators.

The operator acts on sequences ``psi: Z -> R^W`` by::

    (H psi)(x) = L_x psi(x+1) + V_x psi(x) + L_{x-1}^T psi(x-1)

with iid real symmetric ``V_x`` and iid invertible ``L_x``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import ndtri

from . import _rng
from ._validation import check_int, check_real
from .errors import ConfigurationError, OutOfRangeError

SCHEMA_VERSION = 1
SINGULAR_THRESHOLD = 1e-12
_MAX_REDRAWS = 64


class Family(str, Enum):
    ANDERSON_STRIP = "AndersonStrip"
    BLOCK_ANDERSON = "BlockAnderson"
    WEGNER_ORBITAL = "WegnerOrbital"
    RANDOM_HOPPING = "RandomHopping"
    CUSTOM = "Custom"


# --------------------------------------------------------------------------
# scalar laws


@dataclass(frozen=True)
class ScalarLaw:
    """A named one-dimensional law, sampled by inverse transform of a uniform.

    ``kind`` is one of ``uniform(a, b)``, ``bernoulli(p, v1, v2)`` (``v2`` with
    probability ``p``), ``gaussian(mu, sigma)`` or ``cauchy(x0, s)``.
    """

    kind: str
    params: tuple

    _ARITY = {"uniform": 2, "bernoulli": 3, "gaussian": 2, "cauchy": 2}

    def __post_init__(self):
        if self.kind not in self._ARITY:
            raise ConfigurationError(f"unknown scalar law {self.kind!r}")
        if len(self.params) != self._ARITY[self.kind]:
            raise ConfigurationError(f"{self.kind} takes {self._ARITY[self.kind]} parameters")
        params = tuple(check_real(p, f"{self.kind} parameter") for p in self.params)
        object.__setattr__(self, "params", params)
        if self.kind == "uniform" and params[1] < params[0]:
            raise ConfigurationError(f"uniform law needs a <= b, got {params}")
        if self.kind == "bernoulli" and not 0.0 <= params[0] <= 1.0:
            raise ConfigurationError(f"bernoulli probability must lie in [0, 1], got {params[0]}")
        if self.kind in ("gaussian", "cauchy") and params[1] <= 0:
            raise ConfigurationError(f"{self.kind} scale must be > 0, got {params[1]}")

    def transform(self, u):
        """Map uniforms in (0, 1) to draws from the law."""
        u = np.asarray(u, dtype=float)
        p = self.params
        if self.kind == "uniform":
            return p[0] + (p[1] - p[0]) * u
        if self.kind == "bernoulli":
            return np.where(u < p[0], p[2], p[1])
        if self.kind == "gaussian":
            return p[0] + p[1] * ndtri(u)
        return p[0] + p[1] * np.tan(np.pi * (u - 0.5))

    def support(self):
        """Closed hull of the support as ``(lo, hi)``."""
        p = self.params
        if self.kind == "uniform":
            return p[0], p[1]
        if self.kind == "bernoulli":
            vals = [v for v, w in ((p[1], 1 - p[0]), (p[2], p[0])) if w > 0]
            return min(vals), max(vals)
        return -np.inf, np.inf

    def to_dict(self):
        return {"kind": self.kind, "params": list(self.params)}

    @classmethod
    def from_dict(cls, data):
        return cls(data["kind"], tuple(data["params"]))


def Uniform(a, b):
    return ScalarLaw("uniform", (a, b))


def Bernoulli(p, v1, v2):
    return ScalarLaw("bernoulli", (p, v1, v2))


def Gaussian(mu, sigma):
    return ScalarLaw("gaussian", (mu, sigma))


def Cauchy(x0, s):
    return ScalarLaw("cauchy", (x0, s))


# --------------------------------------------------------------------------
# matrix-valued laws


@dataclass(frozen=True)
class PotentialDist:
    """Law of ``V_0``.

    kinds: ``zero``; ``diagonal`` (iid diagonal from ``law`` plus a fixed
    symmetric ``background``); ``symmetric`` (iid upper-triangle entries from
    ``law``); ``goe`` (Gaussian orthogonal block with coupling ``scale``).
    """

    kind: str
    law: ScalarLaw | None = None
    background: tuple | None = None
    scale: float | None = None

    def __post_init__(self):
        if self.kind not in ("zero", "diagonal", "symmetric", "goe"):
            raise ConfigurationError(f"unknown potential kind {self.kind!r}")
        if self.kind in ("diagonal", "symmetric") and self.law is None:
            raise ConfigurationError(f"potential kind {self.kind!r} needs a scalar law")
        if self.kind == "goe":
            object.__setattr__(self, "scale", check_real(self.scale, "goe scale", positive=True))
        if self.background is not None:
            bg = np.asarray(self.background, dtype=float)
            if bg.ndim != 2 or bg.shape[0] != bg.shape[1] or not np.array_equal(bg, bg.T):
                raise ConfigurationError("potential background must be a symmetric square matrix")
            object.__setattr__(self, "background", tuple(tuple(row) for row in bg.tolist()))

    def draws_per_site(self, W):
        return {"zero": 0, "diagonal": W, "symmetric": W * (W + 1) // 2, "goe": W * (W + 1) // 2}[self.kind]

    def build(self, u, W):
        """Matrices ``(n, W, W)`` from uniforms of shape ``(n, draws_per_site)``."""
        n = u.shape[0]
        V = np.zeros((n, W, W))
        if self.kind == "diagonal":
            idx = np.arange(W)
            V[:, idx, idx] = self.law.transform(u)
        elif self.kind in ("symmetric", "goe"):
            iu = np.triu_indices(W)
            if self.kind == "symmetric":
                vals = self.law.transform(u)
            else:
                # diagonal variance scale**2, off-diagonal scale**2 / 2
                vals = ndtri(u) * self.scale
                vals = np.where(iu[0] == iu[1], vals, vals / np.sqrt(2.0))
            V[:, iu[0], iu[1]] = vals
            V[:, iu[1], iu[0]] = vals
        if self.background is not None:
            V += np.asarray(self.background)
        return V

    def to_dict(self):
        return {
            "kind": self.kind,
            "law": None if self.law is None else self.law.to_dict(),
            "background": None if self.background is None else [list(r) for r in self.background],
            "scale": self.scale,
        }

    @classmethod
    def from_dict(cls, data):
        law = data.get("law")
        bg = data.get("background")
        return cls(
            data["kind"],
            None if law is None else ScalarLaw.from_dict(law),
            None if bg is None else tuple(tuple(r) for r in bg),
            data.get("scale"),
        )


@dataclass(frozen=True)
class HoppingDist:
    """Law of ``L_0``: ``identity``, ``diagonal_positive`` (iid positive
    diagonal from ``law``) or ``identity_plus_perturbation`` (``1 + delta U``
    with iid ``U`` entries uniform on [-1, 1])."""

    kind: str = "identity"
    law: ScalarLaw | None = None
    delta: float | None = None

    def __post_init__(self):
        if self.kind not in ("identity", "diagonal_positive", "identity_plus_perturbation"):
            raise ConfigurationError(f"unknown hopping kind {self.kind!r}")
        if self.kind == "diagonal_positive":
            if self.law is None:
                raise ConfigurationError("diagonal_positive hopping needs a scalar law")
            lo, _ = self.law.support()
            if not lo > 0:
                raise ConfigurationError("diagonal_positive hopping law must have strictly positive support")
        if self.kind == "identity_plus_perturbation":
            object.__setattr__(self, "delta", check_real(self.delta, "delta", positive=True))

    def draws_per_site(self, W):
        return {"identity": 0, "diagonal_positive": W, "identity_plus_perturbation": W * W}[self.kind]

    def build(self, u, W):
        n = u.shape[0]
        if self.kind == "identity":
            return np.broadcast_to(np.eye(W), (n, W, W))
        if self.kind == "diagonal_positive":
            L = np.zeros((n, W, W))
            idx = np.arange(W)
            L[:, idx, idx] = self.law.transform(u)
            return L
        return np.eye(W) + self.delta * (2.0 * u - 1.0).reshape(n, W, W)

    def to_dict(self):
        return {
            "kind": self.kind,
            "law": None if self.law is None else self.law.to_dict(),
            "delta": self.delta,
        }

    @classmethod
    def from_dict(cls, data):
        law = data.get("law")
        return cls(data.get("kind", "identity"), None if law is None else ScalarLaw.from_dict(law), data.get("delta"))


def strip_background(W):
    """Tridiagonal background with unit off-diagonal (transverse Laplacian)."""
    return np.eye(W, k=1) + np.eye(W, k=-1)


@dataclass(frozen=True)
class EnsembleSpec:
    """Distribution of ``(L_0, V_0)``; see the factory functions below."""

    family: Family
    width: int
    potential: PotentialDist
    hopping: HoppingDist = field(default_factory=HoppingDist)
    eta: float = 1.0

    def __post_init__(self):
        try:
            family = Family(self.family)
        except ValueError:
            raise ConfigurationError(f"unknown ensemble family {self.family!r}") from None
        object.__setattr__(self, "family", family)
        W = check_int(self.width, "width", minimum=1)
        object.__setattr__(self, "width", W)
        object.__setattr__(self, "eta", check_real(self.eta, "eta", positive=True))
        if self.potential.background is not None and np.shape(self.potential.background) != (W, W):
            raise ConfigurationError(f"background must be {W}x{W}")

        if family is Family.ANDERSON_STRIP:
            bg = np.zeros((W, W)) if self.potential.background is None else np.asarray(self.potential.background)
            if (
                self.hopping.kind != "identity"
                or self.potential.kind != "diagonal"
                or not np.array_equal(bg, strip_background(W))
            ):
                raise ConfigurationError(
                    "AndersonStrip needs identity hopping and a diagonal potential on the strip background"
                )
        elif family is Family.BLOCK_ANDERSON and self.hopping.kind != "identity":
            raise ConfigurationError("BlockAnderson needs identity hopping")
        elif family is Family.WEGNER_ORBITAL and (self.hopping.kind != "identity" or self.potential.kind != "goe"):
            raise ConfigurationError("WegnerOrbital needs identity hopping and a goe potential")
        elif family is Family.RANDOM_HOPPING and self.hopping.kind == "identity":
            raise ConfigurationError("RandomHopping needs a random hopping law")

    # serialization -----------------------------------------------------

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "family": self.family.value,
            "width": self.width,
            "potential": self.potential.to_dict(),
            "hopping": self.hopping.to_dict(),
            "eta": self.eta,
        }

    @classmethod
    def from_dict(cls, data):
        version = data.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigurationError(f"unsupported ensemble schema_version {version}")
        try:
            pot = dict(data["potential"])
            # AndersonStrip documents may leave the (fixed) strip background implicit
            if data["family"] == Family.ANDERSON_STRIP.value and pot.get("background") is None:
                pot["background"] = strip_background(check_int(data["width"], "width", minimum=1)).tolist()
            return cls(
                family=data["family"],
                width=data["width"],
                potential=PotentialDist.from_dict(pot),
                hopping=HoppingDist.from_dict(data.get("hopping", {"kind": "identity"})),
                eta=data.get("eta", 1.0),
            )
        except KeyError as exc:
            raise ConfigurationError(f"ensemble document is missing field {exc}") from None

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def spec_hash(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    @property
    def is_deterministic(self):
        pot = self.potential
        det_pot = pot.kind == "zero" or (
            pot.kind in ("diagonal", "symmetric") and pot.law.support()[0] == pot.law.support()[1]
        )
        hop = self.hopping
        det_hop = hop.kind == "identity" or (
            hop.kind == "diagonal_positive" and hop.law.support()[0] == hop.law.support()[1]
        )
        return det_pot and det_hop


def anderson_strip(W, law, eta=1.0):
    """Anderson model on the strip Z x {1..W}."""
    background = strip_background(W) if W > 1 else None
    return EnsembleSpec(Family.ANDERSON_STRIP, W, PotentialDist("diagonal", law, background), HoppingDist(), eta)


def block_anderson(W, potential, eta=1.0):
    return EnsembleSpec(Family.BLOCK_ANDERSON, W, potential, HoppingDist(), eta)


def wegner_orbital(W, coupling=1.0, eta=1.0):
    """Block Anderson model with a GOE block of the given coupling at every site."""
    return EnsembleSpec(Family.WEGNER_ORBITAL, W, PotentialDist("goe", scale=coupling), HoppingDist(), eta)


def random_hopping(W, hopping, potential=None, eta=1.0):
    potential = PotentialDist("zero") if potential is None else potential
    return EnsembleSpec(Family.RANDOM_HOPPING, W, potential, hopping, eta)


# --------------------------------------------------------------------------
# realizations and operators


@dataclass(frozen=True, order=True)
class Window:
    """Inclusive integer range ``[lo, hi]``."""

    lo: int
    hi: int

    def __post_init__(self):
        object.__setattr__(self, "lo", check_int(self.lo, "window.lo"))
        object.__setattr__(self, "hi", check_int(self.hi, "window.hi"))
        if self.hi < self.lo:
            raise ConfigurationError(f"empty window [{self.lo}, {self.hi}]")

    @classmethod
    def centered(cls, x, N):
        return cls(x - N, x + N)

    def __len__(self):
        return self.hi - self.lo + 1

    def __contains__(self, item):
        if isinstance(item, Window):
            return self.lo <= item.lo and item.hi <= self.hi
        return self.lo <= item <= self.hi

    def sites(self):
        return np.arange(self.lo, self.hi + 1)


def _as_window(w):
    if isinstance(w, Window):
        return w
    lo, hi = w
    return Window(lo, hi)


def _frozen(a):
    if a.flags.writeable:
        a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class DisorderRealization:
    """Sampled ``L_x`` and ``V_x`` for every site of ``window``.

    ``L`` and ``V`` are read-only arrays of shape ``(len(window), W, W)``;
    use :meth:`L_at` / :meth:`V_at` for site-indexed access.
    """

    spec: EnsembleSpec
    window: Window
    L: np.ndarray
    V: np.ndarray
    seed: int
    replica_id: int
    rejections: int = 0

    @property
    def width(self):
        return self.spec.width

    def _index(self, x):
        if x not in self.window:
            raise OutOfRangeError(f"site {x} outside sampled window [{self.window.lo}, {self.window.hi}]")
        return x - self.window.lo

    def L_at(self, x):
        return self.L[self._index(x)]

    def V_at(self, x):
        return self.V[self._index(x)]

    def L_slice(self, lo, hi):
        self._index(lo), self._index(hi)
        return self.L[lo - self.window.lo : hi - self.window.lo + 1]

    def V_slice(self, lo, hi):
        self._index(lo), self._index(hi)
        return self.V[lo - self.window.lo : hi - self.window.lo + 1]

    def with_hopping(self, x, matrix):
        """Copy with ``L_x`` replaced (used by sensitivity checks)."""
        L = np.array(self.L)
        L[self._index(x)] = matrix
        return DisorderRealization(self.spec, self.window, _frozen(L), self.V, self.seed, self.replica_id, self.rejections)

    def to_bytes(self):
        header = json.dumps(
            {
                "spec": self.spec.to_dict(),
                "window": [self.window.lo, self.window.hi],
                "seed": self.seed,
                "replica_id": self.replica_id,
            },
            sort_keys=True,
        ).encode()
        L = np.ascontiguousarray(self.L, dtype="<f8").tobytes()
        V = np.ascontiguousarray(self.V, dtype="<f8").tobytes()
        return header + b"\n" + L + V


def sample_realization(spec, window, seed, replica_id=0):
    """Draw ``(L_x, V_x)`` over ``window``.

    Each site draws from its own counter block of the stream keyed by
    ``(seed, replica_id, tag)``, so the matrices at a site do not depend on
    the window that contains it. Hopping matrices with smallest singular
    value below ``1e-12`` are redrawn from a fresh stream and counted.
    """
    window = _as_window(window)
    seed = check_int(seed, "seed", minimum=0)
    replica_id = check_int(replica_id, "replica_id", minimum=0)
    if seed >= 2**64:
        raise ConfigurationError("seed must fit in 64 bits")
    W = spec.width
    lo, hi = window.lo, window.hi

    u = _rng.site_uniforms(seed, replica_id, "V", lo, hi, spec.potential.draws_per_site(W))
    V = spec.potential.build(u, W)

    hop = spec.hopping
    u = _rng.site_uniforms(seed, replica_id, "L", lo, hi, hop.draws_per_site(W))
    L = hop.build(u, W)
    rejections = 0
    if hop.kind != "identity":
        L = np.array(L)
        bad = np.flatnonzero(np.linalg.svd(L, compute_uv=False)[:, -1] <= SINGULAR_THRESHOLD)
        attempt = 0
        while bad.size:
            attempt += 1
            if attempt > _MAX_REDRAWS:
                raise ConfigurationError("hopping law keeps producing singular matrices")
            rejections += bad.size
            for k in bad:
                uk = _rng.site_uniforms(seed, replica_id, "L", lo + k, lo + k, hop.draws_per_site(W), attempt)
                L[k] = hop.build(uk, W)[0]
            smin = np.linalg.svd(L[bad], compute_uv=False)[:, -1]
            bad = bad[smin <= SINGULAR_THRESHOLD]
    L = _frozen(L)
    V = _frozen(V)
    return DisorderRealization(spec, window, L, V, seed, replica_id, rejections)


@dataclass(frozen=True, eq=False)
class BlockOperator:
    """Symmetric block-tridiagonal matrix on ``window`` with blocks of size W.

    ``diag[k]`` is ``V`` at site ``window.lo + k`` and ``upper[k]`` is the
    ``(x, x+1)`` block ``L_x``; the ``(x+1, x)`` block is ``L_x^T``.
    """

    window: Window
    width: int
    diag: np.ndarray
    upper: np.ndarray

    @property
    def n_sites(self):
        return len(self.window)

    @property
    def dim(self):
        return self.n_sites * self.width

    def block_index(self, x):
        if x not in self.window:
            raise OutOfRangeError(f"site {x} outside box [{self.window.lo}, {self.window.hi}]")
        return x - self.window.lo

    def toarray(self):
        W, n = self.width, self.n_sites
        H = np.zeros((n * W, n * W))
        for k in range(n):
            H[k * W : (k + 1) * W, k * W : (k + 1) * W] = self.diag[k]
        for k in range(n - 1):
            H[k * W : (k + 1) * W, (k + 1) * W : (k + 2) * W] = self.upper[k]
            H[(k + 1) * W : (k + 2) * W, k * W : (k + 1) * W] = self.upper[k].T
        return H

    def to_banded(self):
        """Lower banded storage for ``scipy.linalg.eig_banded(lower=True)``."""
        W, n = self.width, self.n_sites
        dim = n * W
        band = np.zeros((2 * W, dim))
        for k in range(n):
            for a in range(W):
                for b in range(a, W):
                    band[b - a, k * W + a] = self.diag[k][b, a]
        for k in range(n - 1):
            # lower block (x+1, x) = L_x^T, entry (a, b) sits at row W + a - b
            low = self.upper[k].T
            for a in range(W):
                for b in range(W):
                    band[W + a - b, k * W + b] = low[a, b]
        return band

    def norm(self):
        """Spectral norm."""
        return float(np.linalg.norm(self.toarray(), 2))


def assemble_finite_operator(real, box):
    """Restriction ``H_box`` of the operator of ``real`` to ``box``."""
    box = _as_window(box)
    if box not in real.window:
        raise OutOfRangeError(
            f"box [{box.lo}, {box.hi}] exceeds sampled window [{real.window.lo}, {real.window.hi}]"
        )
    diag = real.V_slice(box.lo, box.hi)
    upper = real.L_slice(box.lo, box.hi - 1) if box.hi > box.lo else np.empty((0, real.width, real.width))
    return BlockOperator(box, real.width, diag, upper)


# --------------------------------------------------------------------------
# moment diagnostic


@dataclass(frozen=True)
class MomentDiagnostic:
    """Monte-Carlo means of ``||V_0||^eta``, ``||L_0||^eta``, ``||L_0^-1||^eta``.

    ``running`` holds the running means at doubling sample sizes; a quantity
    is flagged heavy-tailed when the running mean keeps growing or a single
    draw dominates the sum.
    """

    eta: float
    samples: int
    means: dict
    stderr: dict
    running: dict
    sizes: tuple
    heavy_tail: dict
    nonfinite: dict


def moment_diagnostic(spec, samples, seed, eta=None):
    samples = check_int(samples, "samples", minimum=1)
    eta = spec.eta if eta is None else check_real(eta, "eta", positive=True)
    real = sample_realization(spec, Window(0, samples - 1), seed, replica_id=0)
    with np.errstate(over="ignore", divide="ignore"):
        terms = {
            "V": np.linalg.norm(real.V, ord=2, axis=(1, 2)) ** eta,
            "L": np.linalg.norm(real.L, ord=2, axis=(1, 2)) ** eta,
            "Linv": (1.0 / np.linalg.svd(real.L, compute_uv=False)[:, -1]) ** eta,
        }
    sizes = []
    n = samples
    while n >= 1 and len(sizes) < 5:
        sizes.append(n)
        n //= 2
    sizes = tuple(sorted(sizes))

    means, stderr, running, heavy, nonfinite = {}, {}, {}, {}, {}
    for name, t in terms.items():
        finite = np.isfinite(t)
        nonfinite[name] = int((~finite).sum())
        means[name] = float(t.mean())
        stderr[name] = float(t.std(ddof=1) / np.sqrt(samples)) if samples > 1 else float("nan")
        cums = np.cumsum(t)
        running[name] = [float(cums[m - 1] / m) for m in sizes]
        total = float(t.sum())
        share = float(t.max() / total) if total > 0 and np.isfinite(total) else 0.0
        growth = running[name][-1] / running[name][0] if running[name][0] > 0 else 1.0
        heavy[name] = bool(nonfinite[name] > 0 or (samples >= 16 and (share > 0.2 or growth > 2.0)))
    return MomentDiagnostic(eta, samples, means, stderr, running, sizes, heavy, nonfinite)
