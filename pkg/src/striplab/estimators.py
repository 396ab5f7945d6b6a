"""Estimator-style front ends for the Monte-Carlo experiments.

Each estimator stores its hyper-parameters verbatim in ``__init__`` (so
``get_params`` / ``set_params`` / ``clone`` work) and does all validation and
computation in ``fit(spec)``, where ``spec`` is an
:class:`~striplab.model.EnsembleSpec`.  Fitted attributes end with ``_``.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import ConfigurationError
from .green import resonance_diameter_statistics, wegner_sample
from .localization import correlator_decay, decay_statistics
from .lyapunov import DEFAULT_REORTH, estimate_spectrum, gamma_profile, ldp_tail, reference_gamma
from .model import EnsembleSpec


def _check_spec(spec):
    if not isinstance(spec, EnsembleSpec):
        raise ConfigurationError(f"fit expects an EnsembleSpec, got {type(spec).__name__}")
    return spec


class LyapunovSpectrum(BaseEstimator):
    """All ``2W`` Lyapunov exponents at one energy.

    Attributes
    ----------
    exponents_ : ndarray of shape (2W,)
        Decreasing estimates.
    stderr_ : ndarray of shape (2W,)
        Standard errors across replicas.
    estimate_ : LyapunovEstimate
    """

    def __init__(self, energy=0.0, N=10_000, replicas=32, reorth_period=DEFAULT_REORTH, seed=0, burn_in=None):
        self.energy = energy
        self.N = N
        self.replicas = replicas
        self.reorth_period = reorth_period
        self.seed = seed
        self.burn_in = burn_in

    def fit(self, spec, y=None):
        est = estimate_spectrum(
            _check_spec(spec), self.energy, self.N, self.replicas, self.reorth_period, self.seed, self.burn_in
        )
        self.estimate_ = est
        self.exponents_ = est.exponents
        self.stderr_ = est.stderr
        return self

    @property
    def gamma_W_(self):
        check_is_fitted(self, "estimate_")
        return self.estimate_.gamma_W


class LargeDeviationTail(BaseEstimator):
    """Empirical tail ``P{|(1/N) log s_W - gamma_W| >= epsilon}`` across lengths.

    ``epsilon_fraction`` gives ``epsilon`` relative to the reference rate when
    ``epsilon`` is ``None``.
    """

    def __init__(self, energy=0.0, Ns=(50, 100, 200, 400), replicas=10_000, epsilon=None, epsilon_fraction=0.5,
                 seed=0, gamma_ref=None):
        self.energy = energy
        self.Ns = Ns
        self.replicas = replicas
        self.epsilon = epsilon
        self.epsilon_fraction = epsilon_fraction
        self.seed = seed
        self.gamma_ref = gamma_ref

    def fit(self, spec, y=None):
        spec = _check_spec(spec)
        g = self.gamma_ref if self.gamma_ref is not None else reference_gamma(spec, self.energy)[0]
        eps = self.epsilon if self.epsilon is not None else self.epsilon_fraction * g
        self.result_ = ldp_tail(spec, self.energy, eps, list(self.Ns), self.replicas, seed=self.seed, gamma_ref=g)
        self.tail_prob_ = self.result_.tail_prob
        self.rate_ = self.result_.rate
        return self


class WegnerStatistics(BaseEstimator):
    """Frequency of ``dist(E, sigma(H_{[-N,N]})) <= e^{-epsilon N}`` per N."""

    def __init__(self, energy=0.0, Ns=(20, 40, 80), replicas=10_000, epsilon=0.1, seed=0):
        self.energy = energy
        self.Ns = Ns
        self.replicas = replicas
        self.epsilon = epsilon
        self.seed = seed

    def fit(self, spec, y=None):
        self.result_ = wegner_sample(_check_spec(spec), self.energy, list(self.Ns), self.replicas, self.epsilon, self.seed)
        self.frequency_ = self.result_.frequency
        return self


class ResonanceDiameter(BaseEstimator):
    """``P{diam(Res(tau, E, N) within [-N^2, N^2]) > 2N}`` with ``tau = tau_fraction * gamma_W``."""

    def __init__(self, energy=0.0, Ns=(8, 12, 16), replicas=1000, tau_fraction=0.3, seed=0, gammaW=None):
        self.energy = energy
        self.Ns = Ns
        self.replicas = replicas
        self.tau_fraction = tau_fraction
        self.seed = seed
        self.gammaW = gammaW

    def fit(self, spec, y=None):
        spec = _check_spec(spec)
        g = self.gammaW if self.gammaW is not None else reference_gamma(spec, self.energy)[spec.width - 1]
        self.result_ = resonance_diameter_statistics(
            spec, self.tau_fraction * g, self.energy, list(self.Ns), self.replicas, g, self.seed
        )
        self.probability_ = self.result_.probability
        return self


class EigenfunctionDecay(BaseEstimator):
    """Decay rates of interior eigenfunctions against ``gamma_W(lambda)``."""

    def __init__(self, interval=(-0.5, 0.5), box_length=400, replicas=20, threshold=0.9, seed=0,
                 profile_N=10_000, profile_replicas=16):
        self.interval = interval
        self.box_length = box_length
        self.replicas = replicas
        self.threshold = threshold
        self.seed = seed
        self.profile_N = profile_N
        self.profile_replicas = profile_replicas

    def _profile(self, spec):
        lo, hi = self.interval
        return gamma_profile(spec, lo, hi, tau=0.01, N=self.profile_N, replicas=self.profile_replicas, seed=self.seed)

    def fit(self, spec, y=None):
        spec = _check_spec(spec)
        self.gamma_profile_ = self._profile(spec)
        self.result_ = decay_statistics(
            spec, self.gamma_profile_, self.interval, self.box_length, self.replicas, self.seed, self.threshold
        )
        self.fraction_ = self.result_.fraction
        return self


class CorrelatorDecayEstimator(EigenfunctionDecay):
    """Median slope of ``log Q(x, y)`` against ``|x - y|`` over ``[dmin, dmax]``."""

    def __init__(self, interval=(-0.5, 0.5), box_length=400, replicas=20, threshold=0.9, seed=0,
                 profile_N=10_000, profile_replicas=16, dmin=20, dmax=80):
        super().__init__(interval, box_length, replicas, threshold, seed, profile_N, profile_replicas)
        self.dmin = dmin
        self.dmax = dmax

    def fit(self, spec, y=None):
        spec = _check_spec(spec)
        self.gamma_profile_ = self._profile(spec)
        self.result_ = correlator_decay(
            spec, self.interval, self.box_length, self.replicas, self.seed, self.dmin, self.dmax
        )
        self.median_slope_ = self.result_.median_slope
        self.gamma_inf_ = self.gamma_profile_.inf(*self.interval)
        self.passes_ = bool(self.median_slope_ <= -self.threshold * self.gamma_inf_)
        return self


__all__ = [
    "CorrelatorDecayEstimator",
    "EigenfunctionDecay",
    "LargeDeviationTail",
    "LyapunovSpectrum",
    "ResonanceDiameter",
    "WegnerStatistics",
]
