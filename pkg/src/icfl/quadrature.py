"""Deterministic Monte-Carlo quadrature for all input-space expectations.

Every expectation over the input distribution is frozen to one seeded
evaluation set per run.  That turns the population objective into a smooth
deterministic function of the particle coordinates, which is what allows the
finite-difference oracles used throughout the test suite to be exact.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .activations import Activation
from .ensembles import Ensemble

#: relative ridge added to Sigma_{mu,mu} before inversion: lambda = RIDGE_EPS * tr(S)/k
RIDGE_EPS = 1e-8

_KNOWN_DISTS = ("gaussian",)


@dataclass(frozen=True)
class EvalSet:
    """Fixed sample of inputs acting as quadrature for E_x."""

    x: np.ndarray  # (M, d)
    seed: int
    dist: str = "gaussian"

    def __post_init__(self):
        x = np.array(self.x, dtype=float, copy=True, order="C")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)

    @property
    def m(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def key(self) -> tuple:
        return (self.seed, self.m, self.d, self.dist)

    def descriptor(self) -> dict:
        """Seeded descriptor; the samples themselves are never persisted."""
        return {"seed": self.seed, "m": self.m, "d": self.d, "dist": self.dist}


def draw_eval_set(seed: int, m: int, d: int, dist: str = "gaussian") -> EvalSet:
    """Draw the quadrature sample. Identical seed gives bitwise identical x."""
    if m < 1:
        raise ValueError("need at least one quadrature node")
    if dist not in _KNOWN_DISTS:
        raise ValueError(f"unknown input distribution {dist!r}")
    x = np.random.default_rng(seed).standard_normal((m, d))
    return EvalSet(x, seed=seed, dist=dist)


def eval_set_from_descriptor(desc: dict) -> EvalSet:
    return draw_eval_set(int(desc["seed"]), int(desc["m"]), int(desc["d"]),
                         str(desc.get("dist", "gaussian")))


# ---------------------------------------------------------------------------
# feature matrices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureMatrix:
    """Cache of h_mu over an EvalSet: column m holds h_mu(x_m)."""

    values: np.ndarray   # (k, M)
    ensemble_hash: str
    eval_key: tuple

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True, order="C")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


_FEATURE_CACHE: "OrderedDict[tuple, FeatureMatrix]" = OrderedDict()
_FEATURE_CACHE_SIZE = 64


def feature_values(mu: Ensemble, es: EvalSet, act: Activation) -> np.ndarray:
    """Raw (k, M) matrix of network outputs, no caching."""
    if mu.d != es.d:
        raise ValueError("ensemble and eval set dimension mismatch")
    s = act.f(mu.w @ es.x.T)                    # (N, M)
    return (mu.a * mu.weights[:, None]).T @ s   # (k, M)


def features(mu: Ensemble, es: EvalSet, act: Activation) -> FeatureMatrix:
    """Cached feature matrix keyed by (ensemble hash, eval-set key)."""
    key = (mu.content_hash(), es.key, act.name)
    hit = _FEATURE_CACHE.get(key)
    if hit is not None:
        _FEATURE_CACHE.move_to_end(key)
        return hit
    fm = FeatureMatrix(feature_values(mu, es, act), key[0], es.key)
    _FEATURE_CACHE[key] = fm
    if len(_FEATURE_CACHE) > _FEATURE_CACHE_SIZE:
        _FEATURE_CACHE.popitem(last=False)
    return fm


# ---------------------------------------------------------------------------
# covariances
# ---------------------------------------------------------------------------

def cov_from_features(h_mu: np.ndarray, h_nu: np.ndarray) -> np.ndarray:
    m = h_mu.shape[1]
    return (h_mu @ h_nu.T) / m


def cov(mu: Ensemble, nu: Ensemble, es: EvalSet, act: Activation) -> np.ndarray:
    """Sigma_{mu,nu} = (1/M) sum_m h_mu(x_m) h_nu(x_m)^T."""
    return cov_from_features(features(mu, es, act).values,
                             features(nu, es, act).values)


class SigmaSpectrum(NamedTuple):
    lambda_min: float
    lambda_max: float
    rank: int
    eigenvalues: np.ndarray


def sigma_spectrum(mu: Ensemble, es: EvalSet, act: Activation) -> SigmaSpectrum:
    """Eigenvalues of Sigma_{mu,mu}; rank counted above 1e-10 * trace / k."""
    s = cov(mu, mu, es, act)
    eigs = np.linalg.eigvalsh(s)
    tol = 1e-10 * max(np.trace(s), 0.0) / s.shape[0]
    rank = int(np.sum(eigs > tol))
    return SigmaSpectrum(float(eigs[0]), float(eigs[-1]), rank, eigs)


def ridge_lambda(sigma_mm: np.ndarray, eps_reg: float = RIDGE_EPS) -> float:
    k = sigma_mm.shape[0]
    return eps_reg * float(np.trace(sigma_mm)) / k


def ridge_inverse(sigma_mm: np.ndarray, eps_reg: float = RIDGE_EPS) -> np.ndarray:
    """(Sigma + lambda I)^{-1} with the relative ridge used everywhere.

    Raises if the matrix is numerically singular even after the ridge, which
    flags that the measure sits too close to the degenerate-feature set.
    """
    k = sigma_mm.shape[0]
    lam = ridge_lambda(sigma_mm, eps_reg)
    m = sigma_mm + lam * np.eye(k)
    try:
        cho = np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise SingularFeatureCovariance(
            "feature covariance is singular even after ridge regularization; "
            "the ensemble's features span a degenerate subspace") from None
    inv = np.linalg.inv(cho)
    return inv.T @ inv


class SingularFeatureCovariance(np.linalg.LinAlgError):
    """Feature covariance not invertible: measure is numerically degenerate."""


# ---------------------------------------------------------------------------
# empirical input moments (diagnostics only)
# ---------------------------------------------------------------------------

def input_moments(es: EvalSet) -> tuple:
    """Empirical (M2, M4) = mean ||x||^2, mean ||x||^4 on the eval set."""
    sq = np.sum(es.x * es.x, axis=1)
    return float(np.mean(sq)), float(np.mean(sq * sq))
