"""Particle ensembles: weighted empirical measures on parameter space.

An ensemble holds N neurons theta_j = (a_j, w_j) with nonnegative weights
summing to one.  Training states are uniform (weight 1/N each); rotation
pushforwards and homotopy mixtures produce general weighted ensembles.
Ensembles are immutable values: every operation returns a new one, which is
what makes deterministic replay and snapshot-based probes possible.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .activations import Activation

WEIGHT_TOL = 1e-12
SPECTRAL_TOL = 1e-9
HULL_MAX_K = 20


@dataclass(frozen=True)
class Particle:
    """A single neuron theta = (a, w); h_theta(x) = a * act(w @ x)."""

    a: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        w = np.asarray(self.w, dtype=float)
        if a.ndim != 1 or w.ndim != 1:
            raise ValueError("particle components must be 1-d vectors")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(w))):
            raise ValueError("particle has non-finite entries")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "w", w)


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True, order="C")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Ensemble:
    """Weighted particle ensemble over R^k x R^d."""

    a: np.ndarray        # (N, k) second-layer vectors
    w: np.ndarray        # (N, d) first-layer weights
    weights: np.ndarray  # (N,)

    def __post_init__(self):
        a = _frozen(self.a)
        w = _frozen(self.w)
        wt = _frozen(self.weights)
        if a.ndim != 2 or w.ndim != 2 or wt.ndim != 1:
            raise ValueError("expected a (N,k), w (N,d), weights (N,)")
        if not (a.shape[0] == w.shape[0] == wt.shape[0]):
            raise ValueError("inconsistent particle counts")
        if a.shape[0] == 0:
            raise ValueError("empty ensemble")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(w)) and np.all(np.isfinite(wt))):
            raise ValueError("ensemble has non-finite entries")
        if np.any(wt < -WEIGHT_TOL):
            raise ValueError("negative weight")
        if abs(wt.sum() - 1.0) > 1e-10:
            raise ValueError(f"weights sum to {wt.sum()!r}, expected 1")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "weights", wt)

    # -- basic descriptors -------------------------------------------------

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def k(self) -> int:
        return self.a.shape[1]

    @property
    def d(self) -> int:
        return self.w.shape[1]

    @property
    def is_uniform(self) -> bool:
        return bool(np.allclose(self.weights, 1.0 / self.n, rtol=0.0, atol=WEIGHT_TOL))

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.array([self.n, self.k, self.d], dtype=np.int64).tobytes())
        h.update(self.weights.tobytes())
        h.update(self.a.tobytes())
        h.update(self.w.tobytes())
        return h.hexdigest()[:16]

    # -- constructors ------------------------------------------------------

    @staticmethod
    def uniform(a: np.ndarray, w: np.ndarray) -> "Ensemble":
        n = np.asarray(a).shape[0]
        return Ensemble(a, w, np.full(n, 1.0 / n))

    @staticmethod
    def from_particles(particles: Sequence[Particle],
                       weights: Iterable[float] | None = None) -> "Ensemble":
        a = np.stack([p.a for p in particles])
        w = np.stack([p.w for p in particles])
        if weights is None:
            return Ensemble.uniform(a, w)
        return Ensemble(a, w, np.asarray(list(weights), dtype=float))

    def particle(self, j: int) -> Particle:
        return Particle(self.a[j], self.w[j])


# ---------------------------------------------------------------------------
# neuron / network evaluation
# ---------------------------------------------------------------------------

def h_particle(theta: Particle, x: np.ndarray, act: Activation) -> np.ndarray:
    """Single-neuron output a * act(w @ x)."""
    x = np.asarray(x, dtype=float)
    if x.shape != theta.w.shape:
        raise ValueError(f"x has shape {x.shape}, expected {theta.w.shape}")
    return theta.a * act.f(theta.w @ x)


def h_ensemble(mu: Ensemble, x: np.ndarray, act: Activation) -> np.ndarray:
    """Weighted network output sum_j weight_j * h_particle(theta_j, x)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (mu.d,):
        raise ValueError(f"x has shape {x.shape}, expected ({mu.d},)")
    s = act.f(mu.w @ x)                  # (N,)
    return (mu.weights * s) @ mu.a       # (k,)


# ---------------------------------------------------------------------------
# rotation pushforwards via the orthogonal hull
# ---------------------------------------------------------------------------

def hull_decompose(r: np.ndarray, tol: float = SPECTRAL_TOL):
    """Decompose a spectral-norm contraction into a convex hull of rotations.

    Writes R = sum_j alpha_j Q_j with Q_j orthogonal, alpha_j >= 0 summing to
    one.  Through the SVD R = U diag(delta) V^T, each sign pattern
    s in {-1,+1}^k contributes Q_s = U diag(s) V^T with weight
    prod_i (1 + s_i delta_i) / 2.  Terms with zero weight are dropped, so an
    orthogonal R returns the single term (1, R).
    """
    r = np.asarray(r, dtype=float)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ValueError("hull decomposition requires a square matrix")
    k = r.shape[0]
    if k > HULL_MAX_K:
        raise ValueError(f"refusing hull decomposition for k={k} > {HULL_MAX_K} (2^k terms)")
    sval = np.linalg.norm(r, 2)
    if sval > 1.0 + tol:
        raise ValueError(f"spectral norm {sval:.6g} exceeds 1")
    u, delta, vt = np.linalg.svd(r)
    delta = np.clip(delta, 0.0, 1.0)
    terms = []
    # iterate the 2^k sign patterns; product weights factor per coordinate
    plus = (1.0 + delta) / 2.0
    minus = (1.0 - delta) / 2.0
    for mask in range(1 << k):
        signs = np.array([1.0 if (mask >> i) & 1 == 0 else -1.0 for i in range(k)])
        alpha = float(np.prod(np.where(signs > 0, plus, minus)))
        if alpha <= 1e-15:
            continue
        q = (u * signs) @ vt
        terms.append((alpha, q))
    total = sum(t[0] for t in terms)
    terms = [(alpha / total, q) for alpha, q in terms]
    return terms


def rotate_pushforward(mu: Ensemble, r: np.ndarray) -> Ensemble:
    """Pushforward R#mu realized as the hull mixture sum_j alpha_j (Q_j)#mu.

    Each orthogonal Q acts on the second layer only, (a, w) -> (Qa, w), so
    h_{R#mu}(x) = R h_mu(x) for every x.
    """
    terms = hull_decompose(r)
    if np.asarray(r).shape[0] != mu.k:
        raise ValueError("rotation dimension does not match ensemble k")
    a_parts, w_parts, wt_parts = [], [], []
    for alpha, q in terms:
        a_parts.append(mu.a @ q.T)
        w_parts.append(mu.w)
        wt_parts.append(alpha * mu.weights)
    return Ensemble(np.concatenate(a_parts), np.concatenate(w_parts),
                    np.concatenate(wt_parts))


# ---------------------------------------------------------------------------
# mixtures
# ---------------------------------------------------------------------------

def _affine_mix(mu: Ensemble, nu: Ensemble, s: float) -> tuple:
    """Raw arrays of the affine combination (1-s) mu + s nu.

    Used by finite-difference probes which step slightly outside [0, 1];
    returns (a, w, weights) without the nonnegativity check.
    """
    if (mu.k, mu.d) != (nu.k, nu.d):
        raise ValueError("mixture requires matching (k, d)")
    a = np.concatenate([mu.a, nu.a])
    w = np.concatenate([mu.w, nu.w])
    wt = np.concatenate([(1.0 - s) * mu.weights, s * nu.weights])
    return a, w, wt


def mix(mu: Ensemble, nu: Ensemble, s: float) -> Ensemble:
    """Linear homotopy mixture (1-s) mu + s nu."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"mixture parameter s={s} outside [0, 1]")
    a, w, wt = _affine_mix(mu, nu, s)
    return Ensemble(a, w, wt)


# ---------------------------------------------------------------------------
# resampling distribution pi
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PiConfig:
    """Reference distribution for birth-death resampling.

    a is uniform on the sphere of radius a_scale, w isotropic Gaussian with
    std w_std.  With antithetic pairing every draw (a, w) is accompanied by
    (-a, w), which makes the sampled network function vanish identically and
    keeps the reduced loss exactly invariant under exact-mixture birth-death.
    """

    a_scale: float = 0.5
    w_std: float = 1.0
    antithetic: bool = True


def sample_pi(n: int, cfg: PiConfig, rng: np.random.Generator,
              k: int = None, d: int = None) -> list:
    """Draw n particles from pi. n must be even in antithetic mode."""
    if k is None or d is None:
        raise ValueError("sample_pi needs explicit k and d")
    if cfg.antithetic and n % 2 != 0:
        raise ValueError("antithetic sampling requires even n")
    particles = []
    n_base = n // 2 if cfg.antithetic else n
    for _ in range(n_base):
        a = rng.standard_normal(k)
        a *= cfg.a_scale / np.linalg.norm(a)
        w = cfg.w_std * rng.standard_normal(d)
        particles.append(Particle(a, w))
        if cfg.antithetic:
            particles.append(Particle(-a, w))
    return particles


def pi_ensemble(n: int, cfg: PiConfig, rng: np.random.Generator,
                k: int, d: int) -> Ensemble:
    return Ensemble.from_particles(sample_pi(n, cfg, rng, k=k, d=d))


# ---------------------------------------------------------------------------
# ensemble statistics
# ---------------------------------------------------------------------------

def path_norm(mu: Ensemble) -> float:
    """sum_j weight_j ||a_j|| ||w_j||."""
    return float(np.sum(mu.weights * np.linalg.norm(mu.a, axis=1)
                        * np.linalg.norm(mu.w, axis=1)))


def second_moment_a(mu: Ensemble) -> float:
    """Second moment of the second layer, sum_j weight_j ||a_j||^2.

    Conserved by the continuous-time flow; the discrete trainer monitors its
    first-order-in-step-size drift.
    """
    return float(np.sum(mu.weights * np.sum(mu.a * mu.a, axis=1)))


def project_unit_ball(mu: Ensemble) -> Ensemble:
    """Project every a_j onto the unit ball (optional constraint mode)."""
    norms = np.linalg.norm(mu.a, axis=1)
    scale = np.where(norms > 1.0, 1.0 / np.maximum(norms, 1e-300), 1.0)
    return Ensemble(mu.a * scale[:, None], mu.w, mu.weights)
