"""Directional analysis along rotation-pushforward homotopies.

For a square model/teacher pair, mixing the current ensemble with a rotated
teacher pushforward mu_s = (1-s) mu + s R#teacher gives exact first and
second derivatives of the reduced loss at s = 0:

    slope(R)     = -2 tr(R L_mat B)
    curvature(R) = -4 tr(L_mat^2 R^T G R)
                   + 2 tr(L_mat (2 B R + R^T B^T - 2 I) B R)

with B = Sigma_om G and G the ridge inverse of Sigma_mm.  The steepest slope
over all spectral-norm contractions equals -2 ||L_mat B||_* by nuclear-norm
duality, and the rotation making B R symmetric isolates the strictly negative
curvature term at critical points.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .activations import Activation
from .ensembles import Ensemble, _affine_mix, rotate_pushforward
from .objective import CovPack, covpack_from_features, reduced_loss
from .quadrature import RIDGE_EPS, EvalSet, feature_values


class Band(Enum):
    BELOW_BAND = "below_band"
    ACCEL_BAND = "accel_band"
    DECEL_BAND = "decel_band"
    ABOVE_BAND = "above_band"


@dataclass(frozen=True)
class ProbeReport:
    slope: float             # steepest d/ds loss at s = 0
    curvature: float         # d^2/ds^2 at s = 0 along the symmetrizing rotation
    r_used: np.ndarray       # rotation achieving the steepest slope
    band: Band
    nuclear_norm_b: float    # ||B||_*
    loss: float
    r_lo: float

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "curvature": self.curvature,
            "band": self.band.value,
            "nuclear_norm_b": self.nuclear_norm_b,
            "loss": self.loss,
            "r_lo": self.r_lo,
            "r_used": self.r_used.tolist(),
        }


def _require_square(pack: CovPack):
    if pack.sigma_om.shape[0] != pack.sigma_om.shape[1]:
        raise ValueError("landscape probes require matched dimensions "
                         "(k_teacher == k); misspecified runs skip them")


def first_order_slope(mu: Ensemble, teacher: Ensemble, r: np.ndarray,
                      es: EvalSet, act: Activation,
                      eps_reg: float = RIDGE_EPS) -> float:
    """d/ds loss((1-s) mu + s R#teacher) at s = 0."""
    pack = reduced_loss(mu, teacher, es, act, eps_reg)
    _require_square(pack)
    r = np.asarray(r, dtype=float)
    if r.shape != pack.sigma_mm.shape:
        raise ValueError("rotation shape does not match feature dimension")
    return -2.0 * float(np.trace(r @ pack.l_mat @ pack.b))


def steepest_rotation(mu: Ensemble, teacher: Ensemble, es: EvalSet,
                      act: Activation, eps_reg: float = RIDGE_EPS) -> tuple:
    """Spectral-ball rotation minimizing the slope, and the slope itself.

    max_{||R|| <= 1} tr(R P) = ||P||_* is attained at R = U V^T for the SVD
    P^T = U S V^T, so the returned R is orthogonal and the slope equals
    -2 ||L_mat B||_*.  With repeated singular values the maximizer is not
    unique; the SVD-canonical choice is returned.
    """
    pack = reduced_loss(mu, teacher, es, act, eps_reg)
    _require_square(pack)
    p = pack.l_mat @ pack.b
    u, s, vt = np.linalg.svd(p.T)
    r = u @ vt
    slope = -2.0 * float(np.sum(s))
    return r, slope


def symmetrizing_rotation(mu: Ensemble, teacher: Ensemble, es: EvalSet,
                          act: Activation, eps_reg: float = RIDGE_EPS) -> np.ndarray:
    """Orthogonal R = V U^T making B R symmetric (B = U D V^T)."""
    pack = reduced_loss(mu, teacher, es, act, eps_reg)
    _require_square(pack)
    u, _, vt = np.linalg.svd(pack.b)
    return vt.T @ u.T


def second_order_curvature(mu: Ensemble, teacher: Ensemble, r: np.ndarray,
                           es: EvalSet, act: Activation,
                           eps_reg: float = RIDGE_EPS) -> float:
    """d^2/ds^2 loss((1-s) mu + s R#teacher) at s = 0."""
    pack = reduced_loss(mu, teacher, es, act, eps_reg)
    _require_square(pack)
    r = np.asarray(r, dtype=float)
    l_mat, b, g = pack.l_mat, pack.b, pack.w_opt
    k = l_mat.shape[0]
    term1 = -4.0 * np.trace(l_mat @ l_mat @ r.T @ g @ r)
    term2 = 2.0 * np.trace(l_mat @ (2.0 * b @ r + r.T @ b.T - 2.0 * np.eye(k))
                           @ b @ r)
    return float(term1 + term2)


def _homotopy_loss_vs_teacher(mu: Ensemble, nu: Ensemble, teacher: Ensemble,
                              s: float, es: EvalSet, act: Activation,
                              eps_reg: float = RIDGE_EPS) -> float:
    """Reduced loss of the affine combination (1-s) mu + s nu vs `teacher`.

    Accepts s slightly outside [0, 1] (signed weights) so central finite
    differences at the endpoints are possible; the covariance algebra is
    insensitive to weight signs.
    """
    a, w, wt = _affine_mix(mu, nu, s)
    s_act = act.f(w @ es.x.T)
    h = (a * wt[:, None]).T @ s_act
    h_teacher = feature_values(teacher, es, act)
    return covpack_from_features(h, h_teacher, eps_reg).loss


def homotopy_scan(mu: Ensemble, teacher: Ensemble, r: np.ndarray,
                  s_grid, es: EvalSet, act: Activation,
                  eps_reg: float = RIDGE_EPS) -> list:
    """Reduced loss along the homotopy towards R#teacher at each s in s_grid."""
    s_grid = np.asarray(s_grid, dtype=float)
    if np.any((s_grid < 0.0) | (s_grid > 1.0)):
        raise ValueError("scan grid must lie in [0, 1]")
    nu = rotate_pushforward(teacher, r)
    return [(float(s), _homotopy_loss_vs_teacher(mu, nu, teacher, s, es, act,
                                                 eps_reg))
            for s in s_grid]


# ---------------------------------------------------------------------------
# band classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BandResult:
    band: Band
    loss: float
    r_lo: float
    interval: tuple    # delta-guarantee interval endpoints
    guarantee_applies: bool
    delta: float


def band_check(mu: Ensemble, teacher: Ensemble, es: EvalSet, act: Activation,
               delta: float, r1: float = None,
               eps_reg: float = RIDGE_EPS) -> BandResult:
    """Classify the loss against the guaranteed-descent band.

    Inside [lo, hi] with lo/hi = (r_lo -/+ sqrt(r_lo^2 - 4 r1^2 delta)) / 4 a
    descent direction of slope <= -delta is guaranteed; losses above r_lo / 2
    are compatible with critical points.
    """
    if r1 is None:
        r1 = act.r1
    pack = reduced_loss(mu, teacher, es, act, eps_reg)
    r_lo = pack.r_lo
    disc = r_lo * r_lo - 4.0 * r1 * r1 * delta
    if disc < 0.0:
        raise ValueError(
            f"delta={delta:.3g} exceeds r_lo^2 / (4 r1^2) = "
            f"{r_lo * r_lo / (4 * r1 * r1):.3g}: the slope guarantee is vacuous")
    lo = (r_lo - np.sqrt(disc)) / 4.0
    hi = (r_lo + np.sqrt(disc)) / 4.0
    loss = pack.loss
    if loss >= r_lo / 2.0:
        band = Band.ABOVE_BAND
    elif loss > hi:
        band = Band.DECEL_BAND
    elif loss >= lo:
        band = Band.ACCEL_BAND
    else:
        band = Band.BELOW_BAND
    return BandResult(band=band, loss=loss, r_lo=r_lo, interval=(float(lo), float(hi)),
                      guarantee_applies=band is Band.ACCEL_BAND, delta=delta)


def probe_report(mu: Ensemble, teacher: Ensemble, es: EvalSet, act: Activation,
                 delta: float = 0.0, eps_reg: float = RIDGE_EPS) -> ProbeReport:
    """Full landscape probe of an ensemble snapshot."""
    pack = reduced_loss(mu, teacher, es, act, eps_reg)
    _require_square(pack)
    r, slope = steepest_rotation(mu, teacher, es, act, eps_reg)
    r_sym = symmetrizing_rotation(mu, teacher, es, act, eps_reg)
    curv = second_order_curvature(mu, teacher, r_sym, es, act, eps_reg)
    band = band_check(mu, teacher, es, act, delta, eps_reg=eps_reg).band
    nuc_b = float(np.sum(np.linalg.svd(pack.b, compute_uv=False)))
    return ProbeReport(slope=slope, curvature=curv, r_used=r, band=band,
                       nuclear_norm_b=nuc_b, loss=pack.loss, r_lo=pack.r_lo)
