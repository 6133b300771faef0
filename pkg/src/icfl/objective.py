"""Prediction loss, closed-form attention optimum, and the reduced objective.

The full model predicts y_q = E_x[f(x) h_mu(x)^T] W h_mu(x_q) for a linear
task f over teacher features.  Averaging the task weights out leaves the
matrix-valued risk in terms of the covariance bundle
(Sigma_mm, Sigma_om, Sigma_oo).  Minimizing over the attention matrix W in
closed form yields the reduced objective

    loss(mu) = tr L_mat,   L_mat = 1/2 Sigma_oo - 1/2 Sigma_om G Sigma_om^T,

with G the ridge-regularized inverse of Sigma_mm.  All formulas are stated
for rectangular Sigma_om so misspecified teachers (k_teacher > k) work
unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .activations import Activation
from .ensembles import Ensemble
from .quadrature import (RIDGE_EPS, EvalSet, features, feature_values,
                         ridge_inverse)

#: PSD slack allowed for the residual matrix
LMAT_PSD_TOL = -1e-10


@dataclass(frozen=True)
class CovPack:
    """Covariance bundle of a (model, teacher) pair on one eval set."""

    sigma_mm: np.ndarray   # (k, k) model feature covariance
    sigma_om: np.ndarray   # (ko, k) teacher-model cross covariance
    sigma_oo: np.ndarray   # (ko, ko) teacher feature covariance
    w_opt: np.ndarray      # (k, k) canonical attention optimum
    b: np.ndarray          # (ko, k) regression coefficient Sigma_om G
    l_mat: np.ndarray      # (ko, ko) residual matrix
    loss: float
    r_lo: float            # min eigenvalue of Sigma_oo
    r_hi: float            # max eigenvalue of Sigma_oo

    def to_dict(self) -> dict:
        return {
            "k": int(self.sigma_mm.shape[0]),
            "k_teacher": int(self.sigma_oo.shape[0]),
            "loss": float(self.loss),
            "r_lo": float(self.r_lo),
            "r_hi": float(self.r_hi),
            "sigma_mm": self.sigma_mm.tolist(),
            "sigma_om": self.sigma_om.tolist(),
            "sigma_oo": self.sigma_oo.tolist(),
            "w_opt": self.w_opt.tolist(),
            "b": self.b.tolist(),
            "l_mat": self.l_mat.tolist(),
        }


def covpack_from_features(h_model: np.ndarray, h_teacher: np.ndarray,
                          eps_reg: float = RIDGE_EPS) -> CovPack:
    """Assemble the covariance bundle from precomputed feature matrices."""
    m = h_model.shape[1]
    sigma_mm = (h_model @ h_model.T) / m
    sigma_om = (h_teacher @ h_model.T) / m
    sigma_oo = (h_teacher @ h_teacher.T) / m
    g = ridge_inverse(sigma_mm, eps_reg)
    b = sigma_om @ g
    l_mat = 0.5 * sigma_oo - 0.5 * b @ sigma_om.T
    loss = float(np.trace(l_mat))
    oo_eigs = np.linalg.eigvalsh(sigma_oo)
    return CovPack(sigma_mm=sigma_mm, sigma_om=sigma_om, sigma_oo=sigma_oo,
                   w_opt=g, b=b, l_mat=l_mat, loss=loss,
                   r_lo=float(oo_eigs[0]), r_hi=float(oo_eigs[-1]))


def reduced_loss(mu: Ensemble, teacher: Ensemble, es: EvalSet, act: Activation,
                 eps_reg: float = RIDGE_EPS) -> CovPack:
    """Attention-minimized objective and its covariance bundle."""
    h_model = features(mu, es, act).values
    h_teacher = features(teacher, es, act).values
    return covpack_from_features(h_model, h_teacher, eps_reg)


def reduced_loss_value(mu: Ensemble, teacher: Ensemble, es: EvalSet,
                       act: Activation, eps_reg: float = RIDGE_EPS) -> float:
    return reduced_loss(mu, teacher, es, act, eps_reg).loss


def attention_optimum(mu: Ensemble, es: EvalSet, act: Activation,
                      eps_reg: float = RIDGE_EPS) -> np.ndarray:
    """Canonical minimizer W = (Sigma_mm + ridge)^{-1} of the prediction loss.

    The full minimizer family only differs in directions invisible to
    Sigma_om; this choice is unique and satisfies the normal equations.
    """
    h_model = features(mu, es, act).values
    sigma_mm = (h_model @ h_model.T) / es.m
    return ridge_inverse(sigma_mm, eps_reg)


# ---------------------------------------------------------------------------
# full prediction loss, two routes
# ---------------------------------------------------------------------------

def loss_tf(mu: Ensemble, w: np.ndarray, teacher: Ensemble, es: EvalSet,
            act: Activation) -> float:
    """Quadrature form: 1/2 mean_m ||h_teacher(x_m) - Sigma_om W h_mu(x_m)||^2."""
    h_model = features(mu, es, act).values
    h_teacher = features(teacher, es, act).values
    w = np.asarray(w, dtype=float)
    if w.shape != (mu.k, mu.k):
        raise ValueError(f"attention matrix has shape {w.shape}, expected {(mu.k, mu.k)}")
    sigma_om = (h_teacher @ h_model.T) / es.m
    resid = h_teacher - sigma_om @ w @ h_model
    return 0.5 * float(np.mean(np.sum(resid * resid, axis=0)))


def loss_tf_trace(mu: Ensemble, w: np.ndarray, teacher: Ensemble, es: EvalSet,
                  act: Activation) -> float:
    """Trace form of the same risk; cross-checked against the quadrature form."""
    h_model = features(mu, es, act).values
    h_teacher = features(teacher, es, act).values
    w = np.asarray(w, dtype=float)
    m = es.m
    sigma_mm = (h_model @ h_model.T) / m
    sigma_om = (h_teacher @ h_model.T) / m
    sigma_oo = (h_teacher @ h_teacher.T) / m
    t1 = 0.5 * np.trace(sigma_oo)
    t2 = -np.trace(sigma_om @ w @ sigma_om.T)
    t3 = 0.5 * np.trace(w.T @ sigma_om.T @ sigma_om @ w @ sigma_mm)
    return float(t1 + t2 + t3)


# ---------------------------------------------------------------------------
# finite-prompt loss
# ---------------------------------------------------------------------------

def finite_prompt_loss(mu: Ensemble, w: np.ndarray, teacher: Ensemble, n: int,
                       prompts: int, rng: np.random.Generator, act: Activation,
                       task: np.ndarray | None = None) -> float:
    """Monte-Carlo prompt-sampled risk with n example pairs per prompt.

    Each prompt draws a task v ~ N(0, I) over teacher features (or uses the
    fixed `task`), n fresh example inputs and one query, all independent of
    any eval set.  Returns 1/2 the mean squared prediction error.
    """
    if n < 1:
        raise ValueError("need at least one example pair per prompt")
    w = np.asarray(w, dtype=float)
    total = 0.0
    for _ in range(prompts):
        v = rng.standard_normal(teacher.k) if task is None else np.asarray(task, float)
        x = rng.standard_normal((n, mu.d))
        xq = rng.standard_normal(mu.d)
        s_model = act.f(mu.w @ x.T)                        # (N, n)
        h_model = (mu.a * mu.weights[:, None]).T @ s_model  # (k, n)
        s_teach = act.f(teacher.w @ x.T)
        h_teach = (teacher.a * teacher.weights[:, None]).T @ s_teach  # (ko, n)
        y = v @ h_teach                                    # (n,)
        h_q = (mu.a * mu.weights[:, None]).T @ act.f(mu.w @ xq)
        y_q = v @ ((teacher.a * teacher.weights[:, None]).T @ act.f(teacher.w @ xq))
        y_hat = (y @ h_model.T) @ w @ h_q / n
        total += 0.5 * (y_q - y_hat) ** 2
    return total / prompts


# ---------------------------------------------------------------------------
# test error on arbitrary scalar tasks
# ---------------------------------------------------------------------------

def test_error(mu: Ensemble, w: np.ndarray, g: Callable[[np.ndarray], np.ndarray],
               es: EvalSet, act: Activation) -> float:
    """Mean squared in-context prediction error for a scalar task g.

    The prediction of g(x_q) is gbar^T W h_mu(x_q) with
    gbar = (1/M) sum_m g(x_m) h_mu(x_m), mirroring the linear-task readout.
    """
    h_model = features(mu, es, act).values       # (k, M)
    gx = np.asarray(g(es.x), dtype=float)        # (M,)
    if gx.shape != (es.m,):
        raise ValueError("task must map the (M, d) eval matrix to (M,) values")
    gbar = (h_model @ gx) / es.m                 # (k,)
    pred = (gbar @ np.asarray(w)) @ h_model      # (M,)
    return float(np.mean((gx - pred) ** 2))


test_error.__test__ = False  # pytest: a library function, not a test case


def projection_floor(g: Callable[[np.ndarray], np.ndarray], teacher: Ensemble,
                     es: EvalSet, act: Activation) -> float:
    """inf_v ||g - v^T h_teacher||^2 on the eval set, by least squares."""
    h_teacher = features(teacher, es, act).values   # (ko, M)
    gx = np.asarray(g(es.x), dtype=float)
    coef, *_ = np.linalg.lstsq(h_teacher.T, gx, rcond=None)
    resid = gx - coef @ h_teacher
    return float(np.mean(resid * resid))
