"""Hessian kernel of the reduced objective as a finite symmetric operator.

The kernel H(theta, theta') (second mixed parameter gradient of the second
variation) acts on velocity fields v over the ensemble by

    (H v)(theta_p) = (1/N) sum_j H(theta_p, theta_j) v(theta_j),

and governs the linearized evolution of the gradient field:
d/dt grad(mu_t) = -H[grad(mu_t)].  The operator is assembled one numerical
differentiation level above the analytic first-order gradient: displace the
ensemble along a field, re-evaluate the analytic gradient at the original
particles, and central-difference.  The analytic blocks of the first trace
term of the kernel serve as a spot oracle for this assembly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .activations import Activation
from .ensembles import Ensemble
from .dynamics import _build_state, _grad_at, _State, grad_field
from .quadrature import RIDGE_EPS, EvalSet, feature_values, ridge_inverse

EPS_H_RANGE = (1e-6, 1e-3)
DENSE_BUDGET = 20_000


@dataclass(frozen=True)
class HessianOperator:
    """Weighted kernel matrix A[p, j] = (1/N) H(theta_p, theta_j).

    Stored as one (N m, N m) symmetric-up-to-FD-noise matrix with particle-major
    blocks of size m = k + d; block(p, j) recovers H(theta_p, theta_j).
    """

    matrix: np.ndarray
    n: int
    k: int
    d: int
    eps_h: float
    ensemble_hash: str

    @property
    def m(self) -> int:
        return self.k + self.d

    def block(self, p: int, j: int) -> np.ndarray:
        m = self.m
        return self.n * self.matrix[p * m:(p + 1) * m, j * m:(j + 1) * m]

    def symmetry_defect(self) -> float:
        """||A - A^T||_F / ||A||_F."""
        a = self.matrix
        return float(np.linalg.norm(a - a.T) / max(np.linalg.norm(a), 1e-300))


@dataclass(frozen=True)
class SpectralReport:
    eigenvalues: np.ndarray   # ascending
    lambda_0: float           # smallest eigenvalue
    psi_0: np.ndarray         # (N, m), normalized so (1/N) sum ||psi_0||^2 = 1
    alpha: float              # |(1/N) sum_p psi_0(theta_p)^T grad(theta_p)|

    def to_dict(self) -> dict:
        return {
            "lambda_0": float(self.lambda_0),
            "alpha": float(self.alpha),
            "eigenvalues": self.eigenvalues.tolist(),
            "psi_0": self.psi_0.tolist(),
        }


# ---------------------------------------------------------------------------
# operator action on a general velocity field
# ---------------------------------------------------------------------------

def apply_hessian(mu: Ensemble, teacher: Ensemble, es: EvalSet,
                  v: np.ndarray, eps_h: float, act: Activation,
                  eps_reg: float = RIDGE_EPS) -> np.ndarray:
    """Central-difference action of the Hessian operator on the field v.

    Displaces every particle by +/- eps_h * v(theta_j), recomputes the
    analytic gradient of the displaced measure at the original particles, and
    returns (G+ - G-) / (2 eps_h) as an (N, m) array.
    """
    _check_eps(eps_h)
    if not mu.is_uniform:
        raise ValueError("hessian probes expect a uniform ensemble")
    v = np.asarray(v, dtype=float)
    if v.shape != (mu.n, mu.k + mu.d):
        raise ValueError(f"field has shape {v.shape}, expected {(mu.n, mu.k + mu.d)}")
    va, vw = v[:, :mu.k], v[:, mu.k:]
    at = (mu.a, mu.w)
    gp = _displaced_grad(mu, teacher, es, mu.a + eps_h * va, mu.w + eps_h * vw,
                         at, act, eps_reg)
    gm = _displaced_grad(mu, teacher, es, mu.a - eps_h * va, mu.w - eps_h * vw,
                         at, act, eps_reg)
    return (gp - gm) / (2.0 * eps_h)


def _check_eps(eps_h: float):
    if not EPS_H_RANGE[0] <= eps_h <= EPS_H_RANGE[1]:
        raise ValueError(f"eps_h must lie in {EPS_H_RANGE}")


def _displaced_grad(mu, teacher, es, a_disp, w_disp, at, act, eps_reg):
    disp = Ensemble(a_disp, w_disp, mu.weights)
    ga, gw = grad_field(disp, teacher, es, act, eps_reg, at=at)
    return np.concatenate([ga, gw], axis=1)


# ---------------------------------------------------------------------------
# dense assembly via unit particle-displacement fields
# ---------------------------------------------------------------------------

def hessian_matrix(mu: Ensemble, teacher: Ensemble, es: EvalSet, eps_h: float,
                   act: Activation, eps_reg: float = RIDGE_EPS) -> HessianOperator:
    """Assemble the weighted kernel matrix column block by column block.

    Column (j, i) is the operator action on the unit field moving particle j
    along coordinate i, which equals (1/N) H(., theta_j) e_i; the 1/N mass
    weight of the displaced particle is therefore already incorporated.
    Incremental feature updates keep each column cheap: moving one particle
    changes a single row of the activation table.
    """
    _check_eps(eps_h)
    if not mu.is_uniform:
        raise ValueError("hessian assembly expects a uniform ensemble")
    n, k, d = mu.n, mu.k, mu.d
    m_dim = k + d
    if n * m_dim > DENSE_BUDGET:
        raise ValueError(
            f"dense assembly budget exceeded (N*m = {n * m_dim} > {DENSE_BUDGET}); "
            "subsample the ensemble for spectral work")
    x = es.x
    m_quad = es.m
    h_teacher = feature_values(teacher, es, act)
    base = _build_state(mu.a, mu.w, mu.weights, x, h_teacher, act, eps_reg)
    wt = mu.weights[:, None]  # uniform 1/N

    big = np.empty((n * m_dim, n * m_dim))

    def side_g_x(h_side):
        """Residual field B^T zeta of an ensemble with feature matrix h_side."""
        sigma_mm = (h_side @ h_side.T) / m_quad
        sigma_om = (h_teacher @ h_side.T) / m_quad
        g_inv = ridge_inverse(sigma_mm, eps_reg)
        b = sigma_om @ g_inv
        zeta = h_teacher - b @ h_side
        return b.T @ zeta

    for j in range(n):
        s_row = base.s[j]                       # (M,)
        z_row = mu.w[j] @ x.T                   # preactivations of particle j
        for i in range(m_dim):
            if i < k:
                # displacing a_j[i]: activation row unchanged
                dh = np.zeros((k, m_quad))
                dh[i] = eps_h * wt[j, 0] * s_row
                h_plus = base.h + dh
                h_minus = base.h - dh
            else:
                ci = i - k
                s_p = act.f(z_row + eps_h * x[:, ci])
                s_m = act.f(z_row - eps_h * x[:, ci])
                h_plus = base.h + wt[j, 0] * np.outer(mu.a[j], s_p - s_row)
                h_minus = base.h + wt[j, 0] * np.outer(mu.a[j], s_m - s_row)
            dg_x = side_g_x(h_plus) - side_g_x(h_minus)
            # gradient difference at all original particles, difference-first
            dga = -(base.s @ dg_x.T) / m_quad
            dgw = -(((base.a @ dg_x) * base.sd) @ x) / m_quad
            col = np.concatenate([dga, dgw], axis=1).reshape(-1)
            big[:, j * m_dim + i] = col / (2.0 * eps_h)

    return HessianOperator(matrix=big, n=n, k=k, d=d, eps_h=eps_h,
                           ensemble_hash=mu.content_hash())


def eigen(op: HessianOperator, grad: Optional[np.ndarray] = None) -> SpectralReport:
    """Full spectrum of the symmetrized operator matrix.

    Eigenfields are normalized in the L2(mu) inner product, so the stacked
    eigenvector of unit Euclidean norm is scaled by sqrt(N).  alpha measures
    the gradient-field component along the most unstable eigenfield.
    """
    a_sym = 0.5 * (op.matrix + op.matrix.T)
    eigvals, eigvecs = np.linalg.eigh(a_sym)
    i0 = int(np.argmin(eigvals))
    lambda_0 = float(eigvals[i0])
    psi0 = np.sqrt(op.n) * eigvecs[:, i0].reshape(op.n, op.m)
    alpha = 0.0
    if grad is not None:
        grad = np.asarray(grad, dtype=float)
        if grad.shape != (op.n, op.m):
            raise ValueError("gradient field shape mismatch")
        alpha = float(abs(np.mean(np.sum(psi0 * grad, axis=1))))
    return SpectralReport(eigenvalues=eigvals, lambda_0=lambda_0, psi_0=psi0,
                          alpha=alpha)


def subsample_uniform(mu: Ensemble, n_spec: int, rng: np.random.Generator) -> Ensemble:
    """Uniform particle subsample for spectral work (documented bias)."""
    if n_spec >= mu.n:
        return mu
    if not mu.is_uniform:
        raise ValueError("subsampling assumes a uniform ensemble")
    idx = rng.choice(mu.n, size=n_spec, replace=False)
    return Ensemble.uniform(mu.a[idx], mu.w[idx])


# ---------------------------------------------------------------------------
# analytic blocks of the first kernel trace term (spot oracle)
# ---------------------------------------------------------------------------

def trace_term(mu: Ensemble, teacher: Ensemble, es: EvalSet,
               theta: tuple, theta_p: tuple, act: Activation,
               eps_reg: float = RIDGE_EPS) -> float:
    """t(theta, theta') = tr(Sigma_{teacher,theta'} G Sigma_{theta,teacher}).

    The first trace term of the second variation of the reduced objective,
    with the base measure mu (hence G) held fixed.
    """
    a1, w1 = theta
    a2, w2 = theta_p
    state = _base_cov_state(mu, teacher, es, act, eps_reg)
    u1 = state["h_teacher"] @ act.f(es.x @ w1) / es.m    # (ko,)
    u2 = state["h_teacher"] @ act.f(es.x @ w2) / es.m
    return float((a2 @ state["g_inv"] @ a1) * (u1 @ u2))


def trace_term_blocks(mu: Ensemble, teacher: Ensemble, es: EvalSet,
                      theta: tuple, theta_p: tuple, act: Activation,
                      eps_reg: float = RIDGE_EPS) -> dict:
    """Analytic mixed-gradient blocks of the first trace term.

    With u(w) = E[act(w^T x) h_teacher(x)] and its w-gradient
    V(w) = E[act'(w^T x) x h_teacher(x)^T]:

        d2t/da da'  = (u(w)^T u(w')) G
        d2t/da dw'  = G a' (u(w)^T V(w')^T)
        d2t/dw da'  = V(w) u(w') a^T G
        d2t/dw dw'  = V(w) V(w')^T (a'^T G a)
    """
    a1, w1 = np.asarray(theta[0], float), np.asarray(theta[1], float)
    a2, w2 = np.asarray(theta_p[0], float), np.asarray(theta_p[1], float)
    state = _base_cov_state(mu, teacher, es, act, eps_reg)
    x, ht, g = es.x, state["h_teacher"], state["g_inv"]
    m = es.m

    def u_of(w):
        return ht @ act.f(x @ w) / m               # (ko,)

    def v_of(w):
        return (x * act.df(x @ w)[:, None]).T @ ht.T / m   # (d, ko)

    u1, u2 = u_of(w1), u_of(w2)
    v1, v2 = v_of(w1), v_of(w2)
    return {
        "aa": float(u1 @ u2) * g,
        "aw": np.outer(g @ a2, v2 @ u1),
        "wa": np.outer(v1 @ u2, g @ a1),
        "ww": (a2 @ g @ a1) * (v1 @ v2.T),
    }


def _base_cov_state(mu, teacher, es, act, eps_reg):
    h_teacher = feature_values(teacher, es, act)
    h = feature_values(mu, es, act)
    sigma_mm = (h @ h.T) / es.m
    return {"h_teacher": h_teacher,
            "g_inv": ridge_inverse(sigma_mm, eps_reg)}


# ---------------------------------------------------------------------------
# evolution-equation check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvoCheck:
    residual: float
    degenerate: bool      # gradient field numerically zero
    grad_norm: float
    hg_norm: float


def evo_check(mu: Ensemble, teacher: Ensemble, es: EvalSet, dt: float,
              act: Activation, eps_h: float = 1e-5,
              eps_reg: float = RIDGE_EPS,
              degenerate_tol: float = 1e-9) -> EvoCheck:
    """Euler-step residual of d/dt grad(mu_t) = -H[grad(mu_t)].

    Runs one explicit Euler step of the particle flow with step dt, measures
    the gradient field at the original particle locations before and after,
    and compares the finite-difference time derivative with -H[grad].
    """
    if dt > 1e-3:
        raise ValueError("evolution check requires dt <= 1e-3")
    if not mu.is_uniform:
        raise ValueError("evolution check expects a uniform ensemble")
    ga, gw = grad_field(mu, teacher, es, act, eps_reg)
    g0 = np.concatenate([ga, gw], axis=1)
    g0_norm = float(np.sqrt(np.mean(np.sum(g0 * g0, axis=1))))
    hg = apply_hessian(mu, teacher, es, g0, eps_h, act, eps_reg)
    hg_norm = float(np.sqrt(np.mean(np.sum(hg * hg, axis=1))))
    if g0_norm < degenerate_tol or hg_norm < degenerate_tol:
        return EvoCheck(residual=float("nan"), degenerate=True,
                        grad_norm=g0_norm, hg_norm=hg_norm)
    stepped = Ensemble(mu.a - dt * ga, mu.w - dt * gw, mu.weights)
    ga1, gw1 = grad_field(stepped, teacher, es, act, eps_reg, at=(mu.a, mu.w))
    g1 = np.concatenate([ga1, gw1], axis=1)
    resid = (g1 - g0) / dt + hg
    r = float(np.sqrt(np.mean(np.sum(resid * resid, axis=1)))) / hg_norm
    return EvoCheck(residual=r, degenerate=False, grad_norm=g0_norm,
                    hg_norm=hg_norm)
