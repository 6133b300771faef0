"""Particle dynamics: gradient descent on the reduced objective via the
functional derivative, joint attention training, birth-death resampling and
Gaussian-process velocity perturbations.

The functional derivative of the reduced objective at theta is

    delta_L(mu, theta) = -(1/M) sum_m zeta(x_m)^T B h_theta(x_m),

with zeta = h_teacher - B h_mu and B = Sigma_om G the ridge regression
coefficient.  Its theta-gradient drives every particle; the additive constant
is normalized so the integral of delta_L against mu itself vanishes.  All
particles update simultaneously against the pre-step ensemble, matching the
mean-field ODE discretization.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .activations import Activation, get_activation
from .ensembles import (Ensemble, Particle, PiConfig, project_unit_ball,
                        sample_pi, second_moment_a)
from .quadrature import RIDGE_EPS, EvalSet, feature_values, ridge_inverse

MODES = ("attention", "static", "modified")


# ---------------------------------------------------------------------------
# internal evaluation state
# ---------------------------------------------------------------------------

@dataclass
class _State:
    """Everything derived from (model arrays, teacher features, eval set)."""

    x: np.ndarray          # (M, d)
    h_teacher: np.ndarray  # (ko, M)
    a: np.ndarray          # (N, k)
    w: np.ndarray          # (N, d)
    weights: np.ndarray    # (N,)
    s: np.ndarray          # (N, M) activation values
    sd: np.ndarray         # (N, M) activation derivatives
    h: np.ndarray          # (k, M) network features
    sigma_mm: np.ndarray
    sigma_om: np.ndarray
    g_inv: np.ndarray      # ridge inverse of sigma_mm
    b: np.ndarray          # (ko, k)
    zeta: np.ndarray       # (ko, M)
    loss: float            # reduced loss


def _build_state(a, w, weights, x, h_teacher, act: Activation,
                 eps_reg: float = RIDGE_EPS) -> _State:
    m = x.shape[0]
    s = act.f(w @ x.T)
    sd = act.df_from_f(s)
    h = (a * weights[:, None]).T @ s
    sigma_mm = (h @ h.T) / m
    sigma_om = (h_teacher @ h.T) / m
    g_inv = ridge_inverse(sigma_mm, eps_reg)
    b = sigma_om @ g_inv
    zeta = h_teacher - b @ h
    sigma_oo_tr = float(np.einsum("im,im->", h_teacher, h_teacher)) / m
    loss = 0.5 * sigma_oo_tr - 0.5 * float(np.trace(b @ sigma_om.T))
    return _State(x=x, h_teacher=h_teacher, a=a, w=w, weights=weights, s=s,
                  sd=sd, h=h, sigma_mm=sigma_mm, sigma_om=sigma_om,
                  g_inv=g_inv, b=b, zeta=zeta, loss=loss)


def _state_from(mu: Ensemble, teacher: Ensemble, es: EvalSet, act: Activation,
                eps_reg: float = RIDGE_EPS) -> _State:
    h_teacher = feature_values(teacher, es, act)
    return _build_state(mu.a, mu.w, mu.weights, es.x, h_teacher, act, eps_reg)


def _grad_at(state: _State, g_x: np.ndarray, a_eval: np.ndarray,
             s_eval: np.ndarray, sd_eval: np.ndarray,
             x: np.ndarray) -> tuple:
    """Gradient of delta_L at arbitrary eval particles given the field g_x.

    g_x (k, M) is the residual field pulled back through the readout:
    B^T zeta for the reduced objective, or its joint-training analogue.
    grad_a = -(1/M) sum_m act(w^T x_m) g_x(x_m);
    grad_w = -(1/M) sum_m (a^T g_x(x_m)) act'(w^T x_m) x_m.
    """
    m = x.shape[0]
    ga = -(s_eval @ g_x.T) / m
    gw = -(((a_eval @ g_x) * sd_eval) @ x) / m
    return ga, gw


def _grad_field(state: _State) -> tuple:
    """Reduced-objective gradient field at the ensemble's own particles."""
    g_x = state.b.T @ state.zeta
    return _grad_at(state, g_x, state.a, state.s, state.sd, state.x)


def _attention_g_x(state: _State, w_att: np.ndarray) -> tuple:
    """Joint-training residual field and loss for a fixed attention matrix.

    zeta_W = h_teacher - Sigma_om W h_mu;
    g_x = W (C h_teacher) + W^T Sigma_mo zeta_W with C = E[h_mu zeta_W^T].
    At W = Sigma_mm^{-1} the cross term C vanishes and g_x reduces to
    B^T zeta, recovering the two-timescale field.
    """
    m = state.x.shape[0]
    zeta_w = state.h_teacher - state.sigma_om @ (w_att @ state.h)
    loss = 0.5 * float(np.einsum("im,im->", zeta_w, zeta_w)) / m
    c = (state.h @ zeta_w.T) / m                   # (k, ko)
    g_x = w_att @ (c @ state.h_teacher) + (w_att.T @ state.sigma_om.T) @ zeta_w
    return g_x, loss


# ---------------------------------------------------------------------------
# public functional-derivative operations
# ---------------------------------------------------------------------------

def func_deriv(mu: Ensemble, teacher: Ensemble, es: EvalSet, theta: Particle,
               act: Activation, eps_reg: float = RIDGE_EPS) -> float:
    """delta_L(mu, theta), normalized so its mu-average is zero."""
    state = _state_from(mu, teacher, es, act, eps_reg)
    s_theta = act.f(es.x @ theta.w)             # (M,)
    h_theta = np.outer(theta.a, s_theta)        # (k, M)
    return -float(np.einsum("im,im->", state.zeta, state.b @ h_theta)) / es.m


def grad_func_deriv(mu: Ensemble, teacher: Ensemble, es: EvalSet,
                    theta: Particle, act: Activation,
                    eps_reg: float = RIDGE_EPS) -> tuple:
    """(grad_a, grad_w) of delta_L(mu, .) at theta."""
    state = _state_from(mu, teacher, es, act, eps_reg)
    g_x = state.b.T @ state.zeta
    z = es.x @ theta.w
    s = act.f(z)[None, :]
    sd = act.df_from_f(s)
    ga, gw = _grad_at(state, g_x, theta.a[None, :], s, sd, es.x)
    return ga[0], gw[0]


def grad_field(mu: Ensemble, teacher: Ensemble, es: EvalSet, act: Activation,
               eps_reg: float = RIDGE_EPS,
               at: Optional[tuple] = None) -> tuple:
    """Gradient of delta_L(mu, .) at every particle (or at given (a, w) arrays).

    Returns (grad_a (N, k), grad_w (N, d)).  `at` evaluates the field of the
    measure mu at arbitrary points, which the Hessian-kernel probes use.
    """
    state = _state_from(mu, teacher, es, act, eps_reg)
    g_x = state.b.T @ state.zeta
    if at is None:
        return _grad_at(state, g_x, state.a, state.s, state.sd, state.x)
    a_eval, w_eval = at
    s_eval = act.f(w_eval @ es.x.T)
    sd_eval = act.df_from_f(s_eval)
    return _grad_at(state, g_x, a_eval, s_eval, sd_eval, es.x)


def grad_norm_l2(mu: Ensemble, teacher: Ensemble, es: EvalSet,
                 act: Activation, eps_reg: float = RIDGE_EPS) -> float:
    """L2(mu)-norm of the gradient field sqrt(sum_j weight_j ||grad_j||^2)."""
    ga, gw = grad_field(mu, teacher, es, act, eps_reg)
    sq = np.sum(ga * ga, axis=1) + np.sum(gw * gw, axis=1)
    return float(np.sqrt(np.sum(mu.weights * sq)))


# ---------------------------------------------------------------------------
# single update steps
# ---------------------------------------------------------------------------

def gd_step(mu: Ensemble, teacher: Ensemble, es: EvalSet, eta: float,
            act: Activation, eps_reg: float = RIDGE_EPS,
            project_a: bool = False) -> Ensemble:
    """One simultaneous particle update theta_j -= eta * grad delta_L(mu, theta_j)."""
    if not mu.is_uniform:
        raise ValueError("gradient descent expects a uniform training ensemble")
    ga, gw = grad_field(mu, teacher, es, act, eps_reg)
    out = Ensemble(mu.a - eta * ga, mu.w - eta * gw, mu.weights)
    return project_unit_ball(out) if project_a else out


def attention_gd_step(w_att: np.ndarray, mu: Ensemble, teacher: Ensemble,
                      es: EvalSet, eta_w: float, act: Activation) -> np.ndarray:
    """W' = W - eta_w * Sigma_mo Sigma_om (W Sigma_mm - I)."""
    h = feature_values(mu, es, act)
    h_teacher = feature_values(teacher, es, act)
    m = es.m
    sigma_mm = (h @ h.T) / m
    sigma_om = (h_teacher @ h.T) / m
    w_att = np.asarray(w_att, dtype=float)
    return w_att - eta_w * sigma_om.T @ sigma_om @ (w_att @ sigma_mm - np.eye(mu.k))


def birth_death(mu: Ensemble, gamma: float, pi: PiConfig,
                rng: np.random.Generator) -> Ensemble:
    """Replace floor(gamma N) uniformly chosen particles by fresh pi draws.

    In antithetic mode the count is rounded down to the nearest even number
    so replacements arrive in exact (+a, -a) pairs.
    """
    if not mu.is_uniform:
        raise ValueError("birth-death expects a uniform training ensemble")
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    n_rep = int(np.floor(gamma * mu.n))
    if pi.antithetic:
        n_rep -= n_rep % 2
    if n_rep < 1:
        if gamma > 0.0:
            warnings.warn("gamma * N < 1: birth-death is a no-op", stacklevel=2)
        return mu
    idx = rng.choice(mu.n, size=n_rep, replace=False)
    fresh = sample_pi(n_rep, pi, rng, k=mu.k, d=mu.d)
    a = mu.a.copy()
    w = mu.w.copy()
    a[idx] = np.stack([p.a for p in fresh])
    w[idx] = np.stack([p.w for p in fresh])
    return Ensemble(a, w, mu.weights)


def _gp_field(theta: np.ndarray, sigma_p: float, ell: float,
              rng: np.random.Generator, jitter: float = 1e-10) -> np.ndarray:
    """Sample xi(theta_j) for all j from m independent scalar GPs.

    The kernel K(theta, theta') = sigma_p^2 exp(-||theta - theta'||^2 / 2 ell^2)
    is shared across the m = k + d output coordinates.
    """
    n, m_dim = theta.shape
    sq = np.sum(theta * theta, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * theta @ theta.T
    np.maximum(d2, 0.0, out=d2)
    gram = sigma_p ** 2 * np.exp(-d2 / (2.0 * ell ** 2))
    jit = jitter
    for _ in range(4):
        try:
            chol = np.linalg.cholesky(gram + jit * np.eye(n))
            break
        except np.linalg.LinAlgError:
            jit *= 100.0
    else:
        raise np.linalg.LinAlgError(
            f"GP gram matrix not positive definite even with jitter {jit:.1e}")
    z = rng.standard_normal((n, m_dim))
    return chol @ z


def gp_perturb(mu: Ensemble, sigma_p: float, ell: float, eta_p: float,
               rng: np.random.Generator, jitter: float = 1e-10) -> Ensemble:
    """Transport all particles along a random GP velocity field.

    theta_j' = theta_j - eta_p * xi(theta_j) with xi ~ GP(0, K).
    """
    if mu.n > 10_000:
        raise ValueError("GP perturbation needs an N x N Cholesky; N too large")
    if sigma_p == 0.0:
        return mu
    theta = np.concatenate([mu.a, mu.w], axis=1)
    xi = _gp_field(theta, sigma_p, ell, rng, jitter)
    a = mu.a - eta_p * xi[:, :mu.k]
    w = mu.w - eta_p * xi[:, mu.k:]
    return Ensemble(a, w, mu.weights)


# ---------------------------------------------------------------------------
# trainer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of the training loop.

    delta_b / delta_p are relative per-window improvement thresholds: if the
    loss has not dropped by that fraction over the last `window` steps,
    birth-death (resp. GP perturbation) fires.  Both mechanisms are active in
    "modified" mode only; "static" minimizes the reduced objective by plain
    particle descent and "attention" trains (mu, W) jointly.  eta_w = 0 in
    attention mode means W is set to the closed-form optimum every step.
    """

    seed: int
    eta: float = 0.05
    eta_w: Optional[float] = None          # None -> 10 * eta; 0 -> closed form
    gamma: float = 0.05
    eta_p: float = 1.0
    tau: int = 500
    delta_b: float = 0.01
    delta_p: float = 0.01
    epsilon: float = 1e-4
    max_steps: int = 20_000
    window: int = 100
    sigma_p: float = 0.1
    ell: float = 1.0
    pi: PiConfig = field(default_factory=PiConfig)
    mode: str = "static"
    project_a: bool = False
    eps_reg: float = RIDGE_EPS
    activation: str = "sigmoid"
    batch_mode: str = "full"               # "full" | "stochastic"
    batch_size: int = 1024
    snapshot_every: int = 0
    w0_init: str = "optimum"               # "optimum" | "zero"

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not self.delta_b >= self.delta_p >= 0.0:
            raise ValueError("need delta_b >= delta_p >= 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.batch_mode not in ("full", "stochastic"):
            raise ValueError("batch_mode must be 'full' or 'stochastic'")
        if self.w0_init not in ("optimum", "zero"):
            raise ValueError("w0_init must be 'optimum' or 'zero'")

    def resolved_eta_w(self) -> float:
        """Fixed attention rate; 0 keeps W at the closed-form optimum.

        Joint descent needs the feature covariances to be away from zero; from
        a small-feature initialization the W-problem's curvature is degenerate
        and no fixed rate can follow the optimum, so cold starts should use the
        closed form (eta_w = 0).
        """
        return 10.0 * self.eta if self.eta_w is None else float(self.eta_w)


@dataclass
class TrainRecord:
    step: int
    loss: float
    m_a: float
    sigma_min: float
    sigma_max: float
    event: str
    grad_norm: float


@dataclass
class TrainLog:
    records: list
    final: Ensemble
    w_att: Optional[np.ndarray]
    aborted: bool
    converged: bool
    snapshots: list  # (step, Ensemble)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    @property
    def steps(self) -> np.ndarray:
        return np.array([r.step for r in self.records])


def train(mu0: Ensemble, teacher: Ensemble, cfg: TrainConfig,
          es: EvalSet) -> TrainLog:
    """Run the full training loop; deterministic given cfg.seed."""
    if (mu0.d, teacher.d) != (es.d, es.d):
        raise ValueError("ensemble / eval set dimension mismatch")
    if not mu0.is_uniform:
        raise ValueError("training expects a uniform initial ensemble")
    act = get_activation(cfg.activation)
    ss = np.random.SeedSequence(cfg.seed)
    ss_events, ss_batch = ss.spawn(2)
    rng_events = np.random.default_rng(ss_events)
    rng_batch = np.random.default_rng(ss_batch)

    a = mu0.a.copy()
    w = mu0.w.copy()
    n = mu0.n
    weights = np.full(n, 1.0 / n)
    eta_w = cfg.resolved_eta_w()

    stochastic = cfg.batch_mode == "stochastic"
    x_full = es.x
    h_teacher_full = feature_values(teacher, es, act)

    def batch_arrays():
        if not stochastic:
            return x_full, h_teacher_full
        x = rng_batch.standard_normal((cfg.batch_size, es.d))
        s = act.f(teacher.w @ x.T)
        ht = (teacher.a * teacher.weights[:, None]).T @ s
        return x, ht

    w_att = None
    records: list = []
    snapshots: list = []
    loss_hist: list = []
    last_perturb = -cfg.tau - 1
    aborted = False
    converged = False

    def snapshot_ensemble():
        return Ensemble(a.copy(), w.copy(), weights.copy())

    for t in range(cfg.max_steps):
        x, h_teacher = batch_arrays()
        state = _build_state(a, w, weights, x, h_teacher, act, cfg.eps_reg)

        if cfg.mode == "attention" and w_att is None:
            if eta_w == 0.0 or cfg.w0_init == "optimum":
                w_att = state.g_inv.copy()
            else:
                w_att = np.zeros((mu0.k, mu0.k))

        event = "none"
        if (cfg.mode == "modified" and t > 0 and t % cfg.window == 0
                and len(loss_hist) >= cfg.window):
            ref = loss_hist[t - cfg.window]
            impr = ref - state.loss
            fired = False
            if impr <= cfg.delta_b * ref and cfg.gamma > 0.0:
                mu_tmp = birth_death(snapshot_ensemble(), cfg.gamma, cfg.pi,
                                     rng_events)
                a, w = mu_tmp.a.copy(), mu_tmp.w.copy()
                event = "birth_death"
                fired = True
            if impr <= cfg.delta_p * ref and (t - last_perturb) > cfg.tau:
                mu_tmp = gp_perturb(snapshot_ensemble(), cfg.sigma_p, cfg.ell,
                                    cfg.eta_p, rng_events)
                a, w = mu_tmp.a.copy(), mu_tmp.w.copy()
                last_perturb = t
                event = "perturb" if event == "none" else "birth_death+perturb"
                fired = True
            if fired:
                state = _build_state(a, w, weights, x, h_teacher, act, cfg.eps_reg)

        if cfg.mode == "attention":
            if eta_w == 0.0:
                w_att = state.g_inv.copy()
            g_x, loss = _attention_g_x(state, w_att)
        else:
            g_x = state.b.T @ state.zeta
            loss = state.loss

        ga, gw = _grad_at(state, g_x, state.a, state.s, state.sd, x)
        gnorm = float(np.sqrt(np.mean(np.sum(ga * ga, axis=1)
                                      + np.sum(gw * gw, axis=1))))

        eigs = np.linalg.eigvalsh(state.sigma_mm)
        records.append(TrainRecord(step=t, loss=float(loss),
                                   m_a=float(np.mean(np.sum(a * a, axis=1))),
                                   sigma_min=float(eigs[0]),
                                   sigma_max=float(eigs[-1]),
                                   event=event, grad_norm=gnorm))
        loss_hist.append(float(loss))

        if cfg.snapshot_every > 0 and t % cfg.snapshot_every == 0:
            snapshots.append((t, snapshot_ensemble()))

        if not np.isfinite(loss):
            aborted = True
            break
        if loss <= cfg.epsilon:
            converged = True
            break

        a = a - cfg.eta * ga
        w = w - cfg.eta * gw
        if cfg.project_a:
            norms = np.linalg.norm(a, axis=1)
            big = norms > 1.0
            if np.any(big):
                a[big] /= norms[big, None]
        if cfg.mode == "attention" and eta_w != 0.0:
            w_att = w_att - eta_w * (
                state.sigma_om.T @ state.sigma_om
                @ (w_att @ state.sigma_mm - np.eye(mu0.k)))

    final = snapshot_ensemble()
    return TrainLog(records=records, final=final, w_att=w_att,
                    aborted=aborted, converged=converged, snapshots=snapshots)
