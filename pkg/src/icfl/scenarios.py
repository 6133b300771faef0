"""Experiment scenarios: seeded builders and the figure/scaling runners.

A Scenario is a fully serializable description of one experiment: teacher
spec, model spec, quadrature descriptor and training hyperparameters.  The
master seed deterministically derives the teacher, model-init, eval-set and
trainer sub-seeds, so identical scenario + seed reproduce identical outputs
byte for byte.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .activations import get_activation
from .dynamics import TrainConfig, TrainLog, attention_gd_step, train
from .ensembles import Ensemble, path_norm
from .objective import (loss_tf, projection_floor, reduced_loss, test_error)
from .quadrature import EvalSet, draw_eval_set, feature_values
from .serialize import ensure_dir, save_ensemble, trainlog_csv, write_csv, write_json


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def make_teacher(k: int, n: int, d: int, es: EvalSet,
                 rng: np.random.Generator, rank: int = 0,
                 target_var: float = 0.25, spread: float = 0.4,
                 negation: float = 1.0,
                 activation: str = "sigmoid") -> Ensemble:
    """Construct a nondegenerate teacher with isotropic feature covariance.

    Neurons come in pairs (a, w), (-negation * a, -w) grouped by feature
    coordinate, with the group's first-layer weights clustered around a shared
    direction.  Full negation cancels the activation mean so the features are
    centered odd functions; negation = 0 drops the pairing entirely and yields
    one-signed features whose own norm is linearly predictable, which the
    nonlinear-task experiment relies on.  The second layer is then rescaled so
    the feature covariance on the eval set equals target_var * I restricted to
    the leading `rank` directions (full rank by default), and finally spun by
    a random rotation.  Degenerate teachers (rank < k) keep their trailing
    feature directions exactly zero.
    """
    act = get_activation(activation)
    paired = negation != 0.0
    if paired and n % 2 != 0:
        raise ValueError("teacher size must be even (antithetic pairs)")
    r = rank if rank else k
    if not 1 <= r <= k:
        raise ValueError(f"teacher rank {r} outside [1, {k}]")
    pairs = n // 2 if paired else n
    centers = rng.standard_normal((r, d))
    centers *= np.sqrt(d) / np.linalg.norm(centers, axis=1, keepdims=True)
    groups = np.arange(pairs) % r
    w = centers[groups] + spread * rng.standard_normal((pairs, d))
    a = np.zeros((pairs, k))
    a[np.arange(pairs), groups] = 1.0
    if paired:
        a_full = np.concatenate([a, -negation * a])
        w_full = np.concatenate([w, -w])
    else:
        a_full, w_full = a, w
    raw = Ensemble.uniform(a_full, w_full)

    h = feature_values(raw, es, act)
    sigma = (h @ h.T) / es.m
    sig_r = sigma[:r, :r]
    eigval, eigvec = np.linalg.eigh(sig_r)
    if eigval[0] <= 0:
        raise ValueError("teacher construction produced degenerate leading block")
    whiten = eigvec @ np.diag(np.sqrt(target_var) / np.sqrt(eigval)) @ eigvec.T
    a_full[:, :r] = a_full[:, :r] @ whiten.T
    spin = np.linalg.qr(rng.standard_normal((k, k)))[0]
    teacher = Ensemble.uniform(a_full @ spin.T, w_full)

    # construction-time nondegeneracy check on the leading block
    h = feature_values(teacher, es, act)
    eigs = np.linalg.eigvalsh((h @ h.T) / es.m)
    if eigs[-1] <= 0 or (rank in (0, k) and eigs[0] < 0.5 * target_var):
        raise RuntimeError("teacher whitening failed the spectrum check")
    return teacher


def init_model(k: int, n: int, d: int, rng: np.random.Generator,
               a_radius: float = 0.5, a_rank: int = 0) -> Ensemble:
    """Model initialization: a uniform on the sphere of radius a_radius,
    w ~ N(0, I_d / d).

    With a_rank in (0, k) the second layer is confined to the span of the
    leading a_rank coordinate axes (exactly zero trailing entries, so the
    confinement survives floating point; the teacher is randomly rotated, so
    the subspace is still generic relative to it).  That subspace is invariant
    under plain descent -- the feature cross covariance has exactly zero
    null-space columns, so the out-of-space gradient vanishes identically --
    which makes such inits sit on strict saddle manifolds whenever the
    subspace cannot express the teacher.
    """
    a = rng.standard_normal((n, k))
    if 0 < a_rank < k:
        a[:, a_rank:] = 0.0
    a *= a_radius / np.linalg.norm(a, axis=1, keepdims=True)
    w = rng.standard_normal((n, d)) / np.sqrt(d)
    return Ensemble.uniform(a, w)


# ---------------------------------------------------------------------------
# scenario
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    k: int = 5
    k_teacher: int = 5
    d: int = 20
    n_particles: int = 500
    n_teacher: int = 500
    teacher_rank: int = 0          # 0 means full rank
    teacher_var: float = 0.25
    teacher_spread: float = 0.4
    teacher_negation: float = 1.0  # 0 gives one-signed (uncentered) features
    init_a_radius: float = 0.5
    init_a_rank: int = 0           # 0 means full rank; < k sits on a saddle manifold
    eval_m: int = 4096
    eval_dist: str = "gaussian"
    train: TrainConfig = field(default_factory=lambda: TrainConfig(seed=0))

    def __post_init__(self):
        if self.eval_m < 256:
            raise ValueError("production eval sets need at least 256 nodes")
        if self.k_teacher < self.k:
            raise ValueError("teacher feature dimension below model dimension")

    def flat_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            if f.name == "train":
                continue
            out[f.name] = getattr(self, f.name)
        for f in dataclasses.fields(TrainConfig):
            if f.name in ("seed", "pi"):
                continue
            out[f.name] = getattr(self.train, f.name)
        out["pi_a_scale"] = self.train.pi.a_scale
        out["pi_w_std"] = self.train.pi.w_std
        out["pi_antithetic"] = self.train.pi.antithetic
        return out

    def hash(self) -> str:
        blob = json.dumps({k: repr(v) for k, v in self.flat_dict().items()},
                          sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def build_scenario(scn: Scenario):
    """Derive (eval set, teacher, model init, train seed) from the master seed."""
    ss = np.random.SeedSequence(scn.seed)
    t_ss, m_ss, e_ss, tr_ss = ss.spawn(4)
    eval_seed = int(e_ss.generate_state(1)[0])
    es = draw_eval_set(eval_seed, scn.eval_m, scn.d, scn.eval_dist)
    teacher = make_teacher(scn.k_teacher, scn.n_teacher, scn.d, es,
                           np.random.default_rng(t_ss), rank=scn.teacher_rank,
                           target_var=scn.teacher_var,
                           spread=scn.teacher_spread,
                           negation=scn.teacher_negation,
                           activation=scn.train.activation)
    mu0 = init_model(scn.k, scn.n_particles, scn.d,
                     np.random.default_rng(m_ss), a_radius=scn.init_a_radius,
                     a_rank=scn.init_a_rank)
    train_seed = int(tr_ss.generate_state(1)[0])
    return es, teacher, mu0, train_seed


def run_mode(scn: Scenario, mode: str, snapshot_every: int = 0) -> tuple:
    """Train one mode of a scenario; returns (log, es, teacher, mu0)."""
    es, teacher, mu0, train_seed = build_scenario(scn)
    cfg = replace(scn.train, seed=train_seed, mode=mode,
                  snapshot_every=snapshot_every)
    log = train(mu0, teacher, cfg, es)
    return log, es, teacher, mu0


# ---------------------------------------------------------------------------
# figure runners
# ---------------------------------------------------------------------------

def run_train(scn: Scenario, out_dir: str) -> dict:
    """Single training run; writes trainlog.csv, snapshots and covpack.json."""
    ensure_dir(out_dir)
    log, es, teacher, mu0 = run_mode(scn, scn.train.mode)
    act = get_activation(scn.train.activation)
    csv_path = os.path.join(out_dir, "trainlog.csv")
    trainlog_csv(csv_path, log, scn.hash(), scn.seed)
    save_ensemble(os.path.join(out_dir, "final_ensemble.txt"), log.final)
    save_ensemble(os.path.join(out_dir, "teacher.txt"), teacher)
    pack = reduced_loss(log.final, teacher, es, act, scn.train.eps_reg)
    write_json(os.path.join(out_dir, "covpack.json"), pack.to_dict())
    write_json(os.path.join(out_dir, "eval_set.json"), es.descriptor())
    return {"csv": csv_path, "log": log, "aborted": log.aborted}


def run_fig1a(scn: Scenario, out_dir: str, modes=("attention", "static", "modified")) -> str:
    """Training curves of the three model variants on one teacher."""
    if scn.k_teacher != scn.k:
        raise ValueError("matched-dimension experiment requires k_teacher == k")
    ensure_dir(out_dir)
    rows = []
    for mode in modes:
        log, *_ = run_mode(scn, mode)
        if log.aborted:
            raise FloatingPointError(f"mode {mode} aborted with non-finite loss")
        rows.extend((r.step, mode, r.loss) for r in log.records)
    path = os.path.join(out_dir, "fig1a.csv")
    write_csv(path, ["step", "mode", "loss"], rows, scn.hash(), scn.seed)
    return path


def run_fig1b(scn: Scenario, out_dir: str) -> str:
    """Static vs modified dynamics on a rank-deficient teacher."""
    if not (0 < scn.teacher_rank < scn.k):
        raise ValueError("degenerate-feature experiment needs teacher_rank < k")
    ensure_dir(out_dir)
    rows = []
    for mode in ("static", "modified"):
        log, *_ = run_mode(scn, mode)
        rows.extend((r.step, mode, r.loss) for r in log.records)
    path = os.path.join(out_dir, "fig1b.csv")
    write_csv(path, ["step", "mode", "loss"], rows, scn.hash(), scn.seed)
    return path


def rank_floor(teacher: Ensemble, k_model: int, es: EvalSet, act) -> float:
    """Best achievable misspecified loss: half the trailing eigenvalue mass."""
    h = feature_values(teacher, es, act)
    eigs = np.linalg.eigvalsh((h @ h.T) / es.m)
    return 0.5 * float(np.sum(eigs[: teacher.k - k_model]))


def run_fig1c(scn: Scenario, out_dir: str, modes=("attention", "static", "modified")) -> str:
    """Misspecified model: teacher has extra feature directions."""
    if scn.k_teacher <= scn.k:
        raise ValueError("misspecified experiment needs k_teacher > k")
    ensure_dir(out_dir)
    act = get_activation(scn.train.activation)
    rows = []
    for mode in modes:
        log, es, teacher, _ = run_mode(scn, mode)
        rows.extend((r.step, mode, r.loss) for r in log.records)
    path = os.path.join(out_dir, "fig1c.csv")
    write_csv(path, ["step", "mode", "loss"], rows, scn.hash(), scn.seed)
    es, teacher, _, _ = build_scenario(scn)
    write_json(os.path.join(out_dir, "fig1c_floor.json"),
               {"rank_floor": rank_floor(teacher, scn.k, es, act)})
    return path


def run_fig1d(scn: Scenario, out_dir: str, w_steps: int = 2500,
              eta_w: float | None = None) -> str:
    """Test error on the nonlinear norm task along the training trajectory.

    Two-phase schedule: the feature layer is first trained to convergence by
    reduced-objective descent; the attention matrix then trains from zero by
    its own gradient flow at the learned features, which is the phase whose
    in-context readout improves.  The W-flow rate defaults to the Lipschitz
    normalization 1 / (||Sigma_om||^2 ||Sigma_mm||) of this fixed quadratic
    problem.  Each logged step records the prediction loss and the norm-task
    test error of the model's current (mu, W), plus the teacher-span
    projection floor.  Snapshots are log-spaced.
    """
    if scn.k_teacher != scn.k:
        raise ValueError("norm-task experiment uses the matched teacher")
    ensure_dir(out_dir)
    act = get_activation(scn.train.activation)
    log, es, teacher, _ = run_mode(scn, "static")
    mu = log.final

    def norm_task(x):
        s = act.f(teacher.w @ x.T)
        h = (teacher.a * teacher.weights[:, None]).T @ s
        return np.linalg.norm(h, axis=0)

    floor = projection_floor(norm_task, teacher, es, act)
    if eta_w is None:
        pack = reduced_loss(mu, teacher, es, act, scn.train.eps_reg)
        lip = (np.linalg.norm(pack.sigma_om, 2) ** 2
               * np.linalg.norm(pack.sigma_mm, 2))
        eta_w = 1.0 / lip
    snap_steps = sorted({0, w_steps} | {int(round(2.0 ** p))
                                        for p in np.arange(2, np.log2(max(w_steps, 17)), 0.5)})
    w_att = np.zeros((scn.k, scn.k))
    rows = []
    for t in range(w_steps + 1):
        if t in snap_steps:
            rows.append((t, loss_tf(mu, w_att, teacher, es, act),
                         test_error(mu, w_att, norm_task, es, act), floor))
        if t < w_steps:
            w_att = attention_gd_step(w_att, mu, teacher, es, eta_w, act)
    path = os.path.join(out_dir, "fig1d.csv")
    write_csv(path, ["step", "loss", "test_error", "floor"], rows,
              scn.hash(), scn.seed)
    return path


# ---------------------------------------------------------------------------
# scaling and propagation studies
# ---------------------------------------------------------------------------

def width_approx_error(sub: Ensemble, teacher: Ensemble, es: EvalSet, act) -> float:
    """||h_sub - h_teacher||^2 in L2 of the eval set."""
    diff = feature_values(sub, es, act) - feature_values(teacher, es, act)
    return float(np.mean(np.sum(diff * diff, axis=0)))


def finite_width_scaling(scn: Scenario, out_dir: str,
                         widths=(50, 100, 200, 400, 800, 1600, 3200),
                         draws: int = 20) -> str:
    """Approximation error of i.i.d. width-N subnetworks of the teacher."""
    ensure_dir(out_dir)
    act = get_activation(scn.train.activation)
    es, teacher, _, _ = build_scenario(scn)
    rng = np.random.default_rng(np.random.SeedSequence(scn.seed).spawn(5)[4])
    rows = []
    for n in widths:
        for j in range(draws):
            idx = rng.choice(teacher.n, size=n, replace=True, p=teacher.weights)
            sub = Ensemble.uniform(teacher.a[idx], teacher.w[idx])
            rows.append((n, j, width_approx_error(sub, teacher, es, act),
                         path_norm(sub)))
    path = os.path.join(out_dir, "scaling.csv")
    write_csv(path, ["n", "draw", "err_sq", "path_norm"], rows,
              scn.hash(), scn.seed)
    return path


# ---------------------------------------------------------------------------
# default scenarios for the experiment CLI
# ---------------------------------------------------------------------------

def _scenario(defaults: dict, train_defaults: dict, seed: int, over: dict) -> Scenario:
    train_kw = {**train_defaults, **over.pop("train", {})}
    kw = {**defaults, **over}
    return Scenario(seed=seed, train=TrainConfig(seed=0, **train_kw), **kw)


def fig1a_scenario(seed: int, **over) -> Scenario:
    """Desk-scale matched-teacher run: d=20, k=5, 500 sigmoid neurons.

    The attention variant keeps W at the closed-form optimum (eta_w = 0): from
    the small-feature initialization the W-subproblem is too degenerate for
    any fixed descent rate to track its optimum.
    """
    return _scenario(dict(name="fig1a", k=5, k_teacher=5, d=20,
                          n_particles=500, n_teacher=500, eval_m=2048),
                     dict(eta=0.05, eta_w=0.0, max_steps=3000, epsilon=0.0),
                     seed, over)


def fig1b_scenario(seed: int, **over) -> Scenario:
    """Degenerate teacher (rank k-1) with a rank-deficient model start.

    The model's second layer starts inside a random 3-dim subspace, a strict
    saddle manifold that plain descent can never leave (the out-of-subspace
    gradient is identically zero), while birth-death reseeds isotropically and
    escapes.  This realizes the degenerate-feature stall the perturbed
    dynamics are designed for.
    """
    return _scenario(dict(name="fig1b", k=5, k_teacher=5, d=20,
                          n_particles=200, n_teacher=200, teacher_rank=4,
                          init_a_rank=3, eval_m=1024),
                     dict(eta=0.05, max_steps=2000, epsilon=0.0),
                     seed, over)


def fig1c_scenario(seed: int, **over) -> Scenario:
    """Misspecified run: teacher carries two extra feature directions."""
    return _scenario(dict(name="fig1c", k=5, k_teacher=7, d=20,
                          n_particles=300, n_teacher=420, eval_m=2048),
                     dict(eta=0.05, eta_w=0.0, max_steps=2500, epsilon=0.0),
                     seed, over)


def fig1d_scenario(seed: int, **over) -> Scenario:
    """Matched run instrumented for the nonlinear norm-task test error.

    Uses the one-signed teacher (negation 0) so the norm task has genuine
    linear content over the teacher span, and a deep feature-training phase so
    the learned span is clean when the attention readout converges onto it.
    """
    return _scenario(dict(name="fig1d", k=5, k_teacher=5, d=20,
                          n_particles=500, n_teacher=500, eval_m=2048,
                          teacher_negation=0.0),
                     dict(eta=0.2, max_steps=3000, epsilon=1e-4),
                     seed, over)


def scaling_scenario(seed: int, **over) -> Scenario:
    return _scenario(dict(name="scaling", k=5, k_teacher=5, d=20,
                          n_teacher=500, eval_m=4096),
                     {}, seed, over)


def chaos_scenario(seed: int, **over) -> Scenario:
    return _scenario(dict(name="chaos", k=5, k_teacher=5, d=20,
                          n_teacher=300, eval_m=1024),
                     dict(eta=0.05), seed, over)


def chaos_experiment(scn: Scenario, out_dir: str,
                     widths=(64, 128, 256, 512), n_ref: int = 1024,
                     horizon: int = 200, init_noise: float = 0.4) -> str:
    """Loss-trajectory distance of nested finite ensembles to a wide reference.

    Particles are nested prefixes of one master sample drawn from a noised
    copy of the teacher: the limit of the standard zero-mean initialization
    has vanishing features, where the reduced objective is singular and
    finite-width losses do not concentrate, so a nondegenerate initialization
    distribution is required for the width comparison to be meaningful.
    """
    ensure_dir(out_dir)
    if scn.k_teacher != scn.k:
        raise ValueError("the width-comparison experiment uses matched dimensions")
    es, teacher, _, train_seed = build_scenario(scn)
    ss = np.random.SeedSequence(scn.seed).spawn(6)[5]
    rng = np.random.default_rng(ss)
    idx = rng.choice(teacher.n, size=n_ref, replace=True, p=teacher.weights)
    a = teacher.a[idx] + init_noise * rng.standard_normal((n_ref, scn.k))
    w = teacher.w[idx] + init_noise * rng.standard_normal((n_ref, scn.d))
    master = Ensemble.uniform(a, w)
    cfg = replace(scn.train, seed=train_seed, mode="static",
                  max_steps=horizon, epsilon=0.0)

    def curve(n):
        mu = Ensemble.uniform(master.a[:n], master.w[:n])
        return train(mu, teacher, cfg, es).losses

    ref = curve(n_ref)
    rows = []
    for n in list(widths) + [n_ref]:
        c = curve(n)
        m = min(len(c), len(ref))
        rows.append((n, float(np.max(np.abs(c[:m] - ref[:m])))))
    path = os.path.join(out_dir, "chaos.csv")
    write_csv(path, ["n", "sup_dist"], rows, scn.hash(), scn.seed)
    return path
