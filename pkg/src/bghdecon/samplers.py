"""BGH partially collapsed Gibbs sampler and the BTG single-site baseline.

One BGH iteration is, in this fixed order:

1. for every site k, a reversible-jump move on (q_k, w_k) with x integrated out;
2. x_active ~ N(eta, Gamma);
3. hyperparameters given (q, w, x);
4. optionally the impulse-response scale by random-walk MH.

Reordering 1 and 2 would break the partially collapsed scheme, so the order
is not configurable.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import special

from .distributions import GhParams, GigParams, gig_sample, truncnorm_sample
from .model import (
    ActiveSetCholesky,
    Hyperparams,
    LatentState,
    NotPositiveDefinite,
    Observation,
    draw_active_amplitudes,
    gig_logpdf_fast,
    marginal_from_chol,
    prior_laws,
    prior_mean,
    state_factor,
)

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


class Move(str, Enum):
    BIRTH = "birth"
    DEATH = "death"
    UPDATE = "update"


class SamplerKind(str, Enum):
    BGH = "bgh"
    BTG = "btg"


@dataclass(frozen=True)
class MoveProbabilities:
    p01: float = 1.0
    p10: float = 0.5
    update_mix: float = 0.5  # probability of the prior branch q11^(1)

    def __post_init__(self):
        if self.p01 != 1.0:
            raise ValueError("a birth is always proposed from an inactive site (p01 = 1)")
        if not (0.0 <= self.p10 <= 1.0 and 0.0 <= self.update_mix <= 1.0):
            raise ValueError(f"invalid move probabilities {self}")

    @property
    def p11(self) -> float:
        return 1.0 - self.p10


@dataclass(frozen=True)
class SamplerConfig:
    """Run settings shared by both samplers.

    ``initial`` supplies the starting hyperparameters; which of them are
    resampled is controlled by the ``sample_*`` flags (the noise variance is
    known by default).
    """

    iterations: int
    initial: Hyperparams
    burn_in: int = 0
    seed: int = 0
    thin: int = 1
    sample_bern_prob: bool = True
    sample_amp_var: bool = True
    sample_noise_var: bool = False
    sample_ir_scale: bool = False
    amp_var_step: float = 0.6
    amp_var_prior: str = "jeffreys"
    amp_var_bounds: tuple = (1e-12, 1e6)
    noise_prior: tuple = (0.0, 0.0)
    ir_scale_step: float = 0.15
    ir_scale_bounds: tuple = (0.5, 10.0)
    w_bounds: tuple = (1e-12, 1e12)
    moves: MoveProbabilities = field(default_factory=MoveProbabilities)
    shuffle_sites: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if not (self.amp_var_step > 0 and self.ir_scale_step > 0):
            raise ValueError("MH step sizes must be positive")
        if self.amp_var_prior not in ("jeffreys", "flat"):
            raise ValueError(f"unknown amp_var prior {self.amp_var_prior!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["moves"] = asdict(self.moves)
        return d


class Counters:
    """Proposal/acceptance tallies for one chain."""

    KEYS = ("birth", "death", "update", "amp_var", "ir_scale")

    def __init__(self):
        self.proposed = dict.fromkeys(self.KEYS, 0)
        self.accepted = dict.fromkeys(self.KEYS, 0)

    def tally(self, key: str, accepted: bool) -> None:
        self.proposed[key] += 1
        self.accepted[key] += int(accepted)

    def rates(self) -> dict:
        return {k: (self.accepted[k] / self.proposed[k] if self.proposed[k] else None) for k in self.KEYS}

    def to_dict(self) -> dict:
        return {"proposed": dict(self.proposed), "accepted": dict(self.accepted), "rates": self.rates()}


def _accept(log_ratio: float, rng) -> bool:
    return log_ratio >= 0.0 or math.log(rng.random()) < log_ratio


# ---------------------------------------------------------------- RJ moves


@lru_cache(maxsize=64)
def update_proposal_laws(sigma_x: float, nu_N: GhParams) -> tuple[GigParams, GigParams]:
    """The two update-move proposals: the GIG_N(sigma_x**2) prior and
    GIG(lam_N - 1/2, sqrt(gamma_N^2 + beta_N^2)/sigma_x, sigma_x sqrt(delta_N^2 + mu_N^2))."""
    prior = GigParams(nu_N.lam, nu_N.gamma / sigma_x, nu_N.delta * sigma_x)
    g2 = (nu_N.alpha - nu_N.beta) * (nu_N.alpha + nu_N.beta) + nu_N.beta**2
    tuned = GigParams(nu_N.lam - 0.5, math.sqrt(g2) / sigma_x, sigma_x * math.hypot(nu_N.delta, nu_N.mu))
    return prior, tuned


def propose_update_w(w_k: float, sigma_x: float, nu_N: GhParams, rng, mix: float = 0.5) -> tuple[float, int]:
    """Independent update proposal; returns (candidate, branch) with branch 1 or 2."""
    laws = update_proposal_laws(sigma_x, nu_N)
    branch = 1 if rng.random() < mix else 2
    return gig_sample(laws[branch - 1], rng), branch


def _proposal_terms(move: Move, w_old, w_new, sigma_x, nu_N, moves: MoveProbabilities, branch=None) -> float:
    """log(reverse move prob * reverse density) - log(forward move prob * forward density)."""
    prior, tuned = update_proposal_laws(sigma_x, nu_N)
    if move is Move.BIRTH:
        return math.log(moves.p10) - math.log(moves.p01) - float(gig_logpdf_fast(prior, w_new))
    if move is Move.DEATH:
        return math.log(moves.p01) - math.log(moves.p10) + float(gig_logpdf_fast(prior, w_old))
    law = prior if branch == 1 else tuned
    return float(gig_logpdf_fast(law, w_old)) - float(gig_logpdf_fast(law, w_new))


def _candidate(chol: ActiveSetCholesky, k: int, move: Move, w_new, obs, hp) -> ActiveSetCholesky:
    if move is Move.BIRTH:
        return chol.insert(k, w_new, obs, hp)
    if move is Move.DEATH:
        return chol.remove(k)
    return chol.update_w(k, w_new)


def _move_log_ratio(chol, lm, k, move, w_old, w_new, branch, obs, hp, nu_N, cfg):
    """Incremental MHG log ratio; returns (log_ratio, candidate factor, candidate log marginal)."""
    cand = _candidate(chol, k, move, w_new, obs, hp)
    lm_new = marginal_from_chol(cand, obs, hp, nu_N)
    extra = _proposal_terms(move, w_old, w_new, hp.amp_std, nu_N, cfg.moves, branch)
    return lm_new - lm + extra, cand, lm_new


def acceptance_log_ratio(current, candidate, move, obs: Observation, hp: Hyperparams, nu_N: GhParams,
                         cfg: SamplerConfig, branch: int | None = None) -> float:
    """Log Metropolis-Hastings-Green ratio for a one-site transition.

    ``current`` and ``candidate`` are (q, w) pairs with full-length ``w``
    (NaN off support) differing at exactly one site. ``branch`` selects the
    update proposal (1: prior, 2: tuned) and is required for update moves.
    """
    move = Move(move)
    q0, w0 = (np.asarray(a) for a in current)
    q1, w1 = (np.asarray(a) for a in candidate)
    q0 = q0.astype(bool)
    q1 = q1.astype(bool)
    same_w = (w0 == w1) | (np.isnan(w0) & np.isnan(w1))
    diff = np.flatnonzero((q0 != q1) | ~same_w)
    if diff.size != 1:
        raise ValueError("current and candidate must differ at exactly one site")
    k = int(diff[0])
    if move is Move.UPDATE and branch not in (1, 2):
        raise ValueError("update moves need branch 1 or 2")
    act = np.flatnonzero(q0)
    chol = ActiveSetCholesky.build(act, w0[act], obs, hp)
    lm = marginal_from_chol(chol, obs, hp, nu_N)
    w_old = None if move is Move.BIRTH else float(w0[k])
    w_new = None if move is Move.DEATH else float(w1[k])
    return _move_log_ratio(chol, lm, k, move, w_old, w_new, branch, obs, hp, nu_N, cfg)[0]


def _site_step(k, q, w, chol, lm, obs, hp, nu_N, cfg, rng, counters=None):
    """One Algorithm-2 move at site k; mutates q, w in place on acceptance."""
    moves = cfg.moves
    sx = hp.amp_std
    lo, hi = cfg.w_bounds[0] * hp.amp_var, cfg.w_bounds[1] * hp.amp_var
    branch = None
    if not q[k]:
        move = Move.BIRTH
        prior, _ = update_proposal_laws(sx, nu_N)
        w_old, w_new = None, gig_sample(prior, rng)
    elif rng.random() < moves.p10:
        move = Move.DEATH
        w_old, w_new = w[k], None
    else:
        move = Move.UPDATE
        w_old = w[k]
        w_new, branch = propose_update_w(w_old, sx, nu_N, rng, moves.update_mix)

    accepted = False
    if w_new is None or lo <= w_new <= hi:
        try:
            log_r, cand, lm_new = _move_log_ratio(chol, lm, k, move, w_old, w_new, branch, obs, hp, nu_N, cfg)
        except NotPositiveDefinite:
            log_r = -math.inf
        if _accept(log_r, rng):
            accepted = True
            chol, lm = cand, lm_new
            q[k] = move is not Move.DEATH
            w[k] = np.nan if move is Move.DEATH else w_new
    if counters is not None:
        counters.tally(move.value, accepted)
    return chol, lm


def rj_site_step(k: int, state: LatentState, obs: Observation, hp: Hyperparams, nu_N: GhParams,
                 cfg: SamplerConfig, rng, counters: Counters | None = None) -> LatentState:
    """Reversible-jump update of (q_k, w_k) with x marginalised.

    Returns a new state; ``x`` is carried over unchanged except that a
    removed atom gets x_k = 0.
    """
    chol = state_factor(state, obs, hp)
    lm = marginal_from_chol(chol, obs, hp, nu_N)
    q, w = state.q.copy(), state.w.copy()
    chol, _ = _site_step(k, q, w, chol, lm, obs, hp, nu_N, cfg, rng, counters)
    x = np.where(q, state.x, 0.0)
    return LatentState(q, x, w, chol)


# ---------------------------------------------------------------- Gibbs blocks


def sample_amplitudes(state: LatentState, obs: Observation, hp: Hyperparams, nu_N: GhParams, rng) -> LatentState:
    """Draw x_active from its Gaussian conditional (no truncation)."""
    chol = state_factor(state, obs, hp)
    x = np.zeros(obs.m)
    if chol.size:
        x[list(chol.active)] = draw_active_amplitudes(chol, obs, hp, nu_N, rng)
    return LatentState(state.q, x, state.w, chol)


def _amp_var_loglik(state: LatentState, amp_var: float, nu_N: GhParams | None) -> float:
    act = state.active
    if act.size == 0:
        return 0.0
    xa = state.x[act]
    if nu_N is None:
        # N+(0, amp_var) on the active amplitudes
        return float(np.sum(math.log(2.0) - 0.5 * (LOG_2PI + math.log(amp_var)) - 0.5 * xa * xa / amp_var))
    wa = state.w[act]
    _, gig = prior_laws(nu_N, amp_var)
    mu = prior_mean(wa, nu_N, amp_var)
    return float(np.sum(gig_logpdf_fast(gig, wa) - 0.5 * (np.log(wa) + (xa - mu) ** 2 / wa)))


def _amp_var_log_prior(amp_var: float, cfg: SamplerConfig) -> float:
    lo, hi = cfg.amp_var_bounds
    if not lo <= amp_var <= hi:
        return -math.inf
    return -math.log(amp_var) if cfg.amp_var_prior == "jeffreys" else 0.0


def sample_amp_var(state: LatentState, hp: Hyperparams, nu_N: GhParams | None, cfg: SamplerConfig, rng,
                   counters: Counters | None = None) -> Hyperparams:
    """Random-walk MH on log amp_var. ``nu_N=None`` selects the truncated-Gaussian prior."""
    cur = hp.amp_var
    prop = cur * math.exp(cfg.amp_var_step * rng.standard_normal())
    lp = _amp_var_log_prior(prop, cfg)
    accepted = False
    if lp > -math.inf:
        log_r = (
            _amp_var_loglik(state, prop, nu_N) - _amp_var_loglik(state, cur, nu_N)
            + lp - _amp_var_log_prior(cur, cfg)
            + math.log(prop / cur)
        )
        accepted = _accept(log_r, rng)
    if counters is not None:
        counters.tally("amp_var", accepted)
    return hp.replace(amp_var=prop) if accepted else hp


def sample_hyperparams(state: LatentState, obs: Observation, hp: Hyperparams, nu_N: GhParams | None,
                       cfg: SamplerConfig, rng, counters: Counters | None = None) -> Hyperparams:
    """Bernoulli probability (Beta), amplitude variance (MH) and optionally
    the noise variance (inverse gamma), given (q, w, x)."""
    m = obs.m
    n_act = int(np.count_nonzero(state.q))
    if cfg.sample_bern_prob:
        p = rng.beta(1.0 + n_act, 1.0 + m - n_act)
        # keep the draw inside the open interval
        p = min(max(p, 1e-300), 1.0 - 1e-16)
        hp = hp.replace(bern_prob=p)
    if cfg.sample_amp_var:
        hp = sample_amp_var(state, hp, nu_N, cfg, rng, counters)
    if cfg.sample_noise_var:
        a0, b0 = cfg.noise_prior
        r = obs.y - obs.H @ state.x
        shape = a0 + 0.5 * obs.n
        rate = b0 + 0.5 * float(r @ r)
        hp = hp.replace(noise_var=rate / rng.gamma(shape))
    return hp


def sample_ir_scale(state: LatentState, obs: Observation, hp: Hyperparams, cfg: SamplerConfig, rng,
                    counters: Counters | None = None, proposal: float | None = None) -> Hyperparams:
    """Random-walk MH on log s with a uniform prior on ``cfg.ir_scale_bounds``.

    ``proposal`` overrides the random-walk draw (used to test the kernel).
    """
    if not obs.is_parametric:
        raise ValueError("impulse-response scale sampling needs a parametric dictionary")
    cur = hp.ir_scale
    prop = cur * math.exp(cfg.ir_scale_step * rng.standard_normal()) if proposal is None else float(proposal)
    lo, hi = cfg.ir_scale_bounds
    accepted = False
    if lo <= prop <= hi:
        obs_cur = obs.with_scale(cur)
        obs_new = obs.with_scale(prop)
        r0 = obs.y - obs_cur.H @ state.x
        r1 = obs.y - obs_new.H @ state.x
        log_r = -0.5 * (r1 @ r1 - r0 @ r0) / hp.noise_var + math.log(prop / cur)
        accepted = _accept(log_r, rng)
    if counters is not None:
        counters.tally("ir_scale", accepted)
    return hp.replace(ir_scale=prop) if accepted else hp


def bgh_iteration(state: LatentState, obs: Observation, hp: Hyperparams, nu_N: GhParams,
                  cfg: SamplerConfig, rng, counters: Counters | None = None) -> tuple[LatentState, Hyperparams]:
    """One sweep of the partially collapsed Gibbs sampler.

    ``obs`` must carry the dictionary for ``hp.ir_scale``; after a scale move
    the caller rebuilds it with ``obs.with_scale(hp.ir_scale)``.
    """
    chol = state_factor(state, obs, hp)
    lm = marginal_from_chol(chol, obs, hp, nu_N)
    q, w = state.q.copy(), state.w.copy()
    sites = rng.permutation(obs.m) if cfg.shuffle_sites else range(obs.m)
    for k in sites:
        chol, lm = _site_step(k, q, w, chol, lm, obs, hp, nu_N, cfg, rng, counters)
    state = sample_amplitudes(LatentState(q, np.zeros(obs.m), w, chol), obs, hp, nu_N, rng)
    hp = sample_hyperparams(state, obs, hp, nu_N, cfg, rng, counters)
    if cfg.sample_ir_scale:
        hp = sample_ir_scale(state, obs, hp, cfg, rng, counters)
    return state, hp


# ---------------------------------------------------------------- BTG baseline


def btg_site_log_odds(residual, h_k, h_norm2: float, hp: Hyperparams):
    """Log posterior odds of q_k = 1 vs 0 and the (mean, variance) of x_k | q_k = 1.

    ``residual`` is y minus the contribution of every other site. Integrating
    the N+(0, amp_var) prior against the Gaussian likelihood gives
    odds = lam/(1-lam) * 2 sqrt(v/amp_var) exp(m^2 / (2v)) Phi(m / sqrt(v)).
    """
    s2 = hp.noise_var
    v = 1.0 / (h_norm2 / s2 + 1.0 / hp.amp_var)
    m = v * float(h_k @ residual) / s2
    sd = math.sqrt(v)
    lam = hp.bern_prob
    log_odds = (
        math.log(lam) - math.log1p(-lam) + math.log(2.0)
        + 0.5 * math.log(v / hp.amp_var) + 0.5 * m * m / v
        + float(special.log_ndtr(m / sd))
    )
    return log_odds, m, v


def btg_iteration(state: LatentState, obs: Observation, hp: Hyperparams, cfg: SamplerConfig, rng,
                  counters: Counters | None = None) -> tuple[LatentState, Hyperparams]:
    """Single-site Gibbs sweep on (q_k, x_k) followed by the hyperparameter steps."""
    H = obs.H
    q = state.q.copy()
    x = state.x.copy()
    e = obs.y - H @ x
    hn2 = np.diag(obs.gram)
    sites = rng.permutation(obs.m) if cfg.shuffle_sites else range(obs.m)
    for k in sites:
        hk = H[:, k]
        if x[k] != 0.0:
            e += x[k] * hk
        log_odds, m, v = btg_site_log_odds(e, hk, hn2[k], hp)
        p1 = 1.0 / (1.0 + math.exp(-log_odds)) if log_odds > -700 else 0.0
        if rng.random() < p1:
            q[k] = True
            x[k] = truncnorm_sample(m, math.sqrt(v), rng)
            e -= x[k] * hk
        else:
            q[k] = False
            x[k] = 0.0
    state = LatentState(q, x, np.full(obs.m, np.nan))
    hp = sample_hyperparams(state, obs, hp, None, cfg, rng, counters)
    if cfg.sample_ir_scale:
        hp = sample_ir_scale(state, obs, hp, cfg, rng, counters)
    return state, hp


# ---------------------------------------------------------------- chains


@dataclass
class Chain:
    """Per-iteration record of one chain (after thinning)."""

    kind: str
    iteration: np.ndarray
    q: np.ndarray
    x: np.ndarray
    bern_prob: np.ndarray
    noise_var: np.ndarray
    amp_var: np.ndarray
    ir_scale: np.ndarray
    accepted: np.ndarray  # cumulative accepted counts per Counters.KEYS
    counters: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.iteration.size

    HEADER_FIXED = ("iteration", "q", "bern_prob", "noise_var", "amp_var", "ir_scale")

    def write(self, path) -> Path:
        """Write the line-delimited record file and a ``.meta.json`` sidecar."""
        path = Path(path)
        m = self.q.shape[1]
        header = list(self.HEADER_FIXED) + [f"acc_{k}" for k in Counters.KEYS] + [f"x{k}" for k in range(m)]
        with path.open("w") as fh:
            fh.write(",".join(header) + "\n")
            for i in range(len(self)):
                bits = "".join("1" if b else "0" for b in self.q[i])
                fields = [str(int(self.iteration[i])), bits]
                fields += [repr(float(v[i])) for v in (self.bern_prob, self.noise_var, self.amp_var, self.ir_scale)]
                fields += [str(int(a)) for a in self.accepted[i]]
                fields += [repr(float(v)) for v in self.x[i]]
                fh.write(",".join(fields) + "\n")
        meta = dict(self.meta, kind=self.kind, counters=self.counters)
        path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2, default=str) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "Chain":
        path = Path(path)
        lines = path.read_text().splitlines()
        header = lines[0].split(",")
        n_fixed = len(cls.HEADER_FIXED)
        n_acc = len(Counters.KEYS)
        rows = [ln.split(",") for ln in lines[1:]]
        m = len(header) - n_fixed - n_acc
        it = np.array([int(r[0]) for r in rows], dtype=int)
        q = np.array([[c == "1" for c in r[1]] for r in rows], dtype=bool).reshape(len(rows), m)
        scal = np.array([[float(v) for v in r[2:n_fixed]] for r in rows]).reshape(len(rows), 4)
        acc = np.array([[int(v) for v in r[n_fixed:n_fixed + n_acc]] for r in rows], dtype=int).reshape(len(rows), n_acc)
        x = np.array([[float(v) for v in r[n_fixed + n_acc:]] for r in rows]).reshape(len(rows), m)
        meta_path = path.with_suffix(".meta.json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        return cls(meta.get("kind", ""), it, q, x, scal[:, 0], scal[:, 1], scal[:, 2], scal[:, 3], acc,
                   meta.get("counters", {}), meta)


def initial_state(m: int, rng=None, inclusion: float = 0.0, *, kind="bgh", nu_N=None, hp=None) -> LatentState:
    """Cold start (all zeros) or an over-dispersed random support.

    With ``inclusion > 0`` each site is switched on with that probability;
    w is drawn from its prior (BGH) and x from the matching amplitude prior.
    """
    state = LatentState.empty(m)
    if inclusion <= 0.0:
        return state
    q = rng.random(m) < inclusion
    state.q = q
    for k in np.flatnonzero(q):
        if SamplerKind(kind) is SamplerKind.BGH:
            _, gig = prior_laws(nu_N, hp.amp_var)
            w = gig_sample(gig, rng)
            state.w[k] = w
            state.x[k] = float(prior_mean(w, nu_N, hp.amp_var)) + math.sqrt(w) * rng.standard_normal()
        else:
            state.x[k] = truncnorm_sample(0.0, hp.amp_std, rng)
    return state


def run_chain(cfg: SamplerConfig, obs: Observation, init: LatentState, kind="bgh", nu_N: GhParams | None = None,
              rng=None, progress=None) -> Chain:
    """Run one chain for ``cfg.iterations`` sweeps and record every ``cfg.thin``-th.

    The stream defaults to ``default_rng(cfg.seed)`` so equal seeds give
    bit-identical chains.
    """
    kind = SamplerKind(kind)
    if kind is SamplerKind.BGH and nu_N is None:
        raise ValueError("the BGH sampler needs the fitted GH parameters nu_N")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    hp = cfg.initial
    if cfg.sample_ir_scale or obs.is_parametric:
        obs = obs.with_scale(hp.ir_scale) if obs.is_parametric else obs
    state = init.copy()
    counters = Counters()
    n_rec = (cfg.iterations + cfg.thin - 1) // cfg.thin
    m = obs.m
    rec_it = np.empty(n_rec, dtype=int)
    rec_q = np.empty((n_rec, m), dtype=bool)
    rec_x = np.empty((n_rec, m))
    rec_theta = np.empty((n_rec, 4))
    rec_acc = np.empty((n_rec, len(Counters.KEYS)), dtype=int)
    j = 0
    for it in range(cfg.iterations):
        if kind is SamplerKind.BGH:
            state, hp = bgh_iteration(state, obs, hp, nu_N, cfg, rng, counters)
        else:
            state, hp = btg_iteration(state, obs, hp, cfg, rng, counters)
        if obs.is_parametric:
            obs = obs.with_scale(hp.ir_scale)
        if it % cfg.thin == 0:
            rec_it[j] = it
            rec_q[j] = state.q
            rec_x[j] = state.x
            rec_theta[j] = (hp.bern_prob, hp.noise_var, hp.amp_var, hp.ir_scale)
            rec_acc[j] = [counters.accepted[k] for k in Counters.KEYS]
            j += 1
        if progress is not None:
            progress(it)
    meta = {"config": cfg.to_dict(), "seed": cfg.seed, "acceptance_rates": counters.rates()}
    if nu_N is not None:
        meta["nu_N"] = asdict(nu_N)
    return Chain(kind.value, rec_it, rec_q, rec_x, rec_theta[:, 0], rec_theta[:, 1], rec_theta[:, 2],
                 rec_theta[:, 3], rec_acc, counters.to_dict(), meta)
