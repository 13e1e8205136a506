"""Observation model, BGH prior and the x-marginalised posterior.

The amplitudes of active atoms satisfy ``x_k | w_k ~ N(mu_k, w_k)`` with
``mu_k = sigma_x mu_N + (beta_N / sigma_x) w_k`` and ``w_k ~ GIG_N(sigma_x**2)``.
Integrating them out gives ``y | q, w ~ N(Hbar mu, s2 I + Hbar W Hbar^T)``. All
evaluations of that density go through the Cholesky factor ``R`` of the
L x L precision ``P = Hbar^T Hbar / s2 + W^{-1}``:

    log|S|     = N log s2 + sum(log w) + 2 sum(log diag R)
    r^T S^-1 r = |r|^2 / s2 - |R^{-1} Hbar^T r|^2 / s2**2,   r = y - Hbar mu
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.linalg.blas import dtrsv as _dtrsv

from .distributions import GhParams, GigParams, scale_gh_prior
from .specfun import log_bessel_k

LOG_2PI = math.log(2.0 * math.pi)


class NotPositiveDefinite(np.linalg.LinAlgError):
    """A Cholesky update met a non-positive pivot."""


# ---------------------------------------------------------------- dictionary


def impulse_response(s: float, length: int) -> np.ndarray:
    """h_n = s^2 / (s^2 + n^2) for n = -(length-1)/2 .. (length-1)/2."""
    if length < 1 or length % 2 == 0:
        raise ValueError(f"impulse response length must be odd and positive, got {length}")
    if not s > 0:
        raise ValueError(f"impulse response scale must be positive, got {s}")
    half = (length - 1) // 2
    n = np.arange(-half, half + 1, dtype=float)
    return s * s / (s * s + n * n)


def build_dictionary(ir, signal_length: int) -> np.ndarray:
    """Full-convolution matrix of shape (signal_length + len(ir) - 1, signal_length)."""
    if signal_length < 1:
        raise ValueError("signal_length must be positive")
    ir = np.asarray(ir, dtype=float)
    return linalg.convolution_matrix(ir, signal_length, mode="full")


# ---------------------------------------------------------------- records


@dataclass(frozen=True, eq=False)
class Observation:
    """Data vector ``y`` and dictionary ``H``.

    When built with :meth:`parametric`, ``ir_scale``/``ir_length`` record the
    impulse response that generated ``H`` and :meth:`with_scale` rebuilds it.
    """

    y: np.ndarray
    H: np.ndarray
    ir_scale: float | None = None
    ir_length: int | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        H = np.asarray(self.H, dtype=float)
        if y.ndim != 1 or H.ndim != 2 or H.shape[0] != y.size or y.size < 1 or H.shape[1] < 1:
            raise ValueError(f"incompatible shapes y{y.shape}, H{H.shape}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "H", H)

    @classmethod
    def parametric(cls, y, s: float, ir_length: int) -> "Observation":
        y = np.asarray(y, dtype=float)
        m = y.size - ir_length + 1
        if m < 1:
            raise ValueError("observation shorter than the impulse response")
        return cls(y, build_dictionary(impulse_response(s, ir_length), m), float(s), int(ir_length))

    @property
    def is_parametric(self) -> bool:
        return self.ir_scale is not None

    def with_scale(self, s: float) -> "Observation":
        if not self.is_parametric:
            raise ValueError("dictionary is not parametric")
        if s == self.ir_scale:
            return self
        return Observation.parametric(self.y, s, self.ir_length)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def m(self) -> int:
        return self.H.shape[1]

    @cached_property
    def gram(self) -> np.ndarray:
        return self.H.T @ self.H

    @cached_property
    def hty(self) -> np.ndarray:
        return self.H.T @ self.y

    @cached_property
    def yy(self) -> float:
        return float(self.y @ self.y)


@dataclass(frozen=True)
class Hyperparams:
    bern_prob: float
    noise_var: float
    amp_var: float
    ir_scale: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.bern_prob < 1.0:
            raise ValueError(f"bern_prob must lie in (0, 1), got {self.bern_prob}")
        if not (self.noise_var > 0 and self.amp_var > 0 and self.ir_scale > 0):
            raise ValueError(f"variances and scale must be positive: {self}")

    @property
    def amp_std(self) -> float:
        return math.sqrt(self.amp_var)

    def replace(self, **kw) -> "Hyperparams":
        return replace(self, **kw)


@lru_cache(maxsize=1024)
def _gig_log_norm(lam: float, gamma: float, delta: float) -> float:
    return lam * (math.log(gamma) - math.log(delta)) - math.log(2.0) - float(log_bessel_k(lam, delta * gamma))


def prior_laws(nu_N: GhParams, amp_var: float) -> tuple[GhParams, GigParams]:
    """GH_N(amp_var) and GIG_N(amp_var)."""
    return scale_gh_prior(nu_N, math.sqrt(amp_var))


def gig_logpdf_fast(params: GigParams, w):
    """``gig_log_pdf`` with a memoised normalising constant (sampler hot path)."""
    lam, g, d = params.lam, params.gamma, params.delta
    if isinstance(w, float):
        return _gig_log_norm(lam, g, d) + (lam - 1.0) * math.log(w) - 0.5 * (d * d / w + g * g * w)
    return _gig_log_norm(lam, g, d) + (lam - 1.0) * np.log(w) - 0.5 * (d * d / w + g * g * w)


def prior_mean(w, nu_N: GhParams, amp_var: float):
    """Conditional mean of x_k given w_k: sigma_x mu_N + (beta_N / sigma_x) w_k."""
    sx = math.sqrt(amp_var)
    return sx * nu_N.mu + (nu_N.beta / sx) * np.asarray(w, dtype=float)


def log_bernoulli(n_active: int, m: int, p: float) -> float:
    return n_active * math.log(p) + (m - n_active) * math.log1p(-p)


# ---------------------------------------------------------------- Cholesky cache


def _trsv_lower(R: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve R v = b for lower-triangular R (BLAS trsv, no argument checking)."""
    return _dtrsv(R, b, lower=1)


def _chol_rank1(R: np.ndarray, x: np.ndarray, sign: float, start: int = 0) -> None:
    """In-place R R^T +- x x^T for lower-triangular R, touching rows >= start."""
    n = R.shape[0]
    for k in range(start, n):
        rkk = R[k, k]
        xk = x[k]
        r2 = rkk * rkk + sign * xk * xk
        if not r2 > 0:
            raise NotPositiveDefinite("rank-one downdate lost positive definiteness")
        r = math.sqrt(r2)
        c = r / rkk
        s = xk / rkk
        R[k, k] = r
        if k + 1 < n:
            col = R[k + 1 :, k]
            col += sign * s * x[k + 1 :]
            col /= c
            x[k + 1 :] *= c
            x[k + 1 :] -= s * col


@dataclass(frozen=True, eq=False)
class ActiveSetCholesky:
    """Lower Cholesky factor of P = Hbar^T Hbar / noise_var + diag(1/w).

    ``active`` lists atom indices in factor order; ``gram_aa`` is the matching
    block of H^T H. Instances are treated as values: the modifying methods
    return new objects so a rejected proposal leaves the original untouched.
    """

    active: tuple
    w: np.ndarray
    factor: np.ndarray
    gram_aa: np.ndarray
    noise_var: float
    ir_scale: float | None = None

    @property
    def size(self) -> int:
        return len(self.active)

    @classmethod
    def empty(cls, noise_var: float, ir_scale=None) -> "ActiveSetCholesky":
        z = np.zeros((0, 0))
        return cls((), np.zeros(0), z, z, noise_var, ir_scale)

    @classmethod
    def build(cls, active, w, obs: Observation, hp: Hyperparams) -> "ActiveSetCholesky":
        """Factor from scratch (dense)."""
        active = tuple(int(k) for k in active)
        w = np.asarray(w, dtype=float).copy()
        idx = list(active)
        g = obs.gram[np.ix_(idx, idx)]
        prec = g / hp.noise_var + np.diag(1.0 / w)
        try:
            factor = np.linalg.cholesky(prec) if idx else np.zeros((0, 0))
        except np.linalg.LinAlgError as e:
            raise NotPositiveDefinite(str(e)) from None
        return cls(active, w, factor, g, hp.noise_var, obs.ir_scale)

    def precision(self) -> np.ndarray:
        return self.factor @ self.factor.T

    def position(self, k: int) -> int:
        try:
            return self.active.index(k)
        except ValueError:
            raise IndexError(f"atom {k} is not active") from None

    def matches(self, obs: Observation, hp: Hyperparams) -> bool:
        return self.noise_var == hp.noise_var and self.ir_scale == obs.ir_scale

    def insert(self, k: int, w_k: float, obs: Observation, hp: Hyperparams) -> "ActiveSetCholesky":
        if k in self.active:
            raise ValueError(f"atom {k} already active")
        if not w_k > 0:
            raise NotPositiveDefinite("w_k must be positive")
        n = self.size
        s2 = hp.noise_var
        g_col = obs.gram[list(self.active), k] if n else np.zeros(0)
        g_kk = obs.gram[k, k]
        if n:
            ell = _trsv_lower(self.factor, g_col / s2)
        else:
            ell = np.zeros(0)
        d2 = g_kk / s2 + 1.0 / w_k - ell @ ell
        if not d2 > 0:
            raise NotPositiveDefinite("insertion pivot is not positive")
        R = np.zeros((n + 1, n + 1))
        R[:n, :n] = self.factor
        R[n, :n] = ell
        R[n, n] = math.sqrt(d2)
        G = np.empty((n + 1, n + 1))
        G[:n, :n] = self.gram_aa
        G[n, :n] = G[:n, n] = g_col
        G[n, n] = g_kk
        return ActiveSetCholesky(self.active + (k,), np.append(self.w, w_k), R, G, s2, obs.ir_scale)

    def remove(self, k: int) -> "ActiveSetCholesky":
        j = self.position(k)
        keep = [i for i in range(self.size) if i != j]
        R = self.factor[np.ix_(keep, keep)].copy()
        # rows below j lose their coupling through column j: rank-one update of the trailing block
        x = self.factor[j + 1 :, j].copy()
        if x.size:
            _chol_rank1(R, np.concatenate([np.zeros(j), x]), 1.0, start=j)
        G = self.gram_aa[np.ix_(keep, keep)]
        active = self.active[:j] + self.active[j + 1 :]
        return ActiveSetCholesky(active, self.w[keep], R, G, self.noise_var, self.ir_scale)

    def update_w(self, k: int, w_new: float) -> "ActiveSetCholesky":
        if not w_new > 0:
            raise NotPositiveDefinite("w must be positive")
        j = self.position(k)
        delta = 1.0 / w_new - 1.0 / self.w[j]
        R = self.factor.copy()
        if delta != 0.0:
            x = np.zeros(self.size)
            x[j] = math.sqrt(abs(delta))
            _chol_rank1(R, x, 1.0 if delta > 0 else -1.0, start=j)
        w = self.w.copy()
        w[j] = w_new
        return ActiveSetCholesky(self.active, w, R, self.gram_aa, self.noise_var, self.ir_scale)


def chol_insert(chol: ActiveSetCholesky, k: int, w_k: float, obs: Observation, hp: Hyperparams) -> ActiveSetCholesky:
    return chol.insert(k, w_k, obs, hp)


def chol_remove(chol: ActiveSetCholesky, k: int) -> ActiveSetCholesky:
    return chol.remove(k)


def chol_update_w(chol: ActiveSetCholesky, k: int, w_new: float) -> ActiveSetCholesky:
    return chol.update_w(k, w_new)


# ---------------------------------------------------------------- state


@dataclass
class LatentState:
    """Sampler state: indicators ``q``, amplitudes ``x`` and mixing variances ``w``.

    ``w`` is NaN wherever ``q`` is zero. ``chol`` is the BGH factor cache; the
    truncated-Gaussian sampler leaves it as ``None``.
    """

    q: np.ndarray
    x: np.ndarray
    w: np.ndarray
    chol: ActiveSetCholesky | None = field(default=None, repr=False)

    @classmethod
    def empty(cls, m: int) -> "LatentState":
        return cls(np.zeros(m, dtype=bool), np.zeros(m), np.full(m, np.nan))

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(self.q)

    def copy(self) -> "LatentState":
        return LatentState(self.q.copy(), self.x.copy(), self.w.copy(), self.chol)

    def check(self, with_w: bool = True) -> None:
        """Raise AssertionError when the support invariants are broken."""
        q = self.q.astype(bool)
        assert np.all(self.x[~q] == 0.0), "x nonzero off the support"
        if with_w:
            assert np.all(np.isnan(self.w[~q])), "w defined off the support"
            assert np.all(self.w[q] > 0), "w not positive on the support"
        if self.chol is not None:
            assert sorted(self.chol.active) == list(np.flatnonzero(q)), "Cholesky cache out of sync"


def state_factor(state: LatentState, obs: Observation, hp: Hyperparams) -> ActiveSetCholesky:
    """The state's cached factor, rebuilt when missing or stale."""
    chol = state.chol
    if chol is None or not chol.matches(obs, hp):
        act = state.active
        chol = ActiveSetCholesky.build(act, state.w[act], obs, hp)
    return chol


# ---------------------------------------------------------------- densities


def gaussian_marginal_loglik(chol: ActiveSetCholesky, obs: Observation, hp: Hyperparams, nu_N: GhParams) -> float:
    """log N(y; Hbar mu, s2 I + Hbar W Hbar^T) evaluated through ``chol``."""
    s2 = hp.noise_var
    n = obs.n
    if chol.size == 0:
        return -0.5 * (n * (LOG_2PI + math.log(s2)) + obs.yy / s2)
    idx = list(chol.active)
    mu = prior_mean(chol.w, nu_N, hp.amp_var)
    c = obs.hty[idx]
    gm = chol.gram_aa @ mu
    rr = obs.yy - 2.0 * (mu @ c) + mu @ gm
    v = _trsv_lower(chol.factor, c - gm)
    quad = rr / s2 - (v @ v) / (s2 * s2)
    logdet = n * math.log(s2) + np.sum(np.log(chol.w)) + 2.0 * np.sum(np.log(np.diag(chol.factor)))
    return -0.5 * (n * LOG_2PI + logdet + quad)


def marginal_from_chol(chol: ActiveSetCholesky, obs: Observation, hp: Hyperparams, nu_N: GhParams) -> float:
    """log p(y, q, w | theta) for the support and variances held in ``chol``."""
    _, gig = prior_laws(nu_N, hp.amp_var)
    val = gaussian_marginal_loglik(chol, obs, hp, nu_N) + log_bernoulli(chol.size, obs.m, hp.bern_prob)
    if chol.size:
        val += float(np.sum(gig_logpdf_fast(gig, chol.w)))
    return val


def _support_w(q, w):
    q = np.asarray(q).astype(bool)
    w = np.asarray(w, dtype=float)
    act = np.flatnonzero(q)
    wa = w[act] if w.size == q.size else w
    if wa.size != act.size:
        raise ValueError("w must be given on the support of q (or as a full-length vector)")
    if np.any(~(wa > 0)):
        raise ValueError("w must be positive on the support")
    return act, wa


def log_marginal(q, w, obs: Observation, hp: Hyperparams, nu_N: GhParams) -> float:
    """x-marginalised log p(y, q, w | theta), excluding the hyperprior.

    ``w`` is either the full-length vector (NaN off support allowed) or the
    values on the support in ascending index order.
    """
    act, wa = _support_w(q, w)
    chol = ActiveSetCholesky.build(act, wa, obs, hp)
    return marginal_from_chol(chol, obs, hp, nu_N)


def log_joint(state: LatentState, obs: Observation, hp: Hyperparams, nu_N: GhParams) -> float:
    """log p(y | q, x) + log P(q) + sum over active atoms of log p(w_k) + log p(x_k | w_k)."""
    s2 = hp.noise_var
    r = obs.y - obs.H @ state.x
    val = -0.5 * (obs.n * (LOG_2PI + math.log(s2)) + (r @ r) / s2)
    act = state.active
    val += log_bernoulli(act.size, obs.m, hp.bern_prob)
    if act.size:
        _, gig = prior_laws(nu_N, hp.amp_var)
        w = state.w[act]
        xa = state.x[act]
        mu = prior_mean(w, nu_N, hp.amp_var)
        val += float(np.sum(gig_logpdf_fast(gig, w)))
        val += float(np.sum(-0.5 * (LOG_2PI + np.log(w) + (xa - mu) ** 2 / w)))
    return val


def conditional_amplitude_params(state: LatentState, obs: Observation, hp: Hyperparams, nu_N: GhParams):
    """Mean ``eta`` and lower Cholesky factor of the covariance Gamma of x_active | q, w, y.

    Gamma = (Hbar^T Hbar / s2 + W^-1)^-1 and
    eta = Gamma (Hbar^T y / s2 + W^-1 mu).
    """
    chol = state_factor(state, obs, hp)
    if chol.size == 0:
        raise ValueError("conditional amplitudes need at least one active atom")
    eta = _posterior_mean(chol, obs, hp, nu_N)
    gamma = linalg.cho_solve((chol.factor, True), np.eye(chol.size))
    return eta, np.linalg.cholesky(gamma)


def _posterior_mean(chol: ActiveSetCholesky, obs: Observation, hp: Hyperparams, nu_N: GhParams) -> np.ndarray:
    mu = prior_mean(chol.w, nu_N, hp.amp_var)
    rhs = obs.hty[list(chol.active)] / hp.noise_var + mu / chol.w
    return linalg.cho_solve((chol.factor, True), rhs, check_finite=False)


def draw_active_amplitudes(chol: ActiveSetCholesky, obs: Observation, hp: Hyperparams, nu_N: GhParams, rng) -> np.ndarray:
    """x_active ~ N(eta, Gamma) using R^-T z for the fluctuation."""
    eta = _posterior_mean(chol, obs, hp, nu_N)
    z = rng.standard_normal(chol.size)
    return eta + linalg.solve_triangular(chol.factor, z, lower=True, trans="T", check_finite=False)


# ---------------------------------------------------------------- I/O


def write_vector_csv(path, v) -> None:
    np.savetxt(path, np.asarray(v, dtype=float), fmt="%.17g")


def read_vector_csv(path) -> np.ndarray:
    return np.atleast_1d(np.loadtxt(path, dtype=float, delimiter=","))


def read_matrix_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, dtype=float, delimiter=","))


def load_observation(y_path, *, dictionary_path=None, ir_scale=None, ir_length=None) -> Observation:
    """Read ``y`` from CSV and either load ``H`` or regenerate it from (s, L_h)."""
    y = read_vector_csv(Path(y_path))
    if dictionary_path is not None:
        return Observation(y, read_matrix_csv(dictionary_path))
    if ir_scale is None or ir_length is None:
        raise ValueError("need a dictionary file or (ir_scale, ir_length)")
    return Observation.parametric(y, ir_scale, ir_length)
