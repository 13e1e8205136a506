"""GIG, GH and positive-truncated normal distributions.

Parameter conventions
---------------------
GIG(lam, gamma, delta) has density on w > 0 proportional to
``w**(lam - 1) * exp(-(delta**2 / w + gamma**2 * w) / 2)``.

GH(lam, alpha, beta, delta, mu) is the normal mean-variance mixture
``X | W ~ N(mu + beta W, W)`` with ``W ~ GIG(lam, sqrt(alpha**2 - beta**2), delta)``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import integrate, optimize

from .specfun import log_bessel_k

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)

#: Upper bound on alpha used by the truncated-normal fit (see ``fit_gh_to_truncated_normal``).
DEFAULT_ALPHA_MAX = 10.0
DEFAULT_DELTA_MIN = 1e-6
DEFAULT_FIT_SEED = 20190601
DEFAULT_FIT_SAMPLES = 1_000_000


class FitError(RuntimeError):
    """Raised when the GH likelihood maximisation makes no progress."""


@dataclass(frozen=True)
class GigParams:
    lam: float
    gamma: float
    delta: float

    def __post_init__(self):
        if not (self.gamma > 0 and self.delta > 0):
            raise ValueError(f"GIG requires gamma > 0 and delta > 0, got {self}")
        if not math.isfinite(self.lam):
            raise ValueError("GIG index must be finite")


@dataclass(frozen=True)
class GhParams:
    lam: float
    alpha: float
    beta: float
    delta: float
    mu: float

    def __post_init__(self):
        if not self.alpha > abs(self.beta):
            raise ValueError(f"GH requires alpha > |beta|, got {self}")
        if not self.delta > 0:
            raise ValueError(f"GH requires delta > 0, got {self}")

    @property
    def gamma(self) -> float:
        # (alpha - beta)(alpha + beta) keeps precision when alpha ~ beta
        return math.sqrt((self.alpha - self.beta) * (self.alpha + self.beta))

    def mixing(self) -> GigParams:
        """The GIG law of the latent variance."""
        return GigParams(self.lam, self.gamma, self.delta)


@dataclass(frozen=True)
class FittedGhApprox:
    nu_N: GhParams
    fit_sample_count: int
    fit_kl_estimate: float
    fit_seed: int | None = None
    alpha_max: float = DEFAULT_ALPHA_MAX

    def to_dict(self) -> dict:
        d = asdict(self.nu_N)
        d.update(
            fit_sample_count=self.fit_sample_count,
            fit_seed=self.fit_seed,
            fit_kl_estimate=self.fit_kl_estimate,
            alpha_max=self.alpha_max,
        )
        return d

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "FittedGhApprox":
        d = json.loads(Path(path).read_text())
        nu = GhParams(d["lam"], d["alpha"], d["beta"], d["delta"], d["mu"])
        return cls(
            nu_N=nu,
            fit_sample_count=int(d["fit_sample_count"]),
            fit_kl_estimate=float(d["fit_kl_estimate"]),
            fit_seed=d.get("fit_seed"),
            alpha_max=float(d.get("alpha_max", DEFAULT_ALPHA_MAX)),
        )


def default_fit_path() -> Path:
    """Location of the fit shipped with the package."""
    return Path(__file__).with_name("data") / "gh_fit.json"


def load_default_fit() -> FittedGhApprox:
    return FittedGhApprox.load(default_fit_path())


# ---------------------------------------------------------------- GIG


def _gig_log_norm(lam, gamma, delta):
    # log of (gamma/delta)^lam / (2 K_lam(delta gamma)), kept in log domain
    return lam * (math.log(gamma) - math.log(delta)) - math.log(2.0) - log_bessel_k(lam, delta * gamma)


def gig_log_pdf(params: GigParams, w):
    """Log density of GIG(params) at ``w`` (scalar or array, all > 0)."""
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise ValueError("gig_log_pdf: w must be strictly positive")
    lam, g, d = params.lam, params.gamma, params.delta
    out = _gig_log_norm(lam, g, d) + (lam - 1.0) * np.log(w) - 0.5 * (d * d / w + g * g * w)
    return out[()] if out.ndim == 0 else out


def gig_moment(params: GigParams, p: float) -> float:
    """E[W**p] = (delta/gamma)**p K_{lam+p}(delta gamma) / K_lam(delta gamma)."""
    if p == 0:
        return 1.0
    lam, g, d = params.lam, params.gamma, params.delta
    z = d * g
    return math.exp(p * (math.log(d) - math.log(g)) + log_bessel_k(lam + p, z) - log_bessel_k(lam, z))


class _StandardGig:
    """Devroye's (2014) rejection sampler for the density
    ``x**(lam-1) exp(-omega (x + 1/x) / 2)`` with lam >= 0.

    Works on t = log x with a piecewise uniform/exponential hat; the
    expected number of trials is bounded uniformly in (lam, omega).
    """

    def __init__(self, lam: float, omega: float):
        self.lam = lam
        self.omega = omega
        alpha = math.sqrt(omega * omega + lam * lam) - lam
        self.alpha = alpha
        psi, dpsi = self._psi, self._dpsi

        x = -psi(1.0)
        if 0.5 <= x <= 2.0:
            t = 1.0
        elif x > 2.0:
            t = math.sqrt(2.0 / (alpha + lam))
        else:
            t = math.log(4.0 / (alpha + 2.0 * lam))

        x = -psi(-1.0)
        if 0.5 <= x <= 2.0:
            s = 1.0
        elif x > 2.0:
            s = math.sqrt(4.0 / (alpha * math.cosh(1.0) + lam))
        else:
            if alpha == 0.0:
                s = 1.0 / lam
            else:
                s = math.log(1.0 + 1.0 / alpha + math.sqrt(1.0 / alpha**2 + 2.0 / alpha))
                if lam > 0.0:
                    s = min(1.0 / lam, s)

        eta, zeta = -psi(t), -dpsi(t)
        theta, xi = -psi(-s), dpsi(-s)
        self.t, self.s = t, s
        self.eta, self.zeta, self.theta, self.xi = eta, zeta, theta, xi
        self.p, self.r = 1.0 / xi, 1.0 / zeta
        self.td = t - self.r * eta
        self.sd = s - self.p * theta
        self.q = self.td + self.sd
        self.total = self.p + self.q + self.r
        # maps the log-scale variate back to the symmetric parameterisation
        self.scale = lam / omega + math.sqrt(1.0 + (lam / omega) ** 2)

    def _psi(self, x):
        return -self.alpha * (math.cosh(x) - 1.0) - self.lam * (math.exp(x) - x - 1.0)

    def _dpsi(self, x):
        return -self.alpha * math.sinh(x) - self.lam * (math.exp(x) - 1.0)

    def draw(self, rng) -> float:
        q, r, p, td, sd = self.q, self.r, self.p, self.td, self.sd
        while True:
            u, v, w = rng.random(3)
            u *= self.total
            if u < q:
                x = -sd + q * v
                hat = 1.0
            elif u < q + r:
                x = td - r * math.log(v)
                hat = math.exp(-self.eta - self.zeta * (x - self.t))
            else:
                x = -sd + p * math.log(v)
                hat = math.exp(-self.theta + self.xi * (x + self.s))
            if w * hat <= math.exp(self._psi(x)):
                return math.exp(x) * self.scale


@lru_cache(maxsize=256)
def _standard_gig(lam: float, omega: float) -> _StandardGig:
    return _StandardGig(lam, omega)


def gig_sample(params: GigParams, rng, size=None):
    """Exact GIG draw(s).

    Uses the scale identity GIG(lam, g, d) = (d/g) * GIG(lam, w, w) with
    w = d g, and 1/X for negative index.
    """
    lam, g, d = params.lam, params.gamma, params.delta
    sampler = _standard_gig(abs(lam), d * g)
    scale = d / g
    flip = lam < 0
    if size is None:
        x = sampler.draw(rng)
        return scale / x if flip else scale * x
    n = int(np.prod(size))
    out = np.fromiter((sampler.draw(rng) for _ in range(n)), dtype=float, count=n)
    out = scale / out if flip else scale * out
    return out.reshape(size)


# ---------------------------------------------------------------- GH


def gh_log_pdf(params: GhParams, x):
    """Log density of GH(params), vectorised over ``x``."""
    x = np.asarray(x, dtype=float)
    lam, a, b, d, mu = params.lam, params.alpha, params.beta, params.delta, params.mu
    g = params.gamma
    dx = x - mu
    qd = np.hypot(d, dx)
    out = (
        lam * (math.log(g) - math.log(d))
        - 0.5 * LOG_2PI
        - log_bessel_k(lam, d * g)
        + log_bessel_k(lam - 0.5, a * qd)
        + (lam - 0.5) * (np.log(qd) - math.log(a))
        + b * dx
    )
    return out[()] if np.ndim(out) == 0 else out


def gh_sample(params: GhParams, rng, size=None):
    """Hierarchical draw: W from the GIG mixing law, then N(mu + beta W, W)."""
    w = gig_sample(params.mixing(), rng, size)
    z = rng.standard_normal(size)
    return params.mu + params.beta * w + np.sqrt(w) * z


def gh_affine(params: GhParams, a: float, b: float = 0.0) -> GhParams:
    """Parameters of a X + b for X ~ GH(params).

    For a > 0 this is GH(lam, alpha/a, beta/a, a delta, a mu + b); a negative
    ``a`` mirrors the skewness, which the |a| form handles.
    """
    if a == 0:
        raise ValueError("gh_affine: a must be nonzero")
    s = abs(a)
    return GhParams(params.lam, params.alpha / s, params.beta / a, params.delta * s, params.mu * a + b)


def scale_gh_prior(nu_N: GhParams, sigma_x: float) -> tuple[GhParams, GigParams]:
    """GH_N(sigma_x**2) and its mixing law GIG_N(sigma_x**2)."""
    if not sigma_x > 0:
        raise ValueError("sigma_x must be positive")
    gh = gh_affine(nu_N, sigma_x, 0.0)
    gig = GigParams(nu_N.lam, nu_N.gamma / sigma_x, nu_N.delta * sigma_x)
    return gh, gig


# ---------------------------------------------------------------- truncated normal


def _truncnorm_std(a: float, rng) -> float:
    """Standard normal restricted to [a, inf)."""
    if a < 0.5:
        while True:
            z = rng.standard_normal()
            if z >= a:
                return z
    # Robert (1995) translated-exponential proposal with the optimal rate
    rate = 0.5 * (a + math.sqrt(a * a + 4.0))
    while True:
        z = a - math.log(rng.random()) / rate
        if math.log(rng.random()) <= -0.5 * (z - rate) ** 2:
            return z


def truncnorm_sample(mean: float, std: float, rng, size=None):
    """Draw(s) from N(mean, std**2) restricted to [0, inf)."""
    if not std > 0:
        raise ValueError("truncnorm_sample: std must be positive")
    a = -mean / std
    if size is None:
        return mean + std * _truncnorm_std(a, rng)
    n = int(np.prod(size))
    z = np.fromiter((_truncnorm_std(a, rng) for _ in range(n)), dtype=float, count=n)
    return (mean + std * z).reshape(size)


def half_normal_log_pdf(x):
    """Log density of N+(0, 1); -inf below zero."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(x >= 0, 0.5 * math.log(2.0 / math.pi) - 0.5 * x * x, -np.inf)


# ---------------------------------------------------------------- fit to N+(0, 1)


def _pack(p: GhParams) -> np.ndarray:
    return np.array([p.lam, math.log(p.alpha), math.atanh(p.beta / p.alpha), math.log(p.delta), p.mu])


def _unpack(t) -> GhParams:
    lam, log_a, tb, log_d, mu = (float(v) for v in t)
    a = math.exp(log_a)
    return GhParams(lam, a, a * math.tanh(tb), math.exp(log_d), mu)


def _moment_init(alpha_max: float) -> GhParams:
    """GH with lam = 1, delta = 0.5 matching mean, variance and skewness of N+(0, 1)."""
    m1 = math.sqrt(2.0 / math.pi)
    var = 1.0 - 2.0 / math.pi
    skew = math.sqrt(2.0) * (4.0 - math.pi) / (math.pi - 2.0) ** 1.5
    lam, delta = 1.0, 0.5

    def moments(t):
        a = min(math.exp(t[0]), alpha_max)
        b = a * math.tanh(t[1])
        gig = GigParams(lam, math.sqrt((a - b) * (a + b)), delta)
        e1, e2, e3 = (gig_moment(gig, k) for k in (1, 2, 3))
        vw = e2 - e1 * e1
        k3w = e3 - 3 * e1 * e2 + 2 * e1**3
        v = e1 + b * b * vw
        k3 = 3 * b * vw + b**3 * k3w
        return a, b, e1, v, k3 / v**1.5

    def resid(t):
        _, _, _, v, sk = moments(t)
        return [math.log(v / var), sk - skew]

    sol = optimize.least_squares(resid, [math.log(2.0), 0.5])
    a, b, e1, _, _ = moments(sol.x)
    return GhParams(lam, a, b, delta, m1 - b * e1)


def kl_truncated_normal(params: GhParams) -> float:
    """KL(N+(0,1) || GH(params)) in nats, by adaptive quadrature."""

    def integrand(x):
        lp = 0.5 * math.log(2.0 / math.pi) - 0.5 * x * x
        return math.exp(lp) * (lp - float(gh_log_pdf(params, x)))

    val, _ = integrate.quad(integrand, 0.0, 40.0, points=[0.5, 1.0, 2.0, 4.0], limit=200, epsabs=1e-12)
    return val


def fit_gh_to_truncated_normal(
    sample_count: int = DEFAULT_FIT_SAMPLES,
    rng=None,
    *,
    seed: int | None = None,
    alpha_max: float = DEFAULT_ALPHA_MAX,
    delta_min: float = DEFAULT_DELTA_MIN,
) -> FittedGhApprox:
    """Maximum-likelihood GH fit to draws from N+(0, 1).

    The likelihood has no interior maximiser: it keeps increasing towards
    alpha, beta -> inf, delta -> 0 (a gamma-type limit). The search is
    therefore restricted to ``alpha <= alpha_max`` and ``delta >= delta_min``.

    Parameters
    ----------
    sample_count : int
        Number of N+(0, 1) draws; at least 10**4.
    rng : numpy.random.Generator, optional
        Stream for the draws. Built from ``seed`` when omitted.
    """
    if sample_count < 10_000:
        raise ValueError("fit_gh_to_truncated_normal needs at least 10**4 samples")
    if rng is None:
        seed = DEFAULT_FIT_SEED if seed is None else seed
        rng = np.random.default_rng(seed)
    s = np.abs(rng.standard_normal(sample_count))

    def nll(t):
        try:
            p = _unpack(t)
        except ValueError:
            return 1e10
        v = gh_log_pdf(p, s)
        if not np.all(np.isfinite(v)):
            return 1e10
        return -float(np.mean(v))

    init = _moment_init(alpha_max)
    t0 = _pack(init)
    f0 = nll(t0)
    bounds = [(-30.0, 30.0), (None, math.log(alpha_max)), (-8.0, 8.0), (math.log(delta_min), 5.0), (-5.0, 5.0)]
    res = optimize.minimize(nll, t0, method="L-BFGS-B", bounds=bounds, options=dict(maxiter=2000, ftol=1e-14, gtol=1e-9))
    if not res.fun < f0:
        raise FitError(f"GH likelihood did not improve on the initialisation ({res.message})")
    nu = _unpack(res.x)
    kl = kl_truncated_normal(nu)
    logger.info("GH fit: %s, mean log-lik %.6f, KL %.5f", nu, -res.fun, kl)
    return FittedGhApprox(nu, sample_count, kl, seed, alpha_max)
