import math

import numpy as np
import pytest
from scipy import integrate, stats

from bghdecon import samplers as S
from bghdecon.distributions import GhParams, scale_gh_prior
from bghdecon.model import (
    ActiveSetCholesky,
    Hyperparams,
    LatentState,
    Observation,
    build_dictionary,
    conditional_amplitude_params,
    marginal_from_chol,
    prior_mean,
)
from bghdecon.samplers import (
    Chain,
    Move,
    MoveProbabilities,
    SamplerConfig,
    acceptance_log_ratio,
    btg_site_log_odds,
    initial_state,
    propose_update_w,
    rj_site_step,
    run_chain,
    sample_amp_var,
    sample_amplitudes,
    sample_hyperparams,
    sample_ir_scale,
    update_proposal_laws,
)
from bghdecon.simulation import Scenario, generate_scenario
from oracles import (
    TINY_AMP_VAR,
    TINY_BERN_PROB,
    TINY_BGH_POSTERIOR,
    TINY_BTG_POSTERIOR,
    TINY_IR,
    TINY_NOISE_VAR,
    TINY_NU,
    TINY_Y,
    batch_means_chi2,
    bgh_support_posterior,
    btg_support_posterior,
    gaussian_marginal_oracle,
    integrate_positive,
    support_labels,
)

NU = GhParams(1.5875, 10.0, 8.07, 1.3e-4, 0.059)
NU_SOFT = GhParams(*TINY_NU)


def scipy_gig_logpdf(amp_var, nu):
    """GIG_N(amp_var) log-density from scipy's geninvgauss (independent of the package)."""
    sx = math.sqrt(amp_var)
    gamma = math.sqrt(nu.alpha**2 - nu.beta**2) / sx
    delta = nu.delta * sx
    law = stats.geninvgauss(nu.lam, delta * gamma, scale=delta / gamma)
    return law.logpdf


def random_problem(seed, n=12, m=6, noise_var=0.3, amp_var=1.7, bern_prob=0.3):
    rng = np.random.default_rng(seed)
    return rng, Observation(rng.standard_normal(n), rng.standard_normal((n, m))), Hyperparams(bern_prob, noise_var, amp_var)


def cfg_for(hp, **kw):
    return SamplerConfig(iterations=10, initial=hp, **kw)


def tiny_problem():
    obs = Observation(np.array(TINY_Y), build_dictionary(list(TINY_IR), 3))
    hp = Hyperparams(TINY_BERN_PROB, TINY_NOISE_VAR, TINY_AMP_VAR)
    return obs, hp


# ---------------------------------------------------------------- configuration


def test_move_probabilities():
    mp = MoveProbabilities()
    assert (mp.p01, mp.p10, mp.p11) == (1.0, 0.5, 0.5)
    with pytest.raises(ValueError):
        MoveProbabilities(p01=0.5)
    with pytest.raises(ValueError):
        MoveProbabilities(p10=1.5)
    with pytest.raises(ValueError):
        MoveProbabilities(update_mix=-0.1)


@pytest.mark.parametrize(
    "kw",
    [dict(iterations=0), dict(burn_in=10), dict(thin=0), dict(amp_var_step=0.0), dict(amp_var_prior="gamma")],
)
def test_config_validation(kw):
    args = dict(iterations=10, initial=Hyperparams(0.1, 1.0, 1.0))
    args.update(kw)
    with pytest.raises(ValueError):
        SamplerConfig(**args)


def test_config_defaults():
    cfg = SamplerConfig(iterations=5, initial=Hyperparams(0.1, 1.0, 1.0))
    assert not cfg.sample_noise_var and cfg.sample_amp_var and cfg.sample_bern_prob
    assert cfg.ir_scale_bounds == (0.5, 10.0)
    assert cfg.to_dict()["moves"]["p10"] == 0.5


# ---------------------------------------------------------------- proposals and MHG ratios


def test_update_proposal_laws():
    sx = 1.7
    prior, tuned = update_proposal_laws(sx, NU)
    _, gig = scale_gh_prior(NU, sx)
    assert (prior.lam, prior.gamma, prior.delta) == pytest.approx((gig.lam, gig.gamma, gig.delta), rel=1e-14)
    assert tuned.lam == pytest.approx(NU.lam - 0.5)
    assert tuned.gamma == pytest.approx(NU.alpha / sx, rel=1e-12)  # gamma^2 + beta^2 = alpha^2
    assert tuned.delta == pytest.approx(sx * math.hypot(NU.delta, NU.mu), rel=1e-14)


def test_update_branch_frequencies():
    rng = np.random.default_rng(0)
    branches = [propose_update_w(1.0, 1.0, NU, rng, mix=0.3)[1] for _ in range(4000)]
    assert np.mean(np.array(branches) == 1) == pytest.approx(0.3, abs=0.03)


def _full(m, active, vals):
    w = np.full(m, np.nan)
    w[list(active)] = vals
    q = ~np.isnan(w)
    return q, w


def _log_target(q, w, obs, hp, nu):
    return gaussian_marginal_oracle(q, w, obs.H, obs.y, hp.noise_var, hp.amp_var, nu, hp.bern_prob,
                                    scipy_gig_logpdf(hp.amp_var, nu))


@pytest.mark.parametrize("seed", range(6))
def test_log_ratio_against_dense_oracle(seed):
    rng, obs, hp = random_problem(seed)
    nu = NU_SOFT
    cfg = cfg_for(hp)
    prior, tuned = update_proposal_laws(hp.amp_std, nu)
    lp_prior = lambda v: float(stats.geninvgauss(prior.lam, prior.delta * prior.gamma, scale=prior.delta / prior.gamma).logpdf(v))
    lp_tuned = lambda v: float(stats.geninvgauss(tuned.lam, tuned.delta * tuned.gamma, scale=tuned.delta / tuned.gamma).logpdf(v))
    q0, w0 = _full(obs.m, [1, 4], rng.gamma(2.0, 0.5, 2))

    # birth at site 2
    q1, w1 = q0.copy(), w0.copy()
    q1[2], w1[2] = True, 0.8
    want = _log_target(q1, w1, obs, hp, nu) - _log_target(q0, w0, obs, hp, nu) + math.log(0.5) - lp_prior(0.8)
    got = acceptance_log_ratio((q0, w0), (q1, w1), "birth", obs, hp, nu, cfg)
    assert got == pytest.approx(want, rel=1e-9, abs=1e-9)

    # death of site 4
    q2, w2 = q0.copy(), w0.copy()
    q2[4], w2[4] = False, np.nan
    want = _log_target(q2, w2, obs, hp, nu) - _log_target(q0, w0, obs, hp, nu) - math.log(0.5) + lp_prior(w0[4])
    got = acceptance_log_ratio((q0, w0), (q2, w2), Move.DEATH, obs, hp, nu, cfg)
    assert got == pytest.approx(want, rel=1e-9, abs=1e-9)

    # update of site 1, both proposal branches
    q3, w3 = q0.copy(), w0.copy()
    w3[1] = 2.3
    dt = _log_target(q3, w3, obs, hp, nu) - _log_target(q0, w0, obs, hp, nu)
    for branch, lp in ((1, lp_prior), (2, lp_tuned)):
        want = dt + lp(w0[1]) - lp(2.3)
        got = acceptance_log_ratio((q0, w0), (q3, w3), "update", obs, hp, nu, cfg, branch=branch)
        assert got == pytest.approx(want, rel=1e-9, abs=1e-9)


def test_birth_death_reciprocity():
    rng, obs, hp = random_problem(11)
    cfg = cfg_for(hp)
    for _ in range(10):
        a, b = (int(v) for v in rng.choice(obs.m, 2, replace=False))
        q0, w0 = _full(obs.m, [a], [rng.gamma(2.0, 1.0)])
        q1, w1 = q0.copy(), w0.copy()
        q1[b], w1[b] = True, rng.gamma(2.0, 1.0)
        fwd = acceptance_log_ratio((q0, w0), (q1, w1), "birth", obs, hp, NU, cfg)
        back = acceptance_log_ratio((q1, w1), (q0, w0), "death", obs, hp, NU, cfg)
        assert fwd == pytest.approx(-back, rel=1e-10, abs=1e-10)


@pytest.mark.parametrize("branch", [1, 2])
def test_update_antisymmetry(branch):
    rng, obs, hp = random_problem(12)
    cfg = cfg_for(hp)
    q0, w0 = _full(obs.m, [0, 3, 5], rng.gamma(2.0, 1.0, 3))
    q1, w1 = q0.copy(), w0.copy()
    w1[3] = 0.05
    fwd = acceptance_log_ratio((q0, w0), (q1, w1), "update", obs, hp, NU, cfg, branch=branch)
    back = acceptance_log_ratio((q1, w1), (q0, w0), "update", obs, hp, NU, cfg, branch=branch)
    assert fwd == pytest.approx(-back, rel=1e-10, abs=1e-10)


def test_unchanged_update_has_zero_log_ratio():
    rng, obs, hp = random_problem(13)
    cfg = cfg_for(hp)
    act = np.array([1, 2])
    w = np.array([0.7, 1.9])
    chol = ActiveSetCholesky.build(act, w, obs, hp)
    lm = marginal_from_chol(chol, obs, hp, NU)
    for branch in (1, 2):
        log_r = S._move_log_ratio(chol, lm, 2, Move.UPDATE, 1.9, 1.9, branch, obs, hp, NU, cfg)[0]
        assert log_r == 0.0


def test_ratio_input_validation():
    _, obs, hp = random_problem(14)
    cfg = cfg_for(hp)
    q, w = _full(obs.m, [1], [1.0])
    with pytest.raises(ValueError):
        acceptance_log_ratio((q, w), (q, w), "update", obs, hp, NU, cfg, branch=1)
    q1, w1 = q.copy(), w.copy()
    w1[1] = 2.0
    with pytest.raises(ValueError):
        acceptance_log_ratio((q, w), (q1, w1), "update", obs, hp, NU, cfg)


# ---------------------------------------------------------------- site moves


def test_out_of_range_w_is_rejected():
    rng, obs, hp = random_problem(15)
    # every GIG draw lands above this window, so no birth may be accepted
    cfg = cfg_for(hp, w_bounds=(1e-12, 1e-11))
    counters = S.Counters()
    state = LatentState.empty(obs.m)
    for k in range(obs.m):
        state = rj_site_step(k, state, obs, hp, NU_SOFT, cfg, rng, counters)
    assert not state.q.any()
    assert counters.proposed["birth"] == obs.m and counters.accepted["birth"] == 0


def test_forced_rejection_keeps_support(monkeypatch):
    rng, obs, hp = random_problem(16)
    cfg = cfg_for(hp, sample_bern_prob=False, sample_amp_var=False)
    state = initial_state(obs.m, rng, 0.5, kind="bgh", nu_N=NU_SOFT, hp=hp)
    monkeypatch.setattr(S, "_accept", lambda log_r, rng: False)
    new, hp2 = S.bgh_iteration(state, obs, hp, NU_SOFT, cfg, rng)
    assert np.array_equal(new.q, state.q)
    assert np.array_equal(np.isnan(new.w), np.isnan(state.w))
    assert np.allclose(new.w[new.q], state.w[state.q])
    assert hp2 == hp


def test_forced_acceptance_fills_support(monkeypatch):
    rng, obs, hp = random_problem(17)
    cfg = cfg_for(hp)
    monkeypatch.setattr(S, "_accept", lambda log_r, rng: True)
    state = LatentState.empty(obs.m)
    counters = S.Counters()
    for k in range(obs.m):
        state = rj_site_step(k, state, obs, hp, NU_SOFT, cfg, rng, counters)
    assert state.q.all()
    assert counters.accepted["birth"] == obs.m
    state.check()


def test_site_step_keeps_invariants():
    rng, obs, hp = random_problem(18)
    cfg = cfg_for(hp)
    state = initial_state(obs.m, rng, 0.5, kind="bgh", nu_N=NU_SOFT, hp=hp)
    for it in range(30):
        state, hp = S.bgh_iteration(state, obs, hp, NU_SOFT, cfg, rng)
        state.check()
        assert np.all(state.x[~state.q] == 0)


# ---------------------------------------------------------------- Gibbs blocks


def test_amplitude_draws_match_conditional():
    rng, obs, hp = random_problem(19)
    q, w = _full(obs.m, [0, 2], [0.9, 1.4])
    state = LatentState(q, np.zeros(obs.m), w)
    eta, lfac = conditional_amplitude_params(state, obs, hp, NU_SOFT)
    draws = np.array([sample_amplitudes(state, obs, hp, NU_SOFT, rng).x[[0, 2]] for _ in range(20000)])
    cov = lfac @ lfac.T
    se = np.sqrt(np.diag(cov) / draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0) - eta) < 5 * se)
    assert np.allclose(np.cov(draws, rowvar=False), cov, rtol=0.05, atol=0.02 * np.max(np.abs(cov)))


def test_bern_prob_is_beta():
    _, obs, hp = random_problem(20, m=10)
    cfg = cfg_for(hp, sample_amp_var=False)
    rng = np.random.default_rng(0)
    q, w = _full(10, [1, 5, 7], [1.0, 1.0, 1.0])
    state = LatentState(q, np.where(q, 0.5, 0.0), w)
    draws = [sample_hyperparams(state, obs, hp, NU_SOFT, cfg, rng).bern_prob for _ in range(20000)]
    assert np.mean(draws) == pytest.approx(4 / 12, abs=0.005)  # Beta(1 + 3, 1 + 7)


def test_noise_var_is_inverse_gamma():
    rng, obs, hp = random_problem(21, n=40)
    cfg = cfg_for(hp, sample_amp_var=False, sample_bern_prob=False, sample_noise_var=True)
    state = LatentState.empty(obs.m)
    draws = [sample_hyperparams(state, obs, hp, None, cfg, rng).noise_var for _ in range(20000)]
    # flat-limit prior: shape N/2, rate |y|^2 / 2
    assert np.mean(draws) == pytest.approx(obs.yy / 2 / (obs.n / 2 - 1), rel=0.02)


def _mh_chain_mean(step, start, n, rng):
    vals = np.empty(n)
    cur = start
    for i in range(n):
        cur = step(cur, rng)
        vals[i] = cur
    return vals


def _batch_se(vals, batches=50):
    b = vals[: vals.size - vals.size % batches].reshape(batches, -1).mean(axis=1)
    return b.std(ddof=1) / math.sqrt(batches)


@pytest.mark.parametrize("prior", ["jeffreys", "flat"])
def test_amp_var_step_targets_its_conditional(prior):
    rng = np.random.default_rng(22)
    true_av = 4.0
    _, gig = scale_gh_prior(NU_SOFT, 2.0)
    m = 30
    w = np.array([stats.geninvgauss(gig.lam, gig.delta * gig.gamma, scale=gig.delta / gig.gamma).rvs(random_state=rng)
                  for _ in range(m)])
    x = prior_mean(w, NU_SOFT, true_av) + np.sqrt(w) * rng.standard_normal(m)
    state = LatentState(np.ones(m, bool), x, w)
    hp = Hyperparams(0.5, 1.0, true_av)
    cfg = cfg_for(hp, amp_var_prior=prior)

    def logpost(av):
        lg = scipy_gig_logpdf(av, NU_SOFT)(w)
        mu = prior_mean(w, NU_SOFT, av)
        val = float(np.sum(lg + stats.norm.logpdf(x, mu, np.sqrt(w))))
        return val - (math.log(av) if prior == "jeffreys" else 0.0)

    grid = np.linspace(0.5, 20.0, 1201)
    lp = np.array([logpost(a) for a in grid])
    dens = np.exp(lp - lp.max())
    oracle_mean = integrate.simpson(dens * grid, x=grid) / integrate.simpson(dens, x=grid)

    def step(av, rng):
        return sample_amp_var(state, hp.replace(amp_var=av), NU_SOFT, cfg, rng).amp_var

    vals = _mh_chain_mean(step, true_av, 40000, rng)[2000:]
    assert abs(vals.mean() - oracle_mean) < 4 * _batch_se(vals)


def test_btg_amp_var_step_targets_its_conditional():
    rng = np.random.default_rng(23)
    x = np.abs(rng.standard_normal(25)) * 1.5
    state = LatentState(np.ones(25, bool), x, np.full(25, np.nan))
    hp = Hyperparams(0.5, 1.0, 2.0)
    cfg = cfg_for(hp)
    # N+(0, v) likelihood with the 1/v prior: v | x is inverse gamma(n/2, |x|^2/2)
    oracle_mean = float(x @ x) / 2 / (25 / 2 - 1)

    def step(av, rng):
        return sample_amp_var(state, hp.replace(amp_var=av), None, cfg, rng).amp_var

    vals = _mh_chain_mean(step, 2.0, 40000, rng)[2000:]
    assert abs(vals.mean() - oracle_mean) < 4 * _batch_se(vals)


def test_ir_scale_step_targets_its_conditional():
    sc = Scenario(seed=4, snr_db=-5.0, n_spikes=8)
    obs, truth = generate_scenario(sc)
    hp = Hyperparams(0.1, sc.noise_var, 1.0, 3.0)
    cfg = cfg_for(hp, sample_ir_scale=True)
    rng = np.random.default_rng(24)

    def logpost(s):
        r = obs.y - obs.with_scale(s).H @ truth.x
        return -0.5 * float(r @ r) / sc.noise_var

    grid = np.linspace(0.5, 10.0, 1901)
    lp = np.array([logpost(s) for s in grid])
    dens = np.exp(lp - lp.max())
    oracle_mean = integrate.simpson(dens * grid, x=grid) / integrate.simpson(dens, x=grid)

    def step(s, rng):
        return sample_ir_scale(truth, obs, hp.replace(ir_scale=s), cfg, rng).ir_scale

    vals = _mh_chain_mean(step, 3.0, 30000, rng)[2000:]
    assert abs(vals.mean() - oracle_mean) < 4 * _batch_se(vals)


def test_ir_scale_likelihood_peaks_near_truth():
    sc = Scenario(seed=1)
    obs, truth = generate_scenario(sc)
    grid = np.linspace(0.5, 10.0, 951)
    lp = [-float(np.sum((obs.y - obs.with_scale(s).H @ truth.x) ** 2)) for s in grid]
    assert 2.5 <= grid[int(np.argmax(lp))] <= 3.5


def test_ir_scale_outside_prior_is_rejected():
    obs, truth = generate_scenario(Scenario(seed=1))
    hp = Hyperparams(0.1, 5.5e-7, 1.0, 3.0)
    cfg = cfg_for(hp, sample_ir_scale=True)
    rng = np.random.default_rng(0)
    assert sample_ir_scale(truth, obs, hp, cfg, rng, proposal=12.0).ir_scale == 3.0
    assert sample_ir_scale(truth, obs, hp, cfg, rng, proposal=0.4).ir_scale == 3.0
    with pytest.raises(ValueError):
        sample_ir_scale(truth, Observation(obs.y, obs.H), hp, cfg, rng)


# ---------------------------------------------------------------- BTG baseline


@pytest.mark.parametrize("seed", range(4))
def test_btg_site_odds_by_quadrature(seed):
    rng = np.random.default_rng(seed)
    h = rng.standard_normal(8)
    r = rng.standard_normal(8) + h * rng.uniform(-1, 2)
    hp = Hyperparams(0.3, 0.7, 1.3)
    log_odds, m, v = btg_site_log_odds(r, h, float(h @ h), hp)

    def on(x):
        e = r - h * x
        return math.exp(-0.5 * (float(e @ e) - float(r @ r)) / hp.noise_var) * 2 * stats.norm.pdf(x, 0, hp.amp_std)

    want = math.log(hp.bern_prob / (1 - hp.bern_prob)) + math.log(integrate_positive(on, 1.0))
    assert log_odds == pytest.approx(want, rel=1e-9, abs=1e-9)
    assert v == pytest.approx(1 / (h @ h / hp.noise_var + 1 / hp.amp_var))
    assert m == pytest.approx(v * (h @ r) / hp.noise_var)


def test_btg_iteration_keeps_invariants():
    rng, obs, hp = random_problem(25)
    cfg = cfg_for(hp)
    state = initial_state(obs.m, rng, 0.5, kind="btg", hp=hp)
    for _ in range(30):
        state, hp = S.btg_iteration(state, obs, hp, cfg, rng)
        assert np.all(state.x[state.q] > 0) and np.all(state.x[~state.q] == 0)


# ---------------------------------------------------------------- stationarity on the tiny instance


def test_tiny_oracle_values_reproduce():
    obs, hp = tiny_problem()
    _, p = bgh_support_posterior(obs.H, obs.y, hp.noise_var, hp.amp_var, NU_SOFT, hp.bern_prob,
                                 scipy_gig_logpdf(hp.amp_var, NU_SOFT), grid_from=1)
    assert np.allclose(p, TINY_BGH_POSTERIOR, rtol=1e-8, atol=0)
    _, p = btg_support_posterior(obs.H, obs.y, hp.noise_var, hp.amp_var, hp.bern_prob)
    assert np.allclose(p, TINY_BTG_POSTERIOR, rtol=1e-8, atol=0)


@pytest.mark.parametrize("kind", ["bgh", "btg"])
def test_short_run_matches_support_posterior(kind):
    obs, hp = tiny_problem()
    cfg = SamplerConfig(iterations=30000, initial=hp, sample_bern_prob=False, sample_amp_var=False, seed=3)
    ch = run_chain(cfg, obs, LatentState.empty(3), kind, NU_SOFT if kind == "bgh" else None)
    probs = TINY_BGH_POSTERIOR if kind == "bgh" else TINY_BTG_POSTERIOR
    _, pval, _ = batch_means_chi2(support_labels(ch.q[500:]), probs, n_batches=100)
    assert pval > 0.001


def test_wrong_posterior_is_detected():
    # the two priors give visibly different support laws; the test must tell them apart
    obs, hp = tiny_problem()
    cfg = SamplerConfig(iterations=30000, initial=hp, sample_bern_prob=False, sample_amp_var=False, seed=3)
    ch = run_chain(cfg, obs, LatentState.empty(3), "btg")
    _, pval, _ = batch_means_chi2(support_labels(ch.q[500:]), TINY_BGH_POSTERIOR, n_batches=100)
    assert pval < 0.01


# ---------------------------------------------------------------- chains


def test_run_chain_determinism_and_thinning():
    rng, obs, hp = random_problem(26)
    cfg = SamplerConfig(iterations=25, initial=hp, thin=4, seed=9)
    a = run_chain(cfg, obs, LatentState.empty(obs.m), "bgh", NU_SOFT)
    b = run_chain(cfg, obs, LatentState.empty(obs.m), "bgh", NU_SOFT)
    assert len(a) == 7 and list(a.iteration) == [0, 4, 8, 12, 16, 20, 24]
    assert np.array_equal(a.q, b.q) and np.array_equal(a.x, b.x) and np.array_equal(a.amp_var, b.amp_var)
    c = run_chain(SamplerConfig(iterations=25, initial=hp, thin=4, seed=10), obs, LatentState.empty(obs.m), "bgh", NU_SOFT)
    assert not (np.array_equal(a.x, c.x) and np.array_equal(a.amp_var, c.amp_var))


def test_run_chain_needs_fit_for_bgh():
    _, obs, hp = random_problem(27)
    with pytest.raises(ValueError):
        run_chain(SamplerConfig(iterations=2, initial=hp), obs, LatentState.empty(obs.m), "bgh")


def test_chain_roundtrip(tmp_path):
    obs, truth = generate_scenario(Scenario(seed=2))
    hp = Hyperparams(0.1, 5.5e-7, 1e-3, 3.5)
    cfg = SamplerConfig(iterations=20, initial=hp, sample_ir_scale=True, seed=1)
    ch = run_chain(cfg, obs, LatentState.empty(obs.m), "btg")
    path = ch.write(tmp_path / "c.csv")
    back = Chain.read(path)
    assert back.kind == "btg"
    for name in ("iteration", "q", "x", "bern_prob", "noise_var", "amp_var", "ir_scale", "accepted"):
        assert np.array_equal(getattr(back, name), getattr(ch, name)), name
    assert back.counters["proposed"]["ir_scale"] == 20
    assert path.with_suffix(".meta.json").exists()


def test_initial_state():
    rng = np.random.default_rng(0)
    hp = Hyperparams(0.1, 1.0, 2.0)
    s = initial_state(40, rng)
    assert not s.q.any()
    s = initial_state(40, rng, 0.5, kind="bgh", nu_N=NU_SOFT, hp=hp)
    s.check()
    assert 5 < s.q.sum() < 35
    t = initial_state(40, rng, 0.5, kind="btg", hp=hp)
    assert np.all(t.x[t.q] > 0) and np.all(np.isnan(t.w))
