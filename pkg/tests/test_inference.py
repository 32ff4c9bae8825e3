"""Tests for the reversible-jump sampler.

Independent oracles:
    - hand-computed Gaussian log-densities
    - central-difference Jacobian determinants of the dimension maps
    - exhaustive posterior enumeration on a finite six-tree prior
    - the exponential prior law of the noise scale under a constant likelihood
"""

import math

import numpy as np
import pytest

from treegress.errors import AllDrawsNonFinite, InputError, SizeMismatch
from treegress.inference import (
    McmcConfig,
    Posterior,
    _apply_theta_jump,
    expand_params,
    log_likelihood,
    posterior_from_json,
    posterior_predict,
    posterior_to_json,
    run_chain,
    run_chains,
    shrink_params,
)
from treegress.prte import build_prior, prte_density
from treegress.trees import SymbolicExpression, parse_tree

LOG_2PI = math.log(2 * math.pi)


def expr_of(text, **kw):
    return SymbolicExpression(parse_tree(text), **kw)


# -- likelihood ------------------------------------------------------------------

def test_perfect_fit_loglik():
    e = expr_of("x")
    x = np.linspace(0.5, 3.0, 7)
    ll = log_likelihood(e, 1.0, ({"x": x}, x.copy()))
    assert ll == pytest.approx(-7 / 2 * LOG_2PI)


def test_divide_by_zero_gives_minus_inf():
    e = expr_of("(/ 1 x)")
    ll = log_likelihood(e, 1.0, ({"x": np.array([0.0, 1.0])}, np.array([1.0, 1.0])))
    assert ll == -math.inf


def test_three_point_hand_computed():
    e = expr_of("c#", theta_c=(5.0,))
    y = np.array([4.0, 5.0, 7.0])
    ll = log_likelihood(e, 2.0, ({"x": np.zeros(3)}, y))
    sse = 1.0 + 0.0 + 4.0
    assert ll == pytest.approx(-1.5 * LOG_2PI - 3 * math.log(2.0) - sse / 8.0)


# -- dimension maps ----------------------------------------------------------------

def test_expand_worked_example():
    theta_star, u_star, logdet = expand_params([4.0], [2.0, 9.0])
    assert theta_star.tolist() == [3.0, 9.0]
    assert u_star.tolist() == [1.0]
    assert logdet == pytest.approx(-math.log(2.0))


def test_expand_from_empty():
    theta_star, u_star, logdet = expand_params([], [7.0])
    assert theta_star.tolist() == [7.0]
    assert u_star.size == 0
    assert logdet == 0.0


def test_shrink_worked_example():
    theta_star, u_star, logdet = shrink_params([3.0, 7.0], [1.0])
    assert theta_star.tolist() == [4.0]
    assert u_star.tolist() == [2.0, 7.0]
    assert logdet == pytest.approx(math.log(2.0))


def test_shrink_to_empty():
    theta_star, u_star, logdet = shrink_params([3.0, 7.0], [])
    assert theta_star.size == 0
    assert u_star.tolist() == [3.0, 7.0]
    assert logdet == 0.0


def test_size_mismatch_errors():
    with pytest.raises(SizeMismatch):
        expand_params([1.0, 2.0], [3.0])
    with pytest.raises(SizeMismatch):
        shrink_params([1.0], [2.0, 3.0])


def test_shrink_undoes_expand():
    rng = np.random.default_rng(0)
    for n, n_star in [(0, 1), (1, 3), (2, 5), (4, 5)]:
        theta = rng.standard_normal(n)
        u = rng.standard_normal(n_star)
        theta_star, u_star, logdet = expand_params(theta, u)
        theta_back, u_back, logdet_back = shrink_params(theta_star, u_star)
        assert np.allclose(theta_back, theta)
        assert np.allclose(u_back, u)
        assert logdet + logdet_back == pytest.approx(0.0)


def numeric_log_abs_det(fn, point, h=1e-5):
    """Central-difference Jacobian determinant of a flat map R^d -> R^d."""
    d = point.size
    jac = np.empty((d, d))
    for j in range(d):
        hi = point.copy()
        lo = point.copy()
        hi[j] += h
        lo[j] -= h
        jac[:, j] = (fn(hi) - fn(lo)) / (2 * h)
    return math.log(abs(np.linalg.det(jac)))


def jump_map(n, n_star):
    if n_star > n:
        def fn(x):
            ts, us, _ = expand_params(x[:n], x[n:])
            return np.concatenate([ts, us])
    else:
        def fn(x):
            ts, us, _ = shrink_params(x[:n], x[n:])
            return np.concatenate([ts, us])
    return fn


@pytest.mark.parametrize("n,n_star", [(n, m) for n in range(6) for m in range(6) if n != m and n + m > 0])
def test_jacobian_matches_finite_differences(n, n_star):
    rng = np.random.default_rng(100 + 10 * n + n_star)
    point = rng.standard_normal(n + n_star)
    if n_star > n:
        _, _, analytic = expand_params(point[:n], point[n:])
    else:
        _, _, analytic = shrink_params(point[:n], point[n:])
    assert numeric_log_abs_det(jump_map(n, n_star), point) == pytest.approx(
        analytic, abs=1e-6
    )


def test_jump_reversibility_terms():
    # the reverse jump with the returned auxiliaries undoes the forward jump
    # and its terms are the exact mirror, so forward and reverse acceptance
    # ratios multiply to one
    rng = np.random.default_rng(3)
    for n_old, n_new in [(1, 4), (4, 1), (2, 2), (0, 3), (3, 0)]:
        theta = rng.standard_normal(n_old)
        u = rng.standard_normal(n_new) if n_new != n_old else np.zeros(0)
        theta_new, u_star, logdet, log_pu, log_pu_rev = _apply_theta_jump(
            theta, n_new, u
        )
        theta_back, u_back, logdet_r, log_pu_r, log_pu_rev_r = _apply_theta_jump(
            theta_new, n_old, u_star
        )
        assert np.allclose(theta_back, theta)
        assert np.allclose(u_back, u)
        assert logdet_r == pytest.approx(-logdet)
        assert log_pu_r == pytest.approx(log_pu_rev)
        assert log_pu_rev_r == pytest.approx(log_pu)


# -- config ------------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(InputError):
        McmcConfig(p_global=0.5, p_local=0.5, p_param=0.5, p_sigma=0.5)
    with pytest.raises(InputError):
        McmcConfig(samples=1001, thin=10)
    with pytest.raises(InputError):
        McmcConfig(tau=0.0)
    McmcConfig()  # defaults valid


# -- finite-prior posterior vs enumeration --------------------------------------------

TOY_TEXT = (
    "choice{ 3/10: 1, 1/4: 2, 3/20: 3, 3/20: +(1, 1), 1/10: +(2, 3), 1/20: *(2, 3) }"
)
TOY_VALUES = {"1": 1.0, "2": 2.0, "3": 3.0, "(+ 1 1)": 2.0, "(+ 2 3)": 5.0, "(* 2 3)": 6.0}


def toy_prior():
    return build_prior("toy", TOY_TEXT, variables=["x"])


def toy_exact_posterior(y, sigma):
    prior = toy_prior()
    weights = {}
    for text, value in TOY_VALUES.items():
        tree = parse_tree(text, prior.alphabet)
        p = float(prte_density(prior, tree))
        weights[text] = p * math.exp(-((y - value) ** 2) / (2 * sigma**2))
    z = sum(weights.values())
    return {k: v / z for k, v in weights.items()}


def toy_config(**kw):
    base = dict(
        burn_in=2000,
        samples=20_000,
        thin=1,
        seed=1,
        sigma0=0.7,
        p_global=0.5,
        p_local=0.5,
        p_param=0.0,
        p_sigma=0.0,
    )
    base.update(kw)
    return McmcConfig(**base)


def test_toy_posterior_total_variation():
    prior = toy_prior()
    data = ({"x": np.array([0.0])}, np.array([2.2]))
    post = run_chain(prior, data, toy_config())
    counts = {}
    for d in post.draws:
        counts[str(d.expr.tree)] = counts.get(str(d.expr.tree), 0) + 1
    total = len(post.draws)
    exact = toy_exact_posterior(2.2, 0.7)
    tv = 0.5 * sum(
        abs(counts.get(k, 0) / total - p) for k, p in exact.items()
    )
    assert tv < 0.15


# -- prior recovery -------------------------------------------------------------------

def test_sigma_matches_its_prior_without_likelihood(e_sum):
    config = McmcConfig(
        burn_in=500,
        samples=12_000,
        thin=4,
        seed=5,
        prior_only=True,
        p_global=0.25,
        p_local=0.25,
        p_param=0.0,
        p_sigma=0.5,
        step_sigma=1.2,
    )
    post = run_chain(e_sum, None, config)
    sigmas = np.sort([d.sigma for d in post.draws])
    n = len(sigmas)
    cdf = 1.0 - np.exp(-config.lambda_sigma * sigmas)
    ecdf_hi = np.arange(1, n + 1) / n
    ecdf_lo = np.arange(0, n) / n
    ks = max(np.abs(ecdf_hi - cdf).max(), np.abs(cdf - ecdf_lo).max())
    assert ks < 0.1


def test_structure_marginal_matches_prior_density(e_sum):
    config = McmcConfig(
        burn_in=500,
        samples=12_000,
        thin=4,
        seed=8,
        prior_only=True,
        p_global=0.5,
        p_local=0.5,
        p_param=0.0,
        p_sigma=0.0,
    )
    post = run_chain(e_sum, None, config)
    counts = {}
    for d in post.draws:
        counts[d.expr.tree] = counts.get(d.expr.tree, 0) + 1
    n = len(post.draws)
    top = sorted(counts, key=counts.get, reverse=True)[:5]
    for tree in top:
        p = float(prte_density(e_sum, tree))
        se = math.sqrt(p * (1 - p) / n)
        # thinned draws still correlate; allow a generous multiple
        assert abs(counts[tree] / n - p) < 6 * se + 0.01


# -- chain mechanics ---------------------------------------------------------------------

def test_chain_deterministic(e_sum):
    data = None
    config = McmcConfig(
        burn_in=50, samples=200, thin=2, seed=42, prior_only=True
    )
    a = run_chain(e_sum, data, config)
    b = run_chain(e_sum, data, config)
    assert posterior_to_json(a) == posterior_to_json(b)


def test_draw_count_is_samples_over_thin(e_sum):
    config = McmcConfig(burn_in=10, samples=100, thin=10, seed=0, prior_only=True)
    post = run_chain(e_sum, None, config)
    assert len(post.draws) == 10


def test_recorded_draws_have_finite_posterior():
    prior = build_prior(
        "risky",
        "choice{ 1/2: /(1, x), 1/2: *(c#, x) }",
        variables=["x"],
        markers={"c#": {"dist": "exp", "rate": 1.0}},
    )
    data = ({"x": np.array([0.0, 1.0, 2.0])}, np.array([0.1, 1.0, 2.1]))
    config = McmcConfig(burn_in=100, samples=400, thin=4, seed=2)
    post = run_chain(prior, data, config)
    assert all(math.isfinite(d.log_post) for d in post.draws)
    # the divide-by-zero branch can never be accepted on this data
    assert all(d.expr.tree.symbol.name != "/" for d in post.draws)


def test_cache_coherence(e_iso):
    from treegress.inference import _ChainContext
    from treegress.pta import compile_prior

    data = ({"c": np.linspace(20, 100, 20)}, np.linspace(1, 50, 20))
    config = McmcConfig(burn_in=200, samples=400, thin=4, seed=9, max_depth=50)
    post = run_chain(e_iso, data, config)
    ctx = _ChainContext(e_iso, compile_prior(e_iso), data, config)
    for d in post.draws[::37]:
        fresh = ctx.make_state(d.expr, d.sigma)
        assert fresh.log_posterior == pytest.approx(d.log_post, abs=1e-9)


def test_variable_mismatch_rejected(e_iso):
    data = ({"z": np.ones(3)}, np.ones(3))
    with pytest.raises(InputError):
        run_chain(e_iso, data, McmcConfig(burn_in=1, samples=10, thin=1))


def test_multi_chain_merge(e_sum):
    config = McmcConfig(burn_in=20, samples=100, thin=10, seed=3, prior_only=True)
    merged = run_chains(e_sum, None, config, chains=3)
    assert len(merged.draws) == 30
    again = run_chains(e_sum, None, config, chains=3)
    assert posterior_to_json(merged) == posterior_to_json(again)


# -- prediction ------------------------------------------------------------------------

def make_posterior(draw_specs):
    draws = tuple(draw_specs)
    cfg = McmcConfig(burn_in=1, samples=10, thin=1)
    return Posterior(draws, {}, cfg, 0)


def test_single_draw_quantiles_collapse():
    from treegress.inference import Draw

    e = expr_of("(* 2 x)")
    post = make_posterior([Draw(e, 0.5, -1.0)])
    out = posterior_predict(post, {"x": np.array([1.0, 3.0])})
    assert out["mean"].tolist() == [2.0, 6.0]
    assert out["q05"].tolist() == [2.0, 6.0]
    assert out["q95"].tolist() == [2.0, 6.0]


def test_constant_posterior_zero_spread():
    from treegress.inference import Draw

    e = expr_of("c#", theta_c=(4.0,))
    post = make_posterior([Draw(e, 0.1, -1.0)] * 20)
    out = posterior_predict(post, {"x": np.linspace(0, 1, 5)})
    assert np.allclose(out["q95"] - out["q05"], 0.0)


def test_all_draws_non_finite():
    from treegress.inference import Draw

    e = expr_of("(/ 1 x)")
    post = make_posterior([Draw(e, 0.1, -1.0)] * 3)
    with pytest.raises(AllDrawsNonFinite):
        posterior_predict(post, {"x": np.array([0.0])})


def test_nonfinite_draws_dropped_pointwise():
    from treegress.inference import Draw

    good = expr_of("x")
    bad = expr_of("(/ 1 x)")
    post = make_posterior([Draw(good, 0.1, -1.0), Draw(bad, 0.1, -1.0)])
    out = posterior_predict(post, {"x": np.array([0.0, 2.0])})
    assert out["dropped"].tolist() == [1, 0]
    assert out["mean"][0] == pytest.approx(0.0)


# -- serialization ------------------------------------------------------------------------

def test_posterior_json_round_trip(e_sum):
    config = McmcConfig(burn_in=20, samples=60, thin=3, seed=11, prior_only=True)
    post = run_chain(e_sum, None, config)
    text = posterior_to_json(post)
    back = posterior_from_json(text)
    assert back.draws == post.draws
    assert back.config == post.config
    assert posterior_to_json(back) == text


# -- dimension jumps against a quadrature oracle ------------------------------------

def test_dimension_jump_posterior_matches_quadrature():
    # two structures with different parameter counts; the structure posterior
    # is computable by integrating the parameters out on a grid, and the
    # chain must reproduce it through its expand/shrink jumps
    prior = build_prior(
        "jump",
        "choice{ 1/2: c#, 1/2: +(c#, c#) }",
        variables=["x"],
        markers={"c#": {"dist": "exp", "rate": 1.0}},
    )
    y_obs, sigma = 1.3, 0.4

    grid = np.linspace(0.0, 12.0, 2001)
    dx = grid[1] - grid[0]
    prior_pdf = np.exp(-grid)

    def lik(mean):
        return np.exp(-((y_obs - mean) ** 2) / (2 * sigma**2))

    # structure A: one parameter, mean = theta
    za = float(np.sum(prior_pdf * lik(grid)) * dx)
    # structure B: two parameters, mean = theta1 + theta2
    pp = np.outer(prior_pdf, prior_pdf)
    means = grid[:, None] + grid[None, :]
    zb = float(np.sum(pp * lik(means)) * dx * dx)
    exact_a = 0.5 * za / (0.5 * za + 0.5 * zb)

    data = ({"x": np.array([0.0])}, np.array([y_obs]))
    config = McmcConfig(
        burn_in=3000, samples=60_000, thin=1, seed=17, sigma0=sigma,
        p_global=0.3, p_local=0.2, p_param=0.5, p_sigma=0.0, step_theta=0.4,
    )
    post = run_chain(prior, data, config)
    frac_a = sum(1 for d in post.draws if d.expr.tree.symbol.name == "c#") / len(post.draws)
    assert abs(frac_a - exact_a) < 0.02, (frac_a, exact_a)


def test_zero_step_scale_proposal_identical(e_iso):
    import numpy as np
    from treegress.inference import _ChainContext, propose_params
    from treegress.pta import compile_prior
    from treegress.prte import sample_expression

    config = McmcConfig(burn_in=10, samples=10, thin=1, step_theta=0.0, prior_only=True)
    ctx = _ChainContext(e_iso, compile_prior(e_iso), None, config)
    rng = np.random.default_rng(0)
    state = ctx.make_state(sample_expression(e_iso, rng), 1.0)
    proposal, log_fwd, log_rev = propose_params(state, ctx, rng)
    assert proposal.expr == state.expr
    assert log_fwd == log_rev == 0.0


# -- tempered context distribution ---------------------------------------------------

def test_boltzmann_temperature_limits(e1):
    from treegress.inference import _ChainContext
    from treegress.pta import compile_prior, context_marginal
    from treegress.trees import HOLE, Tree, parse_tree

    pta = compile_prior(e1)
    tree = parse_tree("(g (g a))", e1.alphabet)
    addr = (1,)
    raw = context_marginal(pta, tree.replace_at(addr, Tree(HOLE)))

    def boltzmann(tau):
        cfg = McmcConfig(burn_in=1, samples=10, thin=1, tau=tau)
        return _ChainContext(e1, pta, None, cfg).boltzmann_marginal(tree, addr)

    # unit temperature reproduces the marginal itself
    assert np.allclose(boltzmann(1.0), raw)
    # very high temperature flattens toward uniform over the support
    hot = boltzmann(1e9)
    support = raw > 0
    assert np.allclose(hot[support], 1.0 / support.sum(), atol=1e-6)
    # impossible states stay impossible at any temperature
    for tau in (0.5, 1.0, 1e9):
        assert np.all(boltzmann(tau)[~support] == 0.0)
