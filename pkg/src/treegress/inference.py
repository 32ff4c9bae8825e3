"""Reversible-jump Metropolis-Hastings over symbolic expressions.

The chain state is (expression, noise scale); moves are
    * global: redraw the whole tree from the prior,
    * local: cut a uniformly chosen subtree, sample the automaton state at
      the cut from a tempered context marginal, regrow from that state,
    * params: joint Gaussian random walk on the continuous parameters,
    * sigma: Gaussian random walk on log(noise scale).

Dimension changes are made reversible by pairing the parameter vectors with
standard-normal auxiliaries through the expansion/shrinkage maps below; their
Jacobian determinants are analytic (2^-n for expansion to any size, 2^k for
shrinkage onto k entries).

Convention for the returned proposal terms: ``log_fwd`` is the forward
proposal log-density plus the auxiliary log-density minus the log-determinant
of the forward map, ``log_rev`` the reverse proposal plus reverse-auxiliary
log-density; the acceptance log-ratio is then (posterior delta) + log_rev -
log_fwd.  Normalization constants of the tree series cancel throughout.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from fractions import Fraction

import numpy as np

from .errors import (
    AllDrawsNonFinite,
    DepthBudgetExhausted,
    ImpossibleContext,
    InputError,
    SizeMismatch,
)
from .prte import PriorSpec, compute_ties, group_tags, sample_expression, sample_tree
from .pta import Pta, compile_prior, context_marginal, pta_eval, sample_from_state
from .trees import (
    HOLE,
    SymbolicExpression,
    Tree,
    disc_positions,
    eval_expression,
    format_tree,
    parse_tree,
)

LOG_2PI = math.log(2.0 * math.pi)
_CACHE_CAP = 200_000

MOVES = ("global", "local", "params", "sigma")


@dataclass(frozen=True)
class McmcConfig:
    burn_in: int = 2000
    samples: int = 1000
    thin: int = 10
    seed: int = 0
    lambda_sigma: float = 1.0
    tau: float = 1.0
    step_sigma: float = 0.4
    step_theta: float = 0.5
    p_global: float = 0.2
    p_local: float = 0.4
    p_param: float = 0.3
    p_sigma: float = 0.1
    max_depth: int = 50
    state_budget: int = 10_000
    sigma0: float | None = None
    prior_only: bool = False

    def __post_init__(self):
        if self.burn_in < 0 or self.samples <= 0 or self.thin <= 0:
            raise InputError("burn_in >= 0, samples > 0, thin > 0 required")
        if self.samples % self.thin:
            raise InputError("samples must be divisible by thin")
        if self.lambda_sigma <= 0 or self.tau <= 0:
            raise InputError("lambda_sigma and tau must be positive")
        if self.step_sigma < 0 or self.step_theta < 0:
            raise InputError("step scales must be non-negative")
        if self.max_depth <= 0 or self.state_budget <= 0:
            raise InputError("max_depth and state_budget must be positive")
        mix = (self.p_global, self.p_local, self.p_param, self.p_sigma)
        if any(p < 0 for p in mix):
            raise InputError("move probabilities must be non-negative")
        if abs(sum(mix) - 1.0) > 1e-12:
            raise InputError(f"move mix sums to {sum(mix)!r}, expected 1")
        if self.sigma0 is not None and self.sigma0 <= 0:
            raise InputError("sigma0 must be positive")

    def move_mix(self):
        return dict(zip(MOVES, (self.p_global, self.p_local, self.p_param, self.p_sigma)))


@dataclass(frozen=True)
class ChainState:
    expr: SymbolicExpression
    sigma: float
    log_lik: float
    log_prior_tree: float
    log_prior_params: float
    log_prior_sigma: float
    sse: float

    @property
    def log_posterior(self) -> float:
        return self.log_lik + self.log_prior_tree + self.log_prior_params + self.log_prior_sigma


@dataclass(frozen=True)
class Draw:
    expr: SymbolicExpression
    sigma: float
    log_post: float


@dataclass(frozen=True)
class Posterior:
    draws: tuple
    accept_stats: dict
    config: McmcConfig
    seed: int


# -- likelihood -------------------------------------------------------------------


def _coerce_data(data):
    if hasattr(data, "inputs") and hasattr(data, "target"):
        return data.inputs(), np.asarray(data.target, dtype=float)
    inputs, y = data
    return {k: np.asarray(v, dtype=float) for k, v in inputs.items()}, np.asarray(
        y, dtype=float
    )


def _sum_squared_error(expr: SymbolicExpression, inputs, y) -> float:
    pred = eval_expression(expr, inputs)
    if not np.isfinite(pred).all():
        return math.inf
    with np.errstate(over="ignore"):
        return float(np.sum((y - pred) ** 2))


def log_likelihood(expr: SymbolicExpression, sigma: float, data) -> float:
    """Gaussian log-likelihood of the targets around the expression's
    evaluations; -inf whenever any evaluation is non-finite."""
    inputs, y = _coerce_data(data)
    if y.size == 0:
        raise InputError("empty dataset")
    if sigma <= 0:
        raise InputError("sigma must be positive")
    sse = _sum_squared_error(expr, inputs, y)
    return _log_lik_from_sse(sse, sigma, y.size)


def _log_lik_from_sse(sse: float, sigma: float, n: int) -> float:
    if not math.isfinite(sse):
        return -math.inf
    return -0.5 * n * LOG_2PI - n * math.log(sigma) - sse / (2.0 * sigma * sigma)


# -- dimension-matching maps ----------------------------------------------------------


def expand_params(theta, u):
    """Grow the parameter vector to len(u) entries.  The first len(theta)
    outputs mix old values with auxiliaries, the rest are fresh; returns
    (theta_star, u_star, log|det|) with log|det| = -len(theta)*log(2)."""
    theta = np.asarray(theta, dtype=float)
    u = np.asarray(u, dtype=float)
    n, n_star = theta.size, u.size
    if n_star <= n:
        raise SizeMismatch(f"expansion needs a target larger than {n}, got {n_star}")
    u_theta, u_new = u[:n], u[n:]
    theta_star = np.concatenate([(theta + u_theta) / 2.0, u_new])
    u_star = (theta - u_theta) / 2.0
    return theta_star, u_star, -n * math.log(2.0)


def shrink_params(theta, u):
    """Shrink the parameter vector onto len(u) entries: the kept block is
    theta[:len(u)] + u, the auxiliaries remember what it takes to undo the
    move; log|det| = +len(u)*log(2)."""
    theta = np.asarray(theta, dtype=float)
    u = np.asarray(u, dtype=float)
    n, n_star = theta.size, u.size
    if n_star > n:
        raise SizeMismatch(f"shrinkage target {n_star} exceeds current size {n}")
    head, tail = theta[:n_star], theta[n_star:]
    theta_star = head + u
    u_star = np.concatenate([head - u, tail])
    return theta_star, u_star, n_star * math.log(2.0)


def _stdnorm_logpdf(u) -> float:
    u = np.asarray(u, dtype=float)
    return float(-0.5 * np.sum(u * u) - 0.5 * u.size * LOG_2PI)


def _apply_theta_jump(theta_old, n_new: int, u):
    """Deterministic part of a dimension jump given the drawn auxiliaries.
    Returns (theta_new, u_star, log|det|, log p(u), log p(u_star))."""
    n_old = len(theta_old)
    if n_new == n_old:
        empty = np.zeros(0)
        return np.asarray(theta_old, float), empty, 0.0, 0.0, 0.0
    if n_new > n_old:
        theta_new, u_star, logdet = expand_params(theta_old, u)
    else:
        theta_new, u_star, logdet = shrink_params(theta_old, u)
    return theta_new, u_star, logdet, _stdnorm_logpdf(u), _stdnorm_logpdf(u_star)


def _draw_theta_jump(theta_old, n_new: int, rng):
    n_old = len(theta_old)
    u = rng.standard_normal(n_new) if n_new != n_old else np.zeros(0)
    return _apply_theta_jump(theta_old, n_new, u)


def _disc_jump(theta_d_old, n_new: int, support, rng):
    """Match the discrete parameter vector to the new marker count: survivors
    keep values by rank, additions draw uniformly from the support.  Returns
    (theta_d_new, log_fwd, log_rev)."""
    old = tuple(theta_d_old)
    n_old = len(old)
    if n_new == n_old:
        return old, 0.0, 0.0
    log_s = math.log(len(support)) if support else 0.0
    if n_new > n_old:
        extra = tuple(
            support[int(rng.integers(len(support)))] for _ in range(n_new - n_old)
        )
        return old + extra, -(n_new - n_old) * log_s, 0.0
    return old[:n_new], 0.0, -(n_old - n_new) * log_s


# -- state construction -----------------------------------------------------------------


class _ChainContext:
    """Everything a move needs: prior, automaton, data, config, caches."""

    def __init__(self, prior: PriorSpec, pta: Pta, data, config: McmcConfig):
        self.prior = prior
        self.pta = pta
        self.config = config
        if data is not None:
            self.inputs, self.y = _coerce_data(data)
        else:
            self.inputs, self.y = {}, np.zeros(0)
        self.log_prior_cache: dict = {}
        self.marginal_cache: dict = {}

    def log_prior_tree(self, tree: Tree) -> float:
        cached = self.log_prior_cache.get(tree)
        if cached is None:
            val = pta_eval(self.pta, tree)
            cached = math.log(val) if val > 0 else -math.inf
            if len(self.log_prior_cache) > _CACHE_CAP:
                self.log_prior_cache.clear()
            self.log_prior_cache[tree] = cached
        return cached

    def boltzmann_marginal(self, tree: Tree, addr):
        """Tempered context-state distribution at the hole; zero-probability
        states stay excluded for any temperature."""
        key = (tree, addr)
        cached = self.marginal_cache.get(key)
        if cached is None:
            context = tree.replace_at(addr, Tree(HOLE))
            marginal = context_marginal(self.pta, context)
            support = marginal > 0
            logits = np.full(marginal.shape, -math.inf)
            logits[support] = np.log(marginal[support]) / self.config.tau
            logits -= logits[support].max()
            weights = np.exp(logits)
            cached = weights / weights.sum()
            if len(self.marginal_cache) > _CACHE_CAP:
                self.marginal_cache.clear()
            self.marginal_cache[key] = cached
        return cached

    def log_prior_params(self, expr: SymbolicExpression) -> float:
        total = 0.0
        for tag, value in zip(group_tags(expr.tree, expr.ties), expr.theta_c):
            total += self.prior.markers[tag].logpdf(value)
        if expr.theta_d:
            total -= len(expr.theta_d) * math.log(len(self.prior.theta_d_support))
        return total

    def log_prior_sigma(self, sigma: float) -> float:
        # exponential density expressed on the log scale the walk lives on
        lam = self.config.lambda_sigma
        return math.log(lam) - lam * sigma + math.log(sigma)

    def make_state(self, expr: SymbolicExpression, sigma: float) -> ChainState:
        if self.config.prior_only or self.y.size == 0:
            sse, ll = 0.0, 0.0
        else:
            sse = _sum_squared_error(expr, self.inputs, self.y)
            ll = _log_lik_from_sse(sse, sigma, self.y.size)
        return ChainState(
            expr=expr,
            sigma=sigma,
            log_lik=ll,
            log_prior_tree=self.log_prior_tree(expr.tree),
            log_prior_params=self.log_prior_params(expr),
            log_prior_sigma=self.log_prior_sigma(sigma),
            sse=sse,
        )

    def restate_sigma(self, state: ChainState, sigma: float) -> ChainState:
        if self.config.prior_only or self.y.size == 0:
            ll = 0.0
        else:
            ll = _log_lik_from_sse(state.sse, sigma, self.y.size)
        return replace(
            state,
            sigma=sigma,
            log_lik=ll,
            log_prior_sigma=self.log_prior_sigma(sigma),
        )


def _rebind(tree: Tree, prior: PriorSpec, theta_c, theta_d) -> SymbolicExpression:
    return SymbolicExpression(tree, tuple(theta_c), tuple(theta_d), compute_ties(tree, prior))


# -- proposals ------------------------------------------------------------------------


def propose_global(state: ChainState, ctx: _ChainContext, rng):
    """Independence proposal from the prior; parameters are dimension-matched
    through the expansion/shrinkage maps with standard-normal auxiliaries."""
    tree = sample_tree(ctx.prior, rng)
    ties = compute_ties(tree, ctx.prior)
    n_new = (max(ties) + 1) if ties else 0
    theta_new, _, logdet, log_pu, log_pu_rev = _draw_theta_jump(
        state.expr.theta_c, n_new, rng
    )
    n_disc = len(disc_positions(tree))
    theta_d_new, disc_fwd, disc_rev = _disc_jump(
        state.expr.theta_d, n_disc, ctx.prior.theta_d_support, rng
    )
    expr = SymbolicExpression(tree, tuple(theta_new), theta_d_new, ties)
    proposal = ctx.make_state(expr, state.sigma)
    log_fwd = proposal.log_prior_tree + log_pu + disc_fwd - logdet
    log_rev = state.log_prior_tree + log_pu_rev + disc_rev
    return proposal, log_fwd, log_rev


def propose_local(state: ChainState, ctx: _ChainContext, rng):
    """Cut a uniformly chosen subtree, draw the automaton state at the cut
    from the tempered context marginal, regrow from that state.  Returns None
    when the move aborts (impossible context or exhausted regrow depth)."""
    tree = state.expr.tree
    addresses = tree.addresses()
    addr = addresses[int(rng.integers(len(addresses)))]
    old_sub = tree.node_at(addr)
    try:
        boltzmann = ctx.boltzmann_marginal(tree, addr)
    except ImpossibleContext:
        return None
    start = int(rng.choice(len(boltzmann), p=boltzmann))
    try:
        new_sub, _ = sample_from_state(ctx.pta, start, rng, ctx.config.max_depth)
    except DepthBudgetExhausted:
        return None
    new_tree = tree.replace_at(addr, new_sub)

    fwd_regrow = pta_eval(ctx.pta, new_sub, initial=boltzmann)
    rev_regrow = pta_eval(ctx.pta, old_sub, initial=boltzmann)

    ties = compute_ties(new_tree, ctx.prior)
    n_new = (max(ties) + 1) if ties else 0
    theta_new, _, logdet, log_pu, log_pu_rev = _draw_theta_jump(
        state.expr.theta_c, n_new, rng
    )
    n_disc = len(disc_positions(new_tree))
    theta_d_new, disc_fwd, disc_rev = _disc_jump(
        state.expr.theta_d, n_disc, ctx.prior.theta_d_support, rng
    )
    expr = SymbolicExpression(new_tree, tuple(theta_new), theta_d_new, ties)
    proposal = ctx.make_state(expr, state.sigma)

    log_fwd = (
        -math.log(len(addresses))
        + (math.log(fwd_regrow) if fwd_regrow > 0 else -math.inf)
        + log_pu
        + disc_fwd
        - logdet
    )
    log_rev = (
        -math.log(new_tree.size)
        + (math.log(rev_regrow) if rev_regrow > 0 else -math.inf)
        + log_pu_rev
        + disc_rev
    )
    return proposal, log_fwd, log_rev


_STEP_MULTIPLIERS = (0.1, 1.0, 10.0)


def propose_params(state: ChainState, ctx: _ChainContext, rng):
    """Joint Gaussian random walk on the continuous parameters.  The step
    scale is multiplied by a symmetric random factor so that parameters of
    very different magnitudes all mix; the proposal stays symmetric."""
    theta = np.asarray(state.expr.theta_c, dtype=float)
    if theta.size == 0:
        return state, 0.0, 0.0
    mult = _STEP_MULTIPLIERS[int(rng.integers(len(_STEP_MULTIPLIERS)))]
    step = ctx.config.step_theta * mult
    theta_new = theta + step * rng.standard_normal(theta.size)
    expr = SymbolicExpression(
        state.expr.tree, tuple(theta_new), state.expr.theta_d, state.expr.ties
    )
    proposal = ctx.make_state(expr, state.sigma)
    return proposal, 0.0, 0.0


def propose_sigma(state: ChainState, ctx: _ChainContext, rng):
    """Gaussian random walk on log(sigma); the exponential prior is evaluated
    on the log scale so the walk is symmetric and sigma stays positive."""
    s_new = math.log(state.sigma) + ctx.config.step_sigma * float(rng.standard_normal())
    proposal = ctx.restate_sigma(state, math.exp(s_new))
    return proposal, 0.0, 0.0


_PROPOSERS = {
    "global": propose_global,
    "local": propose_local,
    "params": propose_params,
    "sigma": propose_sigma,
}


# -- the chain -------------------------------------------------------------------------


def run_chain(prior: PriorSpec, data, config: McmcConfig, on_draw=None) -> Posterior:
    """Burn in, then record every thin-th state of the next `samples` steps.
    Fully deterministic given the seed.  Aborted moves (impossible regrow,
    depth overflow) count as rejections so the kernel is total.  ``on_draw``
    is called with each Draw as it is recorded (partial-trace collection)."""
    if prior.max_depth != config.max_depth:
        prior = replace(prior, max_depth=config.max_depth)
    pta = compile_prior(prior, config.state_budget)
    ctx = _ChainContext(prior, pta, data, config)
    if data is not None and not config.prior_only:
        missing = set(prior.variables) - set(ctx.inputs)
        extra = set(ctx.inputs) - set(prior.variables)
        if missing or extra:
            raise InputError(
                f"data columns {sorted(ctx.inputs)} do not match prior variables "
                f"{sorted(prior.variables)}"
            )

    rng = np.random.default_rng(config.seed)
    state = _initial_state(ctx, rng)

    mix = config.move_mix()
    stats = {
        move: {"proposed": 0, "accepted": 0, "aborted": 0} for move in MOVES
    }
    draws = []
    total_steps = config.burn_in + config.samples
    for step in range(total_steps):
        move = _pick_move(mix, rng)
        stats[move]["proposed"] += 1
        try:
            out = _PROPOSERS[move](state, ctx, rng)
        except DepthBudgetExhausted:
            out = None
        if out is None:
            stats[move]["aborted"] += 1
        else:
            proposal, log_fwd, log_rev = out
            log_alpha = (
                proposal.log_posterior - state.log_posterior + log_rev - log_fwd
            )
            if log_alpha >= 0 or math.log(max(rng.random(), 1e-300)) < log_alpha:
                state = proposal
                stats[move]["accepted"] += 1
        k = step - config.burn_in
        if k >= 0 and (k + 1) % config.thin == 0:
            draw = Draw(state.expr, state.sigma, state.log_posterior)
            draws.append(draw)
            if on_draw is not None:
                on_draw(draw)

    return Posterior(tuple(draws), stats, config, config.seed)


def _initial_state(ctx: _ChainContext, rng) -> ChainState:
    """Prior-consistent start: expression and parameters from the prior,
    sigma from its exponential prior unless pinned.  Redraw the expression
    when it cannot evaluate on the data (infinite negative likelihood would
    wedge the chain)."""
    config = ctx.config
    sigma = (
        config.sigma0
        if config.sigma0 is not None
        else float(rng.exponential(1.0 / config.lambda_sigma))
    )
    for _ in range(1000):
        expr = sample_expression(ctx.prior, rng)
        state = ctx.make_state(expr, sigma)
        if math.isfinite(state.log_lik):
            return state
    raise DepthBudgetExhausted("no prior draw evaluates finitely on the data")


def _pick_move(mix, rng) -> str:
    r = rng.random()
    acc = 0.0
    for move in MOVES:
        acc += mix[move]
        if r < acc:
            return move
    return MOVES[-1]


def run_chains(prior: PriorSpec, data, config: McmcConfig, chains: int, on_draw=None) -> Posterior:
    """Independent chains with per-chain seeds derived from the master seed,
    merged in chain order."""
    if chains <= 1:
        return run_chain(prior, data, config, on_draw=on_draw)
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(config.seed).spawn(chains)]
    draws = []
    stats = {move: {"proposed": 0, "accepted": 0, "aborted": 0} for move in MOVES}
    for chain_seed in seeds:
        post = run_chain(prior, data, replace(config, seed=chain_seed), on_draw=on_draw)
        draws.extend(post.draws)
        for move in MOVES:
            for key in stats[move]:
                stats[move][key] += post.accept_stats[move][key]
    return Posterior(tuple(draws), stats, config, config.seed)


# -- posterior summaries ------------------------------------------------------------------


def posterior_predict(posterior: Posterior, inputs, rng=None, strict=True):
    """Pointwise predictive mean and 5/50/95% quantiles over the draws.
    Passing an rng adds observation noise (one sigma-scaled draw per
    posterior sample), giving aleatoric-plus-epistemic bands; without it the
    bands are epistemic only.  Draws that evaluate non-finite at a point are
    dropped there and counted; a point with no finite draw raises under
    strict=True and yields a NaN row otherwise."""
    if not posterior.draws:
        raise InputError("posterior holds no draws")
    inputs = {k: np.asarray(v, dtype=float) for k, v in inputs.items()}
    n = len(next(iter(inputs.values()))) if inputs else 1
    values = np.empty((len(posterior.draws), n))
    for i, draw in enumerate(posterior.draws):
        pred = eval_expression(draw.expr, inputs)
        if rng is not None:
            pred = pred + draw.sigma * rng.standard_normal(n)
        values[i] = pred
    finite = np.isfinite(values)
    dropped = (~finite).sum(axis=0)
    if strict and (dropped == len(posterior.draws)).any():
        bad = int(np.argmax(dropped == len(posterior.draws)))
        raise AllDrawsNonFinite(f"every draw is non-finite at point index {bad}")
    mean = np.full(n, np.nan)
    quantiles = np.full((3, n), np.nan)
    for j in range(n):
        col = values[finite[:, j], j]
        if col.size:
            mean[j] = col.mean()
            quantiles[:, j] = np.percentile(col, [5.0, 50.0, 95.0])
    return {
        "mean": mean,
        "q05": quantiles[0],
        "q50": quantiles[1],
        "q95": quantiles[2],
        "dropped": dropped,
    }


# -- serialization ------------------------------------------------------------------------


def posterior_to_json(posterior: Posterior) -> str:
    doc = {
        "config": asdict(posterior.config),
        "seed": posterior.seed,
        "draws": [
            {
                "expr": format_tree(d.expr.tree),
                "theta_c": list(d.expr.theta_c),
                "theta_d": [str(v) for v in d.expr.theta_d],
                "ties": list(d.expr.ties),
                "sigma": d.sigma,
                "log_post": d.log_post,
            }
            for d in posterior.draws
        ],
        "accept_stats": posterior.accept_stats,
    }
    return json.dumps(doc, indent=2)


def posterior_from_json(text: str) -> Posterior:
    doc = json.loads(text)
    config = McmcConfig(**doc["config"])
    draws = []
    for entry in doc["draws"]:
        tree = parse_tree(entry["expr"])
        expr = SymbolicExpression(
            tree,
            tuple(entry["theta_c"]),
            tuple(Fraction(v) for v in entry["theta_d"]),
            tuple(entry["ties"]),
        )
        draws.append(Draw(expr, float(entry["sigma"]), float(entry["log_post"])))
    return Posterior(tuple(draws), doc["accept_stats"], config, int(doc["seed"]))
