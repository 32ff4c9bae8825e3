"""Probabilistic regular tree expressions: AST, text format, sampling, density.

An expression is built from five constructors:

* ``PSymbol(f, children)``   -- emit symbol f, then expand each child,
* ``PVar(name)``             -- a variable occurrence,
* ``PChoice([(w, e), ...])`` -- pick one branch by weight,
* ``PConcat(l, v, r)``       -- expand l; every occurrence of v inside it is
                                replaced by an independent sample of r,
* ``PIter(body, v)``         -- expand body; every occurrence of v restarts
                                the iteration (independently per occurrence).

Variables are lexically scoped; an inner binder shadows an outer one of the
same name.  Sampling is the operational reading of the above.  The density of
a tree is the total probability over all ways the expression can generate it,
computed exactly in rational arithmetic whenever all choice weights are
rational.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import (
    DepthBudgetExhausted,
    InputError,
    NonTerminatingIter,
    PrteSyntaxError,
    UnboundVariable,
    UnknownSymbol,
    WeightSumError,
)
from .trees import (
    HOLE_NAME,
    RankedAlphabet,
    RankedSymbol,
    SymbolicExpression,
    Tree,
    const_positions,
    is_const_marker,
    is_disc_marker,
)

WEIGHT_TOL = 1e-12
DEFAULT_MAX_DEPTH = 50
RESAMPLE_RETRIES = 1000

_KEYWORDS = frozenset({"choice", "iter", "subst"})


# -- AST -----------------------------------------------------------------------


class Prte:
    """Base class; subclasses are immutable value objects."""

    __slots__ = ()

    def __str__(self):
        return format_prte(self)


@dataclass(frozen=True)
class PSymbol(Prte):
    symbol: RankedSymbol
    children: tuple = ()

    def __post_init__(self):
        if len(self.children) != self.symbol.rank:
            raise InputError(
                f"'{self.symbol.name}' has rank {self.symbol.rank} "
                f"but {len(self.children)} sub-expressions"
            )


@dataclass(frozen=True)
class PVar(Prte):
    name: str


@dataclass(frozen=True)
class PChoice(Prte):
    branches: tuple  # of (weight, Prte); weights Fraction or float

    def __post_init__(self):
        if not self.branches:
            raise InputError("choice needs at least one branch")
        for w, _ in self.branches:
            if not (0 < float(w) <= 1):
                raise WeightSumError(f"choice weight {w} outside (0, 1]")
        total = sum(float(w) for w, _ in self.branches)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise WeightSumError(f"choice weights sum to {total!r}, expected 1")


@dataclass(frozen=True)
class PConcat(Prte):
    left: Prte
    var: str
    right: Prte


@dataclass(frozen=True)
class PIter(Prte):
    body: Prte
    var: str


# -- canonical text ------------------------------------------------------------


def _format_weight(w) -> str:
    if isinstance(w, Fraction):
        return str(w.numerator) if w.denominator == 1 else f"{w.numerator}/{w.denominator}"
    return repr(w)


def format_prte(e: Prte) -> str:
    """Canonical single-line form; parsing it back yields an equal AST."""
    if isinstance(e, PSymbol):
        if not e.children:
            return e.symbol.name
        inner = ", ".join(format_prte(c) for c in e.children)
        return f"{e.symbol.name}({inner})"
    if isinstance(e, PVar):
        return f"${e.name}"
    if isinstance(e, PChoice):
        inner = ", ".join(f"{_format_weight(w)}: {format_prte(b)}" for w, b in e.branches)
        return f"choice{{ {inner} }}"
    if isinstance(e, PIter):
        return f"iter ${e.var} {{ {format_prte(e.body)} }}"
    if isinstance(e, PConcat):
        return f"{format_prte(e.left)}.subst(${e.var}, {format_prte(e.right)})"
    raise TypeError(f"not a Prte: {e!r}")


_NUMBER_RE = re.compile(r"-?\d+(\.\d+)?(/\d+)?")
_VAR_RE = re.compile(r"\$[A-Za-z_][A-Za-z0-9_]*")
_PUNCT = "(){},:."


@dataclass(frozen=True)
class _Token:
    kind: str  # 'num' | 'var' | 'name' | one of _PUNCT | 'eof'
    text: str
    line: int
    col: int


def _tokenize(text: str):
    tokens = []
    line, col = 1, 1
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch.isspace():
            col += 1
            i += 1
            continue
        if ch in _PUNCT:
            tokens.append(_Token(ch, ch, line, col))
            col += 1
            i += 1
            continue
        m = _VAR_RE.match(text, i)
        if m:
            tokens.append(_Token("var", m.group()[1:], line, col))
            col += m.end() - i
            i = m.end()
            continue
        m = _NUMBER_RE.match(text, i)
        if m and (m.end() >= n or text[m.end()].isspace() or text[m.end()] in _PUNCT):
            tokens.append(_Token("num", m.group(), line, col))
            col += m.end() - i
            i = m.end()
            continue
        j = i
        while j < n and not text[j].isspace() and text[j] not in _PUNCT and text[j] != "$":
            j += 1
        if j == i:
            raise PrteSyntaxError(f"unexpected character {ch!r}", line, col)
        tokens.append(_Token("name", text[i:j], line, col))
        col += j - i
        i = j
    tokens.append(_Token("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def next(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str) -> _Token:
        tok = self.next()
        if tok.kind != kind:
            raise PrteSyntaxError(
                f"expected {kind!r}, found {tok.text!r}", tok.line, tok.col
            )
        return tok

    def fail(self, message: str):
        tok = self.peek()
        raise PrteSyntaxError(message, tok.line, tok.col)

    # prte := primary { "." "subst" "(" VAR "," prte ")" }
    def parse_prte(self) -> Prte:
        expr = self.parse_primary()
        while self.peek().kind == ".":
            self.next()
            kw = self.expect("name")
            if kw.text != "subst":
                raise PrteSyntaxError(f"expected 'subst', found {kw.text!r}", kw.line, kw.col)
            self.expect("(")
            var = self.expect("var").text
            self.expect(",")
            right = self.parse_prte()
            self.expect(")")
            expr = PConcat(expr, var, right)
        return expr

    def parse_primary(self) -> Prte:
        tok = self.peek()
        if tok.kind == "var":
            self.next()
            return PVar(tok.text)
        if tok.kind == "name" and tok.text == "choice":
            return self.parse_choice()
        if tok.kind == "name" and tok.text == "iter":
            return self.parse_iter()
        if tok.kind in ("name", "num"):
            return self.parse_node()
        self.fail(f"expected an expression, found {tok.text!r}")

    def parse_choice(self) -> PChoice:
        kw = self.next()
        self.expect("{")
        branches = []
        while True:
            w = self.parse_weight()
            self.expect(":")
            branches.append((w, self.parse_prte()))
            if self.peek().kind == ",":
                self.next()
                continue
            break
        self.expect("}")
        try:
            return PChoice(tuple(branches))
        except WeightSumError as exc:
            raise WeightSumError(f"{exc} (line {kw.line}, column {kw.col})") from None

    def parse_weight(self):
        tok = self.expect("num")
        try:
            return Fraction(tok.text)
        except (ValueError, ZeroDivisionError):
            raise PrteSyntaxError(f"bad weight {tok.text!r}", tok.line, tok.col) from None

    def parse_iter(self) -> PIter:
        self.next()
        var = self.expect("var").text
        self.expect("{")
        body = self.parse_prte()
        self.expect("}")
        return PIter(body, var)

    def parse_node(self) -> PSymbol:
        tok = self.next()
        name = tok.text
        if name in _KEYWORDS:
            raise PrteSyntaxError(f"{name!r} is a reserved word", tok.line, tok.col)
        if name == HOLE_NAME:
            raise PrteSyntaxError("'?' is reserved for context holes", tok.line, tok.col)
        if self.peek().kind == "(":
            self.next()
            kids = [self.parse_prte()]
            while self.peek().kind == ",":
                self.next()
                kids.append(self.parse_prte())
            self.expect(")")
            return PSymbol(RankedSymbol(name, len(kids)), tuple(kids))
        return PSymbol(RankedSymbol(name, 0))


def parse_prte(text: str, alphabet: RankedAlphabet | None = None) -> Prte:
    """Parse the textual form.  With an explicit alphabet every symbol must
    resolve against it; otherwise symbols are taken at their observed rank.
    The result is validated: scopes close, weights sum to one, and every
    iteration can terminate."""
    parser = _Parser(text)
    expr = parser.parse_prte()
    tail = parser.peek()
    if tail.kind != "eof":
        raise PrteSyntaxError(f"trailing input {tail.text!r}", tail.line, tail.col)
    if alphabet is not None:
        for sym in collect_symbols(expr):
            if not alphabet.has(sym.name, sym.rank):
                raise UnknownSymbol(f"symbol '{sym.name}/{sym.rank}' not in alphabet")
    _Resolution(expr)  # raises on unbound variables / dead iterations
    return expr


def collect_symbols(e: Prte) -> set:
    out = set()

    def walk(node):
        if isinstance(node, PSymbol):
            out.add(node.symbol)
            for c in node.children:
                walk(c)
        elif isinstance(node, PChoice):
            for _, b in node.branches:
                walk(b)
        elif isinstance(node, PConcat):
            walk(node.left)
            walk(node.right)
        elif isinstance(node, PIter):
            walk(node.body)

    walk(e)
    return out


# -- scope resolution and static analysis ---------------------------------------


class _Resolution:
    """Static pass over an expression.

    Resolves every variable occurrence to the sub-expression it expands to
    (the right side of its concatenation, or the enclosing iteration itself),
    checks that every iteration admits a finite derivation, and precomputes
    the root-symbol distribution ``reach`` of every node: the probability
    that expanding the node emits its first symbol at each emitting site.
    """

    def __init__(self, root: Prte):
        self.root = root
        self.var_target: dict[int, Prte] = {}
        self.nodes: list[Prte] = []
        self._seen_scopes: dict[int, dict] = {}
        self._resolve(root, {})
        self._check_productive()
        self.symbol_nodes = [n for n in self.nodes if isinstance(n, PSymbol)]
        self.is_rational = all(
            isinstance(w, Fraction)
            for n in self.nodes
            if isinstance(n, PChoice)
            for w, _ in n.branches
        )
        self.reach = self._compute_reach()

    # resolution ----------------------------------------------------------

    def _resolve(self, node: Prte, scope: dict):
        key = id(node)
        if key in self._seen_scopes:
            if self._seen_scopes[key] is not scope and self._scope_differs(node, scope):
                raise InputError(
                    "sub-expression object is shared across conflicting variable "
                    "scopes; build structurally distinct nodes instead"
                )
            return
        self._seen_scopes[key] = scope
        self.nodes.append(node)
        if isinstance(node, PSymbol):
            for c in node.children:
                self._resolve(c, scope)
        elif isinstance(node, PVar):
            if node.name not in scope:
                raise UnboundVariable(f"variable ${node.name} is not bound")
            self.var_target[key] = scope[node.name]
        elif isinstance(node, PChoice):
            for _, b in node.branches:
                self._resolve(b, scope)
        elif isinstance(node, PConcat):
            self._resolve(node.right, scope)
            inner = dict(scope)
            inner[node.var] = node.right
            self._resolve(node.left, inner)
        elif isinstance(node, PIter):
            inner = dict(scope)
            inner[node.var] = node
            self._resolve(node.body, inner)
        else:
            raise TypeError(f"not a Prte: {node!r}")

    def _scope_differs(self, node: Prte, scope: dict) -> bool:
        # A re-visited subtree is only a problem if some variable inside it
        # would now resolve to a different binder.
        for v in _free_vars(node):
            old = self._seen_scopes[id(node)].get(v)
            if scope.get(v) is not old:
                return True
        return False

    # expansion edges -------------------------------------------------------

    def expansion(self, node: Prte):
        """Weighted epsilon successors: where probability mass flows without
        emitting a symbol."""
        if isinstance(node, PChoice):
            return list(node.branches)
        if isinstance(node, PVar):
            return [(Fraction(1), self.var_target[id(node)])]
        if isinstance(node, PConcat):
            return [(Fraction(1), node.left)]
        if isinstance(node, PIter):
            return [(Fraction(1), node.body)]
        return []

    # termination -----------------------------------------------------------

    def _check_productive(self):
        """Least fixpoint of 'can derive a finite tree'.  An iteration whose
        body can never shed its variable keeps growing forever and is
        rejected."""
        productive: dict[int, bool] = {id(n): False for n in self.nodes}
        changed = True
        while changed:
            changed = False
            for n in self.nodes:
                if productive[id(n)]:
                    continue
                if isinstance(n, PSymbol):
                    ok = all(productive[id(c)] for c in n.children)
                elif isinstance(n, PVar):
                    ok = productive[id(self.var_target[id(n)])]
                elif isinstance(n, PChoice):
                    ok = any(productive[id(b)] for _, b in n.branches)
                elif isinstance(n, PConcat):
                    ok = productive[id(n.left)]
                else:  # PIter
                    ok = productive[id(n.body)]
                if ok:
                    productive[id(n)] = True
                    changed = True
        for n in self.nodes:
            if isinstance(n, PIter) and not productive[id(n)]:
                raise NonTerminatingIter(
                    f"iteration over ${n.var} has no variable-free derivation"
                )
        if not productive[id(self.root)]:
            raise NonTerminatingIter("expression cannot derive any finite tree")

    # root-symbol distributions ----------------------------------------------

    def _compute_reach(self):
        """For every node, the sub-probability of each emitting site being the
        one that produces the node's root symbol.  Expansion may loop through
        variables without emitting, so strongly connected groups of the
        expansion graph are solved as exact linear systems."""
        one = Fraction(1) if self.is_rational else 1.0
        reach: dict[int, dict[int, object]] = {}
        for comp in _sccs(self.nodes, self.expansion):
            internal = {id(n) for n in comp}
            if len(comp) == 1 and not any(
                id(t) in internal for _, t in self.expansion(comp[0])
            ):
                n = comp[0]
                if isinstance(n, PSymbol):
                    reach[id(n)] = {id(n): one}
                else:
                    acc: dict[int, object] = {}
                    for w, t in self.expansion(n):
                        w = w if self.is_rational else float(w)
                        for s, p in reach[id(t)].items():
                            acc[s] = acc.get(s, 0) + w * p
                    reach[id(n)] = acc
                continue
            # cyclic group: solve (I - A) X = B
            order = {id(n): i for i, n in enumerate(comp)}
            k = len(comp)
            zero = Fraction(0) if self.is_rational else 0.0
            matrix = [[zero] * k for _ in range(k)]
            rhs: list[dict[int, object]] = [dict() for _ in range(k)]
            for n in comp:
                i = order[id(n)]
                matrix[i][i] += one
                for w, t in self.expansion(n):
                    w = w if self.is_rational else float(w)
                    if id(t) in internal:
                        matrix[i][order[id(t)]] -= w
                    else:
                        for s, p in reach[id(t)].items():
                            rhs[i][s] = rhs[i].get(s, zero) + w * p
            solved = _solve_linear(matrix, rhs)
            if solved is None:
                raise NonTerminatingIter(
                    "probability mass is trapped in a variable expansion loop"
                )
            for n in comp:
                reach[id(n)] = solved[order[id(n)]]
        return reach


def _free_vars(node: Prte, bound=frozenset()):
    if isinstance(node, PVar):
        return set() if node.name in bound else {node.name}
    if isinstance(node, PSymbol):
        out = set()
        for c in node.children:
            out |= _free_vars(c, bound)
        return out
    if isinstance(node, PChoice):
        out = set()
        for _, b in node.branches:
            out |= _free_vars(b, bound)
        return out
    if isinstance(node, PConcat):
        return _free_vars(node.left, bound | {node.var}) | _free_vars(node.right, bound)
    if isinstance(node, PIter):
        return _free_vars(node.body, bound | {node.var})
    return set()


def _sccs(nodes, successors):
    """Tarjan's algorithm, yielding components in reverse topological order
    (every successor component is yielded before its predecessors)."""
    index = {}
    low = {}
    on_stack = set()
    stack = []
    components = []
    counter = [0]

    def visit(n):
        key = id(n)
        index[key] = low[key] = counter[0]
        counter[0] += 1
        stack.append(n)
        on_stack.add(key)
        for _, t in successors(n):
            tk = id(t)
            if tk not in index:
                visit(t)
                low[key] = min(low[key], low[tk])
            elif tk in on_stack:
                low[key] = min(low[key], index[tk])
        if low[key] == index[key]:
            comp = []
            while True:
                m = stack.pop()
                on_stack.discard(id(m))
                comp.append(m)
                if m is n:
                    break
            components.append(comp)

    for n in nodes:
        if id(n) not in index:
            visit(n)
    return components


def _solve_linear(matrix, rhs):
    """Gaussian elimination with dict-valued right-hand sides.  Returns None
    when the system is singular."""
    k = len(matrix)
    m = [row[:] for row in matrix]
    b = [dict(r) for r in rhs]
    for col in range(k):
        pivot = None
        for r in range(col, k):
            if m[r][col] != 0:
                pivot = r
                break
        if pivot is None:
            return None
        m[col], m[pivot] = m[pivot], m[col]
        b[col], b[pivot] = b[pivot], b[col]
        pv = m[col][col]
        m[col] = [v / pv for v in m[col]]
        b[col] = {s: v / pv for s, v in b[col].items()}
        for r in range(k):
            if r == col or m[r][col] == 0:
                continue
            factor = m[r][col]
            m[r] = [vr - factor * vc for vr, vc in zip(m[r], m[col])]
            for s, v in b[col].items():
                b[r][s] = b[r].get(s, 0 * v) - factor * v
    return [{s: v for s, v in row.items() if v != 0} for row in b]


# -- marker priors and prior specifications --------------------------------------


@dataclass(frozen=True)
class MarkerPrior:
    """Distribution of the continuous parameter bound to one marker tag."""

    kind: str  # 'exp' | 'normal'
    rate: float = 1.0
    mean: float = 0.0
    stddev: float = 1.0

    def __post_init__(self):
        if self.kind not in ("exp", "normal"):
            raise InputError(f"unknown marker prior '{self.kind}'")
        if self.kind == "exp" and self.rate <= 0:
            raise InputError("exponential rate must be positive")
        if self.kind == "normal" and self.stddev <= 0:
            raise InputError("normal stddev must be positive")

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind == "exp":
            return float(rng.exponential(1.0 / self.rate))
        return float(rng.normal(self.mean, self.stddev))

    def logpdf(self, x: float) -> float:
        if self.kind == "exp":
            if x < 0:
                return -math.inf
            return math.log(self.rate) - self.rate * x
        z = (x - self.mean) / self.stddev
        return -0.5 * z * z - math.log(self.stddev) - 0.5 * math.log(2 * math.pi)


@dataclass(frozen=True)
class PriorSpec:
    """A validated prior: expression, alphabet, marker priors, sampler limits.

    ``shared`` optionally ties all markers of a tag that sit under the same
    nearest ancestor of a given (name, rank); tied occurrences consume a
    single parameter entry.
    """

    name: str
    alphabet: RankedAlphabet
    root: Prte
    max_depth: int = DEFAULT_MAX_DEPTH
    markers: dict = field(default_factory=dict)  # tag -> MarkerPrior
    theta_d_support: tuple = ()
    shared: dict = field(default_factory=dict)  # tag -> (name, rank)
    variables: tuple = ()

    def __post_init__(self):
        if self.max_depth <= 0:
            raise InputError("max_depth must be positive")
        used = collect_symbols(self.root)
        for sym in used:
            if not self.alphabet.has(sym.name, sym.rank):
                raise UnknownSymbol(f"symbol '{sym.name}/{sym.rank}' not in alphabet")
        used_tags = {s.name for s in used if is_const_marker(s)}
        declared = set(self.markers)
        if used_tags - declared:
            raise InputError(f"markers without a prior: {sorted(used_tags - declared)}")
        if declared - used_tags:
            raise InputError(f"declared markers never used: {sorted(declared - used_tags)}")
        if any(is_disc_marker(s) for s in used) and not self.theta_d_support:
            raise InputError("discrete markers present but theta_d_support is empty")
        object.__setattr__(
            self, "theta_d_support", tuple(Fraction(v) for v in self.theta_d_support)
        )
        object.__setattr__(self, "_graph", _Resolution(self.root))

    @property
    def graph(self) -> _Resolution:
        return self._graph

    @property
    def is_rational(self) -> bool:
        return self._graph.is_rational


# -- sampling --------------------------------------------------------------------


class _DepthOverflow(Exception):
    pass


def sample_tree(prior: PriorSpec, rng: np.random.Generator) -> Tree:
    """Draw one tree.  Each variable occurrence expands to an independent
    sample of its binding expression.  Samples deeper than max_depth are
    discarded and redrawn; persistent overflow raises DepthBudgetExhausted.
    The truncation slightly biases the sampled law against very deep trees;
    the density below deliberately does not truncate."""
    graph = prior.graph

    def draw(node: Prte, depth: int) -> Tree:
        while True:
            if isinstance(node, PSymbol):
                if depth > prior.max_depth:
                    raise _DepthOverflow()
                kids = tuple(draw(c, depth + 1) for c in node.children)
                return Tree(node.symbol, kids)
            if isinstance(node, PChoice):
                node = _pick_branch(node, rng)
            elif isinstance(node, PVar):
                node = graph.var_target[id(node)]
            elif isinstance(node, PConcat):
                node = node.left
            else:  # PIter
                node = node.body

    for _ in range(RESAMPLE_RETRIES):
        try:
            return draw(prior.root, 0)
        except _DepthOverflow:
            continue
    raise DepthBudgetExhausted(
        f"no sample within depth {prior.max_depth} after {RESAMPLE_RETRIES} tries"
    )


def _pick_branch(choice: PChoice, rng: np.random.Generator) -> Prte:
    r = rng.random()
    acc = 0.0
    for w, branch in choice.branches:
        acc += float(w)
        if r < acc:
            return branch
    return choice.branches[-1][1]


def compute_ties(tree: Tree, prior: PriorSpec) -> tuple:
    """Tie table for a tree under this prior's sharing rules: the i-th
    continuous-marker position (pre-order) maps to its parameter group.
    Shared tags group by the nearest ancestor matching their anchor symbol;
    everything else gets its own group."""
    keys = []
    ancestors: list[tuple] = []

    def walk(node: Tree, addr: tuple):
        sym = node.symbol
        if is_const_marker(sym):
            anchor = prior.shared.get(sym.name)
            if anchor is None:
                keys.append(("solo", addr))
            else:
                site = next(
                    (a for a, s in reversed(ancestors) if (s.name, s.rank) == tuple(anchor)),
                    ("root",),
                )
                keys.append((sym.name, site))
        ancestors.append((addr, sym))
        for i, child in enumerate(node.children, start=1):
            walk(child, addr + (i,))
        ancestors.pop()

    walk(tree, ())
    group_of: dict = {}
    ties = []
    for key in keys:
        if key not in group_of:
            group_of[key] = len(group_of)
        ties.append(group_of[key])
    return tuple(ties)


def group_tags(tree: Tree, ties: tuple) -> list:
    """Marker tag of each parameter group, aligned with theta_c."""
    tags: list = []
    positions = const_positions(tree)
    for pos, g in zip(positions, ties):
        if g == len(tags):
            tags.append(tree.node_at(pos).symbol.name)
    return tags


def sample_expression(prior: PriorSpec, rng: np.random.Generator) -> SymbolicExpression:
    """Sample a tree, then fill its parameter slots from the marker priors
    (one draw per tie group) and the discrete support."""
    tree = sample_tree(prior, rng)
    ties = compute_ties(tree, prior)
    theta_c = tuple(
        prior.markers[tag].sample(rng) for tag in group_tags(tree, ties)
    )
    n_disc = sum(1 for _, node in tree.walk() if is_disc_marker(node.symbol))
    support = prior.theta_d_support
    theta_d = tuple(support[int(rng.integers(len(support)))] for _ in range(n_disc))
    return SymbolicExpression(tree, theta_c, theta_d, ties)


# -- density ---------------------------------------------------------------------


def prte_density(prior: PriorSpec, tree: Tree):
    """Total probability that the prior generates exactly this tree, summed
    over every derivation.  Exact Fraction when all weights are rational,
    float otherwise; 0 for trees outside the language.  Unlike the sampler
    this is not depth-limited."""
    graph = prior.graph
    one = Fraction(1) if graph.is_rational else 1.0
    zero = one * 0
    by_symbol: dict = {}
    for s in graph.symbol_nodes:
        by_symbol.setdefault((s.symbol.name, s.symbol.rank), []).append(s)

    # inside values bottom-up over tree positions; val[(addr, site_id)] is the
    # probability that the emitting site generates the subtree at addr
    val: dict = {}
    order = sorted(tree.walk(), key=lambda item: len(item[0]), reverse=True)
    for addr, node in order:
        key = (node.symbol.name, node.symbol.rank)
        for site in by_symbol.get(key, ()):
            p = one
            for i in range(1, node.symbol.rank + 1):
                reach_i = graph.reach[id(site.children[i - 1])]
                child_addr = addr + (i,)
                total = zero
                for sid, w in reach_i.items():
                    v = val.get((child_addr, sid))
                    if v is not None:
                        total += w * v
                if total == 0:
                    p = zero
                    break
                p *= total
            if p != 0:
                val[(addr, id(site))] = p

    total = zero
    for sid, w in graph.reach[id(prior.root)].items():
        v = val.get(((), sid))
        if v is not None:
            total += w * v
    return total


# -- prior files -------------------------------------------------------------------


def build_prior(
    name: str,
    expression: str,
    variables=(),
    markers=None,
    theta_d_support=(),
    max_depth: int = DEFAULT_MAX_DEPTH,
    shared=None,
) -> PriorSpec:
    """Assemble and validate a prior from its textual expression.  The
    alphabet is exactly the symbols used plus the declared input variables."""
    expr = parse_prte(expression)
    symbols = collect_symbols(expr)
    for v in variables:
        symbols.add(RankedSymbol(v, 0))
    alphabet = RankedAlphabet(symbols)
    marker_priors = {}
    for tag, spec in (markers or {}).items():
        if isinstance(spec, MarkerPrior):
            marker_priors[tag] = spec
        else:
            marker_priors[tag] = _marker_from_dict(tag, spec)
    shared_anchors = {}
    for tag, anchor in (shared or {}).items():
        if isinstance(anchor, dict):
            shared_anchors[tag] = (anchor["anchor"], int(anchor["rank"]))
        else:
            shared_anchors[tag] = (anchor[0], int(anchor[1]))
    return PriorSpec(
        name=name,
        alphabet=alphabet,
        root=expr,
        max_depth=max_depth,
        markers=marker_priors,
        theta_d_support=tuple(Fraction(str(v)) for v in theta_d_support),
        shared=shared_anchors,
        variables=tuple(variables),
    )


def _marker_from_dict(tag: str, spec: dict) -> MarkerPrior:
    kind = spec.get("dist")
    if kind == "exp":
        return MarkerPrior("exp", rate=float(spec["rate"]))
    if kind == "normal":
        return MarkerPrior("normal", mean=float(spec["mean"]), stddev=float(spec["stddev"]))
    raise InputError(f"marker '{tag}': unknown distribution {kind!r}")


_PRIOR_FILE_KEYS = {
    "name",
    "expression",
    "variables",
    "markers",
    "theta_d_support",
    "max_depth",
    "shared",
}


def load_prior(source) -> PriorSpec:
    """Load a prior from a JSON file path or an already-parsed dict."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    else:
        doc = dict(source)
    unknown = set(doc) - _PRIOR_FILE_KEYS
    if unknown:
        raise InputError(f"unknown prior file keys: {sorted(unknown)}")
    if "name" not in doc or "expression" not in doc:
        raise InputError("prior file needs 'name' and 'expression'")
    return build_prior(
        name=doc["name"],
        expression=doc["expression"],
        variables=doc.get("variables", ()),
        markers=doc.get("markers", {}),
        theta_d_support=doc.get("theta_d_support", ()),
        max_depth=int(doc.get("max_depth", DEFAULT_MAX_DEPTH)),
        shared=doc.get("shared", {}),
    )
