"""Ranked alphabets, labeled trees, and symbolic expressions.

A tree is a recursive node structure; child-index addresses (1-based tuples,
root = empty tuple) are derived on demand rather than stored.  A symbolic
expression couples a tree with parameter vectors: rank-0 symbols whose name
ends in ``#`` are continuous-parameter markers (``d#`` alone marks a discrete
parameter), and each marker occurrence consumes one parameter entry in
pre-order.  Everything here is immutable and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import (
    ArityMismatch,
    InputError,
    LengthMismatch,
    NotPrefixClosed,
    UnknownSymbol,
    format_address,
)

DISC_MARKER_NAME = "d#"
HOLE_NAME = "?"

# Denominators smaller than this are treated as division by zero.
DIV_EPS = 1e-300


@dataclass(frozen=True, order=True)
class RankedSymbol:
    """A symbol with a fixed number of children."""

    name: str
    rank: int

    def __post_init__(self):
        if not self.name:
            raise InputError("symbol name must be non-empty")
        if self.rank < 0:
            raise InputError(f"symbol '{self.name}' has negative rank")

    def __str__(self):
        return self.name


HOLE = RankedSymbol(HOLE_NAME, 0)


def is_const_marker(symbol: RankedSymbol) -> bool:
    return symbol.rank == 0 and symbol.name.endswith("#") and symbol.name != DISC_MARKER_NAME


def is_disc_marker(symbol: RankedSymbol) -> bool:
    return symbol.rank == 0 and symbol.name == DISC_MARKER_NAME


def is_numeric_literal(symbol: RankedSymbol) -> bool:
    """Rank-0 symbols whose name parses as a decimal or fraction, e.g. '1',
    '0.5', '-2/3'.  They evaluate to themselves."""
    if symbol.rank != 0:
        return False
    try:
        Fraction(symbol.name)
        return True
    except (ValueError, ZeroDivisionError):
        return False


class RankedAlphabet:
    """A finite set of ranked symbols, keyed by (name, rank).

    The same surface name may appear at several ranks (e.g. a binary and a
    ternary sum); they are distinct symbols.  Marker symbols must have rank 0.
    The hole symbol '?' is reserved for context queries and rejected here.
    """

    def __init__(self, symbols):
        table = {}
        for sym in symbols:
            if sym.name == HOLE_NAME:
                raise InputError("'?' is reserved for context holes")
            key = (sym.name, sym.rank)
            if key in table:
                raise InputError(f"duplicate symbol {sym.name}/{sym.rank}")
            if sym.name.endswith("#") and sym.rank != 0:
                raise InputError(f"marker symbol '{sym.name}' must have rank 0")
            table[key] = sym
        if not table:
            raise InputError("alphabet must be non-empty")
        self._table = table

    def __iter__(self):
        return iter(self._table.values())

    def __len__(self):
        return len(self._table)

    def __contains__(self, symbol: RankedSymbol):
        return self._table.get((symbol.name, symbol.rank)) == symbol

    def has(self, name: str, rank: int) -> bool:
        return (name, rank) in self._table

    def get(self, name: str, rank: int) -> RankedSymbol:
        try:
            return self._table[(name, rank)]
        except KeyError:
            raise UnknownSymbol(f"no symbol '{name}' of rank {rank} in alphabet") from None

    def by_name(self, name: str):
        return [s for s in self._table.values() if s.name == name]

    @property
    def const_markers(self):
        return tuple(s for s in self._table.values() if is_const_marker(s))

    @property
    def disc_markers(self):
        return tuple(s for s in self._table.values() if is_disc_marker(s))

    def symbol_keys(self):
        return frozenset(self._table)


@dataclass(frozen=True)
class Tree:
    """An immutable labeled tree; child count always equals the symbol rank."""

    symbol: RankedSymbol
    children: tuple = ()

    def __post_init__(self):
        if len(self.children) != self.symbol.rank:
            raise ArityMismatch((), self.symbol.name, self.symbol.rank, len(self.children))

    # -- address arithmetic ----------------------------------------------

    def node_at(self, address) -> "Tree":
        node = self
        for i in address:
            node = node.children[i - 1]
        return node

    def replace_at(self, address, subtree: "Tree") -> "Tree":
        if not address:
            return subtree
        i = address[0]
        kids = list(self.children)
        kids[i - 1] = kids[i - 1].replace_at(address[1:], subtree)
        return Tree(self.symbol, tuple(kids))

    def walk(self, prefix=()):
        """Yield (address, node) pairs in pre-order.  Iterative so that very
        deep trees stay within the interpreter's recursion limit."""
        stack = [(prefix, self)]
        while stack:
            addr, node = stack.pop()
            yield addr, node
            for i in range(node.symbol.rank, 0, -1):
                stack.append((addr + (i,), node.children[i - 1]))

    def addresses(self):
        return [addr for addr, _ in self.walk()]

    @property
    def size(self) -> int:
        return sum(1 for _ in self.walk())

    @property
    def depth(self) -> int:
        return max(len(addr) for addr, _ in self.walk())

    def __str__(self):
        return format_tree(self)


def validate_tree(candidate, alphabet: RankedAlphabet) -> Tree:
    """Check an address -> symbol map against the tree axioms and build the
    verified tree.

    Addresses are tuples of 1-based child indices (strings of digits are also
    accepted, '' for the root).  Values may be RankedSymbol instances or
    symbol names; names are resolved against the alphabet using the child
    count observed in the map.
    """
    entries = {}
    for raw_addr, raw_sym in candidate.items():
        addr = _coerce_address(raw_addr)
        entries[addr] = raw_sym
    if not entries:
        raise InputError("tree map is empty")
    if () not in entries:
        raise NotPrefixClosed(min(entries, key=len))
    for addr in entries:
        if addr and addr[:-1] not in entries:
            raise NotPrefixClosed(addr)

    child_count = {}
    for addr in entries:
        if addr:
            parent = addr[:-1]
            child_count[parent] = max(child_count.get(parent, 0), addr[-1])
    # every node must have children indexed exactly 1..k with no gaps
    for addr in sorted(entries, key=len):
        k = child_count.get(addr, 0)
        for j in range(1, k + 1):
            if addr + (j,) not in entries:
                raise InputError(
                    f"missing child {j} of node {format_address(addr)}"
                )

    def build(addr) -> Tree:
        raw = entries[addr]
        k = child_count.get(addr, 0)
        if isinstance(raw, RankedSymbol):
            sym = raw
            if sym not in alphabet:
                raise UnknownSymbol(f"symbol '{sym.name}/{sym.rank}' not in alphabet")
        else:
            sym = _resolve_name(str(raw), k, alphabet, addr)
        if sym.rank != k:
            raise ArityMismatch(addr, sym.name, sym.rank, k)
        return Tree(sym, tuple(build(addr + (j,)) for j in range(1, k + 1)))

    return build(())


def _coerce_address(raw):
    if isinstance(raw, tuple):
        return tuple(int(i) for i in raw)
    if isinstance(raw, str):
        return tuple(int(ch) for ch in raw)
    if isinstance(raw, int):
        return (raw,) if raw else ()
    raise InputError(f"bad address {raw!r}")


def _resolve_name(
    name: str, observed_children: int, alphabet: RankedAlphabet, addr=()
) -> RankedSymbol:
    if alphabet.has(name, observed_children):
        return alphabet.get(name, observed_children)
    candidates = alphabet.by_name(name)
    if not candidates:
        raise UnknownSymbol(f"symbol '{name}' not in alphabet")
    # the name exists at other ranks only: report the arity clash
    raise ArityMismatch(addr, name, candidates[0].rank, observed_children)


def positions_of(tree: Tree, symbol: RankedSymbol):
    """Pre-order list of addresses labeled with the given symbol."""
    return [addr for addr, node in tree.walk() if node.symbol == symbol]


def const_positions(tree: Tree):
    return [addr for addr, node in tree.walk() if is_const_marker(node.symbol)]


def disc_positions(tree: Tree):
    return [addr for addr, node in tree.walk() if is_disc_marker(node.symbol)]


@dataclass(frozen=True)
class SymbolicExpression:
    """A tree plus the parameter values its markers bind to.

    ``ties`` maps the i-th continuous-marker position (pre-order) to an index
    into ``theta_c``; several positions may share one entry (tied parameters).
    Group indices are canonical: numbered by first occurrence.  Without ties,
    it is the identity and |theta_c| equals the marker count.
    """

    tree: Tree
    theta_c: tuple = ()
    theta_d: tuple = ()
    ties: tuple = None  # type: ignore[assignment]

    def __post_init__(self):
        n_pos = len(const_positions(self.tree))
        ties = self.ties
        if ties is None:
            ties = tuple(range(n_pos))
            object.__setattr__(self, "ties", ties)
        if len(ties) != n_pos:
            raise LengthMismatch(
                f"{n_pos} continuous markers but tie table of length {len(ties)}"
            )
        seen = 0
        for g in ties:
            if g == seen:
                seen += 1
            elif g > seen:
                raise InputError("tie groups must be numbered by first occurrence")
        groups = seen
        object.__setattr__(self, "theta_c", tuple(float(v) for v in self.theta_c))
        if len(self.theta_c) != groups:
            raise LengthMismatch(
                f"{groups} marker groups but {len(self.theta_c)} continuous parameters"
            )
        if any(not np.isfinite(v) for v in self.theta_c):
            raise InputError("continuous parameters must be finite")
        n_disc = len(disc_positions(self.tree))
        object.__setattr__(
            self, "theta_d", tuple(Fraction(v) for v in self.theta_d)
        )
        if len(self.theta_d) != n_disc:
            raise LengthMismatch(
                f"{n_disc} discrete markers but {len(self.theta_d)} discrete parameters"
            )

    @property
    def n_groups(self) -> int:
        return len(self.theta_c)


def eval_expression(expr: SymbolicExpression, inputs) -> np.ndarray:
    """Evaluate the expression pointwise on equal-length input columns.

    Arithmetic symbols: '+' (rank 2 or 3), '-' and '*' and '/' and 'pow'
    (rank 2); rank-0 symbols are numeric literals, parameter markers, or
    input variables.  Domain violations (division by ~0, fractional power of
    a negative base, overflow) leave non-finite entries in the result rather
    than raising; callers map those to log-likelihood -inf.
    """
    columns = {name: np.asarray(col, dtype=float) for name, col in inputs.items()}
    lengths = {col.shape[0] for col in columns.values()}
    if len(lengths) > 1:
        raise LengthMismatch(f"input columns differ in length: {sorted(lengths)}")
    n = lengths.pop() if lengths else 1

    marker_values = [expr.theta_c[g] for g in expr.ties]
    disc_values = [float(v) for v in expr.theta_d]
    counters = {"c": 0, "d": 0}

    def ev(node: Tree) -> np.ndarray:
        sym = node.symbol
        if sym.rank == 0:
            if is_const_marker(sym):
                v = marker_values[counters["c"]]
                counters["c"] += 1
                return np.full(n, v)
            if is_disc_marker(sym):
                v = disc_values[counters["d"]]
                counters["d"] += 1
                return np.full(n, v)
            if is_numeric_literal(sym):
                return np.full(n, float(Fraction(sym.name)))
            if sym.name in columns:
                return columns[sym.name].copy()
            raise UnknownSymbol(f"variable '{sym.name}' missing from inputs")
        args = [ev(c) for c in node.children]
        with np.errstate(all="ignore"):
            if sym.name == "+":
                out = args[0] + args[1]
                for extra in args[2:]:
                    out = out + extra
                return out
            if sym.name == "-" and sym.rank == 2:
                return args[0] - args[1]
            if sym.name == "*" and sym.rank == 2:
                return args[0] * args[1]
            if sym.name == "/" and sym.rank == 2:
                den = args[1]
                out = args[0] / np.where(np.abs(den) < DIV_EPS, np.nan, den)
                return out
            if sym.name == "pow" and sym.rank == 2:
                return np.power(args[0], args[1])
        raise UnknownSymbol(f"no evaluation rule for '{sym.name}/{sym.rank}'")

    return ev(expr.tree)


# -- prefix text format -------------------------------------------------------


def format_tree(tree: Tree) -> str:
    """Parenthesized prefix form: '(+ a b)', bare name for leaves."""
    parts = []
    stack = [("node", tree)]
    while stack:
        kind, item = stack.pop()
        if kind == "text":
            parts.append(item)
        elif not item.children:
            parts.append(item.symbol.name)
        else:
            parts.append(f"({item.symbol.name} ")
            stack.append(("text", ")"))
            for idx in range(len(item.children) - 1, -1, -1):
                stack.append(("node", item.children[idx]))
                if idx > 0:
                    stack.append(("text", " "))
    return "".join(parts)


def parse_tree(text: str, alphabet: RankedAlphabet | None = None) -> Tree:
    """Parse the prefix form.  With an alphabet, symbols must resolve against
    it ((name, child-count) lookup); without one, symbols are inferred from
    the shape of the text."""
    tokens = _tokenize_sexpr(text)
    pos = 0

    def parse() -> Tree:
        nonlocal pos
        if pos >= len(tokens):
            raise InputError("unexpected end of tree text")
        tok = tokens[pos]
        pos += 1
        if tok == "(":
            if pos >= len(tokens) or tokens[pos] in "()":
                raise InputError("expected symbol after '('")
            name = tokens[pos]
            pos += 1
            kids = []
            while pos < len(tokens) and tokens[pos] != ")":
                kids.append(parse())
            if pos >= len(tokens):
                raise InputError("missing ')'")
            pos += 1
            sym = _lookup(name, len(kids))
            return Tree(sym, tuple(kids))
        if tok == ")":
            raise InputError("unexpected ')'")
        return Tree(_lookup(tok, 0))

    def _lookup(name, k):
        if alphabet is None:
            return RankedSymbol(name, k)
        return _resolve_name(name, k, alphabet)

    out = parse()
    if pos != len(tokens):
        raise InputError("trailing input after tree text")
    return out


def _tokenize_sexpr(text: str):
    tokens = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch in "()":
            tokens.append(ch)
            i += 1
        else:
            j = i
            while j < len(text) and not text[j].isspace() and text[j] not in "()":
                j += 1
            tokens.append(text[i:j])
            i = j
    return tokens


def infer_alphabet(tree: Tree) -> RankedAlphabet:
    """Alphabet consisting of exactly the symbols used in the tree."""
    return RankedAlphabet({node.symbol for _, node in tree.walk()})
