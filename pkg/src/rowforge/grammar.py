"""Grammar DSL for tabular row formats.

Parses specs of the form

    <start>  ::= <header> '\\n' <rows>
    <header> ::= 'age' ', ' 'job' ', ' 'income'
    <rows>   ::= (<row> '\\n')*
    <row>    ::= <age> ', ' <job> ', ' <income>
    <age>    ::= <digit>+
    <job>    ::= 'librarian' | 'neurosurgeon' | 'president'
    <income> ::= <digit>+
    <digit>  ::= '0' | '1' | ... | '9'

    where int(<age>) > 18 & int(<age>) < 70

into an immutable context-free grammar, and provides seeded random
derivation-tree generation, a backtracking recognizer (used for closure and
round-trip checks), and the bridge from a `<row>` tree to a typed RowRecord.

Supported DSL features: quoted literals (escapes \\n \\t \\r \\\\ \\'),
alternatives `|`, grouping `( ... )`, repetition `*` and `+`, the character
range sugar `'0' | '1' | ... | '9'`, and a trailing `where` block of
constraints over column nonterminals.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from rowforge import constraints as _constraints


class GrammarError(Exception):
    """Base class for spec parsing and generation failures."""


class SpecSyntaxError(GrammarError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnsatisfiableGrammarError(GrammarError):
    """Raised when a nonterminal cannot be expanded to terminals within budget."""


class MalformedRowError(GrammarError):
    """Raised when a derivation tree does not spell a well-typed row."""


# --------------------------------------------------------------------------
# Grammar items and the Grammar value
# --------------------------------------------------------------------------

REP_NONE = ""
REP_STAR = "*"
REP_PLUS = "+"


@dataclass(frozen=True)
class Lit:
    text: str
    rep: str = REP_NONE


@dataclass(frozen=True)
class Ref:
    name: str  # bare nonterminal name, without angle brackets
    rep: str = REP_NONE


@dataclass(frozen=True)
class Group:
    alternatives: tuple  # tuple of alternatives; each alternative a tuple of items
    rep: str = REP_NONE


class Grammar:
    """Immutable parsed grammar plus the static constraints of its where-block.

    `productions` maps bare nonterminal names to a tuple of alternatives in
    source order. The start symbol is the first-defined nonterminal.
    """

    def __init__(self, productions, start_symbol, constraints=(), source=""):
        self.productions = dict(productions)
        self.start_symbol = start_symbol
        self.constraints = tuple(constraints)
        self.source = source
        self.nonterminals = set(self.productions)
        self.terminals = _collect_terminals(self.productions)
        self._min_cost = _expansion_costs(self.productions)
        self._alt_costs = {}   # alternative tuple -> expansion cost
        self._item_costs = {}  # item -> expansion cost
        self._nt_max_cost = {}  # nonterminal -> max alternative cost
        self._charset = None  # lazy, per-nonterminal reachable terminal chars
        self._sym = {name: f"<{name}>" for name in self.productions}
        self._lit_tables = {}  # nonterminal -> [(literal, alt_index)] or None

    def min_cost(self, name):
        return self._min_cost[name]

    def literal_table(self, name):
        """[(literal, alt_index)] when every alternative is one plain literal,
        else None. Lets the recognizer match such nonterminals directly."""
        if name not in self._lit_tables:
            table = []
            for ai, alt in enumerate(self.productions[name]):
                if len(alt) == 1 and type(alt[0]) is Lit and alt[0].rep == REP_NONE:
                    table.append((alt[0].text, ai))
                else:
                    table = None
                    break
            self._lit_tables[name] = table
        return self._lit_tables[name]

    def reachable_charset(self, name):
        if self._charset is None:
            self._charset = _reachable_charsets(self.productions)
        return self._charset[name]

    def __repr__(self):
        return (f"Grammar(start=<{self.start_symbol}>, "
                f"{len(self.nonterminals)} nonterminals, "
                f"{len(self.terminals)} terminals, "
                f"{len(self.constraints)} constraints)")


def _collect_terminals(productions):
    seen = []

    def walk(items):
        for it in items:
            if isinstance(it, Lit):
                if it.text not in seen:
                    seen.append(it.text)
            elif isinstance(it, Group):
                for alt in it.alternatives:
                    walk(alt)

    for alts in productions.values():
        for alt in alts:
            walk(alt)
    return set(seen)


INF = float("inf")


def _expansion_costs(productions):
    """Minimum nonterminal-expansion depth to bottom out, per nonterminal.

    cost(lit) = 0; cost(nt) = 1 + min over alternatives of the max item cost;
    `*` items cost 0 (zero repetitions allowed). Unreachable fixpoints stay
    infinite, which marks the nonterminal as unsatisfiable.
    """
    cost = {name: INF for name in productions}

    def item_cost(it):
        if isinstance(it, Lit):
            return 0
        if isinstance(it, Ref):
            c = cost.get(it.name, INF)
        else:
            c = min((alt_cost(alt) for alt in it.alternatives), default=INF)
        if it.rep == REP_STAR:
            return 0
        return c

    def alt_cost(alt):
        return max((item_cost(it) for it in alt), default=0)

    changed = True
    while changed:
        changed = False
        for name, alts in productions.items():
            best = 1 + min((alt_cost(a) for a in alts), default=INF)
            if best < cost[name]:
                cost[name] = best
                changed = True
    return cost


def _reachable_charsets(productions):
    """Set of terminal characters reachable from each nonterminal."""
    chars = {name: set() for name in productions}

    def item_chars(it, acc):
        if isinstance(it, Lit):
            acc.update(it.text)
        elif isinstance(it, Ref):
            acc.update(chars[it.name])
        else:
            for alt in it.alternatives:
                for sub in alt:
                    item_chars(sub, acc)

    changed = True
    while changed:
        changed = False
        for name, alts in productions.items():
            acc = set(chars[name])
            for alt in alts:
                for it in alt:
                    item_chars(it, acc)
            if acc != chars[name]:
                chars[name] = acc
                changed = True
    return chars


# --------------------------------------------------------------------------
# Tokenizer / parser for the DSL
# --------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<WS>[ \t]+)
  | (?P<NL>\n)
  | (?P<NT><[A-Za-z_][A-Za-z0-9_\-]*>)
  | (?P<DEF>::=)
  | (?P<LIT>'(?:[^'\\\n]|\\.)*')
  | (?P<ELL>\.\.\.)
  | (?P<PIPE>\|)
  | (?P<LPAR>\()
  | (?P<RPAR>\))
  | (?P<STAR>\*)
  | (?P<PLUS>\+)
  | (?P<WHERE>\bwhere\b)
""", re.VERBOSE)

_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", "\\": "\\", "'": "'"}


def _unquote(lit, line):
    body = lit[1:-1]
    out = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == "\\":
            if i + 1 >= len(body) or body[i + 1] not in _ESCAPES:
                raise SpecSyntaxError(f"bad escape in literal {lit!r}", line)
            out.append(_ESCAPES[body[i + 1]])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _tokenize(text):
    tokens = []  # (kind, value, line)
    line = 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            snippet = text[pos:pos + 20].splitlines()[0]
            raise SpecSyntaxError(f"unexpected character {snippet!r}", line)
        kind = m.lastgroup
        val = m.group()
        if kind == "NL":
            line += 1
        elif kind == "WS":
            pass
        elif kind == "WHERE":
            # hand everything after `where` to the constraint parser verbatim
            tokens.append(("WHERE", text[m.end():], line))
            return tokens
        else:
            tokens.append((kind, val, line))
        pos = m.end()
    return tokens


class _ProductionParser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    def peek(self, ahead=0):
        j = self.i + ahead
        return self.tokens[j] if j < len(self.tokens) else (None, None, None)

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def parse(self):
        productions = {}
        order = []
        while self.i < len(self.tokens):
            kind, val, line = self.peek()
            if kind == "WHERE":
                break
            if kind != "NT" or self.peek(1)[0] != "DEF":
                raise SpecSyntaxError(f"expected '<name> ::=', got {val!r}", line)
            name = val[1:-1]
            if name in productions:
                raise SpecSyntaxError(
                    f"duplicate production for <{name}> (use '|' for alternatives)", line)
            self.take()
            self.take()
            alts = self.parse_alternation(stop_at_production=True)
            productions[name] = alts
            order.append(name)
        if not order:
            raise SpecSyntaxError("no productions found", 1)
        return productions, order[0]

    def parse_alternation(self, stop_at_production=False):
        raw = [self.parse_sequence(stop_at_production)]
        while self.peek()[0] == "PIPE":
            self.take()
            if self.peek()[0] == "ELL":
                _, _, line = self.take()
                if self.peek()[0] != "PIPE":
                    raise SpecSyntaxError("expected '|' after '...'", line)
                self.take()
                hi_seq = self.parse_sequence(stop_at_production)
                raw.append(("ELLIPSIS", hi_seq, line))
            else:
                raw.append(self.parse_sequence(stop_at_production))
        return tuple(self._expand_ranges(raw))

    def _expand_ranges(self, raw):
        alts = []
        for entry in raw:
            if isinstance(entry, tuple) and entry and entry[0] == "ELLIPSIS":
                _, hi_seq, line = entry
                if not alts:
                    raise SpecSyntaxError("'...' needs a literal before it", line)
                lo_seq = alts[-1]
                ok = (len(lo_seq) == 1 and len(hi_seq) == 1
                      and isinstance(lo_seq[0], Lit) and isinstance(hi_seq[0], Lit)
                      and lo_seq[0].rep == REP_NONE and hi_seq[0].rep == REP_NONE
                      and len(lo_seq[0].text) == 1 and len(hi_seq[0].text) == 1)
                if not ok:
                    raise SpecSyntaxError(
                        "'...' must sit between single-character literals", line)
                lo, hi = lo_seq[0].text, hi_seq[0].text
                if ord(lo) > ord(hi):
                    raise SpecSyntaxError(f"empty range {lo!r} ... {hi!r}", line)
                for code in range(ord(lo) + 1, ord(hi) + 1):
                    alts.append((Lit(chr(code)),))
            else:
                alts.append(tuple(entry))
        return alts

    def parse_sequence(self, stop_at_production):
        items = []
        while True:
            kind, val, line = self.peek()
            if kind in (None, "PIPE", "RPAR", "WHERE", "ELL"):
                break
            if kind == "NT":
                if stop_at_production and self.peek(1)[0] == "DEF":
                    break  # next production starts here
                self.take()
                items.append(self._with_rep(Ref(val[1:-1])))
            elif kind == "LIT":
                self.take()
                items.append(self._with_rep(Lit(_unquote(val, line))))
            elif kind == "LPAR":
                self.take()
                inner = self.parse_alternation(stop_at_production=False)
                k2, v2, l2 = self.take()
                if k2 != "RPAR":
                    raise SpecSyntaxError(f"expected ')', got {v2!r}", l2)
                items.append(self._with_rep(Group(inner)))
            else:
                raise SpecSyntaxError(f"unexpected {val!r}", line)
        if not items:
            kind, val, line = self.peek()
            raise SpecSyntaxError("empty alternative", line)
        return items

    def _with_rep(self, item):
        kind, _, _ = self.peek()
        if kind == "STAR":
            self.take()
            return type(item)(*_replace_rep(item, REP_STAR))
        if kind == "PLUS":
            self.take()
            return type(item)(*_replace_rep(item, REP_PLUS))
        return item


def _replace_rep(item, rep):
    if isinstance(item, Lit):
        return (item.text, rep)
    if isinstance(item, Ref):
        return (item.name, rep)
    return (item.alternatives, rep)


def parse_spec(text):
    """Parse grammar DSL source into a Grammar (with attached constraints)."""
    if not text.strip():
        raise SpecSyntaxError("empty spec", 1)
    tokens = _tokenize(text)
    where_blocks = [(v, ln) for k, v, ln in tokens if k == "WHERE"]
    tokens = [t for t in tokens if t[0] != "WHERE"]
    productions, start = _ProductionParser(tokens).parse()

    _check_references(productions)
    terminals = _collect_terminals(productions)
    for name in productions:
        if f"<{name}>" in terminals:
            raise SpecSyntaxError(
                f"terminal '<{name}>' collides with nonterminal <{name}>")

    grammar = Grammar(productions, start, source=text)

    statics = []
    for block, line in where_blocks:
        exprs = _constraints.parse_constraint_block(block, line)
        if exprs:
            colmap = {name: idx
                      for idx, name in enumerate(_row_column_nts(grammar))}
            for expr in exprs:
                statics.append(_constraints.resolve(expr, colmap, grammar.nonterminals))
    grammar.constraints = tuple(statics)
    return grammar


def _check_references(productions):
    def walk(items, line_hint):
        for it in items:
            if isinstance(it, Ref) and it.name not in productions:
                raise SpecSyntaxError(f"undefined nonterminal <{it.name}>")
            if isinstance(it, Group):
                for alt in it.alternatives:
                    walk(alt, line_hint)

    for alts in productions.values():
        for alt in alts:
            walk(alt, None)


# --------------------------------------------------------------------------
# Derivation trees
# --------------------------------------------------------------------------

KIND_NT = "nt"
KIND_TERM = "term"
KIND_REP = "rep"
KIND_GROUP = "group"


class DerivationTree:
    """One node of a derivation: a nonterminal expansion, a terminal leaf,
    a repetition (children are the chosen instances), or a group.

    Equality is structural over (kind, symbol, children); alt_index is
    derived bookkeeping and excluded.
    """

    __slots__ = ("kind", "symbol", "children", "alt_index")

    def __init__(self, kind, symbol, children=(), alt_index=-1):
        self.kind = kind
        self.symbol = symbol  # "<name>" for nt, literal for term, "*"/"+"/"()"
        self.children = children
        self.alt_index = alt_index

    def __eq__(self, other):
        if not isinstance(other, DerivationTree):
            return NotImplemented
        return (self.kind == other.kind and self.symbol == other.symbol
                and self.children == other.children)

    def __repr__(self):
        return f"DerivationTree({self.kind}, {self.symbol!r}, {len(self.children)} children)"

    def text(self):
        parts = []
        stack = [self]
        while stack:
            node = stack.pop()
            if node.kind == KIND_TERM:
                parts.append(node.symbol)
            else:
                stack.extend(reversed(node.children))
        return "".join(parts)

    def nt_name(self):
        return self.symbol[1:-1]

    def __str__(self):
        return self.text()


def iter_subtrees(tree):
    """Yield (path, node) for every node, preorder. Paths are child-index tuples."""
    stack = [((), tree)]
    while stack:
        path, node = stack.pop()
        yield path, node
        for i in range(len(node.children) - 1, -1, -1):
            stack.append((path + (i,), node.children[i]))


def nonterminal_paths(tree):
    """Paths of all nonterminal-rooted nodes (the root included), preorder."""
    return [p for p, n in iter_subtrees(tree) if n.kind == KIND_NT]


def subtree_at(tree, path):
    node = tree
    for i in path:
        node = node.children[i]
    return node


def replace_at(tree, path, new_subtree):
    """Functionally replace the node at `path`; shares unchanged subtrees."""
    if not path:
        return new_subtree
    head, rest = path[0], path[1:]
    children = list(tree.children)
    children[head] = replace_at(children[head], rest, new_subtree)
    return DerivationTree(tree.kind, tree.symbol, tuple(children), tree.alt_index)


# --------------------------------------------------------------------------
# Random generation
# --------------------------------------------------------------------------

DEFAULT_DEPTH_BUDGET = 64
_REP_MEAN = 4
_REP_CAP = 20


def _sample_rep_count(rng, rep):
    if rep == REP_STAR:
        k = int(rng.geometric(1.0 / (_REP_MEAN + 1))) - 1
    else:
        k = int(rng.geometric(1.0 / _REP_MEAN))
    return min(k, _REP_CAP)


def generate_random(grammar, symbol, rng, depth_budget=DEFAULT_DEPTH_BUDGET):
    """Generate a random derivation tree rooted at `symbol`.

    Alternatives are drawn uniformly among those that can still bottom out
    within the remaining budget; as the budget tightens this automatically
    degrades to the cheapest expansions. `*`/`+` counts are geometric with
    mean 4, capped at 20. Same rng state + grammar + budget => same tree.
    """
    name = symbol[1:-1] if symbol.startswith("<") else symbol
    if name not in grammar.nonterminals:
        raise GrammarError(f"unknown symbol <{name}>")
    if depth_budget < 1:
        raise UnsatisfiableGrammarError(f"depth budget {depth_budget} < 1")
    if grammar.min_cost(name) == INF:
        raise UnsatisfiableGrammarError(
            f"<{name}> has no terminating expansion")
    return _expand_nt(grammar, name, rng, depth_budget)


def _item_cost(grammar, item):
    cached = grammar._item_costs.get(item)
    if cached is not None:
        return cached
    if isinstance(item, Lit):
        c = 0
    else:
        if isinstance(item, Ref):
            c = grammar.min_cost(item.name)
        else:
            c = min((_alt_cost(grammar, a) for a in item.alternatives), default=INF)
        if item.rep == REP_STAR:
            c = 0
    grammar._item_costs[item] = c
    return c


def _alt_cost(grammar, alt):
    cached = grammar._alt_costs.get(alt)
    if cached is None:
        cached = max((_item_cost(grammar, it) for it in alt), default=0)
        grammar._alt_costs[alt] = cached
    return cached


def _choose_alt(grammar, alternatives, rng, budget):
    feasible = [i for i, a in enumerate(alternatives)
                if _alt_cost(grammar, a) <= budget]
    if not feasible:
        raise UnsatisfiableGrammarError(
            "depth budget exhausted before the grammar bottomed out")
    if len(feasible) == 1:
        return feasible[0]
    return feasible[int(rng.integers(len(feasible)))]


def _expand_nt(grammar, name, rng, budget):
    if budget < 1:
        raise UnsatisfiableGrammarError(
            "depth budget exhausted before the grammar bottomed out")
    alts = grammar.productions[name]
    budget -= 1
    max_cost = grammar._nt_max_cost.get(name)
    if max_cost is None:
        max_cost = max(_alt_cost(grammar, a) for a in alts)
        grammar._nt_max_cost[name] = max_cost
    if budget >= max_cost:  # every alternative can still bottom out
        ai = int(rng.integers(len(alts))) if len(alts) > 1 else 0
    else:
        ai = _choose_alt(grammar, alts, rng, budget)
    children = tuple(_expand_item(grammar, it, rng, budget)
                     for it in alts[ai])
    return DerivationTree(KIND_NT, grammar._sym[name], children, ai)


def _expand_atom(grammar, item, rng, budget):
    if isinstance(item, Lit):
        return DerivationTree(KIND_TERM, item.text)
    if isinstance(item, Ref):
        return _expand_nt(grammar, item.name, rng, budget)
    ai = _choose_alt(grammar, item.alternatives, rng, budget)
    children = tuple(_expand_item(grammar, it, rng, budget)
                     for it in item.alternatives[ai])
    return DerivationTree(KIND_GROUP, "()", children, ai)


def _expand_item(grammar, item, rng, budget):
    if item.rep == REP_NONE:
        return _expand_atom(grammar, item, rng, budget)
    bare = type(item)(*_replace_rep(item, REP_NONE))
    inner_cost = _item_cost(grammar, bare)
    k = _sample_rep_count(rng, item.rep)
    if inner_cost > budget:
        k = 0  # star only: plus items are filtered out by alternative cost
    if item.rep == REP_PLUS:
        k = max(k, 1)
    instances = tuple(_expand_atom(grammar, bare, rng, budget)
                      for _ in range(k))
    return DerivationTree(KIND_REP, item.rep, instances)


# --------------------------------------------------------------------------
# Recognizer / re-parser (for closure and round-trip checks)
# --------------------------------------------------------------------------

def parse_string(grammar, text, symbol=None):
    """Parse `text` back into a derivation tree; None if not in the language.

    Alternatives are tried in source order and repetitions greedily
    (longest first), so re-parsing a generated sentence reproduces the
    generated tree whenever the sentence has a unique parse.
    """
    name = symbol if symbol is not None else grammar.start_symbol
    name = name[1:-1] if name.startswith("<") else name
    if name not in grammar.nonterminals:
        raise GrammarError(f"unknown symbol <{name}>")
    for node, pos in _parse_nt(grammar, name, text, 0):
        if pos == len(text):
            return node
    return None


def recognizes(grammar, text, symbol=None):
    return parse_string(grammar, text, symbol) is not None


def _parse_nt(grammar, name, text, pos):
    sym = grammar._sym[name]
    table = grammar.literal_table(name)
    if table is not None:
        for lit_text, ai in table:
            if text.startswith(lit_text, pos):
                leaf = DerivationTree(KIND_TERM, lit_text)
                yield DerivationTree(KIND_NT, sym, (leaf,), ai), pos + len(lit_text)
        return
    for ai, alt in enumerate(grammar.productions[name]):
        for children, p2 in _parse_seq(grammar, alt, 0, text, pos):
            yield DerivationTree(KIND_NT, sym, tuple(children), ai), p2


def _parse_seq(grammar, items, i, text, pos):
    # consume any run of plain literals iteratively before recursing
    n = len(items)
    prefix = []
    while i < n:
        it = items[i]
        if type(it) is Lit and it.rep == REP_NONE:
            if text.startswith(it.text, pos):
                prefix.append(DerivationTree(KIND_TERM, it.text))
                pos += len(it.text)
                i += 1
            else:
                return
        else:
            break
    if i == n:
        yield prefix, pos
        return
    for node, p1 in _parse_item(grammar, items[i], text, pos):
        for rest, p2 in _parse_seq(grammar, items, i + 1, text, p1):
            yield prefix + [node] + rest, p2


def _parse_atom(grammar, item, text, pos):
    if isinstance(item, Lit):
        if text.startswith(item.text, pos):
            yield DerivationTree(KIND_TERM, item.text), pos + len(item.text)
        return
    if isinstance(item, Ref):
        yield from _parse_nt(grammar, item.name, text, pos)
        return
    for ai, alt in enumerate(item.alternatives):
        for children, p2 in _parse_seq(grammar, alt, 0, text, pos):
            yield DerivationTree(KIND_GROUP, "()", tuple(children), ai), p2


def _parse_item(grammar, item, text, pos):
    if item.rep == REP_NONE:
        yield from _parse_atom(grammar, item, text, pos)
        return
    bare = type(item)(*_replace_rep(item, REP_NONE))
    min_count = 1 if item.rep == REP_PLUS else 0

    def instances(p):
        # greedy: longer repetition sequences first
        for inst, p1 in _parse_atom(grammar, bare, text, p):
            if p1 == p:
                continue  # refuse zero-width instances
            for tail, p2 in instances(p1):
                yield [inst] + tail, p2
        yield [], p

    for insts, p2 in instances(pos):
        if len(insts) >= min_count:
            yield DerivationTree(KIND_REP, item.rep, tuple(insts)), p2


# --------------------------------------------------------------------------
# Row layout and RowRecord bridge
# --------------------------------------------------------------------------

HEADER_NT = "header"
ROW_NT = "row"

NUMERIC_CHARS = set("0123456789.+-")


@dataclass(frozen=True)
class RowRecord:
    """One tabular row: numeric cells as int/float, categorical as str."""
    values: tuple

    def key(self):
        return self.values


def _row_column_nts(grammar):
    if ROW_NT not in grammar.productions:
        raise GrammarError("grammar has no <row> production")
    alts = grammar.productions[ROW_NT]
    if len(alts) != 1:
        raise GrammarError("<row> must have exactly one alternative")
    cols = []
    for it in alts[0]:
        if isinstance(it, Ref):
            if it.rep != REP_NONE:
                raise GrammarError("<row> columns must not carry * or +")
            cols.append(it.name)
        elif isinstance(it, Group):
            raise GrammarError("<row> must be a flat sequence of columns and separators")
    if not cols:
        raise GrammarError("<row> declares no columns")
    return cols


def column_kind(grammar, name):
    """`numeric` when every reachable terminal char is digit/sign/dot."""
    chars = grammar.reachable_charset(name)
    if chars and chars <= NUMERIC_CHARS and chars & set("0123456789"):
        return "numeric"
    return "categorical"


def row_layout(grammar):
    """(column names, column nonterminals, column kinds) for the row production.

    Names come from the header production's single sentence, split on commas.
    """
    col_nts = _row_column_nts(grammar)
    kinds = [column_kind(grammar, n) for n in col_nts]
    if HEADER_NT in grammar.productions:
        sentences = enumerate_language(grammar, HEADER_NT, limit=2)
        if sentences is None or len(sentences) != 1:
            raise GrammarError("<header> must derive exactly one sentence")
        names = [c.strip() for c in sentences[0].split(",")]
        if len(names) != len(col_nts):
            raise GrammarError(
                f"header has {len(names)} columns but <row> has {len(col_nts)}")
    else:
        names = list(col_nts)
    return names, col_nts, kinds


def enumerate_language(grammar, symbol, limit=10000):
    """All sentences of `symbol` in canonical source order, or None if the
    language is infinite (repetition or recursion) or exceeds `limit`."""
    name = symbol[1:-1] if symbol.startswith("<") else symbol

    def expand_items(items, on_path):
        out = [""]
        for it in items:
            if it.rep != REP_NONE:
                return None
            if isinstance(it, Lit):
                pieces = [it.text]
            elif isinstance(it, Ref):
                pieces = expand_nt(it.name, on_path)
            else:
                pieces = expand_alts(it.alternatives, on_path)
            if pieces is None:
                return None
            out = [a + b for a in out for b in pieces]
            if len(out) > limit:
                return None
        return out

    def expand_alts(alts, on_path):
        out = []
        for alt in alts:
            pieces = expand_items(alt, on_path)
            if pieces is None:
                return None
            out.extend(pieces)
            if len(out) > limit:
                return None
        return out

    def expand_nt(nt, on_path):
        if nt in on_path:
            return None  # recursion: infinite language
        return expand_alts(grammar.productions[nt], on_path | {nt})

    sentences = expand_nt(name, frozenset())
    if sentences is None:
        return None
    ordered = []
    for s in sentences:
        if s not in ordered:
            ordered.append(s)
    return ordered


def parse_cell(text, kind):
    """Type a cell string per its column kind; MalformedRowError on failure."""
    if kind == "categorical":
        return text
    try:
        return int(text)
    except ValueError:
        pass
    try:
        value = float(text)
    except ValueError:
        raise MalformedRowError(f"numeric cell {text!r} does not parse") from None
    if value != value or value in (INF, -INF):
        raise MalformedRowError(f"numeric cell {text!r} is not finite")
    return value


def tree_to_row(tree, grammar):
    """Convert a `<row>`-rooted derivation tree into a typed RowRecord.

    Column subtrees are serialized per column; literal separators discarded.
    """
    if tree.kind != KIND_NT or tree.nt_name() != ROW_NT:
        raise MalformedRowError(f"tree roots at {tree.symbol}, expected <{ROW_NT}>")
    _, col_nts, kinds = row_layout(grammar)
    cells = [c for c in tree.children if c.kind == KIND_NT]
    if [c.nt_name() for c in cells] != col_nts:
        raise MalformedRowError("row tree does not match the <row> production")
    values = tuple(parse_cell(cell.text(), kind)
                   for cell, kind in zip(cells, kinds))
    return RowRecord(values)
