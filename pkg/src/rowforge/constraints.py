"""Static row constraints and the discriminator-as-constraint.

The `where` block of a spec is a boolean expression over column values,
e.g. `int(<age>) > 18 & int(<age>) < 70`. Top-level `&` conjuncts are split
into separate constraints so each contributes its own slot to the fitness
score. The discriminator enters the same machinery as one extra, strictly
binary constraint: satisfied iff the model labels the row "original".

Fitness is graded to give the evolutionary search a gradient: an unsatisfied
numeric comparison `x op c` earns partial credit 1/(1 + |x-c|/max(1,|c|)),
clamped just below 1 so a score of exactly 1.0 always means every constraint
is satisfied.
"""

from __future__ import annotations

import re
from dataclasses import dataclass


class ConstraintError(Exception):
    """Base class for constraint parsing and evaluation failures."""


class ConstraintSyntaxError(ConstraintError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaMismatchError(ConstraintError):
    """A constraint references a column the row does not have."""


class EncodingError(ConstraintError):
    """A row could not be encoded for the classifier."""


# Labels shared by the discriminator constraint and the pipeline.
LABEL_SYNTHETIC = 0
LABEL_ORIGINAL = 1


# --------------------------------------------------------------------------
# Expression AST
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Text:
    value: str


@dataclass(frozen=True)
class ColRef:
    name: str          # bare nonterminal name of the column
    coerce: str        # "int" | "float" | "str"
    index: int = -1    # resolved column position; -1 until resolve()


@dataclass(frozen=True)
class Compare:
    op: str            # one of == != < <= > >=
    lhs: object
    rhs: object


@dataclass(frozen=True)
class BoolOp:
    op: str            # "and" | "or"
    parts: tuple


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------

_C_TOKEN_RE = re.compile(r"""
    (?P<WS>[ \t]+)
  | (?P<NL>\n)
  | (?P<WHERE>\bwhere\b)
  | (?P<COERCE>\b(?:int|float)\b)
  | (?P<NT><[A-Za-z_][A-Za-z0-9_\-]*>)
  | (?P<NUM>-?\d+(?:\.\d+)?)
  | (?P<STR>'(?:[^'\\\n]|\\.)*')
  | (?P<OP>==|!=|<=|>=|<|>|=)
  | (?P<AND>&)
  | (?P<OR>\|)
  | (?P<LPAR>\()
  | (?P<RPAR>\))
""", re.VERBOSE)

_STR_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", "\\": "\\", "'": "'"}


def _c_tokenize(text, line):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _C_TOKEN_RE.match(text, pos)
        if not m:
            raise ConstraintSyntaxError(
                f"unexpected character {text[pos:pos + 10]!r} in constraint", line)
        kind = m.lastgroup
        if kind == "NL":
            line += 1
        elif kind != "WS":
            tokens.append((kind, m.group(), line))
        pos = m.end()
    return tokens


class _ConstraintParser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None, None)

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def parse_expr(self):
        node = self.parse_and()
        while self.peek()[0] == "OR":
            self.take()
            rhs = self.parse_and()
            if isinstance(node, BoolOp) and node.op == "or":
                node = BoolOp("or", node.parts + (rhs,))
            else:
                node = BoolOp("or", (node, rhs))
        return node

    def parse_and(self):
        node = self.parse_comparison()
        while self.peek()[0] == "AND":
            self.take()
            rhs = self.parse_comparison()
            if isinstance(node, BoolOp) and node.op == "and":
                node = BoolOp("and", node.parts + (rhs,))
            else:
                node = BoolOp("and", (node, rhs))
        return node

    def parse_comparison(self):
        lhs = self.parse_operand()
        kind, val, line = self.peek()
        if kind == "OP":
            self.take()
            rhs = self.parse_operand()
            op = "==" if val == "=" else val
            return Compare(op, lhs, rhs)
        return lhs

    def parse_operand(self):
        kind, val, line = self.take()
        if kind == "NUM":
            return Num(float(val) if "." in val else int(val))
        if kind == "STR":
            return Text(_c_unquote(val, line))
        if kind == "NT":
            return ColRef(val[1:-1], "str")
        if kind == "COERCE":
            k2, v2, l2 = self.take()
            if k2 != "LPAR":
                raise ConstraintSyntaxError(f"expected '(' after {val}", l2)
            k3, v3, l3 = self.take()
            if k3 != "NT":
                raise ConstraintSyntaxError(f"expected <column> inside {val}(...)", l3)
            k4, v4, l4 = self.take()
            if k4 != "RPAR":
                raise ConstraintSyntaxError(f"expected ')' after {v3}", l4)
            return ColRef(v3[1:-1], val)
        if kind == "LPAR":
            node = self.parse_expr()
            k2, v2, l2 = self.take()
            if k2 != "RPAR":
                raise ConstraintSyntaxError(f"expected ')', got {v2!r}", l2)
            return node
        raise ConstraintSyntaxError(f"unexpected {val!r} in constraint", line)


def _c_unquote(lit, line):
    body = lit[1:-1]
    out = []
    i = 0
    while i < len(body):
        if body[i] == "\\":
            if i + 1 >= len(body) or body[i + 1] not in _STR_ESCAPES:
                raise ConstraintSyntaxError(f"bad escape in {lit!r}", line)
            out.append(_STR_ESCAPES[body[i + 1]])
            i += 2
        else:
            out.append(body[i])
            i += 1
    return "".join(out)


def parse_constraint_block(text, line=1):
    """Parse a where-block into expression ASTs, one per top-level conjunct.

    Repeated `where` keywords inside the block act as statement separators.
    """
    tokens = _c_tokenize(text, line)
    if not tokens:
        return []
    statements = [[]]
    for tok in tokens:
        if tok[0] == "WHERE":
            statements.append([])
        else:
            statements[-1].append(tok)
    exprs = []
    for stmt in statements:
        if not stmt:
            continue
        parser = _ConstraintParser(stmt)
        node = parser.parse_expr()
        kind, val, ln = parser.peek()
        if kind is not None:
            raise ConstraintSyntaxError(f"unexpected trailing {val!r}", ln)
        exprs.extend(_split_conjuncts(node))
    return exprs


def _split_conjuncts(node):
    if isinstance(node, BoolOp) and node.op == "and":
        out = []
        for part in node.parts:
            out.extend(_split_conjuncts(part))
        return out
    return [node]


# --------------------------------------------------------------------------
# Resolution against a grammar's row layout
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StaticConstraint:
    """One resolved boolean constraint over a row."""
    expr: object
    source: str

    def __str__(self):
        return self.source


def resolve(expr, column_indices, known_nonterminals):
    """Bind column references to row positions; reject unknown references."""

    def bind(node):
        if isinstance(node, ColRef):
            if node.name not in known_nonterminals:
                raise ConstraintSyntaxError(
                    f"undefined nonterminal <{node.name}> in constraint")
            if node.name not in column_indices:
                raise ConstraintSyntaxError(
                    f"constraint references <{node.name}>, which is not a row column")
            return ColRef(node.name, node.coerce, column_indices[node.name])
        if isinstance(node, Compare):
            return Compare(node.op, bind(node.lhs), bind(node.rhs))
        if isinstance(node, BoolOp):
            return BoolOp(node.op, tuple(bind(p) for p in node.parts))
        return node

    bound = bind(expr)
    return StaticConstraint(bound, _render(bound))


def _render(node):
    if isinstance(node, Num):
        v = node.value
        return str(int(v)) if isinstance(v, int) or v == int(v) else str(v)
    if isinstance(node, Text):
        return f"'{node.value}'"
    if isinstance(node, ColRef):
        if node.coerce == "str":
            return f"<{node.name}>"
        return f"{node.coerce}(<{node.name}>)"
    if isinstance(node, Compare):
        return f"{_render(node.lhs)} {node.op} {_render(node.rhs)}"
    joiner = " & " if node.op == "and" else " | "
    return "(" + joiner.join(_render(p) for p in node.parts) + ")"


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------

def _eval_operand(node, row):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Text):
        return node.value
    if isinstance(node, ColRef):
        if node.index < 0 or node.index >= len(row.values):
            raise SchemaMismatchError(
                f"constraint references column <{node.name}> "
                f"(index {node.index}) absent from a {len(row.values)}-cell row")
        value = row.values[node.index]
        if node.coerce == "int":
            try:
                return int(value)
            except (TypeError, ValueError):
                raise ConstraintError(
                    f"int(<{node.name}>) on non-numeric value {value!r}") from None
        if node.coerce == "float":
            try:
                return float(value)
            except (TypeError, ValueError):
                raise ConstraintError(
                    f"float(<{node.name}>) on non-numeric value {value!r}") from None
        return value
    raise ConstraintError(f"cannot evaluate {node!r} as an operand")


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _eval_expr(node, row):
    if isinstance(node, Compare):
        lhs = _eval_operand(node.lhs, row)
        rhs = _eval_operand(node.rhs, row)
        if node.op == "==":
            return lhs == rhs
        if node.op == "!=":
            return lhs != rhs
        if not (_is_number(lhs) and _is_number(rhs)):
            raise ConstraintError(
                f"ordering comparison on non-numeric operands {lhs!r}, {rhs!r}")
        if node.op == "<":
            return lhs < rhs
        if node.op == "<=":
            return lhs <= rhs
        if node.op == ">":
            return lhs > rhs
        return lhs >= rhs
    if isinstance(node, BoolOp):
        if node.op == "and":
            return all(_eval_expr(p, row) for p in node.parts)
        return any(_eval_expr(p, row) for p in node.parts)
    raise ConstraintError(f"constraint does not evaluate to a boolean: {node!r}")


def eval_static(constraint, row):
    """True iff the row satisfies the constraint (short-circuit evaluation)."""
    return bool(_eval_expr(constraint.expr, row))


# Partial credit never reaches 1.0, so fitness 1.0 <=> everything satisfied.
_CREDIT_CAP = 1.0 - 1e-9


def static_credit(constraint, row):
    """Partial credit in [0, 1) for an unsatisfied constraint.

    Atomic numeric comparisons earn 1/(1 + |x-c|/max(1,|c|)), which rewards
    near misses; anything else earns 0.
    """
    node = constraint.expr
    if not isinstance(node, Compare):
        return 0.0
    try:
        x = _eval_operand(node.lhs, row)
        c = _eval_operand(node.rhs, row)
    except ConstraintError:
        return 0.0
    if not (_is_number(x) and _is_number(c)):
        return 0.0
    credit = 1.0 / (1.0 + abs(x - c) / max(1.0, abs(c)))
    return min(credit, _CREDIT_CAP)


# --------------------------------------------------------------------------
# The discriminator as a constraint
# --------------------------------------------------------------------------

class ClassifierConstraint:
    """Satisfied iff the frozen discriminator labels the row `target_label`."""

    def __init__(self, model, encoder, target_label=LABEL_ORIGINAL):
        self.model = model
        self.encoder = encoder
        self.target_label = target_label

    def predict_rows(self, rows):
        X = self.encoder.encode_rows(rows)
        return self.model.predict(X)


def eval_classifier(constraint, row, encoder=None):
    """True iff the discriminator predicts the target label for the row."""
    enc = encoder if encoder is not None else constraint.encoder
    X = enc.encode_rows([row])
    label = constraint.model.predict(X)[0]
    return int(label) == constraint.target_label


# --------------------------------------------------------------------------
# Fitness
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FitnessScore:
    value: float
    satisfied: bool
    classifier_ok: object = None  # None when no classifier constraint was set


def _combine(sat_flags, credits, classifier_ok):
    parts = []
    for ok, credit in zip(sat_flags, credits):
        parts.append(1.0 if ok else credit)
    if classifier_ok is not None:
        parts.append(1.0 if classifier_ok else 0.0)
    if not parts:
        return FitnessScore(1.0, True, classifier_ok)
    satisfied = all(sat_flags) and classifier_ok in (None, True)
    value = sum(parts) / len(parts)
    if satisfied:
        value = 1.0
    return FitnessScore(value, satisfied, classifier_ok)


def fitness(row, statics, classifier=None):
    """Score = (satisfied constraints + partial credits) / total constraints.

    The classifier counts as one constraint and is strictly binary.
    """
    flags = [eval_static(c, row) for c in statics]
    credits = [0.0 if ok else static_credit(c, row)
               for ok, c in zip(flags, statics)]
    cls_ok = None
    if classifier is not None:
        cls_ok = eval_classifier(classifier, row)
    return _combine(flags, credits, cls_ok)


class ConstraintSet:
    """Bundle of static constraints plus an optional classifier constraint.

    `score_rows` batches the discriminator predictions, which is what the
    evolutionary engine calls once per generation.
    """

    def __init__(self, statics=(), classifier=None):
        self.statics = tuple(statics)
        self.classifier = classifier

    def fitness(self, row):
        return fitness(row, self.statics, self.classifier)

    def score_rows(self, rows):
        if self.classifier is not None and rows:
            labels = self.classifier.predict_rows(rows)
            cls_ok = [int(l) == self.classifier.target_label for l in labels]
        else:
            cls_ok = [None] * len(rows)
        scores = []
        for row, ok in zip(rows, cls_ok):
            flags = [eval_static(c, row) for c in self.statics]
            credits = [0.0 if f else static_credit(c, row)
                       for f, c in zip(flags, self.statics)]
            scores.append(_combine(flags, credits, ok))
        return scores
