"""Deterministic fixture datasets with planted feature dependencies.

The public benchmark datasets are external downloads, so tests and demos run
against generated stand-ins instead: each fixture is a CSV dataset, a
grammar whose language strictly contains every row, and a sidecar meta text
documenting the planted dependency and the achievable score ceiling
(1 - sigma^2 / Var(target) for an affine target with Gaussian noise).

Generation is pure in (spec, seed): same spec -> identical CSV bytes.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from rowforge import grammar as G
from rowforge import tabular


class FixtureError(Exception):
    pass


@dataclass(frozen=True)
class NumericColumn:
    name: str
    lo: float
    hi: float
    decimals: int = 0  # 0 -> integer-valued column

    def int_digits(self):
        """Digits needed for the integer part; values render zero-padded to
        this width so the grammar can use a fixed-width digit production
        (which keeps grammar-random proposals uniform over the range)."""
        return max(1, len(str(int(self.hi))))


@dataclass(frozen=True)
class CategoricalColumn:
    name: str
    tokens: tuple
    weights: tuple = ()  # empty -> uniform


@dataclass(frozen=True)
class AffineTarget:
    """target = sum(coef * numeric column) + shift[categorical token] + noise."""
    name: str
    coefficients: tuple      # ((column name, coefficient), ...)
    shifts: tuple = ()       # ((column name, ((token, shift), ...)), ...)
    noise_sigma: float = 0.0
    lo: float = 0.0
    hi: float = 9999.0
    decimals: int = 0


@dataclass(frozen=True)
class FixtureSpec:
    name: str
    rows: int
    columns: tuple           # NumericColumn / CategoricalColumn, in order
    target: AffineTarget
    seed: int = 0


def mini_insurance(rows=600, seed=0):
    """Desk-scale insurance stand-in: 4 features, affine target with noise.

    charges = 50*age + 800*(smoker == yes) + N(0, 200); bmi and region are
    planted as pure noise features.
    """
    return FixtureSpec(
        name="mini_insurance",
        rows=rows,
        columns=(
            NumericColumn("age", 18, 65, 0),
            NumericColumn("bmi", 15.0, 45.0, 1),
            CategoricalColumn("smoker", ("no", "yes"), (0.75, 0.25)),
            CategoricalColumn("region", ("north", "south", "east", "west")),
        ),
        target=AffineTarget(
            name="charges",
            coefficients=(("age", 50.0),),
            shifts=(("smoker", (("no", 0.0), ("yes", 800.0))),),
            noise_sigma=200.0,
            lo=0, hi=9999, decimals=0,
        ),
        seed=seed,
    )


def _render_numeric(value, decimals, int_digits=1):
    if decimals == 0:
        return f"{int(round(value)):0{int_digits}d}"
    whole = f"{value:.{decimals}f}"
    int_part, frac = whole.split(".")
    return f"{int(int_part):0{int_digits}d}.{frac}"


def _sample_columns(spec, rng):
    cells = []
    for col in spec.columns:
        if isinstance(col, NumericColumn):
            v = col.lo + (col.hi - col.lo) * rng.random()
            if col.decimals == 0:
                v = float(int(round(v)))
            else:
                v = round(v, col.decimals)
            cells.append((col.name, v))
        else:
            if col.weights:
                p = np.asarray(col.weights, dtype=np.float64)
                p = p / p.sum()
                k = int(rng.choice(len(col.tokens), p=p))
            else:
                k = int(rng.integers(len(col.tokens)))
            cells.append((col.name, col.tokens[k]))
    return dict(cells)


def _target_value(spec, cells, rng):
    t = spec.target
    v = 0.0
    for name, coef in t.coefficients:
        v += coef * float(cells[name])
    for name, table in t.shifts:
        v += dict(table)[cells[name]]
    if t.noise_sigma > 0:
        v += rng.normal(0.0, t.noise_sigma)
    v = min(max(v, t.lo), t.hi)
    if t.decimals == 0:
        return float(int(round(v)))
    return round(v, t.decimals)


def fixture_rows(spec):
    """The fixture's rows as rendered cell strings, deterministically."""
    rng = np.random.default_rng(spec.seed)
    rows = []
    seen = set()
    for _ in range(spec.rows):
        for _attempt in range(1000):
            cells = _sample_columns(spec, rng)
            target = _target_value(spec, cells, rng)
            rendered = []
            for col in spec.columns:
                v = cells[col.name]
                if isinstance(col, NumericColumn):
                    rendered.append(_render_numeric(v, col.decimals,
                                                    col.int_digits()))
                else:
                    rendered.append(v)
            t = spec.target
            rendered.append(_render_numeric(
                target, t.decimals, max(1, len(str(int(t.hi))))))
            key = tuple(rendered)
            if key not in seen:
                seen.add(key)
                rows.append(rendered)
                break
        else:
            raise FixtureError("could not draw a fresh unique row")
    return rows


def fixture_grammar_text(spec):
    """A grammar whose language strictly contains every fixture row."""
    col_defs = list(spec.columns)
    names = [c.name for c in col_defs] + [spec.target.name]

    lines = []
    lines.append("<start>   ::= <header> '\\n' <rows>")
    header = " ', ' ".join(f"'{n}'" for n in names)
    lines.append(f"<header>  ::= {header}")
    lines.append("<rows>    ::= (<row> '\\n')*")
    row = " ', ' ".join(f"<{n}>" for n in names)
    lines.append(f"<row>     ::= {row}")

    constraints = []
    numeric_like = col_defs + [NumericColumn(spec.target.name, spec.target.lo,
                                             spec.target.hi, spec.target.decimals)]
    for col in numeric_like:
        if isinstance(col, NumericColumn):
            whole = " ".join("<digit>" for _ in range(col.int_digits()))
            if col.decimals == 0:
                lines.append(f"<{col.name}> ::= {whole}")
                constraints.append(
                    f"where int(<{col.name}>) >= {int(col.lo)} "
                    f"& int(<{col.name}>) <= {int(col.hi)}")
            else:
                frac = " ".join("<digit>" for _ in range(col.decimals))
                lines.append(f"<{col.name}> ::= {whole} '.' {frac}")
                constraints.append(
                    f"where float(<{col.name}>) >= {col.lo} "
                    f"& float(<{col.name}>) <= {col.hi}")
        else:
            alts = " | ".join(f"'{t}'" for t in col.tokens)
            lines.append(f"<{col.name}> ::= {alts}")
    lines.append("<digit>   ::= '0' | '1' | ... | '9'")
    lines.append("")
    lines.extend(constraints)
    return "\n".join(lines) + "\n"


def fixture_csv_text(spec):
    """CSV text using the grammar's ', ' separator, so each data line is a
    sentence of the <row> production."""
    names = [c.name for c in spec.columns] + [spec.target.name]
    out = [", ".join(names)]
    for row in fixture_rows(spec):
        out.append(", ".join(row))
    return "\n".join(out) + "\n"


def fixture_meta_text(spec):
    t = spec.target
    terms = [f"{coef:g}*{name}" for name, coef in t.coefficients]
    for name, table in t.shifts:
        parts = "/".join(f"{tok}:{shift:g}" for tok, shift in table)
        terms.append(f"shift[{name}]({parts})")
    rule = " + ".join(terms) if terms else "pure noise"
    lines = [
        f"fixture: {spec.name}",
        f"rows: {spec.rows}",
        f"seed: {spec.seed}",
        f"columns: {', '.join(c.name for c in spec.columns)}",
        f"target: {t.name} = {rule} + noise(sigma={t.noise_sigma:g}), "
        f"clamped to [{t.lo:g}, {t.hi:g}]",
    ]
    ceiling = r2_ceiling(spec)
    if ceiling is not None:
        lines.append(f"theoretical r2 ceiling (1 - sigma^2/Var(target)): "
                     f"{ceiling:.4f}")
    return "\n".join(lines) + "\n"


def r2_ceiling(spec):
    """1 - sigma^2 / Var(target), estimated from the generated data itself."""
    t = spec.target
    if t.noise_sigma <= 0:
        return None
    rows = fixture_rows(spec)
    targets = np.array([float(r[-1]) for r in rows])
    var = float(np.var(targets))
    if var == 0:
        return None
    return 1.0 - (t.noise_sigma ** 2) / var


def make_fixture(spec):
    """(dataset, grammar text, meta text) for the fixture.

    The dataset is loaded back through the normal CSV path so it is exactly
    what a run would see.
    """
    grammar_text = fixture_grammar_text(spec)
    grammar = G.parse_spec(grammar_text)
    schema = tabular.derive_schema(grammar, task_column=spec.target.name)
    csv_text = fixture_csv_text(spec)
    import tempfile
    with tempfile.NamedTemporaryFile("w", suffix=".csv", delete=False,
                                     encoding="utf-8") as fh:
        fh.write(csv_text)
        tmp = fh.name
    try:
        dataset = tabular.load_csv(tmp, schema)
    finally:
        os.unlink(tmp)
    return dataset, grammar_text, fixture_meta_text(spec)


def write_fixture(spec, out_dir):
    """Write <name>.csv, <name>.spec, <name>.meta.txt; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    base = os.path.join(out_dir, spec.name)
    paths = {"csv": base + ".csv", "spec": base + ".spec",
             "meta": base + ".meta.txt"}
    with open(paths["csv"], "w", encoding="utf-8") as fh:
        fh.write(fixture_csv_text(spec))
    with open(paths["spec"], "w", encoding="utf-8") as fh:
        fh.write(fixture_grammar_text(spec))
    with open(paths["meta"], "w", encoding="utf-8") as fh:
        fh.write(fixture_meta_text(spec))
    return paths
