"""Typed tabular datasets: loading, cleaning, encoding, splitting, scaling.

The column schema is derived from the grammar, never from the private data:
column names come from the header production, kinds from the reachable
terminal characters, and categorical vocabularies from the grammar's
alternatives in source order. The resulting encoder is therefore identical
for original and synthetic data, and original tokens outside the grammar
vocabulary are a hard error (they signal a wrong spec).

Preprocessing drops duplicate rows and rows with missing cells, and maps
categorical tokens to their vocabulary indices so every column is numeric
for the models downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rowforge.grammar import RowRecord, enumerate_language, row_layout


class TabularError(Exception):
    pass


class HeaderMismatchError(TabularError):
    pass


class UnknownCategoryError(TabularError):
    pass


class TooSmallError(TabularError):
    pass


DEFAULT_MISSING_MARKERS = ("", "?", "NA")

PROV_ORIGINAL = "original"
PROV_SYNTHETIC = "synthetic"


@dataclass(frozen=True)
class Column:
    name: str
    nonterminal: str
    kind: str                 # "numeric" | "categorical"
    vocabulary: tuple = ()    # source-order tokens; empty for numeric
    is_target: bool = False


class ColumnSchema:
    def __init__(self, columns):
        self.columns = tuple(columns)
        targets = [i for i, c in enumerate(self.columns) if c.is_target]
        if len(targets) > 1:
            raise TabularError("more than one target column")
        self.target_index = targets[0] if targets else None

    @property
    def names(self):
        return [c.name for c in self.columns]

    def column(self, name):
        for c in self.columns:
            if c.name == name:
                return c
        raise TabularError(f"no column named {name!r}")

    def index_of(self, name):
        for i, c in enumerate(self.columns):
            if c.name == name:
                return i
        raise TabularError(f"no column named {name!r}")

    def feature_indices(self):
        return [i for i in range(len(self.columns)) if i != self.target_index]

    def __len__(self):
        return len(self.columns)

    def __eq__(self, other):
        return isinstance(other, ColumnSchema) and self.columns == other.columns

    def __repr__(self):
        return f"ColumnSchema({[c.name for c in self.columns]})"


_VOCAB_LIMIT = 10000


def derive_schema(grammar, task_column=None):
    """Build the schema from the grammar's header and row productions.

    Categorical vocabularies are the column nonterminal's full (finite)
    language in source order.
    """
    names, col_nts, kinds = row_layout(grammar)
    columns = []
    for name, nt, kind in zip(names, col_nts, kinds):
        vocab = ()
        if kind == "categorical":
            sentences = enumerate_language(grammar, nt, limit=_VOCAB_LIMIT)
            if sentences is None:
                raise TabularError(
                    f"categorical column {name!r} (<{nt}>) has an infinite "
                    f"or oversized vocabulary")
            vocab = tuple(sentences)
        columns.append(Column(name, nt, kind, vocab,
                              is_target=(name == task_column)))
    schema = ColumnSchema(columns)
    if task_column is not None and schema.target_index is None:
        raise TabularError(f"task column {task_column!r} not in schema")
    return schema


class Dataset:
    """Ordered rows under one schema, tagged original or synthetic.

    Treat datasets as immutable: operations return new values.
    `encoded` marks that preprocessing has mapped categorical cells to
    vocabulary indices.
    """

    def __init__(self, schema, rows, provenance, encoded=False):
        self.schema = schema
        self.rows = list(rows)
        self.provenance = provenance
        self.encoded = encoded

    def __len__(self):
        return len(self.rows)

    def to_matrix(self):
        """Rows as a float matrix; requires encoded (all-numeric) cells."""
        if not self.encoded:
            raise TabularError("to_matrix needs a preprocessed (encoded) dataset")
        return np.array([r.values for r in self.rows], dtype=np.float64)

    def column_values(self, index):
        return [r.values[index] for r in self.rows]

    def replace_rows(self, rows, encoded=None):
        return Dataset(self.schema, rows, self.provenance,
                       self.encoded if encoded is None else encoded)

    def __repr__(self):
        return (f"Dataset({self.provenance}, {len(self.rows)} rows x "
                f"{len(self.schema)} cols, encoded={self.encoded})")


class Encoder:
    """The single encoding contract shared by the discriminator and the
    utility models: numeric cells as floats, categorical cells as their
    grammar-vocabulary index."""

    def __init__(self, schema):
        self.schema = schema
        self._codes = [
            {tok: i for i, tok in enumerate(c.vocabulary)}
            if c.kind == "categorical" else None
            for c in schema.columns
        ]

    def encode_cell(self, value, col_index):
        codes = self._codes[col_index]
        if codes is None:
            return float(value)
        if isinstance(value, str):
            try:
                return float(codes[value])
            except KeyError:
                col = self.schema.columns[col_index]
                raise UnknownCategoryError(
                    f"token {value!r} not in the vocabulary of column "
                    f"{col.name!r} {list(col.vocabulary)}") from None
        return float(value)  # already a code

    def decode_cell(self, value, col_index):
        col = self.schema.columns[col_index]
        if col.kind != "categorical" or isinstance(value, str):
            return value
        return col.vocabulary[int(value)]

    def encode_row(self, row):
        return [self.encode_cell(v, i) for i, v in enumerate(row.values)]

    def encode_rows(self, rows):
        return np.array([self.encode_row(r) for r in rows], dtype=np.float64)


def _parse_numeric(text):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        v = float(text)
    except ValueError:
        return None
    if v != v or v in (float("inf"), float("-inf")):
        return None
    return v


def load_csv(path, schema, missing_markers=DEFAULT_MISSING_MARKERS,
             provenance=PROV_ORIGINAL):
    """Load a comma-separated file against the schema (order-sensitive header).

    Unparseable numeric cells and missing-value markers load as missing
    (None) and are dropped by preprocess().
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    lines = [ln for ln in lines if ln != ""]
    if not lines:
        raise HeaderMismatchError(f"{path}: empty file, expected header "
                                  f"{schema.names}")
    header = [c.strip() for c in lines[0].split(",")]
    if header != schema.names:
        raise HeaderMismatchError(
            f"{path}: header {header} does not match schema {schema.names}")
    markers = set(missing_markers)
    rows = []
    for ln in lines[1:]:
        cells = [c.strip() for c in ln.split(",")]
        if len(cells) != len(schema.columns):
            raise TabularError(
                f"{path}: row has {len(cells)} cells, expected {len(schema.columns)}")
        values = []
        for text, col in zip(cells, schema.columns):
            if text in markers:
                values.append(None)
            elif col.kind == "numeric":
                values.append(_parse_numeric(text))
            else:
                values.append(text)
        rows.append(RowRecord(tuple(values)))
    return Dataset(schema, rows, provenance)


def preprocess(data):
    """Drop duplicates (first kept) and rows with missing cells; encode
    categorical cells to vocabulary indices. Idempotent."""
    if data.encoded:
        rows, seen = [], set()
        for r in data.rows:
            if None not in r.values and r.values not in seen:
                seen.add(r.values)
                rows.append(r)
        return data.replace_rows(rows)
    encoder = Encoder(data.schema)
    rows, seen = [], set()
    for r in data.rows:
        if None in r.values:
            continue
        encoded = tuple(encoder.encode_cell(v, i)
                        for i, v in enumerate(r.values))
        if encoded in seen:
            continue
        seen.add(encoded)
        rows.append(RowRecord(encoded))
    return Dataset(data.schema, rows, data.provenance, encoded=True)


def split(data, train_fraction, seed):
    """Seeded uniform shuffle, then an (approximately) train_fraction prefix."""
    if not 0 < train_fraction < 1:
        raise TabularError(f"train_fraction {train_fraction} not in (0, 1)")
    n = len(data.rows)
    if n < 2:
        raise TooSmallError(f"cannot split {n} row(s)")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = int(n * train_fraction)
    n_train = min(max(n_train, 1), n - 1)
    train = [data.rows[i] for i in perm[:n_train]]
    test = [data.rows[i] for i in perm[n_train:]]
    return data.replace_rows(train), data.replace_rows(test)


def normalize(a, b):
    """Per-column min-max scaling to [0, 1] over the union of both datasets.

    Constant columns map to 0.0 everywhere so distances over them vanish.
    """
    if a.schema != b.schema:
        raise TabularError("normalize needs two datasets with the same schema")
    ma, mb = a.to_matrix(), b.to_matrix()
    both = np.vstack([ma, mb]) if len(mb) else ma
    lo = both.min(axis=0)
    hi = both.max(axis=0)
    span = hi - lo
    span[span == 0] = np.inf  # constant columns -> 0.0 after scaling

    def scale(m, ds):
        scaled = (m - lo) / span
        rows = [RowRecord(tuple(float(x) for x in r)) for r in scaled]
        return ds.replace_rows(rows)

    return scale(ma, a), scale(mb, b)


def write_csv(data, path):
    """Write the dataset with tokens decoded back to their surface form."""
    encoder = Encoder(data.schema)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(data.schema.names) + "\n")
        for r in data.rows:
            cells = []
            for i, v in enumerate(r.values):
                if data.encoded:
                    v = encoder.decode_cell(v, i)
                if isinstance(v, float) and v == int(v):
                    v = int(v)
                cells.append(str(v))
            fh.write(",".join(cells) + "\n")
