"""Resemblance, utility, and privacy metrics plus report rendering.

Resemblance: per-feature 1-D Wasserstein distance between original and
synthetic data after joint min-max normalization, aggregated by unweighted
mean over all columns (categorical columns enter over their integer codes;
the aggregation choice is stated in the report header so alternatives can
be recomputed from the per-feature lines).

Utility: the four train/test combinations (Original, Generated,
Train Original - Test Generated, Train Generated - Test Original) for a
small model zoo, with seeded splits shared across tasks so the Original and
Train Generated - Test Original rows are scored on the identical test set.

Privacy: exact-match audit that no synthetic row equals an original row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rowforge import ml
from rowforge import tabular


class EvaluationError(Exception):
    pass


# --------------------------------------------------------------------------
# Wasserstein distance
# --------------------------------------------------------------------------

def wasserstein_1d(a, b):
    """W1 between the empirical distributions of two sample sequences.

    Equal sizes reduce to the mean absolute difference of sorted samples;
    unequal sizes integrate |F_a^{-1} - F_b^{-1}| piecewise over the merged
    quantile breakpoints.
    """
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    if len(a) == 0 or len(b) == 0:
        raise EvaluationError("wasserstein_1d needs nonempty samples")
    n, m = len(a), len(b)
    if n == m:
        return float(np.mean(np.abs(a - b)))
    qs = np.union1d(np.arange(1, n + 1) / n, np.arange(1, m + 1) / m)
    prev = np.concatenate([[0.0], qs[:-1]])
    widths = qs - prev
    mids = (qs + prev) / 2.0
    ia = np.ceil(mids * n).astype(np.int64) - 1
    ib = np.ceil(mids * m).astype(np.int64) - 1
    return float(np.sum(np.abs(a[ia] - b[ib]) * widths))


# --------------------------------------------------------------------------
# Resemblance
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ResemblanceReport:
    per_feature: tuple   # ((column name, distance), ...) in schema order
    aggregate: float     # unweighted mean over features

    def distances(self):
        return dict(self.per_feature)


def resemblance(original, synthetic):
    """Joint min-max normalization, then per-column W1, mean-aggregated."""
    if original.schema != synthetic.schema:
        raise EvaluationError("resemblance needs a shared schema")
    if len(original) == 0 or len(synthetic) == 0:
        raise EvaluationError("resemblance needs nonempty datasets")
    norm_o, norm_s = tabular.normalize(original, synthetic)
    mo, ms = norm_o.to_matrix(), norm_s.to_matrix()
    per_feature = []
    for j, col in enumerate(original.schema.columns):
        per_feature.append((col.name, wasserstein_1d(mo[:, j], ms[:, j])))
    aggregate = float(np.mean([d for _, d in per_feature]))
    return ResemblanceReport(tuple(per_feature), aggregate)


# --------------------------------------------------------------------------
# Utility
# --------------------------------------------------------------------------

TASK_ORIGINAL = "Original"
TASK_GENERATED = "Generated"
TASK_TRAIN_ORIG_TEST_GEN = "Train Original - Test Generated"
TASK_TRAIN_GEN_TEST_ORIG = "Train Generated - Test Original"
ALL_TASKS = (TASK_ORIGINAL, TASK_GENERATED,
             TASK_TRAIN_ORIG_TEST_GEN, TASK_TRAIN_GEN_TEST_ORIG)

MODEL_TREE = "decision tree"
MODEL_FOREST = "random forest"
MODEL_NB = "gaussian nb"

TRAIN_FRACTION = 0.7


@dataclass(frozen=True)
class UtilityMatrix:
    score_kind: str             # "accuracy" | "r2"
    models: tuple               # model names in report order
    cells: tuple                # ((model, task, score-or-None), ...)

    def score(self, model, task):
        for m, t, s in self.cells:
            if m == model and t == task:
                return s
        raise KeyError((model, task))


def _features_and_target(dataset, target_index):
    m = dataset.to_matrix()
    feats = [j for j in range(m.shape[1]) if j != target_index]
    return m[:, feats], m[:, target_index]


def _fit(model_name, task_kind, X, y, seed, forest_trees):
    ml_task = ml.TASK_CLASSIFY if task_kind == "classification" else ml.TASK_REGRESS
    if model_name == MODEL_TREE:
        return ml.fit_tree(X, y, ml_task)
    if model_name == MODEL_FOREST:
        return ml.fit_forest(X, y, ml_task, n_trees=forest_trees, seed=seed)
    if model_name == MODEL_NB:
        return ml.fit_gaussian_nb(X, y)
    raise EvaluationError(f"unknown model {model_name!r}")


def utility_matrix(original, synthetic, task_column, task_kind, seed=0,
                   models=None, forest_trees=100):
    """Train/test the model zoo over the four dataset combinations.

    Both datasets are split 70/30 with the same seed; cross tasks train on
    one dataset's train share and test on the other's held-out share.
    """
    if task_kind not in ("classification", "regression"):
        raise EvaluationError(f"unknown task kind {task_kind!r}")
    if original.schema != synthetic.schema:
        raise EvaluationError("utility_matrix needs a shared schema")
    target = original.schema.index_of(task_column)
    kind = "accuracy" if task_kind == "classification" else "r2"
    if models is None:
        models = ((MODEL_TREE, MODEL_FOREST, MODEL_NB)
                  if task_kind == "classification"
                  else (MODEL_TREE, MODEL_FOREST))

    o_train, o_test = tabular.split(original, TRAIN_FRACTION, seed)
    g_train, g_test = tabular.split(synthetic, TRAIN_FRACTION, seed)
    shares = {
        "o_train": _features_and_target(o_train, target),
        "o_test": _features_and_target(o_test, target),
        "g_train": _features_and_target(g_train, target),
        "g_test": _features_and_target(g_test, target),
    }
    plan = (
        (TASK_ORIGINAL, "o_train", "o_test"),
        (TASK_GENERATED, "g_train", "g_test"),
        (TASK_TRAIN_ORIG_TEST_GEN, "o_train", "g_test"),
        (TASK_TRAIN_GEN_TEST_ORIG, "g_train", "o_test"),
    )
    cells = []
    for mi, model_name in enumerate(models):
        fitted = {}
        for side_i, side in enumerate(("o_train", "g_train")):
            X, y = shares[side]
            sub_seed = int(np.random.SeedSequence([seed, mi, side_i])
                           .generate_state(1)[0])
            fitted[side] = _fit(model_name, task_kind, X, y, sub_seed,
                                forest_trees)
        for task, train_side, test_side in plan:
            Xt, yt = shares[test_side]
            try:
                pred = fitted[train_side].predict(Xt)
                cells.append((model_name, task, ml.score(yt, pred, kind)))
            except ml.UndefinedScoreError:
                cells.append((model_name, task, None))
    return UtilityMatrix(kind, tuple(models), tuple(cells))


# --------------------------------------------------------------------------
# Privacy
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PrivacyAudit:
    duplicate_count: int
    duplicate_indices: tuple  # indices into the synthetic dataset


def privacy_audit(original, synthetic):
    """Exact-equality audit: synthetic rows identical to any original row."""
    if original.schema != synthetic.schema:
        raise EvaluationError("privacy_audit needs a shared schema")
    seen = {r.values for r in original.rows}
    indices = tuple(i for i, r in enumerate(synthetic.rows)
                    if r.values in seen)
    return PrivacyAudit(len(indices), indices)


# --------------------------------------------------------------------------
# Report rendering
# --------------------------------------------------------------------------

def render_report(resemblance_report, utility, audit, run_lines=()):
    out = []
    out.append("RESEMBLANCE")
    out.append("  per-feature 1-D Wasserstein distance on jointly min-max")
    out.append("  normalized columns; aggregate = unweighted mean over all")
    out.append("  columns (categorical over integer codes)")
    for name, dist in resemblance_report.per_feature:
        out.append(f"  {name}: {dist:.6f}")
    out.append(f"  aggregate: {resemblance_report.aggregate:.6f}")
    out.append("")
    out.append("UTILITY")
    out.append(f"  score kind: {utility.score_kind}")
    width = max(len(m) for m in utility.models)
    for model in utility.models:
        for task in ALL_TASKS:
            s = utility.score(model, task)
            rendered = "undefined" if s is None else f"{s:.6f}"
            out.append(f"  {model:<{width}}  {task:<31}  {rendered}")
    out.append("")
    out.append("PRIVACY")
    out.append(f"  synthetic rows equal to an original row: {audit.duplicate_count}")
    if audit.duplicate_count:
        shown = ", ".join(str(i) for i in audit.duplicate_indices[:20])
        more = "" if audit.duplicate_count <= 20 else ", ..."
        out.append(f"  offending synthetic row indices: {shown}{more}")
    if run_lines:
        out.append("")
        out.append("RUN")
        for line in run_lines:
            out.append(f"  {line}")
    return "\n".join(out) + "\n"


def report_csv_rows(resemblance_report, utility, audit):
    rows = [("section", "name", "task", "value")]
    for name, dist in resemblance_report.per_feature:
        rows.append(("resemblance", name, "", f"{dist:.6f}"))
    rows.append(("resemblance", "aggregate", "", f"{resemblance_report.aggregate:.6f}"))
    for model in utility.models:
        for task in ALL_TASKS:
            s = utility.score(model, task)
            rows.append(("utility", model, task,
                         "undefined" if s is None else f"{s:.6f}"))
    rows.append(("privacy", "duplicate_count", "", str(audit.duplicate_count)))
    return rows


def write_report(path_txt, path_csv, resemblance_report, utility, audit,
                 run_lines=()):
    with open(path_txt, "w", encoding="utf-8") as fh:
        fh.write(render_report(resemblance_report, utility, audit, run_lines))
    with open(path_csv, "w", encoding="utf-8") as fh:
        for row in report_csv_rows(resemblance_report, utility, audit):
            fh.write(",".join(f'"{c}"' if "," in c else c for c in row) + "\n")
