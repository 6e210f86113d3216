"""The three-phase synthesis loop.

Phase 1 parses the spec, preprocesses the original CSV, generates an equal
number of purely grammar-random rows, and trains the first discriminator on
the labeled union (70/30 split, held-out accuracy logged). Phase 2 evolves
row populations and collects every never-seen-before row that satisfies the
statics and fools the active discriminator; collected rows re-seed the
population each iteration. Phase 3 retrains the discriminator on original
vs collected rows and hands it back to phase 2. Rounds repeat until the
round budget or an optional utility target is met.

Everything is driven by one master seed; two runs with the same config
produce byte-identical artifacts (synthetic.csv, run_log.csv, report.txt).
"""

from __future__ import annotations

import os
from collections import deque
from dataclasses import dataclass

import numpy as np

from rowforge import evaluation
from rowforge import evolution
from rowforge import grammar as G
from rowforge import ml
from rowforge import tabular
from rowforge.constraints import (LABEL_ORIGINAL, LABEL_SYNTHETIC,
                                  ClassifierConstraint, ConstraintSet,
                                  eval_static)


class PipelineError(Exception):
    pass


class ConfigError(PipelineError):
    pass


class CannotRetrainError(PipelineError):
    pass


TRAIN_FRACTION = 0.7
FOOL_WINDOW = 200  # rolling sample count for the discriminator-degraded stop

STOP_QUOTA = "quota"
STOP_ITERATIONS = "iteration budget"
STOP_STALL = "stall"
STOP_DEGRADED = "discriminator degraded"


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    spec_path: str
    data_path: str
    out_dir: str = ""
    seed: int = 0
    desired_good_samples: int | None = None  # None -> dataset size
    max_iterations: int | None = None        # None -> dataset size
    rounds: int = 3
    retrain_accuracy_threshold: float = 0.55
    stall_window: int = 50
    utility_target: float | None = None
    task_column: str | None = None
    task_kind: str | None = None             # classification | regression
    population_size: int = 100
    elite_fraction: float = 0.1
    mutation_rate: float = 0.8
    crossover_rate: float = 0.6
    tournament_size: int = 3
    tree_max_depth: int = 12
    tree_min_leaf: int = 5
    forest_trees: int = 100

    def __post_init__(self):
        if self.desired_good_samples is not None and self.desired_good_samples < 1:
            raise ConfigError("good_samples must be >= 1")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if not 0.5 <= self.retrain_accuracy_threshold < 1:
            raise ConfigError("retrain_threshold must be in [0.5, 1)")
        if self.stall_window < 1:
            raise ConfigError("stall_window must be >= 1")
        if self.task_kind not in (None, "classification", "regression"):
            raise ConfigError(f"unknown task_kind {self.task_kind!r}")
        if self.task_column is not None and self.task_kind is None:
            raise ConfigError("task_column needs a task_kind")

    def evolution_config(self):
        return evolution.EvolutionConfig(
            population_size=self.population_size,
            elite_fraction=self.elite_fraction,
            mutation_rate=self.mutation_rate,
            crossover_rate=self.crossover_rate,
            tournament_size=self.tournament_size,
            seed=self.seed,
        )


# config-file key -> (attribute, parser)
_INT = int
_FLOAT = float
_STR = str


def _opt_int(v):
    return None if v.lower() in ("", "none") else int(v)


def _opt_float(v):
    return None if v.lower() in ("", "none") else float(v)


CONFIG_KEYS = {
    "spec": ("spec_path", _STR),
    "data": ("data_path", _STR),
    "out": ("out_dir", _STR),
    "seed": ("seed", _INT),
    "good_samples": ("desired_good_samples", _opt_int),
    "max_iterations": ("max_iterations", _opt_int),
    "rounds": ("rounds", _INT),
    "retrain_threshold": ("retrain_accuracy_threshold", _FLOAT),
    "stall_window": ("stall_window", _INT),
    "utility_target": ("utility_target", _opt_float),
    "task_column": ("task_column", _STR),
    "task_kind": ("task_kind", _STR),
    "population_size": ("population_size", _INT),
    "elite_fraction": ("elite_fraction", _FLOAT),
    "mutation_rate": ("mutation_rate", _FLOAT),
    "crossover_rate": ("crossover_rate", _FLOAT),
    "tournament_size": ("tournament_size", _INT),
    "tree_max_depth": ("tree_max_depth", _INT),
    "tree_min_leaf": ("tree_min_leaf", _INT),
    "forest_trees": ("forest_trees", _INT),
}

_REQUIRED_KEYS = ("spec", "data", "out")


def parse_config_text(text, path="<config>"):
    """key = value per line, '#' comments; returns {key: raw string}."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        raw[key] = value
    return raw


def build_config(raw, require=_REQUIRED_KEYS):
    for key in require:
        if key not in raw or raw[key] == "":
            raise ConfigError(f"config is missing required key {key!r}")
    kwargs = {}
    for key, value in raw.items():
        attr, parse = CONFIG_KEYS[key]
        try:
            kwargs[attr] = parse(value)
        except ValueError:
            raise ConfigError(f"bad value for {key!r}: {value!r}") from None
    return PipelineConfig(**kwargs)


def load_config(path, overrides=(), require=_REQUIRED_KEYS):
    """Read a config file and apply `k=v` override strings on top."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = parse_config_text(fh.read(), path)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = (part.strip() for part in item.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown override key {key!r}")
        raw[key] = value
    return build_config(raw, require)


# --------------------------------------------------------------------------
# State
# --------------------------------------------------------------------------

@dataclass
class LogRecord:
    round: int
    iteration: int
    new_good: int
    cumulative_good: int
    fool_rate: float


@dataclass
class RoundSummary:
    round: int
    holdout_accuracy: float
    iterations: int = 0
    new_good: int = 0
    stop_reason: str = ""
    utility: float | None = None


class PipelineState:
    def __init__(self, config, grammar, schema, encoder, original):
        self.config = config
        self.grammar = grammar
        self.schema = schema
        self.encoder = encoder
        self.original = original            # preprocessed (encoded) dataset
        self.original_matrix = original.to_matrix()
        self.original_keys = {r.values for r in original.rows}
        self.discriminator = None
        self.round_index = 0
        self.good_trees = []
        self.good_rows = []                  # raw (surface) RowRecords
        self.good_keys = set()
        self.good_rounds = []                # collection round per good row
        self.original_overlap = 0            # collected rows equal to an original
        self.run_log = []
        self.rounds = []                     # RoundSummary per round
        self.messages = []
        self._evo_rng = np.random.default_rng(
            np.random.SeedSequence([config.seed, 2]))

    @property
    def n_original(self):
        return len(self.original)

    def desired_total(self):
        d = self.config.desired_good_samples
        return d if d is not None else self.n_original

    def iteration_budget(self):
        m = self.config.max_iterations
        return m if m is not None else self.n_original

    def log(self, message):
        self.messages.append(message)

    def run_lines(self):
        lines = [
            f"seed: {self.config.seed}",
            f"original rows (preprocessed): {self.n_original}",
            f"rounds executed: {len(self.rounds)}",
            f"good samples collected: {len(self.good_rows)} "
            f"({self.original_overlap} equal to an original row)",
        ]
        for rs in self.rounds:
            extra = "" if rs.utility is None else f", utility {rs.utility:.6f}"
            lines.append(
                f"round {rs.round}: holdout accuracy {rs.holdout_accuracy:.6f}, "
                f"iterations {rs.iterations}, new good {rs.new_good}, "
                f"stop {rs.stop_reason}{extra}")
        lines.extend(self.messages)
        return lines


def _derived_seed(master, *tags):
    return int(np.random.SeedSequence([master, *tags]).generate_state(1)[0])


def _split_xy(X, y, fraction, seed):
    """70/30-style split of a feature matrix, mirroring tabular.split."""
    n = len(y)
    if n < 2:
        raise tabular.TooSmallError(f"cannot split {n} row(s)")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = min(max(int(n * fraction), 1), n - 1)
    tr, te = perm[:n_train], perm[n_train:]
    return X[tr], X[te], y[tr], y[te]


def _fit_discriminator(state, X_syn_half, round_index):
    """Train original-vs-synthetic CART on the labeled union, 70/30 split."""
    config = state.config
    X = np.vstack([state.original_matrix, X_syn_half])
    y = np.concatenate([
        np.full(len(state.original_matrix), LABEL_ORIGINAL),
        np.full(len(X_syn_half), LABEL_SYNTHETIC),
    ])
    split_seed = _derived_seed(config.seed, 1, round_index)
    X_tr, X_te, y_tr, y_te = _split_xy(X, y, TRAIN_FRACTION, split_seed)
    params = ml.TreeParams(max_depth=config.tree_max_depth,
                           min_samples_leaf=config.tree_min_leaf)
    disc = ml.fit_tree(X_tr, y_tr, ml.TASK_CLASSIFY, params)
    accuracy = ml.score(y_te, disc.predict(X_te), "accuracy")
    return disc, accuracy


# --------------------------------------------------------------------------
# Phase 1: spec + initial generation + first discriminator
# --------------------------------------------------------------------------

def phase1_setup(config):
    with open(config.spec_path, "r", encoding="utf-8") as fh:
        grammar = G.parse_spec(fh.read())
    schema = tabular.derive_schema(grammar, config.task_column)
    encoder = tabular.Encoder(schema)
    raw = tabular.load_csv(config.data_path, schema)
    original = tabular.preprocess(raw)
    if len(original) < 2:
        raise tabular.TooSmallError(
            f"original dataset has {len(original)} usable row(s) after "
            f"preprocessing; need at least 2 to split")

    state = PipelineState(config, grammar, schema, encoder, original)
    n = state.n_original
    gen_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    rows = [G.tree_to_row(G.generate_random(grammar, G.ROW_NT, gen_rng), grammar)
            for _ in range(n)]
    X_syn = encoder.encode_rows(rows)

    disc, accuracy = _fit_discriminator(state, X_syn, round_index=1)
    state.discriminator = disc
    state.rounds.append(RoundSummary(round=1, holdout_accuracy=accuracy))
    if accuracy < config.retrain_accuracy_threshold:
        state.log(f"warning: initial discriminator held-out accuracy "
                  f"{accuracy:.3f} is near chance; the grammar already "
                  f"mimics the data")
    state.round_index = 1
    return state


# --------------------------------------------------------------------------
# Phase 2: good-sample collection
# --------------------------------------------------------------------------

def collect_good_samples(state, config=None):
    """Evolve, extract rows that satisfy everything, re-seed, repeat.

    One call is one round: it stops when the accumulated pool reaches the
    (global) good-sample quota, on the iteration budget, on a stall, or when
    the rolling discriminator accuracy drops to chance (retraining time).
    """
    config = config or state.config
    if state.discriminator is None:
        raise PipelineError("no active discriminator; run phase1_setup first")
    evo_cfg = config.evolution_config()
    cset = ConstraintSet(
        state.grammar.constraints,
        ClassifierConstraint(state.discriminator, state.encoder))
    rng = state._evo_rng
    desired = state.desired_total()
    budget = state.iteration_budget()
    window = deque(maxlen=FOOL_WINDOW)
    summary = state.rounds[-1]

    def reseed():
        pop = evolution.seed_population(state.good_trees, evo_cfg,
                                        state.grammar, rng)
        return evolution.score_population(pop, cset, state.grammar)

    pop = reseed()
    iterations = 0
    collected = 0
    last_new = 0
    stop = None
    while True:
        if len(state.good_rows) >= desired:
            stop = STOP_QUOTA
            break
        if iterations >= budget:
            stop = STOP_ITERATIONS
            break
        if iterations - last_new >= config.stall_window:
            stop = STOP_STALL
            break
        if (len(window) == FOOL_WINDOW
                and 1.0 - _mean(window) < config.retrain_accuracy_threshold):
            stop = STOP_DEGRADED
            break
        iterations += 1
        pop = evolution.evolve_step(pop, cset, state.grammar, evo_cfg, rng)
        new = 0
        for i, (tree, score) in enumerate(pop.members):
            if i >= evo_cfg.n_elites:  # fresh offspring only, not elite copies
                window.append(1.0 if score.classifier_ok else 0.0)
            if not score.satisfied:
                continue
            row = G.tree_to_row(tree, state.grammar)
            key = row.values
            if key in state.good_keys:
                continue
            state.good_keys.add(key)
            state.good_trees.append(tree)
            state.good_rows.append(row)
            state.good_rounds.append(state.round_index)
            if _encoded_key(state.encoder, row) in state.original_keys:
                state.original_overlap += 1
            new += 1
        collected += new
        if new:
            last_new = iterations
        state.run_log.append(LogRecord(
            round=state.round_index,
            iteration=iterations,
            new_good=new,
            cumulative_good=len(state.good_rows),
            fool_rate=_mean(window),
        ))
        pop = reseed()
    summary.iterations = iterations
    summary.new_good = collected
    summary.stop_reason = stop
    return state


def _mean(values):
    return sum(values) / len(values) if values else 0.0


def _encoded_key(encoder, row):
    return tuple(encoder.encode_cell(v, i) for i, v in enumerate(row.values))


# --------------------------------------------------------------------------
# Phase 3: retraining
# --------------------------------------------------------------------------

def retrain_discriminator(state, config=None):
    """New discriminator: original vs accumulated good samples."""
    config = config or state.config
    if not state.good_rows:
        raise CannotRetrainError("no good samples to retrain on")
    if len(state.good_rows) < 10:
        state.log(f"warning: retraining on only {len(state.good_rows)} "
                  f"good sample(s)")
    X_good = state.encoder.encode_rows(state.good_rows)
    next_round = state.round_index + 1
    disc, accuracy = _fit_discriminator(state, X_good, round_index=next_round)
    state.discriminator = disc
    state.round_index = next_round
    state.rounds.append(RoundSummary(round=next_round,
                                     holdout_accuracy=accuracy))
    return state


# --------------------------------------------------------------------------
# Full run
# --------------------------------------------------------------------------

@dataclass
class RunResult:
    synthetic: tabular.Dataset   # raw (surface) rows
    state: PipelineState
    paths: dict


def _atomic_write(path, text):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_run_log(state, path):
    lines = ["round,iteration,new_good,cumulative_good,fool_rate"]
    for rec in state.run_log:
        lines.append(f"{rec.round},{rec.iteration},{rec.new_good},"
                     f"{rec.cumulative_good},{rec.fool_rate:.6f}")
    _atomic_write(path, "\n".join(lines) + "\n")


def _write_checkpoint(state, out_dir):
    round_no = state.round_index
    _atomic_write(os.path.join(out_dir, f"discriminator_round_{round_no}.txt"),
                  ml.tree_to_text(state.discriminator))
    lines = ["round," + ",".join(state.schema.names)]
    for rnd, row in zip(state.good_rounds, state.good_rows):
        cells = [_render_cell(v) for v in row.values]
        lines.append(f"{rnd}," + ",".join(cells))
    _atomic_write(os.path.join(out_dir, "good_samples.csv"),
                  "\n".join(lines) + "\n")


def _render_cell(v):
    if isinstance(v, float) and v == int(v):
        v = int(v)
    return str(v)


def _synthetic_dataset(state, rng_seed):
    """Accumulated good rows, subsampled down to the original size."""
    rows = state.good_rows
    n = state.n_original
    if len(rows) > n:
        rng = np.random.default_rng(np.random.SeedSequence([rng_seed, 4]))
        idx = sorted(int(i) for i in rng.choice(len(rows), n, replace=False))
        rows = [rows[i] for i in idx]
    return tabular.Dataset(state.schema, rows, tabular.PROV_SYNTHETIC)


def _round_utility(state, config, synthetic_pre):
    matrix = evaluation.utility_matrix(
        state.original, synthetic_pre, config.task_column, config.task_kind,
        seed=_derived_seed(config.seed, 5, state.round_index),
        models=(evaluation.MODEL_FOREST,), forest_trees=config.forest_trees)
    return matrix.score(evaluation.MODEL_FOREST,
                        evaluation.TASK_TRAIN_GEN_TEST_ORIG)


def run(config):
    """phase1, then alternate collection/retraining; emit all artifacts."""
    if not config.out_dir:
        raise ConfigError("config needs an output directory ('out')")
    out = config.out_dir
    os.makedirs(out, exist_ok=True)
    state = phase1_setup(config)
    paths = {
        "synthetic": os.path.join(out, "synthetic.csv"),
        "run_log": os.path.join(out, "run_log.csv"),
        "report_txt": os.path.join(out, "report.txt"),
        "report_csv": os.path.join(out, "report.csv"),
    }
    try:
        for round_no in range(1, config.rounds + 1):
            collect_good_samples(state, config)
            _write_checkpoint(state, out)
            if state.rounds[-1].stop_reason == STOP_QUOTA:
                break  # the global good-sample quota is met
            if config.utility_target is not None and len(state.good_rows) >= 10:
                synthetic_pre = tabular.preprocess(
                    _synthetic_dataset(state, config.seed))
                util = _round_utility(state, config, synthetic_pre)
                state.rounds[-1].utility = util
                if util is not None and util >= config.utility_target:
                    state.log(f"utility target {config.utility_target} met "
                              f"after round {round_no}")
                    break
            if round_no < config.rounds:
                retrain_discriminator(state, config)
    except Exception:
        _write_run_log(state, paths["run_log"])  # partial artifacts
        raise

    synthetic = _synthetic_dataset(state, config.seed)
    tabular.write_csv(synthetic, paths["synthetic"])
    _write_run_log(state, paths["run_log"])

    if len(synthetic) >= 2 and config.task_column is not None:
        synthetic_pre = tabular.preprocess(synthetic)
        res = evaluation.resemblance(state.original, synthetic_pre)
        util = evaluation.utility_matrix(
            state.original, synthetic_pre, config.task_column,
            config.task_kind, seed=_derived_seed(config.seed, 6),
            forest_trees=config.forest_trees)
        audit = evaluation.privacy_audit(state.original, synthetic_pre)
        evaluation.write_report(paths["report_txt"], paths["report_csv"],
                                res, util, audit, state.run_lines())
    else:
        body = "RUN\n" + "".join(f"  {ln}\n" for ln in state.run_lines())
        _atomic_write(paths["report_txt"],
                      "no evaluation: too few synthetic rows or no task "
                      "configured\n\n" + body)
        _atomic_write(paths["report_csv"], "section,name,task,value\n")
    return RunResult(synthetic, state, paths)
