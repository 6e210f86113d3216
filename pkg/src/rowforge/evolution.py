"""Evolutionary search over derivation trees.

A population of `<row>` trees is scored against the active constraint set
(statics + discriminator), then evolved by elitism, tournament selection,
subtree crossover, and subtree-regeneration mutation. All variation is
grammar-directed, so every individual in every generation stays inside the
language. Runs are fully deterministic under a fixed seed; fitness ties
break on the serialized row text.
"""

from __future__ import annotations

from dataclasses import dataclass

from rowforge import grammar as G


class EvolutionError(Exception):
    pass


@dataclass(frozen=True)
class EvolutionConfig:
    population_size: int = 100
    elite_fraction: float = 0.1
    mutation_rate: float = 0.8
    crossover_rate: float = 0.6
    tournament_size: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 1:
            raise EvolutionError("population_size must be >= 1")
        if not 0 < self.elite_fraction < 1:
            raise EvolutionError("elite_fraction must be in (0, 1)")
        for name in ("mutation_rate", "crossover_rate"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise EvolutionError(f"{name} must be in [0, 1]")
        if self.tournament_size < 2:
            raise EvolutionError("tournament_size must be >= 2")

    @property
    def n_elites(self):
        return max(1, int(self.population_size * self.elite_fraction))


class Population:
    """Fixed-size list of (tree, score) with a generation counter.

    Scores are None until `score_population` runs; they are never carried
    across a constraint-set change (the pipeline rescores after swapping
    the discriminator).
    """

    def __init__(self, members, generation=0):
        self.members = list(members)
        self.generation = generation

    def __len__(self):
        return len(self.members)

    def trees(self):
        return [t for t, _ in self.members]

    def scored(self):
        return all(s is not None for _, s in self.members)

    def best(self):
        return max(self.members, key=lambda m: m[1].value)


def mutate(tree, grammar, rng, depth_budget=G.DEFAULT_DEPTH_BUDGET):
    """Regenerate the subtree under one uniformly random nonterminal node."""
    paths = G.nonterminal_paths(tree)
    path = paths[int(rng.integers(len(paths)))] if len(paths) > 1 else paths[0]
    node = G.subtree_at(tree, path)
    fresh = G.generate_random(grammar, node.symbol, rng, depth_budget)
    return G.replace_at(tree, path, fresh)


def crossover(a, b, grammar, rng):
    """Swap one pair of same-symbol subtrees strictly below both roots.

    Returns the inputs unchanged when the trees share no nonterminal below
    their roots.
    """
    below_a = _symbol_paths(a)
    below_b = _symbol_paths(b)
    shared = sorted(set(below_a) & set(below_b))
    if not shared:
        return a, b
    symbol = shared[int(rng.integers(len(shared)))] if len(shared) > 1 else shared[0]
    pa = _pick(below_a[symbol], rng)
    pb = _pick(below_b[symbol], rng)
    sub_a = G.subtree_at(a, pa)
    sub_b = G.subtree_at(b, pb)
    return G.replace_at(a, pa, sub_b), G.replace_at(b, pb, sub_a)


def _symbol_paths(tree):
    table = {}
    for path, node in G.iter_subtrees(tree):
        if path and node.kind == G.KIND_NT:
            table.setdefault(node.symbol, []).append(path)
    return table


def _pick(seq, rng):
    return seq[int(rng.integers(len(seq)))] if len(seq) > 1 else seq[0]


def score_population(pop, constraint_set, grammar):
    """Score every member against the constraint set (batched)."""
    trees = pop.trees()
    rows = [G.tree_to_row(t, grammar) for t in trees]
    scores = constraint_set.score_rows(rows)
    return Population(list(zip(trees, scores)), pop.generation)


def _ranked(members):
    # best fitness first; ties broken by serialized text, ascending
    return sorted(members, key=lambda m: (-m[1].value, m[0].text()))


def _tournament(members, config, rng):
    k = config.tournament_size
    picks = [members[int(rng.integers(len(members)))] for _ in range(k)]
    return _ranked(picks)[0]


def evolve_step(pop, constraint_set, grammar, config, rng):
    """One generation: elites copied, the rest bred, everyone rescored."""
    if not pop.scored():
        raise EvolutionError("evolve_step needs a scored population")
    ranked = _ranked(pop.members)
    size = config.population_size
    offspring = [t for t, _ in ranked[:config.n_elites]]
    while len(offspring) < size:
        p1 = _tournament(pop.members, config, rng)[0]
        p2 = _tournament(pop.members, config, rng)[0]
        if rng.random() < config.crossover_rate:
            c1, c2 = crossover(p1, p2, grammar, rng)
        else:
            c1, c2 = p1, p2
        if rng.random() < config.mutation_rate:
            c1 = mutate(c1, grammar, rng)
        if rng.random() < config.mutation_rate:
            c2 = mutate(c2, grammar, rng)
        offspring.append(c1)
        if len(offspring) < size:
            offspring.append(c2)
    nxt = Population([(t, None) for t in offspring], pop.generation + 1)
    return score_population(nxt, constraint_set, grammar)


def seed_population(good, config, grammar, rng, symbol=G.ROW_NT):
    """Population of population_size: all the good trees (uniformly truncated
    when over capacity), the remainder grammar-random. Unscored."""
    size = config.population_size
    good = list(good)
    if len(good) > size:
        idx = rng.choice(len(good), size=size, replace=False)
        members = [good[int(i)] for i in sorted(idx)]
    else:
        members = list(good)
        while len(members) < size:
            members.append(G.generate_random(grammar, symbol, rng))
    return Population([(t, None) for t in members])
