"""Shared fixtures: small reference chains and random-instance generators."""

import numpy as np
import pytest

from metastab import Partition, build_chain


@pytest.fixture
def b2():
    """Two states, rates 1->2: 2 and 2->1: 3; pi = (3/5, 2/5)."""
    return build_chain(["1", "2"], [("1", "2", 2.0), ("2", "1", 3.0)])


@pytest.fixture
def c3():
    """Directed 3-cycle with unit rates; pi uniform, non-reversible."""
    return build_chain(["1", "2", "3"],
                       [("1", "2", 1.0), ("2", "3", 1.0), ("3", "1", 1.0)])


def birth_death(n, rate=1.0):
    """Path graph 1-2-...-n with equal rates both ways; pi uniform."""
    labels = [str(i) for i in range(1, n + 1)]
    triples = []
    for i in range(n - 1):
        triples.append((labels[i], labels[i + 1], rate))
        triples.append((labels[i + 1], labels[i], rate))
    return build_chain(labels, triples)


@pytest.fixture
def bd3():
    return birth_death(3)


@pytest.fixture
def bd3_partition():
    return Partition((frozenset({"1"}), frozenset({"3"})), frozenset({"2"}))


@pytest.fixture
def bd4():
    return birth_death(4)


def random_chain(rng, n, extra_edges=None, rate_low=0.2, rate_high=3.0):
    """Random irreducible chain: a random Hamiltonian cycle plus extra edges."""
    labels = [f"s{i:02d}" for i in range(n)]
    perm = rng.permutation(n)
    edges = {}
    for a, b in zip(perm, np.roll(perm, -1)):
        edges[(int(a), int(b))] = rng.uniform(rate_low, rate_high)
    if extra_edges is None:
        extra_edges = 2 * n
    for _ in range(extra_edges):
        i, j = rng.integers(0, n, size=2)
        if i != j:
            edges[(int(i), int(j))] = rng.uniform(rate_low, rate_high)
    triples = [(labels[i], labels[j], r) for (i, j), r in sorted(edges.items())]
    return build_chain(labels, triples)


def random_reversible_chain(rng, n, extra_edges=None, rate_low=0.2, rate_high=3.0):
    """Random reversible chain from conductances on a connected graph."""
    labels = [f"s{i:02d}" for i in range(n)]
    weights = rng.uniform(0.5, 2.0, size=n)
    pi = weights / weights.sum()
    conductances = {}
    order = rng.permutation(n)
    for a, b in zip(order[:-1], order[1:]):
        key = (min(int(a), int(b)), max(int(a), int(b)))
        conductances[key] = rng.uniform(rate_low, rate_high)
    if extra_edges is None:
        extra_edges = 2 * n
    for _ in range(extra_edges):
        i, j = rng.integers(0, n, size=2)
        if i != j:
            key = (min(int(i), int(j)), max(int(i), int(j)))
            conductances[key] = rng.uniform(rate_low, rate_high)
    triples = []
    for (i, j), c in sorted(conductances.items()):
        triples.append((labels[i], labels[j], c / pi[i]))
        triples.append((labels[j], labels[i], c / pi[j]))
    return build_chain(labels, triples)


def random_disjoint_sets(rng, chain, max_size=3):
    """Random nonempty disjoint (A, B) as label lists."""
    n = chain.n
    k_a = int(rng.integers(1, max_size + 1))
    k_b = int(rng.integers(1, max_size + 1))
    picks = rng.choice(n, size=min(n - 1, k_a + k_b), replace=False)
    a = picks[:k_a]
    b = picks[k_a:]
    if len(b) == 0:
        b = [int(i) for i in range(n) if i not in set(int(x) for x in a)][:1]
    return ([chain.states[int(i)] for i in a],
            [chain.states[int(i)] for i in b])


def random_partition(rng, chain, n_valleys, delta_fraction=0.3):
    """Random valley partition of the chain's states."""
    states = list(chain.states)
    rng.shuffle(states)
    n_delta = int(delta_fraction * len(states))
    n_delta = min(n_delta, len(states) - n_valleys)
    body = states[:len(states) - n_delta]
    delta = states[len(states) - n_delta:]
    cuts = sorted(rng.choice(np.arange(1, len(body)), size=n_valleys - 1,
                             replace=False)) if n_valleys > 1 else []
    valleys = []
    prev = 0
    for c in list(cuts) + [len(body)]:
        valleys.append(frozenset(body[prev:c]))
        prev = c
    return Partition(tuple(valleys), frozenset(delta))
