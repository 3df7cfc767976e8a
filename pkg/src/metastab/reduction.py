"""The metastability pipeline: coarse-grained rates, time scales, the reduced
model, and numeric checks of the separation-of-scales hypotheses.

Valley indices are 1-based; ``rates[j-1, k-1]`` holds the coarse rate from
valley j to valley k.  Everything is exact finite linear algebra; the checks
report ratios for the user to compare across a model family, never verdicts.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .chain import Chain, Partition, ProbVector, spectral_gap, stationary
from .config import DEFAULT, ToleranceConfig
from .errors import (
    BadPartition,
    NotIrreducibleAfterReflection,
    ToleranceViolation,
)
from .numerics import expm_uniformized
from .potential import capacity, hitting_probability
from .transforms import COLLAPSED_LABEL, collapse_chain, reflected_chain, trace_chain


def _valley_index_arrays(chain: Chain, partition: Partition):
    partition.validate_for(chain)
    return [chain.indices_of(v) for v in partition.valleys]


def _breve(partition: Partition, j: int):
    out = set()
    for k in range(1, partition.n + 1):
        if k != j:
            out |= partition.valley(k)
    return out


@dataclass(frozen=True)
class ReducedModel:
    """Coarse-grained S-valued chain: rates r(j, k), holding rates, theta."""

    valley_count: int
    rates: np.ndarray            # (n, n), zero diagonal, units 1/rescaled-time
    holding_rates: np.ndarray    # row sums of ``rates``
    theta: float
    diagnostics: dict = field(default_factory=dict)

    def rate(self, j: int, k: int) -> float:
        return float(self.rates[j - 1, k - 1])

    def to_dict(self) -> dict:
        return {
            "valley_count": self.valley_count,
            "theta": self.theta,
            "rates": self.rates.tolist(),
            "holding_rates": self.holding_rates.tolist(),
            "diagnostics": self.diagnostics,
        }


def coarse_rates(chain: Chain, pi: ProbVector, partition: Partition, theta: float,
                 tol: ToleranceConfig = DEFAULT) -> ReducedModel:
    """Coarse-grained jump rates via the trace chain on the valley union.

    r(k, j) is theta times the pi-averaged rate at which the trace process
    jumps from valley k into valley j.  The identity
    pi(valley j) * holding(j) = theta * Cap(valley j, other valleys) is
    verified against an independent capacity solve and reported.
    """
    partition.validate_for(chain, require_valleys=2)
    if theta <= 0:
        raise BadPartition(f"theta must be positive, got {theta!r}")
    valley_idx = _valley_index_arrays(chain, partition)
    union = sorted(partition.union())
    traced, pi_t = trace_chain(chain, pi, union, tol)
    t_idx = [traced.indices_of(v) for v in partition.valleys]
    n = partition.n
    rates = np.zeros((n, n))
    dense_t = traced.rates.toarray() if traced.n <= 4000 else None
    for k in range(n):
        wk = pi_t.weights[t_idx[k]]
        mass = wk.sum()
        for j in range(n):
            if j == k:
                continue
            if dense_t is not None:
                block = dense_t[np.ix_(t_idx[k], t_idx[j])].sum(axis=1)
            else:
                block = np.asarray(
                    traced.rates[t_idx[k]][:, t_idx[j]].sum(axis=1)).ravel()
            rates[k, j] = theta * float(wk @ block) / mass
    holding = rates.sum(axis=1)
    masses = np.array([pi.mass(ix) for ix in valley_idx])
    caps = np.array([
        capacity(chain, pi, sorted(partition.valley(j)),
                 sorted(_breve(partition, j)), tol)
        for j in range(1, n + 1)
    ])
    lhs = masses * holding
    rhs = theta * caps
    reldev = np.abs(lhs - rhs) / np.maximum(np.maximum(lhs, rhs), 1e-300)
    worst = float(reldev.max())
    if worst > tol.capacity_rel:
        raise ToleranceViolation(
            f"holding-rate/capacity identity fails: relative deviation {worst:.3e}"
        )
    diagnostics = {
        "identity_theta_capacity_reldev": reldev.tolist(),
        "valley_masses": masses.tolist(),
        "valley_capacities": caps.tolist(),
        "delta_mass": float(pi.mass(chain.indices_of(partition.delta)))
        if partition.delta else 0.0,
    }
    return ReducedModel(n, rates, holding, float(theta), diagnostics)


def timescale(chain: Chain, pi: ProbVector, partition: Partition, j: int,
              tol: ToleranceConfig = DEFAULT) -> float:
    """pi(valley j) / Cap(valley j, union of the others)."""
    partition.validate_for(chain, require_valleys=2)
    mass = pi.mass(chain.indices_of(partition.valley(j)))
    cap = capacity(chain, pi, sorted(partition.valley(j)),
                   sorted(_breve(partition, j)), tol)
    return mass / cap


class TimescaleProfile(NamedTuple):
    values: np.ndarray
    spread: float        # max/min ratio; well above 1 flags multiple scales


def timescales(chain: Chain, pi: ProbVector, partition: Partition,
               tol: ToleranceConfig = DEFAULT) -> TimescaleProfile:
    vals = np.array([timescale(chain, pi, partition, j, tol)
                     for j in range(1, partition.n + 1)])
    return TimescaleProfile(vals, float(vals.max() / vals.min()))


def jump_probabilities(chain: Chain, pi: ProbVector, partition: Partition, j: int,
                       tol: ToleranceConfig = DEFAULT) -> dict:
    """p(j, k) = P[from the collapsed valley j, hit valley k first].

    Computed on the chain with valley j collapsed to a point; the hitting
    probabilities from that point sum to one over the other valleys.
    """
    partition.validate_for(chain, require_valleys=2)
    n = partition.n
    if not 1 <= j <= n:
        raise BadPartition(f"valley index {j} out of range 1..{n}")
    if n == 2:
        return {k: 1.0 for k in range(1, n + 1) if k != j}
    collapsed, _ = collapse_chain(chain, pi, sorted(partition.valley(j)), tol)
    d_idx = collapsed.index[COLLAPSED_LABEL]
    probs = {}
    for k in range(1, n + 1):
        if k == j:
            continue
        others = sorted(set().union(*(partition.valley(l)
                                      for l in range(1, n + 1) if l not in (j, k))))
        h = hitting_probability(collapsed, sorted(partition.valley(k)), others)
        probs[k] = float(h[d_idx])
    total = sum(probs.values())
    if abs(total - 1.0) > 1e-10:
        raise ToleranceViolation(f"jump probabilities sum to {total!r}, not 1")
    return probs


def symmetrized_rate_via_capacities(chain: Chain, pi: ProbVector,
                                    partition: Partition, theta: float,
                                    j: int, k: int,
                                    tol: ToleranceConfig = DEFAULT) -> float:
    """Reversible-case cross-check for pi(valley j) r(j, k) via three capacities."""
    cap_j = capacity(chain, pi, sorted(partition.valley(j)),
                     sorted(_breve(partition, j)), tol)
    cap_k = capacity(chain, pi, sorted(partition.valley(k)),
                     sorted(_breve(partition, k)), tol)
    rest = sorted(set().union(*(partition.valley(l)
                                for l in range(1, partition.n + 1)
                                if l not in (j, k))))
    if rest:
        cap_jk = capacity(chain, pi,
                          sorted(partition.valley(j) | partition.valley(k)),
                          rest, tol)
    else:
        cap_jk = 0.0
    mass = pi.mass(chain.indices_of(partition.valley(j)))
    return theta * 0.5 * (cap_j + cap_k - cap_jk) / mass


@dataclass(frozen=True)
class ConditionReport:
    """Raw separation-of-scales ratios; entries are None when unavailable.

    No verdicts are attached: the ratios are meant to be compared across a
    model family as the size parameter grows.
    """

    theta: float
    reference_states: tuple            # pi-maximal state per valley
    capacity_ratio: tuple              # per valley: max Cap(valley)/Cap(state, ref)
    measure_ratio: tuple               # per valley: pi(delta) / pi(valley)
    pointwise_measure_ratio: float     # max over valley states of pi(delta)/pi(state)
    relaxation_ratio: tuple            # per valley: t_rel(reflected) / theta
    relaxation_composite: tuple        # per valley: worst mass-imbalance * t_rel / theta
    notes: tuple = ()

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "reference_states": list(self.reference_states),
            "capacity_ratio": list(self.capacity_ratio),
            "measure_ratio": list(self.measure_ratio),
            "pointwise_measure_ratio": self.pointwise_measure_ratio,
            "relaxation_ratio": list(self.relaxation_ratio),
            "relaxation_composite": list(self.relaxation_composite),
            "notes": list(self.notes),
        }


def check_conditions(chain: Chain, pi: ProbVector, partition: Partition,
                     theta: float, tol: ToleranceConfig = DEFAULT) -> ConditionReport:
    """Compute the metastability condition ratios for one chain and partition.

    Per valley: the worst ratio of the valley's escape capacity to the
    capacity between a state and the valley's pi-maximal reference state
    (zero for singleton valleys, where the max is empty); the measure ratio
    pi(delta)/pi(valley); and relaxation times of the reflected chains
    relative to theta.  Reflections that disconnect a valley leave a None
    entry with a note.
    """
    partition.validate_for(chain, require_valleys=2)
    n = partition.n
    valley_idx = _valley_index_arrays(chain, partition)
    delta_mass = float(pi.mass(chain.indices_of(partition.delta))) \
        if partition.delta else 0.0
    masses = np.array([pi.mass(ix) for ix in valley_idx])

    refs = []
    for ix in valley_idx:
        weights = pi.weights[ix]
        best = weights.max()
        candidates = sorted(chain.states[i] for i, wgt in zip(ix, weights)
                            if wgt == best)
        refs.append(candidates[0])

    cap_ratios = []
    for j in range(1, n + 1):
        ix = valley_idx[j - 1]
        if len(ix) == 1:
            cap_ratios.append(0.0)
            continue
        cap_valley = capacity(chain, pi, sorted(partition.valley(j)),
                              sorted(_breve(partition, j)), tol)
        ref = refs[j - 1]
        worst = 0.0
        for i in ix:
            s = chain.states[i]
            if s == ref:
                continue
            worst = max(worst, cap_valley / capacity(chain, pi, [s], [ref], tol))
        cap_ratios.append(worst)

    measure_ratios = [delta_mass / m for m in masses]
    union_idx = np.concatenate(valley_idx)
    pointwise = float(delta_mass / pi.weights[union_idx].min())

    relax, composite, notes = [], [], []
    imbalance = float(masses.max() / masses.min())
    for j in range(1, n + 1):
        ix = valley_idx[j - 1]
        if len(ix) == 1:
            relax.append(0.0)
            composite.append(0.0)
            continue
        try:
            refl = reflected_chain(chain, sorted(partition.valley(j)), pi, tol)
        except NotIrreducibleAfterReflection:
            relax.append(None)
            composite.append(None)
            notes.append(f"valley {j}: reflection disconnects; relaxation entry unavailable")
            continue
        gap = spectral_gap(refl, stationary(refl, tol), tol)
        relax.append(gap.relaxation_time / theta)
        composite.append(imbalance * gap.relaxation_time / theta)

    return ConditionReport(
        theta=float(theta),
        reference_states=tuple(refs),
        capacity_ratio=tuple(cap_ratios),
        measure_ratio=tuple(float(x) for x in measure_ratios),
        pointwise_measure_ratio=pointwise,
        relaxation_ratio=tuple(relax),
        relaxation_composite=tuple(composite),
        notes=tuple(notes),
    )


def reduced_generator(model: ReducedModel) -> np.ndarray:
    """Dense generator of the reduced chain; rows sum to zero."""
    L = model.rates.copy()
    np.fill_diagonal(L, 0.0)
    np.fill_diagonal(L, -L.sum(axis=1))
    return L


def reduced_transition(model: ReducedModel, t: float, tol=1e-12) -> np.ndarray:
    """exp(t L) for the reduced generator, by uniformization."""
    return expm_uniformized(reduced_generator(model), t, tol)
