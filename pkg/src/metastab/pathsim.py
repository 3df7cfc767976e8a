"""Trajectory simulation, path surgeries, and Monte-Carlo validators.

Paths are right-continuous step functions given by an initial state, the
ordered jump times with their post-jump states, and a horizon.  Coarse paths
use the integer alphabet {0, 1, ..., n}: valley j maps to j, the separating
set maps to 0.

Sojourn sums are accumulated left to right everywhere, so the total length of
a trace path equals the occupation time of its set bit for bit.  Every
trajectory draws its randomness from a stream seeded by (seed, trial index),
which makes all estimators reproducible and independent of worker count.
"""

import bisect
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .chain import Chain, Partition, ProbVector, stationary
from .config import DEFAULT, ToleranceConfig
from .errors import (
    BadPartition,
    BadSpec,
    BadSubset,
    StartsInDelta,
    TouchesDelta,
)
from .reduction import ReducedModel, reduced_transition

DELTA_SYMBOL = 0


@dataclass(frozen=True)
class Path:
    """Right-continuous piecewise-constant trajectory on [0, horizon]."""

    initial: object
    events: tuple                # ((time, state), ...) strictly increasing times
    horizon: float

    def __post_init__(self):
        if not self.horizon > 0:
            raise BadSpec("path horizon must be positive")
        prev_t, prev_s = 0.0, self.initial
        for t, s in self.events:
            if not prev_t < t <= self.horizon:
                raise BadSpec(f"jump time {t} out of order or beyond the horizon")
            if s == prev_s:
                raise BadSpec(f"consecutive states equal at time {t}")
            prev_t, prev_s = t, s

    @property
    def jump_times(self):
        return [t for t, _ in self.events]

    def states_visited(self):
        seen = {self.initial}
        seen.update(s for _, s in self.events)
        return seen

    def state_at(self, t):
        """Value at time t (right-continuous; t beyond the horizon holds the last state)."""
        if t < 0:
            raise BadSpec("time must be nonnegative")
        lo, hi = 0, len(self.events)
        while lo < hi:
            mid = (lo + hi) // 2
            if self.events[mid][0] <= t:
                lo = mid + 1
            else:
                hi = mid
        return self.initial if lo == 0 else self.events[lo - 1][1]

    def sojourns(self):
        """Yield (start, end, state) with end exclusive; covers [0, horizon]."""
        t, s = 0.0, self.initial
        for t2, s2 in self.events:
            yield t, t2, s
            t, s = t2, s2
        yield t, self.horizon, s


CoarsePath = Path


def _build_path(initial, events, horizon):
    """Assemble a Path, merging consecutive equal states and zero-length dust."""
    cleaned = []
    cur = initial
    for t, s in events:
        if s == cur or not 0.0 < t <= horizon:
            continue
        cleaned.append((t, s))
        cur = s
    return Path(initial, tuple(cleaned), horizon)


# ---------------------------------------------------------------------------
# simulation


class _JumpTables:
    """Per-state alias-free sampling tables for a dense chain."""

    def __init__(self, chain: Chain):
        self.chain = chain
        self.mean_holding = (1.0 / chain.holding).tolist()
        indptr, indices, data = (
            chain.rates.indptr, chain.rates.indices, chain.rates.data)
        self.targets = []
        self.cumprob = []
        for i in range(chain.n):
            sl = slice(indptr[i], indptr[i + 1])
            self.targets.append(indices[sl].tolist())
            w = data[sl]
            self.cumprob.append((np.cumsum(w) / w.sum()).tolist())

    def sample_path(self, start_idx, horizon, rng):
        t = 0.0
        state = start_idx
        events = []
        mean_holding = self.mean_holding
        targets = self.targets
        cumprob = self.cumprob
        exponential = rng.exponential
        uniform = rng.random
        bl = bisect.bisect_left
        while True:
            t += exponential(mean_holding[state])
            if t > horizon:
                break
            state = targets[state][bl(cumprob[state], uniform())]
            events.append((t, state))
        return events


def _as_start_index(chain, start, rng):
    if isinstance(start, ProbVector):
        return int(rng.choice(chain.n, p=start.weights))
    if start in chain.index:
        return chain.index[start]
    raise BadSpec(f"unknown start state {start!r}")


def simulate(chain, start, horizon, seed, tol: ToleranceConfig = DEFAULT) -> Path:
    """Sample one trajectory: exponential holding, jumps by normalized rates.

    ``chain`` is either a Chain or an implicit model exposing
    ``holding_rate(state)`` and ``jump_targets(state)``.  ``seed`` may be an
    int or a sequence of ints; given the same seed the path is identical.
    """
    if not horizon > 0:
        raise BadSpec("horizon must be positive")
    rng = np.random.default_rng(seed)
    if isinstance(chain, Chain):
        start_idx = _as_start_index(chain, start, rng)
        events = _JumpTables(chain).sample_path(start_idx, horizon, rng)
        labels = chain.states
        return Path(labels[start_idx],
                    tuple((t, labels[s]) for t, s in events), horizon)
    return _simulate_implicit(chain, start, horizon, rng)


def _simulate_implicit(model, start, horizon, rng):
    t = 0.0
    state = start
    events = []
    while True:
        lam = model.holding_rate(state)
        t += rng.exponential(1.0 / lam)
        if t > horizon:
            break
        targets, rates = model.jump_targets(state)
        cum = np.cumsum(rates)
        state = targets[int(np.searchsorted(cum / cum[-1], rng.random(),
                                            side="right"))]
        events.append((t, state))
    return Path(start, tuple(events), horizon)


# ---------------------------------------------------------------------------
# path surgeries


def occupation_time(path: Path, F) -> float:
    """Total time spent in F up to the horizon.

    Accumulated left to right over maximal F-runs, one subtraction per run,
    so a full-state F gives the horizon exactly and the total equals the
    horizon of trace_path(path, F) bit for bit.
    """
    total = 0.0
    for run_start, segments in _f_runs(path, F):
        total += segments[-1][1] - run_start
    return total


@dataclass(frozen=True)
class TimeChange:
    """The monotone map S_F: time lived in F -> original time.

    Piecewise linear and right-continuous; ``runs`` holds one
    (inner_start, original_start, length) triple per maximal F-run.
    """

    runs: tuple
    total: float           # time lived in F over the whole path
    horizon: float

    def __call__(self, u):
        if u < 0:
            raise BadSpec("time must be nonnegative")
        if u >= self.total:
            return self.horizon
        starts = [r[0] for r in self.runs]
        k = bisect.bisect_right(starts, u) - 1
        inner, orig, length = self.runs[k]
        return orig + (u - inner)


def _f_runs(path: Path, F):
    """Maximal runs of sojourns inside F: list of (orig_start, segments)."""
    F = set(F)
    runs = []
    cur = None
    for a, b, s in path.sojourns():
        if s in F:
            if cur is None:
                cur = [a, []]
            cur[1].append((a, b, s))
        else:
            if cur is not None:
                runs.append(cur)
                cur = None
    if cur is not None:
        runs.append(cur)
    return runs


def time_change(path: Path, F) -> TimeChange:
    """Right-continuous inverse of the additive functional t -> time in F."""
    runs = []
    inner = 0.0
    for orig_start, segments in _f_runs(path, F):
        length = segments[-1][1] - orig_start
        runs.append((inner, orig_start, length))
        inner += length
    return TimeChange(tuple(runs), inner, path.horizon)


def trace_path(path: Path, F) -> Path:
    """The path watched only while in F, excursions excised.

    Its horizon equals occupation_time(path, F) bit for bit (same per-run
    arithmetic); jumps between F-states across an excursion are kept,
    returns to the same state are merged away.
    """
    runs = _f_runs(path, F)
    if not runs:
        raise BadSubset("path never visits the trace set")
    events = []
    clock = 0.0
    current = None
    for run_start, segments in runs:
        for a, _, s in segments:
            if current is None:
                current = s
                initial = s
            elif s != current:
                events.append((clock + (a - run_start), s))
                current = s
        clock += segments[-1][1] - run_start
    return Path(initial, tuple(events), clock)


def last_passage_path(coarse: Path) -> Path:
    """Rewrite every excursion into 0 with the last valley value."""
    if coarse.initial == DELTA_SYMBOL:
        raise StartsInDelta("coarse path starts in the separating set")
    events = []
    last = coarse.initial
    for t, s in coarse.events:
        if s == DELTA_SYMBOL:
            continue
        if s != last:
            events.append((t, s))
            last = s
    # delta sojourns inherit the preceding valley, so a jump back to the same
    # valley disappears; the jump time into a new valley is the entry time
    out = _build_path(coarse.initial, events, coarse.horizon)
    return out


def project(path: Path, partition: Partition, mode: str) -> Path:
    """Coarse-grain a path through the valley structure.

    mode "phi" sends separating states to 0; mode "psi" requires the path to
    stay inside the valleys (take the trace first).
    """
    label_map = partition.label_map()
    if mode not in ("phi", "psi"):
        raise BadPartition(f"unknown projection mode {mode!r}")

    def proj(s):
        try:
            k = label_map[s]
        except KeyError:
            raise BadPartition(f"state {s!r} is not covered by the partition")
        if k == DELTA_SYMBOL and mode == "psi":
            raise TouchesDelta(f"state {s!r} lies in the separating set")
        return k

    initial = proj(path.initial)
    events = [(t, proj(s)) for t, s in path.events]
    return _build_path(initial, events, path.horizon)


# ---------------------------------------------------------------------------
# Skorohod-type distance on coarse paths


def _segments_upto(path: Path, m: float):
    """Jump times and values on [0, m); the path extends by its last value."""
    times, values = [], [path.initial]
    for t, s in path.events:
        if t >= m:
            break
        times.append(t)
        values.append(s)
    return times, values


def _g_weight(t, m):
    if t <= m - 1.0:
        return 1.0
    if t >= m:
        return 0.0
    return m - t


def _value_at(times, values, t):
    return values[bisect.bisect_right(times, t)]


def _evaluate_candidate(anchors, a_seg, b_seg, m):
    """Exact objective of the piecewise-linear reparameterization ``anchors``.

    anchors: increasing list of (t, lam_t) with endpoints (0, 0), (m, m);
    lambda maps the time axis of path b into evaluation times of path a.
    Returns max(sup |lam - t|, sup |g(lam t) a(lam t) - g(t) b(t)|).
    """
    a_times, a_values = a_seg
    b_times, b_values = b_seg
    ts = [p[0] for p in anchors]
    ls = [p[1] for p in anchors]

    def lam(t):
        k = bisect.bisect_right(ts, t) - 1
        if k >= len(ts) - 1:
            return ls[-1]
        t0, t1 = ts[k], ts[k + 1]
        l0, l1 = ls[k], ls[k + 1]
        return l0 + (l1 - l0) * (t - t0) / (t1 - t0)

    def lam_inv(y):
        k = bisect.bisect_right(ls, y) - 1
        if k >= len(ls) - 1:
            return ts[-1]
        l0, l1 = ls[k], ls[k + 1]
        t0, t1 = ts[k], ts[k + 1]
        if l1 == l0:
            return t0
        return t0 + (t1 - t0) * (y - l0) / (l1 - l0)

    breaks = set(ts)
    breaks.update(t for t in b_times if 0.0 <= t <= m)
    breaks.update(lam_inv(u) for u in a_times if 0.0 <= u <= m)
    breaks.add(max(0.0, min(m, m - 1.0)))
    breaks.add(lam_inv(m - 1.0))
    grid = sorted(b for b in breaks if 0.0 <= b <= m)
    worst = 0.0
    for i, x in enumerate(grid):
        lx = lam(x)
        worst = max(worst, abs(lx - x))
        va = _value_at(a_times, a_values, lx)
        vb = _value_at(b_times, b_values, x)
        worst = max(worst, abs(_g_weight(lx, m) * va - _g_weight(x, m) * vb))
        if i + 1 < len(grid):
            y = grid[i + 1]
            ly = lam(y)
            # same constant values as just after x; g is linear in between
            worst = max(worst, abs(_g_weight(ly, m) * va - _g_weight(y, m) * vb))
    return worst


def _alignment_anchors(a_seg, b_seg, m):
    """Monotone jump alignment minimizing max(time shift, value mismatch)."""
    a_times, a_values = a_seg
    b_times, b_values = b_seg
    p, q = len(a_times), len(b_times)

    def mism(i, j):
        return abs(a_values[i] - b_values[j])

    INF = float("inf")
    cost = np.full((p + 1, q + 1), INF)
    move = np.zeros((p + 1, q + 1), dtype=np.int8)
    cost[0, 0] = mism(0, 0)
    for i in range(p + 1):
        for j in range(q + 1):
            base = cost[i, j]
            if base == INF:
                continue
            if i < p and j < q:
                c = max(base, abs(a_times[i] - b_times[j]), mism(i + 1, j + 1))
                if c < cost[i + 1, j + 1]:
                    cost[i + 1, j + 1] = c
                    move[i + 1, j + 1] = 1
            if i < p:
                c = max(base, mism(i + 1, j))
                if c < cost[i + 1, j]:
                    cost[i + 1, j] = c
                    move[i + 1, j] = 2
            if j < q:
                c = max(base, mism(i, j + 1))
                if c < cost[i, j + 1]:
                    cost[i, j + 1] = c
                    move[i, j + 1] = 3
    anchors = []
    i, j = p, q
    while i > 0 or j > 0:
        mv = move[i, j]
        if mv == 1:
            anchors.append((b_times[j - 1], a_times[i - 1]))
            i, j = i - 1, j - 1
        elif mv == 2:
            i -= 1
        else:
            j -= 1
    anchors.reverse()
    # keep anchors strictly inside (0, m) and strictly monotone in both axes
    filtered = [(0.0, 0.0)]
    for t, l in anchors:
        if t <= filtered[-1][0] or l <= filtered[-1][1] or t >= m or l >= m:
            continue
        filtered.append((t, l))
    filtered.append((m, m))
    return filtered


def _dm_directed(path_a: Path, path_b: Path, m: float) -> float:
    a_seg = _segments_upto(path_a, m)
    b_seg = _segments_upto(path_b, m)
    identity = [(0.0, 0.0), (m, m)]
    best = _evaluate_candidate(identity, a_seg, b_seg, m)
    anchors = _alignment_anchors(a_seg, b_seg, m)
    if len(anchors) > 2:
        best = min(best, _evaluate_candidate(anchors, a_seg, b_seg, m))
    return best


def skorohod_distance(p1: Path, p2: Path, m_max: int = 8) -> float:
    """Weighted Skorohod-type distance between coarse paths.

    d = sum_{m <= m_max} 2^-m min(1, d_m), with d_m an upper bound on the
    reparameterization infimum obtained from piecewise-linear maps with nodes
    at both paths' jump times.  Zero for identical paths, symmetric by
    construction; paths shorter than m_max extend by their last value.
    """
    total = 0.0
    for m in range(1, m_max + 1):
        dm = min(_dm_directed(p1, p2, float(m)), _dm_directed(p2, p1, float(m)))
        total += 2.0 ** -m * min(1.0, dm)
    return total


# ---------------------------------------------------------------------------
# Monte-Carlo validators


def _trial_seeds(seed, trials):
    return [(seed, k) for k in range(trials)]


def _run_trials(worker, payloads, jobs):
    if jobs <= 1:
        return [worker(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, payloads, chunksize=max(1, len(payloads) // (4 * jobs))))


def _default_starts(chain, pi, partition):
    """One start per valley: its pi-maximal state, ties to the smallest label."""
    starts = []
    for v in partition.valleys:
        idx = chain.indices_of(v)
        weights = pi.weights[idx]
        best = weights.max()
        starts.append(sorted(chain.states[i] for i, wgt in zip(idx, weights)
                             if wgt == best)[0])
    return starts


def _t2_worker(payload):
    chain, start, real_horizon, theta, delta, seed_pair, escape_states, escape_cut = payload
    path = simulate(chain, start, real_horizon, seed_pair)
    occ = occupation_time(path, delta) / theta
    escaped = None
    if escape_states is not None:
        escaped = 0.0
        for a, _, s in path.sojourns():
            if s in escape_states:
                escaped = 1.0 if a <= escape_cut else 0.0
                break
    return occ, escaped


class ValleyEstimate(NamedTuple):
    valley: int
    start: object
    mean: float
    stderr: float
    escape_probability: object   # None unless escape_delta was requested


class T2Estimate(NamedTuple):
    per_valley: tuple
    worst_mean: float
    horizon: float
    trials: int


def estimate_T2(chain: Chain, partition: Partition, theta: float, horizon: float,
                trials: int, seed: int, starts=None, escape_delta=None,
                jobs: int = 1, pi: ProbVector = None,
                tol: ToleranceConfig = DEFAULT) -> T2Estimate:
    """Mean time spent in the separating set on [0, horizon], rescaled time.

    Each trajectory runs for horizon * theta units of chain time; the mean of
    occupation(delta)/theta is reported per starting valley with its standard
    error, plus the worst mean.  With ``escape_delta`` set, the empirical
    probability of leaving the starting valley by that (rescaled) time is
    recorded as well.
    """
    partition.validate_for(chain, require_valleys=2)
    if starts is None:
        pi = pi or stationary(chain, tol)
        starts = _default_starts(chain, pi, partition)
    if not partition.delta and escape_delta is None:
        per = tuple(ValleyEstimate(j + 1, s, 0.0, 0.0, None)
                    for j, s in enumerate(starts))
        return T2Estimate(per, 0.0, horizon, trials)
    label_map = partition.label_map()
    results = []
    for j, start in enumerate(starts, start=1):
        escape_states = None
        if escape_delta is not None:
            home = label_map[start]
            escape_states = {s for s, v in label_map.items() if v not in (0, home)}
        payloads = [(chain, start, horizon * theta, theta, partition.delta,
                     sd, escape_states, None if escape_delta is None
                     else escape_delta * theta)
                    for sd in _trial_seeds(seed + 1000 * j, trials)]
        rows = _run_trials(_t2_worker, payloads, jobs)
        occ = np.array([r[0] for r in rows])
        mean = float(occ.mean())
        stderr = float(occ.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
        esc = None
        if escape_delta is not None:
            esc = float(np.mean([r[1] for r in rows]))
        results.append(ValleyEstimate(j, start, mean, stderr, esc))
    worst = max(r.mean for r in results)
    return T2Estimate(tuple(results), worst, horizon, trials)


def _grid_worker(payload):
    chain, start, times, seed_pair, delta = payload
    path = simulate(chain, start, times[-1], seed_pair)
    return [1.0 if path.state_at(t) in delta else 0.0 for t in times]


class Estimate91(NamedTuple):
    grid: tuple                 # rescaled times in [delta, 2 delta]
    probabilities: dict         # start label -> tuple of estimates per grid point
    stderr: dict
    sup: float
    trials: int


def estimate_91(chain: Chain, partition: Partition, theta: float, delta: float,
                trials: int, seed: int, starts=None, grid_points: int = 16,
                jobs: int = 1, pi: ProbVector = None,
                tol: ToleranceConfig = DEFAULT) -> Estimate91:
    """Monte-Carlo sup over s in [delta, 2 delta] of P[state at s*theta in Delta].

    The sup over the continuum is approximated on a uniform grid of
    ``grid_points`` values; starting states (one per valley by default) are
    sampled from a user list, not exhaustively.
    """
    partition.validate_for(chain, require_valleys=2)
    if delta <= 0:
        raise BadSpec("delta must be positive")
    if starts is None:
        pi = pi or stationary(chain, tol)
        starts = _default_starts(chain, pi, partition)
    grid = tuple(np.linspace(delta, 2.0 * delta, grid_points))
    if not partition.delta:
        zero = tuple(0.0 for _ in grid)
        return Estimate91(grid, {s: zero for s in starts},
                          {s: zero for s in starts}, 0.0, trials)
    real_times = tuple(s * theta for s in grid)
    probabilities, stderr = {}, {}
    sup = 0.0
    for j, start in enumerate(starts, start=1):
        payloads = [(chain, start, real_times, sd, partition.delta)
                    for sd in _trial_seeds(seed + 1000 * j, trials)]
        rows = np.array(_run_trials(_grid_worker, payloads, jobs))
        p = rows.mean(axis=0)
        se = np.sqrt(np.clip(p * (1.0 - p), 0.0, None) / trials)
        probabilities[start] = tuple(float(x) for x in p)
        stderr[start] = tuple(float(x) for x in se)
        sup = max(sup, float(p.max()))
    return Estimate91(grid, probabilities, stderr, sup, trials)


def _fdd_worker(payload):
    chain, start, horizon, times, seed_pair, label_map = payload
    path = simulate(chain, start, horizon, seed_pair)
    return [label_map[path.state_at(t)] for t in times]


class FddRow(NamedTuple):
    t: float
    empirical: tuple            # law over valleys 1..n (index k-1), delta excluded
    delta_mass: float
    reduced: tuple              # exp(tL) row of the reduced model
    tv: float
    stderr: float


class FddReport(NamedTuple):
    rows: tuple
    start: object
    start_valley: int
    trials: int


def fdd_compare(chain: Chain, partition: Partition, theta: float,
                reduced: ReducedModel, time_grid, trials: int, seed: int,
                start, jobs: int = 1, tol: ToleranceConfig = DEFAULT) -> FddReport:
    """Empirical coarse marginals at rescaled times vs the reduced model.

    For each grid time t, the law of the projected state at chain time
    t * theta is estimated over ``trials`` trajectories and compared with the
    corresponding transition row of the reduced model; the total-variation
    distance charges the full mass sitting in the separating set.
    """
    partition.validate_for(chain, require_valleys=2)
    label_map = partition.label_map()
    if start not in label_map or label_map[start] == 0:
        raise BadPartition(f"start state {start!r} must lie in a valley")
    j0 = label_map[start]
    times = sorted(float(t) for t in time_grid)
    if not times or times[0] < 0:
        raise BadSpec("time grid must be nonempty and nonnegative")
    n = partition.n
    real_times = tuple(t * theta for t in times)
    horizon = max(real_times[-1], 1e-9)
    # state_at handles t == 0 and t beyond the last jump, so one pass suffices
    payloads = [(chain, start, horizon, real_times, sd, label_map)
                for sd in _trial_seeds(seed, trials)]
    rows = np.array(_run_trials(_fdd_worker, payloads, jobs))
    out = []
    for col, t in enumerate(times):
        counts = np.bincount(rows[:, col], minlength=n + 1)
        emp = counts / trials
        red = reduced_transition(reduced, t)[j0 - 1]
        tv = 0.5 * (float(np.abs(emp[1:] - red).sum()) + float(emp[0]))
        se = 0.5 * float(np.sqrt(np.clip(emp * (1 - emp), 0, None) / trials).sum())
        out.append(FddRow(t, tuple(float(x) for x in emp[1:]), float(emp[0]),
                          tuple(float(x) for x in red), tv, se))
    return FddReport(tuple(out), start, j0, trials)
