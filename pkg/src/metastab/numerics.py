"""Shared numerical kernels: connectivity, linear solves, uniformization."""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverFailure

# largest Poisson mean handled in a single uniformization pass; larger times
# are split so the k=0 weight exp(-mu) never underflows
_MU_CHUNK = 128.0


def reachable_from(adj_csr, start):
    """Boolean mask of vertices reachable from ``start`` in a CSR adjacency."""
    n = adj_csr.shape[0]
    seen = np.zeros(n, dtype=bool)
    seen[start] = True
    stack = [start]
    indptr, indices = adj_csr.indptr, adj_csr.indices
    while stack:
        u = stack.pop()
        for v in indices[indptr[u]:indptr[u + 1]]:
            if not seen[v]:
                seen[v] = True
                stack.append(v)
    return seen


def strong_connectivity_witness(adj_csr):
    """Return None if strongly connected, else a pair (a, b) with b unreachable from a.

    Checks reachability from vertex 0 in the graph and its transpose, which is
    equivalent to strong connectivity.
    """
    fwd = reachable_from(adj_csr, 0)
    if not fwd.all():
        return 0, int(np.flatnonzero(~fwd)[0])
    bwd = reachable_from(sp.csr_matrix(adj_csr.T), 0)
    if not bwd.all():
        return int(np.flatnonzero(~bwd)[0]), 0
    return None


def solve_linear(a_sparse, b):
    """Solve a (sparse) square system, densely below a size cutoff."""
    n = a_sparse.shape[0]
    b = np.asarray(b, dtype=float)
    try:
        if n <= 600:
            return np.linalg.solve(a_sparse.toarray(), b)
        lu = spla.splu(sp.csc_matrix(a_sparse))
        return lu.solve(b)
    except (np.linalg.LinAlgError, RuntimeError) as exc:
        raise SolverFailure(f"linear solve failed: {exc}") from exc


def _expm_single(L, lam, t, tol):
    n = L.shape[0]
    P = np.eye(n) + L / lam
    mu = lam * t
    term = np.exp(-mu)
    powP = np.eye(n)
    out = term * powP
    mass = term
    k = 0
    while mass < 1.0 - tol:
        k += 1
        term *= mu / k
        powP = powP @ P
        out += term * powP
        mass += term
        if k > 100 * (mu + 10):
            raise SolverFailure("uniformization did not converge")
    return out


def expm_uniformized(generator, t, tol=1e-12):
    """Transition matrix exp(t L) of a finite generator via uniformization.

    ``generator`` is a dense (n, n) array with zero row sums.  The Poisson
    series is truncated once its mass reaches 1 - tol, so each row of the
    result sums to one up to ``tol``.  Large lam*t is handled by squaring.
    """
    L = np.asarray(generator, dtype=float)
    n = L.shape[0]
    if t < 0:
        raise ValueError("time must be nonnegative")
    lam = float(np.max(-np.diag(L))) if n else 0.0
    if t == 0 or lam == 0:
        return np.eye(n)
    squarings = 0
    while lam * t / (2 ** squarings) > _MU_CHUNK:
        squarings += 1
    out = _expm_single(L, lam, t / (2 ** squarings), tol)
    for _ in range(squarings):
        out = out @ out
    return out


def _apply_uniformized(vec, rates_csr, holding, lam, t, tol):
    mu = lam * t
    v = vec
    term = np.exp(-mu)
    out = term * v
    mass = term
    k = 0
    while mass < 1.0 - tol:
        k += 1
        term *= mu / k
        v = v + (v @ rates_csr - v * holding) / lam
        out = out + term * v
        mass += term
        if k > 100 * (mu + 10):
            raise SolverFailure("uniformization did not converge")
    return out


def semigroup_distribution(rates_csr, holding, start_vec, t, tol=1e-12):
    """Distribution at time t from ``start_vec`` using vector iterations only.

    ``rates_csr`` holds the off-diagonal rates, ``holding`` the rates
    lambda(i).  Suitable as an exact oracle for chains of a few thousand
    states; memory stays O(n + nnz).
    """
    holding = np.asarray(holding, dtype=float)
    v = np.asarray(start_vec, dtype=float)
    lam = float(holding.max()) if holding.size else 0.0
    if t == 0 or lam == 0:
        return v.copy()
    chunks = max(1, int(np.ceil(lam * t / _MU_CHUNK)))
    dt = t / chunks
    for _ in range(chunks):
        v = _apply_uniformized(v, rates_csr, holding, lam, dt, tol)
    return v


def semigroup_row(rates_csr, holding, start, t, tol=1e-12):
    """Row ``start`` of exp(t L), i.e. the law at time t started from a state."""
    v = np.zeros(rates_csr.shape[0])
    v[start] = 1.0
    return semigroup_distribution(rates_csr, holding, v, t, tol)
