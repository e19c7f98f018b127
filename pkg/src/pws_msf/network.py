"""Network topology, the full nN-dimensional Filippov network and its monodromy.

Agents are coupled diffusively, ``x_i' = f(x_i) + sigma * sum_j l_ij E x_j``
with the Laplacian ``L = A - D`` (negative semidefinite).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .agent import AgentModel, Mode
from .errors import (
    ChatterDetected,
    DegenerateDenominator,
    DegenerateEvent,
    DimensionMismatch,
    NonFiniteValue,
    NotConnected,
    NotSymmetric,
    SlidingLost,
    TopologyError,
)
from .integrator import DEFAULT_STEP, MAX_EVENTS, _rk4
from .orbit import OrbitSkeleton
from .variational import transition

log = logging.getLogger(__name__)

ZERO_EIG_TOL = 1e-9
ALPHA_TOL = 1e-9


@dataclass(frozen=True)
class NetworkTopology:
    adjacency: np.ndarray
    laplacian: np.ndarray
    spectrum: np.ndarray
    eigenbasis: np.ndarray
    inner_coupling: np.ndarray
    sigma: float = 0.0

    @property
    def N(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n(self) -> int:
        return self.inner_coupling.shape[0]

    @property
    def coupling_matrix(self) -> np.ndarray:
        return np.kron(self.laplacian, self.inner_coupling)

    def with_sigma(self, sigma: float) -> "NetworkTopology":
        if sigma < 0:
            raise TopologyError("sigma must be non-negative")
        return replace(self, sigma=float(sigma))


def edges_to_adjacency(edges, n_nodes: int | None = None) -> np.ndarray:
    edges = [(int(a), int(b)) for a, b in edges]
    if n_nodes is None:
        n_nodes = 1 + max(max(e) for e in edges)
    A = np.zeros((n_nodes, n_nodes))
    for a, b in edges:
        if a == b:
            raise TopologyError(f"self-loop at node {a}")
        A[a, b] = A[b, a] = 1.0
    return A


def path_graph(N: int) -> np.ndarray:
    return edges_to_adjacency([(i, i + 1) for i in range(N - 1)], N)


def complete_graph(N: int) -> np.ndarray:
    return np.ones((N, N)) - np.eye(N)


def build_topology(adjacency, E, sigma: float = 0.0) -> NetworkTopology:
    """Validate an undirected simple connected graph and diagonalize its Laplacian.

    Eigenvalues are sorted descending, so ``spectrum[0]`` is the zero
    eigenvalue; each eigenvector is signed so its largest entry is positive.
    """
    A = np.array(adjacency, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] == 0:
        raise TopologyError(f"adjacency must be a non-empty square matrix, got shape {A.shape}")
    if not np.array_equal(A, A.T):
        raise NotSymmetric("adjacency matrix is not symmetric")
    if not np.all((A == 0) | (A == 1)):
        raise TopologyError("adjacency entries must be 0 or 1")
    if np.any(np.diag(A) != 0):
        raise TopologyError("adjacency must have a zero diagonal")
    E = np.array(E, dtype=float)
    if E.ndim != 2 or E.shape[0] != E.shape[1]:
        raise DimensionMismatch(f"inner coupling must be square, got shape {E.shape}")
    if sigma < 0:
        raise TopologyError("sigma must be non-negative")

    L = A - np.diag(A.sum(axis=1))
    w, V = np.linalg.eigh(L)
    order = np.argsort(-w, kind="stable")
    w, V = w[order], V[:, order]
    n_zero = int(np.sum(np.abs(w) <= ZERO_EIG_TOL))
    if n_zero != 1:
        raise NotConnected(f"Laplacian has {n_zero} zero eigenvalues; graph is not connected")
    w[0] = 0.0
    for j in range(V.shape[1]):
        k = np.argmax(np.abs(V[:, j]) + 1e-12 * np.arange(V.shape[0])[::-1])
        if V[k, j] < 0:
            V[:, j] = -V[:, j]
    return NetworkTopology(A, L, w, V, E, float(sigma))


def region_index(signs) -> int:
    """Number of the orthant with the given per-agent signs of ``h``.

    Regions are numbered ``1 .. 2**N`` along the sign tree, first agent most
    significant and ``-`` before ``+``: for three agents ``(-,-,-)`` is 1,
    ``(-,+,-)`` is 3 and ``(+,+,+)`` is 8.
    """
    idx = 0
    for s in signs:
        idx = 2 * idx + (1 if s > 0 else 0)
    return idx + 1


# -- network vector field ---------------------------------------------------

_MINUS, _PLUS, _SLIDING = 0, 1, 2
_CODE = {Mode.MINUS: _MINUS, Mode.PLUS: _PLUS, Mode.SLIDING: _SLIDING}
_MODE = {v: k for k, v in _CODE.items()}


@dataclass
class NetworkState:
    x: np.ndarray
    modes: list[Mode]


def coupling_term(topology: NetworkTopology, x: np.ndarray) -> np.ndarray:
    """``sigma (L kron E) x`` as an ``(N, n)`` array of per-agent blocks."""
    X = x.reshape(topology.N, topology.n)
    return topology.sigma * ((topology.laplacian @ X) @ topology.inner_coupling.T)


def _batch(model: AgentModel, fun, X: np.ndarray) -> np.ndarray:
    """Apply a per-agent model function to every row of ``X``."""
    if model.vectorized:
        return np.asarray(fun(X.T), dtype=float).T
    return np.array([fun(x) for x in X], dtype=float)


def _alphas(FM, FP, G, C, sliding):
    """Sliding weights of every agent flagged in ``sliding`` (zero elsewhere).

    Only ``h_i`` constrains agent ``i`` and it depends on ``x_i`` alone, so
    each weight is fixed by its own tangency condition whatever the modes of
    the other agents: ``grad(h).((1-a) f- + a f+ + c_i) = 0``.
    """
    den = (G * (FM - FP)).sum(axis=1)
    num = (G * (FM + C)).sum(axis=1)
    bad = sliding & (den == 0.0)
    if bad.any():
        raise DegenerateDenominator(f"agent {int(np.flatnonzero(bad)[0])}: grad(h).(f- - f+) = 0")
    return np.where(sliding, num / np.where(sliding, den, 1.0), 0.0)


def coupled_alpha(model: AgentModel, xi: np.ndarray, ci: np.ndarray) -> float:
    """Sliding weight of a single agent with coupling input ``ci``."""
    X = np.asarray(xi, dtype=float)[None, :]
    FM = _batch(model, model.field_minus, X)
    FP = _batch(model, model.field_plus, X)
    G = _batch(model, model.switch_grad, X)
    return float(_alphas(FM, FP, G, np.asarray(ci)[None, :], np.array([True]))[0])


def _field(model, topology, x, codes, strict=False):
    X = x.reshape(topology.N, topology.n)
    C = coupling_term(topology, x)
    sliding = codes == _SLIDING
    plus = codes == _PLUS
    FM = _batch(model, model.field_minus, X)
    if not (plus.any() or sliding.any()):
        return (FM + C).reshape(-1)
    FP = _batch(model, model.field_plus, X)
    out = np.where(plus[:, None], FP, FM)
    if sliding.any():
        G = _batch(model, model.switch_grad, X)
        a = _alphas(FM, FP, G, C, sliding)
        if strict:
            bad = sliding & ((a < -ALPHA_TOL) | (a > 1.0 + ALPHA_TOL))
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise SlidingLost(f"agent {i}: sliding weight {a[i]:.6g} outside [0, 1]")
        a = a[:, None]
        out = np.where(sliding[:, None], (1.0 - a) * FM + a * FP, out)
    return (out + C).reshape(-1)


def network_field(model: AgentModel, topology: NetworkTopology, state: NetworkState) -> np.ndarray:
    x = np.asarray(state.x, dtype=float)
    if x.shape != (topology.N * topology.n,) or topology.n != model.dim:
        raise DimensionMismatch(f"network state must have length {topology.N * model.dim}")
    if len(state.modes) != topology.N:
        raise DimensionMismatch("one mode per agent required")
    codes = np.array([_CODE[m] for m in state.modes])
    return _field(model, topology, x, codes, strict=True)


def sync_error(x: np.ndarray, N: int) -> float | np.ndarray:
    """Largest pairwise distance between agent states (rows of ``x`` if 2-D)."""
    X = np.asarray(x).reshape(x.shape[:-1] + (N, -1))
    d = X[..., :, None, :] - X[..., None, :, :]
    return np.sqrt((d * d).sum(-1)).max(axis=(-1, -2))


# -- full network simulation --------------------------------------------------


@dataclass
class NetworkTrajectory:
    times: np.ndarray
    states: np.ndarray
    sync_error: np.ndarray
    events: list = field(default_factory=list)
    final_modes: list = field(default_factory=list)


def _surface_modes(model, topology, x, codes, idx):
    """Modes chosen by agents ``idx`` sitting on their own surface.

    The coupled normal velocities decide: both pointing in means sliding,
    both pointing the same way means crossing to that side.
    """
    X = x.reshape(topology.N, topology.n)
    C = coupling_term(topology, x)
    G = _batch(model, model.switch_grad, X)
    sm = (G * (_batch(model, model.field_minus, X) + C)).sum(axis=1)
    sp = (G * (_batch(model, model.field_plus, X) + C)).sum(axis=1)
    out = {}
    for i in idx:
        if sm[i] > 0 and sp[i] < 0:
            out[i] = _SLIDING
        elif sm[i] > 0 and sp[i] > 0 and codes[i] != _PLUS:
            out[i] = _PLUS
        elif sm[i] < 0 and sp[i] < 0 and codes[i] != _MINUS:
            out[i] = _MINUS
        else:
            raise DegenerateEvent(f"agent {i}: non-generic surface point "
                                  f"(normal velocities {sm[i]:.3e}, {sp[i]:.3e})")
    return out


def _initial_codes(model, topology, x):
    X = x.reshape(topology.N, topology.n)
    H = _batch(model, model.switch, X)
    scale = 1e-12 * (1.0 + np.linalg.norm(X, axis=1))
    codes = np.where(H > 0, _PLUS, _MINUS)
    on = np.flatnonzero(np.abs(H) <= scale)
    codes[on] = -1
    for i, c in _surface_modes(model, topology, x, codes, on).items():
        codes[i] = c
    return codes


def _monitors(model, topology, x, codes):
    """``(N, 2)`` event functions, positive while each agent's mode is valid.

    Free agents watch ``-+h``; sliding agents watch ``a`` and ``1 - a``.
    """
    X = x.reshape(topology.N, topology.n)
    H = _batch(model, model.switch, X)
    vals = np.full((topology.N, 2), np.inf)
    vals[:, 0] = np.where(codes == _PLUS, H, -H)
    sliding = codes == _SLIDING
    if sliding.any():
        FM = _batch(model, model.field_minus, X)
        FP = _batch(model, model.field_plus, X)
        G = _batch(model, model.switch_grad, X)
        a = _alphas(FM, FP, G, coupling_term(topology, x), sliding)
        vals[sliding, 0] = a[sliding]
        vals[sliding, 1] = 1.0 - a[sliding]
    return vals


def _project_sliding(model, topology, x, codes):
    sliding = codes == _SLIDING
    if not sliding.any():
        return x
    X = x.reshape(topology.N, topology.n).copy()
    for _ in range(10):
        Xs = X[sliding]
        H = _batch(model, model.switch, Xs)
        if np.all(np.abs(H) <= 1e-15):
            break
        G = _batch(model, model.switch_grad, Xs)
        X[sliding] = Xs - (H / (G * G).sum(axis=1))[:, None] * G
    return X.reshape(-1)


def simulate_network(model: AgentModel, topology: NetworkTopology, x0, t_end: float,
                     step: float = DEFAULT_STEP, modes: list[Mode] | None = None,
                     max_events: int = MAX_EVENTS, record_every: int = 1) -> NetworkTrajectory:
    """Event-driven RK4 simulation of the coupled network on ``[0, t_end]``.

    Every agent switches mode independently. When several agents reach their
    events within rounding of each other they are processed in index order.
    ``events`` lists ``(t, agent, old_mode, new_mode)``.
    """
    N, n = topology.N, topology.n
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (N * n,) or model.dim != n:
        raise DimensionMismatch(f"initial state must have length {N * model.dim}")
    if modes is not None:
        if len(modes) != N:
            raise DimensionMismatch("one mode per agent required")
        codes = np.array([_CODE[m] for m in modes])
    else:
        codes = _initial_codes(model, topology, x)
    x = _project_sliding(model, topology, x, codes)

    times = [0.0]
    states = [x.copy()]
    events = []
    t = 0.0
    t_base = 0.0
    k = 0
    n_steps = 0
    while t < t_end:
        t_next = min(t_base + (k + 1) * step, t_end)
        h = t_next - t
        cur = codes.copy()

        def fun(y, cur=cur):
            return _field(model, topology, y, cur)

        def advance(tau, cur=cur):
            return _project_sliding(model, topology, _rk4(fun, x, tau)[0], cur)

        x_b = advance(h)
        if not np.all(np.isfinite(x_b)):
            raise NonFiniteValue(f"non-finite network state at t = {t_next}")
        after = _monitors(model, topology, x_b, cur)
        if not np.any(after < 0):
            x, t = x_b, t_next
            k += 1
            n_steps += 1
            if n_steps % record_every == 0 or t >= t_end:
                times.append(t)
                states.append(x)
            continue

        roots = []
        for i, j in np.argwhere(after < 0):
            def phi(tau, i=i, j=j):
                return _monitors(model, topology, advance(tau), cur)[i, j]
            roots.append((brentq(phi, 0.0, h, xtol=1e-300, rtol=4 * np.finfo(float).eps),
                          int(i), int(j)))
        tau = min(r[0] for r in roots)
        x_ev = advance(tau)
        t_ev = t + tau
        hit = sorted({(i, j) for r, i, j in roots if r - tau <= 1e-12 * max(h, 1.0)})
        if len(hit) > 1:
            log.info("t=%.12g: agents %s switch simultaneously; processed in index order",
                     t_ev, [i for i, _ in hit])
        for i, j in hit:
            if cur[i] == _SLIDING:
                new = _MINUS if j == 0 else _PLUS
            else:
                new = _surface_modes(model, topology, x_ev, codes, [i])[i]
            codes[i] = new
            if new == _SLIDING:
                x_ev = _project_sliding(model, topology, x_ev, codes)
            events.append((t_ev, i, _MODE[int(cur[i])], _MODE[int(new)]))
        if len(events) > max_events:
            raise ChatterDetected(f"more than {max_events} network events")
        x, t = x_ev, t_ev
        t_base, k = t_ev, 0
        times.append(t)
        states.append(x.copy())

    states = np.array(states)
    return NetworkTrajectory(np.array(times), states, sync_error(states, N), events,
                             [_MODE[int(c)] for c in codes])


def synchronous_state(x_agent, N: int) -> np.ndarray:
    return np.tile(np.asarray(x_agent, dtype=float), N)


def perturbed_state(x_agent, N: int, size: float) -> np.ndarray:
    """Synchronous state with agent ``j`` shifted by ``size * j / (N - 1)`` in every component."""
    x = np.asarray(x_agent, dtype=float)
    blocks = [x + (size * j / max(N - 1, 1)) * np.ones_like(x) for j in range(N)]
    return np.concatenate(blocks)


# -- full monodromy ----------------------------------------------------------


def _kron_left(Lm: np.ndarray, Bk: np.ndarray) -> np.ndarray:
    """Batched ``kron(Lm, Bk[...])`` over the leading axes of ``Bk``."""
    lead = Bk.shape[:-2]
    N = Lm.shape[0]
    n = Bk.shape[-1]
    out = np.einsum("ij,...ab->...iajb", Lm, Bk)
    return out.reshape(lead + (N * n, N * n))


def full_monodromy(model: AgentModel, topology: NetworkTopology,
                   skeleton: OrbitSkeleton) -> np.ndarray:
    """Monodromy of the whole network along the synchronous orbit.

    Free segments use ``I kron Df + sigma L kron E``; sliding segments use
    ``I kron Df_sigma + sigma L kron B + sigma L kron E``; every event jumps by
    ``I kron S``. Dense ``nN x nN`` products: a validation tool only.
    """
    N, n = topology.N, topology.n
    I_N = np.eye(N)
    L = topology.laplacian
    E = topology.inner_coupling
    sig = topology.sigma
    LE = np.kron(L, E)

    def coefficient(seg, lin, sl):
        J = lin["jac"][sl]
        A = _kron_left(I_N, J) + sig * LE
        if lin["proj"] is not None:
            A = A + sig * _kron_left(L, lin["proj"][sl] @ E)
        return A

    return transition(model, skeleton, N * n, coefficient, lambda S: np.kron(I_N, S))
