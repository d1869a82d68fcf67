"""Network formation: initial conditions, pairwise-stable selection, dynamics.

Only pairs that could ever link are materialized.  The keyed sampler never
produces a shock above ``ShockLaw.max_draw``, so a pair whose scaled distance
exceeds ``ceiling + max_draw`` has a negative index for every feasible ``s``
and is dropped without changing any output.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.spatial import cKDTree

from . import rng
from .errors import ContractViolation, NeighborhoodTooLarge, NonConvergence, TooLarge
from .model import ModelSpec, Primitives, SparsityScale, eval_latent, sample_primitives
from .network import Net, NetSeries

ENUM_CAP = 2 ** 20
ORACLE_MAX_NODES = 6


# ---------------------------------------------------------------------------
# candidate pairs


class PairFrame:
    """Candidate pairs (index space, a < b) with their non-strategic index parts."""

    def __init__(self, spec: ModelSpec, prims: Primitives, scale: SparsityScale):
        if prims.T < spec.T:
            raise ContractViolation("primitives cover fewer periods than spec.T")
        if prims.X.shape[1] != spec.d:
            raise ContractViolation("position dimension mismatch")
        self.spec, self.prims, self.scale = spec, prims, scale
        n = len(prims)
        top = max([spec.shock_law.max_draw, *prims.zeta_override.values()])
        reach = max(spec.index_ceiling(w) for w in ("V0", "V")) + top
        if n < 2 or reach <= 0:
            I = J = np.zeros(0, dtype=np.int64)
        else:
            tree = cKDTree(prims.X)
            pairs = tree.query_pairs(reach * scale.r, output_type="ndarray").astype(np.int64)
            p0, p1 = pairs[:, 0], pairs[:, 1]
            ids = prims.node_ids
            lo = np.minimum(ids[p0], ids[p1])
            hi = np.maximum(ids[p0], ids[p1])
            span = int(ids.max()) + 1
            if span < 2 ** 31 and ids.min() >= 0:
                order = np.argsort(lo * span + hi)
            else:
                order = np.lexsort((hi, lo))
            I, J = np.minimum(p0, p1)[order], np.maximum(p0, p1)[order]
        self.I, self.J = I, J
        self.dist = np.linalg.norm(prims.X[I] - prims.X[J], axis=1) / scale.r if len(I) else np.zeros(0)
        self._base = {}

    @property
    def m(self) -> int:
        return len(self.I)

    def base(self, t: int) -> np.ndarray:
        """intercept + beta_z.(z_i + z_j) - delta + zeta for period t."""
        if t not in self._base:
            spec, prims = self.spec, self.prims
            p = spec.params_at(t)
            ids = prims.node_ids
            val = p.intercept - self.dist + prims.zeta(ids[self.I], ids[self.J], t)
            if spec.d_z:
                val = val + (prims.Z[self.I, t] + prims.Z[self.J, t]) @ np.array(p.beta_z)
            self._base[t] = val
        return self._base[t]

    def s_term(self, which, s) -> np.ndarray:
        beta = np.array(self.spec.params(which).beta_s)
        if beta.size == 0:
            return np.zeros(len(s))
        return s @ beta

    def net(self, mask) -> Net:
        return Net.from_index_pairs(self.prims.node_ids, self.I[mask], self.J[mask])


def _eval_s(spec: ModelSpec, A, rows, cols) -> np.ndarray:
    kind = spec.s_impl
    s = np.asarray(kind.fn(A, rows, cols), dtype=float).reshape(len(rows), kind.dim)
    if kind.capped:
        s = np.minimum(s, [b[1] for b in spec.s_bounds])
    return s


# ---------------------------------------------------------------------------
# initial conditions


def form_dyadic_initial(spec: ModelSpec, prims: Primitives, scale: SparsityScale, frame: PairFrame | None = None) -> Net:
    """A_0 with the strategic statistic held at zero."""
    frame = frame or PairFrame(spec, prims, scale)
    return frame.net(frame.base(0) > 0)


@dataclass
class RobustnessDecomposition:
    M0: Net
    robust: Net
    D: Net


def _robust_masks(spec, frame):
    lo, hi = spec.s_range("V0")
    b = frame.base(0)
    return b + hi > 0, b + lo > 0


def classify_robustness(spec: ModelSpec, prims: Primitives, scale: SparsityScale, frame: PairFrame | None = None):
    frame = frame or PairFrame(spec, prims, scale)
    m0, rob = _robust_masks(spec, frame)
    return RobustnessDecomposition(frame.net(m0), frame.net(rob), frame.net(m0 & ~rob))


def strategic_neighborhoods(decomp: RobustnessDecomposition) -> list:
    """C_i^+ for every node (as id sets, in node order)."""
    ids = decomp.D.node_ids
    _, labels = csgraph.connected_components(decomp.D.adjacency, directed=False)
    R = decomp.robust.adjacency
    members = {}
    for a, lab in enumerate(labels):
        members.setdefault(lab, []).append(a)
    plus = {}
    for lab, idx in members.items():
        idx = np.asarray(idx)
        partners = np.unique(R[idx].indices) if len(idx) else np.zeros(0, int)
        plus[lab] = set(ids[idx].tolist()) | set(ids[partners].tolist())
    return [plus[lab] for lab in labels]


# ---------------------------------------------------------------------------
# pairwise stable selection


def _components(frame, dmask):
    """Group D-pairs by the D-component of their endpoints."""
    n = len(frame.prims)
    I, J = frame.I[dmask], frame.J[dmask]
    G = sparse.csr_matrix((np.ones(len(I)), (I, J)), shape=(n, n))
    _, labels = csgraph.connected_components(G, directed=False)
    comp = labels[I]
    order = np.argsort(comp, kind="stable")
    pair_idx = np.flatnonzero(dmask)[order]
    bounds = np.flatnonzero(np.diff(comp[order])) + 1
    return np.split(pair_idx, bounds) if len(pair_idx) else []


def _local_problem(frame, rob, pairs):
    """Dense local adjacency over C^+ for the D-pairs ``pairs`` of one component."""
    I, J = frame.I, frame.J
    nodes = np.unique(np.r_[I[pairs], J[pairs]])
    touch = rob & (np.isin(I, nodes) | np.isin(J, nodes))
    nodes = np.unique(np.r_[nodes, I[touch], J[touch]])
    pos = {int(v): k for k, v in enumerate(nodes)}
    inside = rob & np.isin(I, nodes) & np.isin(J, nodes)
    A = np.zeros((len(nodes), len(nodes)), dtype=bool)
    li = np.array([pos[v] for v in I[inside]], dtype=np.int64)
    lj = np.array([pos[v] for v in J[inside]], dtype=np.int64)
    A[li, lj] = A[lj, li] = True
    pi = np.array([pos[v] for v in I[pairs]], dtype=np.int64)
    pj = np.array([pos[v] for v in J[pairs]], dtype=np.int64)
    return A, pi, pj


def _sweep_component(spec, frame, base0, A, pi, pj, max_sweeps):
    beta = np.array(spec.v0_params.beta_s)
    for _ in range(max_sweeps):
        changed = False
        for k in range(len(pi)):
            a, b = pi[k], pj[k]
            s = _eval_s(spec, A, np.array([a]), np.array([b]))[0]
            new = base0[k] + (s @ beta if beta.size else 0.0) > 0
            if new != A[a, b]:
                A[a, b] = A[b, a] = new
                changed = True
        if not changed:
            return A[pi, pj].copy()
    raise NonConvergence(f"best response did not settle within {max_sweeps} sweeps")


def _enumerate_component(spec, frame, base0, A, pi, pj):
    m = len(pi)
    if 2 ** m > ENUM_CAP:
        raise NeighborhoodTooLarge(f"strategic neighborhood has {m} non-robust pairs")
    beta = np.array(spec.v0_params.beta_s)
    best = None
    # candidates ordered by link count, then lexicographically in pair order
    for k in range(m + 1):
        for on in itertools.combinations(range(m), k):
            bits = np.zeros(m, dtype=bool)
            bits[list(on)] = True
            A[pi, pj] = A[pj, pi] = bits
            s = _eval_s(spec, A, pi, pj)
            stable = (base0 + (s @ beta if beta.size else 0.0) > 0) == bits
            if stable.all():
                best = bits
                break
        if best is not None:
            break
    if best is None:
        raise NonConvergence("no pairwise stable configuration exists in a strategic neighborhood")
    return best


def _solve_frame(spec, frame, method="auto", max_sweeps=None):
    m0, rob = _robust_masks(spec, frame)
    dmask = m0 & ~rob
    links = rob.copy()
    if not dmask.any():
        return frame.net(links)
    if method == "auto":
        method = "lattice" if spec.monotone else "enumerate"
    base0 = frame.base(0)
    if method == "lattice":
        # Iterating the best-response map from the robust network climbs to the
        # least fixed point, the same network the per-neighborhood sweep reaches.
        d_idx = np.flatnonzero(dmask)
        cap = max_sweeps or (len(d_idx) + 1)
        for _ in range(cap + 1):
            A = frame.net(links).adjacency
            s = _eval_s(spec, A, frame.I[d_idx], frame.J[d_idx])
            new = base0[d_idx] + frame.s_term("V0", s) > 0
            if np.array_equal(new, links[d_idx]):
                return frame.net(links)
            links[d_idx] = new
        raise NonConvergence("best-response iteration exceeded its cap")
    for pairs in _components(frame, dmask):
        A, pi, pj = _local_problem(frame, rob, pairs)
        if method == "sweep":
            cap = max_sweeps or (len(pairs) + 1)
            if not spec.monotone:
                cap = max_sweeps or 100 * (len(pairs) + 1)
            out = _sweep_component(spec, frame, base0[pairs], A, pi, pj, cap)
        elif method == "enumerate":
            out = _enumerate_component(spec, frame, base0[pairs], A, pi, pj)
        else:
            raise ValueError(f"unknown method {method!r}")
        links[pairs] = out
    return frame.net(links)


def solve_pairwise_stable(spec: ModelSpec, prims: Primitives, scale: SparsityScale, method: str = "auto",
                          frame: PairFrame | None = None) -> Net:
    """Pairwise-stable A_0 chosen by myopic best response from the robust network.

    ``method``: ``"sweep"`` runs the Gauss-Seidel sweep per strategic
    neighborhood in ascending pair order; ``"lattice"`` iterates the whole
    best-response map at once (identical output under monotonicity);
    ``"enumerate"`` picks, per neighborhood, the stable configuration with the
    fewest links (ties broken lexicographically in pair order); ``"auto"`` uses
    ``lattice`` for monotone specs and ``enumerate`` otherwise.
    """
    frame = frame or PairFrame(spec, prims, scale)
    return _solve_frame(spec, frame, method)


def stability_violations(spec: ModelSpec, prims: Primitives, scale: SparsityScale, A0: Net) -> int:
    """Number of pairs whose period-0 condition disagrees with A0 (S taken on A0)."""
    ids = prims.node_ids
    n = len(ids)
    A0 = A0.relabel(ids)
    iu, ju = np.triu_indices(n, k=1)
    d = np.linalg.norm(prims.X[iu] - prims.X[ju], axis=1) / scale.r
    s = _eval_s(spec, A0.adjacency, iu, ju)
    z = prims.zeta(ids[iu], ids[ju], 0)
    v = eval_latent(spec, "V0", d, s, prims.Z[iu, 0], prims.Z[ju, 0], z)
    current = np.asarray(A0.adjacency[iu, ju]).ravel() > 0
    return int(np.sum((np.asarray(v) > 0) != current))


def enumerate_pairwise_stable(spec: ModelSpec, prims: Primitives, scale: SparsityScale) -> list:
    """Every pairwise-stable period-0 network, by exhaustive search."""
    n = len(prims)
    if n > ORACLE_MAX_NODES:
        raise TooLarge(f"enumeration supports at most {ORACLE_MAX_NODES} nodes")
    ids = prims.node_ids
    iu, ju = np.triu_indices(n, k=1)
    m = len(iu)
    codes = np.arange(2 ** m, dtype=np.int64)
    bits = ((codes[:, None] >> np.arange(m)) & 1).astype(bool)
    A = np.zeros((2 ** m, n, n), dtype=bool)
    A[:, iu, ju] = bits
    A[:, ju, iu] = bits
    # direct statistic evaluation, independent of the registry code path
    lag = A[:, iu, ju].astype(float)
    common = np.einsum("cik,cjk->cij", A.astype(np.int64), A.astype(np.int64))[:, iu, ju].astype(float)
    kind = spec.s_kind
    hi = [b[1] for b in spec.s_bounds]
    if kind == "none":
        S = np.zeros((2 ** m, m, 0))
    elif kind == "lagged_link":
        S = lag[..., None]
    elif kind == "common_neighbor_max":
        S = np.minimum(common, 1.0)[..., None]
    elif kind == "common_neighbor_count":
        S = np.minimum(common, hi[0])[..., None]
    elif kind == "lagged_link_and_common_max":
        S = np.stack([lag, np.minimum(common, 1.0)], axis=-1)
    elif kind == "lagged_link_and_common_count":
        S = np.stack([lag, np.minimum(common, hi[1])], axis=-1)
    else:
        S = np.stack([_eval_s(spec, A[c], iu, ju) for c in range(2 ** m)])
    d = np.linalg.norm(prims.X[iu] - prims.X[ju], axis=1) / scale.r
    z = prims.zeta(ids[iu], ids[ju], 0)
    V = eval_latent(spec, "V0", d, S, prims.Z[iu, 0], prims.Z[ju, 0], z)
    stable = np.all((np.asarray(V) > 0) == bits, axis=1)
    return [Net.from_index_pairs(ids, iu[bits[c]], ju[bits[c]]) for c in np.flatnonzero(stable)]


# ---------------------------------------------------------------------------
# dynamics and pipeline


def roll_forward(spec: ModelSpec, prims: Primitives, scale: SparsityScale, A0: Net,
                 frame: PairFrame | None = None) -> NetSeries:
    frame = frame or PairFrame(spec, prims, scale)
    nets = [A0.relabel(prims.node_ids)]
    for t in range(1, spec.T + 1):
        prev = nets[-1].adjacency
        s = _eval_s(spec, prev, frame.I, frame.J)
        nets.append(frame.net(frame.base(t) + frame.s_term("V", s) > 0))
    return NetSeries(nets)


def generate(spec: ModelSpec, prims: Primitives, scale: SparsityScale, method: str = "auto") -> NetSeries:
    """Full pipeline on given primitives: initial condition then roll-forward."""
    frame = PairFrame(spec, prims, scale)
    if spec.dyadic_initial:
        A0 = form_dyadic_initial(spec, prims, scale, frame)
    else:
        A0 = _solve_frame(spec, frame, method)
    return roll_forward(spec, prims, scale, A0, frame)


def draw_node_count(n: int, poissonized: bool, seed: int) -> int:
    if not poissonized:
        return int(n)
    return int(rng.generator(seed, "poisson_n").poisson(n))


def empty_primitives(spec: ModelSpec, seed: int) -> Primitives:
    return Primitives(np.zeros(0, np.int64), np.zeros((0, spec.d)), np.zeros((0, spec.T + 1, spec.d_z)),
                      int(seed), spec.shock_law, spec.T)


def simulate(spec: ModelSpec, n: int, scale_from: int | None = None, poissonized: bool = False,
             seed: int = 0) -> tuple[Primitives, NetSeries]:
    """Sample primitives on ids 0..N-1 and run the pipeline.

    The scale is set from ``scale_from`` (default ``n``) so that node counts
    and scaling can differ.
    """
    if n < 1:
        raise ContractViolation("n must be >= 1")
    scale = SparsityScale.from_spec(spec, scale_from or n)
    N = draw_node_count(n, poissonized, seed)
    if N == 0:
        prims = empty_primitives(spec, seed)
        return prims, NetSeries([Net(prims.node_ids) for _ in range(spec.T + 1)])
    prims = sample_primitives(spec, np.arange(N), seed)
    return prims, generate(spec, prims, scale)
