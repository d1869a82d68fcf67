"""Node statistics psi_i and the estimators built from them."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, sparse, special

from .errors import ContractViolation, Degenerate, Separation, ZeroDenominator
from .model import DENSE_MAX, ModelSpec, Primitives, SparsityScale, _common, _sparse_lookup
from .network import Net, NetSeries


@dataclass
class NodeStatVector:
    values: np.ndarray
    stat_kind: str
    params: dict = field(default_factory=dict)
    node_ids: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        self.values = v.reshape(len(v), -1)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def total(self) -> np.ndarray:
        return self.values.sum(axis=0)

    def to_csv(self, header=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = header or [f"psi{k}" for k in range(self.dim)]
        w.writerow(["node_id", *header])
        ids = self.node_ids if self.node_ids is not None else np.arange(len(self.values))
        for i, row in zip(ids.tolist(), self.values.tolist()):
            w.writerow([i, *(repr(float(x)) for x in row)])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# subnetwork counts


def _check_t(series, t):
    if not 0 <= t <= series.T:
        raise ContractViolation(f"period {t} outside 0..{series.T}")


def _degree(A):
    return np.diff(A.indptr).astype(float)


def _triangles(A):
    # sum over ordered (j, k) of A_ij A_jk A_ik, i.e. twice the triangles at i
    if A.shape[0] <= DENSE_MAX:
        D = A.toarray().astype(np.int64)
        return ((D @ D) * D).sum(axis=1).astype(float)
    return np.asarray((A @ A).multiply(A).sum(axis=1), dtype=float).ravel()


def _ball_sizes(A, K):
    n = A.shape[0]
    B = sparse.identity(n, dtype=np.int32, format="csr")
    for _ in range(K):
        B = B + B @ A
        B.data[:] = 1
    return np.diff(B.indptr).astype(float)


def count_stat(series: NetSeries, kind: str, t: int = 0, k: int = 2, K: int = 1) -> NodeStatVector:
    """Subnetwork counts at period t.

    ``degree`` counts links, ``dyad`` is half the degree (so totals count
    links), ``triangle`` sums A_ij A_jk A_ik over ordered pairs (j, k),
    ``kstar`` counts k-subsets of neighbours and ``kneigh_size`` is |N(i, K)|.
    """
    _check_t(series, t)
    A = series[t].adjacency
    if kind == "degree":
        v = _degree(A)
    elif kind == "dyad":
        v = _degree(A) / 2
    elif kind == "triangle":
        v = _triangles(A)
    elif kind == "kstar":
        if k < 1:
            raise ContractViolation("k must be >= 1")
        v = special.comb(_degree(A), k)
    elif kind == "kneigh_size":
        if K < 0:
            raise ContractViolation("K must be nonnegative")
        v = _ball_sizes(A, K)
    else:
        raise ContractViolation(f"unknown count kind {kind!r}")
    return NodeStatVector(v, kind, {"t": t, "k": k, "K": K}, series.node_ids)


def dynamic_kneigh(series: NetSeries, i, K: int) -> set:
    """Union over periods of the K-neighbourhoods of i's K-neighbours."""
    if K < 1:
        raise ContractViolation("K must be >= 1")
    net0 = series[0]
    src = net0.index([i])
    first = np.unique(np.concatenate([net.ball(src, K) for net in series.nets]))
    out = np.unique(np.concatenate([net.ball(first, K) for net in series.nets]))
    return set(net0.node_ids[out].tolist())


# ---------------------------------------------------------------------------
# conditional logit on dyads


@dataclass
class GrahamData:
    """Informative dyads (index pairs) with outcome sign G and regressors H."""

    I: np.ndarray
    J: np.ndarray
    G: np.ndarray
    H: np.ndarray


STABLE_RULES = ("switch", "common", "isolated")


def graham_data(series: NetSeries, cap: float | None = None, stable: str = "isolated") -> GrahamData:
    """Informative dyads for the conditional likelihood.

    ``stable`` picks the conditioning event for dyad (i, j):

    * ``"switch"``: the link changes state between periods 1 and 2;
    * ``"common"``: additionally the common-neighbour count is equal in
      periods 1 and 2;
    * ``"isolated"`` (default): additionally neither i nor j has another
      link in periods 1 and 2, so flipping the dyad cannot move any other
      dyad's common-neighbour count.  Only under this event is the
      conditional likelihood exact when the model has a common-neighbour
      effect; the other two rules are biased for that coefficient.

    ``cap`` clips common-neighbour counts the same way the generating model does.
    """
    if series.T < 3:
        raise ContractViolation("the conditional likelihood needs periods 0..3")
    if stable not in STABLE_RULES:
        raise ContractViolation(f"stable must be one of {STABLE_RULES}")
    A = [series[t].adjacency for t in range(4)]
    U = sparse.triu(A[1] + A[2], k=1).tocoo()
    I, J = U.row.astype(np.int64), U.col.astype(np.int64)
    a = [_sparse_lookup(A[t], I, J) for t in range(4)]
    c = [_common(A[t], I, J) for t in range(3)]
    if cap is not None:
        c = [np.minimum(x, cap) for x in c]
    keep = a[1] != a[2]
    if stable != "switch":
        keep &= c[1] == c[2]
    if stable == "isolated":
        for t in (1, 2):
            deg = np.diff(A[t].indptr)
            keep &= (deg[I] - a[t] == 0) & (deg[J] - a[t] == 0)
    G = (a[2] - a[1])[keep]
    H = np.column_stack([a[3] - a[0], c[1] - c[0]])[keep]
    return GrahamData(I[keep], J[keep], G, H)


def _graham_terms(data: GrahamData, theta):
    x = data.G * (data.H @ np.asarray(theta, dtype=float))
    ll = -np.logaddexp(0.0, -x)  # log Lambda(x) = x - log(1 + e^x)
    w = special.expit(-x)  # 1 - Lambda(x)
    return x, ll, w


def graham_loglik(data: GrahamData, theta) -> float:
    return float(_graham_terms(data, theta)[1].sum())


def graham_gradient(data: GrahamData, theta) -> np.ndarray:
    _, _, w = _graham_terms(data, theta)
    return (data.G * w) @ data.H


def graham_hessian(data: GrahamData, theta) -> np.ndarray:
    x = data.G * (data.H @ np.asarray(theta, dtype=float))
    p = special.expit(x)
    return -(data.H * (p * (1 - p))[:, None]).T @ data.H


def graham_score(series: NetSeries, theta, cap: float | None = None, stable: str = "isolated") -> NodeStatVector:
    """psi_i = sum over j of the gradient of the dyad's conditional log-likelihood."""
    data = graham_data(series, cap, stable)
    _, _, w = _graham_terms(data, theta)
    g = data.H * (data.G * w)[:, None]
    out = np.zeros((series.n, 2))
    np.add.at(out, data.I, g)
    np.add.at(out, data.J, g)
    return NodeStatVector(out, "graham", {"theta": list(map(float, theta))}, series.node_ids)


def _separated(data: GrahamData) -> bool:
    # (quasi-)separation: some theta != 0 with G H theta >= 0 for every dyad
    X = data.G[:, None] * data.H
    k = X.shape[1]
    res = optimize.linprog(-X.sum(axis=0), A_ub=-X, b_ub=np.zeros(len(X)), bounds=[(-1, 1)] * k, method="highs")
    return bool(res.status == 0 and -res.fun > 1e-9)


def graham_fit(series: NetSeries, cap: float | None = None, theta0=(0.0, 0.0), tol: float = 1e-8,
               max_iter: int = 100, stable: str = "isolated") -> np.ndarray:
    """Maximize the conditional log-likelihood by damped Newton."""
    data = series if isinstance(series, GrahamData) else graham_data(series, cap, stable)
    if len(data.G) == 0:
        raise Degenerate("no informative dyads")
    if np.linalg.matrix_rank(data.H) < data.H.shape[1]:
        raise Degenerate("regressors of informative dyads are rank deficient")
    if _separated(data):
        raise Separation("a direction in theta raises every dyad's likelihood")
    theta = np.asarray(theta0, dtype=float)
    ll = graham_loglik(data, theta)
    for _ in range(max_iter):
        grad = graham_gradient(data, theta)
        if np.linalg.norm(grad) < tol:
            return theta
        hess = graham_hessian(data, theta)
        try:
            step = np.linalg.solve(hess, -grad)
        except np.linalg.LinAlgError:
            raise Separation("Hessian became singular") from None
        lam = 1.0
        while lam > 1e-12:
            cand = theta + lam * step
            cand_ll = graham_loglik(data, cand)
            if cand_ll >= ll:
                break
            lam /= 2
        theta, ll = cand, cand_ll
        if np.max(np.abs(theta)) > 1e3 or ll > -1e-10:
            raise Separation("log-likelihood is unbounded in theta")
    grad = graham_gradient(data, theta)
    if np.linalg.norm(grad) < tol:
        return theta
    if np.linalg.norm(theta) > 50:
        raise Separation("Newton iterates diverge")
    raise Degenerate(f"Newton did not reach gradient tolerance (|grad|={np.linalg.norm(grad):.2e})")


# ---------------------------------------------------------------------------
# average structural function bounds


def _pair_S(spec: ModelSpec, series: NetSeries, t: int, I, J) -> np.ndarray:
    from .formation import _eval_s

    return _eval_s(spec, series[t - 1].adjacency, I, J)


def asf_stats(spec: ModelSpec, series: NetSeries, s_target, Z=None, tol: float = 1e-9) -> NodeStatVector:
    """Per-node (sum_j A_hat_ij(s), sum_j P_ij(s), sum_j A_ij,0) under the first-hit partition.

    ``s_target`` lists (S components, z_i components, z_j components).  ``Z``
    is the (n, T+1, d_z) attribute panel aligned with ``series.node_ids``.
    """
    if series.T < 1:
        raise ContractViolation("ASF bounds need T >= 1")
    s_target = np.asarray(s_target, dtype=float)
    d_s, d_z = spec.s_dim, spec.d_z
    if s_target.shape != (d_s + 2 * d_z,):
        raise ContractViolation(f"s_target needs {d_s + 2 * d_z} components")
    if Z is None:
        Z = np.zeros((series.n, series.T + 1, d_z))
    lo = np.array([b[0] for b in spec.s_bounds])
    hi = np.array([b[1] for b in spec.s_bounds])
    if np.any(s_target[:d_s] < lo) or np.any(s_target[:d_s] > hi):
        raise ContractViolation("s_target outside s_bounds")
    a, b = series[0].index_pairs()
    # ordered pairs (i, j) and (j, i) of initially linked dyads
    I = np.r_[a, b]
    J = np.r_[b, a]
    hit_any = np.zeros(len(I), dtype=bool)
    a_hat = np.zeros(len(I))
    for t in range(1, series.T + 1):
        S = _pair_S(spec, series, t, I, J)
        bold = np.column_stack([S, Z[I, t], Z[J, t]])
        hit = np.all(np.abs(bold - s_target) <= tol, axis=1)
        first = hit & ~hit_any
        a_hat[first] = _sparse_lookup(series[t].adjacency, I[first], J[first])
        hit_any |= hit
    out = np.zeros((series.n, 3))
    np.add.at(out[:, 0], I, a_hat)
    np.add.at(out[:, 1], I, (~hit_any).astype(float))
    np.add.at(out[:, 2], I, 1.0)
    return NodeStatVector(out, "asf", {"s_target": s_target.tolist()}, series.node_ids)


def asf_bounds(stats) -> tuple[float, float]:
    """(mu_lower, mu_upper) from per-node or already aggregated ASF components."""
    v = stats.values if isinstance(stats, NodeStatVector) else np.asarray(stats, dtype=float)
    tot = v.sum(axis=0) if v.ndim == 2 else v
    if tot[2] <= 0:
        raise ZeroDenominator("no initial links")
    return float(tot[0] / tot[2]), float((tot[0] + tot[1]) / tot[2])


# ---------------------------------------------------------------------------
# statistic registry used by stabilization, CLT and add-one cost


@dataclass(frozen=True)
class StatSpec:
    """A node statistic with its declared locality K.

    ``t=None`` stacks counts over all periods.  ``cap`` clips common-neighbour
    counts in the Graham score.
    """

    kind: str = "degree"
    t: int | None = None
    k: int = 2
    K: int = 1
    theta: tuple = (0.0, 0.0)
    s_target: tuple = ()
    cap: float | None = None
    stable: str = "isolated"

    @property
    def locality(self) -> int:
        return self.K if self.kind == "kneigh_size" else 1

    @classmethod
    def parse(cls, text: str) -> "StatSpec":
        """``"degree"``, ``"triangle:t=1"``, ``"kneigh_size:K=2"`` and so on."""
        kind, _, rest = text.partition(":")
        kw = {}
        for item in filter(None, rest.split(",")):
            key, _, val = item.partition("=")
            if key in ("t", "k", "K"):
                kw[key] = int(val)
            elif key == "cap":
                kw[key] = float(val)
            elif key == "stable":
                kw[key] = val
            elif key in ("theta", "s_target"):
                kw[key] = tuple(float(x) for x in val.split("/"))
            else:
                raise ContractViolation(f"unknown statistic parameter {key!r}")
        if kind not in STAT_KINDS:
            raise ContractViolation(f"unknown statistic {kind!r}")
        return cls(kind, **kw)


STAT_KINDS = ("degree", "dyad", "triangle", "kstar", "kneigh_size", "graham", "asf", "constant")


def compute_stat(spec: ModelSpec, prims: Primitives, series: NetSeries, stat: StatSpec | str) -> np.ndarray:
    """(n, dim) matrix of psi_i, rows aligned with ``series.node_ids``."""
    if isinstance(stat, str):
        stat = StatSpec.parse(stat)
    if stat.kind in ("degree", "dyad", "triangle", "kstar", "kneigh_size"):
        periods = range(series.T + 1) if stat.t is None else [stat.t]
        cols = [count_stat(series, stat.kind, t, stat.k, stat.K).values[:, 0] for t in periods]
        return np.column_stack(cols) if cols else np.zeros((series.n, 0))
    if stat.kind == "graham":
        cap = stat.cap
        if cap is None and spec.s_impl.capped:
            cap = spec.s_bounds[-1][1]
        return graham_score(series, stat.theta, cap, stat.stable).values
    if stat.kind == "asf":
        Z = prims.Z[prims.index(series.node_ids)] if len(prims) else None
        return asf_stats(spec, series, stat.s_target, Z).values
    if stat.kind == "constant":
        return np.ones((series.n, 1))
    raise ContractViolation(f"unknown statistic {stat.kind!r}")


def add_one_cost(spec: ModelSpec, prims_extended: Primitives, scale: SparsityScale, stat: StatSpec | str) -> np.ndarray:
    """Change in sum_i psi_i when the last node of ``prims_extended`` is added."""
    from .formation import generate

    ids = prims_extended.node_ids
    if len(ids) < 1:
        raise ContractViolation("need at least the added node")
    big = compute_stat(spec, prims_extended, generate(spec, prims_extended, scale), stat).sum(axis=0)
    if len(ids) == 1:
        return big
    small_prims = prims_extended.subset(ids[:-1])
    small = compute_stat(spec, small_prims, generate(spec, small_prims, scale), stat).sum(axis=0)
    return big - small
