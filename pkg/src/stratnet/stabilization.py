"""Stabilization sets J_i, radii, regrowth verification and tail diagnostics."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special, stats

from .errors import ContractViolation, InsufficientData
from .formation import PairFrame, classify_robustness, generate, simulate, strategic_neighborhoods
from .model import ModelSpec, Primitives, SparsityScale
from .moments import StatSpec, compute_stat
from .network import Net, NetSeries


def build_M_networks(spec: ModelSpec, prims: Primitives, scale: SparsityScale, frame: PairFrame | None = None):
    """Per-period "possible link" networks (sup over s positive) and their union."""
    frame = frame or PairFrame(spec, prims, scale)
    masks = [frame.base(t) + spec.s_range("V0" if t == 0 else "V")[1] > 0 for t in range(spec.T + 1)]
    union = np.logical_or.reduce(masks) if masks else np.zeros(frame.m, bool)
    return [frame.net(m) for m in masks], frame.net(union)


class StabilizationContext:
    """Caches the objects needed to build J_i for many nodes of one instance."""

    def __init__(self, spec: ModelSpec, prims: Primitives, scale: SparsityScale, K: int = 1):
        if K < 1:
            raise ContractViolation("K must be >= 1")
        self.spec, self.prims, self.scale, self.K = spec, prims, scale, K
        self.frame = PairFrame(spec, prims, scale)
        self.M, self.M_union = build_M_networks(spec, prims, scale, self.frame)
        self.decomp = classify_robustness(spec, prims, scale, self.frame)
        plus = strategic_neighborhoods(self.decomp)
        index = {int(v): k for k, v in enumerate(prims.node_ids)}
        self.c_plus = [np.array(sorted(index[v] for v in s), dtype=np.int64) for s in plus]
        self._mj = {}

    def _plus_of(self, idx) -> np.ndarray:
        if len(idx) == 0:
            return np.zeros(0, np.int64)
        return np.unique(np.concatenate([self.c_plus[a] for a in idx]))

    def m_set(self, a: int, t: int) -> np.ndarray:
        """The set M_{j,t} for node index a."""
        M, K = self.M, self.K
        if t == 0:
            return self._plus_of(M[0].ball([a], K))
        R = M[t].ball([a], K)
        parts = [R]
        for s in range(t - 1, 0, -1):
            R = M[s].ball(R, 1)
            parts.append(R)
        parts.append(self._plus_of(R))
        return np.unique(np.concatenate(parts))

    def m_all(self, a: int) -> np.ndarray:
        if a not in self._mj:
            self._mj[a] = np.unique(np.concatenate([self.m_set(a, t) for t in range(self.spec.T + 1)]))
        return self._mj[a]

    def J_index(self, a: int) -> np.ndarray:
        first = np.unique(np.concatenate([net.ball([a], self.K) for net in self.M]))
        return np.unique(np.concatenate([self.m_all(int(j)) for j in first]))

    def J(self, i) -> set:
        a = int(self.prims.index([i])[0])
        return set(self.prims.node_ids[self.J_index(a)].tolist())


def construct_Ji(spec: ModelSpec, prims: Primitives, scale: SparsityScale, i, K: int = 1) -> set:
    return StabilizationContext(spec, prims, scale, K).J(i)


def j_simple(series: NetSeries, i) -> set:
    """Period-1 neighbours of i together with their period-0 neighbourhoods."""
    if series.T < 1:
        raise ContractViolation("needs periods 0 and 1")
    first = series[1].neighborhood(i, 1)
    out = set(first)
    for j in first:
        out |= series[0].neighborhood(j, 1)
    return out


def radius(prims: Primitives, scale: SparsityScale, i, J) -> float:
    J = list(J)
    if i not in set(int(v) for v in J):
        raise ContractViolation("i must belong to J")
    a = prims.index([i])[0]
    idx = prims.index(J)
    return float(np.max(np.linalg.norm(prims.X[idx] - prims.X[a], axis=1)) / scale.r)


def regrow(spec: ModelSpec, prims: Primitives, scale: SparsityScale, J) -> tuple[Primitives, NetSeries]:
    """Whole pipeline rerun on the subsetted primitives of J (sorted by id)."""
    sub = prims.subset(sorted(int(v) for v in J))
    return sub, generate(spec, sub, scale)


def verify_stabilization(spec: ModelSpec, prims: Primitives, scale: SparsityScale, i, K: int = 1,
                         stat="degree", J=None, series: NetSeries | None = None):
    """(psi_i on the full network, psi_i on the J_i-subnetwork, exactly equal?)."""
    stat = StatSpec.parse(stat) if isinstance(stat, str) else stat
    if series is None:
        series = generate(spec, prims, scale)
    if J is None:
        J = construct_Ji(spec, prims, scale, i, max(K, stat.locality))
    full = compute_stat(spec, prims, series, stat)[series[0].index([i])[0]]
    sub, sub_series = regrow(spec, prims, scale, J)
    part = compute_stat(spec, sub, sub_series, stat)[sub_series[0].index([i])[0]]
    return full, part, bool(np.array_equal(full, part))


# ---------------------------------------------------------------------------
# reports


@dataclass
class StabRecord:
    node: int
    J: set
    J_size: int
    radius: float
    verified: bool | None


@dataclass
class TailFit:
    thresholds: np.ndarray
    log_survival: np.ndarray
    slope: float
    slope_ci: tuple
    n_samples: int
    degenerate: bool = False

    @property
    def exponential_tail(self) -> bool:
        return (not self.degenerate) and self.slope < 0 and self.slope_ci[1] < 0


@dataclass
class StabReport:
    records: list
    failures: int
    size_fit: TailFit | None = None
    radius_fit: TailFit | None = None
    extra: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node", "J_size", "radius", "verified"])
        for r in self.records:
            w.writerow([r.node, r.J_size, repr(r.radius), "" if r.verified is None else str(r.verified).lower()])
        return buf.getvalue()

    def summary(self) -> dict:
        out = {"nodes": len(self.records), "failures": self.failures}
        for name, fit in (("size", self.size_fit), ("radius", self.radius_fit)):
            if fit is not None:
                out[f"{name}_slope"] = fit.slope
                out[f"{name}_slope_ci_lo"], out[f"{name}_slope_ci_hi"] = fit.slope_ci
                out[f"{name}_degenerate"] = fit.degenerate
        out.update(self.extra)
        return out


def stabilization_report(spec: ModelSpec, prims: Primitives, scale: SparsityScale, stats=("degree",),
                         nodes=None, K: int = 1, verify: bool = True, fit_tails: bool = False) -> StabReport:
    """Build J_i for the chosen nodes and, if asked, regrow once per node to
    compare every statistic in ``stats`` exactly.

    With ``fit_tails`` and at least 500 nodes, exponential tail fits of |J_i|
    and of the radius are attached.
    """
    stats = [StatSpec.parse(s) if isinstance(s, str) else s for s in stats]
    K = max([K, *(s.locality for s in stats)])
    ctx = StabilizationContext(spec, prims, scale, K)
    series = generate(spec, prims, scale) if verify else None
    full = [compute_stat(spec, prims, series, s) for s in stats] if verify else []
    nodes = prims.node_ids if nodes is None else np.asarray(nodes)
    records, failures = [], 0
    for i in nodes.tolist():
        a = int(prims.index([i])[0])
        Jidx = ctx.J_index(a)
        J = set(prims.node_ids[Jidx].tolist())
        rad = float(np.max(np.linalg.norm(prims.X[Jidx] - prims.X[a], axis=1)) / scale.r)
        ok = None
        if verify:
            sub, sub_series = regrow(spec, prims, scale, J)
            b = int(sub_series[0].index([i])[0])
            ok = all(np.array_equal(f[a], compute_stat(spec, sub, sub_series, s)[b]) for s, f in zip(stats, full))
            failures += not ok
        records.append(StabRecord(int(i), J, len(J), rad, ok))
    report = StabReport(records, failures)
    if fit_tails and len(records) >= 500:
        report.size_fit = tail_fit([r.J_size for r in records])
        report.radius_fit = tail_fit([r.radius for r in records])
    return report


# ---------------------------------------------------------------------------
# tails and sparsity


def _fit_once(x):
    grid = np.unique(np.percentile(x, np.arange(50, 100)))
    surv = np.array([(x > w).mean() for w in grid])
    keep = surv > 0
    grid, surv = grid[keep], surv[keep]
    if len(grid) < 3:
        return grid, np.log(surv) if len(surv) else surv, np.nan
    slope = np.polyfit(grid, np.log(surv), 1)[0]
    return grid, np.log(surv), float(slope)


def tail_fit(samples, n_boot: int = 200, seed: int = 0) -> TailFit:
    """Least-squares slope of the log empirical survival over the 50th-99th percentiles."""
    x = np.asarray(samples, dtype=float).ravel()
    if len(x) < 500:
        raise InsufficientData(f"tail_fit needs at least 500 samples, got {len(x)}")
    grid, logs, slope = _fit_once(x)
    if not np.isfinite(slope):
        return TailFit(grid, logs, float("nan"), (float("nan"), float("nan")), len(x), degenerate=True)
    gen = np.random.default_rng(seed)
    boots = []
    for _ in range(n_boot):
        b = _fit_once(x[gen.integers(0, len(x), len(x))])[2]
        if np.isfinite(b):
            boots.append(b)
    lo, hi = np.percentile(boots, [2.5, 97.5]) if boots else (np.nan, np.nan)
    return TailFit(grid, logs, slope, (float(lo), float(hi)), len(x))


def distance_only_limit(spec: ModelSpec, t: int = 0) -> float | None:
    """Limit of the expected degree when the period-t index depends on distance only.

    Equals kappa times the integral over R^d of P(zeta > |u| - intercept) du.
    Returns None when strategic or attribute terms are active in period t.
    """
    p = spec.params_at(t)
    if t > 0 and spec.T < t:
        return None
    if any(b != 0 for b in p.beta_s) or any(b != 0 for b in p.beta_z):
        return None
    d = spec.d
    area = 2 * np.pi ** (d / 2) / special.gamma(d / 2)
    law = spec.shock_law

    def f(rho):
        return rho ** (d - 1) * law.sf(rho - p.intercept)

    val, _ = integrate.quad(f, 0, np.inf, limit=200)
    return float(spec.kappa * area * val)


@dataclass
class SparsityResult:
    n_grid: list
    mean_degree: np.ndarray  # (len(n_grid), T+1)
    se: np.ndarray
    limit: list
    trend_slope: np.ndarray
    trend_t: np.ndarray


def sparsity_check(spec: ModelSpec, n_grid, reps: int, seed: int = 0, map_fn=map) -> SparsityResult:
    """Monte Carlo mean degree per period across a grid of n."""
    from . import rng

    n_grid = [int(n) for n in n_grid]
    if n_grid != sorted(n_grid):
        raise ContractViolation("n_grid must be ascending")

    def one(args):
        n, rep = args
        _, series = simulate(spec, n, seed=rng.derive_seed(seed, "sparsity", n, rep))
        return [net.degree().mean() for net in series.nets]

    means, ses = [], []
    for n in n_grid:
        vals = np.array(list(map_fn(one, [(n, r) for r in range(reps)])))
        means.append(vals.mean(axis=0))
        ses.append(vals.std(axis=0, ddof=1) / np.sqrt(reps) if reps > 1 else np.zeros(vals.shape[1]))
    means, ses = np.array(means), np.array(ses)
    logs = np.log(n_grid)
    slopes, tstats = [], []
    for col in range(means.shape[1]):
        if len(n_grid) >= 3:
            res = stats.linregress(logs, means[:, col])
            slopes.append(res.slope)
            tstats.append(res.slope / res.stderr if res.stderr > 0 else 0.0)
        else:
            slopes.append(np.nan)
            tstats.append(np.nan)
    limits = [distance_only_limit(spec, t) for t in range(spec.T + 1)]
    return SparsityResult(n_grid, means, ses, limits, np.array(slopes), np.array(tstats))
