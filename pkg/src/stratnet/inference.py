"""Monte Carlo CLT checks, the Poissonization variance identity and
network-level inference (sign-flip randomization and the few-cluster t-test)."""
from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import rng
from ._parallel import pmap
from .errors import ContractViolation, TooFewNetworks
from .formation import draw_node_count, generate, simulate
from .model import ModelSpec, SparsityScale, sample_primitives
from .moments import StatSpec, compute_stat
from .network import NetSeries

EXACT_MAX_NETWORKS = 14


def _as_stat(stat) -> StatSpec:
    return StatSpec.parse(stat) if isinstance(stat, str) else stat


# ---------------------------------------------------------------------------
# CLT


@dataclass
class McReport:
    stat_kind: str
    n: int
    reps: int
    moment_draws: np.ndarray  # (reps, dim), n^{-1/2} sum_i psi_i
    standardized: np.ndarray  # (reps, dim)
    ks_stat: np.ndarray  # per component, nan when zero variance
    ks_pvalue: np.ndarray
    variance_estimate: np.ndarray
    zero_variance: np.ndarray  # per component flags

    @property
    def ks_max(self) -> float:
        ok = ~self.zero_variance
        return float(np.max(self.ks_stat[ok])) if ok.any() else float("nan")

    def qq(self, component: int = 0) -> np.ndarray:
        """(theoretical, empirical) quantile pairs for one component."""
        z = np.sort(self.standardized[:, component])
        p = (np.arange(1, len(z) + 1) - 0.5) / len(z)
        return np.column_stack([stats.norm.ppf(p), z])

    def draws_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        dim = self.moment_draws.shape[1]
        w.writerow(["rep"] + [f"draw_{k}" for k in range(dim)] + [f"std_{k}" for k in range(dim)])
        for r in range(self.reps):
            w.writerow([r, *map(repr, self.moment_draws[r].tolist()), *map(repr, self.standardized[r].tolist())])
        return buf.getvalue()

    def qq_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["component", "theoretical", "empirical"])
        for k in range(self.moment_draws.shape[1]):
            for a, b in self.qq(k).tolist():
                w.writerow([k, repr(a), repr(b)])
        return buf.getvalue()

    def summary(self) -> dict:
        out = {"stat": self.stat_kind, "n": self.n, "reps": self.reps}
        for k in range(len(self.ks_stat)):
            out[f"ks_stat_{k}"] = self.ks_stat[k]
            out[f"ks_pvalue_{k}"] = self.ks_pvalue[k]
            out[f"zero_variance_{k}"] = bool(self.zero_variance[k])
        return out


def studentize(draws):
    """Cross-replication studentization; zero-variance columns come back as zeros."""
    x = np.asarray(draws, dtype=float)
    mu = x.mean(axis=0)
    sd = x.std(axis=0, ddof=1)
    scale_ = np.maximum(np.abs(mu), 1.0)
    zero = sd <= 1e-12 * scale_
    z = np.where(zero, 0.0, (x - mu) / np.where(zero, 1.0, sd))
    return z, zero


def _report(kind, n, draws) -> McReport:
    z, zero = studentize(draws)
    ks_s = np.full(draws.shape[1], np.nan)
    ks_p = np.full(draws.shape[1], np.nan)
    for k in np.flatnonzero(~zero):
        res = stats.kstest(z[:, k], "norm")
        ks_s[k], ks_p[k] = res.statistic, res.pvalue
    var = np.atleast_2d(np.cov(draws, rowvar=False))
    return McReport(kind, n, len(draws), draws, z, ks_s, ks_p, var, zero)


def mc_clt_many(spec: ModelSpec, n: int, reps: int, stats_=("degree",), seed: int = 0, threads: int = 1,
                min_reps: int = 500) -> dict:
    """``mc_clt`` for several statistics computed on the same simulated networks."""
    if reps < min_reps:
        raise ContractViolation(f"reps must be >= {min_reps}")
    sts = [_as_stat(s) for s in stats_]

    def one(r):
        prims, series = simulate(spec, n, seed=rng.derive_seed(seed, "clt", r))
        return [compute_stat(spec, prims, series, st).sum(axis=0) / np.sqrt(n) for st in sts]

    out = pmap(one, range(reps), threads)
    return {name: _report(st.kind, n, np.array([o[k] for o in out]))
            for k, (name, st) in enumerate(zip(stats_, sts))}


def mc_clt(spec: ModelSpec, n: int, reps: int, stat="degree", seed: int = 0, threads: int = 1,
           min_reps: int = 500) -> McReport:
    """Simulate ``reps`` networks and compare n^{-1/2} sum_i psi_i, studentized
    across replications, with the standard normal (one KS test per component)."""
    return mc_clt_many(spec, n, reps, [stat], seed, threads, min_reps)[stat]


# ---------------------------------------------------------------------------
# Poissonization


@dataclass
class VarianceDecomposition:
    n: int
    reps: int
    sigma2: np.ndarray  # binomial variance of n^{-1/2} Lambda_n
    sigma2_tilde: np.ndarray  # Poissonized variance of n^{-1/2} Lambda_N
    sigma2_tilde_adj: np.ndarray  # same, corrected for sampling error in Var(N)
    alpha: np.ndarray  # mean add-one cost
    alpha_se: np.ndarray
    var_N: float
    add_one_draws: np.ndarray = field(repr=False)

    @property
    def rhs(self) -> np.ndarray:
        return self.sigma2_tilde_adj - self.alpha ** 2

    @property
    def rhs_raw(self) -> np.ndarray:
        return self.sigma2_tilde - self.alpha ** 2

    @property
    def relative_gap(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.abs(self.sigma2 - self.rhs) / np.abs(self.sigma2)

    @property
    def absolute_gap(self) -> np.ndarray:
        return np.abs(self.sigma2 - self.rhs)

    def summary(self) -> dict:
        out = {"n": self.n, "reps": self.reps, "var_N": self.var_N}
        for k in range(len(self.sigma2)):
            for name in ("sigma2", "sigma2_tilde", "sigma2_tilde_adj", "alpha", "alpha_se", "rhs", "relative_gap"):
                out[f"{name}_{k}"] = float(getattr(self, name)[k])
        return out


def poisson_variance_decomp(spec: ModelSpec, n: int, reps: int, stat="degree", seed: int = 0,
                            threads: int = 1, min_reps: int = 2000, added: int = 1) -> VarianceDecomposition:
    """Estimate both sides of sigma^2 = sigma~^2 - alpha^2.

    Each replication draws keyed primitives on ids 0..max(n, N + added), so
    the binomial sample (ids < n) and the Poisson sample (ids < N) are nested.
    The add-one cost is measured ``added`` times per replication, each time
    inserting a different fresh node (id N + k) into the Poisson sample, and
    averaged.  The scale is fixed at n throughout.

    Var(N) is known to equal n; the adjusted sigma~^2 swaps the sampled
    Var(N) for n in the leading alpha^2 Var(N)/n part of the Poisson variance,
    which removes most of its Monte Carlo noise.
    """
    if reps < min_reps:
        raise ContractViolation(f"reps must be >= {min_reps}")
    if added < 1:
        raise ContractViolation("added must be >= 1")
    st = _as_stat(stat)
    scale = SparsityScale.from_spec(spec, n)

    def total(prims):
        return compute_stat(spec, prims, generate(spec, prims, scale), st).sum(axis=0)

    def one(r):
        s = rng.derive_seed(seed, "vardecomp", r)
        N = draw_node_count(n, True, s)
        prims = sample_primitives(spec, np.arange(max(n, N + added)), s)
        lam_n = total(prims.subset(np.arange(n)))
        lam_N = total(prims.subset(np.arange(N))) if N > 0 else np.zeros_like(lam_n)
        xi = np.mean([total(prims.subset(np.r_[np.arange(N), N + k])) - lam_N for k in range(added)], axis=0)
        return N, lam_n, lam_N, xi

    out = pmap(one, range(reps), threads)
    Ns = np.array([o[0] for o in out], dtype=float)
    lam_n = np.array([o[1] for o in out])
    lam_N = np.array([o[2] for o in out])
    xi = np.array([o[3] for o in out])
    sigma2 = lam_n.var(axis=0, ddof=1) / n
    sigma2_t = lam_N.var(axis=0, ddof=1) / n
    alpha = xi.mean(axis=0)
    var_N = float(Ns.var(ddof=1))
    adj = sigma2_t + alpha ** 2 * (n - var_N) / n
    return VarianceDecomposition(n, reps, sigma2, sigma2_t, adj, alpha,
                                 xi.std(axis=0, ddof=1) / np.sqrt(reps), var_N, xi)


def constant_decomposition(c: float, n: int, Ns) -> tuple[float, float, float]:
    """Closed-form sides of the identity for psi == c given Poisson draws Ns:
    (sigma^2, adjusted sigma~^2, alpha)."""
    Ns = np.asarray(Ns, dtype=float)
    s2 = Ns.var(ddof=1) * c * c / n
    return 0.0, s2 + c * c * (n - Ns.var(ddof=1)) / n, c


# ---------------------------------------------------------------------------
# network-level tests


def _tstats(X):
    """Per-component one-sample t statistics of the rows of X (flips, G, k)."""
    G = X.shape[-2]
    m = X.mean(axis=-2)
    ss = (X ** 2).sum(axis=-2) - G * m ** 2
    ss = np.maximum(ss, 0.0)
    s = np.sqrt(ss / (G - 1))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(s > 0, np.sqrt(G) * m / np.where(s > 0, s, 1.0), np.where(m == 0, 0.0, np.sign(m) * np.inf))
    return t


def _statistic(X, one_sided: bool):
    t = _tstats(X)
    if one_sided:
        return np.max(np.maximum(t, 0.0), axis=-1)
    return np.max(np.abs(t), axis=-1)


def sign_patterns(G: int, draws: int, seed: int) -> np.ndarray:
    """All 2^G patterns when G is small, otherwise the identity plus random draws."""
    if G <= EXACT_MAX_NETWORKS:
        return np.array(list(itertools.product((1.0, -1.0), repeat=G)))
    gen = rng.generator(seed, "signflip", G)
    flips = gen.choice([1.0, -1.0], size=(draws, G))
    flips[0] = 1.0
    return flips


def randomization_test(network_means, mu0, draws: int = 9999, seed: int = 0, one_sided: bool = False,
                       chunk: int = 4096) -> float:
    """Sign-flip randomization p-value for H0: E[mean] = mu0 (or <= mu0 when one-sided).

    The statistic is the largest absolute per-component t statistic across
    networks (the largest positive one when ``one_sided``).
    """
    X = np.asarray(network_means, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    G = X.shape[0]
    if G < 2:
        raise TooFewNetworks("need at least 2 networks")
    if G > EXACT_MAX_NETWORKS and draws < 1000:
        raise ContractViolation("draws must be >= 1000 when enumeration is infeasible")
    mu0 = np.broadcast_to(np.asarray(mu0, dtype=float), X.shape[1:])
    D = X - mu0
    obs = _statistic(D[None], one_sided)[0]
    flips = sign_patterns(G, draws, seed)
    tol = 1e-10 * max(1.0, abs(obs)) if np.isfinite(obs) else 0.0
    hits = 0
    for a in range(0, len(flips), chunk):
        f = flips[a:a + chunk]
        T = _statistic(f[:, :, None] * D[None], one_sided)
        hits += int(np.sum(T >= obs - tol))
    return hits / len(flips)


def im_t_test(network_means, mu0=0.0, one_sided: bool = False) -> float:
    """Few-cluster t-test: per-network estimates treated as independent normals."""
    x = np.asarray(network_means, dtype=float).ravel()
    G = len(x)
    if G < 2:
        raise TooFewNetworks("need at least 2 networks")
    t = float(_tstats((x - mu0)[:, None])[0])
    if one_sided:
        return float(stats.t.sf(t, G - 1)) if np.isfinite(t) else float(t < 0)
    if not np.isfinite(t):
        return 0.0
    return float(2 * stats.t.sf(abs(t), G - 1))


def moment_inequality_stat(series: NetSeries, G_kind, H_user, theta, prims=None, spec: ModelSpec | None = None,
                           t: int = 0) -> np.ndarray:
    """Per-node G_i - H_i(theta).

    ``G_kind`` names a count statistic; ``H_user(x, z, theta)`` maps a node's
    own position row and period-``t`` attributes to a value of the same
    dimension as G_i.  Its network mean feeds the one-sided tests above.
    """
    st = _as_stat(G_kind)
    if st.kind not in ("degree", "dyad", "triangle", "kstar", "kneigh_size"):
        raise ContractViolation("G_kind must be a connected-subnetwork count")
    if st.t is None:
        st = StatSpec(st.kind, t, st.k, st.K)
    Gv = compute_stat(spec, prims, series, st)
    if prims is None:
        H = np.array([np.atleast_1d(H_user(None, None, theta)) for _ in range(series.n)], dtype=float)
    else:
        idx = prims.index(series.node_ids)
        H = np.array([np.atleast_1d(H_user(prims.X[a], prims.Z[a, st.t], theta)) for a in idx], dtype=float)
    return Gv - H.reshape(Gv.shape)
