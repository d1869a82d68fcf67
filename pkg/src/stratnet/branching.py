"""Multi-type Galton-Watson processes that dominate component and neighbourhood sizes.

Offspring point processes are simulated exactly by thinning.  A particle's
offspring intensity is ``kappa * fbar * (1 + r) * k(|y - x|, z, z'') dPhi*(z'') dy``
with kernel ``k`` either ``p1`` (D-process) or ``pbar`` (M-process).  Both
kernels sit below the radial envelope ``g(rho) = min(1, C exp(-lam (rho - a)))``
where ``(C, lam)`` comes from the shock law and ``a`` is the index ceiling, so
we draw a Poisson number of envelope points, give each a radius from the
envelope's radial density, a uniform direction and an attribute from Phi*, and
keep it with probability ``k / g``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from . import rng
from .errors import ContractViolation, QuadratureFailure, SupercriticalSuspected
from .model import ModelSpec, SparsityScale

FBAR = 1.0  # density bound of the uniform position law


# ---------------------------------------------------------------------------
# kernels


def _z_part(spec: ModelSpec, z, z2):
    beta = np.array(spec.v0_params.beta_z)
    if beta.size == 0:
        return 0.0
    return (np.asarray(z, float) + np.asarray(z2, float)) @ beta


def p1_from_distance(spec: ModelSpec, delta, z=None, z2=None):
    """P(sup_s V0 > 0) - P(inf_s V0 > 0) at unit-scaled distance ``delta``."""
    lo, hi = spec.s_range("V0")
    c = spec.v0_params.intercept
    if spec.d_z:
        c = c + _z_part(spec, z, z2)
    sf = spec.shock_law.sf
    delta = np.asarray(delta, dtype=float)
    return np.clip(sf(delta - c - hi) - sf(delta - c - lo), 0.0, 1.0)


def p1_kernel(spec: ModelSpec, x, z, x_prime, z_prime) -> float:
    delta = np.linalg.norm(np.atleast_1d(np.asarray(x, float) - np.asarray(x_prime, float)))
    return float(p1_from_distance(spec, delta, z, z_prime))


def pbar_from_distance(spec: ModelSpec, delta):
    sf = spec.shock_law.sf
    delta = np.asarray(delta, dtype=float)
    none = np.ones_like(delta)
    for t in range(spec.T + 1):
        none = none * (1 - sf(delta - spec.index_ceiling("V0" if t == 0 else "V")))
    return 1 - none


def pbar_kernel(spec: ModelSpec, x, x_prime) -> float:
    delta = np.linalg.norm(np.atleast_1d(np.asarray(x, float) - np.asarray(x_prime, float)))
    return float(pbar_from_distance(spec, delta))


def sphere_area(d: int) -> float:
    return float(2 * np.pi ** (d / 2) / special.gamma(d / 2))


def _attribute_rule(spec: ModelSpec, order: int = 16):
    """Nodes and weights integrating over Phi* (exact for Bernoulli)."""
    dz = spec.d_z
    if dz == 0:
        return np.zeros((1, 0)), np.ones(1)
    law = spec.attribute_law
    if law.kind == "bernoulli":
        pts1, w1 = np.array([0.0, 1.0]), np.array([1 - law.p, law.p])
    else:
        g, w = np.polynomial.legendre.leggauss(order)
        pts1, w1 = (g + 1) / 2, w / 2
    grids = np.meshgrid(*([pts1] * dz), indexing="ij")
    wg = np.meshgrid(*([w1] * dz), indexing="ij")
    pts = np.column_stack([g.ravel() for g in grids])
    wts = np.prod(np.column_stack([g.ravel() for g in wg]), axis=1)
    return pts, wts


def kernel_mass(spec: ModelSpec, kind: str = "D", z=None, slack: float = 0.0) -> float:
    """Expected offspring count over R^d: kappa fbar (1+r) int k dPhi* dy."""
    area = sphere_area(spec.d)
    d = spec.d
    if kind == "D":
        pts, wts = _attribute_rule(spec)
        z = np.zeros(spec.d_z) if z is None else np.asarray(z, float)

        def f(rho):
            p = np.broadcast_to(p1_from_distance(spec, rho, z, pts), wts.shape)
            return rho ** (d - 1) * float(np.dot(wts, p))
    elif kind == "M":
        def f(rho):
            return rho ** (d - 1) * float(pbar_from_distance(spec, rho))
    else:
        raise ContractViolation("kind must be 'D' or 'M'")
    val = _radial_integral(spec, f)
    return float(spec.kappa * FBAR * (1 + slack) * area * val)


def _radial_integral(spec, f):
    # split at the index range so kinks of piecewise laws fall on breakpoints
    pts = sorted({max(0.0, p) for p in (*spec.s_range("V0"), spec.index_ceiling("V0"), spec.index_ceiling("V"),
                                         spec.v0_params.intercept)} | {0.0})
    top = max(pts) + 60 * spec.shock_law.scale + 60
    edges = [*pts, top]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if b <= a:
            continue
        val, err = integrate.quad(f, a, b, limit=200, epsabs=1e-13, epsrel=1e-12)
        if not np.isfinite(val):
            raise QuadratureFailure("radial integral did not converge")
        total += val
    return total


# ---------------------------------------------------------------------------
# envelope sampling


@dataclass(frozen=True)
class _Envelope:
    C: float
    lam: float
    a: float
    d: int

    @property
    def rho0(self) -> float:
        return max(0.0, self.a + np.log(self.C) / self.lam)

    def g(self, rho):
        return np.minimum(1.0, self.C * np.exp(-self.lam * (rho - self.a)))

    def _parts(self):
        d, lam, r0 = self.d, self.lam, self.rho0
        ball = r0 ** d / d
        lead = min(1.0, self.C * np.exp(-self.lam * (r0 - self.a)))
        k = np.arange(d)
        w = lead * special.comb(d - 1, k) * r0 ** (d - 1 - k) * special.factorial(k) / lam ** (k + 1)
        return ball, w

    def radial_mass(self) -> float:
        ball, w = self._parts()
        return sphere_area(self.d) * (ball + w.sum())

    def sample_radius(self, gen, m):
        ball, w = self._parts()
        tot = ball + w.sum()
        probs = np.r_[ball, w] / tot
        comp = gen.choice(len(probs), size=m, p=probs)
        rho = np.empty(m)
        inb = comp == 0
        rho[inb] = self.rho0 * gen.random(inb.sum()) ** (1.0 / self.d)
        tail = ~inb
        shape = comp[tail].astype(float)  # component k+1 is Gamma(k+1)
        rho[tail] = self.rho0 + gen.gamma(shape, 1.0 / self.lam)
        return rho


def _envelope(spec: ModelSpec, kind: str) -> _Envelope:
    C, lam = spec.shock_law.envelope()
    if kind == "D":
        return _Envelope(C, lam, spec.index_ceiling("V0"), spec.d)
    a = max(spec.index_ceiling("V0" if t == 0 else "V") for t in range(spec.T + 1))
    return _Envelope(C * (spec.T + 1), lam, a, spec.d)


def _directions(gen, m, d):
    v = gen.standard_normal((m, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# processes


@dataclass(frozen=True)
class BranchingConfig:
    """``intensity_kind`` is "D", "M" or "H"; ``r`` is the (1 + r) slack.

    ``side`` restricts offspring to the scaled cube [0, side]^d; ``None``
    lets offspring live on all of R^d.  ``K`` is the fixed depth of the
    M-process and the statistic locality used by the hybrid process.
    """

    spec: ModelSpec
    intensity_kind: str = "D"
    r: float = 0.0
    K: int = 1
    population_cap: int = 10 ** 6
    seed: int = 0
    side: float | None = None

    def __post_init__(self):
        if self.intensity_kind not in ("D", "M", "H"):
            raise ContractViolation("intensity_kind must be D, M or H")
        if self.population_cap < 1 or self.r < 0 or self.K < 0:
            raise ContractViolation("invalid branching configuration")

    @classmethod
    def for_scale(cls, spec: ModelSpec, scale: SparsityScale, **kw) -> "BranchingConfig":
        kw.setdefault("r", scale.r)
        kw.setdefault("side", 1.0 / scale.r)
        return cls(spec, **kw)


@dataclass
class BranchingSample:
    root_type: tuple
    total_size: int
    truncated: bool
    generations: int


@dataclass
class BranchingBatch:
    sizes: np.ndarray
    truncated: np.ndarray
    generations: np.ndarray

    def samples(self, roots_x, roots_z):
        return [BranchingSample((roots_x[k], roots_z[k]), int(s), bool(t), int(g))
                for k, (s, t, g) in enumerate(zip(self.sizes, self.truncated, self.generations))]


class _Grower:
    def __init__(self, config: BranchingConfig, gen):
        self.cfg, self.gen, self.spec = config, gen, config.spec
        self.mult = config.spec.kappa * FBAR * (1 + config.r)
        self.env = {k: _envelope(config.spec, k) for k in ("D", "M")}
        self.mass = {k: self.mult * e.radial_mass() for k, e in self.env.items()}

    def offspring(self, kind, x, z):
        """Accepted offspring of each parent: (parent index, positions, attributes)."""
        gen, spec, env = self.gen, self.spec, self.env[kind]
        counts = gen.poisson(self.mass[kind], size=len(x))
        parent = np.repeat(np.arange(len(x)), counts)
        m = len(parent)
        rho = env.sample_radius(gen, m)
        y = x[parent] + rho[:, None] * _directions(gen, m, spec.d)
        z2 = spec.attribute_law.sample(gen, (m, spec.d_z)) if spec.d_z else np.zeros((m, 0))
        if kind == "D":
            k = p1_from_distance(spec, rho, z[parent], z2)
        else:
            k = pbar_from_distance(spec, rho)
        keep = gen.random(m) * env.g(rho) < k
        if self.cfg.side is not None:
            keep &= np.all((y >= 0) & (y <= self.cfg.side), axis=1)
        return parent[keep], y[keep], z2[keep]

    def grow(self, kind, owner, x, z, depth, n_owner, sizes, truncated):
        """Run the process from the given roots for ``depth`` generations
        (None: until extinction).  Returns every particle (roots included)."""
        cap = self.cfg.population_cap
        all_owner, all_x, all_z = [owner], [x], [z]
        gens = np.zeros(n_owner, dtype=np.int64)
        g = 0
        while len(owner) and (depth is None or g < depth):
            alive = ~truncated[owner]
            owner, x, z = owner[alive], x[alive], z[alive]
            if not len(owner):
                break
            parent, x, z = self.offspring(kind, x, z)
            owner = owner[parent]
            g += 1
            if len(owner):
                gens[np.unique(owner)] = g
                np.add.at(sizes, owner, 1)
                over = sizes >= cap
                if over.any():
                    truncated |= over
                    sizes[over] = cap
                    keep = ~truncated[owner]
                    owner, x, z = owner[keep], x[keep], z[keep]
            all_owner.append(owner)
            all_x.append(x)
            all_z.append(z)
        return np.concatenate(all_owner), np.concatenate(all_x), np.concatenate(all_z), gens


def simulate_branching_batch(config: BranchingConfig, roots_x, roots_z=None) -> BranchingBatch:
    """One replication per root, vectorized generation by generation."""
    spec = config.spec
    roots_x = np.asarray(roots_x, float).reshape(-1, spec.d)
    n = len(roots_x)
    roots_z = np.zeros((n, spec.d_z)) if roots_z is None else np.asarray(roots_z, float).reshape(n, spec.d_z)
    gen = rng.generator(config.seed, "branching_" + config.intensity_kind)
    grower = _Grower(config, gen)
    owner = np.arange(n)
    truncated = np.zeros(n, dtype=bool)
    kind = config.intensity_kind
    if kind in ("D", "M"):
        sizes = np.ones(n, dtype=np.int64)
        depth = None if kind == "D" else config.K
        _, _, _, gens = grower.grow(kind, owner, roots_x, roots_z, depth, n, sizes, truncated)
    else:
        # hybrid: fixed-depth M-process, then a D-process from every particle,
        # then a depth-one M-process from every D-particle
        K, T = config.K, spec.T
        tmp = np.zeros(n, dtype=np.int64)
        o1, x1, z1, gens = grower.grow("M", owner, roots_x, roots_z, 2 * K + T + 1, n, tmp, truncated)
        tmp = np.zeros(n, dtype=np.int64)
        o2, x2, z2, _ = grower.grow("D", o1, x1, z1, None, n, tmp, truncated)
        sizes = np.zeros(n, dtype=np.int64)
        np.add.at(sizes, o2, 1)
        o3, _, _, _ = grower.grow("M", o2, x2, z2, 1, n, sizes * 0, truncated)
        sizes = np.bincount(o3, minlength=n).astype(np.int64)
        cap = config.population_cap
        truncated |= sizes >= cap
        sizes = np.minimum(sizes, cap)
        sizes[truncated] = cap
    if n and truncated.mean() > 0.5:
        raise SupercriticalSuspected(f"{truncated.mean():.0%} of replications hit the population cap")
    return BranchingBatch(sizes, truncated, gens)


def simulate_branching(config: BranchingConfig, root) -> BranchingSample:
    x, z = root
    batch = simulate_branching_batch(config, np.atleast_1d(x)[None, :], None if z is None else np.atleast_1d(z)[None, :])
    return batch.samples([x], [z])[0]


# ---------------------------------------------------------------------------
# subcriticality norm


def _h_profile_quad(spec, z_root, pts, wts):
    d = spec.d

    def f(rho):
        p = np.broadcast_to(p1_from_distance(spec, rho, z_root, pts), wts.shape)
        return rho ** (d - 1) * np.sqrt(float(np.dot(wts, p ** 2)))

    return spec.kappa * FBAR * sphere_area(d) * _radial_integral(spec, f)


def _rho_rule(spec, n_seg=16, order=8):
    pts = sorted({max(0.0, p) for p in (*spec.s_range("V0"), spec.index_ceiling("V0"),
                                         spec.v0_params.intercept)} | {0.0})
    top = max(pts) + 60 * spec.shock_law.scale + 60
    edges = np.unique(np.r_[pts, np.linspace(pts[-1], top, n_seg + 1)])
    g, w = np.polynomial.legendre.leggauss(order)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        nodes.append((b - a) / 2 * g + (a + b) / 2)
        weights.append((b - a) / 2 * w)
    return np.concatenate(nodes), np.concatenate(weights)


@dataclass
class NormResult:
    value: float
    se: float
    method: str

    @property
    def subcritical(self) -> bool:
        return self.value < 1


def h_D_norm(spec: ModelSpec, method: str = "quad", n_mc: int = 10 ** 6, seed: int = 0) -> NormResult:
    """Mixed norm of h_D: root-mean-square over root attributes of

        h_D(z) = kappa fbar int_{R^d} ( E_{z'} p1(|u|, z, z')^2 )^{1/2} du,

    which does not depend on the root position because the integral runs over
    all of R^d.  ``method="mc"`` replaces the inner expectation by ``n_mc``
    draws from Phi* and reports a delta-method standard error.
    """
    roots, rw = _attribute_rule(spec, order=8)
    if method == "quad":
        pts, wts = _attribute_rule(spec)
        h = np.array([_h_profile_quad(spec, z, pts, wts) for z in roots])
        return NormResult(float(np.sqrt(np.dot(rw, h ** 2))), 0.0, "quad")
    if method != "mc":
        raise ContractViolation("method must be 'quad' or 'mc'")
    gen = rng.generator(seed, "h_D_mc")
    draws = spec.attribute_law.sample(gen, (n_mc, spec.d_z)) if spec.d_z else np.zeros((1, 0))
    # discrete laws repeat values; evaluate each distinct draw once, weighted
    draws, counts = np.unique(draws, axis=0, return_counts=True)
    counts = counts.astype(float)
    N = counts.sum()
    rho, w = _rho_rule(spec)
    W = spec.kappa * FBAR * sphere_area(spec.d) * w * rho ** (spec.d - 1)
    chunk = max(1, 2_000_000 // len(rho))

    def p2(z, zz):
        p = p1_from_distance(spec, rho[None, :], z, zz[:, None, :] if spec.d_z else None)
        return np.broadcast_to(p, (len(zz), len(rho))) ** 2

    m = np.zeros((len(roots), len(rho)))
    for r_i, z in enumerate(roots):
        for s in range(0, len(draws), chunk):
            m[r_i] += counts[s:s + chunk] @ p2(z, draws[s:s + chunk])
    m /= N
    h = (W * np.sqrt(m)).sum(axis=1)
    norm = float(np.sqrt(np.dot(rw, h ** 2)))
    if spec.d_z == 0 or norm == 0:
        return NormResult(norm, 0.0, "mc")
    with np.errstate(divide="ignore", invalid="ignore"):
        grad = (rw * h)[:, None] * W[None, :] / (2 * norm * np.sqrt(m))
    grad = np.where(np.isfinite(grad), grad, 0.0)
    # per-draw linear functional of the delta method
    L = np.zeros(len(draws))
    for r_i, z in enumerate(roots):
        for s in range(0, len(draws), chunk):
            L[s:s + chunk] += p2(z, draws[s:s + chunk]) @ grad[r_i]
    mean = counts @ L / N
    se = float(np.sqrt(counts @ (L - mean) ** 2 / (N - 1) / N))
    return NormResult(norm, se, "mc")


# ---------------------------------------------------------------------------
# domination check


@dataclass
class DominationReport:
    thresholds: np.ndarray
    surv_network: dict
    surv_branching: dict
    violations: dict
    means: dict
    n_nodes: int


def _surv(x, grid):
    x = np.asarray(x)
    return np.array([(x > w).mean() for w in grid])


def compare_domination(spec: ModelSpec, n: int, reps: int, seed: int = 0, K: int = 1, networks: int = 20,
                       thresholds=None, alpha: float = 0.05) -> DominationReport:
    """Survival of |C_i| and |N_M(i,K)| against their dominating processes.

    ``reps`` nodes are sampled evenly from ``networks`` independent networks of
    size ``n``; each sampled node roots one D-process and one M-process at its
    own scaled position and attribute, on the scaled cube with slack r_n.
    """
    from scipy import stats
    from scipy.sparse import csgraph

    from .formation import PairFrame, classify_robustness
    from .model import sample_primitives
    from .stabilization import build_M_networks

    scale = SparsityScale.from_spec(spec, n)
    per = int(np.ceil(reps / networks))
    comp_sizes, nb_sizes, roots_x, roots_z = [], [], [], []
    for net_id in range(networks):
        s = rng.derive_seed(seed, "domination", net_id)
        prims = sample_primitives(spec, np.arange(n), s)
        frame = PairFrame(spec, prims, scale)
        D = classify_robustness(spec, prims, scale, frame).D
        _, M = build_M_networks(spec, prims, scale, frame)
        _, labels = csgraph.connected_components(D.adjacency, directed=False)
        counts = np.bincount(labels)
        pick = rng.generator(s, "domination_pick").choice(n, size=min(per, n), replace=False)
        comp_sizes.append(counts[labels[pick]])
        nb_sizes.append([len(M.ball([a], K)) for a in pick])
        roots_x.append(prims.X[pick] / scale.r)
        roots_z.append(prims.Z[pick, 0])
    comp = np.concatenate(comp_sizes)[:reps]
    nb = np.concatenate(nb_sizes)[:reps]
    rx = np.concatenate(roots_x)[:reps]
    rz = np.concatenate(roots_z)[:reps]
    base = BranchingConfig.for_scale(spec, scale, seed=rng.derive_seed(seed, "domination_bp"), K=K)
    bd = simulate_branching_batch(BranchingConfig(**{**base.__dict__, "intensity_kind": "D"}), rx, rz).sizes
    bm = simulate_branching_batch(BranchingConfig(**{**base.__dict__, "intensity_kind": "M"}), rx, rz).sizes
    grid = np.arange(1, 21) if thresholds is None else np.asarray(thresholds)
    zcrit = stats.norm.ppf(1 - alpha / (2 * len(grid)))
    out_net, out_bp, viol = {}, {}, {}
    for name, net_s, bp_s in (("C", comp, bd), ("M", nb, bm)):
        sn, sb = _surv(net_s, grid), _surv(bp_s, grid)
        se = np.sqrt(sn * (1 - sn) / len(net_s) + sb * (1 - sb) / len(bp_s))
        out_net[name], out_bp[name] = sn, sb
        viol[name] = int(np.sum(sn - sb > zcrit * se + 1e-12))
    means = {"C": float(comp.mean()), "XD": float(bd.mean()), "NM": float(nb.mean()), "XM": float(bm.mean())}
    return DominationReport(grid, out_net, out_bp, viol, means, len(comp))
