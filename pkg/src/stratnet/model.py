"""Model specification, primitive sampling and latent-index evaluation.

The latent index is the linear family

    V(delta, s, z_i, z_j, zeta) = beta_s . s + beta_z . (z_i + z_j) + intercept - delta + zeta

with ``delta`` the sparsity-scaled distance between positions.  Period 0 uses
the ``v0_params`` block, later periods use ``v_params``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import special

from . import rng
from .errors import ConfigError, ContractViolation


# ---------------------------------------------------------------------------
# shock and attribute laws


SHOCK_KINDS = ("logistic", "normal", "laplace", "exponential")


@dataclass(frozen=True)
class ShockLaw:
    """Distribution of the pair-level utility shocks.

    ``scale`` is sigma for the normal law, b for the Laplace law and the mean
    for the exponential law; it is ignored for the standard logistic.
    """

    kind: str = "logistic"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in SHOCK_KINDS:
            raise ConfigError(f"unknown shock law {self.kind!r}")
        if not self.scale > 0:
            raise ConfigError("shock scale must be positive")

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        b = self.scale
        if self.kind == "logistic":
            return np.log(u) - np.log1p(-u)
        if self.kind == "normal":
            return b * special.ndtri(u)
        if self.kind == "laplace":
            return np.where(u < 0.5, b * np.log(2 * u), -b * np.log(2 * (1 - u)))
        return -b * np.log1p(-u)

    def sf(self, x):
        """P(zeta > x)."""
        x = np.asarray(x, dtype=float)
        b = self.scale
        if self.kind == "logistic":
            return special.expit(-x)
        if self.kind == "normal":
            return special.ndtr(-x / b)
        if self.kind == "laplace":
            return np.where(x >= 0, 0.5 * np.exp(-np.abs(x) / b), 1 - 0.5 * np.exp(-np.abs(x) / b))
        return np.where(x < 0, 1.0, np.exp(-np.maximum(x, 0) / b))

    def cdf(self, x):
        return 1.0 - self.sf(x)

    @property
    def max_draw(self) -> float:
        """Largest shock the keyed sampler can produce."""
        return float(self.ppf(rng.U_MAX))

    def envelope(self) -> tuple[float, float]:
        """(C, lam) with sf(y) <= min(1, C exp(-lam y)) for all y."""
        b = self.scale
        if self.kind == "normal":
            return float(np.exp(0.5)), 1.0 / b
        return 1.0, 1.0 / b


ATTRIBUTE_KINDS = ("none", "bernoulli", "uniform")


@dataclass(frozen=True)
class AttributeLaw:
    """I.i.d. law of each attribute coordinate, independent of position."""

    kind: str = "none"
    p: float = 0.5

    def __post_init__(self):
        if self.kind not in ATTRIBUTE_KINDS:
            raise ConfigError(f"unknown attribute law {self.kind!r}")
        if self.kind == "bernoulli" and not 0 <= self.p <= 1:
            raise ConfigError("bernoulli p must lie in [0, 1]")

    def from_uniform(self, u):
        if self.kind == "bernoulli":
            return (u < self.p).astype(float)
        return np.asarray(u, dtype=float)

    @property
    def support(self) -> tuple[float, float]:
        return (0.0, 1.0)

    def sample(self, gen: np.random.Generator, size):
        return self.from_uniform(gen.random(size))


# ---------------------------------------------------------------------------
# strategic statistics


DENSE_MAX = 128  # below this many nodes dense lookups beat sparse overhead


def _is_sparse(A):
    return hasattr(A, "tocsr")


def _densify_small(A):
    if _is_sparse(A) and A.shape[0] <= DENSE_MAX:
        return A.toarray() != 0
    return A


def _link(A, rows, cols):
    A = _densify_small(A)
    if not _is_sparse(A):
        return A[rows, cols].astype(float)
    return _sparse_lookup(A, rows, cols)


def _common(A, rows, cols):
    A = _densify_small(A)
    if not _is_sparse(A):
        return (A[rows] & A[cols]).sum(axis=-1).astype(float)
    A = A.tocsr()
    return _sparse_lookup(A @ A, rows, cols)


def _sparse_lookup(A, rows, cols):
    """Entries A[rows[k], cols[k]] of a sparse matrix without densifying."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if rows.size == 0:
        return np.zeros(0)
    A = A.tocsr()
    if not A.has_sorted_indices:
        A = A.sorted_indices()
    n = A.shape[1]
    if A.nnz == 0:
        return np.zeros(rows.shape)
    # row-major keys of a CSR matrix with sorted indices are already sorted
    keys = np.repeat(np.arange(A.shape[0], dtype=np.int64), np.diff(A.indptr)) * n + A.indices
    q = rows * n + cols
    pos = np.minimum(np.searchsorted(keys, q), len(keys) - 1)
    hit = keys[pos] == q
    out = np.zeros(q.shape)
    out[hit] = np.asarray(A.data, dtype=float)[pos[hit]]
    return out


@dataclass(frozen=True)
class SKind:
    """A strategic statistic S(i, j, A_prev).

    ``fn(A, rows, cols)`` returns an ``(m, dim)`` array for index pairs, where
    ``A`` is either a dense boolean matrix or a scipy sparse matrix.  Built-in
    kinds only read links incident to ``i`` or ``j`` and are nondecreasing in
    links.  ``capped`` kinds are clipped to the declared upper bounds.
    """

    name: str
    dim: int
    default_bounds: tuple
    monotone: bool
    fn: Callable
    capped: bool = False


S_REGISTRY: dict[str, SKind] = {}


def register_s_kind(kind: SKind) -> SKind:
    S_REGISTRY[kind.name] = kind
    return kind


def _stack(*cols):
    return np.column_stack(cols) if cols else None


register_s_kind(SKind("none", 0, (), True, lambda A, r, c: np.zeros((len(r), 0))))
register_s_kind(SKind("lagged_link", 1, ((0.0, 1.0),), True, lambda A, r, c: _stack(_link(A, r, c))))
register_s_kind(
    SKind("common_neighbor_max", 1, ((0.0, 1.0),), True,
          lambda A, r, c: _stack(np.minimum(_common(A, r, c), 1.0)))
)
register_s_kind(
    SKind("common_neighbor_count", 1, ((0.0, 5.0),), True,
          lambda A, r, c: _stack(_common(A, r, c)), capped=True)
)
register_s_kind(
    SKind("lagged_link_and_common_max", 2, ((0.0, 1.0), (0.0, 1.0)), True,
          lambda A, r, c: _stack(_link(A, r, c), np.minimum(_common(A, r, c), 1.0)))
)
register_s_kind(
    SKind("lagged_link_and_common_count", 2, ((0.0, 1.0), (0.0, 5.0)), True,
          lambda A, r, c: _stack(_link(A, r, c), _common(A, r, c)), capped=True)
)


# ---------------------------------------------------------------------------
# model specification


@dataclass(frozen=True)
class LatentParams:
    beta_s: tuple = ()
    beta_z: tuple = ()
    intercept: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "beta_s", tuple(float(b) for b in self.beta_s))
        object.__setattr__(self, "beta_z", tuple(float(b) for b in self.beta_z))
        object.__setattr__(self, "intercept", float(self.intercept))


@dataclass(frozen=True)
class ModelSpec:
    d: int = 1
    d_z: int = 0
    T: int = 0
    kappa: float = 1.0
    v_params: LatentParams = field(default_factory=LatentParams)
    v0_params: LatentParams = field(default_factory=LatentParams)
    shock_law: ShockLaw = field(default_factory=ShockLaw)
    s_kind: str = "none"
    position_law: str = "uniform_unit_cube"
    attribute_law: AttributeLaw = field(default_factory=AttributeLaw)
    s_bounds: tuple | None = None

    def __post_init__(self):
        if self.s_kind not in S_REGISTRY:
            raise ConfigError(f"unknown s_kind {self.s_kind!r}")
        kind = S_REGISTRY[self.s_kind]
        bounds = kind.default_bounds if self.s_bounds is None else self.s_bounds
        bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
        object.__setattr__(self, "s_bounds", bounds)
        if int(self.d) < 1:
            raise ConfigError("d must be >= 1")
        if int(self.d_z) < 0 or int(self.T) < 0:
            raise ConfigError("d_z and T must be nonnegative")
        if not self.kappa > 0:
            raise ConfigError("kappa must be positive")
        if self.position_law != "uniform_unit_cube":
            raise ConfigError(f"unknown position law {self.position_law!r}")
        if len(bounds) != kind.dim:
            raise ConfigError(f"s_bounds needs {kind.dim} entries for {self.s_kind}")
        for lo, hi in bounds:
            if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
                raise ConfigError("s_bounds must be finite with lo <= hi")
        for name in ("v_params", "v0_params"):
            p = getattr(self, name)
            if len(p.beta_s) != kind.dim:
                raise ConfigError(f"{name}.beta_s must have length {kind.dim}")
            if len(p.beta_z) != self.d_z:
                raise ConfigError(f"{name}.beta_z must have length d_z={self.d_z}")
        if (self.d_z > 0) != (self.attribute_law.kind != "none"):
            raise ConfigError("attribute_law 'none' exactly when d_z == 0")

    # -- derived quantities -------------------------------------------------

    @property
    def s_dim(self) -> int:
        return S_REGISTRY[self.s_kind].dim

    @property
    def s_impl(self) -> SKind:
        return S_REGISTRY[self.s_kind]

    def params(self, which: str) -> LatentParams:
        if which in ("V0", 0):
            return self.v0_params
        if which in ("V", 1):
            return self.v_params
        raise ValueError(f"which must be 'V' or 'V0', got {which!r}")

    def params_at(self, t: int) -> LatentParams:
        return self.v0_params if t == 0 else self.v_params

    @property
    def dyadic_initial(self) -> bool:
        return self.s_dim == 0 or all(b == 0 for b in self.v0_params.beta_s)

    @property
    def monotone(self) -> bool:
        return self.s_impl.monotone and all(b >= 0 for b in self.v0_params.beta_s)

    def s_range(self, which) -> tuple[float, float]:
        """(min, max) of beta_s . s over the s_bounds box."""
        beta = np.array(self.params(which).beta_s)
        if beta.size == 0:
            return 0.0, 0.0
        lo = np.array([b[0] for b in self.s_bounds])
        hi = np.array([b[1] for b in self.s_bounds])
        a, b = beta * lo, beta * hi
        return float(np.minimum(a, b).sum()), float(np.maximum(a, b).sum())

    def z_range(self, which) -> tuple[float, float]:
        """(min, max) of beta_z . (z_i + z_j) over the attribute support."""
        beta = np.array(self.params(which).beta_z)
        if beta.size == 0:
            return 0.0, 0.0
        lo, hi = self.attribute_law.support
        a, b = 2 * beta * lo, 2 * beta * hi
        return float(np.minimum(a, b).sum()), float(np.maximum(a, b).sum())

    def index_ceiling(self, which) -> float:
        """Supremum of the non-shock, non-distance part of the index."""
        return self.params(which).intercept + self.s_range(which)[1] + self.z_range(which)[1]

    def with_(self, **changes) -> "ModelSpec":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(changes)
        if "s_kind" in changes and "s_bounds" not in changes:
            d["s_bounds"] = None
        return ModelSpec(**d)


@dataclass(frozen=True)
class SparsityScale:
    """r = (kappa / n_ref)^(1/d)."""

    n_ref: int
    kappa: float
    d: int

    @classmethod
    def from_spec(cls, spec: ModelSpec, n_ref: int) -> "SparsityScale":
        if n_ref < 1:
            raise ContractViolation("n_ref must be >= 1")
        return cls(int(n_ref), float(spec.kappa), int(spec.d))

    @property
    def r(self) -> float:
        return (self.kappa / self.n_ref) ** (1.0 / self.d)


# ---------------------------------------------------------------------------
# latent index


def _check_s(spec: ModelSpec, s):
    s = np.asarray(s, dtype=float)
    if spec.s_dim == 0:
        return s
    lo = np.array([b[0] for b in spec.s_bounds])
    hi = np.array([b[1] for b in spec.s_bounds])
    if np.any(s < lo - 1e-12) or np.any(s > hi + 1e-12):
        raise ContractViolation(f"s={s.tolist()} outside declared bounds {spec.s_bounds}")
    return s


def eval_latent(spec: ModelSpec, which, dist_scaled, s, z_i, z_j, zeta):
    """Latent index for V or V0; broadcasts over leading array dimensions."""
    p = spec.params(which)
    s = _check_s(spec, s)
    val = p.intercept - np.asarray(dist_scaled, dtype=float) + np.asarray(zeta, dtype=float)
    if spec.s_dim:
        val = val + s @ np.array(p.beta_s)
    if spec.d_z:
        zz = np.asarray(z_i, dtype=float) + np.asarray(z_j, dtype=float)
        val = val + zz @ np.array(p.beta_z)
    return val[()] if np.ndim(val) == 0 else val


def extreme_corners(spec: ModelSpec, which) -> tuple[np.ndarray, np.ndarray]:
    """s_bounds corners minimizing and maximizing beta_s . s."""
    beta = np.array(spec.params(which).beta_s)
    lo = np.array([b[0] for b in spec.s_bounds])
    hi = np.array([b[1] for b in spec.s_bounds])
    return np.where(beta >= 0, lo, hi), np.where(beta >= 0, hi, lo)


def eval_latent_extremes(spec: ModelSpec, which, dist_scaled, z_i, z_j, zeta):
    """(inf over s, sup over s) of the latent index."""
    s_lo, s_hi = extreme_corners(spec, which)
    return (
        eval_latent(spec, which, dist_scaled, s_lo, z_i, z_j, zeta),
        eval_latent(spec, which, dist_scaled, s_hi, z_i, z_j, zeta),
    )


# ---------------------------------------------------------------------------
# primitives


@dataclass(frozen=True, eq=False)
class Primitives:
    """One realization of positions, attributes and pair shocks.

    Shocks are not stored: ``zeta`` recomputes them from the keyed stream, so a
    subset of nodes sees bit-identical values.  ``zeta_override`` pins chosen
    ``(min_id, max_id, t)`` shocks, which is how hand-built scenarios are made.
    """

    node_ids: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    master_seed: int
    shock_law: ShockLaw
    T: int
    zeta_override: Mapping = field(default_factory=dict)

    def __post_init__(self):
        ids = np.asarray(self.node_ids, dtype=np.int64)
        if len(np.unique(ids)) != len(ids):
            raise ContractViolation("node ids must be distinct")
        object.__setattr__(self, "node_ids", ids)
        object.__setattr__(self, "X", np.asarray(self.X, dtype=float).reshape(len(ids), -1))
        Z = np.asarray(self.Z, dtype=float)
        object.__setattr__(self, "Z", Z.reshape(len(ids), self.T + 1, -1))
        object.__setattr__(self, "_pos", {int(v): k for k, v in enumerate(ids)})

    def __len__(self):
        return len(self.node_ids)

    def index(self, ids) -> np.ndarray:
        return np.array([self._pos[int(i)] for i in np.atleast_1d(ids)], dtype=np.int64)

    def zeta(self, ids_i, ids_j, t):
        """Symmetric shocks for pairs of node ids in period t (0 on the diagonal)."""
        a = np.asarray(ids_i, dtype=np.int64)
        b = np.asarray(ids_j, dtype=np.int64)
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        t_arr = np.broadcast_to(np.asarray(t, dtype=np.int64), lo.shape)
        u = rng.uniform(self.master_seed, "zeta", lo, hi, t_arr)
        z = self.shock_law.ppf(u).reshape(lo.shape)
        z = np.where(lo == hi, 0.0, z)
        if self.zeta_override:
            z = np.array(z, dtype=float, copy=True)
            flat_lo, flat_hi, flat_t = lo.ravel(), hi.ravel(), t_arr.ravel()
            zf = z.reshape(-1)
            for k in range(zf.size):
                key = (int(flat_lo[k]), int(flat_hi[k]), int(flat_t[k]))
                if key in self.zeta_override:
                    zf[k] = self.zeta_override[key]
        return z

    def zeta_matrix(self, t: int) -> np.ndarray:
        ids = self.node_ids
        return self.zeta(ids[:, None], ids[None, :], t)

    def subset(self, ids) -> "Primitives":
        ids = np.asarray(list(ids), dtype=np.int64)
        idx = self.index(ids)
        keep = set(int(i) for i in ids)
        over = {k: v for k, v in self.zeta_override.items() if k[0] in keep and k[1] in keep}
        return Primitives(ids, self.X[idx], self.Z[idx], self.master_seed, self.shock_law, self.T, over)

    @classmethod
    def pinned(cls, spec: ModelSpec, node_ids, X, zeta: Mapping, Z=None, seed: int = 0) -> "Primitives":
        """Hand-specified primitives; pairs missing from ``zeta`` use the keyed stream."""
        ids = np.asarray(node_ids, dtype=np.int64)
        if Z is None:
            Z = np.zeros((len(ids), spec.T + 1, spec.d_z))
        over = {}
        for (i, j, t), v in zeta.items():
            over[(min(i, j), max(i, j), int(t))] = float(v)
        return cls(ids, X, Z, seed, spec.shock_law, spec.T, over)


def sample_primitives(spec: ModelSpec, node_ids, seed: int) -> Primitives:
    """Draw positions, attributes and the shock stream keyed per node and pair."""
    ids = np.asarray(list(node_ids), dtype=np.int64)
    if ids.size == 0:
        raise ContractViolation("node_ids must be nonempty")
    dims = np.arange(spec.d)
    X = rng.uniform(seed, "X", ids[:, None], dims[None, :]).reshape(len(ids), spec.d)
    if spec.d_z:
        t = np.arange(spec.T + 1)
        k = np.arange(spec.d_z)
        u = rng.uniform(seed, "Z", ids[:, None, None], t[None, :, None], k[None, None, :])
        Z = spec.attribute_law.from_uniform(u.reshape(len(ids), spec.T + 1, spec.d_z))
    else:
        Z = np.zeros((len(ids), spec.T + 1, 0))
    return Primitives(ids, X, Z, int(seed), spec.shock_law, spec.T)


# ---------------------------------------------------------------------------
# text config


_SPEC_KEYS = {
    "d", "d_z", "T", "kappa", "v_params", "v0_params", "shock_law", "s_kind",
    "position_law", "attribute_law", "s_bounds",
}
REQUIRED_SPEC_KEYS = ("d", "T", "kappa", "v_params", "v0_params", "shock_law", "s_kind")
_PARAM_KEYS = {"beta_s", "beta_z", "intercept"}


def _strict(d: Mapping, allowed: set, where: str):
    if not isinstance(d, Mapping):
        raise ConfigError(f"{where} must be a mapping")
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(extra))}")


def spec_from_dict(d: Mapping) -> ModelSpec:
    _strict(d, _SPEC_KEYS, "model")
    for k in REQUIRED_SPEC_KEYS:
        if k not in d:
            raise ConfigError(f"missing required key: model.{k}")

    def params(name):
        p = d[name]
        _strict(p, _PARAM_KEYS, f"model.{name}")
        return LatentParams(p.get("beta_s", ()), p.get("beta_z", ()), p.get("intercept", 0.0))

    shock = d["shock_law"]
    if isinstance(shock, str):
        shock = {"kind": shock}
    _strict(shock, {"kind", "scale"}, "model.shock_law")
    attr = d.get("attribute_law", "none")
    if isinstance(attr, str):
        attr = {"kind": attr}
    _strict(attr, {"kind", "p"}, "model.attribute_law")
    bounds = d.get("s_bounds")
    try:
        return ModelSpec(
            d=int(d["d"]),
            d_z=int(d.get("d_z", 0)),
            T=int(d["T"]),
            kappa=float(d["kappa"]),
            v_params=params("v_params"),
            v0_params=params("v0_params"),
            shock_law=ShockLaw(**shock),
            s_kind=d["s_kind"],
            position_law=d.get("position_law", "uniform_unit_cube"),
            attribute_law=AttributeLaw(**attr),
            s_bounds=None if bounds is None else tuple(tuple(b) for b in bounds),
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def spec_to_dict(spec: ModelSpec) -> dict:
    def params(p: LatentParams):
        return {"beta_s": list(p.beta_s), "beta_z": list(p.beta_z), "intercept": p.intercept}

    return {
        "d": spec.d,
        "d_z": spec.d_z,
        "T": spec.T,
        "kappa": spec.kappa,
        "v_params": params(spec.v_params),
        "v0_params": params(spec.v0_params),
        "shock_law": {"kind": spec.shock_law.kind, "scale": spec.shock_law.scale},
        "s_kind": spec.s_kind,
        "position_law": spec.position_law,
        "attribute_law": {"kind": spec.attribute_law.kind, "p": spec.attribute_law.p},
        "s_bounds": [list(b) for b in spec.s_bounds],
    }


def dumps_spec(spec: ModelSpec) -> str:
    return json.dumps(spec_to_dict(spec), indent=2, sort_keys=True)


def loads_spec(text: str) -> ModelSpec:
    try:
        return spec_from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc


def eval_S(spec: ModelSpec, i, j, types_prev, A_prev) -> np.ndarray:
    """S_ij computed on the previous-period network ``A_prev`` (a Net).

    ``types_prev`` is accepted for signature compatibility with custom kinds;
    the built-in statistics depend on links only.
    """
    if i == j:
        raise ContractViolation("eval_S needs i != j")
    idx = A_prev.index([i, j])
    kind = spec.s_impl
    s = kind.fn(A_prev.adjacency, idx[:1], idx[1:])
    s = np.asarray(s, dtype=float).reshape(-1)
    if kind.capped:
        s = np.minimum(s, [b[1] for b in spec.s_bounds])
    return s
