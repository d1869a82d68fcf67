"""Sparse undirected networks on labelled node sets."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .errors import ContractViolation


class Net:
    """Undirected simple graph on ``node_ids``, stored as a symmetric CSR matrix.

    Row/column ``k`` of ``adjacency`` belongs to ``node_ids[k]``.
    """

    __slots__ = ("node_ids", "adjacency", "_sorted", "_sorter")

    def __init__(self, node_ids, adjacency=None):
        ids = np.asarray(node_ids, dtype=np.int64).reshape(-1)
        n = len(ids)
        if adjacency is None:
            adjacency = sparse.csr_matrix((n, n), dtype=np.int32)
        A = sparse.csr_matrix(adjacency, dtype=np.int32)
        if A.shape != (n, n):
            raise ContractViolation("adjacency shape does not match node count")
        if A.diagonal().any():
            A.setdiag(0)
        A.eliminate_zeros()
        A.data[:] = 1
        if not A.has_sorted_indices:
            A.sort_indices()
        self.node_ids = ids
        self.adjacency = A
        self._sorter = np.argsort(ids, kind="stable")
        self._sorted = ids[self._sorter]
        if n > 1 and np.any(self._sorted[1:] == self._sorted[:-1]):
            raise ContractViolation("node ids must be distinct")

    # -- construction ---------------------------------------------------------

    @classmethod
    def from_index_pairs(cls, node_ids, I, J) -> "Net":
        ids = np.asarray(node_ids, dtype=np.int64).reshape(-1)
        n = len(ids)
        I = np.asarray(I, dtype=np.int64)
        J = np.asarray(J, dtype=np.int64)
        keep = I != J
        I, J = I[keep], J[keep]
        if len(I) and (min(I.min(), J.min()) < 0 or max(I.max(), J.max()) >= n):
            raise ContractViolation("index out of range")
        keys = np.unique(np.r_[I * n + J, J * n + I])
        rows, cols = keys // n, keys % n
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
        A = sparse.csr_matrix((np.ones(len(keys), np.int32), cols.astype(np.int32), indptr.astype(np.int32)),
                              shape=(n, n))
        A.has_sorted_indices = True
        return cls._trusted(ids, A)

    @classmethod
    def _trusted(cls, ids, A) -> "Net":
        """Wrap a symmetric 0/1 CSR matrix with sorted indices and empty diagonal."""
        self = cls.__new__(cls)
        self.node_ids = ids
        self.adjacency = A
        self._sorter = np.argsort(ids, kind="stable")
        self._sorted = ids[self._sorter]
        if len(ids) > 1 and np.any(self._sorted[1:] == self._sorted[:-1]):
            raise ContractViolation("node ids must be distinct")
        return self

    @classmethod
    def from_edges(cls, node_ids, edges: Iterable[Sequence[int]]) -> "Net":
        node_ids = np.asarray(node_ids, dtype=np.int64)
        edges = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        tmp = cls(node_ids)
        return cls.from_index_pairs(node_ids, tmp.index(edges[:, 0]), tmp.index(edges[:, 1]))

    # -- lookups --------------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.node_ids)

    def __len__(self):
        return self.n

    def index(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        pos = np.searchsorted(self._sorted, ids)
        pos = np.minimum(pos, max(self.n - 1, 0))
        if self.n == 0 or np.any(self._sorted[pos] != ids):
            raise ContractViolation("id not in node set")
        return self._sorter[pos]

    def contains(self, i) -> bool:
        pos = np.searchsorted(self._sorted, i)
        return pos < self.n and self._sorted[pos] == i

    def has_edge(self, i, j) -> bool:
        a, b = self.index([i, j])
        return bool(self.adjacency[a, b])

    def neighbors(self, i) -> np.ndarray:
        a = self.index(i)
        A = self.adjacency
        return self.node_ids[A.indices[A.indptr[a]:A.indptr[a + 1]]]

    def degree(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr).astype(np.int64)

    @property
    def n_edges(self) -> int:
        return self.adjacency.nnz // 2

    def index_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Edges as index pairs (a, b) with a < b."""
        coo = sparse.triu(self.adjacency, k=1).tocoo()
        return coo.row.astype(np.int64), coo.col.astype(np.int64)

    def edges(self) -> np.ndarray:
        """Edges as an (m, 2) array of ids, each row (min, max), rows sorted."""
        a, b = self.index_pairs()
        u, v = self.node_ids[a], self.node_ids[b]
        e = np.column_stack([np.minimum(u, v), np.maximum(u, v)])
        if len(e):
            e = e[np.lexsort((e[:, 1], e[:, 0]))]
        return e

    def edge_set(self) -> frozenset:
        return frozenset(map(tuple, self.edges().tolist()))

    def ball(self, sources, K: int) -> np.ndarray:
        """Index set within K hops of any source index (sources included)."""
        A = self.adjacency
        seen = np.zeros(self.n, dtype=bool)
        frontier = np.unique(np.asarray(sources, dtype=np.int64))
        seen[frontier] = True
        for _ in range(K):
            if frontier.size == 0:
                break
            nxt = np.concatenate([A.indices[A.indptr[a]:A.indptr[a + 1]] for a in frontier])
            nxt = np.unique(nxt)
            nxt = nxt[~seen[nxt]]
            seen[nxt] = True
            frontier = nxt
        return np.flatnonzero(seen)

    def neighborhood(self, i, K: int) -> set:
        """N(i, K): ids within K hops of ``i``, including ``i``."""
        if K < 0:
            raise ContractViolation("K must be nonnegative")
        return set(self.node_ids[self.ball(self.index([i]), K)].tolist())

    def subnet(self, ids) -> "Net":
        ids = np.asarray(sorted(set(int(v) for v in ids)), dtype=np.int64)
        idx = self.index(ids)
        return Net(ids, self.adjacency[idx][:, idx])

    def relabel(self, ids) -> "Net":
        """Same adjacency, rows reordered to follow ``ids``."""
        ids = np.asarray(ids, dtype=np.int64)
        if np.array_equal(ids, self.node_ids):
            return self
        idx = self.index(ids)
        return Net(ids, self.adjacency[idx][:, idx])

    def dense(self) -> np.ndarray:
        return self.adjacency.toarray().astype(bool)

    def same_graph(self, other: "Net") -> bool:
        return set(self.node_ids.tolist()) == set(other.node_ids.tolist()) and self.edge_set() == other.edge_set()

    def __repr__(self):
        return f"Net(n={self.n}, edges={self.n_edges})"


@dataclass
class NetSeries:
    """Networks for periods 0..T on a common node set."""

    nets: list

    def __post_init__(self):
        if not self.nets:
            raise ContractViolation("a series needs at least one period")
        ids = self.nets[0].node_ids
        for net in self.nets[1:]:
            if not np.array_equal(net.node_ids, ids):
                raise ContractViolation("all periods must share node ids in the same order")

    @property
    def T(self) -> int:
        return len(self.nets) - 1

    @property
    def node_ids(self) -> np.ndarray:
        return self.nets[0].node_ids

    @property
    def n(self) -> int:
        return len(self.node_ids)

    def __getitem__(self, t) -> Net:
        return self.nets[t]

    def __len__(self):
        return len(self.nets)

    def subseries(self, ids) -> "NetSeries":
        return NetSeries([net.subnet(ids) for net in self.nets])

    def same_series(self, other: "NetSeries") -> bool:
        return len(self) == len(other) and all(a.same_graph(b) for a, b in zip(self.nets, other.nets))

    # -- text IO --------------------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["period", "i", "j"])
        for t, net in enumerate(self.nets):
            for i, j in net.edges().tolist():
                w.writerow([t, i, j])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, node_ids, T: int) -> "NetSeries":
        rows = list(csv.DictReader(io.StringIO(text)))
        per = [[] for _ in range(T + 1)]
        for r in rows:
            per[int(r["period"])].append((int(r["i"]), int(r["j"])))
        return cls([Net.from_edges(node_ids, e) for e in per])
