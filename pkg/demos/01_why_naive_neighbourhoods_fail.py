"""A four-node example where the obvious neighbourhood is not enough.

Node 1's period-1 degree depends on a link it did not have in period 1:
the 1-2 link forms at t=1 only because 1 and 2 shared neighbour 3 at t=0.
Regrowing the network on {1, 2} alone loses that common neighbour and gets
the wrong answer, while the stabilization set built by the package does not.
"""
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from conftest import four_node  # hand-built primitives shared with the tests
from stratnet import construct_Ji, generate, j_simple, verify_stabilization

spec, prims, scale = four_node()
series = generate(spec, prims, scale)
for t, net in enumerate(series.nets):
    print(f"period {t} links: {sorted(net.edge_set())}")

print()
full, part, same = verify_stabilization(spec, prims, scale, 1, stat="degree:t=1", J={1, 2})
print(f"regrow on {{1, 2}}:       degree of node 1 at t=1 is {part[0]:.0f} (full network says {full[0]:.0f})")

J = j_simple(series, 1)
full, part, same = verify_stabilization(spec, prims, scale, 1, stat="degree:t=1", J=J)
print(f"regrow on {sorted(J)}:    degree {part[0]:.0f}, exact match: {same}")

J = construct_Ji(spec, prims, scale, 1)
print(f"constructed J_1 = {sorted(J)}; it is computed from primitives alone, before any network is solved")
