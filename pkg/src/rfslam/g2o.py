"""Plain-text 2D graph file I/O (VERTEX_SE2 / EDGE_SE2 / FIX records).

Only diagonal information matrices are supported, matching the graphs this
package builds. Floats are written with repr so a dump re-parses exactly.
"""

from __future__ import annotations

from .pose_graph import ODOMETRY, Edge, Pose2, PoseGraph


def dumps(g: PoseGraph) -> str:
    lines = []
    for k, p in enumerate(g.nodes):
        lines.append(f"VERTEX_SE2 {k} {p.x!r} {p.y!r} {p.theta!r}")
    for k in sorted(g.fixed):
        lines.append(f"FIX {k}")
    for e in g.edges:
        i11 = 1.0 / e.cov[0]
        i22 = 1.0 / e.cov[1]
        i33 = 1.0 / e.cov[2]
        lines.append(
            f"EDGE_SE2 {e.i} {e.j} {e.z.x!r} {e.z.y!r} {e.z.theta!r} "
            f"{i11!r} 0.0 0.0 {i22!r} 0.0 {i33!r}"
        )
    return "\n".join(lines) + "\n"


def loads(text: str, default_kind: str = ODOMETRY) -> PoseGraph:
    """Parse a dump back into a graph.

    The format does not record edge kinds, so every edge is tagged with
    ``default_kind``.
    """
    nodes: dict[int, Pose2] = {}
    edges = []
    fixed = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        tag = parts[0]
        try:
            if tag == "VERTEX_SE2":
                if len(parts) != 5:
                    raise ValueError("expected: VERTEX_SE2 id x y theta")
                nodes[int(parts[1])] = Pose2(float(parts[2]), float(parts[3]), float(parts[4]))
            elif tag == "FIX":
                fixed.add(int(parts[1]))
            elif tag == "EDGE_SE2":
                if len(parts) != 12:
                    raise ValueError("expected: EDGE_SE2 i j dx dy dth I11 I12 I13 I22 I23 I33")
                i11, i12, i13, i22, i23, i33 = (float(v) for v in parts[6:12])
                if i12 != 0.0 or i13 != 0.0 or i23 != 0.0:
                    raise ValueError("only diagonal information matrices are supported")
                if min(i11, i22, i33) <= 0.0:
                    raise ValueError("information diagonal must be positive")
                edges.append(
                    Edge(
                        i=int(parts[1]),
                        j=int(parts[2]),
                        kind=default_kind,
                        z=Pose2(float(parts[3]), float(parts[4]), float(parts[5])),
                        cov=(1.0 / i11, 1.0 / i22, 1.0 / i33),
                    )
                )
            else:
                raise ValueError(f"unknown record {tag!r}")
        except (ValueError, IndexError) as exc:
            raise ValueError(f"g2o parse error at line {lineno}: {exc}") from exc
    if nodes:
        n = max(nodes) + 1
        if sorted(nodes) != list(range(n)):
            raise ValueError("vertex ids must be contiguous from 0")
        node_list = [nodes[k] for k in range(n)]
    else:
        node_list = []
    return PoseGraph(nodes=node_list, edges=edges, fixed=fixed)
