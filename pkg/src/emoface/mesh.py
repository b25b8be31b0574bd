"""Triangle-mesh connectivity: adjacency, k-rings, spiral enumeration.

Spirals are purely topological. Ring 1 is walked in the orientation induced
by face winding, starting from the smallest-index neighbour; deeper rings are
ordered by the position of the vertex they were first reached from, ties broken
by ascending index. Padding uses the index ``V`` (one past the last vertex).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, TopologyError


@dataclass(frozen=True)
class MeshTopology:
    vertex_count: int
    faces: np.ndarray
    adjacency: tuple[tuple[int, ...], ...]
    # per-vertex successor map of the 1-ring, from face winding
    _link: tuple[dict, ...] = field(repr=False, compare=False, default=())

    @property
    def V(self) -> int:
        return self.vertex_count

    @property
    def pad(self) -> int:
        return self.vertex_count

    def neighbors(self, v: int) -> tuple[int, ...]:
        self._check_vertex(v)
        return self.adjacency[v]

    def _check_vertex(self, v: int) -> None:
        if not 0 <= v < self.vertex_count:
            raise IndexError(f"vertex {v} outside [0, {self.vertex_count})")


def build_adjacency(faces, V: int) -> MeshTopology:
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if V <= 0:
        raise TopologyError(f"vertex count must be positive, got {V}")
    if faces.size and (faces.min() < 0 or faces.max() >= V):
        raise TopologyError(f"face index outside [0, {V}): range {faces.min()}..{faces.max()}")
    nbrs: list[set[int]] = [set() for _ in range(V)]
    links: list[dict[int, int]] = [dict() for _ in range(V)]
    for fi, (a, b, c) in enumerate(faces.tolist()):
        if a == b or b == c or a == c:
            raise TopologyError(f"degenerate face {fi}: ({a}, {b}, {c})")
        for x, y, z in ((a, b, c), (b, c, a), (c, a, b)):
            nbrs[x].update((y, z))
            links[x].setdefault(y, z)
    adjacency = tuple(tuple(sorted(s)) for s in nbrs)
    return MeshTopology(V, faces, adjacency, tuple(links))


def rings(topo: MeshTopology, v: int, k: int) -> list[list[int]]:
    """Ordered rings 0..k around ``v`` (inner lists may be empty)."""
    topo._check_vertex(v)
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    out = [[v]]
    disk = {v}
    for r in range(1, k + 1):
        if r == 1:
            ring = _ordered_one_ring(topo, v)
        else:
            ring = []
            for u in out[-1]:
                for w in topo.adjacency[u]:
                    if w not in disk:
                        disk.add(w)
                        ring.append(w)
        disk.update(ring)
        out.append(ring)
    return out


def _ordered_one_ring(topo: MeshTopology, v: int) -> list[int]:
    nb = topo.adjacency[v]
    if not nb:
        return []
    succ = topo._link[v]
    pred = {q: p for p, q in succ.items()}
    start = nb[0]
    order = [start]
    seen = {start}
    cur = start
    while cur in succ and succ[cur] not in seen:
        cur = succ[cur]
        order.append(cur)
        seen.add(cur)
    # open fan (boundary vertex): pick up the part behind the start
    cur = start
    while cur in pred and pred[cur] not in seen:
        cur = pred[cur]
        order.append(cur)
        seen.add(cur)
    order.extend(w for w in nb if w not in seen)
    return order


def k_ring(topo: MeshTopology, v: int, k: int) -> set[int]:
    return set(rings(topo, v, k)[k])


def k_disk(topo: MeshTopology, v: int, k: int) -> set[int]:
    return {u for ring in rings(topo, v, k) for u in ring}


def spiral_sequence(topo: MeshTopology, v: int, k: int, L: int, dilation: int = 1) -> list[int]:
    """Center first, then ring 1, ring 2, ... up to ring ``k``; truncated or padded to ``L``."""
    if L < 1:
        raise ValueError(f"spiral length must be >= 1, got {L}")
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    full = [u for ring in rings(topo, v, k) for u in ring][::dilation][:L]
    return full + [topo.pad] * (L - len(full))


@dataclass(frozen=True)
class SpiralTable:
    indices: np.ndarray  # V x L, int64, PAD == V
    k: int
    L: int
    pad: int

    @property
    def V(self) -> int:
        return self.indices.shape[0]


def build_spiral_table(topo: MeshTopology, k: int, L: int | None = None, dilation: int = 1,
                       cap: int | None = None) -> SpiralTable:
    """Spiral table for every vertex. ``L=None`` uses the largest k-disk (optionally capped)."""
    if L is None:
        L = max(len(k_disk(topo, v, k)) for v in range(topo.V))
        L = -(-L // dilation)
        if cap is not None:
            L = min(L, cap)
    table = np.array([spiral_sequence(topo, v, k, L, dilation) for v in range(topo.V)], dtype=np.int64)
    table = table.reshape(topo.V, L)
    table.setflags(write=False)
    return SpiralTable(table, k, L, topo.pad)


def format_spirals(table: SpiralTable) -> str:
    lines = []
    for v, row in enumerate(table.indices.tolist()):
        items = ["PAD" if i == table.pad else str(i) for i in row]
        lines.append(f"{v}: " + " ".join(items))
    return "\n".join(lines) + "\n"


def temporal_connect(t: int, delta: int, pad_marker=0) -> list:
    """Frames (1-based) feeding frame ``t`` when looking back ``delta`` frames.

    ``[t-delta+1, ..., t]`` once enough history exists, otherwise the missing
    leading slots are ``pad_marker``.
    """
    if t < 1:
        raise ValueError(f"frame index must be >= 1 (1-based), got {t}")
    if delta < 1:
        raise ValueError(f"temporal depth must be >= 1, got {delta}")
    if t >= delta:
        return list(range(t - delta + 1, t + 1))
    return [pad_marker] * (delta - t) + list(range(1, t + 1))


# -- OBJ ---------------------------------------------------------------------

def read_obj(path) -> tuple[np.ndarray, np.ndarray]:
    verts, faces = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            try:
                if parts[0] == "v":
                    verts.append([float(x) for x in parts[1:4]])
                elif parts[0] == "f":
                    idx = [int(p.split("/")[0]) for p in parts[1:]]
                    if len(idx) != 3:
                        raise FormatError(f"{path}:{lineno}: only triangle faces are supported")
                    faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
            except ValueError as exc:
                if isinstance(exc, FormatError):
                    raise
                raise FormatError(f"{path}:{lineno}: cannot parse {line.strip()!r}") from exc
    if not verts:
        raise FormatError(f"{path}: no vertex records")
    return np.asarray(verts, dtype=np.float64).reshape(-1, 3), np.asarray(faces, dtype=np.int64).reshape(-1, 3)


def write_obj(path, vertices: np.ndarray, faces: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for x, y, z in np.asarray(vertices, dtype=np.float64).tolist():
            fh.write(f"v {x!r} {y!r} {z!r}\n")
        for a, b, c in np.asarray(faces, dtype=np.int64):
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


def load_topology(path) -> tuple[np.ndarray, MeshTopology]:
    verts, faces = read_obj(path)
    return verts, build_adjacency(faces, len(verts))


# -- reference meshes ------------------------------------------------------------

def tetrahedron() -> tuple[np.ndarray, np.ndarray]:
    verts = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=np.float64)
    faces = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]], dtype=np.int64)
    return verts, faces


def icosphere(level: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Unit icosphere: 12 vertices at level 0, 42 at level 1, 162 at level 2."""
    p = (1.0 + 5 ** 0.5) / 2.0
    verts = [
        [-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0],
        [0, -1, p], [0, 1, p], [0, -1, -p], [0, 1, -p],
        [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1],
    ]
    faces = [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
    verts = [list(np.asarray(v, dtype=np.float64) / np.linalg.norm(v)) for v in verts]
    for _ in range(level):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = (np.asarray(verts[a]) + np.asarray(verts[b])) / 2.0
                verts.append(list(m / np.linalg.norm(m)))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new_faces
    return np.asarray(verts, dtype=np.float64), np.asarray(faces, dtype=np.int64)
