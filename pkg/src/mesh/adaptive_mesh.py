"""
Conforming adaptive triangulations of the unit square by newest-vertex bisection.

Every mesh is the set of leaves of one binary forest rooted in the criss-cross
triangulation of (0,1)^2. A triangle is addressed by its key (root, b1, b2, ...);
its vertices follow from the key alone, so meshes built independently share
vertices and triangles exactly and the common refinement of two meshes is the
union of their trees.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Dict, Iterable, List, Optional, Set, Tuple

import numpy as np

from config.settings import (
    ADAPT_CADENCE,
    FRAC_COARSEN,
    FRAC_REFINE,
    H_MIN_GUARD,
    INITIAL_ADAPT_PASSES,
    INTERFACE_FLAG_WEIGHT,
    INTERFACE_THRESHOLD,
    MAX_LEVEL,
    ROOT_LEVEL,
)
from src.utils.errors import MeshError

logger = logging.getLogger(__name__)

# Vertices live on an integer lattice; midpoints stay exact down to depth ~58.
SCALE = 1 << 30
ROOT_NAME = "criss-cross-unit-square"

Vertex = Tuple[int, int]
Key = Tuple[int, ...]
Edge = Tuple[Vertex, Vertex]

_CORNERS = ((0, 0), (SCALE, 0), (SCALE, SCALE), (0, SCALE))
_CENTER = (SCALE // 2, SCALE // 2)
# (newest vertex, refinement edge start, refinement edge end), counter-clockwise
ROOT_TRIANGLES = tuple(
    (_CENTER, _CORNERS[i], _CORNERS[(i + 1) % 4]) for i in range(4)
)


@dataclass(frozen=True)
class MeshSettings:
    """Adaptation knobs shared by the forward solver and the target synthesis."""
    root_level: int = ROOT_LEVEL
    adapt: bool = True
    cadence: int = ADAPT_CADENCE
    frac_refine: float = FRAC_REFINE
    frac_coarsen: float = FRAC_COARSEN
    h_min_guard: Optional[float] = H_MIN_GUARD
    max_level: int = MAX_LEVEL
    initial_passes: int = INITIAL_ADAPT_PASSES
    interface_threshold: float = INTERFACE_THRESHOLD
    flag_weight: float = INTERFACE_FLAG_WEIGHT

    def __post_init__(self):
        if self.root_level < 1:
            raise ValueError(f"root_level must be >= 1, got {self.root_level}")
        if self.max_level < self.root_level:
            raise ValueError(
                f"max_level ({self.max_level}) must be >= root_level ({self.root_level})"
            )
        if self.cadence < 1:
            raise ValueError(f"cadence must be >= 1, got {self.cadence}")
        if not 0.0 < self.frac_refine < 1.0:
            raise ValueError(f"frac_refine must lie in (0,1), got {self.frac_refine}")
        if not 0.0 <= self.frac_coarsen < 1.0:
            raise ValueError(f"frac_coarsen must lie in [0,1), got {self.frac_coarsen}")
        if self.h_min_guard is not None and self.h_min_guard <= 0.0:
            raise ValueError(f"h_min_guard must be positive, got {self.h_min_guard}")
        if self.initial_passes < 0:
            raise ValueError(f"initial_passes must be >= 0, got {self.initial_passes}")


def level_depth(level: int) -> int:
    """Bisection depth of a uniform mesh of the given level (two bisections per level)."""
    return 2 * (level - 1)


def _midpoint(a: Vertex, b: Vertex) -> Vertex:
    sx, sy = a[0] + b[0], a[1] + b[1]
    if sx % 2 or sy % 2:
        raise MeshError("bisection depth exceeds the resolution of the vertex lattice")
    return (sx // 2, sy // 2)


def _edge(a: Vertex, b: Vertex) -> Edge:
    return (a, b) if a <= b else (b, a)


def _length(a: Vertex, b: Vertex) -> float:
    return float(np.hypot(a[0] - b[0], a[1] - b[1])) / SCALE


@lru_cache(maxsize=1 << 20)
def triangle_vertices(key: Key) -> Tuple[Vertex, Vertex, Vertex]:
    """(newest vertex, refinement edge start, refinement edge end) of a triangle key."""
    if len(key) == 1:
        return ROOT_TRIANGLES[key[0]]
    n, b, c = triangle_vertices(key[:-1])
    m = _midpoint(b, c)
    return (m, n, b) if key[-1] == 0 else (m, c, n)


def children(key: Key) -> Tuple[Key, Key]:
    return key + (0,), key + (1,)


def parent(key: Key) -> Optional[Key]:
    return key[:-1] if len(key) > 1 else None


def _edges_of(key: Key) -> Tuple[Edge, Edge, Edge]:
    n, b, c = triangle_vertices(key)
    return _edge(b, c), _edge(n, b), _edge(c, n)


def _on_boundary(e: Edge) -> bool:
    (x0, y0), (x1, y1) = e
    return (x0 == x1 and x0 in (0, SCALE)) or (y0 == y1 and y0 in (0, SCALE))


def _ancestors(keys: Iterable[Key]) -> Set[Key]:
    out: Set[Key] = set()
    for k in keys:
        for d in range(1, len(k) + 1):
            out.add(k[:d])
    return out


class AdaptiveMesh:
    """Immutable conforming triangulation given by its set of leaf keys.

    Vertices are sorted lexicographically by their lattice coordinates and
    triangles by key, so two meshes with the same leaves are identical arrays.
    Equality and hashing go through ``mesh_id``.
    """

    root = ROOT_NAME

    def __init__(self, leaves: Iterable[Key]):
        keys = tuple(sorted(set(tuple(k) for k in leaves)))
        if not keys:
            raise MeshError("a mesh needs at least one triangle")
        for k in keys:
            if not 0 <= k[0] < len(ROOT_TRIANGLES) or any(b not in (0, 1) for b in k[1:]):
                raise MeshError(f"invalid triangle key {k}")
        self.keys: Tuple[Key, ...] = keys
        tri_int = [triangle_vertices(k) for k in keys]
        verts = sorted({v for t in tri_int for v in t})
        self._vertex_index: Dict[Vertex, int] = {v: i for i, v in enumerate(verts)}
        self.int_vertices = np.array(verts, dtype=np.int64)
        self.vertices = self.int_vertices.astype(float) / SCALE
        self.triangles = np.array(
            [[self._vertex_index[v] for v in t] for t in tri_int], dtype=np.int64
        )
        self.depths = np.array([len(k) - 1 for k in keys], dtype=np.int64)
        self.mesh_id = hashlib.sha1(repr(keys).encode("ascii")).hexdigest()[:16]
        for arr in (self.int_vertices, self.vertices, self.triangles, self.depths):
            arr.setflags(write=False)

    def __eq__(self, other) -> bool:
        return isinstance(other, AdaptiveMesh) and other.mesh_id == self.mesh_id

    def __hash__(self) -> int:
        return hash(self.mesh_id)

    def __repr__(self) -> str:
        return (
            f"AdaptiveMesh(id={self.mesh_id}, vertices={self.num_vertices}, "
            f"triangles={self.num_triangles})"
        )

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def vertex_index(self, v: Vertex) -> int:
        try:
            return self._vertex_index[v]
        except KeyError:
            raise MeshError(f"vertex {v} is not part of mesh {self.mesh_id}") from None

    @cached_property
    def key_index(self) -> Dict[Key, int]:
        return {k: i for i, k in enumerate(self.keys)}

    @cached_property
    def leaf_set(self) -> frozenset:
        return frozenset(self.keys)

    @cached_property
    def ancestors(self) -> frozenset:
        return frozenset(_ancestors(self.keys))

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted vertex-index pairs."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def h_min(self) -> float:
        p = self.vertices[self.edges]
        return float(np.min(np.linalg.norm(p[:, 1] - p[:, 0], axis=1)))

    @cached_property
    def h_max(self) -> float:
        p = self.vertices[self.edges]
        return float(np.max(np.linalg.norm(p[:, 1] - p[:, 0], axis=1)))

    @property
    def max_depth(self) -> int:
        return int(self.depths.max())

    def parent_key(self, i: int) -> Optional[Key]:
        return parent(self.keys[i])

    def edge_census(self) -> Dict[Edge, int]:
        census: Dict[Edge, int] = {}
        for k in self.keys:
            for e in _edges_of(k):
                census[e] = census.get(e, 0) + 1
        return census

    def is_conforming(self) -> bool:
        """Every edge is shared by two triangles or lies on the boundary."""
        for e, count in self.edge_census().items():
            if count == 2:
                continue
            if count == 1 and _on_boundary(e):
                continue
            return False
        return True

    def refines(self, other: "AdaptiveMesh") -> bool:
        """True when every triangle of ``other`` is a union of triangles of this mesh."""
        if other == self:
            return True
        mine = self.ancestors
        return all(k in mine for k in other.keys)

    def min_angle(self) -> float:
        """Smallest interior angle in radians."""
        p = self.vertices[self.triangles]
        angles = []
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            cos = np.einsum("ij,ij->i", a, b) / (
                np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
            )
            angles.append(np.arccos(np.clip(cos, -1.0, 1.0)))
        return float(np.min(angles))


class _MeshBuilder:
    """Mutable leaf set with an edge map, used to run conforming bisection."""

    def __init__(self, leaves: Iterable[Key], h_min_guard: Optional[float] = None,
                 max_depth: int = 56):
        self.leaves: Set[Key] = set(leaves)
        self.edge_map: Dict[Edge, Set[Key]] = {}
        self.h_min_guard = h_min_guard
        self.max_depth = max_depth
        self.skipped = 0
        for k in self.leaves:
            self._register(k)

    def _register(self, key: Key) -> None:
        for e in _edges_of(key):
            self.edge_map.setdefault(e, set()).add(key)

    def _unregister(self, key: Key) -> None:
        for e in _edges_of(key):
            owners = self.edge_map[e]
            owners.discard(key)
            if not owners:
                del self.edge_map[e]

    def _split(self, key: Key) -> None:
        self._unregister(key)
        self.leaves.discard(key)
        for c in children(key):
            self.leaves.add(c)
            self._register(c)

    def _merge(self, key: Key) -> None:
        for c in children(key):
            self._unregister(c)
            self.leaves.discard(c)
        self.leaves.add(key)
        self._register(key)

    def split_allowed(self, key: Key) -> bool:
        if len(key) - 1 >= self.max_depth:
            return False
        n, b, c = triangle_vertices(key)
        try:
            m = _midpoint(b, c)
        except MeshError:
            return False
        if self.h_min_guard is None:
            return True
        return min(_length(m, n), _length(m, b)) > self.h_min_guard

    def bisect(self, key: Key) -> bool:
        """Bisect a leaf, first splitting the neighbours the conformity closure needs.

        Returns False, leaving the mesh conforming, when a guard forbids a split.
        """
        stack = [key]
        limit = 4 * (self.max_depth + 8)
        while stack:
            t = stack[-1]
            if t not in self.leaves:
                stack.pop()
                continue
            n, b, c = triangle_vertices(t)
            e = _edge(b, c)
            others = [s for s in self.edge_map.get(e, ()) if s != t]
            if not others:
                if not self.split_allowed(t):
                    self.skipped += 1
                    return False
                self._split(t)
                stack.pop()
                continue
            s = others[0]
            _, sb, sc = triangle_vertices(s)
            if _edge(sb, sc) == e:
                if not (self.split_allowed(t) and self.split_allowed(s)):
                    self.skipped += 1
                    return False
                self._split(t)
                self._split(s)
                stack.pop()
            else:
                if len(stack) > limit:
                    raise MeshError(f"bisection closure of {key} did not terminate")
                stack.append(s)
        return key not in self.leaves

    def coarsening_patches(self, min_depth: int) -> List[Tuple[Vertex, Tuple[Key, ...]]]:
        """Vertices whose removal undoes one bisection generation, with their parents."""
        incident: Dict[Vertex, List[Key]] = {}
        for k in self.leaves:
            for v in triangle_vertices(k):
                incident.setdefault(v, []).append(k)
        patches = []
        for v, tris in incident.items():
            if len(tris) not in (2, 4):
                continue
            if any(len(k) == 1 or triangle_vertices(k)[0] != v for k in tris):
                continue
            parents = {k[:-1] for k in tris}
            if len(parents) * 2 != len(tris):
                continue
            if any(len(p) - 1 < min_depth for p in parents):
                continue
            if any(c not in self.leaves for p in parents for c in children(p)):
                continue
            patches.append((v, tuple(sorted(parents))))
        patches.sort()
        return patches

    def build(self) -> AdaptiveMesh:
        return AdaptiveMesh(self.leaves)


def initial_mesh(n_levels: int) -> AdaptiveMesh:
    """Uniform criss-cross triangulation; level k has 4 * 4**(k-1) triangles."""
    if n_levels < 1:
        raise ValueError(f"n_levels must be >= 1, got {n_levels}")
    builder = _MeshBuilder((i,) for i in range(len(ROOT_TRIANGLES)))
    for _ in range(level_depth(n_levels)):
        for k in sorted(builder.leaves):
            builder.bisect(k)
    return builder.build()


def refine_coarsen(mesh: AdaptiveMesh, ind, frac_refine: float = FRAC_REFINE,
                   frac_coarsen: float = FRAC_COARSEN,
                   h_min_guard: Optional[float] = H_MIN_GUARD,
                   max_level: int = MAX_LEVEL, min_level: int = 1) -> AdaptiveMesh:
    """One adaptation cycle: coarsen one generation of quiet patches, then refine marked.

    Marking is Doerfler-style: the smallest set of highest-scoring triangles
    holding ``frac_refine`` of the total indicator. Each marked triangle is
    bisected twice (one uniform level) with conforming closure. Patches are
    coarsened while their cumulative indicator stays within ``frac_coarsen`` of
    the total. Refinements violating the h_min guard or max_level are skipped
    and logged.
    """
    scores = np.asarray(getattr(ind, "scores", ind), dtype=float)
    if scores.shape != (mesh.num_triangles,):
        raise ValueError(
            f"indicator has {scores.shape} entries, mesh {mesh.mesh_id} has "
            f"{mesh.num_triangles} triangles"
        )
    if not np.all(np.isfinite(scores)) or np.any(scores < 0.0):
        raise ValueError("indicator scores must be finite and nonnegative")
    total = float(scores.sum())
    if total <= 0.0:
        return mesh

    order = np.argsort(-scores, kind="stable")
    cumulative = np.cumsum(scores[order])
    n_mark = min(int(np.searchsorted(cumulative, frac_refine * total, side="left")) + 1,
                 len(order))
    marked = [mesh.keys[i] for i in order[:n_mark] if scores[i] > 0.0]
    marked_set = set(marked)

    builder = _MeshBuilder(mesh.keys, h_min_guard=h_min_guard,
                           max_depth=level_depth(max_level))

    coarsened = 0
    if frac_coarsen > 0.0:
        index = mesh.key_index
        budget = frac_coarsen * total
        candidates = []
        for v, parents in builder.coarsening_patches(level_depth(min_level)):
            leaves = [c for p in parents for c in children(p)]
            if any(c in marked_set for c in leaves):
                continue
            candidates.append((float(sum(scores[index[c]] for c in leaves)), v, parents))
        candidates.sort()
        spent = 0.0
        for eta, _, parents in candidates:
            if spent + eta > budget:
                break
            spent += eta
            for p in parents:
                builder._merge(p)
            coarsened += 1

    for key in sorted(marked):
        if key in builder.leaves and not builder.bisect(key):
            continue
        for c in children(key):
            if c in builder.leaves:
                builder.bisect(c)

    if builder.skipped:
        logger.info(f"refine_coarsen: {builder.skipped} bisections skipped by h_min/max_level guard")
    if builder.leaves == mesh.leaf_set:
        return mesh
    new_mesh = builder.build()
    logger.debug(
        f"refine_coarsen: {mesh.num_vertices} -> {new_mesh.num_vertices} vertices "
        f"({len(marked)} marked, {coarsened} patches coarsened)"
    )
    return new_mesh


def common_refinement(a: AdaptiveMesh, b: AdaptiveMesh) -> AdaptiveMesh:
    """Coarsest mesh of the hierarchy refining both a and b."""
    if a.root != b.root:
        raise MeshError(f"incompatible hierarchies: {a.root} vs {b.root}")
    if a == b or a.refines(b):
        return a
    if b.refines(a):
        return b
    union = a.ancestors | b.ancestors
    leaves = [k for k in union if k + (0,) not in union]
    return AdaptiveMesh(leaves)


def common_refinement_of(meshes: Iterable[AdaptiveMesh]) -> AdaptiveMesh:
    """Iterated common refinement of many meshes."""
    distinct: Dict[str, AdaptiveMesh] = {}
    for m in meshes:
        distinct.setdefault(m.mesh_id, m)
    if not distinct:
        raise MeshError("no meshes given")
    items = list(distinct.values())
    if len(items) == 1:
        return items[0]
    union: Set[Key] = set()
    for m in items:
        union |= m.ancestors
    return AdaptiveMesh(k for k in union if k + (0,) not in union)


def mesh_from_paths(rows: Iterable[Tuple[int, str]]) -> AdaptiveMesh:
    """Rebuild a mesh from (root index, bisection path string) rows."""
    return AdaptiveMesh((int(r),) + tuple(int(ch) for ch in str(p)) for r, p in rows)


def mesh_paths(mesh: AdaptiveMesh) -> List[Tuple[int, str]]:
    return [(k[0], "".join(str(b) for b in k[1:])) for k in mesh.keys]
