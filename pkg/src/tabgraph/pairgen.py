"""Candidate association generation.

Each cell is paired with its nearest neighbours (Euclidean distance between
bbox centers) found through a KD-tree, and the union of those pairs forms the
table's association set. Ground-truth labels come from grid spans: a pair is
horizontally connected when the cells share rows and sit in adjacent columns,
vertically connected in the transposed sense, otherwise unconnected.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

from .core import AssocLabel, Association


@dataclass(frozen=True)
class PairGenConfig:
    m: int = 20  # neighbours considered per cell

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")


def cell_center(bbox):
    return ((bbox.x1 + bbox.x2) / 2.0, (bbox.y1 + bbox.y2) / 2.0)


class _Node:
    __slots__ = ("axis", "point", "id", "left", "right", "bucket")

    def __init__(self, axis=0, point=None, id=None, left=None, right=None, bucket=None):
        self.axis = axis
        self.point = point
        self.id = id
        self.left = left
        self.right = right
        self.bucket = bucket


class KDTree:
    """Balanced 2-d tree over labelled points, median split, bucket leaves.

    Queries return neighbours in nondecreasing distance order; exact ties are
    broken toward the smaller point id, independent of tree layout.
    """

    def __init__(self, points, leaf_size=8):
        # points: iterable of ((x, y), id)
        if leaf_size < 1:
            raise ValueError("leaf_size must be >= 1")
        items = [((float(p[0]), float(p[1])), int(i)) for p, i in points]
        ids = [i for _, i in items]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate point ids")
        self._points = dict((i, p) for p, i in items)
        self._leaf_size = leaf_size
        self._root = self._build(items, depth=0) if items else None

    def __len__(self):
        return len(self._points)

    def __contains__(self, point_id):
        return point_id in self._points

    def _build(self, items, depth):
        if len(items) <= self._leaf_size:
            return _Node(bucket=items)
        axis = depth % 2
        items.sort(key=lambda it: (it[0][axis], it[1]))
        mid = len(items) // 2
        node = _Node(axis=axis, point=items[mid][0], id=items[mid][1])
        node.left = self._build(items[:mid], depth + 1)
        node.right = self._build(items[mid + 1 :], depth + 1)
        return node

    def query(self, point, k, exclude_id=None):
        """k nearest neighbours of `point` as [(id, distance)], sorted."""
        if k < 1:
            raise ValueError("k must be >= 1")
        qx, qy = float(point[0]), float(point[1])
        # max-heap of (-d2, -id) keeps the lexicographically worst candidate on top,
        # so equal-distance candidates with larger ids are evicted first
        heap = []

        def consider(p, pid):
            if pid == exclude_id:
                return
            d2 = (p[0] - qx) ** 2 + (p[1] - qy) ** 2
            entry = (-d2, -pid)
            if len(heap) < k:
                heapq.heappush(heap, entry)
            elif entry > heap[0]:
                heapq.heapreplace(heap, entry)

        def bound():
            # current worst kept distance; unbounded until the heap is full
            return float("inf") if len(heap) < k else -heap[0][0]

        def visit(node):
            if node is None:
                return
            if node.bucket is not None:
                for p, pid in node.bucket:
                    consider(p, pid)
                return
            consider(node.point, node.id)
            q_axis = (qx, qy)[node.axis]
            split = node.point[node.axis]
            near, far = (node.left, node.right) if q_axis < split else (node.right, node.left)
            visit(near)
            # the far side can still hold an equal-distance, smaller-id point
            if (split - q_axis) ** 2 <= bound():
                visit(far)

        visit(self._root)
        out = sorted((-d2, -nid) for d2, nid in heap)
        return [(nid, d2**0.5) for d2, nid in out]

    def query_id(self, point_id, k):
        """k nearest neighbours of an indexed point, excluding itself."""
        if point_id not in self._points:
            raise KeyError(f"unknown point id {point_id}")
        return self.query(self._points[point_id], k, exclude_id=point_id)


def build_tree(table, leaf_size=8):
    return KDTree(((cell_center(c.bbox), c.id) for c in table.cells), leaf_size=leaf_size)


def knn(tree, query_cell_id, k):
    """Nearest neighbours of a cell: min(k, n-1) (id, distance) pairs."""
    return tree.query_id(query_cell_id, min(k, len(tree) - 1)) if len(tree) > 1 else []


def generate_associations(table, cfg=PairGenConfig()):
    """Union of every cell's m nearest neighbours, canonical and deduplicated.

    Output is sorted by (cell_i, cell_j), hence invariant under any
    permutation of the table's cell list.
    """
    if len(table.cells) < 2:
        raise ValueError(f"table {table.id}: need at least 2 cells to form associations")
    tree = build_tree(table)
    pairs = set()
    for cell in table.cells:
        for nid, _ in knn(tree, cell.id, cfg.m):
            pairs.add((min(cell.id, nid), max(cell.id, nid)))
    return [Association(i, j) for i, j in sorted(pairs)]


def _spans_overlap(a1, a2, b1, b2):
    return a1 <= b2 and b1 <= a2


def label_association(table, assoc):
    """Ground-truth label from grid spans (immediate adjacency with overlap)."""
    ca = table.cell_by_id(assoc.cell_i)
    cb = table.cell_by_id(assoc.cell_j)
    if ca.grid is None or cb.grid is None:
        raise ValueError(f"cells ({assoc.cell_i},{assoc.cell_j}) lack grid spans")
    ar1, ar2, ac1, ac2 = ca.grid
    br1, br2, bc1, bc2 = cb.grid
    if _spans_overlap(ar1, ar2, br1, br2) and (ac2 + 1 == bc1 or bc2 + 1 == ac1):
        return AssocLabel.HORIZONTAL
    if _spans_overlap(ac1, ac2, bc1, bc2) and (ar2 + 1 == br1 or br2 + 1 == ar1):
        return AssocLabel.VERTICAL
    return AssocLabel.NONE


def label_table_associations(table, cfg=PairGenConfig()):
    """Generate and label the full association set of a ground-truthed table."""
    return [
        Association(a.cell_i, a.cell_j, label_association(table, a))
        for a in generate_associations(table, cfg)
    ]
