"""
Barnes-Hut octree for the mollified Coulomb drift.

Far-field nodes are replaced by their monopole with the exact Coulomb force; a node is only
accepted when every particle in its box is at least epsilon from the target, where the
mollified kernel equals the exact one. Everything else is summed directly at the leaves.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from app.config import AppConfig
from app.services.kernel import FOUR_PI, KernelSpec, _mollified_force_unchecked
from app.utils.exceptions import ValidationError

logger = logging.getLogger(__name__)


@dataclass
class OctreeNode:
    center: np.ndarray
    half: float
    members: np.ndarray
    com: np.ndarray
    count: int
    children: List[int] = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return not self.children


class Octree:
    """
    Octree over a fixed particle cloud. Node 0 is the root; children are stored by index.
    """

    def __init__(self, positions: np.ndarray, leaf_size: Optional[int] = None):
        self.positions = positions
        self.leaf_size = leaf_size or AppConfig.KERNEL.LEAF_SIZE
        self.nodes: List[OctreeNode] = []

        lo = positions.min(axis=0)
        hi = positions.max(axis=0)
        center = 0.5 * (lo + hi)
        # pad so points on the upper face fall strictly inside
        half = 0.5 * float(np.max(hi - lo)) * (1.0 + 1e-9) + 1e-300
        self._build(center, half, np.arange(positions.shape[0]))

    def _build(self, center: np.ndarray, half: float, members: np.ndarray) -> int:
        pts = self.positions[members]
        node = OctreeNode(
            center=center,
            half=half,
            members=members,
            com=pts.mean(axis=0),
            count=int(members.size),
        )
        index = len(self.nodes)
        self.nodes.append(node)

        # coincident points can never be separated; keep them in one leaf
        if members.size <= self.leaf_size or np.all(pts == pts[0]):
            return index

        octant = ((pts[:, 0] >= center[0]).astype(np.int64)
                  | ((pts[:, 1] >= center[1]).astype(np.int64) << 1)
                  | ((pts[:, 2] >= center[2]).astype(np.int64) << 2))
        child_half = 0.5 * half
        for code in range(8):
            mask = octant == code
            if not np.any(mask):
                continue
            offset = np.array([1.0 if code & 1 else -1.0,
                               1.0 if code & 2 else -1.0,
                               1.0 if code & 4 else -1.0])
            child = self._build(center + offset * child_half, child_half, members[mask])
            node.children.append(child)
        return index


def tree_forces(positions: np.ndarray, spec: KernelSpec, theta: Optional[float] = None,
                leaf_size: Optional[int] = None) -> np.ndarray:
    """
    Approximate (1/N) sum_j F_eps(x_i - x_j) with a monopole Barnes-Hut traversal.

    Args:
        positions: Validated N x 3 positions
        spec: Kernel settings
        theta: Opening angle (box side / distance to centre of mass)
        leaf_size: Maximum particles per leaf

    Returns:
        N x 3 drift array
    """
    theta = AppConfig.KERNEL.TREE_THETA if theta is None else float(theta)
    if not 0.0 < theta < 1.0:
        raise ValidationError(f"tree opening angle must lie in (0, 1), got {theta}")

    n = positions.shape[0]
    drift = np.zeros_like(positions)
    if n < 2:
        return drift

    tree = Octree(positions, leaf_size)
    eps = spec.epsilon
    far_nodes = 0

    stack = [(0, np.arange(n))]
    while stack:
        index, targets = stack.pop()
        node = tree.nodes[index]
        x = positions[targets]

        d_vec = x - node.com
        dist = np.sqrt(np.sum(d_vec * d_vec, axis=1))
        gap_vec = np.clip(np.abs(x - node.center) - node.half, 0.0, None)
        gap = np.sqrt(np.sum(gap_vec * gap_vec, axis=1))

        accept = (2.0 * node.half < theta * dist) & (gap >= eps)
        if np.any(accept):
            dv = d_vec[accept]
            r = dist[accept]
            drift[targets[accept]] += node.count * dv / (FOUR_PI * r**3)[:, None]
            far_nodes += int(np.count_nonzero(accept))

        rest = targets[~accept]
        if rest.size == 0:
            continue
        if node.is_leaf:
            diff = positions[rest][:, None, :] - positions[node.members][None, :, :]
            # self pairs contribute F_eps(0) = 0
            drift[rest] += _mollified_force_unchecked(diff, eps).sum(axis=1)
        else:
            for child in reversed(node.children):
                stack.append((child, rest))

    logger.debug("tree traversal: %d nodes, %d monopole interactions", len(tree.nodes), far_nodes)
    return drift / n


def tree_deviation(tree_drift: np.ndarray, direct_drift: np.ndarray, per_particle: bool = False) -> float:
    """
    Worst-case deviation of tree drift from direct summation.

    The default normalization is global, max_i |F_tree,i - F_direct,i| / max_i |F_direct,i|, so a
    particle with a small drift (near the centre of a symmetric cloud) may carry a large relative
    error without moving it. per_particle=True returns max_i |F_tree,i - F_direct,i| / |F_direct,i|
    instead; a particle whose direct drift vanishes counts as 0 when its tree drift does too and
    as inf otherwise. With global normalization a vanishing direct drift gives max_i |F_tree,i|.
    """
    error = np.linalg.norm(tree_drift - direct_drift, axis=1)
    magnitude = np.linalg.norm(direct_drift, axis=1)
    if per_particle:
        with np.errstate(divide="ignore", invalid="ignore"):
            relative = np.where(error == 0.0, 0.0, error / magnitude)
        return float(np.max(relative, initial=0.0))
    scale = float(np.max(magnitude, initial=0.0))
    if scale == 0.0:
        return float(np.max(np.linalg.norm(tree_drift, axis=1), initial=0.0))
    return float(np.max(error) / scale)
