"""Sound finite abstraction of the latent inclusion dynamics.

For every cell q and every interval u of the c-partition, the certified
image box [mu_lo - eps_bar, mu_hi + eps_bar] over-approximates where the
dynamics can send any z in q; a transition to q' exists iff some image box
intersects q'. Mass not provably covered by interior cells routes to the
absorbing outside-state q_u (the last state index).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gp import InclusionGpModel, bound_over_cells
from .regions import LabelingMap, Partition


@dataclass
class Nts:
    T: np.ndarray  # (n, n) bool; last index is q_u
    labels: list  # frozenset per state, q_u unlabeled
    ap: list

    @property
    def n_states(self):
        return self.T.shape[0]

    @property
    def q_u(self):
        return self.n_states - 1

    def successor_lists(self):
        return [list(np.flatnonzero(self.T[q])) for q in range(self.n_states)]

    def predecessor_lists(self):
        return [list(np.flatnonzero(self.T[:, q])) for q in range(self.n_states)]


@dataclass
class RefinementPlan:
    cells: list
    policy: str = "longest-edge-bisection"


def certified_image_boxes(gp: InclusionGpModel, partition: Partition, n_u: int,
                          grid=(4, 4, 3)):
    """Per (cell, u): certified image box (n_cells, n_u, n_p, 2)."""
    n_cells = partition.n_cells
    n_p = gp.n_p
    boxes = np.empty((n_cells, n_u, n_p, 2))
    for ui, u in enumerate(gp.c_intervals(n_u)):
        res = bound_over_cells(gp, partition.los, partition.his, u, grid)
        # res: (n_cells, n_p, 3) = (mu_lo, mu_hi, eps_bar)
        boxes[:, ui, :, 0] = res[:, :, 0] - res[:, :, 2]
        boxes[:, ui, :, 1] = res[:, :, 1] + res[:, :, 2]
    return boxes


def _covered_by_interior(box_lo, box_hi, los, his, interior_mask):
    """Is the box provably inside the union of interior cells (area test)?"""
    area = float(np.prod(box_hi - box_lo))
    ilos = los[interior_mask]
    ihis = his[interior_mask]
    if area <= 0.0:
        inside = np.all((box_lo >= ilos) & (box_hi <= ihis), axis=1)
        return bool(inside.any())
    w = np.minimum(ihis, box_hi) - np.maximum(ilos, box_lo)
    w = np.clip(w, 0.0, None)
    covered = float(np.prod(w, axis=1).sum())
    return covered >= area * (1.0 - 1e-9)


def build_nts(partition: Partition, labeling: LabelingMap, gp: InclusionGpModel,
              n_u: int = 8, grid=(4, 4, 3)) -> Nts:
    """Assemble the NTS: transitions from certified image boxes, labels from
    the labeling map, q_u absorbing."""
    n_cells = partition.n_cells
    boxes = certified_image_boxes(gp, partition, n_u, grid)
    T = np.zeros((n_cells + 1, n_cells + 1), dtype=bool)
    interior = ~partition.boundary
    los, his = partition.los, partition.his
    for q in range(n_cells):
        for ui in range(boxes.shape[1]):
            blo = boxes[q, ui, :, 0]
            bhi = boxes[q, ui, :, 1]
            overlap = np.all((blo[None, :] <= his) & (bhi[None, :] >= los), axis=1)
            T[q, :n_cells] |= overlap
            if not _covered_by_interior(blo, bhi, los, his, interior):
                T[q, n_cells] = True
    T[n_cells, :] = False
    T[n_cells, n_cells] = True  # absorbing outside state
    labels = list(labeling.cell_labels) + [frozenset()]
    return Nts(T=T, labels=labels, ap=list(labeling.ap))


def refine(nts: Nts, check_result, partition: Partition):
    """Bisect every uncertain cell adjacent (through T, either direction) to a
    decided cell; returns the new partition and the plan."""
    decided = set(check_result.q_yes) | set(check_result.q_no)
    frontier = []
    for q in check_result.q_unknown:
        if q >= partition.n_cells:
            continue  # q_u is not refinable
        succs = set(np.flatnonzero(nts.T[q]))
        preds = set(np.flatnonzero(nts.T[:, q]))
        if (succs | preds) & decided:
            frontier.append(int(q))
    frontier.sort()
    if not frontier:
        return partition, RefinementPlan(cells=[])
    return partition.split_cells(frontier), RefinementPlan(cells=frontier)


# ---------------------------------------------------------------------------
# Serialization: adjacency list plus label table


def nts_to_text(nts: Nts) -> str:
    lines = [f"# states {nts.n_states} q_u {nts.q_u}"]
    lines.append("# ap " + " ".join(nts.ap))
    for q in range(nts.n_states):
        succs = " ".join(str(s) for s in np.flatnonzero(nts.T[q]))
        lines.append(f"{q}: {succs}")
    lines.append("# labels")
    for q in range(nts.n_states):
        labs = " ".join(sorted(nts.labels[q]))
        lines.append(f"{q}: {labs}")
    return "\n".join(lines) + "\n"


def nts_from_text(text: str) -> Nts:
    lines = [ln for ln in text.strip().splitlines()]
    header = lines[0].split()
    n = int(header[2])
    ap = lines[1].split()[2:]
    T = np.zeros((n, n), dtype=bool)
    labels = [frozenset() for _ in range(n)]
    section = "adj"
    for ln in lines[2:]:
        if ln.startswith("# labels"):
            section = "labels"
            continue
        q_str, _, rest = ln.partition(":")
        q = int(q_str)
        items = rest.split()
        if section == "adj":
            for s in items:
                T[q, int(s)] = True
        else:
            labels[q] = frozenset(items)
    return Nts(T=T, labels=labels, ap=ap)
