"""Scoring of inferred trees against ground truth parent arrays."""

from __future__ import annotations

from typing import Optional, Sequence

from .errors import MismatchedNodeSets


def _normalize(parents: Sequence[Optional[int]]) -> list[Optional[int]]:
    out: list[Optional[int]] = []
    for p in parents:
        if p is None or p < 0:
            out.append(None)
        else:
            out.append(int(p))
    return out


def _check_pair(pred: Sequence[Optional[int]], gt: Sequence[Optional[int]]):
    p, g = _normalize(pred), _normalize(gt)
    if len(p) != len(g):
        raise MismatchedNodeSets(f"node counts differ: {len(p)} vs {len(g)}")
    p_roots = [i for i, v in enumerate(p) if v is None]
    g_roots = [i for i, v in enumerate(g) if v is None]
    if len(p_roots) != 1 or len(g_roots) != 1:
        raise MismatchedNodeSets("each tree needs exactly one root")
    if p_roots != g_roots:
        raise MismatchedNodeSets(f"roots differ: {p_roots[0]} vs {g_roots[0]}")
    for name, arr in (("pred", p), ("gt", g)):
        for start in range(len(arr)):
            seen = set()
            i = start
            while arr[i] is not None:
                if i in seen:
                    raise MismatchedNodeSets(f"{name} contains a cycle at node {i}")
                seen.add(i)
                i = arr[i]
    return p, g


def parent_accuracy(pred: Sequence[Optional[int]], gt: Sequence[Optional[int]]) -> float:
    """Fraction of non-root nodes whose parent is recovered exactly."""
    p, g = _check_pair(pred, gt)
    non_root = [i for i in range(len(g)) if g[i] is not None]
    if not non_root:
        return 1.0
    correct = sum(1 for i in non_root if p[i] == g[i])
    return correct / len(non_root)


def edit_distance(pred: Sequence[Optional[int]], gt: Sequence[Optional[int]]) -> int:
    """Minimum number of parent-edge reassignments turning pred into gt.

    With a shared node set and fixed root this equals the count of differing
    parent pointers: reattaching nodes in ground-truth depth order never
    creates a cycle, so each differing edge costs exactly one move.
    """
    p, g = _check_pair(pred, gt)
    return sum(1 for i in range(len(g)) if g[i] is not None and p[i] != g[i])


def evaluation_report(pred: Sequence[Optional[int]], gt: Sequence[Optional[int]]) -> dict:
    p, g = _check_pair(pred, gt)
    per_node = [
        {"node": i, "pred_parent": p[i], "gt_parent": g[i], "correct": p[i] == g[i]}
        for i in range(len(g))
        if g[i] is not None
    ]
    return {
        "accuracy": parent_accuracy(pred, gt),
        "edit_distance": edit_distance(pred, gt),
        "n_nodes": len(g),
        "per_node": per_node,
    }
