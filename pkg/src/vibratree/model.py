"""Tree topology, physical parameters, and static geometry.

Conventions used throughout the package:

* component 0 of every 2D vector is vertical-up, component 1 is horizontal;
* a branch direction angle t maps to the unit vector n(t) = (cos t, sin t),
  so t = 0 points straight up and gravity acts along (-g, 0);
* ``rest_angle`` is the absolute directional angle from vertical of a branch
  in the static configuration;
* node i is the tip of branch i; the base of the root branch is the fixed
  anchor at the origin.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import CycleDetected, MultipleRoots, NonPositiveParameter, ParseError


def direction(angle: float | np.ndarray) -> np.ndarray:
    """Unit vector n(t) = (cos t, sin t); component 0 is vertical-up."""
    return np.stack([np.cos(angle), np.sin(angle)], axis=-1)


def perp(v: np.ndarray) -> np.ndarray:
    """Rotate a 2D vector 90 degrees in the direction of increasing angle."""
    out = np.empty_like(v)
    out[..., 0] = -v[..., 1]
    out[..., 1] = v[..., 0]
    return out


@dataclass(frozen=True)
class Branch:
    parent: Optional[int]  # None for the root branch
    mass: float            # kg
    length: float          # m
    stiffness: float       # N*m/rad, torsional spring at the base junction
    rest_angle: float      # rad from vertical, static configuration


@dataclass(frozen=True)
class NodeGeometry:
    """Static 2D positions: the fixed anchor and every branch tip."""

    anchor: np.ndarray    # (2,)
    tips: np.ndarray      # (n, 2)


class TreeModel:
    """Immutable rooted tree of rigid branches.

    Validated on construction; derived topology (children lists, root-to-leaf
    order, ancestor paths) is precomputed and shared read-only.
    """

    def __init__(self, branches: Sequence[Branch], gravity: float = 9.81):
        self.branches = tuple(branches)
        self.gravity = float(gravity)
        self._validate()
        n = len(self.branches)
        self.parent = np.array(
            [-1 if b.parent is None else b.parent for b in self.branches], dtype=np.int64
        )
        self.mass = np.array([b.mass for b in self.branches])
        self.length = np.array([b.length for b in self.branches])
        self.stiffness = np.array([b.stiffness for b in self.branches])
        self.rest_angle = np.array([b.rest_angle for b in self.branches])
        self.children: list[list[int]] = [[] for _ in range(n)]
        for i, b in enumerate(self.branches):
            if b.parent is not None:
                self.children[b.parent].append(i)
        # root-first order: every parent precedes its children
        order = [self.root_index]
        for i in order:
            order.extend(self.children[i])
        self.topo_order = np.array(order, dtype=np.int64)
        self.paths: list[list[int]] = [[] for _ in range(n)]
        for i in self.topo_order:
            p = self.parent[i]
            self.paths[i] = ([] if p < 0 else self.paths[p]) + [int(i)]

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    @property
    def root_index(self) -> int:
        return self._root

    def _validate(self) -> None:
        n = len(self.branches)
        if n == 0:
            raise MultipleRoots([])
        roots = [i for i, b in enumerate(self.branches) if b.parent is None]
        if len(roots) != 1:
            raise MultipleRoots(roots)
        self._root = roots[0]
        for i, b in enumerate(self.branches):
            if b.parent is not None and not (0 <= b.parent < n):
                raise ParseError(f"branch {i}: parent {b.parent} out of range")
            for name in ("mass", "length", "stiffness"):
                value = getattr(b, name)
                if not (value > 0) or not math.isfinite(value):
                    raise NonPositiveParameter(i, name, value)
            if not math.isfinite(b.rest_angle):
                raise ParseError(f"branch {i}: rest_angle is not finite")
        # cycle check: walk up from every branch, marking visited chains
        state = [0] * n  # 0 unvisited, 1 on current walk, 2 done
        for start in range(n):
            chain = []
            i = start
            while state[i] == 0:
                state[i] = 1
                chain.append(i)
                p = self.branches[i].parent
                if p is None:
                    break
                i = p
                if state[i] == 1:
                    raise CycleDetected(i)
            for j in chain:
                state[j] = 2

    def subtree(self, root_id: int) -> tuple["TreeModel", list[int]]:
        """Detach the subtree rooted at ``root_id`` as a standalone model.

        Returns the new model and the list of original branch ids in new-id
        order. Rest angles are absolute, so geometry is preserved; the
        subtree's base becomes the new fixed anchor.
        """
        keep = [root_id]
        for i in keep:
            keep.extend(self.children[i])
        remap = {old: new for new, old in enumerate(keep)}
        branches = []
        for old in keep:
            b = self.branches[old]
            parent = None if old == root_id else remap[b.parent]
            branches.append(Branch(parent, b.mass, b.length, b.stiffness, b.rest_angle))
        return TreeModel(branches, self.gravity), keep

    # serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "gravity": self.gravity,
            "branches": [
                {
                    "parent": b.parent,
                    "mass": b.mass,
                    "length": b.length,
                    "stiffness": b.stiffness,
                    "rest_angle": b.rest_angle,
                }
                for b in self.branches
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TreeModel":
        try:
            branches = [
                Branch(
                    parent=None if spec["parent"] is None else int(spec["parent"]),
                    mass=float(spec["mass"]),
                    length=float(spec["length"]),
                    stiffness=float(spec["stiffness"]),
                    rest_angle=float(spec["rest_angle"]),
                )
                for spec in data["branches"]
            ]
            gravity = float(data.get("gravity", 9.81))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed tree model: {exc}") from exc
        return cls(branches, gravity)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "TreeModel":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ParseError(f"cannot read tree model {path}: {exc}") from exc
        return cls.from_dict(data)


def validate_tree(model: TreeModel) -> None:
    """Raise a structured error unless ``model`` is a valid rooted tree.

    TreeModel construction already validates; this re-runs the checks so
    callers holding a model built elsewhere can assert its invariants.
    """
    model._validate()


def moment_of_inertia(branch: Branch) -> tuple[float, float]:
    """(I_center, I_pivot) of a uniform beam: (m l^2/12, m l^2/3)."""
    if not branch.mass > 0:
        raise NonPositiveParameter(-1, "mass", branch.mass)
    if not branch.length > 0:
        raise NonPositiveParameter(-1, "length", branch.length)
    ml2 = branch.mass * branch.length**2
    return ml2 / 12.0, ml2 / 3.0


def static_positions(model: TreeModel) -> NodeGeometry:
    """Rest tip positions: path sums of length * n(rest_angle) from the anchor."""
    n = model.n_branches
    tips = np.zeros((n, 2))
    seg = model.length[:, None] * direction(model.rest_angle)
    for i in model.topo_order:
        p = model.parent[i]
        base = tips[p] if p >= 0 else np.zeros(2)
        tips[i] = base + seg[i]
    return NodeGeometry(anchor=np.zeros(2), tips=tips)


def static_bases(model: TreeModel) -> np.ndarray:
    """Rest base-junction position of each branch (the parent's tip)."""
    tips = static_positions(model).tips
    bases = np.zeros((model.n_branches, 2))
    for i in range(model.n_branches):
        p = model.parent[i]
        if p >= 0:
            bases[i] = tips[p]
    return bases
