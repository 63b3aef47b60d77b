"""Random stable tree generation for end-to-end harnesses.

Trees are perfect b-ary hierarchies with physically plausible scaling: much
lighter and shorter branches per level, and stiffness chosen so each node's
detached subtree resonates near a target frequency. Sibling targets are
separated by sqrt(stiffness_spread) in frequency so sub-branches of one
parent stay spectrally distinguishable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NonPositiveMode, UnstableDraw
from .model import Branch, TreeModel, direction, static_bases, static_positions
from .simulator import SimState, linearize, modal_analysis


@dataclass
class SynthConfig:
    base_frequency_hz: float = 1.2   # detached fundamental target of the trunk
    depth_growth: float = 1.9        # per-level target frequency multiplier
    base_length: float = 1.0
    length_decay: float = 0.55
    base_mass: float = 2.0
    mass_decay: float = 0.13
    fan_angle: float = 0.9           # total angular spread of a sibling fan
    jitter: float = 0.08             # relative jitter on targets and geometry
    gravity: float = 9.81


def _subtree_inertia(model_geo, masses, lengths, rest, children, node) -> float:
    """Moment of inertia of node's subtree about its base junction at rest."""
    bases, centers = model_geo
    total = 0.0
    stack = [node]
    while stack:
        j = stack.pop()
        i_c = masses[j] * lengths[j] ** 2 / 12.0
        r2 = float(np.sum((centers[j] - bases[node]) ** 2))
        total += i_c + masses[j] * r2
        stack.extend(children[j])
    return total


def synth_tree(levels: int, branching, seed: int,
               stiffness_spread: float = 4.0,
               config: SynthConfig | None = None,
               max_retries: int = 100) -> TreeModel:
    """Random stable tree; raises UnstableDraw after max_retries.

    ``branching`` is either one factor for every level or a per-level list.
    ``stiffness_spread`` is the stiffness ratio between adjacent same-depth
    branches (so their frequencies differ by its square root).
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    branching_list = ([int(branching)] * (levels - 1)
                      if np.isscalar(branching) else [int(b) for b in branching])
    if len(branching_list) != levels - 1 or any(b < 1 for b in branching_list):
        raise ValueError("branching must be >= 1 per level below the root")
    cfg = config or SynthConfig()
    seq = np.random.SeedSequence([seed, levels] + branching_list)
    for _ in range(max_retries):
        rng = np.random.default_rng(seq.spawn(1)[0])
        model = _draw(levels, branching_list, stiffness_spread, cfg, rng)
        try:
            modal_analysis(linearize(model))
            return model
        except NonPositiveMode:
            continue
    raise UnstableDraw(f"no stable tree after {max_retries} draws")


def _draw(levels, branching_list, spread, cfg, rng) -> TreeModel:
    freq_spread = math.sqrt(spread)
    # (parent, depth, position within its level)
    nodes = [(None, 0, 0)]
    frontier = [0]
    for depth in range(1, levels):
        nxt = []
        pos = 0
        for p in frontier:
            for _ in range(branching_list[depth - 1]):
                nodes.append((p, depth, pos))
                nxt.append(len(nodes) - 1)
                pos += 1
        frontier = nxt

    def jit():
        return 1.0 + cfg.jitter * rng.uniform(-1, 1)

    parents = [n[0] for n in nodes]
    depths = [n[1] for n in nodes]
    lengths = [cfg.base_length * cfg.length_decay ** d * jit() for d in depths]
    masses = [cfg.base_mass * cfg.mass_decay ** d * jit() for d in depths]
    rest = [0.0] * len(nodes)
    children = [[] for _ in nodes]
    for i, p in enumerate(parents):
        if p is not None:
            children[p].append(i)
    for p, kids in enumerate(children):
        if not kids:
            continue
        offsets = np.linspace(-cfg.fan_angle / 2, cfg.fan_angle / 2, len(kids)) \
            if len(kids) > 1 else np.array([cfg.fan_angle / 2])
        for off, c in zip(offsets, kids):
            rest[c] = rest[p] + off * jit()

    # provisional model for rest geometry (stiffness placeholder)
    provisional = TreeModel(
        [Branch(parents[i], masses[i], lengths[i], 1.0, rest[i])
         for i in range(len(nodes))], gravity=cfg.gravity)
    bases = static_bases(provisional)
    centers = bases + 0.5 * np.array(lengths)[:, None] * direction(np.array(rest))
    stiffness = []
    for i, (p, depth, pos) in enumerate(nodes):
        # one geometric ladder per depth keeps every same-depth target
        # distinct, so no two branches anywhere resonate on the same bins
        f_target = (cfg.base_frequency_hz * cfg.depth_growth ** depth
                    * freq_spread ** pos * jit())
        inertia = _subtree_inertia((bases, centers), masses, lengths, rest,
                                   children, i)
        k = (2 * math.pi * f_target) ** 2 * inertia
        # stay clear of gravity buckling for the whole subtree load
        load = sum(masses[j] for j in _subtree(children, i))
        k = max(k, 3.0 * cfg.gravity * load * lengths[i])
        stiffness.append(k)
    return TreeModel(
        [Branch(parents[i], masses[i], lengths[i], stiffness[i], rest[i])
         for i in range(len(nodes))], gravity=cfg.gravity)


def _subtree(children, node):
    out = [node]
    for i in out:
        out.extend(children[i])
    return out


def modal_free_init(model: TreeModel, seed: int, amplitude: float = 0.03,
                    spectral_power: float = 1.5) -> SimState:
    """Free-vibration start exciting every mode with a red spectrum.

    Modal amplitudes fall as omega^-spectral_power with random signs, like
    wind-driven excitation: fundamentals dominate but every mode is present.
    The deviation vector is normalized to the requested peak angle.
    """
    sys = linearize(model)
    w2, v = scipy.linalg.eigh(sys.k, sys.m)
    rng = np.random.default_rng(seed)
    coeff = rng.choice([-1.0, 1.0], size=w2.size) * w2 ** (-spectral_power / 2.0)
    theta = v @ coeff
    theta *= amplitude / np.abs(theta).max()
    return SimState(0.0, theta, np.zeros(model.n_branches))


def true_parent_array(model: TreeModel) -> list:
    return [None if b.parent is None else b.parent for b in model.branches]


def true_edge_graph(model: TreeModel):
    """Connectivity graph containing exactly the ground-truth edges."""
    from .appearance import ConnectivityGraph

    n = model.n_branches
    adj = np.zeros((n, n), dtype=bool)
    for i, b in enumerate(model.branches):
        if b.parent is not None:
            adj[i, b.parent] = adj[b.parent, i] = True
    return ConnectivityGraph(adj)
