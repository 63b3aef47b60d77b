"""Recursive tree-structure inference from spectra and appearance cues.

Each recursion level divides node spectra by the current root's spectrum
(Wiener-regularized), clusters the nodes with a CRP-prior Gibbs sampler over
amplitude/phase features and connectivity, picks per-cluster subroots closest
to the root, and recurses into every cluster with its subroot as the new
root. Spectra are re-divided at every level, so deeper levels cluster on
relative responses within their subtree.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from .appearance import ConnectivityGraph
from .errors import EmptyCluster, InputError
from .spectral import Spectrum, frequency_response, spectral_envelope


@dataclass
class InferenceParams:
    crp_alpha: float = 0.3        # CRP concentration
    sigma_n: float = 0.7          # amplitude-feature scale (see scale_mode)
    sigma_p: float = 2.0          # phase-feature scale (see scale_mode)
    alpha_app: float = 0.25       # same-cluster connectivity reward
    beta_app: float = 0.25        # root-connectivity reward
    n_gibbs: int = 20             # Gibbs sweeps per level
    # Wiener regularization relative to max|Y_root|. Heavier than the analysis
    # default on purpose: division amplifies bins where the root barely moves,
    # and those bins would otherwise dominate the unit-norm features.
    epsilon: float = 0.05
    seed: int = 0
    include_root_in_paths: bool = False  # admit root into pairwise path checks
    mode_merge_bins: int = 2      # pooled mode bins closer than this merge
    # response bins are confidence-weighted by (|Y_root|/(|Y_root|+eps))^p
    # before normalization; a branch's own resonance sits where the root is
    # nearly silent, and unweighted it would swamp the shared subtree lines
    root_mask_power: float = 2.0
    # "log" compresses chain-amplification differences so that shared spectral
    # support drives similarity; "linear" is the plain normalized amplitude
    amp_transform: str = "log"
    # "relative": sigmas multiply the RMS feature spread of each clustering
    # problem, which keeps the likelihood sharpness meaningful across levels
    # and trees of very different spectral scale. "absolute": sigmas are used
    # verbatim as in the likelihood definition.
    scale_mode: str = "relative"

    def __post_init__(self):
        if not self.crp_alpha > 0:
            raise InputError("crp_alpha must be > 0")
        for name in ("sigma_n", "sigma_p"):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be > 0 (inf disables the term)")
        if self.alpha_app < 0 or self.beta_app < 0:
            raise InputError("appearance weights must be >= 0")
        if self.n_gibbs < 1:
            raise InputError("n_gibbs must be >= 1")
        if self.epsilon < 0:
            raise InputError("epsilon must be >= 0")
        if self.scale_mode not in ("relative", "absolute"):
            raise InputError(f"unknown scale_mode {self.scale_mode!r}")
        if self.amp_transform not in ("log", "linear"):
            raise InputError(f"unknown amp_transform {self.amp_transform!r}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "InferenceParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InputError(f"unknown inference parameters: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "InferenceParams":
        return cls.from_dict(json.loads(open(path).read()))


@dataclass
class FeatureMatrix:
    """Per-node features for one clustering problem."""

    amplitude: np.ndarray  # (m, d) unit-norm rows
    phase: np.ndarray      # (m, p) phases at the shared mode bins

    @property
    def n_nodes(self) -> int:
        return self.amplitude.shape[0]


@dataclass
class ClusterAssignment:
    z: np.ndarray                  # (m,) dense cluster labels
    mean_amplitude: np.ndarray     # (K, d)
    mean_phase: np.ndarray         # (K, p) circular means
    log_joint: float

    @property
    def n_clusters(self) -> int:
        return int(self.z.max()) + 1 if self.z.size else 0

    def clusters(self) -> list[list[int]]:
        return [list(np.nonzero(self.z == k)[0]) for k in range(self.n_clusters)]


@dataclass
class InferredTree:
    parent: list[Optional[int]]
    trace: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"parent": self.parent, "trace": self.trace}

    @classmethod
    def from_dict(cls, data: dict) -> "InferredTree":
        return cls(parent=[None if p is None else int(p) for p in data["parent"]],
                   trace=list(data.get("trace", [])))


def remove_root(y_node: Spectrum, y_root: Spectrum, epsilon: float) -> Spectrum:
    """Per-level root removal: the Wiener-regularized spectral division."""
    return frequency_response(y_node, y_root, epsilon)


def spectrum_scale(spec: Spectrum) -> float:
    """Robust line-strength reference: mean of the strongest bins.

    Responses from earlier recursion levels can carry one wildly amplified
    bin; normalizing epsilon by the plain maximum would then gate everything
    else away.
    """
    a = np.abs(spec.values)
    k = max(8, a.shape[0] // 64)
    if a.shape[0] <= k:
        return float(a.max())
    top = np.partition(a, -k)[-k:]
    return float(top.mean())


def wrap_angle(x: np.ndarray) -> np.ndarray:
    """Wrap to (-pi, pi]."""
    out = np.mod(x + np.pi, 2 * np.pi) - np.pi
    return np.where(out == -np.pi, np.pi, out)


def circular_mean(angles: np.ndarray, axis=0) -> np.ndarray:
    s = np.exp(1j * angles).sum(axis=axis)
    return np.angle(s)


def crp_log_prior(z: Sequence[int], alpha: float = 1.0) -> float:
    """Exchangeable partition probability of the CRP."""
    z = np.asarray(z, dtype=int)
    n = z.size
    if n == 0:
        return 0.0
    _, counts = np.unique(z, return_counts=True)
    out = counts.size * math.log(alpha)
    out += sum(math.lgamma(c) for c in counts)  # (n_k - 1)!
    out -= sum(math.log(i + alpha) for i in range(n))
    return out


def motion_log_likelihood(features: FeatureMatrix, z: np.ndarray,
                          params: InferenceParams) -> float:
    """Negative squared deviations from cluster means, amplitude and phase."""
    inv_n = 0.0 if math.isinf(params.sigma_n) else params.sigma_n ** -2
    inv_p = 0.0 if math.isinf(params.sigma_p) else params.sigma_p ** -2
    total = 0.0
    for k in range(int(z.max()) + 1 if z.size else 0):
        members = z == k
        if not members.any():
            continue
        if inv_n:
            amp = features.amplitude[members]
            total -= inv_n * float(((amp - amp.mean(axis=0)) ** 2).sum())
        if inv_p and features.phase.shape[1]:
            ph = features.phase[members]
            mean = circular_mean(ph, axis=0)
            total -= inv_p * float((wrap_angle(ph - mean) ** 2).sum())
    return total


def _components(adj: np.ndarray, nodes: list[int]) -> list[set[int]]:
    """Connected components of the induced subgraph over `nodes`."""
    remaining = set(nodes)
    comps = []
    while remaining:
        start = min(remaining)
        comp = {start}
        frontier = [start]
        remaining.discard(start)
        while frontier:
            v = frontier.pop()
            for u in list(remaining):
                if adj[v, u]:
                    comp.add(u)
                    remaining.discard(u)
                    frontier.append(u)
        comps.append(comp)
    return comps


def appearance_log_likelihood(adj: np.ndarray, z: np.ndarray, root: int,
                              params: InferenceParams) -> float:
    """Connectivity rewards under restricted-path semantics.

    `adj` covers the clustered nodes plus the root; `z` labels every non-root
    index in increasing order. A same-cluster pair counts when a path exists
    inside the cluster's induced subgraph (plus the root when configured);
    every node additionally counts when connected to the root through its own
    cluster.
    """
    adj = np.asarray(adj, dtype=bool)
    k_total = adj.shape[0]
    node_ids = [i for i in range(k_total) if i != root]
    if len(node_ids) != len(z):
        raise InputError("label vector does not match adjacency size")
    total = 0.0
    for k in range(int(z.max()) + 1 if len(z) else 0):
        members = [node_ids[j] for j in range(len(z)) if z[j] == k]
        if not members:
            continue
        if params.alpha_app:
            pair_nodes = members + [root] if params.include_root_in_paths else members
            for comp in _components(adj, pair_nodes):
                comp_members = comp - {root}
                c = len(comp_members)
                total += params.alpha_app * c * (c - 1) / 2
        if params.beta_app:
            for comp in _components(adj, members + [root]):
                if root in comp:
                    total += params.beta_app * (len(comp) - 1)
    return total


def joint_log_probability(features: FeatureMatrix, adj: Optional[np.ndarray],
                          root: int, z: np.ndarray,
                          params: InferenceParams) -> float:
    total = crp_log_prior(z, params.crp_alpha)
    total += motion_log_likelihood(features, z, params)
    if adj is not None:
        total += appearance_log_likelihood(adj, z, root, params)
    return total


def resolve_scales(features: FeatureMatrix, params: InferenceParams) -> InferenceParams:
    """Turn relative sigmas into absolute ones using the data spread.

    The reference spread is the RMS distance of the features from their
    overall mean (circular mean for phases), so a relative sigma of 1.0 means
    "as wide as the whole problem's spread".
    """
    if params.scale_mode == "absolute":
        return params
    from dataclasses import replace

    amp = features.amplitude
    amp_scale = math.sqrt(float(((amp - amp.mean(axis=0)) ** 2).sum()) /
                          max(amp.shape[0], 1))
    if features.phase.shape[1]:
        ph = features.phase
        dev = wrap_angle(ph - circular_mean(ph, axis=0))
        ph_scale = math.sqrt(float((dev ** 2).sum()) / max(ph.shape[0], 1))
    else:
        ph_scale = 1.0
    return replace(
        params,
        sigma_n=params.sigma_n * max(amp_scale, 1e-12),
        sigma_p=params.sigma_p * max(ph_scale, 1e-12),
        scale_mode="absolute",
    )


def _dense_relabel(z: np.ndarray) -> np.ndarray:
    labels = np.unique(z[z >= 0])
    remap = {int(old): new for new, old in enumerate(labels)}
    out = z.copy()
    for i, v in enumerate(z):
        if v >= 0:
            out[i] = remap[int(v)]
    return out


def _cluster_motion(features: FeatureMatrix, members: np.ndarray,
                    params: InferenceParams) -> float:
    """Motion contribution of one cluster (sum over its members)."""
    inv_n = 0.0 if math.isinf(params.sigma_n) else params.sigma_n ** -2
    inv_p = 0.0 if math.isinf(params.sigma_p) else params.sigma_p ** -2
    total = 0.0
    if inv_n:
        amp = features.amplitude[members]
        total -= inv_n * float(((amp - amp.mean(axis=0)) ** 2).sum())
    if inv_p and features.phase.shape[1]:
        ph = features.phase[members]
        total -= inv_p * float((wrap_angle(ph - circular_mean(ph, axis=0)) ** 2).sum())
    return total


def _cluster_appearance(adj: Optional[np.ndarray], node_ids: list[int],
                        members: np.ndarray, root: int,
                        params: InferenceParams) -> float:
    if adj is None:
        return 0.0
    global_members = [node_ids[j] for j in members]
    total = 0.0
    if params.alpha_app:
        pair_nodes = (global_members + [root] if params.include_root_in_paths
                      else list(global_members))
        for comp in _components(adj, pair_nodes):
            c = len(comp - {root})
            total += params.alpha_app * c * (c - 1) / 2
    if params.beta_app:
        for comp in _components(adj, global_members + [root]):
            if root in comp:
                total += params.beta_app * (len(comp) - 1)
    return total


def gibbs_cluster(features: FeatureMatrix, adj: Optional[np.ndarray], root: int,
                  params: InferenceParams,
                  rng: Optional[np.random.Generator] = None) -> ClusterAssignment:
    """Gibbs sampling over cluster labels; returns the best assignment seen.

    Starts from a single cluster and resamples every label from its full
    conditional for ``n_gibbs`` sweeps. Candidate scores are computed as
    exact deltas: removing node i and re-adding it to cluster k changes only
    that cluster's motion/appearance contributions, and the CRP factors share
    a common denominator that cancels in the softmax. The visited assignment
    with the highest joint probability (initial state included) is returned.
    """
    m = features.n_nodes
    if m < 1:
        raise EmptyCluster("no nodes to cluster")
    if rng is None:
        rng = np.random.default_rng(params.seed)
    params = resolve_scales(features, params)
    node_ids = [i for i in range(adj.shape[0]) if i != root] if adj is not None else []
    z = np.zeros(m, dtype=int)
    best_logp = joint_log_probability(features, adj, root, z, params)
    best_z = z.copy()
    if m == 1:
        return _finalize(features, z, best_logp)
    logp = best_logp
    idx = np.arange(m)
    for _ in range(params.n_gibbs):
        for i in range(m):
            z[i] = -1
            z = _dense_relabel(z)
            n_existing = int(z.max()) + 1
            scores = np.empty(n_existing + 1)
            for k in range(n_existing + 1):
                members = idx[z == k]
                with_i = np.append(members, i)
                base = (_cluster_motion(features, members, params)
                        + _cluster_appearance(adj, node_ids, members, root, params)
                        ) if members.size else 0.0
                gain = (_cluster_motion(features, with_i, params)
                        + _cluster_appearance(adj, node_ids, with_i, root, params))
                crp_w = math.log(members.size) if members.size else math.log(params.crp_alpha)
                scores[k] = crp_w + gain - base
            probs = np.exp(scores - scores.max())
            probs /= probs.sum()
            choice = int(rng.choice(n_existing + 1, p=probs))
            z[i] = choice
            # absolute joint of the new state, tracked for best-seen selection
            logp = joint_log_probability(features, adj, root, z, params)
            if logp > best_logp:
                best_logp = logp
                best_z = z.copy()
    return _finalize(features, _dense_relabel(best_z), best_logp)


def _finalize(features: FeatureMatrix, z: np.ndarray, logp: float) -> ClusterAssignment:
    k_count = int(z.max()) + 1
    means_a = np.vstack([features.amplitude[z == k].mean(axis=0)
                         for k in range(k_count)])
    if features.phase.shape[1]:
        means_p = np.vstack([circular_mean(features.phase[z == k], axis=0)
                             for k in range(k_count)])
    else:
        means_p = np.zeros((k_count, 0))
    return ClusterAssignment(z=z, mean_amplitude=means_a, mean_phase=means_p,
                             log_joint=logp)


def select_subroot(cluster: Sequence[int], root_position: np.ndarray,
                   positions: np.ndarray) -> int:
    """Cluster member closest to the root in Euclidean space; ties by id."""
    ids = sorted(int(i) for i in cluster)
    if not ids:
        raise EmptyCluster("cannot select a subroot from an empty cluster")
    dists = np.linalg.norm(positions[ids] - root_position, axis=1)
    return ids[int(np.argmin(dists))]


def shared_mode_bins(spectra: Sequence[Spectrum], merge_tol: int = 2) -> list[int]:
    """Pooled per-node envelope modes, merged across nodes.

    Bins closer than ``merge_tol`` collapse to the one with the largest total
    amplitude over all nodes, so every node's phase feature is evaluated on a
    common bin set.
    """
    from .errors import DegenerateSpectrum

    pooled: list[int] = []
    for spec in spectra:
        try:
            pooled.extend(int(m.bin) for m in spectral_envelope(spec).modes)
        except DegenerateSpectrum:
            continue
    if not pooled:
        return []
    weight = {}
    for b in set(pooled):
        weight[b] = sum(float(np.abs(s.values[b])) for s in spectra)
    pooled = sorted(set(pooled))
    groups: list[list[int]] = [[pooled[0]]]
    for b in pooled[1:]:
        if b - groups[-1][-1] <= merge_tol:
            groups[-1].append(b)
        else:
            groups.append([b])
    return [max(g, key=lambda b: (weight[b], -b)) for g in groups]


def build_features(responses: dict[int, Spectrum], node_ids: Sequence[int],
                   y_root: Optional[Spectrum] = None, epsilon_abs: float = 0.0,
                   merge_tol: int = 2, root_mask_power: float = 2.0,
                   amp_transform: str = "log") -> tuple[FeatureMatrix, list[int]]:
    """Feature matrix over ``node_ids`` plus the shared mode-bin list."""
    bins = shared_mode_bins([responses[i] for i in node_ids], merge_tol)
    bins = [b for b in bins if b >= 2]
    if y_root is not None and epsilon_abs > 0 and root_mask_power > 0:
        ry = np.abs(y_root.values)
        gate = (ry / (ry + epsilon_abs)) ** root_mask_power
    else:
        gate = 1.0
    amps, phases = [], []
    for i in node_ids:
        v = responses[i].values
        a = np.abs(v) * gate
        a[:2] = 0.0  # DC and its leakage carry mean offset, not vibration
        if amp_transform == "log" and a.max() > 0:
            # floor relative to the node's own peak keeps scale invariance
            a = np.log1p(a / (1e-3 * a.max()))
        norm = np.linalg.norm(a)
        amps.append(a / norm if norm > 0 else a)
        phases.append(np.angle(v[bins]) if bins else np.zeros(0))
    return FeatureMatrix(amplitude=np.vstack(amps),
                         phase=np.vstack(phases) if bins else np.zeros((len(node_ids), 0))), bins


def infer_tree(spectra: Sequence[Spectrum], adjacency: Optional[ConnectivityGraph],
               positions: np.ndarray, root: int,
               params: Optional[InferenceParams] = None) -> InferredTree:
    """Recursive hierarchical clustering into a rooted parent array."""
    params = params or InferenceParams()
    n = len(spectra)
    positions = np.asarray(positions, dtype=float)
    if positions.shape != (n, 2):
        raise InputError("positions must be (n_nodes, 2)")
    if not (0 <= root < n):
        raise InputError(f"root {root} out of range")
    if adjacency is not None and adjacency.n_points != n:
        raise InputError("connectivity size does not match node count")
    parent: list[Optional[int]] = [None] * n
    trace: list[dict] = []
    seed_seq = np.random.SeedSequence(params.seed)

    # nodes with no usable motion signal attach directly to the root
    silent = [i for i in range(n)
              if i != root and float(np.abs(spectra[i].values).max()) == 0.0]
    for i in silent:
        parent[i] = root
    live = [i for i in range(n) if i != root and i not in set(silent)]
    if silent:
        trace.append({"depth": 0, "root": root, "silent_nodes": silent})

    def recurse(node_ids: list[int], level_spectra: dict[int, Spectrum],
                root_id: int, depth: int) -> None:
        if not node_ids:
            return
        if len(node_ids) == 1:
            parent[node_ids[0]] = root_id
            trace.append({"depth": depth, "root": root_id,
                          "clusters": [[node_ids[0]]],
                          "subroots": [node_ids[0]]})
            return
        y_root = level_spectra[root_id]
        root_scale = spectrum_scale(y_root)
        if root_scale == 0.0:
            for i in node_ids:
                parent[i] = root_id
            trace.append({"depth": depth, "root": root_id,
                          "clusters": [list(node_ids)], "subroots": [],
                          "note": "root spectrum vanished"})
            return
        eps_abs = params.epsilon * root_scale
        responses = {i: remove_root(level_spectra[i], y_root, eps_abs)
                     for i in node_ids}
        dead = [i for i in node_ids
                if float(np.abs(responses[i].values).max()) == 0.0]
        for i in dead:
            parent[i] = root_id
        active = [i for i in node_ids if i not in set(dead)]
        if not active:
            return
        features, bins = build_features(responses, active, y_root, eps_abs,
                                        params.mode_merge_bins,
                                        params.root_mask_power,
                                        params.amp_transform)
        if adjacency is not None:
            sel = active + [root_id]
            adj_local = adjacency.adjacency[np.ix_(sel, sel)]
            root_local = len(active)
        else:
            adj_local, root_local = None, 0
        rng = np.random.default_rng(seed_seq.spawn(1)[0])
        assign = gibbs_cluster(features, adj_local, root_local, params, rng)
        clusters = [[active[j] for j in members] for members in assign.clusters()]
        entry = {"depth": depth, "root": root_id, "mode_bins": bins,
                 "clusters": [list(c) for c in clusters],
                 "log_joint": assign.log_joint}
        if len(clusters) == 1:
            for i in active:
                parent[i] = root_id
            entry["subroots"] = []
            trace.append(entry)
            return
        subroots = []
        for cluster in clusters:
            sub = select_subroot(cluster, positions[root_id], positions)
            subroots.append(sub)
            parent[sub] = root_id
        entry["subroots"] = subroots
        trace.append(entry)
        for cluster, sub in zip(clusters, subroots):
            rest = [i for i in cluster if i != sub]
            child_spectra = {i: responses[i] for i in cluster}
            recurse(rest, child_spectra, sub, depth + 1)

    recurse(live, {i: spectra[i] for i in range(n)}, root, 0)
    return InferredTree(parent=parent, trace=trace)
