"""Nonlinear dynamics of the rigid-link tree and its linearization.

The per-step unknown vector stacks, per branch: angular acceleration of the
deviation angle, junction force on the parent, center-of-mass acceleration,
base-junction acceleration, and total angular acceleration:

    u = [thdd (n) | r (2n) | a (2n) | a_o (2n) | wd (n)],  dim = 8n

Equations, in row order (c_i = cos phi_i, s_i = sin phi_i, phi_i the absolute
branch angle, w_i the absolute angular velocity, x_i = (l_i/2) n(phi_i)):

    Newton      m_i a_i + r_i - sum_c r_c               = m_i g_vec
    rotation    I_ci wd_i - (l_i/2) n_i x (r_i + sum_c r_c)
                                                         = -k_i th_i + P_i
                                                           + sum_c (k_c th_c - P_c)
    center      a_i - a_o_i - wd_i perp(x_i)            = -w_i^2 x_i
    chain       wd_i - sum_{j in path(i)} thdd_j        = 0
    junction    a_o_i - a_o_p - wd_p perp(h_i)          = -w_p^2 h_i   (h_i = l_p n_p)
                a_o_root                                 = anchor acceleration

P_i is the constant preload torque of the spring at joint i, chosen so the
declared rest shape is an exact equilibrium under gravity (the spring is
pre-wound to carry the static subtree weight).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg

from . import _fastpath
from .errors import (
    DegenerateEnergy,
    InvalidForcing,
    NonFiniteState,
    NonPositiveMode,
    ParseError,
    SingularSystem,
)
from .model import TreeModel, direction, perp, static_bases, static_positions


@dataclass
class SimState:
    t: float
    theta: np.ndarray      # (n,) deviation angles, rad
    theta_dot: np.ndarray  # (n,) rad/s

    def copy(self) -> "SimState":
        return SimState(self.t, self.theta.copy(), self.theta_dot.copy())


@dataclass
class ForcingSignal:
    """Prescribed 2D displacement of the root anchor, fixed sample rate."""

    displacement: np.ndarray  # (m, 2)
    sample_rate_hz: float

    def __post_init__(self):
        d = np.asarray(self.displacement, dtype=float)
        if d.ndim != 2 or d.shape[1] != 2 or d.shape[0] < 3:
            raise InvalidForcing("forcing needs shape (m, 2) with m >= 3")
        if not np.all(np.isfinite(d)):
            raise InvalidForcing("forcing contains non-finite samples")
        scale = max(np.abs(d).max(), 1e-30)
        vel = np.diff(d, axis=0)
        vel_scale = max(np.abs(vel).max(), 1e-30)
        if np.abs(d[0]).max() > 1e-9 * scale or np.abs(vel[0]).max() > 1e-3 * vel_scale:
            raise InvalidForcing("forcing must start at zero displacement and velocity")
        self.displacement = d

    def on_grid(self, dt: float, n_steps: int) -> tuple[np.ndarray, np.ndarray]:
        """Displacement and acceleration at integration steps 0..n_steps."""
        rate = 1.0 / dt
        ratio = rate / self.sample_rate_hz
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise InvalidForcing(
                f"forcing rate {self.sample_rate_hz} Hz is not an integer divisor "
                f"of the integration rate {rate} Hz"
            )
        ratio = int(round(ratio))
        if ratio == 1:
            disp = self.displacement
        else:
            from scipy.interpolate import CubicSpline

            t_src = np.arange(self.displacement.shape[0]) / self.sample_rate_hz
            t_dst = np.arange(int((self.displacement.shape[0] - 1) * ratio) + 1) * dt
            disp = CubicSpline(t_src, self.displacement, axis=0, bc_type="natural")(t_dst)
        if disp.shape[0] < n_steps + 1:
            raise InvalidForcing(
                f"forcing covers {disp.shape[0]} steps, need {n_steps + 1}"
            )
        disp = np.ascontiguousarray(disp[: n_steps + 1])
        acc = np.zeros_like(disp)
        acc[1:-1] = (disp[2:] - 2 * disp[1:-1] + disp[:-2]) / dt**2
        acc[0] = (disp[2] - 2 * disp[1] + disp[0]) / dt**2
        acc[-1] = (disp[-1] - 2 * disp[-2] + disp[-3]) / dt**2
        return disp, acc


@dataclass
class StepWorkspace:
    """Assembled linear system A u = b for one time step."""

    matrix: np.ndarray
    rhs: np.ndarray
    n_branches: int

    def solve(self) -> np.ndarray:
        try:
            return np.linalg.solve(self.matrix, self.rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(str(exc)) from exc

    @property
    def theta_ddot(self) -> np.ndarray:
        return self.solve()[: self.n_branches]


def preload_torques(model: TreeModel) -> np.ndarray:
    """Static spring torques that hold the rest shape against gravity.

    Solved from the rest-state force balance: junction forces equal subtree
    weights, and each joint's preload cancels the gravity torque recursively
    from the leaves up.
    """
    n = model.n_branches
    weight = model.mass.copy()  # becomes total subtree mass
    for i in model.topo_order[::-1]:
        p = model.parent[i]
        if p >= 0:
            weight[p] += weight[i]
    tau = np.zeros(n)
    g = model.gravity
    for i in model.topo_order[::-1]:
        load = weight[i] + sum(weight[c] for c in model.children[i])
        tau[i] = sum(tau[c] for c in model.children[i]) - (
            0.5 * model.length[i] * g * math.sin(model.rest_angle[i]) * load
        )
    return tau


def _absolute_state(model: TreeModel, theta: np.ndarray, theta_dot: np.ndarray):
    """Absolute branch angles and angular velocities (path-accumulated)."""
    n = model.n_branches
    phi = np.empty(n)
    omega = np.empty(n)
    for i in model.topo_order:
        p = model.parent[i]
        phi[i] = theta[i] + (phi[p] if p >= 0 else 0.0)
        omega[i] = theta_dot[i] + (omega[p] if p >= 0 else 0.0)
    phi += model.rest_angle
    return phi, omega


def assemble_step_system(
    model: TreeModel,
    state: SimState,
    anchor_accel: Optional[np.ndarray] = None,
) -> StepWorkspace:
    """Build A u = b whose solution yields the nonlinear angular accelerations."""
    if not (np.all(np.isfinite(state.theta)) and np.all(np.isfinite(state.theta_dot))):
        raise NonFiniteState(0)
    n = model.n_branches
    dim = 8 * n
    a_mat = np.zeros((dim, dim))
    b = np.zeros(dim)
    tau0 = preload_torques(model)
    phi, omega = _absolute_state(model, state.theta, state.theta_dot)
    c, s = np.cos(phi), np.sin(phi)
    half = 0.5 * model.length
    i_center = model.mass * model.length**2 / 12.0
    g_u = -model.gravity
    anchor = np.zeros(2) if anchor_accel is None else np.asarray(anchor_accel, float)

    col_r = lambda i: n + 2 * i
    col_a = lambda i: 3 * n + 2 * i
    col_ao = lambda i: 5 * n + 2 * i
    col_wd = lambda i: 7 * n + i

    for i in range(n):
        m_i, k_i, th_i = model.mass[i], model.stiffness[i], state.theta[i]
        # Newton rows
        for d in range(2):
            row = 2 * i + d
            a_mat[row, col_a(i) + d] = m_i
            a_mat[row, col_r(i) + d] = 1.0
            for ch in model.children[i]:
                a_mat[row, col_r(ch) + d] = -1.0
        b[2 * i] = m_i * g_u
        # rotation row
        row = 2 * n + i
        a_mat[row, col_wd(i)] = i_center[i]
        for j in [i] + model.children[i]:
            a_mat[row, col_r(j)] = half[i] * s[i]
            a_mat[row, col_r(j) + 1] = -half[i] * c[i]
        b[row] = -k_i * th_i + tau0[i] + sum(
            model.stiffness[ch] * state.theta[ch] - tau0[ch] for ch in model.children[i]
        )
        # center kinematics rows
        xu, xv = half[i] * c[i], half[i] * s[i]
        row = 3 * n + 2 * i
        a_mat[row, col_a(i)] = 1.0
        a_mat[row, col_ao(i)] = -1.0
        a_mat[row, col_wd(i)] = xv
        b[row] = -omega[i] ** 2 * xu
        a_mat[row + 1, col_a(i) + 1] = 1.0
        a_mat[row + 1, col_ao(i) + 1] = -1.0
        a_mat[row + 1, col_wd(i)] = -xu
        b[row + 1] = -omega[i] ** 2 * xv
        # angular-acceleration chain row
        row = 5 * n + i
        a_mat[row, col_wd(i)] = 1.0
        for j in model.paths[i]:
            a_mat[row, j] = -1.0
        # junction rows
        row = 6 * n + 2 * i
        p = model.parent[i]
        if p < 0:
            a_mat[row, col_ao(i)] = 1.0
            a_mat[row + 1, col_ao(i) + 1] = 1.0
            b[row], b[row + 1] = anchor[0], anchor[1]
        else:
            hu, hv = model.length[p] * c[p], model.length[p] * s[p]
            a_mat[row, col_ao(i)] = 1.0
            a_mat[row, col_ao(p)] = -1.0
            a_mat[row, col_wd(p)] = hv
            b[row] = -omega[p] ** 2 * hu
            a_mat[row + 1, col_ao(i) + 1] = 1.0
            a_mat[row + 1, col_ao(p) + 1] = -1.0
            a_mat[row + 1, col_wd(p)] = -hu
            b[row + 1] = -omega[p] ** 2 * hv
    return StepWorkspace(a_mat, b, n)


def total_energy(model: TreeModel, state: SimState) -> float:
    """Kinetic + elastic + gravitational energy (anchor at rest).

    The elastic part includes the preload work term, so the sum is the
    conserved quantity of the free dynamics; at zero deviation it reduces to
    the rest gravitational potential.
    """
    n = model.n_branches
    phi, omega = _absolute_state(model, state.theta, state.theta_dot)
    nvec = direction(phi)
    tau0 = preload_torques(model)
    base = np.zeros((n, 2))
    vbase = np.zeros((n, 2))
    tips = np.zeros((n, 2))
    vtips = np.zeros((n, 2))
    for i in model.topo_order:
        p = model.parent[i]
        if p >= 0:
            base[i], vbase[i] = tips[p], vtips[p]
        seg = model.length[i] * nvec[i]
        tips[i] = base[i] + seg
        vtips[i] = vbase[i] + omega[i] * perp(seg)
    vc = vbase + omega[:, None] * perp(0.5 * model.length[:, None] * nvec)
    h_c = base[:, 0] + 0.5 * model.length * nvec[:, 0]
    i_center = model.mass * model.length**2 / 12.0
    kinetic = 0.5 * np.sum(model.mass * np.sum(vc**2, axis=1)) + 0.5 * np.sum(
        i_center * omega**2
    )
    elastic = 0.5 * np.sum(model.stiffness * state.theta**2) - np.sum(tau0 * state.theta)
    grav = model.gravity * np.sum(model.mass * h_c)
    return float(kinetic + elastic + grav)


def step(model: TreeModel, state: SimState, dt: float,
         anchor_accel: Optional[np.ndarray] = None) -> SimState:
    """One explicit Euler step of the nonlinear dynamics."""
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    thdd = assemble_step_system(model, state, anchor_accel).theta_ddot
    return SimState(
        state.t + dt,
        state.theta + state.theta_dot * dt,
        state.theta_dot + thdd * dt,
    )


def rescale_energy(model: TreeModel, state: SimState, e0: float) -> SimState:
    """Scale the deviation (theta, theta_dot) so total energy returns to e0.

    Triggered only when the current energy exceeds e0; otherwise the state is
    returned unchanged. A single multiplicative factor is solved by 1D
    root finding on the energy function.
    """
    e = total_energy(model, state)
    if e <= e0:
        return state

    def f(scale: float) -> float:
        return total_energy(
            model, SimState(state.t, scale * state.theta, scale * state.theta_dot)
        ) - e0

    if np.all(state.theta == 0.0) and np.all(state.theta_dot == 0.0):
        raise DegenerateEnergy(f"energy {e} exceeds target {e0} with zero deviation")
    if f(0.0) > 0:
        raise DegenerateEnergy(f"target energy {e0} is below the rest potential")
    tol = 1e-12 * max(1.0, abs(e0))
    lo, hi = 0.0, 1.0
    sc = 1.0
    for _ in range(200):
        val = f(sc)
        if abs(val) <= tol:
            break
        if val > 0:
            hi = sc
        else:
            lo = sc
        h = 1e-8 * max(sc, 1e-3)
        slope = (f(sc + h) - val) / h
        nxt = sc - val / slope if slope > 0 else 0.5 * (lo + hi)
        sc = nxt if lo < nxt < hi else 0.5 * (lo + hi)
        if hi - lo < 1e-16:
            break
    return SimState(state.t, sc * state.theta, sc * state.theta_dot)


# trajectories ---------------------------------------------------------

@dataclass
class Trajectory:
    """Per-node 2D displacement from rest, sampled at a fixed rate."""

    t: np.ndarray          # (n_samples,)
    y: np.ndarray          # (n_samples, n_nodes, 2)
    sample_rate_hz: float
    source: str = "simulation"

    @property
    def node_count(self) -> int:
        return self.y.shape[1]

    def node_xy(self, i: int) -> np.ndarray:
        return self.y[:, i, :]

    def save(self, path: str | Path) -> None:
        path = Path(path)
        header = ["t"]
        for i in range(self.node_count):
            header += [f"node{i}_x", f"node{i}_y"]
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            flat = self.y.reshape(self.y.shape[0], -1)
            for k in range(self.t.shape[0]):
                writer.writerow([repr(float(self.t[k]))] +
                                [repr(float(v)) for v in flat[k]])
        meta = {
            "sample_rate_hz": self.sample_rate_hz,
            "node_count": self.node_count,
            "source": self.source,
        }
        path.with_suffix(path.suffix + ".meta.json").write_text(
            json.dumps(meta, indent=2) + "\n"
        )

    @classmethod
    def load(cls, path: str | Path) -> "Trajectory":
        path = Path(path)
        try:
            with path.open() as fh:
                rows = list(csv.reader(fh))
        except OSError as exc:
            raise ParseError(f"cannot read trajectory {path}: {exc}") from exc
        if len(rows) < 2 or not rows[0] or rows[0][0] != "t":
            raise ParseError(f"{path}: not a trajectory CSV")
        n_nodes = (len(rows[0]) - 1) // 2
        data = np.array([[float(v) for v in row] for row in rows[1:]])
        meta_path = path.with_suffix(path.suffix + ".meta.json")
        if meta_path.exists():
            meta = json.loads(meta_path.read_text())
            rate = float(meta["sample_rate_hz"])
            source = str(meta.get("source", "file"))
        else:
            dt = np.diff(data[:, 0])
            rate = 1.0 / float(np.median(dt))
            source = "file"
        return cls(
            t=data[:, 0],
            y=data[:, 1:].reshape(-1, n_nodes, 2),
            sample_rate_hz=rate,
            source=source,
        )


@dataclass
class SimulationResult:
    trajectory: Trajectory
    final_state: SimState
    max_abs_theta: float
    n_rescales: int
    energy_initial: float
    energy_final: float
    energy_max_drift: float
    theta_samples: np.ndarray = field(default=None, repr=False)  # (n_samples, n)


def _tip_displacements(model: TreeModel, theta: np.ndarray,
                       anchor_disp: np.ndarray, static_tips: np.ndarray) -> np.ndarray:
    phi, _ = _absolute_state(model, theta, np.zeros_like(theta))
    nvec = direction(phi)
    tips = np.zeros((model.n_branches, 2))
    for i in model.topo_order:
        p = model.parent[i]
        base = tips[p] if p >= 0 else anchor_disp
        tips[i] = base + model.length[i] * nvec[i]
    return tips - static_tips


def simulate(
    model: TreeModel,
    init: SimState,
    dt: float,
    n_steps: int,
    out_rate_hz: float = 24.0,
    rescale_every: Optional[int] = 1,
    forcing: Optional[ForcingSignal] = None,
    use_fastpath: bool = True,
) -> SimulationResult:
    """Integrate the nonlinear dynamics and sample node displacements.

    Energy rescaling applies to free vibration only; with a forcing signal
    the anchor pumps energy into the system, so rescaling is skipped.
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    decim = 1.0 / (dt * out_rate_hz)
    if abs(decim - round(decim)) > 1e-6 or round(decim) < 1:
        raise ValueError(
            f"output rate {out_rate_hz} Hz must divide the integration rate {1/dt} Hz"
        )
    decim = int(round(decim))
    if forcing is not None:
        disp, acc = forcing.on_grid(dt, n_steps)
        rescale = 0
    else:
        disp = np.zeros((1, 2))
        acc = np.zeros((1, 2))
        rescale = 0 if not rescale_every else int(rescale_every)
    static_tips = static_positions(model).tips

    runner = _fastpath.run_simulation if (use_fastpath and _fastpath.HAVE_NUMBA) \
        else _run_python
    out = runner(model, init.theta.astype(float).copy(),
                 init.theta_dot.astype(float).copy(), dt, n_steps, decim,
                 rescale, disp, acc, forcing is not None, static_tips)
    (y, theta_hist, theta_max, n_rescales, e0, e_last, max_drift,
     err_step, theta_f, thetadot_f) = out
    if err_step >= 0:
        raise NonFiniteState(err_step)
    n_samp = y.shape[0]
    t = init.t + np.arange(n_samp) * (decim * dt)
    traj = Trajectory(t=t, y=y, sample_rate_hz=out_rate_hz)
    final = SimState(init.t + n_steps * dt, theta_f, thetadot_f)
    return SimulationResult(
        trajectory=traj,
        final_state=final,
        max_abs_theta=theta_max,
        n_rescales=n_rescales,
        energy_initial=e0,
        energy_final=e_last,
        energy_max_drift=max_drift,
        theta_samples=theta_hist,
    )


def _run_python(model, theta, thetadot, dt, n_steps, decim, rescale_every,
                disp, acc, use_forcing, static_tips):
    """Reference integration loop; semantics mirror the numba fast path."""
    n = model.n_branches
    n_samp = n_steps // decim + 1
    y = np.zeros((n_samp, n, 2))
    theta_hist = np.zeros((n_samp, n))
    state = SimState(0.0, theta, thetadot)
    e0 = total_energy(model, state) if rescale_every else 0.0
    e_last = e0
    max_drift = 0.0
    trig = 1e-13 * max(1.0, abs(e0))
    zero2 = np.zeros(2)
    y[0] = _tip_displacements(model, state.theta,
                              disp[0] if use_forcing else zero2, static_tips)
    theta_hist[0] = state.theta
    theta_max = float(np.abs(state.theta).max())
    n_rescales = 0
    for k in range(n_steps):
        anchor = acc[k] if use_forcing else None
        state = step(model, state, dt, anchor)
        scale = max(np.abs(state.theta).max(), np.abs(state.theta_dot).max())
        if not (np.all(np.isfinite(state.theta))
                and np.all(np.isfinite(state.theta_dot)) and scale < 1e100):
            return (y, theta_hist, theta_max, n_rescales, e0, e_last, max_drift,
                    k + 1, state.theta, state.theta_dot)
        theta_max = max(theta_max, float(np.abs(state.theta).max()))
        if rescale_every and (k + 1) % rescale_every == 0:
            e = total_energy(model, state)
            max_drift = max(max_drift, abs(e - e0))
            if e > e0 + trig:
                state = rescale_energy(model, state, e0)
                n_rescales += 1
                e_last = total_energy(model, state)
            else:
                e_last = e
        if (k + 1) % decim == 0:
            idx = (k + 1) // decim
            y[idx] = _tip_displacements(
                model, state.theta, disp[k + 1] if use_forcing else zero2, static_tips
            )
            theta_hist[idx] = state.theta
    return (y, theta_hist, theta_max, n_rescales, e0, e_last, max_drift, -1,
            state.theta, state.theta_dot)


# linearization --------------------------------------------------------

@dataclass
class LinearSystem:
    """Small-oscillation model M thdd + K th = 0 plus the node-shift form."""

    m: np.ndarray       # (n, n) mass matrix over deviation angles
    k: np.ndarray       # (n, n) stiffness matrix
    n_mat: np.ndarray   # (2n, 2n) over stacked node shifts
    l_mat: np.ndarray   # (2n, 2n)


def linearize(model: TreeModel) -> LinearSystem:
    """Exact small-oscillation matrices from the rest geometry.

    M comes from the kinetic energy quadratic form (center-of-mass velocity
    Jacobians plus rotary inertia); K is the spring diagonal plus the gravity
    Hessian of the potential. This route is independent of the step-system
    elimination, which the tests exploit as a cross-check.
    """
    n = model.n_branches
    geo = static_positions(model)
    tips = geo.tips
    bases = static_bases(model)
    centers = bases + 0.5 * model.length[:, None] * direction(model.rest_angle)
    i_center = model.mass * model.length**2 / 12.0
    g = model.gravity

    m_mat = np.zeros((n, n))
    k_mat = np.diag(model.stiffness).astype(float)
    g_jac = np.zeros((2 * n, n))
    for i in range(n):
        path = model.paths[i]
        jac = np.zeros((2, n))
        for j in path:
            jac[:, j] = perp(centers[i] - bases[j])
            g_jac[2 * i : 2 * i + 2, j] = perp(tips[i] - bases[j])
        w = np.zeros(n)
        w[path] = 1.0
        m_mat += model.mass[i] * jac.T @ jac + i_center[i] * np.outer(w, w)
        # gravity Hessian: d2(height of center i)/dth_j dth_l = -(c_i - b_deeper)_up
        for a_idx, j in enumerate(path):
            for b_idx, l in enumerate(path):
                deeper = path[max(a_idx, b_idx)]
                k_mat[j, l] -= model.mass[i] * g * (centers[i] - bases[deeper])[0]
    try:
        scipy.linalg.cho_factor(m_mat)
    except scipy.linalg.LinAlgError as exc:
        raise SingularSystem(f"mass matrix is not positive definite: {exc}") from exc
    g_pinv = np.linalg.pinv(g_jac)
    n_mat = g_jac @ m_mat @ g_pinv
    l_mat = g_jac @ k_mat @ g_pinv
    return LinearSystem(m=m_mat, k=k_mat, n_mat=n_mat, l_mat=l_mat)


@dataclass
class Mode:
    frequency_hz: float
    shape: np.ndarray  # (n,), unit norm, first significant entry positive


def modal_analysis(sys: LinearSystem) -> list[Mode]:
    """Natural frequencies and mode shapes of K v = w^2 M v, ascending."""
    try:
        w, v = scipy.linalg.eigh(sys.k, sys.m)
    except scipy.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    bad = w[w < -1e-10]
    if bad.size:
        raise NonPositiveMode(bad)
    w = np.clip(w, 0.0, None)
    modes = []
    for idx in range(w.size):
        shape = v[:, idx]
        shape = shape / np.linalg.norm(shape)
        nonzero = np.nonzero(np.abs(shape) > 1e-12)[0]
        if nonzero.size and shape[nonzero[0]] < 0:
            shape = -shape
        modes.append(Mode(frequency_hz=math.sqrt(w[idx]) / (2 * math.pi), shape=shape))
    return modes
