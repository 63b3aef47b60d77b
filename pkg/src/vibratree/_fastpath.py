"""Numba-compiled integration loop.

Semantics mirror ``simulator._run_python`` exactly; the constant structure of
the step system is assembled once in Python (via ``assemble_step_system``)
and only state-dependent entries are rewritten per step. Falls back cleanly
when numba is unavailable (``HAVE_NUMBA`` is False and the simulator uses the
reference loop).
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap if not (args and callable(args[0])) else args[0]


@njit(cache=True)
def _energy(topo, parent, mass, length, stiffness, rest, tau0, icenter, g,
            theta, thetadot, phi, omega, tipx, tipy, vtx, vty):
    n = parent.shape[0]
    for idx in range(n):
        i = topo[idx]
        p = parent[i]
        if p >= 0:
            phi[i] = theta[i] + phi[p]
            omega[i] = thetadot[i] + omega[p]
        else:
            phi[i] = theta[i]
            omega[i] = thetadot[i]
    e = 0.0
    for idx in range(n):
        i = topo[idx]
        p = parent[i]
        if p >= 0:
            bx, by, vx, vy = tipx[p], tipy[p], vtx[p], vty[p]
        else:
            bx = by = vx = vy = 0.0
        ang = phi[i] + rest[i]
        c, s = math.cos(ang), math.sin(ang)
        segx, segy = length[i] * c, length[i] * s
        tipx[i] = bx + segx
        tipy[i] = by + segy
        vtx[i] = vx - omega[i] * segy
        vty[i] = vy + omega[i] * segx
        vcx = vx - omega[i] * 0.5 * segy
        vcy = vy + omega[i] * 0.5 * segx
        e += 0.5 * mass[i] * (vcx * vcx + vcy * vcy)
        e += 0.5 * icenter[i] * omega[i] * omega[i]
        e += 0.5 * stiffness[i] * theta[i] * theta[i] - tau0[i] * theta[i]
        e += mass[i] * g * (bx + 0.5 * segx)
    return e


@njit(cache=True)
def _energy_scaled(scale, topo, parent, mass, length, stiffness, rest, tau0,
                   icenter, g, theta, thetadot, th_s, td_s,
                   phi, omega, tipx, tipy, vtx, vty):
    for i in range(parent.shape[0]):
        th_s[i] = scale * theta[i]
        td_s[i] = scale * thetadot[i]
    return _energy(topo, parent, mass, length, stiffness, rest, tau0, icenter,
                   g, th_s, td_s, phi, omega, tipx, tipy, vtx, vty)


@njit(cache=True)
def _sample(out, theta, topo, parent, length, rest, static_tips,
            anchor_x, anchor_y, phi, tipx, tipy):
    n = parent.shape[0]
    for idx in range(n):
        i = topo[idx]
        p = parent[i]
        phi[i] = theta[i] + (phi[p] if p >= 0 else 0.0)
        bx = tipx[p] if p >= 0 else anchor_x
        by = tipy[p] if p >= 0 else anchor_y
        ang = phi[i] + rest[i]
        tipx[i] = bx + length[i] * math.cos(ang)
        tipy[i] = by + length[i] * math.sin(ang)
        out[i, 0] = tipx[i] - static_tips[i, 0]
        out[i, 1] = tipy[i] - static_tips[i, 1]


@njit(cache=True)
def _kernel(parent, topo, child_ptr, child_idx, root,
            mass, length, stiffness, rest, tau0, icenter, g,
            a_mat, b, theta, thetadot, dt, n_steps, decim, rescale_every,
            disp, acc, use_forcing, static_tips):
    n = parent.shape[0]
    n_samp = n_steps // decim + 1
    y = np.zeros((n_samp, n, 2))
    theta_hist = np.zeros((n_samp, n))
    cth = np.empty(n)
    omega = np.empty(n)
    phi = np.empty(n)
    om_s = np.empty(n)
    tipx = np.empty(n)
    tipy = np.empty(n)
    vtx = np.empty(n)
    vty = np.empty(n)
    th_s = np.empty(n)
    td_s = np.empty(n)

    e0 = 0.0
    if rescale_every > 0:
        e0 = _energy(topo, parent, mass, length, stiffness, rest, tau0, icenter,
                     g, theta, thetadot, phi, om_s, tipx, tipy, vtx, vty)
    e_last = e0
    max_drift = 0.0
    tol = 1e-12 * max(1.0, abs(e0))
    trig = 1e-13 * max(1.0, abs(e0))

    ax0 = disp[0, 0] if use_forcing else 0.0
    ay0 = disp[0, 1] if use_forcing else 0.0
    _sample(y[0], theta, topo, parent, length, rest, static_tips,
            ax0, ay0, phi, tipx, tipy)
    theta_hist[0] = theta
    theta_max = 0.0
    for i in range(n):
        theta_max = max(theta_max, abs(theta[i]))
    n_rescales = 0
    err_code = 0
    err_step = -1

    for k_step in range(n_steps):
        for idx in range(n):
            i = topo[idx]
            p = parent[i]
            if p >= 0:
                cth[i] = theta[i] + cth[p]
                omega[i] = thetadot[i] + omega[p]
            else:
                cth[i] = theta[i]
                omega[i] = thetadot[i]
        for i in range(n):
            ang = rest[i] + cth[i]
            c, s = math.cos(ang), math.sin(ang)
            hl = 0.5 * length[i]
            w2 = omega[i] * omega[i]
            rrow = 2 * n + i
            a_mat[rrow, n + 2 * i] = hl * s
            a_mat[rrow, n + 2 * i + 1] = -hl * c
            spring = -stiffness[i] * theta[i] + tau0[i]
            for cc in range(child_ptr[i], child_ptr[i + 1]):
                ch = child_idx[cc]
                a_mat[rrow, n + 2 * ch] = hl * s
                a_mat[rrow, n + 2 * ch + 1] = -hl * c
                spring += stiffness[ch] * theta[ch] - tau0[ch]
                jrow = 6 * n + 2 * ch
                a_mat[jrow, 7 * n + i] = length[i] * s
                a_mat[jrow + 1, 7 * n + i] = -length[i] * c
                b[jrow] = -w2 * length[i] * c
                b[jrow + 1] = -w2 * length[i] * s
            b[rrow] = spring
            crow = 3 * n + 2 * i
            a_mat[crow, 7 * n + i] = hl * s
            a_mat[crow + 1, 7 * n + i] = -hl * c
            b[crow] = -w2 * hl * c
            b[crow + 1] = -w2 * hl * s
        if use_forcing:
            b[6 * n + 2 * root] = acc[k_step, 0]
            b[6 * n + 2 * root + 1] = acc[k_step, 1]

        u = np.linalg.solve(a_mat, b)

        finite = True
        for i in range(n):
            theta[i] = theta[i] + thetadot[i] * dt
            thetadot[i] = thetadot[i] + u[i] * dt
            # magnitude bound keeps omega^2 from overflowing next assembly
            if not (math.isfinite(theta[i]) and math.isfinite(thetadot[i])
                    and abs(theta[i]) < 1e100 and abs(thetadot[i]) < 1e100):
                finite = False
        if not finite:
            err_code = 1
            err_step = k_step + 1
            break
        for i in range(n):
            if abs(theta[i]) > theta_max:
                theta_max = abs(theta[i])

        if rescale_every > 0 and (k_step + 1) % rescale_every == 0:
            e = _energy(topo, parent, mass, length, stiffness, rest, tau0,
                        icenter, g, theta, thetadot, phi, om_s,
                        tipx, tipy, vtx, vty)
            drift = abs(e - e0)
            if drift > max_drift:
                max_drift = drift
            if e > e0 + trig:
                f0 = _energy_scaled(0.0, topo, parent, mass, length, stiffness,
                                    rest, tau0, icenter, g, theta, thetadot,
                                    th_s, td_s, phi, om_s, tipx, tipy, vtx, vty) - e0
                if f0 > 0:
                    err_code = 2
                    err_step = k_step + 1
                    break
                lo, hi, sc = 0.0, 1.0, 1.0
                val = e - e0
                for _ in range(200):
                    if abs(val) <= tol:
                        break
                    if val > 0:
                        hi = sc
                    else:
                        lo = sc
                    h = 1e-8 * max(sc, 1e-3)
                    f_h = _energy_scaled(sc + h, topo, parent, mass, length,
                                         stiffness, rest, tau0, icenter, g,
                                         theta, thetadot, th_s, td_s,
                                         phi, om_s, tipx, tipy, vtx, vty) - e0
                    slope = (f_h - val) / h
                    nxt = sc - val / slope if slope > 0 else 0.5 * (lo + hi)
                    if not (lo < nxt < hi):
                        nxt = 0.5 * (lo + hi)
                    sc = nxt
                    val = _energy_scaled(sc, topo, parent, mass, length,
                                         stiffness, rest, tau0, icenter, g,
                                         theta, thetadot, th_s, td_s,
                                         phi, om_s, tipx, tipy, vtx, vty) - e0
                    if hi - lo < 1e-16:
                        break
                for i in range(n):
                    theta[i] *= sc
                    thetadot[i] *= sc
                n_rescales += 1
                e_last = val + e0
            else:
                e_last = e

        if (k_step + 1) % decim == 0:
            idx_s = (k_step + 1) // decim
            axk = disp[k_step + 1, 0] if use_forcing else 0.0
            ayk = disp[k_step + 1, 1] if use_forcing else 0.0
            _sample(y[idx_s], theta, topo, parent, length, rest, static_tips,
                    axk, ayk, phi, tipx, tipy)
            theta_hist[idx_s] = theta

    return (y, theta_hist, theta_max, n_rescales, e0, e_last, max_drift,
            err_code, err_step, theta, thetadot)


def run_simulation(model, theta, thetadot, dt, n_steps, decim, rescale_every,
                   disp, acc, use_forcing, static_tips):
    """Python wrapper: build the constant system, run the jitted loop."""
    from .errors import DegenerateEnergy, SingularSystem
    from .simulator import SimState, assemble_step_system, preload_torques

    ws = assemble_step_system(model, SimState(0.0, theta, thetadot))
    tau0 = preload_torques(model)
    n = model.n_branches
    child_idx = np.array(
        [c for i in range(n) for c in model.children[i]], dtype=np.int64
    )
    counts = np.array([len(model.children[i]) for i in range(n)], dtype=np.int64)
    child_ptr = np.zeros(n + 1, dtype=np.int64)
    child_ptr[1:] = np.cumsum(counts)
    i_center = model.mass * model.length**2 / 12.0
    try:
        out = _kernel(
            model.parent, model.topo_order, child_ptr, child_idx,
            np.int64(model.root_index),
            model.mass, model.length, model.stiffness, model.rest_angle,
            tau0, i_center, float(model.gravity),
            ws.matrix, ws.rhs, theta, thetadot,
            float(dt), np.int64(n_steps), np.int64(decim),
            np.int64(rescale_every),
            np.ascontiguousarray(disp), np.ascontiguousarray(acc),
            bool(use_forcing), np.ascontiguousarray(static_tips),
        )
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    (y, theta_hist, theta_max, n_rescales, e0, e_last, max_drift,
     err_code, err_step, theta_f, thetadot_f) = out
    if err_code == 2:
        raise DegenerateEnergy("energy target below rest potential during rescale")
    return (y, theta_hist, theta_max, n_rescales, e0, e_last, max_drift,
            -1 if err_code == 0 else err_step, theta_f, thetadot_f)
