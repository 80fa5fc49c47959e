"""Substep integrator for payload, pads and bases (numba).

Penalty contacts: one-sided normal spring-damper plus a tangential
spring-slider (elastic stick, Coulomb slip). Everything is updated in place
on plain float arrays; :mod:`pinchlift.world` owns the layout.
"""
import numpy as np
from numba import njit

BOX = 0
CYLINDER = 1

# indices into the packed parameter vector
P_K, P_C, P_KT, P_CT, P_MU, P_KG, P_CG, P_MUG, P_PADM, P_KP, P_KD, P_FMAX, P_G, P_VMAX, P_WMAX = range(15)
N_PARAMS = 15

# indices into the stats output
S_PAD_PEN, S_GROUND_PEN, S_CONE, S_SUBSTEPS = range(4)


@njit(cache=True)
def _qrot(q, v):
    w, x, y, z = q[0], q[1], q[2], q[3]
    tx = 2.0 * (y * v[2] - z * v[1])
    ty = 2.0 * (z * v[0] - x * v[2])
    tz = 2.0 * (x * v[1] - y * v[0])
    out = np.empty(3)
    out[0] = v[0] + w * tx + (y * tz - z * ty)
    out[1] = v[1] + w * ty + (z * tx - x * tz)
    out[2] = v[2] + w * tz + (x * ty - y * tx)
    return out


@njit(cache=True)
def _qrot_inv(q, v):
    qc = np.empty(4)
    qc[0] = q[0]
    qc[1] = -q[1]
    qc[2] = -q[2]
    qc[3] = -q[3]
    return _qrot(qc, v)


@njit(cache=True)
def _qmul(a, b):
    out = np.empty(4)
    out[0] = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
    out[1] = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2]
    out[2] = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1]
    out[3] = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]
    return out


@njit(cache=True)
def _cross(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@njit(cache=True)
def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@njit(cache=True)
def _yaw(q):
    return np.arctan2(2.0 * (q[0] * q[3] + q[1] * q[2]), 1.0 - 2.0 * (q[2] * q[2] + q[3] * q[3]))


@njit(cache=True)
def _penetration(shape_id, dims, local):
    """Depth inside the payload and outward body-frame normal (depth <= 0 outside)."""
    n = np.zeros(3)
    if shape_id == BOX:
        best = 1e18
        axis = 0
        for i in range(3):
            d = 0.5 * dims[i] - abs(local[i])
            if d < best:
                best = d
                axis = i
        n[axis] = 1.0 if local[axis] >= 0.0 else -1.0
        return best, n
    # cylinder: axis along body z, dims = (radius, length, _)
    rho = np.sqrt(local[0] * local[0] + local[1] * local[1])
    d_rad = dims[0] - rho
    d_cap = 0.5 * dims[1] - abs(local[2])
    if d_rad < d_cap:
        if rho > 1e-12:
            n[0] = local[0] / rho
            n[1] = local[1] / rho
        else:
            n[0] = 1.0
        return d_rad, n
    n[2] = 1.0 if local[2] >= 0.0 else -1.0
    return d_cap, n


@njit(cache=True)
def _friction(disp, vt, n, fn, kt, ct, mu, dt, cone_stat):
    """Spring-slider tangential force; updates ``disp`` in place."""
    for i in range(3):
        disp[i] += vt[i] * dt
    dn = _dot(disp, n)
    for i in range(3):
        disp[i] -= dn * n[i]
    ft = np.empty(3)
    for i in range(3):
        ft[i] = -kt * disp[i] - ct * vt[i]
    mag = np.sqrt(_dot(ft, ft))
    lim = mu * fn
    if mag > lim:
        if mag > 0.0:
            s = lim / mag
            for i in range(3):
                ft[i] *= s
                disp[i] = -ft[i] / kt
    viol = np.sqrt(_dot(ft, ft)) - lim
    if viol > cone_stat[0]:
        cone_stat[0] = viol
    return ft


@njit(cache=True)
def step_substeps(n_sub, dt,
                  pl_pos, pl_q, pl_vel, pl_omega, pl_mass, pl_inertia, shape_id, dims,
                  ground_pts, ground_disp,
                  base_pos, base_q, base_vel, base_omega, base_cmd, base_tau, base_acc, yaw_acc,
                  pad_pos, pad_vel, pad_q, tgt_pos, tgt_q, pad_disp, corners,
                  params, ext_force,
                  out_fn, out_ft, out_pt, out_n, out_contact, out_servo, out_stats):
    n_rob = base_pos.shape[0]
    n_cor = corners.shape[0]
    n_gnd = ground_pts.shape[0]
    k = params[P_K]
    c = params[P_C]
    kt = params[P_KT]
    ct = params[P_CT]
    mu = params[P_MU]
    kg = params[P_KG]
    cg = params[P_CG]
    mug = params[P_MUG]
    pad_m = params[P_PADM]
    kp = params[P_KP]
    kd = params[P_KD]
    fmax = params[P_FMAX]
    g = params[P_G]
    vmax = params[P_VMAX]
    wmax = params[P_WMAX]

    for r in range(n_rob):
        out_fn[r] = 0.0
        out_contact[r] = 0.0
        for i in range(3):
            out_ft[r, i] = 0.0
            out_pt[r, i] = 0.0
            out_n[r, i] = 0.0
            out_servo[r, i] = 0.0
    cone_stat = np.zeros(1)
    cone_stat[0] = -1e18
    max_pad_pen = 0.0
    max_gnd_pen = 0.0
    inv_sub = 1.0 / n_sub

    force = np.zeros(3)
    torque = np.zeros(3)
    tgt_w = np.zeros(3)
    tgt_v = np.zeros(3)
    for _ in range(n_sub):
        # ---------------- bases: first-order lag with acceleration limits
        for r in range(n_rob):
            cmd_vx = min(max(base_cmd[r, 0], -vmax), vmax)
            cmd_vy = min(max(base_cmd[r, 1], -vmax), vmax)
            cmd_w = min(max(base_cmd[r, 2], -wmax), wmax)
            dvx = (cmd_vx - base_vel[r, 0]) / base_tau[r] * dt
            dvy = (cmd_vy - base_vel[r, 1]) / base_tau[r] * dt
            dmag = np.sqrt(dvx * dvx + dvy * dvy)
            lim = base_acc[r] * dt
            if dmag > lim:
                dvx *= lim / dmag
                dvy *= lim / dmag
            base_vel[r, 0] += dvx
            base_vel[r, 1] += dvy
            dw = (cmd_w - base_omega[r]) / base_tau[r] * dt
            lim_w = yaw_acc * dt
            if dw > lim_w:
                dw = lim_w
            elif dw < -lim_w:
                dw = -lim_w
            base_omega[r] += dw
            yaw = _yaw(base_q[r])
            cy = np.cos(yaw)
            sy = np.sin(yaw)
            base_pos[r, 0] += (cy * base_vel[r, 0] - sy * base_vel[r, 1]) * dt
            base_pos[r, 1] += (sy * base_vel[r, 0] + cy * base_vel[r, 1]) * dt
            half = 0.5 * base_omega[r] * dt
            dq = np.empty(4)
            dq[0] = np.cos(half)
            dq[1] = 0.0
            dq[2] = 0.0
            dq[3] = np.sin(half)
            qn = _qmul(dq, base_q[r])
            nq = np.sqrt(qn[0] ** 2 + qn[1] ** 2 + qn[2] ** 2 + qn[3] ** 2)
            for i in range(4):
                base_q[r, i] = qn[i] / nq

        # ---------------- payload forces
        for i in range(3):
            force[i] = ext_force[i]
            torque[i] = 0.0
        force[2] -= pl_mass * g

        # ground
        for j in range(n_gnd):
            arm = _qrot(pl_q, ground_pts[j])
            x_z = pl_pos[2] + arm[2]
            pen = -x_z
            if pen <= 0.0:
                for i in range(3):
                    ground_disp[j, i] = 0.0
                continue
            if pen > max_gnd_pen:
                max_gnd_pen = pen
            vpt = pl_vel + _cross(pl_omega, arm)
            fn = kg * pen - cg * vpt[2]
            if fn < 0.0:
                fn = 0.0
            nvec = np.zeros(3)
            nvec[2] = 1.0
            vt = vpt.copy()
            vt[2] = 0.0
            # spring-slider written from the payload point's perspective
            ft = _friction(ground_disp[j], vt, nvec, fn, kt, ct, mug, dt, cone_stat)
            f = ft.copy()
            f[2] += fn
            for i in range(3):
                force[i] += f[i]
            tq = _cross(arm, f)
            for i in range(3):
                torque[i] += tq[i]

        # pads
        for r in range(n_rob):
            # servo target in world from the base pose
            ofs = _qrot(base_q[r], tgt_pos[r])
            for i in range(3):
                tgt_w[i] = base_pos[r, i] + ofs[i]
            yaw = _yaw(base_q[r])
            vb = np.zeros(3)
            vb[0] = np.cos(yaw) * base_vel[r, 0] - np.sin(yaw) * base_vel[r, 1]
            vb[1] = np.sin(yaw) * base_vel[r, 0] + np.cos(yaw) * base_vel[r, 1]
            wv = np.zeros(3)
            wv[2] = base_omega[r]
            rot_v = _cross(wv, ofs)
            for i in range(3):
                tgt_v[i] = vb[i] + rot_v[i]
            pq = _qmul(base_q[r], tgt_q[r])
            nq = np.sqrt(pq[0] ** 2 + pq[1] ** 2 + pq[2] ** 2 + pq[3] ** 2)
            for i in range(4):
                pad_q[r, i] = pq[i] / nq

            servo = np.empty(3)
            for i in range(3):
                servo[i] = kp * (tgt_w[i] - pad_pos[r, i]) + kd * (tgt_v[i] - pad_vel[r, i])
            # per-axis saturation in the pad frame
            sl = _qrot_inv(pad_q[r], servo)
            for i in range(3):
                if sl[i] > fmax:
                    sl[i] = fmax
                elif sl[i] < -fmax:
                    sl[i] = -fmax
            servo = _qrot(pad_q[r], sl)

            pad_f = servo.copy()
            fn_sum = 0.0
            touched = 0.0
            for m in range(n_cor):
                cw = _qrot(pad_q[r], corners[m])
                x = np.empty(3)
                for i in range(3):
                    x[i] = pad_pos[r, i] + cw[i]
                rel = x - pl_pos
                local = _qrot_inv(pl_q, rel)
                pen, nl = _penetration(shape_id, dims, local)
                if pen <= 0.0:
                    for i in range(3):
                        pad_disp[r, m, i] = 0.0
                    continue
                touched = 1.0
                if pen > max_pad_pen:
                    max_pad_pen = pen
                nw = _qrot(pl_q, nl)
                vpl = pl_vel + _cross(pl_omega, rel)
                vr = np.empty(3)
                for i in range(3):
                    vr[i] = pad_vel[r, i] - vpl[i]
                vn = _dot(vr, nw)
                fn = k * pen - c * vn
                if fn < 0.0:
                    fn = 0.0
                vt = np.empty(3)
                for i in range(3):
                    vt[i] = vr[i] - vn * nw[i]
                ft = _friction(pad_disp[r, m], vt, nw, fn, kt, ct, mu, dt, cone_stat)
                fpad = np.empty(3)
                for i in range(3):
                    fpad[i] = fn * nw[i] + ft[i]
                    pad_f[i] += fpad[i]
                    force[i] -= fpad[i]
                tq = _cross(rel, fpad)
                for i in range(3):
                    torque[i] -= tq[i]
                fn_sum += fn
                # tick-averaged record (force on the payload)
                out_fn[r] += fn * inv_sub
                for i in range(3):
                    out_ft[r, i] -= ft[i] * inv_sub
                    out_pt[r, i] += fn * x[i]
                    out_n[r, i] += fn * nw[i]
            if touched > 0.0:
                out_contact[r] = 1.0
            for i in range(3):
                out_servo[r, i] += servo[i] * inv_sub
            # pads: semi-implicit Euler, gravity compensated by the arm
            for i in range(3):
                pad_vel[r, i] += pad_f[i] / pad_m * dt
                pad_pos[r, i] += pad_vel[r, i] * dt

        # ---------------- payload integration
        Rw = np.empty((3, 3))
        for j in range(3):
            e = np.zeros(3)
            e[j] = 1.0
            col = _qrot(pl_q, e)
            for i in range(3):
                Rw[i, j] = col[i]
        Iw = Rw @ np.diag(pl_inertia) @ Rw.T
        Lw = Iw @ pl_omega
        rhs = torque - _cross(pl_omega, Lw)
        alpha = np.linalg.solve(Iw, rhs)
        for i in range(3):
            pl_vel[i] += force[i] / pl_mass * dt
            pl_omega[i] += alpha[i] * dt
            pl_pos[i] += pl_vel[i] * dt
        ang = np.sqrt(_dot(pl_omega, pl_omega)) * dt
        if ang > 1e-15:
            s = np.sin(0.5 * ang) / (ang / dt)
            dq = np.empty(4)
            dq[0] = np.cos(0.5 * ang)
            dq[1] = s * pl_omega[0]
            dq[2] = s * pl_omega[1]
            dq[3] = s * pl_omega[2]
            qn = _qmul(dq, pl_q)
            nq = np.sqrt(qn[0] ** 2 + qn[1] ** 2 + qn[2] ** 2 + qn[3] ** 2)
            for i in range(4):
                pl_q[i] = qn[i] / nq

    # normalize force-weighted record fields
    for r in range(n_rob):
        tot = 0.0
        for i in range(3):
            tot += out_n[r, i] * out_n[r, i]
        wsum = out_fn[r] * n_sub
        if wsum > 0.0:
            for i in range(3):
                out_pt[r, i] /= wsum
            nrm = np.sqrt(tot)
            if nrm > 0.0:
                for i in range(3):
                    out_n[r, i] /= nrm
    out_stats[S_PAD_PEN] = max_pad_pen
    out_stats[S_GROUND_PEN] = max_gnd_pen
    out_stats[S_CONE] = cone_stat[0]
    out_stats[S_SUBSTEPS] = n_sub
