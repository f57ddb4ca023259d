"""Numba kernels shared by geometry, dynamics, deposition and entanglement.

Units inside the kernels are mm, g, s. Forces therefore come out in
g*mm/s^2 (1e-6 N) and energies in g*mm^2/s^2 (1e-9 J).
"""

from __future__ import annotations

import numpy as np
from numba import njit

EPS = 1e-12


@njit(cache=True)
def clamp01(x):
    if x < 0.0:
        return 0.0
    if x > 1.0:
        return 1.0
    return x


@njit(cache=True)
def _ss_closest(p0x, p0y, p0z, p1x, p1y, p1z, q0x, q0y, q0z, q1x, q1y, q1z):
    d1x = p1x - p0x
    d1y = p1y - p0y
    d1z = p1z - p0z
    d2x = q1x - q0x
    d2y = q1y - q0y
    d2z = q1z - q0z
    rx = p0x - q0x
    ry = p0y - q0y
    rz = p0z - q0z
    a = d1x * d1x + d1y * d1y + d1z * d1z
    e = d2x * d2x + d2y * d2y + d2z * d2z
    f = d2x * rx + d2y * ry + d2z * rz
    s = 0.0
    t = 0.0
    if a <= EPS and e <= EPS:
        s = 0.0
        t = 0.0
    elif a <= EPS:
        s = 0.0
        t = clamp01(f / e)
    else:
        c = d1x * rx + d1y * ry + d1z * rz
        if e <= EPS:
            t = 0.0
            s = clamp01(-c / a)
        else:
            b = d1x * d2x + d1y * d2y + d1z * d2z
            denom = a * e - b * b
            if denom > 1e-12 * a * e:
                s = clamp01((b * f - c * e) / denom)
            else:
                # parallel: pick the middle of the overlapping interval
                t0 = clamp01(f / e)
                t1 = clamp01((f + b) / e)
                tm = 0.5 * (t0 + t1)
                s = clamp01((b * tm - c) / a)
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = clamp01(-c / a)
            elif t > 1.0:
                t = 1.0
                s = clamp01((b - c) / a)
    cx = p0x + d1x * s - (q0x + d2x * t)
    cy = p0y + d1y * s - (q0y + d2y * t)
    cz = p0z + d1z * s - (q0z + d2z * t)
    return s, t, cx * cx + cy * cy + cz * cz


@njit(cache=True)
def _ps_closest(px, py, pz, q0x, q0y, q0z, q1x, q1y, q1z):
    """Closest point on segment q0q1 to p, and the squared distance."""
    ux = q1x - q0x
    uy = q1y - q0y
    uz = q1z - q0z
    uu = ux * ux + uy * uy + uz * uz
    t = 0.0
    if uu > EPS:
        t = clamp01(((px - q0x) * ux + (py - q0y) * uy + (pz - q0z) * uz) / uu)
    cx = q0x + t * ux
    cy = q0y + t * uy
    cz = q0z + t * uz
    dx = px - cx
    dy = py - cy
    dz = pz - cz
    return cx, cy, cz, dx * dx + dy * dy + dz * dz


@njit(cache=True)
def seg_seg_closest(p0, p1, q0, q1):
    """Closest points between segments p0p1 and q0q1.

    Returns (s, t, squared distance). Degenerate segments (points) are handled;
    for parallel overlapping segments the middle of the overlap is returned.
    """
    return _ss_closest(p0[0], p0[1], p0[2], p1[0], p1[1], p1[2], q0[0], q0[1], q0[2], q1[0], q1[1], q1[2])


@njit(cache=True)
def seg_seg_dist(p0, p1, q0, q1):
    s, t, d2 = seg_seg_closest(p0, p1, q0, q1)
    return np.sqrt(d2)


@njit(cache=True)
def min_capsule_distance(a0, a1, ra, b0, b1, rb):
    """Minimum surface distance between two capsule sets (arrays of endpoints)."""
    best = 1e300
    for i in range(a0.shape[0]):
        for j in range(b0.shape[0]):
            d = seg_seg_dist(a0[i], a1[i], b0[j], b1[j]) - ra[i] - rb[j]
            if d < best:
                best = d
    return best


@njit(cache=True)
def min_capsule_distance_shifted(a0, a1, ra, b0, b1, rb, shift):
    best = 1e300
    q0 = np.empty(3)
    q1 = np.empty(3)
    for j in range(b0.shape[0]):
        for i in range(a0.shape[0]):
            for k in range(3):
                q0[k] = b0[j, k] + shift[k]
                q1[k] = b1[j, k] + shift[k]
            d = seg_seg_dist(a0[i], a1[i], q0, q1) - ra[i] - rb[j]
            if d < best:
                best = d
    return best


# ---------------------------------------------------------------------------
# quaternion helpers (w, x, y, z)
# ---------------------------------------------------------------------------


@njit(cache=True)
def quat_to_mat(q):
    w, x, y, z = q[0], q[1], q[2], q[3]
    m = np.empty((3, 3))
    m[0, 0] = 1 - 2 * (y * y + z * z)
    m[0, 1] = 2 * (x * y - w * z)
    m[0, 2] = 2 * (x * z + w * y)
    m[1, 0] = 2 * (x * y + w * z)
    m[1, 1] = 1 - 2 * (x * x + z * z)
    m[1, 2] = 2 * (y * z - w * x)
    m[2, 0] = 2 * (x * z - w * y)
    m[2, 1] = 2 * (y * z + w * x)
    m[2, 2] = 1 - 2 * (x * x + y * y)
    return m


@njit(cache=True)
def world_capsules(pos, quat, cap_body, cap_a, cap_b, out_a, out_b):
    nb = pos.shape[0]
    rots = np.empty((nb, 3, 3))
    for b in range(nb):
        rots[b] = quat_to_mat(quat[b])
    for c in range(cap_body.shape[0]):
        b = cap_body[c]
        r = rots[b]
        for k in range(3):
            out_a[c, k] = pos[b, k] + r[k, 0] * cap_a[c, 0] + r[k, 1] * cap_a[c, 1] + r[k, 2] * cap_a[c, 2]
            out_b[c, k] = pos[b, k] + r[k, 0] * cap_b[c, 0] + r[k, 1] * cap_b[c, 1] + r[k, 2] * cap_b[c, 2]
    return rots


# ---------------------------------------------------------------------------
# broad phase: sweep and prune on the axis of largest spread
# ---------------------------------------------------------------------------


@njit(cache=True)
def candidate_pairs(wa, wb, rad, cap_body, margin):
    n = wa.shape[0]
    lo = np.empty((n, 3))
    hi = np.empty((n, 3))
    for i in range(n):
        for k in range(3):
            a = wa[i, k]
            b = wb[i, k]
            lo[i, k] = min(a, b) - rad[i] - margin
            hi[i, k] = max(a, b) + rad[i] + margin
    # axis with the largest spread of centres
    best_axis = 0
    best_var = -1.0
    for k in range(3):
        m = 0.0
        for i in range(n):
            m += lo[i, k] + hi[i, k]
        m /= 2.0 * max(n, 1)
        v = 0.0
        for i in range(n):
            d = 0.5 * (lo[i, k] + hi[i, k]) - m
            v += d * d
        if v > best_var:
            best_var = v
            best_axis = k
    order = np.argsort(lo[:, best_axis], kind="mergesort")
    cap = 16 * n + 16
    pairs = np.empty((cap, 2), dtype=np.int64)
    npairs = 0
    for ii in range(n):
        i = order[ii]
        for jj in range(ii + 1, n):
            j = order[jj]
            if lo[j, best_axis] > hi[i, best_axis]:
                break
            if cap_body[i] == cap_body[j]:
                continue
            ok = True
            for k in range(3):
                if lo[i, k] > hi[j, k] or lo[j, k] > hi[i, k]:
                    ok = False
                    break
            if not ok:
                continue
            if npairs >= cap:
                newcap = cap * 2
                grown = np.empty((newcap, 2), dtype=np.int64)
                grown[:npairs] = pairs[:npairs]
                pairs = grown
                cap = newcap
            a = min(i, j)
            b = max(i, j)
            pairs[npairs, 0] = a
            pairs[npairs, 1] = b
            npairs += 1
    out = pairs[:npairs]
    # deterministic order independent of the sort axis
    keys = out[:, 0] * n + out[:, 1]
    idx = np.argsort(keys, kind="mergesort")
    return out[idx]


# ---------------------------------------------------------------------------
# penalty contact dynamics
# ---------------------------------------------------------------------------

WALL_FLOOR = 0
WALL_CYL = 1
WALL_BOWL = 2


@njit(cache=True)
def _lookup(keys, key):
    lo = 0
    hi = keys.shape[0]
    while lo < hi:
        mid = (lo + hi) >> 1
        if keys[mid] < key:
            lo = mid + 1
        else:
            hi = mid
    if lo < keys.shape[0] and keys[lo] == key:
        return lo
    return -1


@njit(cache=True)
def _cross(ax, ay, az, bx, by, bz):
    return ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx


@njit(cache=True)
def _quad(m, x, y, z):
    """x^T m x for a 3x3 matrix m."""
    return (x * (m[0, 0] * x + m[0, 1] * y + m[0, 2] * z)
            + y * (m[1, 0] * x + m[1, 1] * y + m[1, 2] * z)
            + z * (m[2, 0] * x + m[2, 1] * y + m[2, 2] * z))


@njit(cache=True)
def _apply_contact(
    point, normal, overlap, bi, bj, wall_vel,
    pos, vel, omg, inv_mass, inv_iw,
    kn, kt, zeta, mu, dt,
    hist_keys, hist_spring, key, new_keys, new_spring, nnew,
    force, torque,
):
    """Penalty normal spring + Cundall-Strack tangential spring on body bi (and bj if >= 0).

    normal points from j (or the wall) towards i. Written with scalars only:
    this is the innermost loop of the dynamics.
    """
    nx = normal[0]
    ny = normal[1]
    nz = normal[2]
    rix = point[0] - pos[bi, 0]
    riy = point[1] - pos[bi, 1]
    riz = point[2] - pos[bi, 2]
    wx, wy, wz = _cross(omg[bi, 0], omg[bi, 1], omg[bi, 2], rix, riy, riz)
    vx = vel[bi, 0] + wx
    vy = vel[bi, 1] + wy
    vz = vel[bi, 2] + wz
    # effective mass of the contact point along the normal, rotation included
    ax, ay, az = _cross(rix, riy, riz, nx, ny, nz)
    wsum = inv_mass[bi] + _quad(inv_iw[bi], ax, ay, az)
    rjx = 0.0
    rjy = 0.0
    rjz = 0.0
    if bj >= 0:
        rjx = point[0] - pos[bj, 0]
        rjy = point[1] - pos[bj, 1]
        rjz = point[2] - pos[bj, 2]
        wx, wy, wz = _cross(omg[bj, 0], omg[bj, 1], omg[bj, 2], rjx, rjy, rjz)
        vx -= vel[bj, 0] + wx
        vy -= vel[bj, 1] + wy
        vz -= vel[bj, 2] + wz
        ax, ay, az = _cross(rjx, rjy, rjz, nx, ny, nz)
        wsum += inv_mass[bj] + _quad(inv_iw[bj], ax, ay, az)
    else:
        vx -= wall_vel[0]
        vy -= wall_vel[1]
        vz -= wall_vel[2]
    meff = 1.0 / wsum
    vn = vx * nx + vy * ny + vz * nz
    cn = 2.0 * zeta * np.sqrt(kn * meff)
    fn = kn * overlap - cn * vn
    if fn < 0.0:
        fn = 0.0
    vtx = vx - vn * nx
    vty = vy - vn * ny
    vtz = vz - vn * nz
    # tangential spring history, rotated onto the current tangent plane
    idx = _lookup(hist_keys, key)
    sx = 0.0
    sy = 0.0
    sz = 0.0
    if idx >= 0:
        sx = hist_spring[idx, 0]
        sy = hist_spring[idx, 1]
        sz = hist_spring[idx, 2]
        sn = sx * nx + sy * ny + sz * nz
        mag0 = np.sqrt(sx * sx + sy * sy + sz * sz)
        sx -= sn * nx
        sy -= sn * ny
        sz -= sn * nz
        mag1 = np.sqrt(sx * sx + sy * sy + sz * sz)
        if mag1 > EPS:
            sc = mag0 / mag1
            sx *= sc
            sy *= sc
            sz *= sc
    sx += vtx * dt
    sy += vty * dt
    sz += vtz * dt
    ct = 2.0 * zeta * np.sqrt(kt * meff)
    ftx = -kt * sx - ct * vtx
    fty = -kt * sy - ct * vty
    ftz = -kt * sz - ct * vtz
    ftm = np.sqrt(ftx * ftx + fty * fty + ftz * ftz)
    fmax = mu * fn
    if ftm > fmax:
        # sliding: cap the force, and the spring so its elastic part sits at the Coulomb limit
        sc = fmax / ftm if ftm > EPS else 0.0
        ftx *= sc
        fty *= sc
        ftz *= sc
        sx = -(ftx + ct * vtx) / kt
        sy = -(fty + ct * vty) / kt
        sz = -(ftz + ct * vtz) / kt
        sm = np.sqrt(sx * sx + sy * sy + sz * sz)
        lim = fmax / kt
        if sm > lim and sm > EPS:
            sc = lim / sm
            sx *= sc
            sy *= sc
            sz *= sc
    new_keys[nnew] = key
    new_spring[nnew, 0] = sx
    new_spring[nnew, 1] = sy
    new_spring[nnew, 2] = sz
    fx = fn * nx + ftx
    fy = fn * ny + fty
    fz = fn * nz + ftz
    tx, ty, tz = _cross(rix, riy, riz, fx, fy, fz)
    force[bi, 0] += fx
    force[bi, 1] += fy
    force[bi, 2] += fz
    torque[bi, 0] += tx
    torque[bi, 1] += ty
    torque[bi, 2] += tz
    if bj >= 0:
        tx, ty, tz = _cross(rjx, rjy, rjz, fx, fy, fz)
        force[bj, 0] -= fx
        force[bj, 1] -= fy
        force[bj, 2] -= fz
        torque[bj, 0] -= tx
        torque[bj, 1] -= ty
        torque[bj, 2] -= tz
    return nnew + 1


NSUB = 5  # contact slots per capsule pair
PARALLEL_SIN2 = 1e-3


@njit(cache=True)
def closest_on_segment(p, q0, q1):
    ux = q1[0] - q0[0]
    uy = q1[1] - q0[1]
    uz = q1[2] - q0[2]
    uu = ux * ux + uy * uy + uz * uz
    if uu < EPS:
        return 0.0
    return clamp01(((p[0] - q0[0]) * ux + (p[1] - q0[1]) * uy + (p[2] - q0[2]) * uz) / uu)


@njit(cache=True)
def _point_seg_d2(p, q0, q1, t):
    d2 = 0.0
    for k in range(3):
        dk = p[k] - (q0[k] + t * (q1[k] - q0[k]))
        d2 += dk * dk
    return d2


@njit(cache=True)
def _pair_contact(pix, piy, piz, pjx, pjy, pjz, d2, i, j, bi, bj, key, cap_r, active, touching, pos, vel, omg,
                  inv_mass, inv_iw, kn, kt, zeta, mu, dt, hist_keys, hist_spring, new_keys, new_spring, nnew,
                  force, torque):
    """Contact between axis points pi (capsule i) and pj (capsule j) at squared distance d2."""
    d = np.sqrt(d2)
    normal = np.empty(3)
    if d > EPS:
        normal[0] = (pix - pjx) / d
        normal[1] = (piy - pjy) / d
        normal[2] = (piz - pjz) / d
    else:
        normal[0] = 0.0
        normal[1] = 0.0
        normal[2] = 1.0
    h = 0.5 * (cap_r[j] - cap_r[i])
    point = np.empty(3)
    point[0] = 0.5 * (pix + pjx) + h * normal[0]
    point[1] = 0.5 * (piy + pjy) + h * normal[1]
    point[2] = 0.5 * (piz + pjz) + h * normal[2]
    ov = cap_r[i] + cap_r[j] - d
    touching[bi] += 1
    touching[bj] += 1
    zero = np.zeros(3)
    if active[bi] and active[bj]:
        return _apply_contact(point, normal, ov, bi, bj, zero, pos, vel, omg, inv_mass, inv_iw, kn, kt, zeta, mu, dt,
                              hist_keys, hist_spring, key, new_keys, new_spring, nnew, force, torque)
    if active[bi]:
        return _apply_contact(point, normal, ov, bi, -1, zero, pos, vel, omg, inv_mass, inv_iw, kn, kt, zeta, mu, dt,
                              hist_keys, hist_spring, key, new_keys, new_spring, nnew, force, torque)
    normal *= -1.0
    return _apply_contact(point, normal, ov, bj, -1, zero, pos, vel, omg, inv_mass, inv_iw, kn, kt, zeta, mu, dt,
                          hist_keys, hist_spring, key, new_keys, new_spring, nnew, force, torque)


@njit(cache=True)
def _wall_s(px, py, pz, r, wall_kind, R0, R1, depth, wall_bottom):
    if wall_kind == WALL_FLOOR:
        return r - pz, 0.0, 0.0, 1.0
    if wall_kind == WALL_CYL:
        if pz < wall_bottom:
            return -1.0, 0.0, 0.0, 0.0
        rho = np.sqrt(px * px + py * py)
        if rho < EPS:
            return -1.0, 0.0, 0.0, 0.0
        return rho + r - R0, -px / rho, -py / rho, 0.0
    # bowl: cone radius R0 at z=0 growing to R1 at z=depth (continues above)
    slope = (R1 - R0) / depth
    rho = np.sqrt(px * px + py * py)
    if rho < EPS:
        return -1.0, 0.0, 0.0, 0.0
    cosa = 1.0 / np.sqrt(1.0 + slope * slope)
    sina = slope * cosa
    # signed distance from the cone surface, positive inside
    d = (R0 + slope * pz - rho) * cosa
    return r - d, -px / rho * cosa, -py / rho * cosa, sina


@njit(cache=True)
def _wall_point(p, r, wall_kind, wall_params, wall_bottom):
    """Return (overlap, nx, ny, nz) of a sphere at p against one wall.

    The normal points into the allowed region; overlap <= 0 means no contact.
    """
    return _wall_s(p[0], p[1], p[2], r, wall_kind, wall_params[0], wall_params[1], wall_params[2], wall_bottom)


@njit(cache=True)
def _rotate_tensor(r, t):
    """r @ t @ r.T for 3x3 matrices."""
    out = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for k in range(3):
                rk = r[i, k]
                for l in range(3):
                    acc += rk * t[k, l] * r[j, l]
            out[i, j] = acc
    return out


@njit(cache=True)
def _inv3(m, out):
    a, b, c = m[0, 0], m[0, 1], m[0, 2]
    d, e, f = m[1, 0], m[1, 1], m[1, 2]
    g, h, k = m[2, 0], m[2, 1], m[2, 2]
    A = e * k - f * h
    B = -(d * k - f * g)
    C = d * h - e * g
    det = a * A + b * B + c * C
    inv = 1.0 / det
    out[0, 0] = A * inv
    out[0, 1] = -(b * k - c * h) * inv
    out[0, 2] = (b * f - c * e) * inv
    out[1, 0] = B * inv
    out[1, 1] = (a * k - c * g) * inv
    out[1, 2] = -(a * f - c * d) * inv
    out[2, 0] = C * inv
    out[2, 1] = -(a * h - b * g) * inv
    out[2, 2] = (a * e - b * d) * inv


@njit(cache=True)
def _world_inv_inertia(r, inertia_local, out):
    tmp = np.empty((3, 3))
    _inv3(inertia_local, tmp)
    rt = _rotate_tensor(r, tmp)
    for i in range(3):
        for j in range(3):
            out[i, j] = rt[i, j]


@njit(cache=True)
def step_kernel(
    pos, quat, vel, omg, mass, inertia_local, cap_body, cap_a, cap_b, cap_r,
    walls, wall_params, wall_bottom, wall_vel,
    joints_i, joints_j, joint_ai, joint_aj, joint_kb,
    gravity, kn, kt, zeta, mu, dt, kj,
    hist_keys, hist_spring, active, drag,
):
    """Advance one semi-implicit Euler step in place.

    Returns (new_keys, new_spring, max_speed). Bodies with active == 0 are held fixed.
    Bodies touching anything get a linear drag of rate ``drag`` (1/s) on both
    velocities, which removes the slow rocking that penalty contacts leave
    behind without touching free flight.
    """
    nc = cap_body.shape[0]
    wa = np.empty((nc, 3))
    wb = np.empty((nc, 3))
    rots = world_capsules(pos, quat, cap_body, cap_a, cap_b, wa, wb)
    pairs = candidate_pairs(wa, wb, cap_r, cap_body, 0.0)
    return _step_core(pos, quat, vel, omg, mass, inertia_local, cap_body, cap_r, wa, wb, rots, pairs,
                      walls, wall_params, wall_bottom, wall_vel, np.zeros(3),
                      joints_i, joints_j, joint_ai, joint_aj, joint_kb,
                      gravity, kn, kt, zeta, mu, dt, kj, hist_keys, hist_spring, active, drag)


@njit(cache=True)
def _step_core(pos, quat, vel, omg, mass, inertia_local, cap_body, cap_r, wa, wb, rots, pairs,
               walls, wall_params, wall_bottom, wall_vel, offset,
               joints_i, joints_j, joint_ai, joint_aj, joint_kb,
               gravity, kn, kt, zeta, mu, dt, kj, hist_keys, hist_spring, active, drag):
    # walls live in the container frame, displaced from the world by ``offset``
    nb = pos.shape[0]
    nc = cap_body.shape[0]
    force = np.zeros((nb, 3))
    torque = np.zeros((nb, 3))
    inv_mass = np.zeros(nb)
    inv_iw = np.zeros((nb, 3, 3))
    touching = np.zeros(nb, dtype=np.int64)
    for b in range(nb):
        if active[b]:
            inv_mass[b] = 1.0 / mass[b]
            _world_inv_inertia(rots[b], inertia_local[b], inv_iw[b])
            for k in range(3):
                force[b, k] += mass[b] * gravity[k]
    nw = walls.shape[0]
    cap_new = NSUB * pairs.shape[0] + 2 * nc * nw + 8
    new_keys = np.empty(cap_new, dtype=np.int64)
    new_spring = np.empty((cap_new, 3))
    nnew = 0
    nkey = nc + 2 * nw + 2
    for p in range(pairs.shape[0]):
        i = pairs[p, 0]
        j = pairs[p, 1]
        bi = cap_body[i]
        bj = cap_body[j]
        if not active[bi] and not active[bj]:
            continue
        rs = cap_r[i] + cap_r[j]
        rs2 = rs * rs
        base = (i * nkey + j) * NSUB
        a0x, a0y, a0z = wa[i, 0], wa[i, 1], wa[i, 2]
        a1x, a1y, a1z = wb[i, 0], wb[i, 1], wb[i, 2]
        b0x, b0y, b0z = wa[j, 0], wa[j, 1], wa[j, 2]
        b1x, b1y, b1z = wb[j, 0], wb[j, 1], wb[j, 2]
        # sub-contact 0: interior closest points of two clearly non-parallel axes
        s, t, d2 = _ss_closest(a0x, a0y, a0z, a1x, a1y, a1z, b0x, b0y, b0z, b1x, b1y, b1z)
        if d2 < rs2 and s > 0.0 and s < 1.0 and t > 0.0 and t < 1.0:
            uix = a1x - a0x
            uiy = a1y - a0y
            uiz = a1z - a0z
            ujx = b1x - b0x
            ujy = b1y - b0y
            ujz = b1z - b0z
            cx, cy, cz = _cross(uix, uiy, uiz, ujx, ujy, ujz)
            sin2 = (cx * cx + cy * cy + cz * cz) / max((uix * uix + uiy * uiy + uiz * uiz)
                                                        * (ujx * ujx + ujy * ujy + ujz * ujz), EPS)
            if sin2 > PARALLEL_SIN2:
                nnew = _pair_contact(a0x + s * uix, a0y + s * uiy, a0z + s * uiz,
                                     b0x + t * ujx, b0y + t * ujy, b0z + t * ujz, d2, i, j, bi, bj, base,
                                     cap_r, active, touching, pos, vel, omg, inv_mass, inv_iw, kn, kt, zeta, mu,
                                     dt, hist_keys, hist_spring, new_keys, new_spring, nnew, force, torque)
        # sub-contacts 1-4: each end sphere against the other axis
        for sub in range(4):
            if sub == 0:
                ex, ey, ez = a0x, a0y, a0z
            elif sub == 1:
                ex, ey, ez = a1x, a1y, a1z
            elif sub == 2:
                ex, ey, ez = b0x, b0y, b0z
            else:
                ex, ey, ez = b1x, b1y, b1z
            if sub < 2:
                qx, qy, qz, d2 = _ps_closest(ex, ey, ez, b0x, b0y, b0z, b1x, b1y, b1z)
                if d2 < rs2:
                    nnew = _pair_contact(ex, ey, ez, qx, qy, qz, d2, i, j, bi, bj, base + 1 + sub, cap_r, active,
                                         touching, pos, vel, omg, inv_mass, inv_iw, kn, kt, zeta, mu, dt,
                                         hist_keys, hist_spring, new_keys, new_spring, nnew, force, torque)
            else:
                qx, qy, qz, d2 = _ps_closest(ex, ey, ez, a0x, a0y, a0z, a1x, a1y, a1z)
                if d2 < rs2:
                    nnew = _pair_contact(qx, qy, qz, ex, ey, ez, d2, i, j, bi, bj, base + 1 + sub, cap_r, active,
                                         touching, pos, vel, omg, inv_mass, inv_iw, kn, kt, zeta, mu, dt,
                                         hist_keys, hist_spring, new_keys, new_spring, nnew, force, torque)
    # walls act on both capsule end spheres
    wvel = np.zeros(3)
    for w in range(nw):
        kind = walls[w]
        wp0 = wall_params[w, 0]
        wp1 = wall_params[w, 1]
        wp2 = wall_params[w, 2]
        wbot = wall_bottom[w]
        for c in range(nc):
            b = cap_body[c]
            if not active[b]:
                continue
            r = cap_r[c]
            for end in range(2):
                if end == 0:
                    px, py, pz = wa[c, 0], wa[c, 1], wa[c, 2]
                else:
                    px, py, pz = wb[c, 0], wb[c, 1], wb[c, 2]
                ov, nx, ny, nz = _wall_s(px - offset[0], py - offset[1], pz - offset[2], r, kind, wp0, wp1, wp2,
                                         wbot)
                if ov <= 0.0:
                    continue
                normal = np.empty(3)
                normal[0] = nx
                normal[1] = ny
                normal[2] = nz
                point = np.empty(3)
                point[0] = px - r * nx
                point[1] = py - r * ny
                point[2] = pz - r * nz
                wvel[0] = wall_vel[w, 0]
                wvel[1] = wall_vel[w, 1]
                wvel[2] = wall_vel[w, 2]
                touching[b] += 1
                key = (c * nkey + nc + 2 * w + end) * NSUB
                nnew = _apply_contact(point, normal, ov, b, -1, wvel, pos, vel, omg, inv_mass, inv_iw,
                                      kn, kt, zeta, mu, dt, hist_keys, hist_spring, key, new_keys, new_spring,
                                      nnew, force, torque)
    # articulated links: stiff point spring at the shared anchor plus a bending spring
    for q in range(joints_i.shape[0]):
        bi = joints_i[q]
        bj = joints_j[q]
        ri = rots[bi] @ joint_ai[q]
        rj = rots[bj] @ joint_aj[q]
        xi = pos[bi] + ri
        xj = pos[bj] + rj
        vi = vel[bi] + np.cross(omg[bi], ri)
        vj = vel[bj] + np.cross(omg[bj], rj)
        meff = 1.0 / (1.0 / mass[bi] + 1.0 / mass[bj])
        cj = 2.0 * 0.7 * np.sqrt(kj * meff)
        f = -kj * (xi - xj) - cj * (vi - vj)
        if active[bi]:
            force[bi] += f
            torque[bi] += np.cross(ri, f)
        if active[bj]:
            force[bj] -= f
            torque[bj] -= np.cross(rj, f)
        axi = rots[bi][:, 0]
        axj = rots[bj][:, 0]
        tb = joint_kb[q] * np.cross(axi, axj)
        # bending damping on relative spin
        ib = min(inertia_local[bi, 1, 1], inertia_local[bj, 1, 1])
        cb = 2.0 * 0.7 * np.sqrt(joint_kb[q] * ib)
        wrel = omg[bj] - omg[bi]
        wpar = (wrel[0] * axi[0] + wrel[1] * axi[1] + wrel[2] * axi[2]) * axi
        tb += cb * (wrel - wpar)
        if active[bi]:
            torque[bi] += tb
        if active[bj]:
            torque[bj] -= tb
    # integrate
    max_speed = 0.0
    for b in range(nb):
        if not active[b]:
            continue
        vel[b] += dt * force[b] * inv_mass[b]
        # gyroscopic term uses the world inertia, the update its inverse
        iw = _rotate_tensor(rots[b], inertia_local[b])
        w0 = omg[b, 0]
        w1 = omg[b, 1]
        w2 = omg[b, 2]
        l0 = iw[0, 0] * w0 + iw[0, 1] * w1 + iw[0, 2] * w2
        l1 = iw[1, 0] * w0 + iw[1, 1] * w1 + iw[1, 2] * w2
        l2 = iw[2, 0] * w0 + iw[2, 1] * w1 + iw[2, 2] * w2
        g0, g1, g2 = _cross(w0, w1, w2, l0, l1, l2)
        t0 = torque[b, 0] - g0
        t1 = torque[b, 1] - g1
        t2 = torque[b, 2] - g2
        m = inv_iw[b]
        omg[b, 0] += dt * (m[0, 0] * t0 + m[0, 1] * t1 + m[0, 2] * t2)
        omg[b, 1] += dt * (m[1, 0] * t0 + m[1, 1] * t1 + m[1, 2] * t2)
        omg[b, 2] += dt * (m[2, 0] * t0 + m[2, 1] * t1 + m[2, 2] * t2)
        if touching[b] > 0 and drag > 0.0:
            damp = 1.0 / (1.0 + drag * dt)
            vel[b] *= damp
            omg[b] *= damp
        pos[b] += dt * vel[b]
        w = omg[b]
        q = quat[b]
        dq0 = 0.5 * (-w[0] * q[1] - w[1] * q[2] - w[2] * q[3])
        dq1 = 0.5 * (w[0] * q[0] + w[1] * q[3] - w[2] * q[2])
        dq2 = 0.5 * (-w[0] * q[3] + w[1] * q[0] + w[2] * q[1])
        dq3 = 0.5 * (w[0] * q[2] - w[1] * q[1] + w[2] * q[0])
        q[0] += dt * dq0
        q[1] += dt * dq1
        q[2] += dt * dq2
        q[3] += dt * dq3
        n = np.sqrt(q[0] ** 2 + q[1] ** 2 + q[2] ** 2 + q[3] ** 2)
        for k in range(4):
            q[k] /= n
        sp = np.sqrt(vel[b, 0] ** 2 + vel[b, 1] ** 2 + vel[b, 2] ** 2)
        if sp > max_speed:
            max_speed = sp
    keys = new_keys[:nnew].copy()
    springs = new_spring[:nnew].copy()
    order = np.argsort(keys, kind="mergesort")
    return keys[order], springs[order], max_speed


@njit(cache=True)
def advance_kernel(
    n_steps, pos, quat, vel, omg, mass, inertia_local, cap_body, cap_a, cap_b, cap_r,
    walls, wall_params, wall_bottom, wall_lift, lift_speed,
    joints_i, joints_j, joint_ai, joint_aj, joint_kb,
    gravity, kn, kt, zeta, mu, dt, kj, hist_keys, hist_spring, active, drag,
    shake_dir, shake_amp, shake_w, shake_t0, time, margin, speed_limit,
):
    """Run up to n_steps in place with a Verlet pair list.

    The container is displaced by shake_amp*sin(w(t - t0))*shake_dir (zero
    amplitude for a still container). Walls flagged in ``wall_lift`` rise at
    ``lift_speed``. Candidate pairs are gathered with ``margin`` and rebuilt
    once any capsule end has moved more than margin/2. Stops early when the
    speed limit is exceeded.

    Returns (keys, springs, max_speed, steps_taken, wall_bottom).
    """
    nc = cap_body.shape[0]
    nw = walls.shape[0]
    wa = np.empty((nc, 3))
    wb = np.empty((nc, 3))
    ref_a = np.empty((nc, 3))
    ref_b = np.empty((nc, 3))
    bottom = wall_bottom.copy()
    wvel = np.zeros((nw, 3))
    offset = np.zeros(3)
    pairs = np.empty((0, 2), dtype=np.int64)
    rebuild = True
    half2 = 0.25 * margin * margin
    max_speed = 0.0
    taken = 0
    for step in range(n_steps):
        t = time + step * dt
        ph = shake_w * (t - shake_t0)
        sn = shake_amp * np.sin(ph)
        cs = shake_amp * shake_w * np.cos(ph)
        for k in range(3):
            offset[k] = sn * shake_dir[k]
        for w in range(nw):
            for k in range(3):
                wvel[w, k] = cs * shake_dir[k]
            if wall_lift[w]:
                wvel[w, 2] += lift_speed
        rots = world_capsules(pos, quat, cap_body, cap_a, cap_b, wa, wb)
        if not rebuild:
            for c in range(nc):
                da = 0.0
                db = 0.0
                for k in range(3):
                    da += (wa[c, k] - ref_a[c, k]) ** 2
                    db += (wb[c, k] - ref_b[c, k]) ** 2
                if da > half2 or db > half2:
                    rebuild = True
                    break
        if rebuild:
            pairs = candidate_pairs(wa, wb, cap_r, cap_body, margin)
            ref_a[:, :] = wa
            ref_b[:, :] = wb
            rebuild = False
        hist_keys, hist_spring, max_speed = _step_core(
            pos, quat, vel, omg, mass, inertia_local, cap_body, cap_r, wa, wb, rots, pairs,
            walls, wall_params, bottom, wvel, offset, joints_i, joints_j, joint_ai, joint_aj, joint_kb,
            gravity, kn, kt, zeta, mu, dt, kj, hist_keys, hist_spring, active, drag)
        for w in range(nw):
            if wall_lift[w]:
                bottom[w] += lift_speed * dt
        taken += 1
        if not np.isfinite(max_speed) or max_speed > speed_limit:
            break
    return hist_keys, hist_spring, max_speed, taken, bottom


@njit(cache=True)
def kinetic_energy(vel, omg, quat, mass, inertia_local, active):
    ke = 0.0
    for b in range(vel.shape[0]):
        if not active[b]:
            continue
        ke += 0.5 * mass[b] * (vel[b, 0] ** 2 + vel[b, 1] ** 2 + vel[b, 2] ** 2)
        r = quat_to_mat(quat[b])
        iw = r @ inertia_local[b] @ r.T
        w = omg[b]
        ke += 0.5 * (w[0] * (iw[0] @ w) + w[1] * (iw[1] @ w) + w[2] * (iw[2] @ w))
    return ke


# ---------------------------------------------------------------------------
# vertical sweep for quasi-static deposition
# ---------------------------------------------------------------------------


@njit(cache=True)
def _shifted_dist(p0, p1, q0, q1, h):
    a0 = p0.copy()
    a1 = p1.copy()
    a0[2] += h
    a1[2] += h
    return seg_seg_dist(a0, a1, q0, q1)


@njit(cache=True)
def highest_contact(p0, p1, q0, q1, reach, h_lo, h_hi):
    """Largest h in [h_lo, h_hi] with dist(p shifted by h*z, q) <= reach, or -inf."""
    if reach <= 0.0:
        return -np.inf
    # distance is convex in h: golden section for the minimiser, then bisection upward
    g = 0.5 * (np.sqrt(5.0) - 1.0)
    a = h_lo
    b = h_hi
    c = b - g * (b - a)
    d = a + g * (b - a)
    fc = _shifted_dist(p0, p1, q0, q1, c)
    fd = _shifted_dist(p0, p1, q0, q1, d)
    for _ in range(60):
        if b - a < 1e-6:
            break
        if fc < fd:
            b = d
            d = c
            fd = fc
            c = b - g * (b - a)
            fc = _shifted_dist(p0, p1, q0, q1, c)
        else:
            a = c
            c = d
            fc = fd
            d = a + g * (b - a)
            fd = _shifted_dist(p0, p1, q0, q1, d)
        if min(fc, fd) <= reach:
            break
    hm = c if fc < fd else d
    if min(fc, fd) > reach:
        return -np.inf
    lo = hm
    hi = h_hi
    if _shifted_dist(p0, p1, q0, q1, hi) <= reach:
        return hi
    for _ in range(60):
        if hi - lo < 1e-7:
            break
        mid = 0.5 * (lo + hi)
        if _shifted_dist(p0, p1, q0, q1, mid) <= reach:
            lo = mid
        else:
            hi = mid
    return lo


@njit(cache=True)
def drop_height(
    new_a, new_b, new_r,
    old_a, old_b, old_r,
    allow_table, new_class, old_class,
    walls, wall_params, wall_bottom,
):
    """Vertical offset at which a falling capsule set first touches the scene.

    new_* are capsules of the falling body at a reference height; the result is
    the largest downward-limited offset h (h <= 0 moves down). Contacts between a
    falling capsule of class a and a resting capsule of class b let the faller
    sink allow_table[a, b] below first touch (the resting body bends away).
    """
    best = -np.inf
    nn = new_a.shape[0]
    no = old_a.shape[0]
    for i in range(nn):
        xlo = min(new_a[i, 0], new_b[i, 0]) - new_r[i]
        xhi = max(new_a[i, 0], new_b[i, 0]) + new_r[i]
        ylo = min(new_a[i, 1], new_b[i, 1]) - new_r[i]
        yhi = max(new_a[i, 1], new_b[i, 1]) + new_r[i]
        zlo = min(new_a[i, 2], new_b[i, 2]) - new_r[i]
        zhi = max(new_a[i, 2], new_b[i, 2]) + new_r[i]
        for j in range(no):
            oxlo = min(old_a[j, 0], old_b[j, 0]) - old_r[j]
            oxhi = max(old_a[j, 0], old_b[j, 0]) + old_r[j]
            if oxlo > xhi or xlo > oxhi:
                continue
            oylo = min(old_a[j, 1], old_b[j, 1]) - old_r[j]
            oyhi = max(old_a[j, 1], old_b[j, 1]) + old_r[j]
            if oylo > yhi or ylo > oyhi:
                continue
            ozlo = min(old_a[j, 2], old_b[j, 2]) - old_r[j]
            ozhi = max(old_a[j, 2], old_b[j, 2]) + old_r[j]
            h_lo = ozlo - zhi
            h_hi = ozhi - zlo
            give = allow_table[new_class[i], old_class[j]]
            if h_hi - give <= best:
                continue
            # first touch, then sink by the resting capsule's give
            h = highest_contact(new_a[i], new_b[i], old_a[j], old_b[j], new_r[i] + old_r[j],
                                max(h_lo, best + give), h_hi) - give
            if h > best:
                best = h
    # container: end spheres must stay inside each wall
    for w in range(walls.shape[0]):
        for i in range(nn):
            for end in range(2):
                p = new_a[i] if end == 0 else new_b[i]
                r = new_r[i]
                if walls[w] == WALL_FLOOR:
                    h = r - p[2]
                elif walls[w] == WALL_BOWL:
                    R0 = wall_params[w, 0]
                    R1 = wall_params[w, 1]
                    depth = wall_params[w, 2]
                    slope = (R1 - R0) / depth
                    cosa = 1.0 / np.sqrt(1.0 + slope * slope)
                    rho = np.sqrt(p[0] * p[0] + p[1] * p[1])
                    # need (R0 + slope*(z+h) - rho)*cosa >= r
                    zmin = (rho + r / cosa - R0) / slope
                    h = zmin - p[2]
                else:
                    h = -np.inf
                if h > best:
                    best = h
    return best


# ---------------------------------------------------------------------------
# translation sweep for the escape oracle
# ---------------------------------------------------------------------------


@njit(cache=True)
def sweep_collides(a0, a1, ra, b0, b1, rb, direction, distance, step, level, centre_gap, reach):
    """True if moving set b along ``direction`` hits a (surface distance < level) within ``distance``.

    ``centre_gap`` is the vector from a's bounding-sphere centre to b's, and
    ``reach`` the sum of the two sphere radii; past that the sets cannot touch.
    """
    n = int(np.ceil(distance / step - 1e-9))
    shift = np.empty(3)
    for k in range(1, n + 1):
        s = min(k * step, distance)
        g2 = 0.0
        for c in range(3):
            shift[c] = s * direction[c]
            g2 += (centre_gap[c] + shift[c]) ** 2
        if g2 > reach * reach:
            return False
        if min_capsule_distance_shifted(a0, a1, ra, b0, b1, rb, shift) < level:
            return True
    return False


# ---------------------------------------------------------------------------
# capture-region crossings
# ---------------------------------------------------------------------------


@njit(cache=True)
def region_crossings(reg_verts, reg_nv, reg_open, reg_unit, cap_a, cap_b, cap_r, cap_unit, plane_eps):
    """All (region, capsule, depth) where a capsule axis of another unit pierces a region.

    Regions are padded to a common vertex count; reg_nv holds the real count.
    An axis end closer than plane_eps to the plane is taken to lie on it and
    counts as the non-negative side. Depth is the in-plane distance from the
    piercing point to the nearest open edge (any edge for a closed region).
    """
    nr = reg_verts.shape[0]
    nc = cap_a.shape[0]
    out_r = np.empty(nr * 8 + 16, dtype=np.int64)
    out_c = np.empty(nr * 8 + 16, dtype=np.int64)
    out_d = np.empty(nr * 8 + 16)
    n_out = 0
    for r in range(nr):
        m = reg_nv[r]
        v = reg_verts[r, :m]
        # Newell normal
        nx = 0.0
        ny = 0.0
        nz = 0.0
        ox = 0.0
        oy = 0.0
        oz = 0.0
        lo = np.empty(3)
        hi = np.empty(3)
        for k in range(3):
            lo[k] = 1e300
            hi[k] = -1e300
        for k in range(m):
            p = v[k]
            q = v[(k + 1) % m]
            nx += (p[1] - q[1]) * (p[2] + q[2])
            ny += (p[2] - q[2]) * (p[0] + q[0])
            nz += (p[0] - q[0]) * (p[1] + q[1])
            ox += p[0]
            oy += p[1]
            oz += p[2]
            for c in range(3):
                lo[c] = min(lo[c], p[c])
                hi[c] = max(hi[c], p[c])
        nn = np.sqrt(nx * nx + ny * ny + nz * nz)
        nx /= nn
        ny /= nn
        nz /= nn
        ox /= m
        oy /= m
        oz /= m
        e1x = v[1, 0] - v[0, 0]
        e1y = v[1, 1] - v[0, 1]
        e1z = v[1, 2] - v[0, 2]
        dn = e1x * nx + e1y * ny + e1z * nz
        e1x -= dn * nx
        e1y -= dn * ny
        e1z -= dn * nz
        ne = np.sqrt(e1x * e1x + e1y * e1y + e1z * e1z)
        e1x /= ne
        e1y /= ne
        e1z /= ne
        e2x, e2y, e2z = _cross(nx, ny, nz, e1x, e1y, e1z)
        px = np.empty(m)
        py = np.empty(m)
        for k in range(m):
            dx = v[k, 0] - ox
            dy = v[k, 1] - oy
            dz = v[k, 2] - oz
            px[k] = dx * e1x + dy * e1y + dz * e1z
            py[k] = dx * e2x + dy * e2y + dz * e2z
        any_open = False
        for k in range(m):
            if reg_open[r, k]:
                any_open = True
        for c in range(nc):
            if cap_unit[c] == reg_unit[r]:
                continue
            a = cap_a[c]
            b = cap_b[c]
            if max(a[0], b[0]) < lo[0] or min(a[0], b[0]) > hi[0] or max(a[1], b[1]) < lo[1] \
                    or min(a[1], b[1]) > hi[1] or max(a[2], b[2]) < lo[2] or min(a[2], b[2]) > hi[2]:
                continue
            s0 = (a[0] - ox) * nx + (a[1] - oy) * ny + (a[2] - oz) * nz
            s1 = (b[0] - ox) * nx + (b[1] - oy) * ny + (b[2] - oz) * nz
            if abs(s0) < plane_eps:
                s0 = 0.0
            if abs(s1) < plane_eps:
                s1 = 0.0
            if (s0 < 0.0) == (s1 < 0.0):
                continue
            t = s0 / (s0 - s1)
            xx = a[0] + t * (b[0] - a[0]) - ox
            xy = a[1] + t * (b[1] - a[1]) - oy
            xz = a[2] + t * (b[2] - a[2]) - oz
            u = xx * e1x + xy * e1y + xz * e1z
            w = xx * e2x + xy * e2y + xz * e2z
            inside = False
            for k in range(m):
                x0 = px[k]
                y0 = py[k]
                x1 = px[(k + 1) % m]
                y1 = py[(k + 1) % m]
                if (y0 > w) != (y1 > w):
                    xc = x0 + (w - y0) * (x1 - x0) / (y1 - y0)
                    if xc > u:
                        inside = not inside
            if not inside:
                continue
            best = 1e300
            for k in range(m):
                if any_open and not reg_open[r, k]:
                    continue
                x0 = px[k]
                y0 = py[k]
                dx = px[(k + 1) % m] - x0
                dy = py[(k + 1) % m] - y0
                tt = ((u - x0) * dx + (w - y0) * dy) / max(dx * dx + dy * dy, 1e-300)
                tt = min(max(tt, 0.0), 1.0)
                ddx = x0 + tt * dx - u
                ddy = y0 + tt * dy - w
                best = min(best, np.sqrt(ddx * ddx + ddy * ddy))
            if n_out == out_r.shape[0]:
                grow = out_r.shape[0] * 2
                nr_ = np.empty(grow, dtype=np.int64)
                nc_ = np.empty(grow, dtype=np.int64)
                nd_ = np.empty(grow)
                nr_[:n_out] = out_r
                nc_[:n_out] = out_c
                nd_[:n_out] = out_d
                out_r = nr_
                out_c = nc_
                out_d = nd_
            out_r[n_out] = r
            out_c[n_out] = c
            out_d[n_out] = best
            n_out += 1
    return out_r[:n_out], out_c[:n_out], out_d[:n_out]
