"""Pure-Python implementations of the hot simulation kernels.

These mirror ``_ckernels.pyx`` function for function and are used whenever the
compiled extension is unavailable (or ``ACTIVECLS_BACKEND=python`` is set).
Array arguments are float64 numpy arrays; scalar loops use :mod:`math` so the
arithmetic matches the compiled version operation for operation.
"""
import math

import numpy as np

BACKEND = "python"

_PI = math.pi
_TWO_PI = 2.0 * math.pi


def wrap_angle(a):
    """Wrap an angle to (-pi, pi]."""
    r = math.fmod(a + _PI, _TWO_PI)
    if r <= 0.0:
        r += _TWO_PI
    return r - _PI


# ---------------------------------------------------------------------------
# target contacts
# ---------------------------------------------------------------------------

def resolve_contacts(pos, vel, static, radius, width, height):
    """Resolve target-target and target-wall contacts in place.

    Pairs are visited in index order. Overlapping pairs are first separated
    along the contact normal, then (if approaching) exchange the normal
    velocity component as an equal-mass elastic collision. A static target
    acts as an immovable reflector. Returns the number of pair contacts.
    """
    n = pos.shape[0]
    mind = 2.0 * radius
    contacts = 0
    for i in range(n):
        for j in range(i + 1, n):
            si = static[i]
            sj = static[j]
            if si and sj:
                continue
            dx = pos[j, 0] - pos[i, 0]
            dy = pos[j, 1] - pos[i, 1]
            d2 = dx * dx + dy * dy
            if d2 >= mind * mind:
                continue
            contacts += 1
            d = math.sqrt(d2)
            if d < 1e-12:
                nx, ny = 1.0, 0.0
            else:
                nx, ny = dx / d, dy / d
            overlap = mind - d
            if si:
                pos[j, 0] += overlap * nx
                pos[j, 1] += overlap * ny
                vn = vel[j, 0] * nx + vel[j, 1] * ny
                if vn < 0.0:
                    vel[j, 0] -= 2.0 * vn * nx
                    vel[j, 1] -= 2.0 * vn * ny
            elif sj:
                pos[i, 0] -= overlap * nx
                pos[i, 1] -= overlap * ny
                vn = vel[i, 0] * nx + vel[i, 1] * ny
                if vn > 0.0:
                    vel[i, 0] -= 2.0 * vn * nx
                    vel[i, 1] -= 2.0 * vn * ny
            else:
                half = 0.5 * overlap
                pos[i, 0] -= half * nx
                pos[i, 1] -= half * ny
                pos[j, 0] += half * nx
                pos[j, 1] += half * ny
                rel = (vel[i, 0] - vel[j, 0]) * nx + (vel[i, 1] - vel[j, 1]) * ny
                if rel > 0.0:
                    vel[i, 0] -= rel * nx
                    vel[i, 1] -= rel * ny
                    vel[j, 0] += rel * nx
                    vel[j, 1] += rel * ny
    lo = radius
    hi_x = width - radius
    hi_y = height - radius
    for i in range(n):
        if static[i]:
            continue
        x = pos[i, 0]
        if x < lo:
            x = 2.0 * lo - x
            vel[i, 0] = abs(vel[i, 0])
        elif x > hi_x:
            x = 2.0 * hi_x - x
            vel[i, 0] = -abs(vel[i, 0])
        pos[i, 0] = min(max(x, lo), hi_x)
        y = pos[i, 1]
        if y < lo:
            y = 2.0 * lo - y
            vel[i, 1] = abs(vel[i, 1])
        elif y > hi_y:
            y = 2.0 * hi_y - y
            vel[i, 1] = -abs(vel[i, 1])
        pos[i, 1] = min(max(y, lo), hi_y)
    return contacts


def advance_cv(pos, vel, static, dt, radius, width, height):
    """Euler-advance non-static targets by ``dt`` then resolve contacts in place."""
    n = pos.shape[0]
    for i in range(n):
        if not static[i]:
            pos[i, 0] += vel[i, 0] * dt
            pos[i, 1] += vel[i, 1] * dt
    return resolve_contacts(pos, vel, static, radius, width, height)


# ---------------------------------------------------------------------------
# camera geometry
# ---------------------------------------------------------------------------

def camera_basis(yaw, pitch):
    """Right, down and optical-axis unit vectors of the drone camera."""
    fx, fy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    right = (fy, -fx, 0.0)
    down = (-sp * fx, -sp * fy, -cp)
    axis = (cp * fx, cp * fy, -sp)
    return right, down, axis


def project_point(px, py, pz, cam, basis, focal, img_w, img_h):
    """Pinhole projection; returns (u, v, depth). depth <= 0 means behind."""
    right, down, axis = basis
    rx = px - cam[0]
    ry = py - cam[1]
    rz = pz - cam[2]
    depth = rx * axis[0] + ry * axis[1] + rz * axis[2]
    if depth <= 1e-9:
        return 0.0, 0.0, depth
    u = focal * (rx * right[0] + ry * right[1] + rz * right[2]) / depth + 0.5 * img_w
    v = focal * (rx * down[0] + ry * down[1] + rz * down[2]) / depth + 0.5 * img_h
    return u, v, depth


def sight_blocked(cam, tx, ty, tz, ox, oy, radius, height):
    """True if the segment camera -> (tx, ty, tz) passes through the cylinder at (ox, oy)."""
    ddx = tx - cam[0]
    ddy = ty - cam[1]
    a = ddx * ddx + ddy * ddy
    if a < 1e-18:
        return False
    fx = cam[0] - ox
    fy = cam[1] - oy
    b = 2.0 * (fx * ddx + fy * ddy)
    c = fx * fx + fy * fy - radius * radius
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return False
    sq = math.sqrt(disc)
    t0 = (-b - sq) / (2.0 * a)
    t1 = (-b + sq) / (2.0 * a)
    if t0 > 1.0 or t1 < 0.0:
        return False
    lo = max(t0, 0.0)
    hi = min(t1, 1.0)
    z_lo = cam[2] + lo * (tz - cam[2])
    z_hi = cam[2] + hi * (tz - cam[2])
    return min(z_lo, z_hi) <= height


def target_visible(cam, basis, pos, i, radius, height, focal, img_w, img_h):
    """Line-of-sight and in-frame test for target ``i`` against all others."""
    tx, ty = pos[i, 0], pos[i, 1]
    tz = 0.5 * height
    u, v, depth = project_point(tx, ty, tz, cam, basis, focal, img_w, img_h)
    if depth <= 1e-9 or u < 0.0 or u > img_w or v < 0.0 or v > img_h:
        return False
    for j in range(pos.shape[0]):
        if j == i:
            continue
        if sight_blocked(cam, tx, ty, tz, pos[j, 0], pos[j, 1], radius, height):
            return False
    return True


def front_face(cam, basis, tx, ty, facing, radius, height, focal, img_w, img_h, n_arc, outline):
    """Project the visible front half-cylinder of one target.

    Fills ``outline`` (shape (2*n_arc, 2)) with the polygon: top rim from one
    silhouette edge to the other, then the bottom rim back. Returns
    (area, skew, fits). A front face turned away from the camera has area 0.
    """
    bx = cam[0] - tx
    by = cam[1] - ty
    dist = math.sqrt(bx * bx + by * by)
    if dist <= radius:
        return 0.0, 1.0, False
    cos_view = (math.cos(facing) * bx + math.sin(facing) * by) / dist
    skew = 1.0 - max(0.0, cos_view)
    if cos_view <= 0.0:
        u, v, depth = project_point(tx, ty, 0.5 * height, cam, basis, focal, img_w, img_h)
        for k in range(2 * n_arc):
            outline[k, 0] = u
            outline[k, 1] = v
        fits = depth > 1e-9 and 0.0 <= u <= img_w and 0.0 <= v <= img_h
        return 0.0, skew, fits
    beta = math.atan2(by, bx)
    half_visible = math.acos(radius / dist)
    delta = wrap_angle(facing - beta)
    lo = max(-half_visible, delta - 0.5 * _PI)
    hi = min(half_visible, delta + 0.5 * _PI)
    fits = True
    m = 2 * n_arc
    for k in range(n_arc):
        g = beta + lo + (hi - lo) * k / (n_arc - 1)
        px = tx + radius * math.cos(g)
        py = ty + radius * math.sin(g)
        u, v, depth = project_point(px, py, height, cam, basis, focal, img_w, img_h)
        if depth <= 1e-9:
            return 0.0, skew, False
        outline[k, 0] = u
        outline[k, 1] = v
        if u < 0.0 or u > img_w or v < 0.0 or v > img_h:
            fits = False
        u, v, depth = project_point(px, py, 0.0, cam, basis, focal, img_w, img_h)
        if depth <= 1e-9:
            return 0.0, skew, False
        outline[m - 1 - k, 0] = u
        outline[m - 1 - k, 1] = v
        if u < 0.0 or u > img_w or v < 0.0 or v > img_h:
            fits = False
    acc = 0.0
    for k in range(m):
        k2 = k + 1 if k + 1 < m else 0
        acc += outline[k, 0] * outline[k2, 1] - outline[k2, 0] * outline[k, 1]
    return 0.5 * abs(acc), skew, fits


def scan_targets(cam_pos, yaw, pitch, pos, facing, radius, height, focal, img_w, img_h, n_arc):
    """Visibility and front-face projection for every target.

    Returns (visible, area, skew, fits) arrays of length M. Area, skew and
    fits are only meaningful where ``visible`` is set.
    """
    n = pos.shape[0]
    visible = np.zeros(n, dtype=np.uint8)
    area = np.zeros(n)
    skew = np.ones(n)
    fits = np.zeros(n, dtype=np.uint8)
    cam = (float(cam_pos[0]), float(cam_pos[1]), float(cam_pos[2]))
    basis = camera_basis(yaw, pitch)
    outline = np.zeros((2 * n_arc, 2))
    for i in range(n):
        if not target_visible(cam, basis, pos, i, radius, height, focal, img_w, img_h):
            continue
        visible[i] = 1
        a, s, f = front_face(cam, basis, pos[i, 0], pos[i, 1], facing[i], radius, height,
                             focal, img_w, img_h, n_arc, outline)
        area[i] = a
        skew[i] = s
        fits[i] = 1 if f else 0
    return visible, area, skew, fits


# ---------------------------------------------------------------------------
# MPC: projected gradient on a 4-axis double integrator
# ---------------------------------------------------------------------------

def _terminal_error(p0, v0, target, U, dt):
    n = U.shape[0]
    weights = dt * dt * (n - np.arange(n, dtype=np.float64))
    pn = p0 + n * dt * v0 + weights @ U
    vn = v0 + dt * U.sum(axis=0)
    ep = pn - target
    ep[3] = wrap_angle(ep[3])
    return ep, vn, weights


def mpc_cost(p0, v0, target, U, dt, w_u, w_g, norm0, eps):
    """Stage plus normalized terminal cost of a control sequence."""
    ep, vn, _ = _terminal_error(p0, v0, target, U, dt)
    stage = np.sqrt((U * U).sum(axis=1) + eps * eps).sum()
    term = math.sqrt(float(ep @ ep + vn @ vn) + eps * eps)
    return w_u * stage + w_g * term / norm0


def mpc_grad(p0, v0, target, U, dt, w_u, w_g, norm0, eps):
    ep, vn, weights = _terminal_error(p0, v0, target, U, dt)
    stage_norm = np.sqrt((U * U).sum(axis=1) + eps * eps)
    term = math.sqrt(float(ep @ ep + vn @ vn) + eps * eps)
    scale = w_g / (norm0 * term)
    g = w_u * U / stage_norm[:, None]
    g += scale * (weights[:, None] * ep[None, :] + dt * vn[None, :])
    return g


def mpc_solve(p0, v0, target, U0, dt, w_u, w_g, umax, iters, step0, tol, eps):
    """Projected gradient descent with halving backtracking.

    ``target`` is the 4-vector (x, y, z, yaw) to reach at rest. Returns
    (U, cost history as a list, iterations used). The cost history is
    non-increasing by construction.
    """
    e0 = np.asarray(p0, dtype=np.float64) - target
    e0[3] = wrap_angle(e0[3])
    norm0 = math.sqrt(float(e0 @ e0 + v0 @ v0))
    U = np.clip(np.array(U0, dtype=np.float64), -umax, umax)
    if norm0 <= 1e-9:
        return np.zeros_like(U), [0.0], 0
    cost = mpc_cost(p0, v0, target, U, dt, w_u, w_g, norm0, eps)
    history = [cost]
    step = step0
    it = 0
    while it < iters:
        g = mpc_grad(p0, v0, target, U, dt, w_u, w_g, norm0, eps)
        pg = np.clip(U - g, -umax, umax) - U
        if math.sqrt(float((pg * pg).sum())) < tol:
            break
        accepted = False
        while step > 1e-12:
            cand = np.clip(U - step * g, -umax, umax)
            c = mpc_cost(p0, v0, target, cand, dt, w_u, w_g, norm0, eps)
            if c <= cost:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        U = cand
        cost = c
        history.append(cost)
        step = min(2.0 * step, 1e6)
        it += 1
    return U, history, it
