# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Same signatures and arithmetic as ``_pykernels``."""
from libc.math cimport sqrt, cos, sin, atan2, acos, fmod, fabs, M_PI
import numpy as np
cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"

cdef double _TWO_PI = 2.0 * M_PI


cdef inline double _wrap(double a) nogil:
    cdef double r = fmod(a + M_PI, _TWO_PI)
    if r <= 0.0:
        r += _TWO_PI
    return r - M_PI


def wrap_angle(double a):
    """Wrap an angle to (-pi, pi]."""
    return _wrap(a)


cdef inline double _dmin(double a, double b) nogil:
    return a if a < b else b


cdef inline double _dmax(double a, double b) nogil:
    return a if a > b else b


# ---------------------------------------------------------------------------
# target contacts
# ---------------------------------------------------------------------------

cdef int _resolve(double[:, ::1] pos, double[:, ::1] vel, const unsigned char[::1] static,
                  double radius, double width, double height) nogil:
    cdef Py_ssize_t n = pos.shape[0]
    cdef Py_ssize_t i, j
    cdef double mind = 2.0 * radius
    cdef double dx, dy, d2, d, nx, ny, overlap, vn, half, rel, x, y
    cdef double lo = radius, hi_x = width - radius, hi_y = height - radius
    cdef int contacts = 0
    for i in range(n):
        for j in range(i + 1, n):
            if static[i] and static[j]:
                continue
            dx = pos[j, 0] - pos[i, 0]
            dy = pos[j, 1] - pos[i, 1]
            d2 = dx * dx + dy * dy
            if d2 >= mind * mind:
                continue
            contacts += 1
            d = sqrt(d2)
            if d < 1e-12:
                nx = 1.0
                ny = 0.0
            else:
                nx = dx / d
                ny = dy / d
            overlap = mind - d
            if static[i]:
                pos[j, 0] += overlap * nx
                pos[j, 1] += overlap * ny
                vn = vel[j, 0] * nx + vel[j, 1] * ny
                if vn < 0.0:
                    vel[j, 0] -= 2.0 * vn * nx
                    vel[j, 1] -= 2.0 * vn * ny
            elif static[j]:
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
    for i in range(n):
        if static[i]:
            continue
        x = pos[i, 0]
        if x < lo:
            x = 2.0 * lo - x
            vel[i, 0] = fabs(vel[i, 0])
        elif x > hi_x:
            x = 2.0 * hi_x - x
            vel[i, 0] = -fabs(vel[i, 0])
        pos[i, 0] = _dmin(_dmax(x, lo), hi_x)
        y = pos[i, 1]
        if y < lo:
            y = 2.0 * lo - y
            vel[i, 1] = fabs(vel[i, 1])
        elif y > hi_y:
            y = 2.0 * hi_y - y
            vel[i, 1] = -fabs(vel[i, 1])
        pos[i, 1] = _dmin(_dmax(y, lo), hi_y)
    return contacts


def resolve_contacts(double[:, ::1] pos, double[:, ::1] vel, const unsigned char[::1] static,
                     double radius, double width, double height):
    return _resolve(pos, vel, static, radius, width, height)


def advance_cv(double[:, ::1] pos, double[:, ::1] vel, const unsigned char[::1] static,
               double dt, double radius, double width, double height):
    cdef Py_ssize_t i
    for i in range(pos.shape[0]):
        if not static[i]:
            pos[i, 0] += vel[i, 0] * dt
            pos[i, 1] += vel[i, 1] * dt
    return _resolve(pos, vel, static, radius, width, height)


# ---------------------------------------------------------------------------
# camera geometry
# ---------------------------------------------------------------------------

cdef struct Camera:
    double x, y, z
    double rx, ry, rz
    double dx, dy, dz
    double ax, ay, az
    double focal, w, h


cdef inline void _make_camera(Camera* c, double x, double y, double z, double yaw, double pitch,
                              double focal, double w, double h) nogil:
    cdef double fx = cos(yaw), fy = sin(yaw), cp = cos(pitch), sp = sin(pitch)
    c.x = x
    c.y = y
    c.z = z
    c.rx = fy
    c.ry = -fx
    c.rz = 0.0
    c.dx = -sp * fx
    c.dy = -sp * fy
    c.dz = -cp
    c.ax = cp * fx
    c.ay = cp * fy
    c.az = -sp
    c.focal = focal
    c.w = w
    c.h = h


cdef inline double _project(const Camera* c, double px, double py, double pz,
                            double* u, double* v) nogil:
    cdef double rx = px - c.x, ry = py - c.y, rz = pz - c.z
    cdef double depth = rx * c.ax + ry * c.ay + rz * c.az
    if depth <= 1e-9:
        u[0] = 0.0
        v[0] = 0.0
        return depth
    u[0] = c.focal * (rx * c.rx + ry * c.ry + rz * c.rz) / depth + 0.5 * c.w
    v[0] = c.focal * (rx * c.dx + ry * c.dy + rz * c.dz) / depth + 0.5 * c.h
    return depth


cdef inline bint _blocked(const Camera* c, double tx, double ty, double tz, double ox, double oy,
                          double radius, double height) nogil:
    cdef double ddx = tx - c.x, ddy = ty - c.y
    cdef double a = ddx * ddx + ddy * ddy
    cdef double fx, fy, b, cc, disc, sq, t0, t1, lo, hi, z_lo, z_hi
    if a < 1e-18:
        return False
    fx = c.x - ox
    fy = c.y - oy
    b = 2.0 * (fx * ddx + fy * ddy)
    cc = fx * fx + fy * fy - radius * radius
    disc = b * b - 4.0 * a * cc
    if disc < 0.0:
        return False
    sq = sqrt(disc)
    t0 = (-b - sq) / (2.0 * a)
    t1 = (-b + sq) / (2.0 * a)
    if t0 > 1.0 or t1 < 0.0:
        return False
    lo = _dmax(t0, 0.0)
    hi = _dmin(t1, 1.0)
    z_lo = c.z + lo * (tz - c.z)
    z_hi = c.z + hi * (tz - c.z)
    return _dmin(z_lo, z_hi) <= height


cdef inline bint _in_frame(const Camera* c, double u, double v) nogil:
    return u >= 0.0 and u <= c.w and v >= 0.0 and v <= c.h


cdef double _front_face(const Camera* c, double tx, double ty, double facing, double radius,
                        double height, int n_arc, double* skew, bint* fits) nogil:
    cdef double bx = c.x - tx, by = c.y - ty
    cdef double dist = sqrt(bx * bx + by * by)
    cdef double cos_view, beta, half_visible, delta, lo, hi, g, px, py, u, v, depth
    cdef double u0, v0, u_prev_t, v_prev_t, u_first_t, v_first_t, acc
    cdef double top_u, top_v, bot_u, bot_v
    cdef int k
    cdef double pu[2], pv[2]
    if dist <= radius:
        skew[0] = 1.0
        fits[0] = False
        return 0.0
    cos_view = (cos(facing) * bx + sin(facing) * by) / dist
    skew[0] = 1.0 - _dmax(0.0, cos_view)
    if cos_view <= 0.0:
        depth = _project(c, tx, ty, 0.5 * height, &u, &v)
        fits[0] = depth > 1e-9 and _in_frame(c, u, v)
        return 0.0
    beta = atan2(by, bx)
    half_visible = acos(radius / dist)
    delta = _wrap(facing - beta)
    lo = _dmax(-half_visible, delta - 0.5 * M_PI)
    hi = _dmin(half_visible, delta + 0.5 * M_PI)
    fits[0] = True
    # shoelace over top rim (forward) then bottom rim (backward): accumulate
    # top-chain and bottom-chain edges, then the two silhouette edges.
    acc = 0.0
    for k in range(n_arc):
        g = beta + lo + (hi - lo) * k / (n_arc - 1)
        px = tx + radius * cos(g)
        py = ty + radius * sin(g)
        depth = _project(c, px, py, height, &top_u, &top_v)
        if depth <= 1e-9:
            fits[0] = False
            return 0.0
        if not _in_frame(c, top_u, top_v):
            fits[0] = False
        depth = _project(c, px, py, 0.0, &bot_u, &bot_v)
        if depth <= 1e-9:
            fits[0] = False
            return 0.0
        if not _in_frame(c, bot_u, bot_v):
            fits[0] = False
        if k > 0:
            # top edge (k-1 -> k) and bottom edge (k -> k-1)
            acc += pu[0] * top_v - top_u * pv[0]
            acc += bot_u * pv[1] - pu[1] * bot_v
        else:
            u_first_t = top_u
            v_first_t = top_v
            u0 = bot_u
            v0 = bot_v
        pu[0] = top_u
        pv[0] = top_v
        pu[1] = bot_u
        pv[1] = bot_v
    # silhouette edges: last top -> last bottom, first bottom -> first top
    acc += pu[0] * pv[1] - pu[1] * pv[0]
    acc += u0 * v_first_t - u_first_t * v0
    return 0.5 * fabs(acc)


def scan_targets(cam_pos, double yaw, double pitch, double[:, ::1] pos, double[::1] facing,
                 double radius, double height, double focal, double img_w, double img_h,
                 int n_arc):
    """Visibility and front-face projection for every target."""
    cdef Py_ssize_t n = pos.shape[0]
    cdef Py_ssize_t i, j
    cdef Camera cam
    cdef double tx, ty, tz, u, v, depth, s
    cdef bint ok, f
    visible_a = np.zeros(n, dtype=np.uint8)
    area_a = np.zeros(n)
    skew_a = np.ones(n)
    fits_a = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] visible = visible_a
    cdef double[::1] area = area_a
    cdef double[::1] skew = skew_a
    cdef unsigned char[::1] fits = fits_a
    _make_camera(&cam, float(cam_pos[0]), float(cam_pos[1]), float(cam_pos[2]), yaw, pitch,
                 focal, img_w, img_h)
    with nogil:
        for i in range(n):
            tx = pos[i, 0]
            ty = pos[i, 1]
            tz = 0.5 * height
            depth = _project(&cam, tx, ty, tz, &u, &v)
            if depth <= 1e-9 or not _in_frame(&cam, u, v):
                continue
            ok = True
            for j in range(n):
                if j != i and _blocked(&cam, tx, ty, tz, pos[j, 0], pos[j, 1], radius, height):
                    ok = False
                    break
            if not ok:
                continue
            visible[i] = 1
            area[i] = _front_face(&cam, tx, ty, facing[i], radius, height, n_arc, &s, &f)
            skew[i] = s
            fits[i] = 1 if f else 0
    return visible_a, area_a, skew_a, fits_a


# ---------------------------------------------------------------------------
# MPC
# ---------------------------------------------------------------------------

cdef double _cost(const double* p0, const double* v0, const double* target, const double* U,
                  int n, double dt, double w_u, double w_g, double norm0, double eps,
                  double* ep, double* vn) nogil:
    cdef int k, a
    cdef double stage = 0.0, s, w, term = 0.0
    for a in range(4):
        ep[a] = p0[a] + n * dt * v0[a] - target[a]
        vn[a] = v0[a]
    for k in range(n):
        w = dt * dt * (n - k)
        s = 0.0
        for a in range(4):
            ep[a] += w * U[4 * k + a]
            vn[a] += dt * U[4 * k + a]
            s += U[4 * k + a] * U[4 * k + a]
        stage += sqrt(s + eps * eps)
    ep[3] = _wrap(ep[3])
    for a in range(4):
        term += ep[a] * ep[a] + vn[a] * vn[a]
    return w_u * stage + w_g * sqrt(term + eps * eps) / norm0


def mpc_cost(p0, v0, target, U, double dt, double w_u, double w_g, double norm0, double eps):
    cdef double[::1] p = np.ascontiguousarray(p0, dtype=np.float64)
    cdef double[::1] v = np.ascontiguousarray(v0, dtype=np.float64)
    cdef double[::1] t = np.ascontiguousarray(target, dtype=np.float64)
    cdef double[:, ::1] u = np.ascontiguousarray(U, dtype=np.float64)
    cdef double ep[4]
    cdef double vn[4]
    return _cost(&p[0], &v[0], &t[0], &u[0, 0], u.shape[0], dt, w_u, w_g, norm0, eps, ep, vn)


def mpc_solve(p0, v0, target, U0, double dt, double w_u, double w_g, umax, int iters,
              double step0, double tol, double eps):
    """Projected gradient descent with halving backtracking (see ``_pykernels``)."""
    cdef double[::1] p = np.ascontiguousarray(p0, dtype=np.float64)
    cdef double[::1] v = np.ascontiguousarray(v0, dtype=np.float64)
    cdef double[::1] t = np.ascontiguousarray(target, dtype=np.float64)
    cdef double[::1] um = np.ascontiguousarray(umax, dtype=np.float64)
    cdef int n = np.asarray(U0).shape[0]
    U_a = np.clip(np.array(U0, dtype=np.float64), -np.asarray(umax), np.asarray(umax))
    cand_a = np.empty_like(U_a)
    g_a = np.empty_like(U_a)
    cdef double[:, ::1] U = U_a
    cdef double[:, ::1] cand = cand_a
    cdef double[:, ::1] g = g_a
    cdef double ep[4]
    cdef double vn[4]
    cdef double e0[4]
    cdef double norm0 = 0.0, cost, c, step, scale, sn, term, pgn, x, w
    cdef int a, k, it = 0
    cdef bint accepted
    for a in range(4):
        e0[a] = p[a] - t[a]
    e0[3] = _wrap(e0[3])
    for a in range(4):
        norm0 += e0[a] * e0[a] + v[a] * v[a]
    norm0 = sqrt(norm0)
    if norm0 <= 1e-9:
        return np.zeros_like(U_a), [0.0], 0
    cost = _cost(&p[0], &v[0], &t[0], &U[0, 0], n, dt, w_u, w_g, norm0, eps, ep, vn)
    history = [cost]
    step = step0
    while it < iters:
        _cost(&p[0], &v[0], &t[0], &U[0, 0], n, dt, w_u, w_g, norm0, eps, ep, vn)
        term = 0.0
        for a in range(4):
            term += ep[a] * ep[a] + vn[a] * vn[a]
        scale = w_g / (norm0 * sqrt(term + eps * eps))
        pgn = 0.0
        for k in range(n):
            sn = 0.0
            for a in range(4):
                sn += U[k, a] * U[k, a]
            sn = sqrt(sn + eps * eps)
            w = dt * dt * (n - k)
            for a in range(4):
                g[k, a] = w_u * U[k, a] / sn + scale * (w * ep[a] + dt * vn[a])
                x = _dmin(_dmax(U[k, a] - g[k, a], -um[a]), um[a]) - U[k, a]
                pgn += x * x
        if sqrt(pgn) < tol:
            break
        accepted = False
        while step > 1e-12:
            for k in range(n):
                for a in range(4):
                    cand[k, a] = _dmin(_dmax(U[k, a] - step * g[k, a], -um[a]), um[a])
            c = _cost(&p[0], &v[0], &t[0], &cand[0, 0], n, dt, w_u, w_g, norm0, eps, ep, vn)
            if c <= cost:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        U[:, :] = cand
        cost = c
        history.append(cost)
        step = _dmin(2.0 * step, 1e6)
        it += 1
    return U_a, history, it
