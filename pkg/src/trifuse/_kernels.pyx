# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: plane sampling, ray marching, backward warping, visibility.

Each output element is computed by exactly one iteration with no cross-thread
reduction, so results are independent of the OpenMP thread count.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport exp, log1p, floor, fabs, sqrt, INFINITY

cnp.import_array()


cdef inline double _softplus(double f) noexcept nogil:
    if f > 0.0:
        return f + log1p(exp(-f))
    return log1p(exp(f))


cdef inline double _sigmoid(double f) noexcept nogil:
    if f >= 0.0:
        return 1.0 / (1.0 + exp(-f))
    cdef double e = exp(f)
    return e / (1.0 + e)


cdef inline double _bilinear(const float[:, :, :, ::1] planes, Py_ssize_t p, Py_ssize_t c,
                             double a, double b) noexcept nogil:
    # a, b normalized to [-1, 1]; align-corners texel mapping, clamp to edge
    cdef Py_ssize_t H = planes.shape[2]
    cdef Py_ssize_t W = planes.shape[3]
    cdef double u = (a + 1.0) * 0.5 * (W - 1)
    cdef double v = (b + 1.0) * 0.5 * (H - 1)
    return _bilinear_texel(planes, p, c, u, v)


cdef inline double _bilinear_texel(const float[:, :, :, ::1] planes, Py_ssize_t p, Py_ssize_t c,
                                   double u, double v) noexcept nogil:
    cdef Py_ssize_t H = planes.shape[2]
    cdef Py_ssize_t W = planes.shape[3]
    cdef Py_ssize_t x0, y0, x1, y1
    cdef double fx, fy
    if u < 0.0:
        u = 0.0
    elif u > W - 1:
        u = W - 1
    if v < 0.0:
        v = 0.0
    elif v > H - 1:
        v = H - 1
    x0 = <Py_ssize_t>floor(u)
    y0 = <Py_ssize_t>floor(v)
    if W > 1 and x0 > W - 2:
        x0 = W - 2
    if H > 1 and y0 > H - 2:
        y0 = H - 2
    x1 = x0 + 1 if W > 1 else x0
    y1 = y0 + 1 if H > 1 else y0
    fx = u - x0
    fy = v - y0
    return ((1.0 - fx) * (1.0 - fy) * planes[p, c, y0, x0]
            + fx * (1.0 - fy) * planes[p, c, y0, x1]
            + (1.0 - fx) * fy * planes[p, c, y1, x0]
            + fx * fy * planes[p, c, y1, x1])


cdef inline double _aggregate(const float[:, :, :, ::1] planes, Py_ssize_t c,
                              double x, double y, double z) noexcept nogil:
    return (_bilinear(planes, 0, c, x, y)
            + _bilinear(planes, 1, c, x, z)
            + _bilinear(planes, 2, c, y, z))


cdef inline void _accum_plane(const float[:, :, :, ::1] planes, Py_ssize_t p, double a, double b,
                              Py_ssize_t nch, double* acc) noexcept nogil:
    # adds the bilinear lookup of channels [0, nch) of plane p to acc
    cdef Py_ssize_t H = planes.shape[2]
    cdef Py_ssize_t W = planes.shape[3]
    cdef double u = (a + 1.0) * 0.5 * (W - 1)
    cdef double v = (b + 1.0) * 0.5 * (H - 1)
    cdef Py_ssize_t x0, y0, x1, y1, c
    cdef double fx, fy, w00, w01, w10, w11
    if u < 0.0:
        u = 0.0
    elif u > W - 1:
        u = W - 1
    if v < 0.0:
        v = 0.0
    elif v > H - 1:
        v = H - 1
    x0 = <Py_ssize_t>floor(u)
    y0 = <Py_ssize_t>floor(v)
    if W > 1 and x0 > W - 2:
        x0 = W - 2
    if H > 1 and y0 > H - 2:
        y0 = H - 2
    x1 = x0 + 1 if W > 1 else x0
    y1 = y0 + 1 if H > 1 else y0
    fx = u - x0
    fy = v - y0
    w00 = (1.0 - fx) * (1.0 - fy)
    w01 = fx * (1.0 - fy)
    w10 = (1.0 - fx) * fy
    w11 = fx * fy
    for c in range(nch):
        acc[c] = acc[c] + (w00 * planes[p, c, y0, x0] + w01 * planes[p, c, y0, x1]
                           + w10 * planes[p, c, y1, x0] + w11 * planes[p, c, y1, x1])


cdef inline void _aggregate4(const float[:, :, :, ::1] planes, double x, double y, double z,
                             double* f0, double* f1, double* f2, double* f3) noexcept nogil:
    cdef double f[4]
    f[0] = 0.0; f[1] = 0.0; f[2] = 0.0; f[3] = 0.0
    _accum_plane(planes, 0, x, y, 4, f)
    _accum_plane(planes, 1, x, z, 4, f)
    _accum_plane(planes, 2, y, z, 4, f)
    f0[0] = f[0]; f1[0] = f[1]; f2[0] = f[2]; f3[0] = f[3]


cdef inline int _slab(double ox, double oy, double oz, double dx, double dy, double dz,
                      double h, double* t0, double* t1) noexcept nogil:
    cdef double lo = -INFINITY
    cdef double hi = INFINITY
    cdef double o[3]
    cdef double d[3]
    cdef double ta, tb, tmp
    cdef int i
    o[0] = ox; o[1] = oy; o[2] = oz
    d[0] = dx; d[1] = dy; d[2] = dz
    for i in range(3):
        if fabs(d[i]) < 1e-12:
            if o[i] < -h or o[i] > h:
                return 0
        else:
            ta = (-h - o[i]) / d[i]
            tb = (h - o[i]) / d[i]
            if ta > tb:
                tmp = ta; ta = tb; tb = tmp
            if ta > lo:
                lo = ta
            if tb < hi:
                hi = tb
    t0[0] = lo
    t1[0] = hi
    return 1 if lo < hi else 0


def sample_points(const float[:, :, :, ::1] planes, const double[:, ::1] pts, int nch, int threads=1):
    """Summed triplane features for the first ``nch`` channels at normalized points."""
    cdef Py_ssize_t n = pts.shape[0]
    cdef Py_ssize_t i, c
    out = np.empty((n, nch), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in prange(n, nogil=True, num_threads=threads, schedule="static"):
        for c in range(nch):
            o[i, c] = 0.0
        _accum_plane(planes, 0, pts[i, 0], pts[i, 1], nch, &o[i, 0])
        _accum_plane(planes, 1, pts[i, 0], pts[i, 2], nch, &o[i, 0])
        _accum_plane(planes, 2, pts[i, 1], pts[i, 2], nch, &o[i, 0])
    return out


def render_rays(const float[:, :, :, ::1] planes, const double[:, ::1] origins,
                const double[:, ::1] dirs, double near, double far, int n_samples,
                double half_extent, double density_scale, const double[::1] bg, int threads=1):
    """March every ray through the cube and alpha-composite decoded samples."""
    cdef Py_ssize_t n = origins.shape[0]
    cdef Py_ssize_t i, k
    cdef double t0, t1, dt, t, x, y, z, sigma, alpha, trans, w, wsum, r, g, b
    cdef double f0, f1, f2, f3
    cdef double inv_h = 1.0 / half_extent
    rgb = np.empty((n, 3), dtype=np.float64)
    acc = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] rgb_v = rgb
    cdef double[::1] acc_v = acc
    for i in prange(n, nogil=True, num_threads=threads, schedule="static"):
        f0 = 0.0
        f1 = 0.0
        f2 = 0.0
        f3 = 0.0
        r = 0.0
        g = 0.0
        b = 0.0
        wsum = 0.0
        if _slab(origins[i, 0], origins[i, 1], origins[i, 2], dirs[i, 0], dirs[i, 1], dirs[i, 2],
                 half_extent, &t0, &t1):
            if t0 < near:
                t0 = near
            if t1 > far:
                t1 = far
            if t0 < t1:
                dt = (t1 - t0) / n_samples
                trans = 1.0
                for k in range(n_samples):
                    t = t0 + (k + 0.5) * dt
                    x = (origins[i, 0] + t * dirs[i, 0]) * inv_h
                    y = (origins[i, 1] + t * dirs[i, 1]) * inv_h
                    z = (origins[i, 2] + t * dirs[i, 2]) * inv_h
                    _aggregate4(planes, x, y, z, &f0, &f1, &f2, &f3)
                    sigma = _softplus(f0) * density_scale
                    alpha = 1.0 - exp(-sigma * dt)
                    w = trans * alpha
                    r = r + w * _sigmoid(f1)
                    g = g + w * _sigmoid(f2)
                    b = b + w * _sigmoid(f3)
                    wsum = wsum + w
                    trans = trans * (1.0 - alpha)
        rgb_v[i, 0] = r + (1.0 - wsum) * bg[0]
        rgb_v[i, 1] = g + (1.0 - wsum) * bg[1]
        rgb_v[i, 2] = b + (1.0 - wsum) * bg[2]
        acc_v[i] = wsum
    return rgb, acc


def warp_planes(const float[:, :, :, ::1] planes, const float[:, :, :, ::1] field, int threads=1):
    """Backward warp: out[p, c, v, u] = planes[p, c] sampled at (u + du, v + dv)."""
    cdef Py_ssize_t P = planes.shape[0]
    cdef Py_ssize_t C = planes.shape[1]
    cdef Py_ssize_t H = planes.shape[2]
    cdef Py_ssize_t W = planes.shape[3]
    cdef Py_ssize_t row, p, iv, iu, c
    cdef double su, sv
    out = np.empty((P, C, H, W), dtype=np.float32)
    cdef float[:, :, :, ::1] o = out
    for row in prange(P * H, nogil=True, num_threads=threads, schedule="static"):
        p = row // H
        iv = row % H
        for iu in range(W):
            su = iu + <double>field[p, 0, iv, iu]
            sv = iv + <double>field[p, 1, iv, iu]
            for c in range(C):
                o[p, c, iv, iu] = <float>_bilinear_texel(planes, p, c, su, sv)
    return out


cdef inline double _bilinear_texel_d(const double[:, :, :, ::1] f, Py_ssize_t p, Py_ssize_t c,
                                     double u, double v) noexcept nogil:
    cdef Py_ssize_t H = f.shape[2]
    cdef Py_ssize_t W = f.shape[3]
    cdef Py_ssize_t x0, y0, x1, y1
    cdef double fx, fy
    if u < 0.0:
        u = 0.0
    elif u > W - 1:
        u = W - 1
    if v < 0.0:
        v = 0.0
    elif v > H - 1:
        v = H - 1
    x0 = <Py_ssize_t>floor(u)
    y0 = <Py_ssize_t>floor(v)
    if W > 1 and x0 > W - 2:
        x0 = W - 2
    if H > 1 and y0 > H - 2:
        y0 = H - 2
    x1 = x0 + 1 if W > 1 else x0
    y1 = y0 + 1 if H > 1 else y0
    fx = u - x0
    fy = v - y0
    return ((1.0 - fx) * (1.0 - fy) * f[p, c, y0, x0]
            + fx * (1.0 - fy) * f[p, c, y0, x1]
            + (1.0 - fx) * fy * f[p, c, y1, x0]
            + fx * fy * f[p, c, y1, x1])


def sample_field(const double[:, :, :, ::1] f, const double[:, :, :, ::1] g, int threads=1):
    """Double-precision backward warp of a displacement field: out(x) = f(x + g(x))."""
    cdef Py_ssize_t P = f.shape[0]
    cdef Py_ssize_t C = f.shape[1]
    cdef Py_ssize_t H = f.shape[2]
    cdef Py_ssize_t W = f.shape[3]
    cdef Py_ssize_t row, p, iv, iu, c
    cdef double su, sv
    out = np.empty((P, C, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    for row in prange(P * H, nogil=True, num_threads=threads, schedule="static"):
        p = row // H
        iv = row % H
        for iu in range(W):
            su = iu + g[p, 0, iv, iu]
            sv = iv + g[p, 1, iv, iu]
            for c in range(C):
                o[p, c, iv, iu] = _bilinear_texel_d(f, p, c, su, sv)
    return out


def visibility(const float[:, :, :, ::1] density_planes, const double[::1] cam, int res,
               int col_samples, int ray_samples, double half_extent, double density_scale,
               double eps, int threads=1):
    """Transmittance-weighted visibility of every plane texel as seen from ``cam``."""
    cdef Py_ssize_t row, p, iv, iu, k, m
    cdef double a, b, cc, x, y, z, sig, tau, num, den, dx, dy, dz, L, t0, t1, dt, od, s
    cdef double step = 2.0 / col_samples
    cdef double coord = 2.0 / (res - 1) if res > 1 else 0.0
    cdef double inv_h = 1.0 / half_extent
    out = np.empty((3, res, res), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    for row in prange(3 * res, nogil=True, num_threads=threads, schedule="dynamic"):
        p = row // res
        iv = row % res
        b = -1.0 + iv * coord if res > 1 else 0.0
        for iu in range(res):
            a = -1.0 + iu * coord if res > 1 else 0.0
            num = 0.0
            den = 0.0
            for k in range(col_samples):
                cc = -1.0 + (k + 0.5) * step
                if p == 0:
                    x = a; y = b; z = cc
                elif p == 1:
                    x = a; y = cc; z = b
                else:
                    x = cc; y = a; z = b
                sig = _softplus(_aggregate(density_planes, 0, x, y, z)) * density_scale
                # camera ray transmittance up to the sample, world units
                dx = x * half_extent - cam[0]
                dy = y * half_extent - cam[1]
                dz = z * half_extent - cam[2]
                L = sqrt(dx * dx + dy * dy + dz * dz)
                od = 0.0
                if L > 0.0:
                    dx = dx / L
                    dy = dy / L
                    dz = dz / L
                    if _slab(cam[0], cam[1], cam[2], dx, dy, dz, half_extent, &t0, &t1):
                        if t0 < 0.0:
                            t0 = 0.0
                        if t0 < L:
                            dt = (L - t0) / ray_samples
                            for m in range(ray_samples):
                                s = t0 + (m + 0.5) * dt
                                od = od + _softplus(_aggregate(
                                    density_planes, 0,
                                    (cam[0] + s * dx) * inv_h,
                                    (cam[1] + s * dy) * inv_h,
                                    (cam[2] + s * dz) * inv_h)) * density_scale * dt
                tau = exp(-od)
                num = num + sig * tau
                den = den + sig
            if den > eps:
                s = num / den
                if s > 1.0:
                    s = 1.0
                elif s < 0.0:
                    s = 0.0
                o[p, iv, iu] = s
            else:
                o[p, iv, iu] = 1.0
    return out
