"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Same arithmetic, vectorized over points/rays/texels. The ``threads`` argument is
accepted for signature parity and ignored.
"""
from __future__ import annotations

import numpy as np

_CHUNK = 1 << 16


def _softplus(f):
    return np.maximum(f, 0.0) + np.log1p(np.exp(-np.abs(f)))


def _sigmoid(f):
    e = np.exp(-np.abs(f))
    return np.where(f >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def _bilinear_texel(plane, u, v):
    """Clamp-to-edge bilinear lookup of ``plane`` (C, H, W) at texel coords; returns (N, C)."""
    _, H, W = plane.shape
    u = np.clip(u, 0.0, W - 1)
    v = np.clip(v, 0.0, H - 1)
    x0 = np.floor(u).astype(np.intp)
    y0 = np.floor(v).astype(np.intp)
    if W > 1:
        x0 = np.minimum(x0, W - 2)
        x1 = x0 + 1
    else:
        x1 = x0
    if H > 1:
        y0 = np.minimum(y0, H - 2)
        y1 = y0 + 1
    else:
        y1 = y0
    fx = (u - x0)[:, None]
    fy = (v - y0)[:, None]
    v00 = plane[:, y0, x0].T.astype(np.float64)
    v01 = plane[:, y0, x1].T.astype(np.float64)
    v10 = plane[:, y1, x0].T.astype(np.float64)
    v11 = plane[:, y1, x1].T.astype(np.float64)
    return ((1.0 - fx) * (1.0 - fy) * v00
            + fx * (1.0 - fy) * v01
            + (1.0 - fx) * fy * v10
            + fx * fy * v11)


def _bilinear(plane, a, b):
    _, H, W = plane.shape
    return _bilinear_texel(plane, (a + 1.0) * 0.5 * (W - 1), (b + 1.0) * 0.5 * (H - 1))


def _aggregate(planes, x, y, z):
    return (_bilinear(planes[0], x, y)
            + _bilinear(planes[1], x, z)
            + _bilinear(planes[2], y, z))


def _slab(o, d, h):
    """Vectorized ray/cube intersection; returns (t0, t1, hit)."""
    n = o.shape[0]
    lo = np.full(n, -np.inf)
    hi = np.full(n, np.inf)
    hit = np.ones(n, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        for i in range(3):
            par = np.abs(d[:, i]) < 1e-12
            hit &= ~(par & ((o[:, i] < -h) | (o[:, i] > h)))
            ta = (-h - o[:, i]) / d[:, i]
            tb = (h - o[:, i]) / d[:, i]
            tmin = np.where(par, -np.inf, np.minimum(ta, tb))
            tmax = np.where(par, np.inf, np.maximum(ta, tb))
            lo = np.maximum(lo, tmin)
            hi = np.minimum(hi, tmax)
    hit &= lo < hi
    return lo, hi, hit


def sample_points(planes, pts, nch, threads=1):
    planes = np.asarray(planes)[:, :nch]
    pts = np.asarray(pts, dtype=np.float64)
    out = np.empty((pts.shape[0], nch), dtype=np.float64)
    for s in range(0, pts.shape[0], _CHUNK):
        p = pts[s:s + _CHUNK]
        out[s:s + _CHUNK] = _aggregate(planes, p[:, 0], p[:, 1], p[:, 2])
    return out


def render_rays(planes, origins, dirs, near, far, n_samples, half_extent, density_scale, bg,
                threads=1):
    planes = np.asarray(planes)[:, :4]
    n = origins.shape[0]
    rgb = np.empty((n, 3), dtype=np.float64)
    acc = np.empty(n, dtype=np.float64)
    bg = np.asarray(bg, dtype=np.float64)
    chunk = max(1, _CHUNK // max(n_samples, 1))
    for s in range(0, n, chunk):
        o = origins[s:s + chunk]
        d = dirs[s:s + chunk]
        t0, t1, hit = _slab(o, d, half_extent)
        t0 = np.maximum(t0, near)
        t1 = np.minimum(t1, far)
        hit &= t0 < t1
        m = o.shape[0]
        col = np.zeros((m, 3))
        wsum = np.zeros(m)
        idx = np.nonzero(hit)[0]
        if idx.size:
            oh, dh = o[idx], d[idx]
            dt = (t1[idx] - t0[idx]) / n_samples
            k = np.arange(n_samples) + 0.5
            t = t0[idx, None] + k[None, :] * dt[:, None]
            inv_h = 1.0 / half_extent
            pts = (oh[:, None, :] + t[..., None] * dh[:, None, :]) * inv_h
            pts = pts.reshape(-1, 3)
            f = _aggregate(planes, pts[:, 0], pts[:, 1], pts[:, 2]).reshape(idx.size, n_samples, 4)
            sigma = _softplus(f[..., 0]) * density_scale
            alpha = 1.0 - np.exp(-sigma * dt[:, None])
            r = np.zeros(idx.size)
            g = np.zeros(idx.size)
            b = np.zeros(idx.size)
            ws = np.zeros(idx.size)
            trans = np.ones(idx.size)
            cr, cg, cb = _sigmoid(f[..., 1]), _sigmoid(f[..., 2]), _sigmoid(f[..., 3])
            # sequential over samples to keep the compiled summation order
            for j in range(n_samples):
                w = trans * alpha[:, j]
                r = r + w * cr[:, j]
                g = g + w * cg[:, j]
                b = b + w * cb[:, j]
                ws = ws + w
                trans = trans * (1.0 - alpha[:, j])
            col[idx, 0], col[idx, 1], col[idx, 2] = r, g, b
            wsum[idx] = ws
        rgb[s:s + chunk] = col + (1.0 - wsum)[:, None] * bg[None, :]
        acc[s:s + chunk] = wsum
    return rgb, acc


def sample_field(f, g, threads=1):
    f = np.asarray(f, dtype=np.float64)
    P, C, H, W = f.shape
    out = np.empty_like(f)
    iv, iu = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    for p in range(P):
        su = (iu + g[p, 0]).ravel()
        sv = (iv + g[p, 1]).ravel()
        out[p] = _bilinear_texel(f[p], su, sv).T.reshape(C, H, W)
    return out


def warp_planes(planes, field, threads=1):
    planes = np.asarray(planes)
    P, C, H, W = planes.shape
    out = np.empty((P, C, H, W), dtype=np.float32)
    iv, iu = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64),
                         indexing="ij")
    for p in range(P):
        su = (iu + field[p, 0].astype(np.float64)).ravel()
        sv = (iv + field[p, 1].astype(np.float64)).ravel()
        out[p] = _bilinear_texel(planes[p], su, sv).T.reshape(C, H, W).astype(np.float32)
    return out


def visibility(density_planes, cam, res, col_samples, ray_samples, half_extent, density_scale,
               eps, threads=1):
    planes = np.asarray(density_planes)[:, :1]
    cam = np.asarray(cam, dtype=np.float64)
    coord = 2.0 / (res - 1) if res > 1 else 0.0
    ticks = -1.0 + np.arange(res) * coord if res > 1 else np.zeros(1)
    cc = -1.0 + (np.arange(col_samples) + 0.5) * (2.0 / col_samples)
    out = np.empty((3, res, res), dtype=np.float64)
    inv_h = 1.0 / half_extent
    bb, aa = np.meshgrid(ticks, ticks, indexing="ij")
    a = np.repeat(aa.ravel(), col_samples)
    b = np.repeat(bb.ravel(), col_samples)
    c = np.tile(cc, res * res)
    for p in range(3):
        if p == 0:
            x, y, z = a, b, c
        elif p == 1:
            x, y, z = a, c, b
        else:
            x, y, z = c, a, b
        pts = np.stack([x, y, z], axis=1)
        sig = _softplus(sample_points(planes, pts, 1)[:, 0]) * density_scale
        od = np.zeros(pts.shape[0])
        for s in range(0, pts.shape[0], max(1, _CHUNK // ray_samples)):
            q = pts[s:s + max(1, _CHUNK // ray_samples)]
            d = q * half_extent - cam[None, :]
            L = np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2])
            ok = L > 0.0
            dn = np.zeros_like(d)
            dn[ok] = d[ok] / L[ok, None]
            t0, _, hit = _slab(np.broadcast_to(cam, d.shape), dn, half_extent)
            t0 = np.maximum(t0, 0.0)
            hit &= ok & (t0 < L)
            idx = np.nonzero(hit)[0]
            if idx.size:
                dt = (L[idx] - t0[idx]) / ray_samples
                m = np.arange(ray_samples) + 0.5
                sm = t0[idx, None] + m[None, :] * dt[:, None]
                rp = (cam[None, None, :] + sm[..., None] * dn[idx, None, :]) * inv_h
                dens = _softplus(sample_points(planes, rp.reshape(-1, 3), 1)[:, 0])
                dens = dens.reshape(idx.size, ray_samples) * density_scale
                acc = np.zeros(idx.size)
                for j in range(ray_samples):
                    acc = acc + dens[:, j] * dt
                od[s + idx] = acc
        tau = np.exp(-od)
        num = np.zeros(res * res)
        den = np.zeros(res * res)
        st = (sig * tau).reshape(res * res, col_samples)
        sg = sig.reshape(res * res, col_samples)
        for k in range(col_samples):
            num = num + st[:, k]
            den = den + sg[:, k]
        with np.errstate(divide="ignore", invalid="ignore"):
            vis = np.where(den > eps, np.clip(num / np.where(den > 0, den, 1.0), 0.0, 1.0), 1.0)
        out[p] = vis.reshape(res, res)
    return out
