"""Fused numba kernels for the per-contribution hot paths.

Everything here is sequential and allocation-free inside the loops, so
results are deterministic and independent of the render worker count.
The scalar reference implementations in geometry.py / texture.py /
renderer.py define the semantics; these kernels are the fast path and
are tested against them.

Warp-mode codes: 0 = none, 1 = axis CDF, 2 = radial CDF.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_SQRT2 = math.sqrt(2.0)
_R2_CUT = 9.0          # R_CUT^2
_EPS_T = 1e-4
_DEN_EPS = 1e-12


@njit(cache=True, nogil=True)
def geometry_pass(indices, ix0, ix1, iy0, iy1, axes, mu, s,
                  width, fx, fy, cx, cy, planar,
                  pix, sid, uu, vv, zz, gw):
    """Ray-plane intersections over each splat's bbox; returns the count."""
    m = 0
    for ii in range(indices.shape[0]):
        k = indices[ii]
        x0 = ix0[k]
        x1 = ix1[k]
        y0 = iy0[k]
        y1 = iy1[k]
        if x1 < x0 or y1 < y0:
            continue
        ux = axes[k, 0, 0]; uy = axes[k, 1, 0]; uz = axes[k, 2, 0]
        vx = axes[k, 0, 1]; vy = axes[k, 1, 1]; vz = axes[k, 2, 1]
        nx = axes[k, 0, 2]; ny = axes[k, 1, 2]; nz = axes[k, 2, 2]
        cxm = mu[k, 0]; cym = mu[k, 1]; czm = mu[k, 2]
        su = s[k, 0]; sv = s[k, 1]
        tnum = nx * cxm + ny * cym + nz * czm
        if planar and abs(nz) < _DEN_EPS:
            continue  # whole splat viewed edge-on
        for row in range(y0, y1 + 1):
            ry = (row + 0.5 - cy) / fy
            for col in range(x0, x1 + 1):
                rx = (col + 0.5 - cx) / fx
                if planar:
                    t = (tnum - nx * rx - ny * ry) / nz
                    if t <= 0.0:
                        continue
                    ex = rx - cxm; ey = ry - cym; ez = t - czm
                else:
                    den = nx * rx + ny * ry + nz
                    if abs(den) < _DEN_EPS:
                        continue
                    t = tnum / den
                    if t <= 0.0:
                        continue
                    ex = t * rx - cxm; ey = t * ry - cym; ez = t - czm
                u = (ex * ux + ey * uy + ez * uz) / su
                v = (ex * vx + ey * vy + ez * vz) / sv
                r2 = u * u + v * v
                if r2 > _R2_CUT:
                    continue
                pix[m] = row * width + col
                sid[m] = k
                uu[m] = u
                vv[m] = v
                zz[m] = t
                gw[m] = math.exp(-0.5 * r2)
                m += 1
    return m


@njit(cache=True, nogil=True)
def texcoord_pass(uu, vv, sid, has_tex, mode, tc0, tc1):
    """canonical -> texture coordinates for textured contributions."""
    for i in range(uu.shape[0]):
        if not has_tex[sid[i]]:
            tc0[i] = 0.5
            tc1[i] = 0.5
            continue
        u = uu[i]
        v = vv[i]
        if mode == 1:
            tc0[i] = 0.5 * (1.0 + math.erf(u / _SQRT2))
            tc1[i] = 0.5 * (1.0 + math.erf(v / _SQRT2))
        elif mode == 2:
            r2 = u * u + v * v
            if r2 < 1e-6:
                g = 0.5 * math.sqrt(r2) - math.sqrt(r2) * r2 / 8.0
            else:
                r = math.sqrt(r2)
                g = -math.expm1(-0.5 * r2) / r
            tc0[i] = (g * u + 1.0) / 2.0
            tc1[i] = (g * v + 1.0) / 2.0
        else:
            a = u / 6.0 + 0.5
            b = v / 6.0 + 0.5
            tc0[i] = min(max(a, 0.0), 1.0)
            tc1[i] = min(max(b, 0.0), 1.0)


@njit(cache=True, nogil=True)
def sample_pass(flat, offsets, tus, tvs, channels, sid, tc0, tc1, out):
    """Lerp-form bilinear sampling of every channel (constant-exact)."""
    for i in range(sid.shape[0]):
        k = sid[i]
        tu = tus[k]
        tv = tvs[k]
        off = offsets[k]
        x = tc0[i] * tu - 0.5
        y = tc1[i] * tv - 0.5
        xf = math.floor(x)
        yf = math.floor(y)
        i0 = int(min(max(xf, 0.0), tu - 1))
        j0 = int(min(max(yf, 0.0), tv - 1))
        if x < 0.0:
            fx = 0.0
        elif x > tu - 1:
            fx = 1.0
        else:
            fx = x - xf
        if y < 0.0:
            fy = 0.0
        elif y > tv - 1:
            fy = 1.0
        else:
            fy = y - yf
        i1 = min(i0 + 1, tu - 1)
        j1 = min(j0 + 1, tv - 1)
        if i1 < i0:
            i0 = i1
        if j1 < j0:
            j0 = j1
        b00 = off + (i0 * tv + j0) * channels
        b10 = off + (i1 * tv + j0) * channels
        b01 = off + (i0 * tv + j1) * channels
        b11 = off + (i1 * tv + j1) * channels
        for ch in range(channels):
            a = flat[b00 + ch]
            b = flat[b10 + ch]
            c = flat[b01 + ch]
            d = flat[b11 + ch]
            top = a + fx * (b - a)
            bot = c + fx * (d - c)
            out[i, ch] = top + fy * (bot - top)


@njit(cache=True, nogil=True)
def blend_pass(pix, alpha, t_before, include, t_final):
    """Exact front-to-back transmittance with early stop per pixel segment.

    Arrays must be sorted by pixel; t_final must be prefilled with 1.0.
    """
    m = pix.shape[0]
    i = 0
    while i < m:
        p = pix[i]
        T = 1.0
        while i < m and pix[i] == p:
            if T >= _EPS_T:
                include[i] = True
                t_before[i] = T
                T = T * (1.0 - alpha[i])
            else:
                include[i] = False
                t_before[i] = T
            i += 1
        t_final[p] = T


@njit(cache=True, nogil=True)
def backward_pass(pix, sid, uu, vv, zz, alpha, t_before, gw, atex,
                  tc0, tc1, color, cu, capped,
                  dL, t_final, bg,
                  axes, mu, s, o_all,
                  has_tex, offsets, tus, tvs, channels, flat,
                  width, fx, fy, cx, cy, planar, mode,
                  d_base, d_opac, d_logs, acc_mu, acc_u, acc_v, acc_n,
                  flat_grad):
    """Whole per-contribution adjoint chain, reverse blend order.

    Walks contributions back to front, maintaining the running suffix of
    downstream blended light per pixel, and accumulates per-splat
    gradients sequentially (deterministic regardless of worker count).
    """
    m = pix.shape[0]
    run = 0.0
    last_p = np.int64(-1)
    for i in range(m - 1, -1, -1):
        p = pix[i]
        if p != last_p:
            run = (dL[p, 0] * bg[0] + dL[p, 1] * bg[1] + dL[p, 2] * bg[2]) * t_final[p]
            last_p = p
        g0 = dL[p, 0]
        g1 = dL[p, 1]
        g2 = dL[p, 2]
        tb = t_before[i]
        al = alpha[i]
        w = al * tb
        gc_dot_c = g0 * color[i, 0] + g1 * color[i, 1] + g2 * color[i, 2]
        s_after = run
        run += gc_dot_c * w
        d_alpha = gc_dot_c * tb - s_after / (1.0 - al)

        k = sid[i]
        # color path (clamp kills gradients beyond [0, 1])
        d_cu0 = g0 * w if 0.0 < cu[i, 0] < 1.0 else 0.0
        d_cu1 = g1 * w if 0.0 < cu[i, 1] < 1.0 else 0.0
        d_cu2 = g2 * w if 0.0 < cu[i, 2] < 1.0 else 0.0
        d_base[k, 0] += d_cu0
        d_base[k, 1] += d_cu1
        d_base[k, 2] += d_cu2

        # alpha path, dead where the cap clipped it
        da = 0.0 if capped[i] else d_alpha
        ok = o_all[k]
        at = atex[i]
        g = gw[i]
        d_o = da * g * at
        d_opac[k] += d_o * ok * (1.0 - ok)
        d_gw = da * ok * at
        d_atex = da * ok * g

        u = uu[i]
        v = vv[i]
        g_u = -u * g * d_gw
        g_v = -v * g * d_gw

        if has_tex[k]:
            tu = tus[k]
            tv = tvs[k]
            off = offsets[k]
            x = tc0[i] * tu - 0.5
            y = tc1[i] * tv - 0.5
            xf = math.floor(x)
            yf = math.floor(y)
            i0 = int(min(max(xf, 0.0), tu - 1))
            j0 = int(min(max(yf, 0.0), tv - 1))
            in_x = 0.0 <= x <= tu - 1
            in_y = 0.0 <= y <= tv - 1
            fxw = x - xf if in_x else (0.0 if x < 0.0 else 1.0)
            fyw = y - yf if in_y else (0.0 if y < 0.0 else 1.0)
            i1 = min(i0 + 1, tu - 1)
            j1 = min(j0 + 1, tv - 1)
            if i1 < i0:
                i0 = i1
            if j1 < j0:
                j0 = j1
            w00 = (1.0 - fxw) * (1.0 - fyw)
            w10 = fxw * (1.0 - fyw)
            w01 = (1.0 - fxw) * fyw
            w11 = fxw * fyw
            b00 = off + (i0 * tv + j0) * channels
            b10 = off + (i1 * tv + j0) * channels
            b01 = off + (i0 * tv + j1) * channels
            b11 = off + (i1 * tv + j1) * channels
            g_tc0 = 0.0
            g_tc1 = 0.0
            for ch in range(channels):
                if ch == 0:
                    gch = d_cu0
                elif ch == 1:
                    gch = d_cu1
                elif ch == 2:
                    gch = d_cu2
                else:
                    gch = d_atex * at * (1.0 - at)
                flat_grad[b00 + ch] += gch * w00
                flat_grad[b10 + ch] += gch * w10
                flat_grad[b01 + ch] += gch * w01
                flat_grad[b11 + ch] += gch * w11
                a = flat[b00 + ch]
                b = flat[b10 + ch]
                c = flat[b01 + ch]
                d = flat[b11 + ch]
                cross = a - b - c + d
                if in_x:
                    g_tc0 += gch * ((b - a) + fyw * cross) * tu
                if in_y:
                    g_tc1 += gch * ((c - a) + fxw * cross) * tv

            # chain through the warp Jacobian
            if mode == 1:
                g_u += g_tc0 * _INV_SQRT_2PI * math.exp(-0.5 * u * u)
                g_v += g_tc1 * _INV_SQRT_2PI * math.exp(-0.5 * v * v)
            elif mode == 2:
                r2 = u * u + v * v
                r = math.sqrt(r2)
                if r2 < 1e-6:
                    gr = 0.5 * r - r * r2 / 8.0
                    g_over_r = 0.5 - r2 / 8.0
                else:
                    gr = -math.expm1(-0.5 * r2) / r
                    g_over_r = gr / r
                gp = math.exp(-0.5 * r2) - g_over_r
                rs = r if r > 1e-300 else 1e-300
                j00 = 0.5 * (gr + gp * (u / rs) * u)
                j01 = 0.5 * (gp * (u / rs) * v)
                j10 = 0.5 * (gp * (v / rs) * u)
                j11 = 0.5 * (gr + gp * (v / rs) * v)
                g_u += g_tc0 * j00 + g_tc1 * j10
                g_v += g_tc0 * j01 + g_tc1 * j11
            else:
                if -3.0 < u < 3.0:
                    g_u += g_tc0 / 6.0
                if -3.0 < v < 3.0:
                    g_v += g_tc1 / 6.0

        # geometry chain
        col = p % width
        row = p // width
        rx = (col + 0.5 - cx) / fx
        ry = (row + 0.5 - cy) / fy
        if planar:
            ox = rx; oy = ry
            dx = 0.0; dy = 0.0
        else:
            ox = 0.0; oy = 0.0
            dx = rx; dy = ry
        z = zz[i]
        ux = axes[k, 0, 0]; uy = axes[k, 1, 0]; uz = axes[k, 2, 0]
        vx = axes[k, 0, 1]; vy = axes[k, 1, 1]; vz = axes[k, 2, 1]
        nx = axes[k, 0, 2]; ny = axes[k, 1, 2]; nz = axes[k, 2, 2]
        den = nx * dx + ny * dy + nz
        ex = ox + z * dx - mu[k, 0]
        ey = oy + z * dy - mu[k, 1]
        ez = z - mu[k, 2]

        gus = g_u / s[k, 0]
        gvs = g_v / s[k, 1]
        a_t = gus * (dx * ux + dy * uy + uz) + gvs * (dx * vx + dy * vy + vz)
        atd = a_t / den

        d_logs[k, 0] += -g_u * u
        d_logs[k, 1] += -g_v * v
        acc_mu[k, 0] += -gus * ux - gvs * vx + atd * nx
        acc_mu[k, 1] += -gus * uy - gvs * vy + atd * ny
        acc_mu[k, 2] += -gus * uz - gvs * vz + atd * nz
        acc_u[k, 0] += gus * ex
        acc_u[k, 1] += gus * ey
        acc_u[k, 2] += gus * ez
        acc_v[k, 0] += gvs * ex
        acc_v[k, 1] += gvs * ey
        acc_v[k, 2] += gvs * ez
        acc_n[k, 0] += -atd * ex
        acc_n[k, 1] += -atd * ey
        acc_n[k, 2] += -atd * ez
