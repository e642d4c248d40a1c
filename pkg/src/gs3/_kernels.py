"""Numba kernels for the tiled rasterizer and the light-space shadow pass.

Layout: splats are compacted arrays (mean2d, conic, opacity, depth, payload);
tiles hold CSR lists of splat indices sorted front-to-back. Forward kernels
parallelize over tiles (tiles own disjoint pixels, so any thread count gives
bit-identical images). Backward kernels write gradients into per-entry slots
(one slot per tile/splat pair) which the caller reduces per gaussian in a
fixed order, so gradients are thread-count independent too. Each tile gathers
its splats into compact local arrays once and reuses them across its pixels;
the inner loops then run on contiguous memory.

Compositing at a pixel, front to back over the tile list:

    stop once running transmittance < stop_T, else
    alpha = opacity * exp(-0.5 d^T conic d); skipped entirely if < skip_alpha
    color += payload * alpha * T;  T *= 1 - alpha

and the background payload enters with the final transmittance. The shadow
kernel instead records, for every ray a splat covers, the transmittance of
strictly-nearer splats ("nearer" meaning depth < splat depth - bias), weighted
by the splat's own 2D density; receivers and occluders share the skip rule.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True)
def tile_bounds(mean2d, radius, tile_size, tiles_x, tiles_y):
    """Clipped [x0, x1) x [y0, y1) tile spans for each splat."""
    m = mean2d.shape[0]
    out = np.empty((m, 4), dtype=np.int64)
    for i in range(m):
        x0 = int(np.floor((mean2d[i, 0] - radius[i]) / tile_size))
        x1 = int(np.floor((mean2d[i, 0] + radius[i]) / tile_size)) + 1
        y0 = int(np.floor((mean2d[i, 1] - radius[i]) / tile_size))
        y1 = int(np.floor((mean2d[i, 1] + radius[i]) / tile_size)) + 1
        out[i, 0] = max(x0, 0)
        out[i, 1] = min(x1, tiles_x)
        out[i, 2] = max(y0, 0)
        out[i, 3] = min(y1, tiles_y)
    return out


@njit(cache=True)
def build_tile_lists(order, bounds, tiles_x, tiles_y):
    """CSR tile lists from splats visited in sorted order (keeps segments sorted)."""
    n_tiles = tiles_x * tiles_y
    counts = np.zeros(n_tiles + 1, dtype=np.int64)
    for oi in range(order.shape[0]):
        s = order[oi]
        for ty in range(bounds[s, 2], bounds[s, 3]):
            for tx in range(bounds[s, 0], bounds[s, 1]):
                counts[ty * tiles_x + tx + 1] += 1
    ptr = np.cumsum(counts)
    entries = np.empty(ptr[-1], dtype=np.int64)
    cursor = ptr[:-1].copy()
    for oi in range(order.shape[0]):
        s = order[oi]
        for ty in range(bounds[s, 2], bounds[s, 3]):
            for tx in range(bounds[s, 0], bounds[s, 1]):
                t = ty * tiles_x + tx
                entries[cursor[t]] = s
                cursor[t] += 1
    return ptr, entries


@njit(cache=True, parallel=True)
def composite_forward(ptr, entries, mean2d, conic, opacity, colors, bg,
                      width, height, tile_size, tiles_x, tiles_y,
                      skip_alpha, stop_t, out_img, out_T, out_n):
    n_tiles = tiles_x * tiles_y
    channels = colors.shape[1]
    for tid in prange(n_tiles):
        tx = tid % tiles_x
        ty = tid // tiles_x
        px0 = tx * tile_size
        py0 = ty * tile_size
        px1 = min(px0 + tile_size, width)
        py1 = min(py0 + tile_size, height)
        i0 = ptr[tid]
        i1 = ptr[tid + 1]
        k = i1 - i0
        lmx = np.empty(k)
        lmy = np.empty(k)
        lca = np.empty(k)
        lcb = np.empty(k)
        lcc = np.empty(k)
        lop = np.empty(k)
        lthr = np.empty(k)
        lcol = np.empty((k, channels))
        for j in range(k):
            s = entries[i0 + j]
            lmx[j] = mean2d[s, 0]
            lmy[j] = mean2d[s, 1]
            lca[j] = conic[s, 0]
            lcb[j] = conic[s, 1]
            lcc[j] = conic[s, 2]
            lop[j] = opacity[s]
            lthr[j] = np.log(skip_alpha / opacity[s])
            for c in range(channels):
                lcol[j, c] = colors[s, c]
        acc = np.empty(channels)
        for py in range(py0, py1):
            for px in range(px0, px1):
                T = 1.0
                for c in range(channels):
                    acc[c] = 0.0
                done = 0
                for j in range(k):
                    if T < stop_t:
                        break
                    dx = (px + 0.5) - lmx[j]
                    dy = (py + 0.5) - lmy[j]
                    power = -0.5 * (lca[j] * dx * dx + lcc[j] * dy * dy) - lcb[j] * dx * dy
                    done = j + 1
                    if power < lthr[j] or power > 0.0:
                        continue
                    alpha = lop[j] * np.exp(power)
                    for c in range(channels):
                        acc[c] += lcol[j, c] * alpha * T
                    T *= 1.0 - alpha
                for c in range(channels):
                    out_img[py, px, c] = acc[c] + bg[c] * T
                out_T[py, px] = T
                out_n[py, px] = done


@njit(cache=True, parallel=True)
def composite_backward(ptr, entries, mean2d, conic, opacity, colors, bg,
                       width, height, tile_size, tiles_x, tiles_y,
                       skip_alpha, d_img, out_T, out_n,
                       g_color, g_opac, g_mean, g_conic):
    """Per-entry gradients; replays each pixel's composition in reverse."""
    n_tiles = tiles_x * tiles_y
    channels = colors.shape[1]
    for tid in prange(n_tiles):
        tx = tid % tiles_x
        ty = tid // tiles_x
        px0 = tx * tile_size
        py0 = ty * tile_size
        px1 = min(px0 + tile_size, width)
        py1 = min(py0 + tile_size, height)
        i0 = ptr[tid]
        i1 = ptr[tid + 1]
        k = i1 - i0
        lmx = np.empty(k)
        lmy = np.empty(k)
        lca = np.empty(k)
        lcb = np.empty(k)
        lcc = np.empty(k)
        lop = np.empty(k)
        lthr = np.empty(k)
        lcol = np.empty((k, channels))
        ag_color = np.zeros((k, channels))
        ag_opac = np.zeros(k)
        ag_mean = np.zeros((k, 2))
        ag_conic = np.zeros((k, 3))
        for j in range(k):
            s = entries[i0 + j]
            lmx[j] = mean2d[s, 0]
            lmy[j] = mean2d[s, 1]
            lca[j] = conic[s, 0]
            lcb[j] = conic[s, 1]
            lcc[j] = conic[s, 2]
            lop[j] = opacity[s]
            lthr[j] = np.log(skip_alpha / opacity[s])
            for c in range(channels):
                lcol[j, c] = colors[s, c]
        S = np.empty(channels)
        for py in range(py0, py1):
            for px in range(px0, px1):
                n_done = out_n[py, px]
                if n_done == 0:
                    continue
                T = out_T[py, px]
                # suffix accumulation of payload*alpha*T beyond the current
                # splat, seeded with the background term
                for c in range(channels):
                    S[c] = bg[c] * T
                for j in range(n_done - 1, -1, -1):
                    dx = (px + 0.5) - lmx[j]
                    dy = (py + 0.5) - lmy[j]
                    power = -0.5 * (lca[j] * dx * dx + lcc[j] * dy * dy) - lcb[j] * dx * dy
                    if power < lthr[j] or power > 0.0:
                        continue
                    alpha = lop[j] * np.exp(power)
                    T = T / (1.0 - alpha)  # transmittance in front of this splat
                    d_alpha = 0.0
                    for c in range(channels):
                        g = d_img[py, px, c]
                        ag_color[j, c] += g * alpha * T
                        d_alpha += g * (lcol[j, c] * T - S[c] / (1.0 - alpha))
                    ag_opac[j] += d_alpha * alpha / lop[j]
                    d_power = d_alpha * alpha
                    ag_mean[j, 0] += d_power * (lca[j] * dx + lcb[j] * dy)
                    ag_mean[j, 1] += d_power * (lcb[j] * dx + lcc[j] * dy)
                    ag_conic[j, 0] += d_power * (-0.5 * dx * dx)
                    ag_conic[j, 1] += d_power * (-dx * dy)
                    ag_conic[j, 2] += d_power * (-0.5 * dy * dy)
                    for c in range(channels):
                        S[c] += lcol[j, c] * alpha * T
        for j in range(k):
            for c in range(channels):
                g_color[i0 + j, c] = ag_color[j, c]
            g_opac[i0 + j] = ag_opac[j]
            g_mean[i0 + j, 0] = ag_mean[j, 0]
            g_mean[i0 + j, 1] = ag_mean[j, 1]
            g_conic[i0 + j, 0] = ag_conic[j, 0]
            g_conic[i0 + j, 1] = ag_conic[j, 1]
            g_conic[i0 + j, 2] = ag_conic[j, 2]


@njit(cache=True, parallel=True)
def shadow_accumulate_forward(ptr, entries, mean2d, conic, opacity, depth,
                              width, height, tile_size, tiles_x, tiles_y,
                              skip_alpha, bias,
                              num_partial, den_partial, ray_count):
    """Density-weighted transmittance sums per entry over the tile's rays."""
    n_tiles = tiles_x * tiles_y
    for tid in prange(n_tiles):
        tx = tid % tiles_x
        ty = tid // tiles_x
        px0 = tx * tile_size
        py0 = ty * tile_size
        px1 = min(px0 + tile_size, width)
        py1 = min(py0 + tile_size, height)
        i0 = ptr[tid]
        i1 = ptr[tid + 1]
        k = i1 - i0
        if k == 0:
            continue
        lmx = np.empty(k)
        lmy = np.empty(k)
        lca = np.empty(k)
        lcb = np.empty(k)
        lcc = np.empty(k)
        lop = np.empty(k)
        lthr = np.empty(k)
        ldep = np.empty(k)
        a_num = np.zeros(k)
        a_den = np.zeros(k)
        a_cnt = np.zeros(k, dtype=np.int64)
        for j in range(k):
            s = entries[i0 + j]
            lmx[j] = mean2d[s, 0]
            lmy[j] = mean2d[s, 1]
            lca[j] = conic[s, 0]
            lcb[j] = conic[s, 1]
            lcc[j] = conic[s, 2]
            lop[j] = opacity[s]
            lthr[j] = np.log(skip_alpha / opacity[s])
            ldep[j] = depth[s]
        # beta[j] = 0 marks an entry below the contribution threshold at this ray
        beta = np.empty(k)
        for py in range(py0, py1):
            for px in range(px0, px1):
                for j in range(k):
                    dx = (px + 0.5) - lmx[j]
                    dy = (py + 0.5) - lmy[j]
                    power = -0.5 * (lca[j] * dx * dx + lcc[j] * dy * dy) - lcb[j] * dx * dy
                    if power < lthr[j] or power > 0.0:
                        beta[j] = 0.0
                    else:
                        beta[j] = np.exp(power)
                prod = 1.0
                fold = 0
                for j in range(k):
                    if beta[j] == 0.0:
                        continue
                    limit = ldep[j] - bias
                    while fold < j:
                        if ldep[fold] >= limit:
                            break
                        if beta[fold] > 0.0:
                            prod *= 1.0 - lop[fold] * beta[fold]
                        fold += 1
                    a_num[j] += beta[j] * prod
                    a_den[j] += beta[j]
                    a_cnt[j] += 1
        for j in range(k):
            num_partial[i0 + j] = a_num[j]
            den_partial[i0 + j] = a_den[j]
            ray_count[i0 + j] = a_cnt[j]


@njit(cache=True, parallel=True)
def shadow_accumulate_backward(ptr, entries, mean2d, conic, opacity, depth,
                               width, height, tile_size, tiles_x, tiles_y,
                               skip_alpha, bias, d_num, d_den,
                               g_opac, g_mean, g_conic):
    """Reverse of shadow_accumulate_forward.

    d_num/d_den are per-splat upstream gradients on the weighted sums. The
    recording splat's density gets (prod * d_num + d_den); folded occluders
    get the transmittance chain pulled back through their alphas.
    """
    n_tiles = tiles_x * tiles_y
    for tid in prange(n_tiles):
        tx = tid % tiles_x
        ty = tid // tiles_x
        px0 = tx * tile_size
        py0 = ty * tile_size
        px1 = min(px0 + tile_size, width)
        py1 = min(py0 + tile_size, height)
        i0 = ptr[tid]
        i1 = ptr[tid + 1]
        k = i1 - i0
        if k == 0:
            continue
        lmx = np.empty(k)
        lmy = np.empty(k)
        lca = np.empty(k)
        lcb = np.empty(k)
        lcc = np.empty(k)
        lop = np.empty(k)
        lthr = np.empty(k)
        ldep = np.empty(k)
        ldnum = np.empty(k)
        ldden = np.empty(k)
        ag_opac = np.zeros(k)
        ag_mean = np.zeros((k, 2))
        ag_conic = np.zeros((k, 3))
        for j in range(k):
            s = entries[i0 + j]
            lmx[j] = mean2d[s, 0]
            lmy[j] = mean2d[s, 1]
            lca[j] = conic[s, 0]
            lcb[j] = conic[s, 1]
            lcc[j] = conic[s, 2]
            lop[j] = opacity[s]
            lthr[j] = np.log(skip_alpha / opacity[s])
            ldep[j] = depth[s]
            ldnum[j] = d_num[s]
            ldden[j] = d_den[s]
        beta = np.empty(k)
        dxs = np.empty(k)
        dys = np.empty(k)
        prods = np.empty(k)
        folds = np.empty(k, dtype=np.int64)
        q = np.empty(k)
        d_beta = np.empty(k)
        d_a = np.empty(k)
        for py in range(py0, py1):
            for px in range(px0, px1):
                for j in range(k):
                    dx = (px + 0.5) - lmx[j]
                    dy = (py + 0.5) - lmy[j]
                    dxs[j] = dx
                    dys[j] = dy
                    power = -0.5 * (lca[j] * dx * dx + lcc[j] * dy * dy) - lcb[j] * dx * dy
                    if power < lthr[j] or power > 0.0:
                        beta[j] = 0.0
                    else:
                        beta[j] = np.exp(power)
                    d_beta[j] = 0.0
                    d_a[j] = 0.0
                    q[j] = 0.0
                # forward replay: per-entry fold points and prefix products
                prod = 1.0
                fold = 0
                for j in range(k):
                    if beta[j] == 0.0:
                        prods[j] = prod
                        folds[j] = fold
                        continue
                    limit = ldep[j] - bias
                    while fold < j:
                        if ldep[fold] >= limit:
                            break
                        if beta[fold] > 0.0:
                            prod *= 1.0 - lop[fold] * beta[fold]
                        fold += 1
                    prods[j] = prod
                    folds[j] = fold
                    d_beta[j] += prod * ldnum[j] + ldden[j]
                    q[j] = beta[j] * ldnum[j] * prods[j]
                # suffix sums: d_a[m] = -sum_{j: folds[j] > m} q[j] / (1 - a_m)
                s_acc = 0.0
                jj = k - 1
                for m in range(k - 1, -1, -1):
                    while jj >= 0 and folds[jj] > m:
                        s_acc += q[jj]
                        jj -= 1
                    if beta[m] > 0.0 and s_acc != 0.0:
                        d_a[m] += -s_acc / (1.0 - lop[m] * beta[m])
                # chain to opacity / mean2d / conic per entry
                for j in range(k):
                    total_d_beta = d_beta[j]
                    if beta[j] > 0.0 and d_a[j] != 0.0:
                        ag_opac[j] += d_a[j] * beta[j]
                        total_d_beta += d_a[j] * lop[j]
                    if total_d_beta == 0.0 or beta[j] == 0.0 or beta[j] >= 1.0:
                        continue
                    d_power = total_d_beta * beta[j]
                    dx = dxs[j]
                    dy = dys[j]
                    ag_mean[j, 0] += d_power * (lca[j] * dx + lcb[j] * dy)
                    ag_mean[j, 1] += d_power * (lcb[j] * dx + lcc[j] * dy)
                    ag_conic[j, 0] += d_power * (-0.5 * dx * dx)
                    ag_conic[j, 1] += d_power * (-dx * dy)
                    ag_conic[j, 2] += d_power * (-0.5 * dy * dy)
        for j in range(k):
            g_opac[i0 + j] = ag_opac[j]
            g_mean[i0 + j, 0] = ag_mean[j, 0]
            g_mean[i0 + j, 1] = ag_mean[j, 1]
            g_conic[i0 + j, 0] = ag_conic[j, 0]
            g_conic[i0 + j, 1] = ag_conic[j, 1]
            g_conic[i0 + j, 2] = ag_conic[j, 2]
