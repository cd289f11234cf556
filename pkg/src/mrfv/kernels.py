"""Compiled inner loops (numba) for the two model families.

The kernels mirror the numpy-lane arithmetic of fvcore.py operation for
operation: same flux formulas, same Engquist-Osher knot walk, same lookup
table interpolation, strict IEEE semantics (no fastmath). They exist so
that solver timings measure the scheme, not Python dispatch.

Signatures are positional and family-specific; uniform_stepper() hides the
unpacking behind a closure. The .py_func attribute of each jitted function
remains callable for debugging.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .errors import ConfigError

__all__ = ["uniform_stepper"]


# ---------------------------------------------------------------------------
# pointwise model evaluations

@njit(cache=True)
def clar_flux(g1, g2, u, uf, vinf, cexp, umax):
    fb = 0.0
    if 0.0 < u < umax:
        fb = vinf * u * (1.0 - u) ** cexp
    return g2 * (u - uf) + g1 * fb


@njit(cache=True)
def clar_A(u, gel, umax, apoly):
    if u <= gel:
        return 0.0
    x = u
    if x < 0.0:
        x = 0.0
    elif x > umax:
        x = umax
    acc = apoly[0]
    for k in range(1, apoly.size):
        acc = acc * x + apoly[k]
    return acc


@njit(cache=True)
def traf_flux(vmax, u, umax, clog):
    if u <= 0.0 or u >= umax:
        return 0.0
    v = clog * np.log(umax / u)
    if v > 1.0:
        v = 1.0
    return vmax * u * v


@njit(cache=True)
def traf_A(u, du, grid, table, slope):
    x = u
    if x < 0.0:
        x = 0.0
    elif x > grid[grid.size - 1]:
        x = grid[grid.size - 1]
    k = int(x / du)
    if k < 0:
        k = 0
    elif k > slope.size - 1:
        k = slope.size - 1
    return table[k] + (x - grid[k]) * slope[k]


# ---------------------------------------------------------------------------
# Engquist-Osher fluxes, knot walk identical to fvcore._eo_branch

@njit(cache=True)
def eo_clar(g1, g2, ul, ur, knots_row, uf, vinf, cexp, umax):
    lo = min(ul, ur)
    hi = max(ul, ur)
    ful = clar_flux(g1, g2, ul, uf, vinf, cexp, umax)
    fur = clar_flux(g1, g2, ur, uf, vinf, cexp, umax)
    if ul <= ur:
        prev = ful
        fhi = fur
    else:
        prev = fur
        fhi = ful
    phi = 0.0
    for k in range(knots_row.size):
        c = knots_row[k]
        if c < lo:
            c = lo
        elif c > hi:
            c = hi
        fp = clar_flux(g1, g2, c, uf, vinf, cexp, umax)
        phi = phi + abs(fp - prev)
        prev = fp
    phi = phi + abs(fhi - prev)
    sgn = 0.0
    if ur > ul:
        sgn = 1.0
    elif ur < ul:
        sgn = -1.0
    return 0.5 * (ful + fur - sgn * phi)


@njit(cache=True)
def eo_traf(vmax, ul, ur, knots_row, umax, clog):
    lo = min(ul, ur)
    hi = max(ul, ur)
    ful = traf_flux(vmax, ul, umax, clog)
    fur = traf_flux(vmax, ur, umax, clog)
    if ul <= ur:
        prev = ful
        fhi = fur
    else:
        prev = fur
        fhi = ful
    phi = 0.0
    for k in range(knots_row.size):
        c = knots_row[k]
        if c < lo:
            c = lo
        elif c > hi:
            c = hi
        fp = traf_flux(vmax, c, umax, clog)
        phi = phi + abs(fp - prev)
        prev = fp
    phi = phi + abs(fhi - prev)
    sgn = 0.0
    if ur > ul:
        sgn = 1.0
    elif ur < ul:
        sgn = -1.0
    return 0.5 * (ful + fur - sgn * phi)


# ---------------------------------------------------------------------------
# uniform-grid marching loops

@njit(cache=True)
def advance_clar(up, n, steps, lam, mu, periodic, g1, g2, gw, knots,
                 uf, vinf, cexp, umax, gel, apoly, fbuf, dbuf, abuf, unew):
    umin = np.inf
    umax_seen = -np.inf
    for _ in range(steps):
        if periodic:
            up[0] = up[n]
            up[n + 1] = up[1]
        else:
            up[0] = up[1]
            up[n + 1] = up[n]
        for i in range(n + 2):
            abuf[i] = clar_A(up[i], gel, umax, apoly)
        for i in range(n + 1):
            fbuf[i] = eo_clar(g1[i], g2[i], up[i], up[i + 1], knots[i],
                              uf, vinf, cexp, umax)
            dbuf[i] = gw[i] * (abuf[i + 1] - abuf[i])
        if periodic:
            fbuf[0] = fbuf[n]
            dbuf[0] = dbuf[n]
        for j in range(n):
            v = up[j + 1] - lam * (fbuf[j + 1] - fbuf[j]) + mu * (dbuf[j + 1] - dbuf[j])
            unew[j] = v
            if v < umin:
                umin = v
            if v > umax_seen:
                umax_seen = v
        up[1:n + 1] = unew
    return umin, umax_seen


@njit(cache=True)
def advance_traf(up, n, steps, lam, mu, periodic, vmax, knots,
                 umax, clog, du, grid, table, slope, fbuf, dbuf, abuf, unew):
    umin = np.inf
    umax_seen = -np.inf
    for _ in range(steps):
        if periodic:
            up[0] = up[n]
            up[n + 1] = up[1]
        else:
            up[0] = up[1]
            up[n + 1] = up[n]
        for i in range(n + 2):
            abuf[i] = traf_A(up[i], du, grid, table, slope)
        for i in range(n + 1):
            fbuf[i] = eo_traf(vmax[i], up[i], up[i + 1], knots[i], umax, clog)
            dbuf[i] = abuf[i + 1] - abuf[i]
        if periodic:
            fbuf[0] = fbuf[n]
            dbuf[0] = dbuf[n]
        for j in range(n):
            v = up[j + 1] - lam * (fbuf[j + 1] - fbuf[j]) + mu * (dbuf[j + 1] - dbuf[j])
            unew[j] = v
            if v < umin:
                umin = v
            if v > umax_seen:
                umax_seen = v
        up[1:n + 1] = unew
    return umin, umax_seen


def uniform_stepper(m, iface, dx):
    """Bind model data into an in-place stepping closure.

    The returned callable advances u by `steps` steps of size dt and
    returns the (min, max) cell value seen among the updated states.
    """
    fm = m.fast
    if fm is None:
        raise ConfigError(f"model {m.name!r} carries no compiled-kernel data")
    n = len(iface.branch_idx) - 1
    periodic = m.boundary == "periodic"
    up = np.empty(n + 2)
    fbuf = np.empty(n + 1)
    dbuf = np.empty(n + 1)
    abuf = np.empty(n + 2)
    unew = np.empty(n)
    knots = np.ascontiguousarray(iface.knots)

    if fm.family == "clarifier":
        uf, vinf, cexp, umax, gel = fm.scalars
        apoly = fm.arrays["a_poly"]
        g1, g2 = iface.gamma_cols
        gw = iface.weights

        def stepper(u, steps, dt):
            up[1:n + 1] = u
            lo, hi = advance_clar(up, n, steps, dt / dx, dt / (dx * dx), periodic,
                                  g1, g2, gw, knots, uf, vinf, cexp, umax, gel,
                                  apoly, fbuf, dbuf, abuf, unew)
            u[:] = up[1:n + 1]
            return lo, hi

        return stepper

    if fm.family == "traffic":
        umax, clog, _uc, du = fm.scalars
        grid = fm.arrays["a_grid"]
        table = fm.arrays["a_table"]
        slope = fm.arrays["a_slope"]
        (vmax,) = iface.gamma_cols

        def stepper(u, steps, dt):
            up[1:n + 1] = u
            lo, hi = advance_traf(up, n, steps, dt / dx, dt / (dx * dx), periodic,
                                  vmax, knots, umax, clog, du, grid, table, slope,
                                  fbuf, dbuf, abuf, unew)
            u[:] = up[1:n + 1]
            return lo, hi

        return stepper

    raise ConfigError(f"unknown kernel family {fm.family!r}")


# ---------------------------------------------------------------------------
# graded tree primitives
#
# The tree lives in flat dense arrays indexed by off[l] + i for node i of
# level l. Status bits: EXISTS (real node), VIRTUAL (phantom stencil node
# whose value is predicted from the coarser level), DELETABLE (small
# detail, may be coarsened), PINNED (never coarsened; used to keep the
# cells flanking a flux-parameter jump at the finest level).

EXISTS = 1
VIRTUAL = 2
DELETABLE = 4
PINNED = 8


@njit(cache=True)
def nbr_index(i, n, periodic):
    """Prediction-stencil neighbor: wraps on circular domains, clamps on
    open ones (constant extension)."""
    if periodic:
        if i < 0:
            return i + n
        if i >= n:
            return i - n
        return i
    if i < 0:
        return 0
    if i >= n:
        return n - 1
    return i


@njit(cache=True)
def need_index(i, n, periodic):
    """Stencil-closure neighbor; -1 marks positions outside an open domain
    (nothing to provide there)."""
    if periodic:
        if i < 0:
            return i + n
        if i >= n:
            return i - n
        return i
    if i < 0 or i >= n:
        return -1
    return i


@njit(cache=True)
def predict_child(vm, v0, vp, odd):
    """Third-order cell-average prediction from a parent and its neighbors."""
    c = 0.125 * (vp - vm)
    if odd:
        return v0 + c
    return v0 - c


@njit(cache=True)
def tree_walk_leaves(status, off, n0, levels, out):
    """Ordered left-to-right leaf enumeration; returns the leaf count."""
    cnt = 0
    sl = np.empty(2 * levels + 8, np.int64)
    si = np.empty(2 * levels + 8, np.int64)
    for r in range(n0):
        sp = 1
        sl[0] = 0
        si[0] = r
        while sp > 0:
            sp -= 1
            l = sl[sp]
            i = si[sp]
            if l < levels and (status[off[l + 1] + 2 * i] & EXISTS) != 0:
                sl[sp] = l + 1
                si[sp] = 2 * i + 1
                sp += 1
                sl[sp] = l + 1
                si[sp] = 2 * i
                sp += 1
            else:
                out[cnt] = off[l] + i
                cnt += 1
    return cnt


@njit(cache=True)
def tree_project(status, value, off, levelof, leaves, cnt):
    """Recompute every internal real value as the mean of its children.

    Sibling pairs are merged with a carry stack while scanning the ordered
    leaf list, so the cost is linear in the number of real nodes.
    """
    sl = np.empty(40, np.int64)
    sc = np.empty(40, np.int64)
    sv = np.empty(40, np.float64)
    sp = 0
    for k in range(cnt):
        f = leaves[k]
        l = levelof[f]
        sl[sp] = l
        sc[sp] = f - off[l]
        sv[sp] = value[f]
        sp += 1
        while (sp >= 2 and sl[sp - 1] >= 1 and sl[sp - 1] == sl[sp - 2]
               and (sc[sp - 2] & 1) == 0 and sc[sp - 1] == sc[sp - 2] + 1):
            pv = 0.5 * (sv[sp - 2] + sv[sp - 1])
            pl = sl[sp - 1] - 1
            pc = sc[sp - 1] >> 1
            value[off[pl] + pc] = pv
            sp -= 2
            sl[sp] = pl
            sc[sp] = pc
            sv[sp] = pv
            sp += 1


@njit(cache=True)
def tree_refresh_virtuals(status, value, off, levelof, n0, periodic, vlist, vcnt):
    """Fill virtual values by prediction, coarse to fine.

    vlist must be sorted ascending (flat order is level-major), so parent
    values, real or virtual, are current when a finer entry is reached.
    """
    for k in range(vcnt):
        f = vlist[k]
        l = levelof[f]
        i = f - off[l]
        p = i >> 1
        npar = n0 << (l - 1)
        vm = value[off[l - 1] + nbr_index(p - 1, npar, periodic)]
        v0 = value[off[l - 1] + p]
        vp = value[off[l - 1] + nbr_index(p + 1, npar, periodic)]
        value[f] = predict_child(vm, v0, vp, i & 1)


@njit(cache=True)
def detail_at(status, value, off, n0, periodic, l, i):
    """Difference between the stored value and its prediction."""
    p = i >> 1
    npar = n0 << (l - 1)
    vm = value[off[l - 1] + nbr_index(p - 1, npar, periodic)]
    v0 = value[off[l - 1] + p]
    vp = value[off[l - 1] + nbr_index(p + 1, npar, periodic)]
    return value[off[l] + i] - predict_child(vm, v0, vp, i & 1)


@njit(cache=True)
def tree_marks(status, value, detail, off, levelof, epsl, n0, periodic, leaves, cnt):
    """Store leaf details and set DELETABLE where they fall below the
    level tolerance (pinned nodes are never deletable)."""
    for k in range(cnt):
        f = leaves[k]
        l = levelof[f]
        if l == 0:
            continue
        d = detail_at(status, value, off, n0, periodic, l, f - off[l])
        detail[f] = d
        if abs(d) < epsl[l] and (status[f] & PINNED) == 0:
            status[f] |= DELETABLE
        else:
            status[f] &= ~DELETABLE & 0xFF


@njit(cache=True)
def tree_delete(status, value, detail, off, levelof, epsl, n0, levels,
                periodic, leaves, cnt):
    """Merge deletable sibling leaf pairs back into their parent.

    A pair goes only if the parent's own detail is also below tolerance
    (smooth at both scales) and no phantom stencil node sits where the
    sons' grandchildren would be. Phantoms cascade upward from the
    cousins of every real leaf, so a phantom two levels below the pair
    is exactly the signature of a real leaf more than one level finer
    within stencil reach, and deletion next to such a leaf would tear a
    hole in its stencil support. Phantoms only one level below come from
    same-depth neighbors and do not block; the closure rebuild re-covers
    them after the merge.
    """
    removed = 0
    for k in range(cnt):
        f = leaves[k]
        if (status[f] & EXISTS) == 0:
            continue
        l = levelof[f]
        if l < 2:
            continue  # level-1 pairs stay: the root is never deletable
        i = f - off[l]
        if (i & 1) != 0:
            continue
        fs = f + 1
        if (status[f] & DELETABLE) == 0 or (status[fs] & DELETABLE) == 0:
            continue
        if l < levels:
            cbase = off[l + 1] + 2 * i
            if (status[cbase] & EXISTS) != 0 or (status[cbase + 2] & EXISTS) != 0:
                continue  # a son still has children
        if l + 1 < levels:
            gbase = off[l + 2] + 4 * i
            blocked = False
            for cc in range(8):
                if (status[gbase + cc] & VIRTUAL) != 0:
                    blocked = True
                    break
            if blocked:
                continue
        p = i >> 1
        fp = off[l - 1] + p
        if (status[fp] & PINNED) != 0:
            continue
        if abs(detail_at(status, value, off, n0, periodic, l - 1, p)) >= epsl[l - 1]:
            continue
        status[f] = 0
        status[fs] = 0
        removed += 1
    return removed


@njit(cache=True)
def tree_split(status, value, detail, off, levelof, n0, levels, periodic,
               leaves, cnt):
    """Refine leaves whose detail is significant, children by prediction.

    Works off the pre-update leaf list, so freshly created children are
    not split again in the same pass.
    """
    added = 0
    for k in range(cnt):
        f = leaves[k]
        if (status[f] & EXISTS) == 0:
            continue
        l = levelof[f]
        if l >= levels or (status[f] & DELETABLE) != 0:
            continue
        i = f - off[l]
        if l >= 1 and (status[off[l + 1] + 2 * i] & EXISTS) != 0:
            continue
        nl = n0 << l
        vm = value[off[l] + nbr_index(i - 1, nl, periodic)]
        v0 = value[f]
        vp = value[off[l] + nbr_index(i + 1, nl, periodic)]
        fe = off[l + 1] + 2 * i
        value[fe] = predict_child(vm, v0, vp, 0)
        value[fe + 1] = predict_child(vm, v0, vp, 1)
        detail[fe] = 0.0
        detail[fe + 1] = 0.0
        status[fe] |= EXISTS
        status[fe + 1] |= EXISTS
        status[fe] &= ~DELETABLE & 0xFF
        status[fe + 1] &= ~DELETABLE & 0xFF
        added += 1
    return added


@njit(cache=True)
def _mark_virtual(status, vlist, vcnt, f):
    if (status[f] & (EXISTS | VIRTUAL)) == 0:
        status[f] |= VIRTUAL
        vlist[vcnt] = f
        vcnt += 1
    return vcnt


@njit(cache=True)
def tree_graded(status, off, levelof, n0, levels, periodic, leaves, cnt,
                vlist, old_vcnt):
    """Rebuild the phantom-node closure for the current real structure.

    Every real leaf gets two cousins per side at its own level, every real
    node its parent's neighbors, and every phantom its own prediction
    stencil, cascading toward the root. Returns the new phantom count;
    vlist comes back sorted so prediction order is coarse to fine.
    """
    for k in range(old_vcnt):
        status[vlist[k]] &= ~VIRTUAL & 0xFF
    vcnt = 0
    # cousins of leaves
    for k in range(cnt):
        f = leaves[k]
        l = levelof[f]
        i = f - off[l]
        nl = n0 << l
        for d in (-2, -1, 1, 2):
            j = need_index(i + d, nl, periodic)
            if j >= 0:
                vcnt = _mark_virtual(status, vlist, vcnt, off[l] + j)
    # parent neighbors of every real node, enumerated by sibling merges
    sl = np.empty(40, np.int64)
    sc = np.empty(40, np.int64)
    sp = 0
    for k in range(cnt):
        f = leaves[k]
        l = levelof[f]
        i = f - off[l]
        if l >= 1:
            p = i >> 1
            npar = n0 << (l - 1)
            for d in (-1, 1):
                j = need_index(p + d, npar, periodic)
                if j >= 0:
                    vcnt = _mark_virtual(status, vlist, vcnt, off[l - 1] + j)
        sl[sp] = l
        sc[sp] = i
        sp += 1
        while (sp >= 2 and sl[sp - 1] >= 1 and sl[sp - 1] == sl[sp - 2]
               and (sc[sp - 2] & 1) == 0 and sc[sp - 1] == sc[sp - 2] + 1):
            pl = sl[sp - 1] - 1
            pc = sc[sp - 1] >> 1
            sp -= 2
            if pl >= 1:
                p = pc >> 1
                npar = n0 << (pl - 1)
                for d in (-1, 1):
                    j = need_index(p + d, npar, periodic)
                    if j >= 0:
                        vcnt = _mark_virtual(status, vlist, vcnt, off[pl - 1] + j)
            sl[sp] = pl
            sc[sp] = pc
            sp += 1
    # prediction stencils of phantoms, cascading coarser
    rp = 0
    while rp < vcnt:
        f = vlist[rp]
        rp += 1
        l = levelof[f]
        i = f - off[l]
        p = i >> 1
        npar = n0 << (l - 1)
        for d in (-1, 0, 1):
            j = need_index(p + d, npar, periodic)
            if j >= 0:
                vcnt = _mark_virtual(status, vlist, vcnt, off[l - 1] + j)
    vlist[:vcnt].sort()
    return vcnt


@njit(cache=True)
def tree_update(status, value, detail, off, levelof, epsl, n0, levels,
                periodic, leaves, vlist, meta):
    """One structure maintenance pass after the leaves were advanced.

    Projection, phantom refresh, details and deletability marks, pair
    deletion, refinement, closure rebuild, final refresh; meta holds
    [leaf count, phantom count, structural changes]."""
    lc = meta[0]
    vc = meta[1]
    tree_project(status, value, off, levelof, leaves, lc)
    tree_refresh_virtuals(status, value, off, levelof, n0, periodic, vlist, vc)
    tree_marks(status, value, detail, off, levelof, epsl, n0, periodic, leaves, lc)
    removed = tree_delete(status, value, detail, off, levelof, epsl, n0,
                          levels, periodic, leaves, lc)
    added = tree_split(status, value, detail, off, levelof, n0, levels,
                       periodic, leaves, lc)
    lc = tree_walk_leaves(status, off, n0, levels, leaves)
    vc = tree_graded(status, off, levelof, n0, levels, periodic, leaves, lc,
                     vlist, vc)
    tree_refresh_virtuals(status, value, off, levelof, n0, periodic, vlist, vc)
    meta[0] = lc
    meta[1] = vc
    meta[2] = removed + added
    return removed + added


# ---------------------------------------------------------------------------
# fused adaptive advance
#
# One call advances `steps` steps: per step, fluxes are evaluated once per
# edge of the current leaf partition, at the finer of the two adjacent
# leaf levels, using real or phantom states at that level; then the tree
# is updated. Interface data (gamma columns, weights, split-point knots)
# is indexed on the finest-grid interface underlying each edge, so the
# scheme reduces to the uniform one when the tree is full.


@njit(cache=True)
def _mr_gather(status, value, off, levelof, leaves, lc, eLv, eIv, lvv):
    for k in range(lc):
        f = leaves[k]
        l = levelof[f]
        eLv[k] = l
        eIv[k] = f - off[l]
        lvv[k] = value[f]


@njit(cache=True)
def _box(v, umax):
    # phantom values are interpolants; clamp them into [0, umax] before
    # flux evaluation so the monotone update keeps leaves in the box
    if v < 0.0:
        return 0.0
    if v > umax:
        return umax
    return v


@njit(cache=True)
def advance_mr_clar(status, value, detail, off, levelof, epsl, n0, levels,
                    periodic, leaves, vlist, meta, steps, dt, dxl, pow2f,
                    g1f, g2f, gwf, knotsf, uf, vinf, cexp, umax, gel, apoly,
                    eLv, eIv, lvv, eE, F, Q, lamt, mut, lc_hist):
    nL = n0 << levels
    for l in range(levels + 1):
        lamt[l] = dt / dxl[l]
        mut[l] = dt / (dxl[l] * dxl[l])
    umin = np.inf
    umax_seen = -np.inf
    nclamp = 0
    for s in range(steps):
        lc = meta[0]
        _mr_gather(status, value, off, levelof, leaves, lc, eLv, eIv, lvv)
        for k in range(lc + 1):
            if not periodic and k == 0:
                lf = eLv[0]
                E = 0
                uL = lvv[0]
                uR = uL
            elif not periodic and k == lc:
                lf = eLv[lc - 1]
                E = nL
                uL = lvv[lc - 1]
                uR = uL
            else:
                a = k - 1 if k > 0 else lc - 1
                b = k if k < lc else 0
                l1 = eLv[a]
                l2 = eLv[b]
                lf = l1 if l1 > l2 else l2
                E = (eIv[b] << (levels - l2)) if k < lc else nL
                nf = n0 << lf
                colR = (E >> (levels - lf)) if lf < levels else E
                if colR >= nf:
                    colR -= nf
                colL = colR - 1
                if colL < 0:
                    colL += nf
                if l1 == lf:
                    uL = lvv[a]
                else:
                    raw = value[off[lf] + colL]
                    uL = _box(raw, umax)
                    if uL != raw:
                        nclamp += 1
                if l2 == lf:
                    uR = lvv[b]
                else:
                    raw = value[off[lf] + colR]
                    uR = _box(raw, umax)
                    if uR != raw:
                        nclamp += 1
            eE[k] = lf
            F[k] = eo_clar(g1f[E], g2f[E], uL, uR, knotsf[E], uf, vinf,
                           cexp, umax)
            Q[k] = gwf[E] * (clar_A(uR, gel, umax, apoly)
                             - clar_A(uL, gel, umax, apoly))
        if periodic:
            F[0] = F[lc]
            Q[0] = Q[lc]
            eE[0] = eE[lc]
        for j in range(lc):
            l = eLv[j]
            v = (lvv[j] - lamt[l] * (F[j + 1] - F[j])
                 + mut[l] * (Q[j + 1] * pow2f[eE[j + 1] - l]
                             - Q[j] * pow2f[eE[j] - l]))
            value[leaves[j]] = v
            if v < umin:
                umin = v
            if v > umax_seen:
                umax_seen = v
        tree_update(status, value, detail, off, levelof, epsl, n0, levels,
                    periodic, leaves, vlist, meta)
        lc_hist[s] = meta[0]
    return umin, umax_seen, nclamp


@njit(cache=True)
def advance_mr_traf(status, value, detail, off, levelof, epsl, n0, levels,
                    periodic, leaves, vlist, meta, steps, dt, dxl, pow2f,
                    vmaxf, knotsf, umax, clog, du, agrid, atable, aslope,
                    eLv, eIv, lvv, eE, F, Q, lamt, mut, lc_hist):
    nL = n0 << levels
    for l in range(levels + 1):
        lamt[l] = dt / dxl[l]
        mut[l] = dt / (dxl[l] * dxl[l])
    umin = np.inf
    umax_seen = -np.inf
    nclamp = 0
    for s in range(steps):
        lc = meta[0]
        _mr_gather(status, value, off, levelof, leaves, lc, eLv, eIv, lvv)
        for k in range(lc + 1):
            if not periodic and k == 0:
                lf = eLv[0]
                E = 0
                uL = lvv[0]
                uR = uL
            elif not periodic and k == lc:
                lf = eLv[lc - 1]
                E = nL
                uL = lvv[lc - 1]
                uR = uL
            else:
                a = k - 1 if k > 0 else lc - 1
                b = k if k < lc else 0
                l1 = eLv[a]
                l2 = eLv[b]
                lf = l1 if l1 > l2 else l2
                E = (eIv[b] << (levels - l2)) if k < lc else nL
                nf = n0 << lf
                colR = (E >> (levels - lf)) if lf < levels else E
                if colR >= nf:
                    colR -= nf
                colL = colR - 1
                if colL < 0:
                    colL += nf
                if l1 == lf:
                    uL = lvv[a]
                else:
                    raw = value[off[lf] + colL]
                    uL = _box(raw, umax)
                    if uL != raw:
                        nclamp += 1
                if l2 == lf:
                    uR = lvv[b]
                else:
                    raw = value[off[lf] + colR]
                    uR = _box(raw, umax)
                    if uR != raw:
                        nclamp += 1
            eE[k] = lf
            F[k] = eo_traf(vmaxf[E], uL, uR, knotsf[E], umax, clog)
            Q[k] = (traf_A(uR, du, agrid, atable, aslope)
                    - traf_A(uL, du, agrid, atable, aslope))
        if periodic:
            F[0] = F[lc]
            Q[0] = Q[lc]
            eE[0] = eE[lc]
        for j in range(lc):
            l = eLv[j]
            v = (lvv[j] - lamt[l] * (F[j + 1] - F[j])
                 + mut[l] * (Q[j + 1] * pow2f[eE[j + 1] - l]
                             - Q[j] * pow2f[eE[j] - l]))
            value[leaves[j]] = v
            if v < umin:
                umin = v
            if v > umax_seen:
                umax_seen = v
        tree_update(status, value, detail, off, levelof, epsl, n0, levels,
                    periodic, leaves, vlist, meta)
        lc_hist[s] = meta[0]
    return umin, umax_seen, nclamp
