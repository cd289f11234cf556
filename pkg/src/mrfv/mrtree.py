"""Graded dynamic tree of cell averages for adaptive multiresolution runs.

The tree covers a dyadic hierarchy of grids: n0 root cells at level 0,
each cell split in two per level down to the preset finest level. Nodes
live in flat dense arrays (value, detail, status byte) indexed by
off[l] + i, so structure changes are bit flips and no allocation happens
while marching. Real nodes hold cell averages (internal ones the mean of
their children), phantom nodes hold predicted values so that every leaf
has two same-level neighbors per side and every prediction stencil is
complete. The heavy per-step maintenance is delegated to the compiled
helpers in kernels.py; this module owns setup, inspection and auditing.
"""

import math

import numpy as np

from .errors import ConfigError, NumericalError
from .fvcore import initial_averages
from .models import ModelSpec, check_gamma_alignment
from . import kernels
from .kernels import DELETABLE, EXISTS, PINNED, VIRTUAL


def level_tolerance(epsilon, level, levels):
    """Detail threshold applied at a given level for preset tolerance
    `epsilon` at the finest level."""
    return epsilon * 2.0 ** (level - levels)


def _neighbor_columns(vp, periodic):
    if periodic:
        return np.roll(vp, 1), np.roll(vp, -1)
    return (np.concatenate((vp[:1], vp[:-1])),
            np.concatenate((vp[1:], vp[-1:])))


def multiresolution_encode(fine, n0, levels, periodic):
    """Transform finest-level cell averages into the dense pyramid.

    Returns (value, detail) arrays in tree layout: values at every level
    by pairwise averaging, details as the deviation of each node from the
    third-order prediction off its parent level.
    """
    fine = np.asarray(fine, dtype=np.float64)
    if fine.size != n0 << levels:
        raise ConfigError(
            f"expected {n0 << levels} finest-level averages, got {fine.size}")
    off = offsets(n0, levels)
    value = np.zeros(off[levels + 1])
    detail = np.zeros(off[levels + 1])
    value[off[levels]:off[levels + 1]] = fine
    for l in range(levels, 0, -1):
        vl = value[off[l]:off[l + 1]]
        value[off[l - 1]:off[l]] = 0.5 * (vl[::2] + vl[1::2])
    for l in range(1, levels + 1):
        vp = value[off[l - 1]:off[l]]
        vm, vq = _neighbor_columns(vp, periodic)
        c = 0.125 * (vq - vm)
        vl = value[off[l]:off[l + 1]]
        dl = detail[off[l]:off[l + 1]]
        dl[::2] = vl[::2] - (vp - c)
        dl[1::2] = vl[1::2] - (vp + c)
    return value, detail


def multiresolution_decode(roots, detail, n0, levels, periodic):
    """Inverse transform: root averages plus details back to the finest
    level."""
    off = offsets(n0, levels)
    cur = np.asarray(roots, dtype=np.float64).copy()
    if cur.size != n0:
        raise ConfigError(f"expected {n0} root averages, got {cur.size}")
    for l in range(1, levels + 1):
        vm, vq = _neighbor_columns(cur, periodic)
        c = 0.125 * (vq - vm)
        dl = detail[off[l]:off[l + 1]]
        nxt = np.empty(cur.size * 2)
        nxt[::2] = (cur - c) + dl[::2]
        nxt[1::2] = (cur + c) + dl[1::2]
        cur = nxt
    return cur


def reconstruct_from_leaves(lev, col, val, n0, levels, periodic):
    """Finest-level cell averages from a leaf partition by the zero-detail
    inverse transform: leaf values project up to their ancestors, then the
    cascade predicts downward, keeping stored values wherever a cell is a
    leaf or an ancestor of one. Exact on regions already at the finest
    level; third-order (quadratic-exact) inside coarser leaves."""
    lev = np.asarray(lev)
    col = np.asarray(col)
    val = np.asarray(val, dtype=np.float64)
    pv = [np.zeros(n0 << l) for l in range(levels + 1)]
    real = [np.zeros(n0 << l, dtype=bool) for l in range(levels + 1)]
    for l in range(levels + 1):
        sel = lev == l
        pv[l][col[sel]] = val[sel]
        real[l][col[sel]] = True
    for l in range(levels, 0, -1):
        pair = real[l][::2] & real[l][1::2]
        up = pair & ~real[l - 1]
        pv[l - 1][up] = 0.5 * (pv[l][::2] + pv[l][1::2])[up]
        real[l - 1] |= up
    if not real[0].all():
        raise ConfigError("leaf set does not cover the domain")
    cur = pv[0]
    for l in range(1, levels + 1):
        vm, vq = _neighbor_columns(cur, periodic)
        c = 0.125 * (vq - vm)
        nxt = np.empty(cur.size * 2)
        nxt[::2] = cur - c
        nxt[1::2] = cur + c
        r = real[l]
        nxt[r] = pv[l][r]
        cur = nxt
    return cur


def offsets(n0, levels):
    off = np.empty(levels + 2, dtype=np.int64)
    for l in range(levels + 2):
        off[l] = n0 * ((1 << l) - 1)
    return off


class GradedTree:
    """Dense-array adaptive tree bound to one model and tolerance."""

    def __init__(self, model: ModelSpec, levels: int, epsilon: float, n0: int = 1):
        if levels < 1:
            raise ConfigError(f"levels must be >= 1, got {levels}")
        if n0 < 1:
            raise ConfigError(f"n0 must be >= 1, got {n0}")
        if not epsilon >= 0.0:
            raise ConfigError(f"epsilon must be >= 0, got {epsilon}")
        check_gamma_alignment(model, levels, n0)
        self.model = model
        self.levels = levels
        self.n0 = n0
        self.epsilon = float(epsilon)
        self.periodic = model.boundary == "periodic"
        self.off = offsets(n0, levels)
        total = int(self.off[levels + 1])
        self.value = np.zeros(total)
        self.detail = np.zeros(total)
        self.status = np.zeros(total, dtype=np.uint8)
        self.levelof = np.repeat(
            np.arange(levels + 1, dtype=np.int64),
            [n0 << l for l in range(levels + 1)])
        self.eps_level = np.empty(levels + 1)
        self.eps_level[0] = np.inf
        for l in range(1, levels + 1):
            self.eps_level[l] = level_tolerance(self.epsilon, l, levels)
        x_lo, x_hi = model.domain
        self.dx_level = np.empty(levels + 1)
        for l in range(levels + 1):
            self.dx_level[l] = (x_hi - x_lo) / (n0 << l)
        self.pow2 = np.array([2.0 ** d for d in range(levels + 1)])
        n_fine = n0 << levels
        self.leaf_idx = np.zeros(n_fine + 2, dtype=np.int64)
        self.virt_idx = np.zeros(8 * n_fine + 64, dtype=np.int64)
        self.meta = np.zeros(8, dtype=np.int64)

    # -- basic queries ----------------------------------------------------

    @property
    def n_fine(self):
        return self.n0 << self.levels

    @property
    def leaf_count(self):
        return int(self.meta[0])

    @property
    def virtual_count(self):
        return int(self.meta[1])

    def flat(self, level, i):
        return int(self.off[level]) + i

    def exists(self, level, i):
        return bool(self.status[self.flat(level, i)] & EXISTS)

    def is_virtual(self, level, i):
        return bool(self.status[self.flat(level, i)] & VIRTUAL)

    def is_leaf(self, level, i):
        if not self.exists(level, i):
            return False
        if level == self.levels:
            return True
        return not self.exists(level + 1, 2 * i)

    def leaves(self):
        """Ordered (level, index) pairs of the current leaf partition."""
        out = []
        for k in range(self.leaf_count):
            f = int(self.leaf_idx[k])
            l = int(self.levelof[f])
            out.append((l, f - int(self.off[l])))
        return out

    def leaf_data(self):
        """Arrays (levels, columns, values, centers, widths), left to right."""
        lc = self.leaf_count
        flats = self.leaf_idx[:lc]
        lev = self.levelof[flats]
        col = flats - self.off[lev]
        val = self.value[flats].copy()
        wid = self.dx_level[lev]
        x_lo = self.model.domain[0]
        ctr = x_lo + (col + 0.5) * wid
        return lev.copy(), col, val, ctr, wid.copy()

    def mass(self):
        lc = self.leaf_count
        flats = self.leaf_idx[:lc]
        lev = self.levelof[flats]
        return math.fsum(self.value[flats] * self.dx_level[lev])

    def reconstruct_fine(self):
        """Finest-grid cell averages by the zero-detail inverse transform."""
        lev, col, val, _, _ = self.leaf_data()
        return reconstruct_from_leaves(lev, col, val, self.n0, self.levels,
                                       self.periodic)

    def nodes(self):
        """Yield (level, index, kind, value, detail) for real and phantom
        nodes, coarse to fine."""
        for f in range(self.off[self.levels + 1]):
            st = self.status[f]
            if st & (EXISTS | VIRTUAL) == 0:
                continue
            l = int(self.levelof[f])
            i = f - int(self.off[l])
            if st & EXISTS:
                kind = "leaf" if self.is_leaf(l, i) else "internal"
            else:
                kind = "virtual"
            yield l, i, kind, float(self.value[f]), float(self.detail[f])

    # -- structure maintenance -------------------------------------------

    def sync(self):
        """Rebuild leaf list, phantom closure and phantom values after a
        direct structure edit."""
        lc = kernels.tree_walk_leaves(self.status, self.off, self.n0,
                                      self.levels, self.leaf_idx)
        vc = kernels.tree_graded(self.status, self.off, self.levelof, self.n0,
                                 self.levels, self.periodic, self.leaf_idx,
                                 lc, self.virt_idx, self.meta[1])
        kernels.tree_refresh_virtuals(self.status, self.value, self.off,
                                      self.levelof, self.n0, self.periodic,
                                      self.virt_idx, vc)
        self.meta[0] = lc
        self.meta[1] = vc

    def update(self):
        """Full maintenance pass (projection, details, coarsen, refine,
        closure); returns the number of structural changes."""
        changes = kernels.tree_update(
            self.status, self.value, self.detail, self.off, self.levelof,
            self.eps_level, self.n0, self.levels, self.periodic,
            self.leaf_idx, self.virt_idx, self.meta)
        if self.meta[1] > self.virt_idx.size - 16:
            raise NumericalError("phantom-node list capacity exceeded")
        return int(changes)

    # -- validation -------------------------------------------------------

    def audit(self):
        """Check structural invariants; returns a list of violation
        messages (empty when the tree is sound)."""
        bad = []
        L, n0 = self.levels, self.n0
        st = self.status

        def avail(l, i):
            n = n0 << l
            if self.periodic:
                i %= n
            elif i < 0 or i >= n:
                return True  # nothing required outside an open domain
            return bool(st[self.off[l] + i] & (EXISTS | VIRTUAL))

        for r in range(n0):
            if not st[self.off[0] + r] & EXISTS:
                bad.append(f"root {r} missing")
            if not st[self.off[1] + 2 * r] & EXISTS:
                bad.append(f"root {r} has no children")
        for f in range(int(self.off[L + 1])):
            s = st[f]
            if s == 0:
                continue
            l = int(self.levelof[f])
            i = f - int(self.off[l])
            if s & EXISTS and s & VIRTUAL:
                bad.append(f"({l},{i}) both real and phantom")
            if s & PINNED and not s & EXISTS:
                bad.append(f"({l},{i}) pinned but not real")
            if s & VIRTUAL and l == 0:
                bad.append(f"({l},{i}) phantom at root level")
            if l == 0:
                continue
            p = i >> 1
            if s & EXISTS:
                if not st[self.off[l - 1] + p] & EXISTS:
                    bad.append(f"({l},{i}) real without real parent")
                if not st[self.off[l] + (i ^ 1)] & EXISTS:
                    bad.append(f"({l},{i}) real without sibling")
                for d in (-1, 1):
                    if not avail(l - 1, p + d):
                        bad.append(f"({l},{i}) prediction stencil open at "
                                   f"parent{d:+d}")
            elif s & VIRTUAL:
                for d in (-1, 0, 1):
                    if not avail(l - 1, p + d):
                        bad.append(f"({l},{i}) phantom stencil open at "
                                   f"parent{d:+d}")
        for l, i in self.leaves():
            for d in (-2, -1, 1, 2):
                if not avail(l, i + d):
                    bad.append(f"leaf ({l},{i}) missing cousin {d:+d}")
        # cached lists must match the structure
        fresh = np.zeros_like(self.leaf_idx)
        lc = kernels.tree_walk_leaves(st, self.off, n0, L, fresh)
        if lc != self.leaf_count or not np.array_equal(
                fresh[:lc], self.leaf_idx[:lc]):
            bad.append("leaf list out of sync")
        listed = set(int(v) for v in self.virt_idx[:self.virtual_count])
        marked = set(int(f) for f in np.nonzero(st & VIRTUAL)[0])
        if listed != marked:
            bad.append("phantom list out of sync")
        return bad


def _pin_chain(tree: GradedTree, cell: int):
    """Force the ancestor chain of a finest-level cell into the tree and
    pin it against coarsening."""
    L = tree.levels
    for l in range(1, L + 1):
        c = cell >> (L - l)
        base = c & ~1
        fb = tree.flat(l, base)
        tree.status[fb] |= EXISTS
        tree.status[fb + 1] |= EXISTS
        tree.status[tree.flat(l, c)] |= PINNED


def init_tree(model: ModelSpec, levels: int, epsilon: float, n0: int = 1):
    """Build the adaptive tree for the model's initial data.

    The initial averages are computed exactly on the finest grid, encoded
    into the full pyramid, and the structure is then coarsened/refined to
    a fixed point of the maintenance pass. Cells flanking each flux
    discontinuity stay at the finest level permanently.
    """
    tree = GradedTree(model, levels, epsilon, n0)
    fine = initial_averages(model, tree.n_fine)
    value, detail = multiresolution_encode(fine, n0, levels, tree.periodic)
    tree.value[:] = value
    tree.detail[:] = detail
    tree.status[:] = EXISTS
    tree.sync()
    for _ in range(levels + 3):
        if tree.update() == 0:
            break
    x_lo = model.domain[0]
    dxf = tree.dx_level[levels]
    for b in model.gamma_breaks:
        k = int(round((b - x_lo) / dxf))
        if tree.periodic:
            cells = ((k - 1) % tree.n_fine, k % tree.n_fine)
        else:
            cells = (k - 1, k)
        for cell in cells:
            if 0 <= cell < tree.n_fine:
                _pin_chain(tree, cell)
    tree.sync()
    for _ in range(levels + 3):
        if tree.update() == 0:
            break
    return tree
