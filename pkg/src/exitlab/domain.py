"""Discretized metric domains: interval grids, rectangular grids, weighted metric graphs.

Each backend is a finite graph whose shortest-path metric plays the role of the
space metric. Continuous positions (points) live on the geometry itself:
scalars on the interval, planar coordinates on the 2d grid, and (u, v, s)
edge offsets on a metric graph. Geodesics are realized exactly on the graph,
so the geodesic constant is 1 by construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

SQRT2 = float(np.sqrt(2.0))


class DomainError(ValueError):
    """Invalid node, point, or domain construction."""


@dataclass
class HypothesisCheck:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class HypothesisReport:
    checks: list[HypothesisCheck] = field(default_factory=list)

    def add(self, name, passed, detail=""):
        self.checks.append(HypothesisCheck(name, bool(passed), detail))

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def as_dict(self):
        return [
            {"name": c.name, "passed": c.passed, "detail": c.detail}
            for c in self.checks
        ]


class SpatialDomain:
    """Base for the three discretization backends.

    Attributes shared by all backends:
      kind            backend name
      n_nodes         number of grid/graph nodes
      dx              grid spacing (min edge length on graphs)
      origin          index of the distinguished node
      targets         sorted array of target node indices
      geodesic_constant  D in the geodesic-length bound (1 on these backends)
    """

    kind = "abstract"
    geodesic_constant = 1.0

    # ---- node-level API -------------------------------------------------

    def node_coords(self):
        raise NotImplementedError

    def _check_node(self, i):
        if not (0 <= int(i) < self.n_nodes):
            raise DomainError(f"unknown node index {i} (n_nodes={self.n_nodes})")
        return int(i)

    def distance(self, i, j):
        """Shortest-path distance between two nodes."""
        raise NotImplementedError

    def geodesic(self, i, j):
        """Unit-speed shortest path i -> j as (node index list, length)."""
        raise NotImplementedError

    def distance_to_target(self, i):
        i = self._check_node(i)
        return float(self.target_node_distances()[i])

    def target_node_distances(self):
        """Distance from every node to the target set."""
        raise NotImplementedError

    def origin_node_distances(self):
        raise NotImplementedError

    def node_at(self, coord):
        """Index of the node nearest to a coordinate."""
        raise NotImplementedError

    # ---- point-level API (continuous positions) -------------------------

    def node_points(self):
        """All nodes as a batch of points."""
        raise NotImplementedError

    def points_of_nodes(self, idx):
        raise NotImplementedError

    def point_distance(self, p, q):
        """Metric distance between two point batches (broadcast elementwise)."""
        raise NotImplementedError

    def point_distance_matrix(self, ps, qs):
        raise NotImplementedError

    def nodes_to_points_distance(self, ps):
        """(n_nodes, m) distances from every node to each point."""
        raise NotImplementedError

    def point_origin_distance(self, ps):
        raise NotImplementedError

    def point_target_distance(self, ps):
        raise NotImplementedError

    def interp(self, node_values, ps):
        """Interpolate a per-node field at continuous points."""
        raise NotImplementedError

    def reach_candidates(self, ps, r):
        """Candidate moves of metric length <= r from each point.

        Returns (cand, disp, valid): cand is a (m, S, ...) point batch, disp
        the metric displacement per slot, valid a mask. Slot 0 is the null
        step; further slots are ordered by the deterministic direction
        convention (sphere endpoints, then in-ball nodes in ascending order).
        Candidates that would leave the domain are marked invalid.
        """
        raise NotImplementedError

    def snap_to_target(self, ps):
        """Snap points within dx/2 of a target node onto it.

        Returns (snapped point batch, target node index per point or -1).
        """
        raise NotImplementedError

    def validate_points(self, ps):
        raise NotImplementedError


class IntervalDomain(SpatialDomain):
    """1d interval [lo, hi] sampled with uniform spacing dx."""

    kind = "interval"

    def __init__(self, lo, hi, dx, targets, origin=None):
        if hi <= lo:
            raise DomainError("interval requires hi > lo")
        if dx <= 0:
            raise DomainError("dx must be positive")
        n = int(round((hi - lo) / dx)) + 1
        self.lo, self.hi = float(lo), float(hi)
        self.dx = (self.hi - self.lo) / (n - 1)
        self.coords = np.linspace(self.lo, self.hi, n)
        self.n_nodes = n
        self.targets = np.array(sorted({self.node_at(c) for c in targets}), dtype=int)
        if origin is None:
            origin = self.lo
        self.origin = self.node_at(origin)
        self._target_dist = None

    def node_coords(self):
        return self.coords

    def node_at(self, coord):
        i = int(round((float(coord) - self.lo) / self.dx))
        if not (0 <= i < self.n_nodes) or abs(self.coords[min(max(i, 0), self.n_nodes - 1)] - coord) > self.dx / 2 + 1e-9:
            raise DomainError(f"coordinate {coord} outside [{self.lo}, {self.hi}]")
        return i

    def distance(self, i, j):
        return abs(self.coords[self._check_node(i)] - self.coords[self._check_node(j)])

    def geodesic(self, i, j):
        i, j = self._check_node(i), self._check_node(j)
        step = 1 if j >= i else -1
        path = list(range(i, j + step, step)) if i != j else [i]
        return path, self.distance(i, j)

    def target_node_distances(self):
        if self._target_dist is None:
            tc = self.coords[self.targets]
            self._target_dist = np.min(np.abs(self.coords[:, None] - tc[None, :]), axis=1)
        return self._target_dist

    def origin_node_distances(self):
        return np.abs(self.coords - self.coords[self.origin])

    # points are plain float arrays of shape (m,)
    def node_points(self):
        return self.coords.copy()

    def points_of_nodes(self, idx):
        return self.coords[np.asarray(idx, dtype=int)]

    def point_distance(self, p, q):
        return np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float))

    def point_distance_matrix(self, ps, qs):
        return np.abs(np.asarray(ps, dtype=float)[:, None] - np.asarray(qs, dtype=float)[None, :])

    def nodes_to_points_distance(self, ps):
        return np.abs(self.coords[:, None] - np.asarray(ps, dtype=float)[None, :])

    def point_origin_distance(self, ps):
        return np.abs(np.asarray(ps, dtype=float) - self.coords[self.origin])

    def point_target_distance(self, ps):
        tc = self.coords[self.targets]
        return np.min(np.abs(np.asarray(ps, dtype=float)[:, None] - tc[None, :]), axis=1)

    def interp(self, node_values, ps):
        return np.interp(np.asarray(ps, dtype=float), self.coords, node_values)

    def reach_candidates(self, ps, r):
        ps = np.asarray(ps, dtype=float)
        r = np.broadcast_to(np.asarray(r, dtype=float), ps.shape)
        m = ps.shape[0]
        n_ball = int(np.floor(np.max(r, initial=0.0) / self.dx + 1e-9)) * 2 + 2
        S = 3 + n_ball
        cand = np.empty((m, S))
        valid = np.zeros((m, S), dtype=bool)
        cand[:, 0] = ps
        valid[:, 0] = True
        # sphere endpoints, left before right
        for s, sgn in ((1, -1.0), (2, 1.0)):
            q = ps + sgn * r
            ok = (q >= self.lo - 1e-12) & (q <= self.hi + 1e-12)
            cand[:, s] = np.clip(q, self.lo, self.hi)
            valid[:, s] = ok
        # nodes inside the closed ball, ascending coordinate
        i_lo = np.ceil((ps - r - self.lo) / self.dx - 1e-9).astype(int)
        i_hi = np.floor((ps + r - self.lo) / self.dx + 1e-9).astype(int)
        for s in range(n_ball):
            idx = i_lo + s
            ok = (idx <= i_hi) & (idx >= 0) & (idx < self.n_nodes)
            safe = np.clip(idx, 0, self.n_nodes - 1)
            cand[:, 3 + s] = self.coords[safe]
            valid[:, 3 + s] = ok
        disp = np.abs(cand - ps[:, None])
        disp[~valid] = np.inf
        return cand, disp, valid

    def snap_to_target(self, ps):
        ps = np.asarray(ps, dtype=float).copy()
        tc = self.coords[self.targets]
        d = np.abs(ps[:, None] - tc[None, :])
        j = np.argmin(d, axis=1)
        hit = d[np.arange(len(ps)), j] <= self.dx / 2 + 1e-12
        ps[hit] = tc[j[hit]]
        out = np.where(hit, self.targets[j], -1)
        return ps, out

    def validate_points(self, ps):
        ps = np.asarray(ps, dtype=float)
        if np.any(ps < self.lo - 1e-9) or np.any(ps > self.hi + 1e-9):
            raise DomainError("point outside interval domain")


class Grid2dDomain(SpatialDomain):
    """Rectangular grid on [lo_x, hi_x] x [lo_y, hi_y] with 4- or 8-connectivity.

    The metric is the shortest-path metric of the lattice extended to the
    continuum: L1 for 4-connectivity, octile for 8-connectivity.
    """

    kind = "grid2d"

    def __init__(self, lo, hi, dx, targets, origin=None, connectivity=8):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if np.any(hi <= lo):
            raise DomainError("grid2d requires hi > lo per axis")
        if connectivity not in (4, 8):
            raise DomainError("connectivity must be 4 or 8")
        self.lo, self.hi = lo, hi
        self.connectivity = int(connectivity)
        nx = int(round((hi[0] - lo[0]) / dx)) + 1
        ny = int(round((hi[1] - lo[1]) / dx)) + 1
        for extent, n in (((hi[0] - lo[0]), nx), ((hi[1] - lo[1]), ny)):
            if abs(extent / (n - 1) - dx) > 1e-9 * max(1.0, dx):
                raise DomainError(f"extent {extent} is not a multiple of dx = {dx}")
        self.shape = (nx, ny)
        self.dx = float((hi[0] - lo[0]) / (nx - 1))
        xs = np.linspace(lo[0], hi[0], nx)
        ys = np.linspace(lo[1], hi[1], ny)
        self.xs, self.ys = xs, ys
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        self.coords = np.column_stack([gx.ravel(), gy.ravel()])
        self.n_nodes = nx * ny
        self.targets = np.array(sorted({self.node_at(c) for c in targets}), dtype=int)
        self.origin = self.node_at(origin if origin is not None else lo)
        self._target_dist = None
        if self.connectivity == 8:
            self._offsets = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
        else:
            self._offsets = [(-1, 0), (0, -1), (0, 1), (1, 0)]

    def node_coords(self):
        return self.coords

    def node_at(self, coord):
        coord = np.asarray(coord, dtype=float)
        ix = int(round((coord[0] - self.lo[0]) / self.dx))
        iy = int(round((coord[1] - self.lo[1]) / self.dx))
        if not (0 <= ix < self.shape[0] and 0 <= iy < self.shape[1]):
            raise DomainError(f"coordinate {coord} outside grid")
        return ix * self.shape[1] + iy

    def _metric(self, d):
        ax = np.abs(d[..., 0])
        ay = np.abs(d[..., 1])
        if self.connectivity == 4:
            return ax + ay
        lo = np.minimum(ax, ay)
        return np.maximum(ax, ay) + (SQRT2 - 1.0) * lo

    def distance(self, i, j):
        return float(self._metric(self.coords[self._check_node(i)] - self.coords[self._check_node(j)]))

    def geodesic(self, i, j):
        i, j = self._check_node(i), self._check_node(j)
        ny = self.shape[1]
        ix, iy = divmod(i, ny)
        jx, jy = divmod(j, ny)
        path = [i]
        cx, cy = ix, iy
        while (cx, cy) != (jx, jy):
            sx = int(np.sign(jx - cx))
            sy = int(np.sign(jy - cy))
            if self.connectivity == 4 and sx != 0 and sy != 0:
                sy = 0  # axis-by-axis staircase
            cx, cy = cx + sx, cy + sy
            path.append(cx * ny + cy)
        length = sum(self.distance(a, b) for a, b in zip(path[:-1], path[1:]))
        return path, length

    def target_node_distances(self):
        if self._target_dist is None:
            d = self.coords[:, None, :] - self.coords[self.targets][None, :, :]
            self._target_dist = np.min(self._metric(d), axis=1)
        return self._target_dist

    def origin_node_distances(self):
        return self._metric(self.coords - self.coords[self.origin])

    def node_points(self):
        return self.coords.copy()

    def points_of_nodes(self, idx):
        return self.coords[np.asarray(idx, dtype=int)]

    def point_distance(self, p, q):
        return self._metric(np.asarray(p, dtype=float) - np.asarray(q, dtype=float))

    def point_distance_matrix(self, ps, qs):
        return self._metric(np.asarray(ps, dtype=float)[:, None, :] - np.asarray(qs, dtype=float)[None, :, :])

    def nodes_to_points_distance(self, ps):
        return self._metric(self.coords[:, None, :] - np.asarray(ps, dtype=float)[None, :, :])

    def point_origin_distance(self, ps):
        return self._metric(np.asarray(ps, dtype=float) - self.coords[self.origin])

    def point_target_distance(self, ps):
        d = np.asarray(ps, dtype=float)[:, None, :] - self.coords[self.targets][None, :, :]
        return np.min(self._metric(d), axis=1)

    def interp(self, node_values, ps):
        """Bilinear interpolation of a flat node field."""
        ps = np.asarray(ps, dtype=float)
        nx, ny = self.shape
        v = node_values.reshape(nx, ny)
        fx = np.clip((ps[:, 0] - self.lo[0]) / self.dx, 0, nx - 1)
        fy = np.clip((ps[:, 1] - self.lo[1]) / self.dx, 0, ny - 1)
        ix = np.minimum(fx.astype(int), nx - 2) if nx > 1 else np.zeros(len(ps), dtype=int)
        iy = np.minimum(fy.astype(int), ny - 2) if ny > 1 else np.zeros(len(ps), dtype=int)
        tx = fx - ix
        ty = fy - iy
        v00 = v[ix, iy]
        v10 = v[np.minimum(ix + 1, nx - 1), iy]
        v01 = v[ix, np.minimum(iy + 1, ny - 1)]
        v11 = v[np.minimum(ix + 1, nx - 1), np.minimum(iy + 1, ny - 1)]
        return (v00 * (1 - tx) * (1 - ty) + v10 * tx * (1 - ty)
                + v01 * (1 - tx) * ty + v11 * tx * ty)

    def _in_box(self, q):
        return np.all((q >= self.lo - 1e-12) & (q <= self.hi + 1e-12), axis=-1)

    def reach_candidates(self, ps, r):
        ps = np.asarray(ps, dtype=float)
        r = np.broadcast_to(np.asarray(r, dtype=float), (ps.shape[0],))
        m = ps.shape[0]
        w = int(np.floor(np.max(r, initial=0.0) / self.dx + 1e-9)) + 1
        node_window = [(a, b) for a in range(-w, w + 1) for b in range(-w, w + 1)]
        S = 1 + len(self._offsets) + len(node_window)
        cand = np.empty((m, S, 2))
        disp = np.full((m, S), np.inf)
        valid = np.zeros((m, S), dtype=bool)
        cand[:, 0] = ps
        disp[:, 0] = 0.0
        valid[:, 0] = True
        s = 1
        for ox, oy in self._offsets:
            unit = np.array([ox, oy], dtype=float)
            scale = r / self._metric(unit)
            q = ps + unit[None, :] * scale[:, None]
            ok = self._in_box(q)
            cand[:, s] = q
            disp[ok, s] = r[ok]
            valid[:, s] = ok
            s += 1
        ix = np.round((ps[:, 0] - self.lo[0]) / self.dx).astype(int)
        iy = np.round((ps[:, 1] - self.lo[1]) / self.dx).astype(int)
        for ox, oy in node_window:
            jx = np.clip(ix + ox, 0, self.shape[0] - 1)
            jy = np.clip(iy + oy, 0, self.shape[1] - 1)
            q = np.column_stack([self.xs[jx], self.ys[jy]])
            d = self._metric(q - ps)
            ok = d <= r + 1e-12
            cand[:, s] = q
            disp[ok, s] = d[ok]
            valid[:, s] = ok
            s += 1
        return cand, disp, valid

    def snap_to_target(self, ps):
        ps = np.asarray(ps, dtype=float).copy()
        tc = self.coords[self.targets]
        d = self._metric(ps[:, None, :] - tc[None, :, :])
        j = np.argmin(d, axis=1)
        hit = d[np.arange(len(ps)), j] <= self.dx / 2 + 1e-12
        ps[hit] = tc[j[hit]]
        out = np.where(hit, self.targets[j], -1)
        return ps, out

    def validate_points(self, ps):
        if not np.all(self._in_box(np.asarray(ps, dtype=float))):
            raise DomainError("point outside grid2d domain")


class GraphDomain(SpatialDomain):
    """Finite weighted metric graph; points are (u, v, s) edge offsets.

    A point (u, v, s) sits at distance s from node u along edge (u, v);
    nodes themselves are encoded as (i, i, 0).
    """

    kind = "graph"

    def __init__(self, n_nodes, edges, targets, origin=0, coords=None):
        self.n_nodes = int(n_nodes)
        if self.n_nodes < 1:
            raise DomainError("graph needs at least one node")
        rows, cols, vals = [], [], []
        self.edge_length = {}
        for u, v, length in edges:
            u, v, length = int(u), int(v), float(length)
            if length <= 0:
                raise DomainError(f"edge ({u},{v}) has nonpositive length")
            if u == v:
                raise DomainError(f"self-loop at node {u}")
            self._check_node(u), self._check_node(v)
            key = (min(u, v), max(u, v))
            if key in self.edge_length:
                raise DomainError(f"duplicate edge {key}")
            rows += [u, v]
            cols += [v, u]
            vals += [length, length]
            self.edge_length[key] = length
        self.adjacency = sp.csr_matrix((vals, (rows, cols)), shape=(self.n_nodes, self.n_nodes))
        self.dx = min(self.edge_length.values()) if self.edge_length else 1.0
        dm, pred = dijkstra(self.adjacency, return_predecessors=True)
        self._dm, self._pred = dm, pred
        self.targets = np.array(sorted({self._check_node(t) for t in targets}), dtype=int)
        self.origin = self._check_node(origin)
        self.coords = None if coords is None else np.asarray(coords, dtype=float)
        self._neighbors = [self.adjacency.indices[self.adjacency.indptr[i]:self.adjacency.indptr[i + 1]].tolist()
                           for i in range(self.n_nodes)]

    def node_coords(self):
        if self.coords is not None:
            return self.coords
        return np.arange(self.n_nodes, dtype=float)

    def node_at(self, node_id):
        return self._check_node(node_id)

    def distance(self, i, j):
        return float(self._dm[self._check_node(i), self._check_node(j)])

    def geodesic(self, i, j):
        i, j = self._check_node(i), self._check_node(j)
        if not np.isfinite(self._dm[i, j]):
            raise DomainError(f"nodes {i} and {j} are disconnected")
        path = [j]
        while path[-1] != i:
            path.append(int(self._pred[i, path[-1]]))
        path.reverse()
        return path, float(self._dm[i, j])

    def target_node_distances(self):
        return np.min(self._dm[:, self.targets], axis=1)

    def origin_node_distances(self):
        return self._dm[:, self.origin].copy()

    # point helpers ------------------------------------------------------

    def node_points(self):
        idx = np.arange(self.n_nodes, dtype=float)
        return np.column_stack([idx, idx, np.zeros(self.n_nodes)])

    def points_of_nodes(self, idx):
        idx = np.asarray(idx, dtype=float)
        return np.column_stack([idx, idx, np.zeros(len(idx))])

    def _edge_len(self, u, v):
        if u == v:
            return 0.0
        return self.edge_length[(min(u, v), max(u, v))]

    def _point_node_dist(self, p, nodes):
        u, v, s = int(p[0]), int(p[1]), float(p[2])
        if u == v:
            return self._dm[u, nodes]
        rem = self._edge_len(u, v) - s
        return np.minimum(s + self._dm[u, nodes], rem + self._dm[v, nodes])

    def _pair_dist(self, p, q):
        pu, pv, psg = int(p[0]), int(p[1]), float(p[2])
        qu, qv, qsg = int(q[0]), int(q[1]), float(q[2])
        nodes = np.array([qu, qv])
        offs = np.array([qsg, self._edge_len(qu, qv) - qsg if qu != qv else 0.0])
        best = np.min(self._point_node_dist(p, nodes) + offs)
        if pu != pv and {pu, pv} == {qu, qv}:
            s2 = qsg if (pu, pv) == (qu, qv) else self._edge_len(qu, qv) - qsg
            best = min(best, abs(psg - s2))
        return float(best)

    def point_distance(self, p, q):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        q = np.atleast_2d(np.asarray(q, dtype=float))
        p, q = np.broadcast_arrays(p, q)
        out = np.array([self._pair_dist(a, b) for a, b in zip(p, q)])
        return out if out.size > 1 else float(out[0])

    def point_distance_matrix(self, ps, qs):
        ps = np.atleast_2d(np.asarray(ps, dtype=float))
        qs = np.atleast_2d(np.asarray(qs, dtype=float))
        return np.array([[self._pair_dist(a, b) for b in qs] for a in ps])

    def nodes_to_points_distance(self, ps):
        ps = np.atleast_2d(np.asarray(ps, dtype=float))
        all_nodes = np.arange(self.n_nodes)
        return np.column_stack([self._point_node_dist(p, all_nodes) for p in ps])

    def point_origin_distance(self, ps):
        ps = np.atleast_2d(np.asarray(ps, dtype=float))
        return np.array([self._point_node_dist(p, np.array([self.origin]))[0] for p in ps])

    def point_target_distance(self, ps):
        ps = np.atleast_2d(np.asarray(ps, dtype=float))
        return np.array([np.min(self._point_node_dist(p, self.targets)) for p in ps])

    def interp(self, node_values, ps):
        ps = np.atleast_2d(np.asarray(ps, dtype=float))
        out = np.empty(len(ps))
        for k, p in enumerate(ps):
            u, v, s = int(p[0]), int(p[1]), float(p[2])
            if u == v:
                out[k] = node_values[u]
            else:
                t = s / self._edge_len(u, v)
                out[k] = (1 - t) * node_values[u] + t * node_values[v]
        return out

    def _point_candidates(self, p, r):
        """Null step, reachable nodes, and ball-sphere points on frontier edges."""
        u, v, s = int(p[0]), int(p[1]), float(p[2])
        cands = [(tuple(p), 0.0)]
        if u != v:
            length = self._edge_len(u, v)
            if r < s - 1e-15:
                cands.append(((float(u), float(v), s - r), r))
            if r < length - s - 1e-15:
                cands.append(((float(u), float(v), s + r), r))
        all_nodes = np.arange(self.n_nodes)
        dists = self._point_node_dist(p, all_nodes)
        inside = [(int(y), float(dists[y])) for y in all_nodes if dists[y] <= r + 1e-12]
        inside.sort()
        for y, dy in inside:
            cands.append(((float(y), float(y), 0.0), dy))
            for z in self._neighbors[y]:
                rem = r - dy
                ell = self._edge_len(y, z)
                if 1e-15 < rem < ell - 1e-15 and dists[z] > r + 1e-12:
                    a, b = (y, z) if y < z else (z, y)
                    off = rem if a == y else ell - rem
                    cands.append(((float(a), float(b), off), r))
        return cands

    def reach_candidates(self, ps, r):
        ps = np.atleast_2d(np.asarray(ps, dtype=float))
        r = np.broadcast_to(np.asarray(r, dtype=float), (len(ps),))
        rows = [self._point_candidates(p, ri) for p, ri in zip(ps, r)]
        S = max(len(row) for row in rows)
        cand = np.zeros((len(ps), S, 3))
        disp = np.full((len(ps), S), np.inf)
        valid = np.zeros((len(ps), S), dtype=bool)
        for k, row in enumerate(rows):
            for s, (pt, d) in enumerate(row):
                cand[k, s] = pt
                disp[k, s] = d
                valid[k, s] = True
        return cand, disp, valid

    def snap_to_target(self, ps):
        ps = np.atleast_2d(np.asarray(ps, dtype=float)).copy()
        out = np.full(len(ps), -1, dtype=int)
        for k, p in enumerate(ps):
            d = self._point_node_dist(p, self.targets)
            j = int(np.argmin(d))
            if d[j] <= self.dx / 2 + 1e-12:
                t = self.targets[j]
                ps[k] = (float(t), float(t), 0.0)
                out[k] = t
        return ps, out

    def validate_points(self, ps):
        ps = np.atleast_2d(np.asarray(ps, dtype=float))
        for p in ps:
            u, v, s = int(p[0]), int(p[1]), float(p[2])
            self._check_node(u), self._check_node(v)
            if u != v and not (0 <= s <= self._edge_len(u, v) + 1e-9):
                raise DomainError(f"offset {s} outside edge ({u},{v})")


class ExitCost:
    """Exit cost g on the target set with its Lipschitz constant."""

    def __init__(self, domain, values, lipschitz_constant=None):
        self.domain = domain
        self.values = {int(k): float(v) for k, v in values.items()}
        missing = set(domain.targets.tolist()) - set(self.values)
        if missing:
            raise DomainError(f"exit cost missing target nodes {sorted(missing)}")
        for k, v in self.values.items():
            if not np.isfinite(v) or v < 0:
                raise DomainError(f"exit cost at node {k} must be finite and >= 0")
        if lipschitz_constant is None:
            lipschitz_constant = self._tightest_lipschitz()
        self.lipschitz_constant = float(lipschitz_constant)

    @classmethod
    def zero(cls, domain):
        return cls(domain, {int(t): 0.0 for t in domain.targets}, 0.0)

    @classmethod
    def constant(cls, domain, value):
        return cls(domain, {int(t): float(value) for t in domain.targets}, 0.0)

    def _tightest_lipschitz(self):
        tgt = self.domain.targets
        best = 0.0
        for a in range(len(tgt)):
            for b in range(a + 1, len(tgt)):
                d = self.domain.distance(tgt[a], tgt[b])
                if d > 0:
                    best = max(best, abs(self.values[int(tgt[a])] - self.values[int(tgt[b])]) / d)
        return best

    def at_node(self, i):
        return self.values[int(i)]

    def node_table(self):
        """Cost per node, +inf off the target set."""
        g = np.full(self.domain.n_nodes, np.inf)
        for k, v in self.values.items():
            g[k] = v
        return g

    @property
    def max_cost(self):
        return max(self.values.values())

    def lipschitz_violation(self):
        """Worst (pair, excess) over target pairs, or None when (H3) holds."""
        tgt = self.domain.targets
        worst = None
        for a in range(len(tgt)):
            for b in range(a + 1, len(tgt)):
                d = self.domain.distance(tgt[a], tgt[b])
                gap = abs(self.values[int(tgt[a])] - self.values[int(tgt[b])])
                excess = gap - self.lipschitz_constant * d - 1e-12
                if excess > 0 and (worst is None or excess > worst[2]):
                    worst = (int(tgt[a]), int(tgt[b]), excess)
        return worst


def validate_hypotheses(domain, cost=None, rng=None, samples=200):
    """Check the structural hypotheses (H1)-(H4) on a domain and exit cost.

    Failures are report entries carrying witnessing node pairs, never raises.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    report = HypothesisReport()

    finite_edges = True
    if domain.kind == "graph":
        finite_edges = all(np.isfinite(l) and l > 0 for l in domain.edge_length.values())
    report.add("H1", finite_edges and domain.n_nodes > 0,
               "finite node set with positive edge lengths: closed balls are compact")

    tgt_ok = len(domain.targets) > 0 and np.all((domain.targets >= 0) & (domain.targets < domain.n_nodes))
    report.add("H2", tgt_ok, "target set nonempty and contained in the node set"
               if tgt_ok else "target set empty or has unknown nodes")

    if cost is not None:
        worst = cost.lipschitz_violation()
        if worst is None:
            report.add("H3", True, f"L_g = {cost.lipschitz_constant:.6g} verified on all target pairs")
        else:
            report.add("H3", False,
                       f"witness pair ({worst[0]}, {worst[1]}): excess {worst[2]:.3g} over L_g bound")

    connected = True
    if domain.kind == "graph":
        connected = bool(np.all(np.isfinite(domain._dm)))
    worst_ratio = 0.0
    witness = None
    if connected and domain.n_nodes > 1:
        pairs = rng.integers(0, domain.n_nodes, size=(samples, 2))
        for i, j in pairs:
            if i == j:
                continue
            d = domain.distance(i, j)
            _, length = domain.geodesic(i, j)
            ratio = length / d
            if ratio > worst_ratio:
                worst_ratio, witness = ratio, (int(i), int(j))
    h4_ok = connected and worst_ratio <= domain.geodesic_constant + 1e-9
    detail = ("graph is disconnected" if not connected else
              f"max sampled geodesic/distance ratio {worst_ratio:.6g} at pair {witness}"
              f" (D = {domain.geodesic_constant})")
    report.add("H4", h4_ok, detail)
    return report
