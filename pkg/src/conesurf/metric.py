"""Flat shortest-path distance, the weighted geodesic metric, Bowen balls.

The geodesic-space metric integrates the pointwise surface distance of two
traces against the kernel exp(-2|s|) over a truncated window [-T, T]. The
pointwise distance along a pair of traces is evaluated by a vectorized
kernel built from three families of certified paths (shared chart, one
shared-edge crossing, one cone pivot) clamped at the surface diameter
bound; every returned value carries an explicit error bound combining
quadrature, truncation-tail and unresolved-path terms. ``dist_surface`` is
the exact reference, computed by visibility-pruned unfolding and a
Dijkstra pass through cone points.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import WindowTooSmall
from .geodesic import _interval_contains, visible_scan
from .surface import TWO_PI


@dataclass(frozen=True)
class MetricConfig:
    T: float = 8.0
    h: float = 1.0 / 64.0
    scan_budget: int = 500000

    def grid_half(self):
        return int(round(self.T / self.h))


DEFAULT_METRIC = MetricConfig()


@dataclass(frozen=True)
class DistanceValue:
    value: float
    error_bound: float

    @property
    def lo(self):
        return max(0.0, self.value - self.error_bound)

    @property
    def hi(self):
        return self.value + self.error_bound

    def definitely_le(self, eps):
        return self.hi <= eps

    def definitely_gt(self, eps):
        return self.lo > eps

    def __repr__(self):
        return f"DistanceValue({self.value:.6g} +- {self.error_bound:.2g})"


# -- exact point-to-point distance -------------------------------------------


def _point_reps(surface, chart, xy):
    """All chart representatives of a surface point (vertex/edge identifications)."""
    ch = surface.charts[chart]
    xy = np.asarray(xy, dtype=float)
    v = ch.vertex_of_point(xy)
    if v is not None:
        cls = surface.class_at(chart, v)
        return [(c2, surface.charts[c2].vertices[v2].copy()) for c2, v2 in cls.corners]
    e = ch.edge_of_point(xy)
    if e is None:
        return [(chart, xy)]
    c2, _e2, t = surface.glue(chart, e)
    return [(chart, xy), (c2, xy + t)]


def _scan_from_point(surface, chart, xy, bound, targets, budget):
    """Min straight-visibility distance from (chart, xy) to targets and cones.

    targets: list of (chart, local xy). Returns (best_target_dist, cone_dists)
    where cone_dists[k] is the best distance to cone class k.
    """
    p0 = np.asarray(xy, dtype=float)
    ch = surface.charts[chart]
    v0 = ch.vertex_of_point(p0)
    if v0 is not None:
        wedge = (
            math.atan2(ch.edge_vec[v0][1], ch.edge_vec[v0][0]) % TWO_PI,
            ch.interior_angle(v0),
        )
    else:
        wedge = None
    by_chart = {}
    for i, (tc, txy) in enumerate(targets):
        by_chart.setdefault(tc, []).append((i, np.asarray(txy, dtype=float)))
    best_t = [math.inf] * len(targets)
    best_c = [math.inf] * len(surface.cones)

    def on_copy(fr, iv):
        off = np.asarray(fr.offset)
        ch2 = surface.charts[fr.chart]
        for v2 in range(ch2.n):
            cone2 = surface.cone_at(fr.chart, v2)
            if cone2 is None:
                continue
            w = ch2.vertices[v2] + off
            d = math.hypot(w[0] - p0[0], w[1] - p0[1])
            if d <= 1e-12 or d > bound + 1e-9 or d >= best_c[cone2.id]:
                continue
            ang = math.atan2(w[1] - p0[1], w[0] - p0[0])
            if iv is None or _interval_contains(iv[0], iv[1], ang):
                best_c[cone2.id] = d
        for i, txy in by_chart.get(fr.chart, ()):
            w = txy + off
            d = math.hypot(w[0] - p0[0], w[1] - p0[1])
            if d > bound + 1e-9 or d >= best_t[i]:
                continue
            if d <= 1e-12:
                best_t[i] = d
                continue
            ang = math.atan2(w[1] - p0[1], w[0] - p0[0])
            if iv is None or _interval_contains(iv[0], iv[1], ang):
                best_t[i] = d

    visible_scan(surface, chart, p0, wedge, bound, on_copy, budget)
    return min(best_t, default=math.inf), best_c


def _cone_arcs(surface, budget=500000):
    """Shortest straight cone-to-cone distances (symmetric matrix), cached."""
    cache = surface.__dict__.get("_cone_arc_matrix")
    if cache is not None:
        return cache
    k = len(surface.cones)
    arcs = np.full((k, k), math.inf)
    bound = surface.diameter_bound
    for cone in surface.cones:
        for (c, v) in cone.vertex_orbit:
            p0 = surface.charts[c].vertices[v]
            _bt, bc = _scan_from_point(surface, c, p0, bound, [], budget)
            for j, d in enumerate(bc):
                arcs[cone.id, j] = min(arcs[cone.id, j], d)
    arcs = np.minimum(arcs, arcs.T)
    surface.__dict__["_cone_arc_matrix"] = arcs
    return arcs


def dist_point(surface, a, b, radius_bound=None, budget=500000):
    """Exact geodesic distance between two surface points (chart, xy)."""
    bound = surface.diameter_bound if radius_bound is None else float(radius_bound)
    ca, pa = surface.canonical_point(a[0], np.asarray(a[1], dtype=float))
    cb, pb = surface.canonical_point(b[0], np.asarray(b[1], dtype=float))
    if ca == cb and math.hypot(*(pa - pb)) <= 1e-12:
        return 0.0
    reps_b = _point_reps(surface, cb, pb)
    direct, a_to_cone = _scan_from_point(surface, ca, pa, bound, reps_b, budget)
    _bt, b_to_cone = _scan_from_point(surface, cb, pb, bound, [], budget)
    k = len(surface.cones)
    if k == 0:
        return direct
    arcs = _cone_arcs(surface, budget)
    # Dijkstra over {a} + cones + {b}
    dist = [math.inf] * k
    done = [False] * k
    for j in range(k):
        dist[j] = a_to_cone[j]
    best = direct
    for _ in range(k):
        u = min((d, j) for j, d in enumerate(dist) if not done[j])[1] if not all(done) else None
        if u is None or dist[u] == math.inf:
            break
        done[u] = True
        best = min(best, dist[u] + b_to_cone[u])
        for w in range(k):
            if not done[w]:
                dist[w] = min(dist[w], dist[u] + arcs[u, w])
    return float(best)


def dist_surface(surface, p, q, radius_bound=None):
    """Exact flat shortest-path distance between two surface points.

    Error bound is 0 when radius_bound covers the diameter bound, else the
    value is only certified as min(true distance, anything below the bound).
    """
    bound = surface.diameter_bound if radius_bound is None else float(radius_bound)
    chart_p, xy_p = (p.chart, p.position) if hasattr(p, "chart") else p
    chart_q, xy_q = (q.chart, q.position) if hasattr(q, "chart") else q
    val = dist_point(surface, (chart_p, xy_p), (chart_q, xy_q), bound)
    err = 0.0 if bound >= surface.diameter_bound - 1e-12 else max(0.0, val - bound)
    if val == math.inf:
        val, err = bound, surface.diameter_bound
    return DistanceValue(float(val), float(err))


# -- pointwise distance profile along a pair of traces -------------------------


class _SurfaceKernelTables:
    """Precomputed per-surface arrays for the vectorized pointwise rules."""

    def __init__(self, surface):
        self.surface = surface
        glu = []
        for g in surface.gluings:
            glu.append((g.chart_a, g.edge_a, g.chart_b, g.edge_b, np.asarray(g.translation)))
            glu.append((g.chart_b, g.edge_b, g.chart_a, g.edge_a, -np.asarray(g.translation)))
        self.directed_gluings = glu
        corners = []
        for cone in surface.cones:
            for (c, v) in cone.vertex_orbit:
                corners.append((cone.id, c, surface.charts[c].vertices[v].copy()))
        self.cone_corners = corners
        self.n_cones = len(surface.cones)


def _tables(surface):
    tab = surface.__dict__.get("_metric_tables")
    if tab is None:
        tab = _SurfaceKernelTables(surface)
        surface.__dict__["_metric_tables"] = tab
    return tab


def pointwise_profile(surface, x, y, ugrid):
    """Pointwise distance d_S(x(u), y(u)) on a grid, with per-point slack.

    Returns (D, slack): D is the certified path-length upper value from the
    rule families, clamped at diameter_bound; slack is diameter_bound - 0 at
    points no rule resolved (clamp-only), else 0.
    """
    ugrid = np.asarray(ugrid, dtype=float)
    tab = _tables(surface)
    clamp = surface.diameter_bound
    P1, c1, f1, _d1 = x.sample(ugrid)
    P2, c2, f2, _d2 = y.sample(ugrid)
    L1 = P1 - f1
    L2 = P2 - f2
    n = len(ugrid)
    D = np.full(n, clamp)
    resolved = np.zeros(n, dtype=bool)

    # rule A: both points in the same chart
    mA = c1 == c2
    if mA.any():
        dd = np.hypot(L1[mA, 0] - L2[mA, 0], L1[mA, 1] - L2[mA, 1])
        D[mA] = np.minimum(D[mA], dd)
        resolved[mA] = True

    # rule B: chord through one glued edge, validated by a crossing test
    for (ca, ea, cb, _eb, t) in tab.directed_gluings:
        m = (c1 == ca) & (c2 == cb)
        if not m.any():
            continue
        ch = surface.charts[ca]
        A = ch.vertices[ea]
        E = ch.edge_vec[ea]
        p = L1[m]
        r = (L2[m] - t) - p
        denom = r[:, 0] * E[1] - r[:, 1] * E[0]
        qp0 = A[0] - p[:, 0]
        qp1 = A[1] - p[:, 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            tt = (qp0 * E[1] - qp1 * E[0]) / denom
            uu = (qp0 * r[:, 1] - qp1 * r[:, 0]) / denom
        ok = (
            np.isfinite(tt)
            & np.isfinite(uu)
            & (tt >= -1e-9)
            & (tt <= 1 + 1e-9)
            & (uu >= -1e-9)
            & (uu <= 1 + 1e-9)
        )
        # identical surface point seen from both sides of the glued edge
        ok |= np.hypot(r[:, 0], r[:, 1]) <= 1e-12
        if ok.any():
            dd = np.hypot(r[ok, 0], r[ok, 1])
            idx = np.flatnonzero(m)[ok]
            D[idx] = np.minimum(D[idx], dd)
            resolved[idx] = True

    # rule C: pivot through a cone point, one straight leg on each side
    if tab.cone_corners:
        leg1 = np.full((tab.n_cones, n), np.inf)
        leg2 = np.full((tab.n_cones, n), np.inf)
        for cone_id, c, w in tab.cone_corners:
            m = c1 == c
            if m.any():
                dd = np.hypot(L1[m, 0] - w[0], L1[m, 1] - w[1])
                leg1[cone_id, m] = np.minimum(leg1[cone_id, m], dd)
            m = c2 == c
            if m.any():
                dd = np.hypot(L2[m, 0] - w[0], L2[m, 1] - w[1])
                leg2[cone_id, m] = np.minimum(leg2[cone_id, m], dd)
        pivot = np.min(leg1 + leg2, axis=0)
        better = pivot < D
        D[better] = pivot[better]
        resolved |= np.isfinite(pivot)

    slack = np.where(resolved, 0.0, clamp)
    return D, slack


def _sign_flip_correction(tt):
    return tt


def _kernel_weights(config):
    K = config.grid_half()
    j = np.arange(-K, K + 1)
    ker = np.exp(-2.0 * np.abs(j) * config.h)
    ker[0] *= 0.5
    ker[-1] *= 0.5
    return ker


def _quad_error(D, ker, h, values, Dt):
    """A-posteriori composite-trapezoid error for the kernel integrals."""
    dD = np.zeros_like(D)
    dD[1:-1] = 0.5 * np.abs(D[2:] - D[:-2])
    d2D = np.zeros_like(D)
    d2D[1:-1] = np.abs(D[2:] - 2 * D[1:-1] + D[:-2])
    t1 = np.convolve(d2D, ker, mode="valid") / h
    t2 = 4.0 * np.convolve(dD, ker, mode="valid")
    return (h * h / 12.0) * (t1 + t2 + (4.0 * values / h) + 4.0 * Dt)


def gs_profile(surface, x, y, tgrid, config=DEFAULT_METRIC):
    """d_GS(g_t x, g_t y) for equally spaced t (step h), vectorized.

    Returns (values, errors) aligned with tgrid.
    """
    tgrid = np.asarray(tgrid, dtype=float)
    h, T = config.h, config.T
    if len(tgrid) > 1 and abs((tgrid[1] - tgrid[0]) - h) > 1e-12:
        raise ValueError("tgrid step must equal the quadrature step h")
    K = config.grid_half()
    lo, hi = tgrid[0] - T, tgrid[-1] + T
    x.require_window(lo, hi)
    y.require_window(lo, hi)
    n_master = len(tgrid) + 2 * K
    ugrid = lo + h * np.arange(n_master)
    D, slack = pointwise_profile(surface, x, y, ugrid)
    ker = _kernel_weights(config)
    values = h * np.convolve(D, ker, mode="valid")
    slack_err = h * np.convolve(slack, ker, mode="valid")
    tail = surface.diameter_bound * math.exp(-2.0 * T)
    Dt = D[K : K + len(tgrid)]
    quad = _quad_error(D, ker, h, values, Dt)
    return values, slack_err + tail + quad


def dist_GS(surface, g1, g2, config=DEFAULT_METRIC):
    """Weighted geodesic-space distance between two traces at their marked times."""
    vals, errs = gs_profile(surface, g1, g2, np.array([0.0]), config)
    return DistanceValue(float(vals[0]), float(errs[0]))


@dataclass(frozen=True)
class BowenResult:
    status: str  # 'in', 'out' or 'indeterminate'
    max_value: float
    max_error: float

    @property
    def definite_in(self):
        return self.status == "in"

    @property
    def definite_out(self):
        return self.status == "out"

    @property
    def indeterminate(self):
        return self.status == "indeterminate"


def bowen_contains(surface, x, y, interval, eps, config=DEFAULT_METRIC):
    """Membership of y in the two-sided Bowen ball B_[-n, m](x, eps).

    Checked on the h-grid over [-n, m] with error bounds folded in; returns
    a BowenResult whose status is 'indeterminate' when eps lies inside the
    error band.
    """
    n, m = float(interval[0]), float(interval[1])
    if n > m:
        raise WindowTooSmall("empty Bowen interval")
    steps = int(math.ceil((m - n) / config.h - 1e-9))
    tgrid = n + config.h * np.arange(steps + 1)
    if tgrid[-1] < m - 1e-12:
        tgrid = np.append(tgrid, m)
        tgrid = n + config.h * np.arange(steps + 1)  # keep uniform grid
    vals, errs = gs_profile(surface, x, y, tgrid, config)
    i = int(np.argmax(vals))
    if np.all(vals + errs <= eps):
        return BowenResult("in", float(vals[i]), float(errs[i]))
    if np.any(vals - errs > eps):
        j = int(np.argmax(vals - errs))
        return BowenResult("out", float(vals[j]), float(errs[j]))
    return BowenResult("indeterminate", float(vals[i]), float(errs[i]))


def bowen_max(surface, x, y, span, config=DEFAULT_METRIC):
    """Max over the grid of d_GS(g_t x, g_t y) for t in span; (lo, hi) band."""
    t0, t1 = float(span[0]), float(span[1])
    steps = max(1, int(math.ceil((t1 - t0) / config.h - 1e-9)))
    tgrid = t0 + config.h * np.arange(steps + 1)
    vals, errs = gs_profile(surface, x, y, tgrid, config)
    return float(np.max(vals - errs)), float(np.max(vals + errs))
