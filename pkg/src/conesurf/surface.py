"""Flat surfaces with large cone angles as polygon charts with translation gluings.

A surface is a list of convex polygon charts together with translation
gluings pairing their edges. Vertex orbits under the gluings become either
flat points (total angle 2*pi) or cone points (total angle > 2*pi). All
incidence decisions use an absolute tolerance of 1e-9 length units.
"""

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import GeometryError, SchemaError, TopologyError

TOL = 1e-9
TWO_PI = 2.0 * math.pi


def _unit(v):
    n = math.hypot(v[0], v[1])
    if n <= TOL:
        raise GeometryError("zero-length vector")
    return np.array([v[0] / n, v[1] / n])


def _cross(a, b):
    return a[0] * b[1] - a[1] * b[0]


def _angle_of(v):
    return math.atan2(v[1], v[0])


def _ccw_gap(a, b):
    """Counterclockwise angle swept from direction angle a to b, in [0, 2*pi)."""
    return (b - a) % TWO_PI


@dataclass(frozen=True)
class DevelopedFrame:
    """Placement of one chart in the developing plane (translation only)."""

    chart: int
    offset: tuple

    def to_plane(self, local):
        return np.asarray(local, dtype=float) + np.asarray(self.offset)

    def to_local(self, planar):
        return np.asarray(planar, dtype=float) - np.asarray(self.offset)


class PolygonChart:
    """Convex polygon chart; vertices counterclockwise, collinear allowed."""

    def __init__(self, cid, vertices):
        self.id = int(cid)
        self.vertices = np.asarray(vertices, dtype=float)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2 or len(self.vertices) < 3:
            raise GeometryError(f"chart {cid}: need >= 3 planar vertices")
        self.n = len(self.vertices)
        self.edge_vec = np.roll(self.vertices, -1, axis=0) - self.vertices
        self.edge_len = np.hypot(self.edge_vec[:, 0], self.edge_vec[:, 1])
        if np.any(self.edge_len <= TOL):
            raise GeometryError(f"chart {cid}: degenerate edge")
        # outward normals for a CCW polygon
        self.normal_out = np.stack([self.edge_vec[:, 1], -self.edge_vec[:, 0]], axis=1)
        self.normal_out /= self.edge_len[:, None]
        area2 = sum(_cross(self.vertices[i], self.vertices[(i + 1) % self.n]) for i in range(self.n))
        if area2 <= TOL:
            raise GeometryError(f"chart {cid}: vertices must be counterclockwise")
        for i in range(self.n):
            c = _cross(self.edge_vec[i], self.edge_vec[(i + 1) % self.n])
            if c < -1e-9 * max(1.0, self.edge_len[i] * self.edge_len[(i + 1) % self.n]):
                raise GeometryError(f"chart {cid}: not convex at vertex {(i + 1) % self.n}")
            if c <= TOL and np.dot(self.edge_vec[i], self.edge_vec[(i + 1) % self.n]) < 0:
                raise GeometryError(f"chart {cid}: folded boundary at vertex {(i + 1) % self.n}")
        self.diameter = max(
            float(np.hypot(*(self.vertices[i] - self.vertices[j])))
            for i in range(self.n)
            for j in range(i + 1, self.n)
        )

    def interior_angle(self, v):
        """Interior wedge at vertex v, swept CCW from the outgoing edge."""
        d_out = self.edge_vec[v]
        d_back = -self.edge_vec[(v - 1) % self.n]
        gap = _ccw_gap(_angle_of(d_out), _angle_of(d_back))
        if gap <= TOL:  # collinear corner reads as angle pi, not 0
            gap = math.pi if abs(_cross(d_out, d_back)) <= TOL else gap
        return gap

    def contains(self, p, tol=TOL):
        p = np.asarray(p, dtype=float)
        d = self.vertices - p
        side = self.edge_vec[:, 0] * (-d[:, 1]) - self.edge_vec[:, 1] * (-d[:, 0])
        # side = cross(edge, p - v) >= 0 for interior of a CCW polygon
        return bool(np.all(side >= -tol * np.maximum(1.0, self.edge_len)))

    def edge_of_point(self, p, tol=TOL):
        """Index of an edge p lies on, or None."""
        p = np.asarray(p, dtype=float)
        for i in range(self.n):
            a = self.vertices[i]
            e = self.edge_vec[i]
            t = np.dot(p - a, e) / (self.edge_len[i] ** 2)
            if -tol <= t <= 1 + tol:
                close = a + np.clip(t, 0.0, 1.0) * e
                if np.hypot(*(p - close)) <= tol:
                    return i
        return None

    def vertex_of_point(self, p, tol=TOL):
        d = self.vertices - np.asarray(p, dtype=float)
        dist = np.hypot(d[:, 0], d[:, 1])
        i = int(np.argmin(dist))
        return i if dist[i] <= tol else None


@dataclass(frozen=True)
class Gluing:
    chart_a: int
    edge_a: int
    chart_b: int
    edge_b: int
    translation: tuple  # local-a coords + translation = local-b coords


@dataclass(frozen=True)
class VertexClass:
    id: int
    corners: tuple  # ordered orbit of (chart, vertex) pairs
    total_angle: float


@dataclass(frozen=True)
class ConeClass:
    id: int
    vertex_orbit: tuple
    total_angle: float

    @property
    def excess(self):
        return self.total_angle - TWO_PI


@dataclass
class FanCorner:
    chart: int
    vertex: int
    frame: DevelopedFrame
    lo: float  # cumulative fan coordinate where this wedge starts
    hi: float
    start_angle: float  # planar angle of the wedge's starting direction


@dataclass
class VertexFan:
    """Developed corner wedges around one vertex class, swept counterclockwise."""

    point: np.ndarray  # planar image of the vertex (shared by all corners)
    corners: list
    total: float

    def coordinate_of(self, corner_index, planar_dir):
        c = self.corners[corner_index]
        gap = _ccw_gap(c.start_angle, _angle_of(planar_dir))
        if gap > (c.hi - c.lo) + 1e-9 and gap > TWO_PI - 1e-9:
            gap = 0.0  # direction on the wedge's starting edge, wrapped by fp noise
        return c.lo + gap

    def direction_at(self, beta):
        """Planar unit direction and owning corner for fan coordinate beta."""
        beta = beta % self.total
        for c in self.corners:
            if c.lo - 1e-12 <= beta <= c.hi + 1e-12:
                ang = c.start_angle + (beta - c.lo)
                return np.array([math.cos(ang), math.sin(ang)]), c
        # wrap-around guard
        c = self.corners[0]
        ang = c.start_angle + (beta - c.lo)
        return np.array([math.cos(ang), math.sin(ang)]), c


class FlatSurface:
    """Validated compact flat surface with every cone angle > 2*pi."""

    def __init__(self, charts, gluings, name="surface"):
        self.name = name
        self.charts = charts
        self.gluings = gluings
        self._glue_map = {}
        for g in gluings:
            self._glue_map[(g.chart_a, g.edge_a)] = (g.chart_b, g.edge_b, np.asarray(g.translation))
            self._glue_map[(g.chart_b, g.edge_b)] = (g.chart_a, g.edge_a, -np.asarray(g.translation))
        self._validate_gluings()
        self.vertex_classes = self._build_vertex_classes()
        self._class_of = {}
        for vc in self.vertex_classes:
            for corner in vc.corners:
                self._class_of[corner] = vc
        self.cones = []
        for vc in self.vertex_classes:
            ex = vc.total_angle - TWO_PI
            if ex < -1e-7:
                raise TopologyError(
                    f"vertex class {vc.id} has angle {vc.total_angle:.6f} < 2*pi; "
                    "only cone angles > 2*pi are supported"
                )
            if ex > 1e-7:
                self.cones.append(ConeClass(len(self.cones), vc.corners, vc.total_angle))
        self._cone_of = {}
        for c in self.cones:
            for corner in c.vertex_orbit:
                self._cone_of[corner] = c
        self._check_topology()
        self.diameter_bound = float(sum(ch.diameter for ch in self.charts))

    # -- validation ---------------------------------------------------------

    def _validate_gluings(self):
        seen = set()
        for g in self.gluings:
            for c, e in ((g.chart_a, g.edge_a), (g.chart_b, g.edge_b)):
                if not (0 <= c < len(self.charts)) or not (0 <= e < self.charts[c].n):
                    raise SchemaError(f"gluing references missing edge ({c},{e})")
                if (c, e) in seen:
                    raise GeometryError(f"edge ({c},{e}) appears in more than one gluing")
                seen.add((c, e))
            ca, cb = self.charts[g.chart_a], self.charts[g.chart_b]
            ea, eb = ca.edge_vec[g.edge_a], cb.edge_vec[g.edge_b]
            if np.hypot(*(ea + eb)) > 1e-9 * max(1.0, ca.edge_len[g.edge_a]):
                raise GeometryError(
                    f"glued edges ({g.chart_a},{g.edge_a}) and ({g.chart_b},{g.edge_b}) "
                    "are not parallel, equal length and oppositely oriented"
                )
            t = np.asarray(g.translation)
            va = ca.vertices[g.edge_a]
            wb_next = cb.vertices[(g.edge_b + 1) % cb.n]
            if np.hypot(*(va + t - wb_next)) > 1e-9:
                raise GeometryError(
                    f"gluing translation inconsistent on edge ({g.chart_a},{g.edge_a})"
                )
        for c, ch in enumerate(self.charts):
            for e in range(ch.n):
                if (c, e) not in self._glue_map:
                    raise GeometryError(f"edge ({c},{e}) is unglued")

    def glue(self, chart, edge):
        return self._glue_map[(chart, edge)]

    def _next_corner_ccw(self, chart, vertex):
        """Cross the incoming edge of (chart, vertex), continuing the CCW sweep."""
        n = self.charts[chart].n
        c2, e2, _t = self.glue(chart, (vertex - 1) % n)
        return (c2, e2)

    def _build_vertex_classes(self):
        classes = []
        unseen = {(c, v) for c, ch in enumerate(self.charts) for v in range(ch.n)}
        while unseen:
            start = min(unseen)
            orbit = []
            total = 0.0
            cur = start
            while True:
                orbit.append(cur)
                unseen.discard(cur)
                total += self.charts[cur[0]].interior_angle(cur[1])
                cur = self._next_corner_ccw(*cur)
                if cur == start:
                    break
                if cur not in unseen:
                    raise GeometryError(f"corner walk from {start} failed to close")
            classes.append(VertexClass(len(classes), tuple(orbit), total))
        return classes

    def _check_topology(self):
        V = len(self.vertex_classes)
        E = len(self.gluings)
        F = len(self.charts)
        chi = V - E + F
        if chi % 2 != 0:
            raise TopologyError(f"odd Euler characteristic {chi}")
        self.genus = (2 - chi) // 2
        excess_sum = sum(c.excess for c in self.cones)
        if abs(excess_sum - TWO_PI * (2 * self.genus - 2)) > 1e-9:
            raise TopologyError(
                f"Gauss-Bonnet violated: sum of excesses {excess_sum:.12f} != "
                f"2*pi*(2g-2) = {TWO_PI * (2 * self.genus - 2):.12f}"
            )
        if not self.cones:
            raise TopologyError("no cone class with excess > 0")
        if self.genus < 2:
            raise TopologyError(f"genus {self.genus} < 2")

    # -- derived quantities -------------------------------------------------

    @property
    def theta0(self):
        return min(c.excess for c in self.cones)

    @cached_property
    def s0(self):
        """Half the length of the shortest saddle connection."""
        from .geodesic import saddle_connections

        bound = max(ch.diameter for ch in self.charts)
        for _ in range(6):
            found = saddle_connections(self, bound)
            if found:
                return 0.5 * min(sc.length for sc in found)
            bound *= 2.0
        raise GeometryError("no saddle connection found within search budget")

    def cone_at(self, chart, vertex):
        """ConeClass at a corner, or None when the vertex class is flat."""
        return self._cone_of.get((chart, vertex))

    def class_at(self, chart, vertex):
        return self._class_of[(chart, vertex)]

    def identity_frame(self, chart):
        return DevelopedFrame(chart, (0.0, 0.0))

    def canonical_point(self, chart, xy):
        """Canonical (chart, xy) representative: lowest chart id, then edge id."""
        ch = self.charts[chart]
        xy = np.asarray(xy, dtype=float)
        v = ch.vertex_of_point(xy)
        if v is not None:
            best = min(self.class_at(chart, v).corners)
            return best[0], self.charts[best[0]].vertices[best[1]].copy()
        e = ch.edge_of_point(xy)
        if e is None:
            return chart, xy
        c2, e2, t = self.glue(chart, e)
        cand = [(chart, e, xy), (c2, e2, xy + t)]
        cand.sort(key=lambda it: (it[0], it[1]))
        return cand[0][0], cand[0][2]

    def vertex_fan(self, chart, vertex, frame=None):
        """Developed corner wedges around the vertex class of (chart, vertex)."""
        if frame is None:
            frame = self.identity_frame(chart)
        point = frame.to_plane(self.charts[chart].vertices[vertex])
        corners = []
        cum = 0.0
        cur = (chart, vertex)
        f = frame
        while True:
            ch = self.charts[cur[0]]
            ang = ch.interior_angle(cur[1])
            start_dir = ch.edge_vec[cur[1]]
            corners.append(
                FanCorner(cur[0], cur[1], f, cum, cum + ang, _angle_of(start_dir))
            )
            cum += ang
            f = develop_across(self, f, (cur[1] - 1) % ch.n)
            cur = self._next_corner_ccw(*cur)
            if cur == (chart, vertex):
                break
        return VertexFan(point=point, corners=corners, total=cum)

    def __repr__(self):
        return (
            f"FlatSurface({self.name!r}, charts={len(self.charts)}, "
            f"cones={len(self.cones)}, genus={self.genus})"
        )


def develop_across(surface, frame, edge):
    """Frame of the glued chart so both images of the shared edge coincide."""
    c2, _e2, t = surface.glue(frame.chart, edge)
    off = np.asarray(frame.offset) - t
    return DevelopedFrame(c2, (float(off[0]), float(off[1])))


def cone_excess_min(surface):
    """Minimum cone excess theta_0 over all cone classes."""
    return surface.theta0


# -- construction ------------------------------------------------------------


def _gluing_from_edges(charts, a, b):
    ca, ea = a
    cb, eb = b
    for c, e in (a, b):
        if not (0 <= c < len(charts)) or not (0 <= e < charts[c].n):
            raise SchemaError(f"gluing references missing edge ({c},{e})")
    va = charts[ca].vertices[ea]
    wb_next = charts[cb].vertices[(eb + 1) % charts[cb].n]
    t = wb_next - va
    return Gluing(ca, ea, cb, eb, (float(t[0]), float(t[1])))


def build_surface(polygons, gluing_pairs, name="surface"):
    """Assemble and validate a FlatSurface from raw vertex lists and edge pairs."""
    charts = [PolygonChart(i, vs) for i, vs in enumerate(polygons)]
    gluings = [_gluing_from_edges(charts, a, b) for a, b in gluing_pairs]
    return FlatSurface(charts, gluings, name=name)


def load_surface(path_or_dict):
    """Load a surface from the published JSON schema.

    Schema: {"name": str, "polygons": [{"id": int, "vertices": [[x, y], ...]}],
    "gluings": [{"a": [poly, edge], "b": [poly, edge]}]}.
    """
    if isinstance(path_or_dict, dict):
        doc = path_or_dict
    else:
        with open(path_or_dict) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("surface document must be a JSON object")
    for key in ("polygons", "gluings"):
        if key not in doc or not isinstance(doc[key], list):
            raise SchemaError(f"missing or malformed field {key!r}")
    polys = {}
    for p in doc["polygons"]:
        try:
            pid = int(p["id"])
            verts = [[float(x), float(y)] for x, y in p["vertices"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed polygon entry: {p!r}") from exc
        if pid in polys:
            raise SchemaError(f"duplicate polygon id {pid}")
        polys[pid] = verts
    if sorted(polys) != list(range(len(polys))):
        raise SchemaError("polygon ids must be 0..n-1")
    pairs = []
    for g in doc["gluings"]:
        try:
            a = (int(g["a"][0]), int(g["a"][1]))
            b = (int(g["b"][0]), int(g["b"][1]))
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise SchemaError(f"malformed gluing entry: {g!r}") from exc
        pairs.append((a, b))
    return build_surface(
        [polys[i] for i in range(len(polys))], pairs, name=doc.get("name", "surface")
    )


def builtin_octagon():
    """Regular octagon, circumradius 1, opposite sides glued by translation."""
    verts = [
        [math.cos((2 * k + 1) * math.pi / 8), math.sin((2 * k + 1) * math.pi / 8)]
        for k in range(8)
    ]
    pairs = [((0, k), (0, k + 4)) for k in range(4)]
    return build_surface([verts], pairs, name="octagon")


def builtin_slit_tori(slit=0.5):
    """Two unit-square tori glued along a horizontal slit of the given length.

    Each torus is cut along the full line y = 1/2 into two rectangles; the
    central sub-edge of length ``slit`` is cross-glued between the tori and
    the outer sub-edges are re-glued within each torus. The two slit
    endpoints become cone points of angle 4*pi.
    """
    if not (TOL < slit < 1.0 - TOL):
        raise GeometryError("slit length must lie strictly inside (0, 1)")
    x0 = 0.5 - slit / 2.0
    x1 = 0.5 + slit / 2.0
    lower = [[0, 0], [1, 0], [1, 0.5], [x1, 0.5], [x0, 0.5], [0, 0.5]]
    upper = [[0, 0.5], [x0, 0.5], [x1, 0.5], [1, 0.5], [1, 1], [0, 1]]
    polys = [lower, upper, lower, upper]  # charts 0,1 = torus A; 2,3 = torus B
    pairs = []
    for lo, up in ((0, 1), (2, 3)):
        pairs += [
            ((lo, 0), (up, 4)),  # bottom <-> top
            ((lo, 1), (lo, 5)),  # lower right <-> lower left
            ((up, 3), (up, 5)),  # upper right <-> upper left
            ((lo, 2), (up, 2)),  # rejoin cut right of slit
            ((lo, 4), (up, 0)),  # rejoin cut left of slit
        ]
    pairs += [((0, 3), (3, 1)), ((2, 3), (1, 1))]  # cross-glue the slits
    return build_surface(polys, pairs, name="slit-tori")
