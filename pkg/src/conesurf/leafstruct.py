"""Local stable/unstable/center-stable leaves, brackets, rectangles, flow boxes.

Leaves through a regular trace are one-parameter families obtained by
re-branching the trace at a cone event with excess turn: the parameter is
the signed change of the turning angle at that branch cone, so every
member shares the base's ray on the far side of the branch and passes the
branch cone at the same time as the base. That shared-ray parametrization
is what forces the Busemann normalization B = 0; the limit is only ever
evaluated as a finite-horizon check.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConeHit,
    DeltaTooLarge,
    GeometryError,
    NoSharedSegment,
    NotInBox,
    NotRegular,
    NumericalAmbiguity,
)
from .geodesic import (
    ConePolicy,
    GeodesicTrace,
    _theta_from_tau,
    _tau_from_theta,
    lambda_proxy,
    rebranch_backward,
    rebranch_forward,
    trace,
)
from .metric import DEFAULT_METRIC, dist_GS

TAIL_POLICY = ConePolicy(on_cone=math.pi)


def _kernel_moment(r):
    """Closed form of the divergence integral int_r^inf (s - r) e^{-2|s|} ds."""
    if r >= 0:
        return 0.25 * math.exp(-2.0 * r)
    return -r + 0.25 * math.exp(2.0 * r)


def _excess_events(trace_, lo, hi):
    return [e for e in trace_.events if lo <= e.time <= hi and e.excess_turn > 1e-9]


@dataclass
class LocalLeaf:
    """One-parameter family of traces branching at one cone event of the base."""

    kind: str  # 'unstable', 'stable' or 'center_stable'
    base: GeodesicTrace
    branch: object  # the ConeEvent of the base where members diverge
    param_range: tuple  # admissible signed tau deviations at the branch cone
    shift_range: tuple  # time-shift interval (center_stable only, else (0, 0))
    delta: float

    def sample(self, p, shift=0.0):
        lo, hi = self.param_range
        if not (lo - 1e-12 <= p <= hi + 1e-12):
            raise GeometryError(f"leaf parameter {p:.3g} outside [{lo:.3g}, {hi:.3g}]")
        if not (self.shift_range[0] - 1e-12 <= shift <= self.shift_range[1] + 1e-12):
            raise GeometryError("shift outside the leaf's shift range")
        return self.sample_unchecked(p, shift)

    def sample_unchecked(self, p, shift=0.0):
        surface = self.base.surface
        total = surface.cones[self.branch.cone].total_angle
        tau = _tau_from_theta(self.branch.theta, total) + p
        theta = _theta_from_tau(tau, total)
        if p == 0.0:
            tail = self._tail_turns()
            if self.kind == "unstable":
                member = rebranch_forward(self.base, self.branch, theta, tail, TAIL_POLICY)
            else:
                member = rebranch_backward(self.base, self.branch, theta, tail, TAIL_POLICY)
        elif self.kind == "unstable":
            member = rebranch_forward(self.base, self.branch, theta, (), TAIL_POLICY)
        else:
            member = rebranch_backward(self.base, self.branch, theta, (), TAIL_POLICY)
        if shift != 0.0:
            member = member.shift(shift)
        return member

    def _tail_turns(self):
        if self.kind == "unstable":
            evs = [e for e in self.base.events if e.time > self.branch.time + 1e-12]
            return [e.theta for e in evs]
        evs = [e for e in self.base.events if e.time < self.branch.time - 1e-12]
        return [e.theta for e in reversed(evs)]

    def member_grid(self, k, shrink=1.0):
        lo, hi = self.param_range
        mid = 0.0
        lo, hi = mid + shrink * (lo - mid), mid + shrink * (hi - mid)
        return np.linspace(lo, hi, k)


def _delta_cap(excess):
    """Conservative leaf-radius threshold from the branch excess."""
    return excess / 16.0


def _pick_branch(trace_, kind, branch):
    if branch == "last_backward":
        evs = _excess_events(trace_, trace_.window[0], -1e-12)
        if not evs:
            raise NotRegular(f"no backward excess turn for the {kind} leaf")
        return evs[-1]
    if branch == "first_forward":
        evs = _excess_events(trace_, 1e-12, trace_.window[1])
        if not evs:
            raise NotRegular(f"no forward excess turn for the {kind} leaf")
        return evs[0]
    return branch  # an explicit ConeEvent


def _shrink_to_delta(surface, leaf, p, config):
    """Largest |parameter| along the ray of p whose member stays within delta."""
    if p == 0.0:
        return 0.0
    scale = abs(p)
    for _ in range(40):
        if scale < 1e-6 * abs(p):
            return 0.0  # members diverge at the base's next turn: leaf degenerates
        q = math.copysign(scale, p)
        try:
            member = leaf.sample_unchecked(q)
        except (ConeHit, NumericalAmbiguity):
            scale *= 0.7
            continue
        d = dist_GS(surface, member, leaf.base, config)
        if d.value <= leaf.delta + d.error_bound:
            return q
        scale *= 0.6
    return 0.0


def _make_leaf(surface, trace_, delta, kind, branch_sel, shift_range=(0.0, 0.0),
               config=DEFAULT_METRIC):
    ev = _pick_branch(trace_, kind, branch_sel)
    cap = _delta_cap(ev.excess_turn)
    if delta > cap:
        raise DeltaTooLarge(f"delta {delta:.3g} above threshold {cap:.3g}")
    total = surface.cones[ev.cone].total_angle
    tau = _tau_from_theta(ev.theta, total)
    moment = _kernel_moment(ev.time if kind == "unstable" else -ev.time)
    p_max = delta / moment
    p_max = min(p_max, 0.5 * ev.excess_turn)  # keep member turns genuinely excess
    lo = max(-p_max, -tau)
    hi = min(p_max, (total - 2 * math.pi) - tau)
    leaf = LocalLeaf(
        kind=kind,
        base=trace_,
        branch=ev,
        param_range=(lo, hi),
        shift_range=shift_range,
        delta=delta,
    )
    # membership enforced by the metric: shrink the range until the extreme
    # members verifiably stay within delta
    lo = _shrink_to_delta(surface, leaf, lo, config)
    hi = _shrink_to_delta(surface, leaf, hi, config)
    leaf.param_range = (lo, hi)
    return leaf


def local_unstable(surface, trace_, delta, branch="last_backward"):
    """Local strong unstable leaf through a regular trace.

    Members agree with the base on (-inf, t_branch] and pass the branch cone
    at the base's time. ``branch`` may be 'last_backward' (default),
    'first_forward' (useful for rectangle families) or an explicit event.
    """
    return _make_leaf(surface, trace_, delta, "unstable", branch)


def local_stable(surface, trace_, delta, branch="first_forward"):
    """Local strong stable leaf: members agree with the base on [t_branch, inf)."""
    return _make_leaf(surface, trace_, delta, "stable", branch)


def local_center_stable(surface, trace_, delta, branch="first_forward"):
    """Center stable leaf: a stable family with an extra time-shift parameter."""
    leaf = _make_leaf(
        surface, trace_, delta, "center_stable", branch, shift_range=(-delta, delta)
    )
    return leaf


# center_stable members re-branch like stable ones
LocalLeaf_sample_kinds = ("unstable", "stable", "center_stable")


def busemann_horizon(surface, member, base, kind="unstable", horizon=50.0):
    """Finite-horizon Busemann value B(member(0)) w.r.t. the base's ray.

    The universal-cover distance from member(0) to base(-t) is the chain of
    straight legs through the base's excess-turn cones (every junction has
    both side angles >= pi, so the concatenation is the cover geodesic);
    within the shared development each leg is a planar chord. Synchronized
    leaf members give 0 up to roundoff.
    """
    s = -horizon if kind == "unstable" else horizon
    base.require_window(min(s, 0.0), max(s, 0.0))
    lo, hi = (s, 0.0) if s < 0 else (0.0, s)
    pivots = [e for e in base.events if lo < e.time < hi and e.excess_turn > 1e-9]
    pivots.sort(key=lambda e: abs(e.time))
    pts = [np.asarray(member.planar(0.0))]
    for e in pivots:
        seg = base.segment_at(e.time - 1e-12 if s < 0 else e.time + 1e-12)
        pts.append(np.asarray(seg.at(e.time)))
    pts.append(np.asarray(base.planar(s)))
    length = sum(
        math.hypot(*(pts[i + 1] - pts[i])) for i in range(len(pts) - 1)
    )
    return float(length - horizon)


# -- brackets ------------------------------------------------------------------


def _split_at_zero(trace_):
    """Segments strictly before/after time 0, splitting the spanning segment."""
    past, future = [], []
    for s in trace_.segments:
        t1 = s.t0 + s.dur
        if t1 <= 1e-15:
            past.append(s)
        elif s.t0 >= -1e-15:
            future.append(s)
        else:
            from dataclasses import replace

            past.append(replace(s, dur=-s.t0))
            p_mid = s.at(0.0)
            future.append(
                replace(s, start=(float(p_mid[0]), float(p_mid[1])), t0=0.0, dur=t1)
            )
    return past, future


def splice(gamma, eta):
    """Trace equal to gamma for t >= 0 and eta for t <= 0 (su-Bowen bracket).

    Requires both traces to agree at time 0 in position and direction.
    """
    surface = gamma.surface
    cg, pg = gamma.point(0.0)
    ce, pe = eta.point(0.0)
    cg, pg = surface.canonical_point(cg, pg)
    ce, pe = surface.canonical_point(ce, pe)
    if cg != ce or np.hypot(*(pg - pe)) > 1e-9:
        raise NoSharedSegment("bracket arguments disagree at time 0")
    if np.hypot(*(gamma.direction(0.0) - eta.direction(0.0))) > 1e-9:
        raise NoSharedSegment("bracket arguments have different directions at time 0")
    past, _ = _split_at_zero(eta)
    _, future = _split_at_zero(gamma)
    # reanchor eta's developing plane so the splice point coincides
    off = gamma.planar(0.0) - eta.planar(0.0)
    from dataclasses import replace

    past = [
        replace(
            s,
            offset=(s.offset[0] + off[0], s.offset[1] + off[1]),
            start=(s.start[0] + off[0], s.start[1] + off[1]),
        )
        for s in past
    ]
    events = [e for e in eta.events if e.time < -1e-12] + [
        e for e in gamma.events if e.time > 1e-12
    ]
    window = (eta.window[0], gamma.window[1])
    return GeodesicTrace(surface, window, past + future, events)


def bracket_su(surface, gamma, eta, center, c, s0=None, config=DEFAULT_METRIC):
    """su-Bowen bracket <gamma, eta> in the context of a regular center.

    Preconditions follow the bracket geometry lemma: the center has
    lambda-proxy above c one s0 to either side, and gamma/eta share the
    center's middle segment (else NoSharedSegment).
    """
    s0 = surface.s0 if s0 is None else s0
    W = surface.theta0 / (2.0 * max(c, 1e-6))
    for t in (-s0, s0):
        lam = lambda_proxy(center.shift(t), s0=s0, window=min(W, center.window[1] - abs(t) - 1))
        if lam <= c:
            raise NotRegular(f"center has lambda {lam:.3g} <= c at t = {t:+.3g}")
    return splice(gamma, eta)


# -- rectangles and flow boxes ---------------------------------------------------


@dataclass
class Rectangle:
    center: GeodesicTrace
    eps: float
    u_leaf: LocalLeaf
    s_leaf: LocalLeaf
    u_interval: tuple
    s_interval: tuple

    def member(self, pu, ps):
        gamma = self.u_leaf.sample(pu)
        eta = self.s_leaf.sample(ps)
        return splice(gamma, eta)


@dataclass
class BoxMember:
    pu: float
    ps: float
    sigma: float
    trace: GeodesicTrace


@dataclass
class FlowBox:
    rectangle: Rectangle
    n: int

    @property
    def n0(self):
        delta = min(self.rectangle.u_leaf.delta, self.rectangle.s_leaf.delta)
        return max(8.0 / delta, 5.0)

    def member(self, pu, ps, sigma=0.0):
        if abs(sigma) > 1.0 / self.n + 1e-12:
            raise NotInBox(f"flow offset {sigma:.3g} outside [-1/n, 1/n]")
        lo, hi = self.rectangle.u_interval
        if not (lo - 1e-12 <= pu <= hi + 1e-12):
            raise NotInBox("u-parameter outside the rectangle interval")
        lo, hi = self.rectangle.s_interval
        if not (lo - 1e-12 <= ps <= hi + 1e-12):
            raise NotInBox("s-parameter outside the rectangle interval")
        tr = self.rectangle.member(pu, ps)
        if sigma != 0.0:
            tr = tr.shift(-sigma)  # member = g_sigma(rectangle point)
        return BoxMember(pu, ps, sigma, tr)


def rectangle_center(surface, connection, theta_in, theta_out, window, phase=0.5):
    """A rectangle-center trace built on a saddle connection.

    The trace runs along the connection, turning with theta_in at the start
    cone (backward in time) and theta_out at the end cone; the marked time 0
    sits at ``phase`` along the connection, and both tails continue with
    straight +pi turns.
    """
    c, v = connection.start_corner
    p0 = surface.charts[c].vertices[v]
    d = np.asarray(connection.direction)
    mid = p0 + phase * connection.length * d
    a, b = window
    return trace(
        surface,
        (c, tuple(mid)),
        tuple(d),
        (a, b),
        turns_forward=[theta_out],
        turns_backward=[theta_in],
        policy=TAIL_POLICY,
    )


def build_rectangle(surface, center, c, eps, s0=None, config=DEFAULT_METRIC):
    """su-rectangle around a center trace with lambda above c at +-s0."""
    s0 = surface.s0 if s0 is None else s0
    fwd = _excess_events(center, 1e-12, center.window[1])
    bwd = _excess_events(center, center.window[0], -1e-12)
    if not fwd or not bwd:
        raise NotRegular("rectangle center must turn with excess on both sides")
    delta_u = _delta_cap(fwd[0].excess_turn)
    delta_s = _delta_cap(bwd[-1].excess_turn)
    if eps >= min(delta_u, delta_s) / 4.0:
        raise DeltaTooLarge(f"eps {eps:.3g} must be below delta(c)/4")
    u_leaf = local_unstable(surface, center, delta_u, branch="first_forward")
    s_leaf = local_stable(surface, center, delta_s, branch="last_backward")
    mu = _kernel_moment(u_leaf.branch.time)
    ms = _kernel_moment(-s_leaf.branch.time)
    pu_max = eps / mu
    ps_max = eps / ms
    ui = (max(u_leaf.param_range[0], -pu_max), min(u_leaf.param_range[1], pu_max))
    si = (max(s_leaf.param_range[0], -ps_max), min(s_leaf.param_range[1], ps_max))
    return Rectangle(center, eps, u_leaf, s_leaf, ui, si)


def flow_box(surface, rectangle, n=None):
    box = FlowBox(rectangle, n=1)
    n0 = box.n0
    if n is None:
        n = int(math.ceil(n0))
    if n < n0:
        raise GeometryError(f"n = {n} below n0 = {n0:.3g}")
    return FlowBox(rectangle, n=int(n))


def bowen_bracket(box, y, z):
    """[y, z] = g_{sigma_z} <gamma_y, eta_z> for members of a flow box."""
    if not isinstance(y, BoxMember) or not isinstance(z, BoxMember):
        raise NotInBox("bowen_bracket expects BoxMember values")
    return box.member(y.pu, z.ps, z.sigma)


def product_coords(box, z, config=DEFAULT_METRIC, sigma_bound=None):
    """Coordinates (z_u, z_s, z_c) of a member; inverse of FlowBox.member.

    ``sigma_bound`` widens the admissible flow offset beyond 1/n (used by
    flow-box ratio estimates on thickened boxes).
    """
    if isinstance(z, BoxMember):
        return (z.pu, z.ps, z.sigma)
    rect = box.rectangle
    surface = rect.center.surface
    sb = 1.0 / box.n if sigma_bound is None else float(sigma_bound)
    slop = sb + 0.1
    u_ev = rect.u_leaf.branch
    s_ev = rect.s_leaf.branch
    cand_u = [e for e in z.events if e.cone == u_ev.cone and abs(e.time - u_ev.time) < slop]
    cand_s = [e for e in z.events if e.cone == s_ev.cone and abs(e.time - s_ev.time) < slop]
    if not cand_u or not cand_s:
        raise NotInBox("trace does not pass the rectangle's branch cones")
    eu = min(cand_u, key=lambda e: abs(e.time - u_ev.time))
    es = min(cand_s, key=lambda e: abs(e.time - s_ev.time))
    sigma = 0.5 * ((eu.time - u_ev.time) + (es.time - s_ev.time))
    if abs(sigma) > sb + 1e-9:
        raise NotInBox(f"flow offset {sigma:.3g} outside the box thickening")
    total_u = surface.cones[u_ev.cone].total_angle
    total_s = surface.cones[s_ev.cone].total_angle
    pu = _tau_from_theta(eu.theta, total_u) - _tau_from_theta(u_ev.theta, total_u)
    ps = _tau_from_theta(es.theta, total_s) - _tau_from_theta(s_ev.theta, total_s)
    lo, hi = rect.u_interval
    if not (lo - 1e-9 <= pu <= hi + 1e-9):
        raise NotInBox("u-parameter outside the rectangle interval")
    lo, hi = rect.s_interval
    if not (lo - 1e-9 <= ps <= hi + 1e-9):
        raise NotInBox("s-parameter outside the rectangle interval")
    member = rect.member(pu, ps)
    if sigma != 0.0:
        member = member.shift(-sigma)
    d = dist_GS(surface, member, z, config)
    if d.value > 1e-7 + d.error_bound:
        raise NotInBox(f"round-trip mismatch {d.value:.3g}")
    return (pu, ps, sigma)


@dataclass
class Holonomy:
    """The projection pi_{x,y}: V^u_x -> V^u_y inside a flow box."""

    box: FlowBox
    x: BoxMember
    y: BoxMember

    def param_map(self, pu):
        return pu  # unstable parameter is preserved by the bracket

    def apply(self, z):
        if abs(z.ps - self.x.ps) > 1e-12 or abs(z.sigma - self.x.sigma) > 1e-12:
            raise NotInBox("argument not on the source unstable leaf")
        return self.box.member(z.pu, self.y.ps, self.y.sigma)

    @property
    def rho(self):
        return self.y.sigma - self.x.sigma

    def inverse(self):
        return Holonomy(self.box, self.y, self.x)


def holonomy(box, x, y):
    if not isinstance(x, BoxMember) or not isinstance(y, BoxMember):
        raise NotInBox("holonomy expects BoxMember values")
    return Holonomy(box, x, y)


def layerwise_check(predicate, box, n_u=17, n_s=5, config=DEFAULT_METRIC):
    """True iff the set {predicate} intersects the rectangle layerwise.

    For every sampled member inside the set, the whole u-interval through it
    must satisfy the predicate.
    """
    rect = box.rectangle
    us = np.linspace(*rect.u_interval, n_u)
    ss = np.linspace(*rect.s_interval, n_s)
    for ps in ss:
        layer = [predicate(box.member(pu, ps)) for pu in us]
        if any(layer) and not all(layer):
            return False
    return True
