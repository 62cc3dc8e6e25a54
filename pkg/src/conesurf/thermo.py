"""Potentials, pressure, orbit measures and the Bowen/Gibbs verification harness.

The equilibrium state is represented at desk scale by a weighted sum of
closed-geodesic point masses; all quantitative checks are phrased as
boundedness or stability statements against that surrogate.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConeHit,
    EmptyPool,
    GeometryError,
    InsufficientMass,
    NotInBox,
    NumericalAmbiguity,
    WindowTooSmall,
    ZeroMass,
)
from .geodesic import (
    ConePolicy,
    closed_geodesics,
    is_singular_window,
    lambda_profile,
    lambda_proxy,
    trace,
    trace_closed,
)
from .metric import DEFAULT_METRIC, bowen_contains, bowen_max, gs_profile, pointwise_profile


# -- potentials -----------------------------------------------------------------


@dataclass(frozen=True)
class Bump:
    center: object  # GeodesicTrace
    radius: float
    height: float


@dataclass(frozen=True)
class Potential:
    """phi = c0 + sum of tent bumps in the geodesic-space metric."""

    base: float = 0.0
    bumps: tuple = ()

    @property
    def lipschitz(self):
        return sum(abs(b.height) / b.radius for b in self.bumps)

    @property
    def sup_norm(self):
        return abs(self.base) + sum(abs(b.height) for b in self.bumps)

    def shifted(self, c):
        return Potential(self.base + c, self.bumps)

    def profile(self, surface, trace_, tgrid, config=DEFAULT_METRIC):
        """phi(g_t trace) on an h-aligned grid; returns (values, error bounds)."""
        tgrid = np.asarray(tgrid, dtype=float)
        vals = np.full(len(tgrid), float(self.base))
        errs = np.zeros(len(tgrid))
        for b in self.bumps:
            d, de = gs_profile(surface, trace_, b.center, tgrid, config)
            active = d - de < b.radius
            vals += b.height * np.maximum(0.0, 1.0 - d / b.radius)
            errs += np.where(active, abs(b.height) / b.radius * de, 0.0)
        return vals, errs


def certify_potential(surface, potential, singular_samples, c_cert, margin,
                      lam_window, config=DEFAULT_METRIC):
    """Check the locally-constant-near-Sing certificate of a bump potential.

    Every bump center must be regular with lambda-proxy >= c_cert, and every
    sampled singular trace must sit outside each bump support by ``margin``.
    Returns a report dict; ``ok`` is the certificate verdict.
    """
    rows = []
    ok = True
    for i, b in enumerate(potential.bumps):
        lam = lambda_proxy(b.center, window=lam_window)
        center_ok = lam >= c_cert
        clearance = math.inf
        for s in singular_samples:
            d, de = gs_profile(surface, b.center, s, np.array([0.0]), config)
            clearance = min(clearance, float(d[0] - de[0]))
        bump_ok = center_ok and clearance > b.radius + margin
        ok = ok and bump_ok
        rows.append(
            {"bump": i, "lambda": lam, "clearance": clearance,
             "radius": b.radius, "ok": bump_ok}
        )
    return {"ok": ok, "rows": rows, "c_cert": c_cert, "margin": margin}


# -- Birkhoff integrals -----------------------------------------------------------


def birkhoff(surface, potential, trace_, span, step=None, config=DEFAULT_METRIC):
    """Trapezoid integral of phi(g_s trace) over span = (0, t) or (a, b).

    Returns (value, error bound); the error records the trapezoid term
    step^2 * Lip(phi) * t / 8 plus the metric-induced uncertainty.
    """
    a, b = float(span[0]), float(span[1])
    if b < a:
        raise WindowTooSmall("empty Birkhoff span")
    h = config.h if step is None else float(step)
    k = max(1, int(round(h / config.h)))
    h = k * config.h  # align with the metric lattice
    n = max(1, int(math.ceil((b - a) / h - 1e-12)))
    tgrid = a + h * np.arange(n + 1)
    vals, errs = potential.profile(surface, trace_, tgrid, config)
    w = np.full(n + 1, h)
    w[0] = w[-1] = 0.5 * h
    scale = (b - a) / (n * h) if n * h > 0 else 1.0
    value = float(np.dot(w, vals) * scale)
    err = h * h * potential.lipschitz * (b - a) / 8.0 + float(np.dot(w, errs) * scale)
    return value, err


# -- separated sets and pressure ---------------------------------------------------


@dataclass(frozen=True)
class PressureEstimate:
    value: float
    T: float
    eps: float
    set_size: int
    method: str = "separated"


def separated_set(surface, T, eps, pool, config=DEFAULT_METRIC):
    """Greedy maximal (T, eps)-separated subset of the pool (deterministic order).

    Pairs whose separation is indeterminate within error bands count as NOT
    separated, so the returned set is conservative.
    """
    chosen = []
    for x in pool:
        ok = True
        for y in chosen:
            lo, _hi = bowen_max(surface, x, y, (0.0, T), config)
            if lo < eps:
                ok = False
                break
        if ok:
            chosen.append(x)
    return chosen


def pressure(surface, potential, T, eps, pool, config=DEFAULT_METRIC, chosen=None):
    """Separated-set pressure estimate (1/T) log sum exp(Birkhoff)."""
    if not pool:
        raise EmptyPool("pressure needs a candidate pool")
    if chosen is None:
        chosen = separated_set(surface, T, eps, pool, config)
    if not chosen:
        raise EmptyPool("separated set is empty")
    weights = [birkhoff(surface, potential, x, (0.0, T), config=config)[0] for x in chosen]
    m = max(weights)
    value = (m + math.log(sum(math.exp(w - m) for w in weights))) / T
    return PressureEstimate(float(value), float(T), float(eps), len(chosen))


# -- orbit measures ----------------------------------------------------------------


@dataclass
class OrbitAtom:
    geodesic: object  # ClosedGeodesic
    weight: float
    phases: np.ndarray
    mass_per_phase: float


class OrbitMeasure:
    """Flow-invariant surrogate measure: weighted closed-geodesic point masses."""

    def __init__(self, surface, atoms, step):
        self.surface = surface
        self.atoms = atoms
        self.step = float(step)
        self._trace_cache = {}

    @property
    def total_mass(self):
        return sum(a.weight for a in self.atoms)

    @property
    def singular_mass(self):
        return sum(a.weight for a in self.atoms if a.geodesic.is_singular)

    def points(self, window, phase_shift=0.0):
        """Iterate (trace, mass) over all discretized orbit points."""
        for ai, atom in enumerate(self.atoms):
            for pi, ph in enumerate(atom.phases):
                yield self.point_trace(ai, pi, window, phase_shift), atom.mass_per_phase

    def point_trace(self, atom_index, phase_index, window, phase_shift=0.0):
        key = (atom_index, phase_index, round(window[0], 9), round(window[1], 9),
               round(phase_shift, 12))
        tr = self._trace_cache.get(key)
        if tr is None:
            atom = self.atoms[atom_index]
            ph = float(atom.phases[phase_index]) + phase_shift
            tr = trace_closed(self.surface, atom.geodesic, window, phase=ph)
            if len(self._trace_cache) > 200000:
                self._trace_cache.clear()
            self._trace_cache[key] = tr
        return tr


def orbit_measure(surface, potential, length_bound, step, max_events=6,
                  config=DEFAULT_METRIC, pool=None):
    """Weighted periodic-orbit measure with weights proportional to exp(int phi)."""
    cgs = closed_geodesics(surface, length_bound, max_events) if pool is None else pool
    if not cgs:
        raise EmptyPool("no closed geodesics within the length bound")
    raw = []
    for cg in cgs:
        tr = trace_closed(surface, cg, (-config.T - 1.0, cg.length + config.T + 1.0))
        val, _err = birkhoff(surface, potential, tr, (0.0, cg.length), config=config)
        raw.append(val)
    m = max(raw)
    weights = [math.exp(v - m) for v in raw]
    total = sum(weights)
    atoms = []
    for cg, w in zip(cgs, weights):
        k = max(1, int(round(cg.length / step)))
        phases = (cg.length / k) * np.arange(k)
        atoms.append(OrbitAtom(cg, w / total, phases, (w / total) / k))
    return OrbitMeasure(surface, atoms, step)


# -- Gibbs ratio harness -----------------------------------------------------------


def _quick_reject(surface, x, y, t, rho, config):
    """Coarse pointwise prefilter for Bowen membership (heuristic)."""
    grid = np.linspace(0.0, t, max(3, int(t / 0.5) + 1))
    D, slack = pointwise_profile(surface, x, y, grid)
    return bool(np.any(D - slack > 2.0 * rho + 0.2))


def ball_mass(surface, mu, x, t, rho, config=DEFAULT_METRIC, window_pad=1.0):
    """Measure of the Bowen ball B_t(x, rho) under the orbit surrogate.

    Returns (mass, indeterminate_mass).
    """
    window = (-config.T - window_pad, t + config.T + window_pad)
    mass = 0.0
    indet = 0.0
    for ai, atom in enumerate(mu.atoms):
        for pi in range(len(atom.phases)):
            y = mu.point_trace(ai, pi, window)
            if _quick_reject(surface, x, y, t, rho, config):
                continue
            res = bowen_contains(surface, x, y, (0.0, t), rho, config)
            if res.definite_in:
                mass += atom.mass_per_phase
            elif res.indeterminate:
                indet += atom.mass_per_phase
    return mass, indet


def gibbs_ratio(surface, mu, potential, pressure_value, samples,
                config=DEFAULT_METRIC):
    """Gibbs ratios r(x, t) = mu(B_t(x, rho)) exp(t P - int_0^t phi) per sample.

    samples: iterable of (trace, t, rho). Rows with zero resolved mass keep
    ratio None. Returns a report dict with per-sample rows and the log-spread.
    """
    rows = []
    for x, t, rho in samples:
        mass, indet = ball_mass(surface, mu, x, t, rho, config)
        integral, ierr = birkhoff(surface, potential, x, (0.0, t), config=config)
        ratio = None
        if mass > 0:
            ratio = mass * math.exp(t * pressure_value - integral)
        rows.append(
            {"t": t, "rho": rho, "mass": mass, "indeterminate": indet,
             "integral": integral, "integral_err": ierr, "ratio": ratio}
        )
    ratios = [r["ratio"] for r in rows if r["ratio"]]
    spread = (max(math.log(r) for r in ratios) - min(math.log(r) for r in ratios)) if ratios else None
    return {"rows": rows, "log_spread": spread, "resolved": len(ratios)}


# -- flow-box machinery -------------------------------------------------------------


def flowbox_ratio(surface, mu, box, A, B, ab, n, config=DEFAULT_METRIC,
                  sigma_pad=0.05):
    """mu(g_[-1/n,1/n] <A,B>) / mu(g_[a,b] <A,B>) for sub-leaf parameter sets.

    A and B are parameter intervals inside the rectangle's u/s intervals;
    expected value 2 / (n (b - a)).
    """
    from .leafstruct import product_coords

    a, b = float(ab[0]), float(ab[1])
    if not a < b:
        raise GeometryError("need a < b")
    lo_needed = min(a, -1.0 / n) - sigma_pad
    hi_needed = max(b, 1.0 / n) + sigma_pad
    window = (-config.T - 2.0, config.T + 2.0)
    num = den = 0.0
    for ai, atom in enumerate(mu.atoms):
        for pi in range(len(atom.phases)):
            z = mu.point_trace(ai, pi, window)
            try:
                pu, ps, sigma = product_coords(box, z, config=config,
                                               sigma_bound=hi_needed + 0.5)
            except (NotInBox, WindowTooSmall):
                continue
            if not (A[0] - 1e-12 <= pu <= A[1] + 1e-12):
                continue
            if not (B[0] - 1e-12 <= ps <= B[1] + 1e-12):
                continue
            if -1.0 / n <= sigma <= 1.0 / n:
                num += atom.mass_per_phase
            if a <= sigma <= b:
                den += atom.mass_per_phase
    if den == 0.0:
        raise ZeroMass("denominator set carries no orbit mass")
    return num / den


def holonomy_ratio(surface, mu, box, x, y, bins=8, layer_width=None,
                   count_floor=4, config=DEFAULT_METRIC):
    """Histogram comparison of conditional u-measures pushed by the holonomy.

    x, y: BoxMember values. Returns the report with empirical K-hat (max bin
    ratio between the pushed x-layer histogram and the native y-layer one).
    """
    from .leafstruct import product_coords

    rect = box.rectangle
    if layer_width is None:
        layer_width = 0.5 * (rect.s_interval[1] - rect.s_interval[0])
    window = (-config.T - 2.0, config.T + 2.0)
    edges = np.linspace(rect.u_interval[0], rect.u_interval[1], bins + 1)
    hist_x = np.zeros(bins)
    hist_y = np.zeros(bins)
    for ai, atom in enumerate(mu.atoms):
        for pi in range(len(atom.phases)):
            z = mu.point_trace(ai, pi, window)
            try:
                pu, ps, sigma = product_coords(box, z, config=config)
            except (NotInBox, WindowTooSmall):
                continue
            i = int(np.clip(np.searchsorted(edges, pu) - 1, 0, bins - 1))
            if abs(ps - x.ps) <= layer_width and abs(sigma - x.sigma) <= 1.0 / box.n:
                hist_x[i] += atom.mass_per_phase
            if abs(ps - y.ps) <= layer_width and abs(sigma - y.sigma) <= 1.0 / box.n:
                hist_y[i] += atom.mass_per_phase
    used = (hist_x > 0) & (hist_y > 0)
    if (x.ps, x.sigma) == (y.ps, y.sigma):
        k_hat = 1.0
    else:
        if used.sum() < 1 or hist_x.sum() == 0 or hist_y.sum() == 0:
            raise InsufficientMass("holonomy histogram underpopulated")
        px = hist_x[used] / hist_x.sum()
        py = hist_y[used] / hist_y.sum()
        k_hat = float(max(np.max(px / py), np.max(py / px)))
    counts = {"x": float(hist_x.sum()), "y": float(hist_y.sum())}
    if min(np.count_nonzero(hist_x), np.count_nonzero(hist_y)) < count_floor and (
        (x.ps, x.sigma) != (y.ps, y.sigma)
    ):
        raise InsufficientMass("holonomy histogram bins below the count floor")
    return {"k_hat": k_hat, "hist_x": hist_x.tolist(), "hist_y": hist_y.tolist(),
            "edges": edges.tolist(), "counts": counts}


# -- global Bowen property harness ----------------------------------------------


@dataclass
class BowenConstants:
    K: float = 0.0
    L: float = 0.0
    Q1: float = math.inf
    Q2: float = 0.0
    c_of_delta: dict = field(default_factory=dict)
    T_of_delta: dict = field(default_factory=dict)
    population: dict = field(default_factory=dict)


def bowen_gap(surface, potential, x, y, t, config=DEFAULT_METRIC):
    """|int_0^t phi along x minus along y| with error bound."""
    vx, ex = birkhoff(surface, potential, x, (0.0, t), config=config)
    vy, ey = birkhoff(surface, potential, y, (0.0, t), config=config)
    return abs(vx - vy), ex + ey


def verify_global_bowen(surface, potential, eps, pair_families, ts,
                        config=DEFAULT_METRIC, tol=1.05):
    """K-hat(t) per pair family and the saturation verdict.

    pair_families: {case_name: [(x, y) ...]} where each pair shadows within
    eps over the longest tested t (callers construct them accordingly).
    Returns the report with K-hat per (case, t) and saturation flags.
    """
    ts = sorted(ts)
    report = {"cases": {}, "eps": eps, "ts": list(ts)}
    overall = 0.0
    for case, pairs in pair_families.items():
        khat = {}
        for t in ts:
            worst = 0.0
            for x, y in pairs:
                gap, _err = bowen_gap(surface, potential, x, y, t, config)
                worst = max(worst, gap)
            khat[t] = worst
        saturated = khat[ts[-1]] <= tol * max(khat[ts[-2]], 1e-12) if len(ts) > 1 else True
        report["cases"][case] = {"k_hat": khat, "saturated": saturated}
        overall = max(overall, khat[ts[-1]])
    report["K"] = overall
    report["saturated"] = all(c["saturated"] for c in report["cases"].values())
    return report


def splice_constant(surface, potential, brackets, spans, config=DEFAULT_METRIC):
    """Estimate of the bracket-splice constant L from sampled brackets.

    brackets: iterable of (xi, w, z) with xi = <w, z>. For each span (n1, n2)
    the defect |int_{-n1}^{n2} phi(g_r xi) - int_{-n1}^0 phi(g_r z)
    - int_0^{n2} phi(g_r w)| is at most 2 L.
    """
    worst = 0.0
    for xi, w, z in brackets:
        for n1, n2 in spans:
            full, _e1 = birkhoff(surface, potential, xi, (-n1, n2), config=config)
            past, _e2 = birkhoff(surface, potential, z, (-n1, 0.0), config=config)
            fut, _e3 = birkhoff(surface, potential, w, (0.0, n2), config=config)
            worst = max(worst, abs(full - past - fut))
    return 0.5 * worst


# -- singular neighborhood test ----------------------------------------------------


def near_sing(surface, trace_, delta, table, lam_window=None):
    """True iff lambda stays below the calibrated c(delta) over [-T(delta), T(delta)]."""
    entry = table.get(round(delta, 12))
    if entry is None:
        raise GeometryError(f"no calibration entry for delta = {delta}")
    c, T = entry
    step = max(surface.s0 / 2.0, 1e-3)
    ts = np.arange(-T, T + 1e-9, step)
    lam = lambda_profile(trace_, ts, window=lam_window)
    return bool(np.all(lam <= c))


def calibrate_near_sing(surface, deltas, singular_traces, probes,
                        c_grid, T_grid, lam_window, config=DEFAULT_METRIC):
    """Pick (c, T) per delta: smallest T, then largest c, such that every probe
    flagged near is genuinely within delta of the sampled singular family.

    probes: list of (trace, distance_to_sing). Returns {delta: (c, T)}.
    """
    table = {}
    step = max(surface.s0 / 2.0, 1e-3)
    for delta in deltas:
        best = None
        for T in sorted(T_grid):
            ts = np.arange(-T, T + 1e-9, step)
            for c in sorted(c_grid, reverse=True):
                ok = True
                for tr, dist in probes:
                    fires = bool(np.all(lambda_profile(tr, ts, window=lam_window) <= c))
                    if fires and dist > delta:
                        ok = False
                        break
                    if dist <= 0.25 * delta and not fires:
                        ok = False  # grossly near samples must fire
                        break
                if ok:
                    best = (c, T)
                    break
            if best:
                break
        if best is None:
            raise GeometryError(f"no (c, T) calibrates delta = {delta}")
        table[round(delta, 12)] = best
    return table
