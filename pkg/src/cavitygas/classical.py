"""Classical billiard dynamics: exact specular ray tracing, Lyapunov exponents,
and the semiclassical time and action scales built from them.

Trajectories are pure functions of (geometry, initial condition); flights
between reflections are exact straight lines with analytic boundary
intersections, so speed is conserved to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import PhysicalConstants, NATURAL
from .geometry import Arc, BilliardGeometry, Segment

_GRAZE_TOL = 1e-12


@dataclass(frozen=True)
class ReflectionEvent:
    time: float
    position: tuple[float, float]
    velocity: tuple[float, float]    # outgoing velocity
    wall_index: int


@dataclass(frozen=True)
class Trajectory:
    events: tuple[ReflectionEvent, ...]
    initial_position: tuple[float, float]
    initial_velocity: tuple[float, float]
    total_time: float
    corner_terminated: bool = False
    grazing_count: int = 0

    @property
    def n_bounces(self) -> int:
        return len(self.events)

    def state_at(self, t: float):
        """Position and velocity at time t (piecewise linear flight)."""
        if t < 0 or t > self.total_time:
            raise ValueError("time outside trajectory horizon")
        pos = np.array(self.initial_position)
        vel = np.array(self.initial_velocity)
        t_prev = 0.0
        for ev in self.events:
            if ev.time >= t:
                break
            pos = np.array(ev.position)
            vel = np.array(ev.velocity)
            t_prev = ev.time
        return pos + vel * (t - t_prev), vel


def _segment_hit(pos, vel, seg: Segment):
    """(time, normal) of the first forward crossing of a wall segment."""
    p0 = np.array(seg.p0)
    d = np.array(seg.p1) - p0
    # solve pos + t v = p0 + u d
    det = vel[0] * (-d[1]) - vel[1] * (-d[0])
    if abs(det) < 1e-300:
        return None
    rhs = p0 - pos
    t = (rhs[0] * (-d[1]) - rhs[1] * (-d[0])) / det
    u = (vel[0] * rhs[1] - vel[1] * rhs[0]) / det
    if t <= _GRAZE_TOL or u < -1e-12 or u > 1 + 1e-12:
        return None
    n = np.array([-d[1], d[0]])
    n /= np.linalg.norm(n)
    corner = u < 1e-9 or u > 1 - 1e-9
    return t, n, corner


def _arc_hit(pos, vel, arc: Arc):
    """(time, normal) of the first forward crossing of a circular arc."""
    c = np.array(arc.center)
    rel = pos - c
    a = vel @ vel
    b = 2 * rel @ vel
    cc = rel @ rel - arc.radius ** 2
    disc = b * b - 4 * a * cc
    if disc < 0:
        return None
    sq = math.sqrt(max(disc, 0.0))
    hits = []
    for t in ((-b - sq) / (2 * a), (-b + sq) / (2 * a)):
        if t <= _GRAZE_TOL:
            continue
        hit = pos + vel * t
        theta = math.atan2(hit[1] - c[1], hit[0] - c[0])
        if arc.contains_angle(theta):
            hits.append((t, hit, theta))
    if not hits:
        return None
    t, hit, theta = min(hits, key=lambda h: h[0])
    n = (hit - c) / arc.radius
    span = (arc.theta1 - arc.theta0) % (2 * math.pi) or 2 * math.pi
    rel_angle = (theta - arc.theta0) % (2 * math.pi)
    corner = rel_angle < 1e-9 or rel_angle > span - 1e-9
    grazing = disc < _GRAZE_TOL * max(1.0, b * b)
    return t, n, corner, grazing


def ray_trace(geometry: BilliardGeometry, x0, v0, horizon: float,
              max_bounces: int = 10_000_000) -> Trajectory:
    """Specular billiard trajectory up to a time horizon.

    Grazing arc hits (discriminant below 1e-12) are resolved by the minimal
    positive flight time and counted; exact corner hits terminate the
    trajectory with a flag.
    """
    pos = np.array(x0, dtype=float)
    vel = np.array(v0, dtype=float)
    if not geometry.contains(*pos):
        raise ValueError(f"initial position {tuple(pos)} not strictly interior")
    speed = np.linalg.norm(vel)
    if speed <= 0:
        raise ValueError("need a nonzero initial velocity")

    events = []
    t_now = 0.0
    grazing = 0
    corner = False
    while t_now < horizon and len(events) < max_bounces:
        best = None
        for w, wall in enumerate(geometry.walls):
            if isinstance(wall, Segment):
                hit = _segment_hit(pos, vel, wall)
                if hit is not None:
                    t, n, is_corner = hit
                    if best is None or t < best[0]:
                        best = (t, n, is_corner, False, w)
            else:
                hit = _arc_hit(pos, vel, wall)
                if hit is not None:
                    t, n, is_corner, graze = hit
                    if best is None or t < best[0]:
                        best = (t, n, is_corner, graze, w)
        if best is None:
            raise RuntimeError("ray escaped the boundary (geometry inconsistency)")
        t_hit, n, is_corner, graze, w = best
        if t_now + t_hit > horizon:
            break
        pos = pos + vel * t_hit
        t_now += t_hit
        if graze:
            grazing += 1
        if is_corner:
            corner = True
            events.append(ReflectionEvent(t_now, tuple(pos), tuple(vel), w))
            break
        vel = vel - 2 * (vel @ n) * n
        events.append(ReflectionEvent(t_now, tuple(pos), tuple(vel), w))
    return Trajectory(tuple(events), tuple(np.array(x0, dtype=float)),
                      tuple(np.array(v0, dtype=float)),
                      min(t_now, horizon) if corner else horizon,
                      corner, grazing)


# ---------------------------------------------------------------------------
# Lyapunov exponent
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LyapunovEstimate:
    exponent: float
    stderr: float
    trajectory_count: int
    horizon: float

    def __post_init__(self):
        if self.stderr < 0:
            raise ValueError("stderr must be non-negative")


def _interior_point(geometry: BilliardGeometry, rng):
    a, b = geometry.lengths
    hi_x = a + (geometry.radius if geometry.kind == "stadium" else 0.0)
    for _ in range(10_000):
        x = rng.uniform(0.02 * hi_x, 0.98 * hi_x)
        y = rng.uniform(0.02 * b, 0.98 * b)
        if geometry.contains(x, y):
            return x, y
    raise RuntimeError("could not sample an interior point")


def _pair_exponent(geometry, x0, v0, speed, horizon, delta0, renorm_factor, scale):
    """Benettin two-trajectory estimate for one initial condition."""
    ref = ray_trace(geometry, x0, v0, horizon)
    if ref.corner_terminated:
        return None
    # perturb the launch angle by delta0 / scale
    ang = math.atan2(v0[1], v0[0]) + delta0 / scale
    x, v = np.array(x0), speed * np.array([math.cos(ang), math.sin(ang)])
    log_sum = 0.0
    t_elapsed = 0.0
    tau = 0.25 * scale / speed
    threshold = delta0 * renorm_factor
    while t_elapsed + tau < horizon:
        t_elapsed += tau
        seg = ray_trace(geometry, x, v, tau)
        if seg.corner_terminated:
            return None
        x, v = seg.state_at(tau)
        pr, vr = ref.state_at(t_elapsed)
        d = math.sqrt(np.sum((x - pr) ** 2) + (scale / speed) ** 2 * np.sum((v - vr) ** 2))
        if d >= threshold or d <= 0:
            if d <= 0:
                return None
            log_sum += math.log(d / delta0)
            # rescale the full phase-space offset back to delta0
            x = pr + (x - pr) * (delta0 / d)
            v = vr + (v - vr) * (delta0 / d)
            v = v * (speed / np.linalg.norm(v))
            if not geometry.contains(*x):
                x = pr.copy()
    pr, vr = ref.state_at(t_elapsed)
    d = math.sqrt(np.sum((x - pr) ** 2) + (scale / speed) ** 2 * np.sum((v - vr) ** 2))
    if d > 0:
        log_sum += math.log(d / delta0)
    return log_sum / t_elapsed


def lyapunov_estimate(geometry: BilliardGeometry, speed: float = 1.0,
                      n_pairs: int = 16, horizon: float = 2000.0, seed: int = 0,
                      delta0: float = 1e-9,
                      renorm_factor: float = 1e3) -> LyapunovEstimate:
    """Largest Lyapunov exponent from two-trajectory separation growth.

    The separation (position plus velocity scaled by L/v) is renormalized back
    to delta0 whenever it exceeds delta0 * renorm_factor; the exponent is the
    mean log-growth rate over pairs, with the spread across pairs as stderr.
    """
    if n_pairs < 10:
        raise ValueError("need at least 10 trajectory pairs")
    rng = np.random.default_rng(seed)
    scale = geometry.size
    vals = []
    attempts = 0
    while len(vals) < n_pairs and attempts < 10 * n_pairs:
        attempts += 1
        x0 = _interior_point(geometry, rng)
        ang = rng.uniform(0, 2 * math.pi)
        v0 = (speed * math.cos(ang), speed * math.sin(ang))
        lam = _pair_exponent(geometry, x0, v0, speed, horizon, delta0,
                             renorm_factor, scale)
        if lam is not None:
            vals.append(lam)
    if len(vals) < n_pairs:
        raise RuntimeError("too many corner-terminated pairs")
    vals = np.array(vals)
    lam = float(vals.mean())
    err = float(vals.std(ddof=1) / math.sqrt(len(vals)))
    return LyapunovEstimate(max(lam, 0.0) if abs(lam) < 2 * err else lam,
                            err, len(vals), horizon)


# ---------------------------------------------------------------------------
# Semiclassical scales
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ActionScale:
    action: float
    mass: float
    size: float
    energy_scale: float     # temperature or energy per particle

    def __post_init__(self):
        if self.action <= 0:
            raise ValueError("action scale must be positive")


def action_scale(mass: float, size: float, energy_scale: float) -> ActionScale:
    """Characteristic classical action sqrt(m T L^2), coefficient one."""
    if mass <= 0 or size <= 0 or energy_scale <= 0:
        raise ValueError("all inputs must be positive")
    return ActionScale(math.sqrt(mass * energy_scale) * size, mass, size, energy_scale)


@dataclass(frozen=True)
class EhrenfestTime:
    value: float
    lyapunov: float
    action: float
    typicality_ratio: float | None = None   # t_E / (hbar / T)


def ehrenfest_time(lam: float, action: ActionScale | float,
                   constants: PhysicalConstants = NATURAL,
                   temperature: float | None = None) -> EhrenfestTime:
    """t_E = ln(A / hbar) / lambda, coefficient one.

    A non-positive exponent (integrable motion) yields an infinite Ehrenfest
    time: the observable never relaxes.  When a temperature is given the
    ratio t_E / (hbar / T) is attached; it exceeds one deep in the
    semiclassical regime.
    """
    A = action.action if isinstance(action, ActionScale) else float(action)
    if A <= constants.hbar:
        if A <= 0:
            raise ValueError("action scale must be positive")
    if lam <= 0:
        return EhrenfestTime(math.inf, lam, A,
                             math.inf if temperature else None)
    t_e = math.log(A / constants.hbar) / lam
    ratio = None
    if temperature is not None:
        ratio = t_e * temperature / constants.hbar
    return EhrenfestTime(t_e, lam, A, ratio)


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------

def trajectory_to_csv(traj: Trajectory, path) -> None:
    """Reflection events as CSV rows (t, x, y, vx, vy)."""
    with open(path, "w") as fh:
        fh.write("t,x,y,vx,vy\n")
        fh.write(f"0.0,{traj.initial_position[0]!r},{traj.initial_position[1]!r},"
                 f"{traj.initial_velocity[0]!r},{traj.initial_velocity[1]!r}\n")
        for ev in traj.events:
            fh.write(f"{ev.time!r},{ev.position[0]!r},{ev.position[1]!r},"
                     f"{ev.velocity[0]!r},{ev.velocity[1]!r}\n")


def lyapunov_report(est: LyapunovEstimate, geometry: BilliardGeometry,
                    speed: float, path) -> None:
    """Structured-text report with the inputs echoed."""
    lines = [
        "cavitygas-lyapunov v1",
        f"geometry {geometry.kind}",
        f"lengths {geometry.lengths[0]!r} {geometry.lengths[1]!r}",
        f"radius {geometry.radius!r}",
        f"speed {speed!r}",
        f"horizon {est.horizon!r}",
        f"pairs {est.trajectory_count}",
        f"exponent {est.exponent!r}",
        f"stderr {est.stderr!r}",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
