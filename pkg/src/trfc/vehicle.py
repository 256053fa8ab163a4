"""Planar double-track vehicle simulator.

Body frame: x forward, y to the right, yaw rate positive clockwise seen from
above. Steering angles are negative for left turns. Lateral velocity and yaw
rate are integrated with fixed-step RK4; the longitudinal speed is held at the
maneuver target. Vertical loads are quasi-static: a static axle split plus
lateral load transfer proportional to each axle's static share.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from trfc.errors import ConfigurationError, SimulationFault
from trfc.tire_models import TireConfig, lateral_force

GRAVITY = 9.81
SAMPLE_RATE_HZ = 100.0
DT = 1.0 / SAMPLE_RATE_HZ
MU_MIN, MU_MAX = 0.1, 1.5
# cornering stiffness reference load of the default vehicle, about the static front-wheel load
LOAD_REF_N = 3000.0


def default_tire() -> TireConfig:
    """Tires of the default vehicle: 30 kN/rad at 3 kN, proportional to load."""
    return TireConfig(load_ref_n=LOAD_REF_N)


class WheelId(enum.IntEnum):
    FL = 0
    FR = 1
    RL = 2
    RR = 3

    @classmethod
    def parse(cls, value: "str | int | WheelId") -> "WheelId":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            try:
                return cls[value.strip().upper()]
            except KeyError:
                raise ConfigurationError(f"unknown wheel {value!r}") from None
        return cls(value)


WHEELS = tuple(WheelId)
WHEEL_NAMES = tuple(w.name.lower() for w in WheelId)
LEFT = np.array([True, False, True, False])


@dataclass(frozen=True)
class VehicleParams:
    mass_kg: float = 1100.0
    yaw_inertia_kgm2: float = 1350.0
    dist_cg_front_a_m: float = 1.5
    dist_cg_rear_b_m: float = 1.9
    half_track_c_m: float = 0.9
    cg_height_h_m: float = 0.5
    wheel_radius_m: float = 0.25
    tire: TireConfig = field(default_factory=default_tire)

    def __post_init__(self):
        for name in ("mass_kg", "yaw_inertia_kgm2", "dist_cg_front_a_m", "dist_cg_rear_b_m",
                     "half_track_c_m", "cg_height_h_m", "wheel_radius_m"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigurationError(f"vehicle parameter {name} must be positive, got {value}")

    @property
    def wheelbase_m(self) -> float:
        return self.dist_cg_front_a_m + self.dist_cg_rear_b_m

    @property
    def track_m(self) -> float:
        return 2.0 * self.half_track_c_m


@dataclass(frozen=True)
class BodyState:
    u_mps: float
    v_mps: float = 0.0
    r_radps: float = 0.0
    ay_mps2: float = 0.0


@dataclass(frozen=True)
class FrictionSchedule:
    """Per-wheel piecewise-constant friction, one ``(t_start, mu)`` list per wheel."""

    breakpoints: tuple[tuple[tuple[float, float], ...], ...]

    def __post_init__(self):
        bps = tuple(tuple((float(t), float(mu)) for t, mu in wheel) for wheel in self.breakpoints)
        object.__setattr__(self, "breakpoints", bps)
        if len(bps) != 4:
            raise ConfigurationError("friction schedule needs exactly four wheels")
        for wheel, points in zip(WHEELS, bps):
            if not points:
                raise ConfigurationError(f"empty friction schedule for wheel {wheel.name}")
            times = [t for t, _ in points]
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ConfigurationError(f"friction breakpoints for {wheel.name} must be strictly increasing")
            for _, mu in points:
                if not MU_MIN <= mu <= MU_MAX:
                    raise ConfigurationError(f"friction {mu} outside [{MU_MIN}, {MU_MAX}]")

    @classmethod
    def uniform(cls, points: Sequence[tuple[float, float]]) -> "FrictionSchedule":
        return cls((tuple(points),) * 4)

    @classmethod
    def constant(cls, mu: float) -> "FrictionSchedule":
        return cls.uniform([(0.0, mu)])

    @classmethod
    def per_side(cls, left, right) -> "FrictionSchedule":
        left, right = tuple(left), tuple(right)
        return cls((left, right, left, right))

    def mirrored(self) -> "FrictionSchedule":
        fl, fr, rl, rr = self.breakpoints
        return FrictionSchedule((fr, fl, rr, rl))

    def at(self, t: float) -> np.ndarray:
        return np.array([_lookup(points, t) for points in self.breakpoints])

    def change_times(self) -> list[float]:
        times = {t for points in self.breakpoints for t, _ in points[1:]}
        return sorted(times)


def _lookup(points, t):
    mu = points[0][1]
    for t_start, value in points:
        if t_start <= t:
            mu = value
        else:
            break
    return mu


def friction_at(schedule: FrictionSchedule, t: float, wheel: WheelId | str) -> float:
    """Friction of the last breakpoint starting at or before ``t``."""
    if t < 0:
        raise ConfigurationError("time must be non-negative")
    return _lookup(schedule.breakpoints[WheelId.parse(wheel)], t)


def ackermann_partner(delta: float, p: VehicleParams) -> float:
    """Steer angle of the opposite front wheel for Ackermann geometry.

    ``delta`` is the front-left angle; the returned value is the front-right
    angle. The relation is symmetric under mirroring, so calling it with the
    mirrored right wheel angle gives the mirrored left wheel angle.
    """
    if delta == 0.0:
        return 0.0
    k = p.track_m / p.wheelbase_m
    cot = 1.0 / math.tan(abs(delta))
    # left turn (delta < 0): left wheel is inner, right wheel turns less
    other = cot + k if delta < 0 else cot - k
    if other <= 0:
        raise ConfigurationError("steer angle too large for Ackermann geometry")
    return math.copysign(math.atan(1.0 / other), delta)


class ManeuverKind(str, enum.Enum):
    RAMP_STEER = "ramp_steer"
    CONSTANT_STEER = "constant_steer"


@dataclass(frozen=True)
class Maneuver:
    """Scripted front-wheel steering at constant speed.

    ``steer_rad`` is the final (ramp) or constant angle of the ``lead`` wheel.
    The other front wheel uses ``steer_other_rad`` when given, otherwise the
    Ackermann partner of the lead angle at every instant. ``settle_s`` runs the
    initial steering and friction for that long before recording starts so
    constant-steer runs begin at equilibrium.
    """

    kind: ManeuverKind
    duration_s: float
    steer_rad: float
    u_target_mps: float = 10.0
    steer_other_rad: float | None = None
    ramp_s: float | None = None
    lead: str = "FL"
    settle_s: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ManeuverKind(self.kind))
        if not self.duration_s > 0:
            raise ConfigurationError("maneuver duration must be positive")
        if not self.u_target_mps > 0:
            raise ConfigurationError("target speed must be positive")
        if self.lead not in ("FL", "FR"):
            raise ConfigurationError("lead wheel must be FL or FR")
        if self.settle_s < 0:
            raise ConfigurationError("settle time must be non-negative")
        if self.ramp_s is not None and not self.ramp_s > 0:
            raise ConfigurationError("ramp duration must be positive")

    @classmethod
    def ramp(cls, final_deg: float = -18.0, ramp_s: float = 30.0, duration_s: float | None = None,
             u_target_mps: float = 10.0) -> "Maneuver":
        return cls(ManeuverKind.RAMP_STEER, duration_s or ramp_s, math.radians(final_deg),
                   u_target_mps=u_target_mps, ramp_s=ramp_s)

    @classmethod
    def constant(cls, fl_deg: float, fr_deg: float | None = None, duration_s: float = 50.0,
                 u_target_mps: float = 10.0, settle_s: float = 10.0) -> "Maneuver":
        other = None if fr_deg is None else math.radians(fr_deg)
        return cls(ManeuverKind.CONSTANT_STEER, duration_s, math.radians(fl_deg), u_target_mps=u_target_mps,
                   steer_other_rad=other, settle_s=settle_s)

    def _scale(self, t: float) -> float:
        if self.kind is ManeuverKind.CONSTANT_STEER:
            return 1.0
        ramp = self.ramp_s if self.ramp_s is not None else self.duration_s
        return min(max(t / ramp, 0.0), 1.0)

    def steer(self, t: float, p: VehicleParams) -> tuple[float, float]:
        """Front-left and front-right steer angles at time ``t``."""
        s = self._scale(t)
        lead = s * self.steer_rad
        if self.steer_other_rad is not None:
            other = s * self.steer_other_rad
        elif self.lead == "FL":
            other = ackermann_partner(lead, p)
        else:
            # mirrored geometry: the partner of -fr is -fl
            other = -ackermann_partner(-lead, p)
        return (lead, other) if self.lead == "FL" else (other, lead)

    def mirrored(self) -> "Maneuver":
        """Left/right mirror image: steer angles negate and swap wheels."""
        return replace(self, steer_rad=-self.steer_rad,
                       steer_other_rad=None if self.steer_other_rad is None else -self.steer_other_rad,
                       lead="FR" if self.lead == "FL" else "FL")


def slip_angles(state: BodyState, delta_fl: float, delta_fr: float, p: VehicleParams) -> np.ndarray:
    """Per-wheel slip angles ``[fl, fr, rl, rr]`` in rad.

    Left wheels see ``u + c r`` and right wheels ``u - c r``.
    """
    u, v, r = state.u_mps, state.v_mps, state.r_radps
    c = p.half_track_c_m
    u_left, u_right = u + c * r, u - c * r
    if abs(u_left) <= 0.1 or abs(u_right) <= 0.1:
        raise SimulationFault("wheel longitudinal speed below 0.1 m/s")
    front = v + p.dist_cg_front_a_m * r
    rear = v - p.dist_cg_rear_b_m * r
    return np.array([
        math.atan(front / u_left) - delta_fl,
        math.atan(front / u_right) - delta_fr,
        math.atan(rear / u_left),
        math.atan(rear / u_right),
    ])


def vertical_loads(state: BodyState, p: VehicleParams) -> np.ndarray:
    """Quasi-static wheel loads ``[fl, fr, rl, rr]`` in newton for ``state.ay_mps2``."""
    return _loads(state.ay_mps2, p)


def _loads(ay: float, p: VehicleParams) -> np.ndarray:
    m, a, b = p.mass_kg, p.dist_cg_front_a_m, p.dist_cg_rear_b_m
    front_axle = m * GRAVITY * b / (a + b)
    rear_axle = m * GRAVITY * a / (a + b)
    transfer = m * ay * p.cg_height_h_m / (2.0 * p.half_track_c_m)
    d_front = transfer * b / (a + b)
    d_rear = transfer * a / (a + b)
    # ay < 0 (leftward acceleration) loads the right-hand wheels
    fz = np.array([
        front_axle / 2 + d_front,
        front_axle / 2 - d_front,
        rear_axle / 2 + d_rear,
        rear_axle / 2 - d_rear,
    ])
    if np.any(fz <= 0):
        raise SimulationFault(f"wheel load non-positive (rollover regime), ay={ay:.3f}")
    return fz


@dataclass
class _WheelEval:
    alpha: np.ndarray
    fz: np.ndarray
    fy: np.ndarray
    ay: float


def _evaluate(u: float, v: float, r: float, delta: tuple[float, float], mu: np.ndarray,
              p: VehicleParams, ay_guess: float) -> _WheelEval:
    """Slip angles, loads and forces with ``ay = sum(Fy)/m`` solved by fixed-point iteration."""
    alpha = slip_angles(BodyState(u, v, r), delta[0], delta[1], p)
    kind, params = p.tire.model, p.tire.params_for()

    def residual(ay):
        fz = _loads(ay, p)
        fy = np.asarray(lateral_force(kind, alpha, mu, fz, params))
        return float(np.sum(fy)) / p.mass_kg - ay, fz, fy

    # secant iteration on ay - sum(Fy(Fz(ay)))/m = 0, warm-started
    x0 = ay_guess
    h0, fz, fy = residual(x0)
    x1 = x0 + h0
    for _ in range(50):
        if abs(h0) <= 1e-11:
            break
        h1, fz, fy = residual(x1)
        if abs(h1) <= 1e-11:
            x0, h0 = x1, h1
            break
        denom = h1 - h0
        x_next = x1 + h1 if denom == 0 else x1 - h1 * (x1 - x0) / denom
        x0, h0, x1 = x1, h1, x_next
    else:
        raise SimulationFault("load transfer iteration did not converge")
    return _WheelEval(alpha, fz, fy, x0 + h0)


def _derivatives(u, v, r, delta, mu, p, ay_guess):
    ev = _evaluate(u, v, r, delta, mu, p, ay_guess)
    fy = ev.fy
    v_dot = ev.ay - u * r
    r_dot = (p.dist_cg_front_a_m * (fy[0] + fy[1]) - p.dist_cg_rear_b_m * (fy[2] + fy[3])) / p.yaw_inertia_kgm2
    return v_dot, r_dot, ev


def _rk4(u, v, r, steer_at, schedule, t, h, p, ay_guess):
    k1v, k1r, ev = _derivatives(u, v, r, steer_at(t), schedule.at(t), p, ay_guess)
    mid_steer, mid_mu = steer_at(t + h / 2), schedule.at(t + h / 2)
    k2v, k2r, _ = _derivatives(u, v + h / 2 * k1v, r + h / 2 * k1r, mid_steer, mid_mu, p, ev.ay)
    k3v, k3r, _ = _derivatives(u, v + h / 2 * k2v, r + h / 2 * k2r, mid_steer, mid_mu, p, ev.ay)
    k4v, k4r, _ = _derivatives(u, v + h * k3v, r + h * k3r, steer_at(t + h), schedule.at(t + h), p, ev.ay)
    v_new = v + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
    r_new = r + h / 6 * (k1r + 2 * k2r + 2 * k3r + k4r)
    if not (math.isfinite(v_new) and math.isfinite(r_new)):
        raise SimulationFault("non-finite body state")
    return v_new, r_new, ev.ay


def step(state: BodyState, steer, schedule: FrictionSchedule, t: float, dt: float, p: VehicleParams) -> BodyState:
    """Advance lateral velocity and yaw rate by one RK4 step of length ``dt``.

    ``steer`` is either a fixed ``(delta_fl, delta_fr)`` pair or a callable of
    time returning one. The returned state carries the lateral acceleration at
    the new time.
    """
    steer_at = steer if callable(steer) else (lambda _t: steer)
    v_new, r_new, ay = _rk4(state.u_mps, state.v_mps, state.r_radps, steer_at, schedule, t, dt, p, state.ay_mps2)
    end = _evaluate(state.u_mps, v_new, r_new, steer_at(t + dt), schedule.at(t + dt), p, ay)
    return BodyState(state.u_mps, v_new, r_new, end.ay)


@dataclass(frozen=True)
class SimTrace:
    """Ground-truth (or noisy) time series sampled at ``sample_rate_hz``.

    Scalar channels have shape ``(n,)``; per-wheel channels ``(n, 4)`` with
    columns ordered FL, FR, RL, RR.
    """

    t: np.ndarray
    u: np.ndarray
    v: np.ndarray
    r: np.ndarray
    ay: np.ndarray
    alpha: np.ndarray
    fy: np.ndarray
    fz: np.ndarray
    mu_true: np.ndarray
    delta: np.ndarray
    sample_rate_hz: float = SAMPLE_RATE_HZ

    def __post_init__(self):
        n = len(self.t)
        for name in ("u", "v", "r", "ay"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"channel {name} has wrong shape")
        for name in ("alpha", "fy", "fz", "mu_true", "delta"):
            if getattr(self, name).shape != (n, 4):
                raise ValueError(f"per-wheel channel {name} has wrong shape")
        for name in ("t", "u", "v", "r", "ay", "alpha", "fy", "fz", "mu_true", "delta"):
            getattr(self, name).setflags(write=False)

    def __len__(self) -> int:
        return len(self.t)

    def replace(self, **changes) -> "SimTrace":
        fields = {name: np.array(getattr(self, name)) for name in CHANNELS}
        fields.update({k: np.array(v, dtype=np.float64) for k, v in changes.items()})
        return SimTrace(**fields, sample_rate_hz=self.sample_rate_hz)

    def head(self, n: int) -> "SimTrace":
        """The first ``n`` samples."""
        fields = {name: np.array(getattr(self, name)[:n]) for name in CHANNELS}
        return SimTrace(**fields, sample_rate_hz=self.sample_rate_hz)

    def to_csv(self, path: str | Path | None = None) -> str:
        return write_trace_csv(self, path)


CHANNELS = ("t", "u", "v", "r", "ay", "alpha", "fy", "fz", "mu_true", "delta")
_SCALAR_COLUMNS = ("t", "u", "v", "r", "ay")
_WHEEL_FIELDS = ("alpha", "fy", "fz", "mu_true", "delta")


def trace_columns() -> list[str]:
    cols = list(_SCALAR_COLUMNS)
    for w in WHEEL_NAMES:
        cols += [f"{f}_{w}" for f in _WHEEL_FIELDS]
    return cols


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def write_trace_csv(trace: SimTrace, path: str | Path | None = None) -> str:
    """Serialize a trace; returns the CSV text and writes it to ``path`` if given."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(trace_columns())
    scal = np.column_stack([getattr(trace, c) for c in _SCALAR_COLUMNS])
    for k in range(len(trace)):
        row = [_fmt(x) for x in scal[k]]
        for w in range(4):
            row += [_fmt(getattr(trace, f)[k, w]) for f in _WHEEL_FIELDS]
        writer.writerow(row)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_trace_csv(path: str | Path) -> SimTrace:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"trace file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != trace_columns():
            raise ConfigurationError(f"{path}: not a trace CSV (unexpected header)")
        data = np.array([[float(x) for x in row] for row in reader if row], dtype=np.float64)
    if data.size == 0:
        raise ConfigurationError(f"{path}: trace has no samples")
    fields = {c: data[:, i] for i, c in enumerate(_SCALAR_COLUMNS)}
    base = len(_SCALAR_COLUMNS)
    for j, f in enumerate(_WHEEL_FIELDS):
        fields[f] = np.column_stack([data[:, base + w * len(_WHEEL_FIELDS) + j] for w in range(4)])
    t = fields["t"]
    rate = 1.0 / float(np.median(np.diff(t))) if len(t) > 1 else SAMPLE_RATE_HZ
    return SimTrace(**fields, sample_rate_hz=round(rate, 6))


def run_maneuver(m: Maneuver, schedule: FrictionSchedule, p: VehicleParams, seed: int = 0) -> SimTrace:
    """Simulate ``m`` over ``schedule`` and return the 100 Hz ground-truth trace.

    The simulation itself is deterministic; ``seed`` is accepted so a scenario
    is fully described by (maneuver, schedule, params, seed) and is otherwise
    unused here (noise is applied downstream).
    """
    del seed
    n = int(round(m.duration_s * SAMPLE_RATE_HZ))
    steer_at = lambda t: m.steer(t, p)  # noqa: E731
    state = BodyState(m.u_target_mps)

    if m.settle_s > 0:
        steer0 = steer_at(0.0)
        mu0 = FrictionSchedule(tuple(((0.0, friction_at(schedule, 0.0, w)),) for w in WHEELS))
        try:
            for _ in range(int(round(m.settle_s * SAMPLE_RATE_HZ))):
                state = step(state, steer0, mu0, 0.0, DT, p)
        except SimulationFault as exc:
            raise SimulationFault(f"during settling: {exc}") from None

    out = {name: np.empty(n) for name in _SCALAR_COLUMNS}
    wheel = {name: np.empty((n, 4)) for name in _WHEEL_FIELDS}
    u, v, r, ay = state.u_mps, state.v_mps, state.r_radps, state.ay_mps2
    for k in range(n):
        t = k / SAMPLE_RATE_HZ
        delta = steer_at(t)
        mu = schedule.at(t)
        try:
            ev = _evaluate(u, v, r, delta, mu, p, ay)
            if k + 1 < n:
                v_next, r_next, _ = _rk4(u, v, r, steer_at, schedule, t, DT, p, ev.ay)
        except SimulationFault as exc:
            raise SimulationFault(str(exc), step=k) from None
        out["t"][k] = t
        out["u"][k] = u
        out["v"][k] = v
        out["r"][k] = r
        out["ay"][k] = ev.ay
        wheel["alpha"][k] = ev.alpha
        wheel["fy"][k] = ev.fy
        wheel["fz"][k] = ev.fz
        wheel["mu_true"][k] = mu
        wheel["delta"][k] = (delta[0], delta[1], 0.0, 0.0)
        if k + 1 < n:
            v, r, ay = v_next, r_next, ev.ay
    return SimTrace(**out, **wheel)
