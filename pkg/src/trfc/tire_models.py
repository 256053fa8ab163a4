"""Closed-form lateral tire force models.

All three models map ``(alpha, mu, fz)`` to a lateral force in newton. They
accept scalars or numpy arrays (broadcast elementwise) and return a ``float``
when every input is scalar.

Sign conventions differ between the models as usually written: Dugoff and
Brush return a force opposing the slip angle, ``Fy = -C_alpha * alpha`` near
the origin, while the Magic Formula is written with ``Fy`` following ``alpha``.
:func:`lateral_force` is the vehicle-frame entry point and evaluates every
model in the Dugoff/Brush convention.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Union

import numpy as np
import numpy.typing as npt

from trfc.errors import ConfigurationError, DomainError

ArrayLike = Union[float, npt.NDArray[np.float64]]

# tan(alpha) is evaluated directly, keep away from the singularity
ALPHA_LIMIT = math.pi / 2 - 1e-3


class TireModelKind(str, enum.Enum):
    PACEJKA = "pacejka"
    DUGOFF = "dugoff"
    BRUSH = "brush"

    @classmethod
    def parse(cls, value: "str | TireModelKind") -> "TireModelKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ConfigurationError(f"unknown tire model {value!r} (expected one of {names})") from None


@dataclass(frozen=True)
class CorneringStiffness:
    """Cornering stiffness in N/rad.

    With ``load_ref_n`` set the stiffness scales linearly with vertical load,
    ``c_alpha * fz / load_ref_n``, so ``c_alpha`` is the value at the
    reference load. Left as ``None`` it is the same constant for every load.
    """

    c_alpha: float = 30_000.0
    load_ref_n: float | None = None

    def __post_init__(self):
        if not (math.isfinite(self.c_alpha) and self.c_alpha > 0):
            raise ConfigurationError(f"cornering stiffness must be positive, got {self.c_alpha}")
        _check_load_ref(self.load_ref_n)

    def at(self, fz: ArrayLike) -> ArrayLike:
        """Stiffness at vertical load ``fz``."""
        return _stiffness(self.c_alpha, self.load_ref_n, fz)


@dataclass(frozen=True)
class PacejkaParams:
    """Magic Formula coefficients.

    The peak factor is ``D = peak_scale * mu * fz``. When ``stiffness_factor_B``
    is left as ``None`` it is derived per evaluation as ``c_alpha / (C * D)``,
    which pins the slope at the origin to ``c_alpha`` for every load and
    friction level.
    """

    shape_C: float = 1.3
    curvature_E: float = -1.0
    vertical_offset_Svy: float = 0.0
    peak_scale: float = 1.0
    c_alpha: float = 30_000.0
    stiffness_factor_B: float | None = None
    load_ref_n: float | None = None

    def __post_init__(self):
        if not self.shape_C > 0:
            raise ConfigurationError("Pacejka shape factor C must be positive")
        if not self.curvature_E <= 1:
            raise ConfigurationError("Pacejka curvature factor E must be <= 1")
        if not self.peak_scale > 0:
            raise ConfigurationError("Pacejka peak_scale must be positive")
        if not self.c_alpha > 0:
            raise ConfigurationError("cornering stiffness must be positive")
        if self.stiffness_factor_B is not None and not self.stiffness_factor_B > 0:
            raise ConfigurationError("Pacejka stiffness factor B must be positive")
        if not math.isfinite(self.vertical_offset_Svy):
            raise ConfigurationError("Pacejka vertical offset must be finite")
        _check_load_ref(self.load_ref_n)


def _check_load_ref(load_ref):
    if load_ref is not None and not (math.isfinite(load_ref) and load_ref > 0):
        raise ConfigurationError(f"reference load must be positive, got {load_ref}")


def _stiffness(c_alpha, load_ref, fz):
    if load_ref is None:
        return c_alpha
    return c_alpha * np.asarray(fz, dtype=np.float64) / load_ref


def _is_scalar(*values) -> bool:
    return all(np.ndim(v) == 0 for v in values)


def _check_common(alpha, mu, fz):
    alpha = np.asarray(alpha, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    fz = np.asarray(fz, dtype=np.float64)
    if not (np.isfinite(alpha).all() and np.isfinite(mu).all() and np.isfinite(fz).all()):
        raise DomainError("tire model inputs must be finite")
    if (fz <= 0).any():
        raise DomainError("vertical load must be positive")
    if (mu <= 0).any():
        raise DomainError("friction coefficient must be positive")
    return alpha, mu, fz


def _check_tan_domain(alpha):
    if (np.abs(alpha) >= ALPHA_LIMIT).any():
        raise DomainError("slip angle too close to +/-pi/2 for tan()")


def _out(value, scalar: bool):
    return float(value) if scalar else value


def pacejka_lateral(alpha: ArrayLike, mu: ArrayLike, fz: ArrayLike, p: PacejkaParams) -> ArrayLike:
    """Magic Formula lateral force, ``D sin[C atan{B a - E(B a - atan B a)}] + Svy``."""
    scalar = _is_scalar(alpha, mu, fz)
    alpha, mu, fz = _check_common(alpha, mu, fz)
    d = p.peak_scale * mu * fz
    if p.stiffness_factor_B is None:
        b = _stiffness(p.c_alpha, p.load_ref_n, fz) / (p.shape_C * d)
    else:
        b = p.stiffness_factor_B
    ba = b * alpha
    fy = d * np.sin(p.shape_C * np.arctan(ba - p.curvature_E * (ba - np.arctan(ba)))) + p.vertical_offset_Svy
    return _out(fy, scalar)


def dugoff_lateral(alpha: ArrayLike, mu: ArrayLike, fz: ArrayLike, cs: CorneringStiffness) -> ArrayLike:
    """Dugoff lateral force ``-C_alpha tan(alpha) f(lambda)``."""
    scalar = _is_scalar(alpha, mu, fz)
    alpha, mu, fz = _check_common(alpha, mu, fz)
    _check_tan_domain(alpha)
    c_alpha = cs.at(fz)
    tan_a = np.tan(alpha)
    abs_tan = np.abs(tan_a)
    with np.errstate(divide="ignore", over="ignore"):
        lam = np.where(abs_tan > 0, mu * fz / (2.0 * c_alpha * np.where(abs_tan > 0, abs_tan, 1.0)), np.inf)
    lam = np.minimum(lam, 1.0)
    f = (2.0 - lam) * lam
    fy = -c_alpha * tan_a * f
    return _out(fy, scalar)


def brush_slide_angle(mu: ArrayLike, fz: ArrayLike, cs: CorneringStiffness) -> ArrayLike:
    """Slip angle at which the brush model reaches full sliding."""
    theta = cs.at(fz) / (3.0 * np.asarray(mu, dtype=np.float64) * np.asarray(fz, dtype=np.float64))
    out = np.arctan(1.0 / theta)
    return _out(out, _is_scalar(mu, fz))


def brush_lateral(alpha: ArrayLike, mu: ArrayLike, fz: ArrayLike, cs: CorneringStiffness) -> ArrayLike:
    """Brush lateral force: cubic in ``theta*tan(alpha)`` up to the slide angle, then ``-mu fz sign(alpha)``."""
    scalar = _is_scalar(alpha, mu, fz)
    alpha, mu, fz = _check_common(alpha, mu, fz)
    _check_tan_domain(alpha)
    theta = cs.at(fz) / (3.0 * mu * fz)
    alpha_sl = np.arctan(1.0 / theta)
    ts = theta * np.tan(alpha)
    adhesion = -3.0 * mu * fz * ts * (1.0 - np.abs(ts) + ts * ts / 3.0)
    sliding = -mu * fz * np.sign(alpha)
    fy = np.where(np.abs(alpha) < alpha_sl, adhesion, sliding)
    return _out(fy, scalar)


TireParams = Union[PacejkaParams, CorneringStiffness]


def lateral_force(kind: TireModelKind, alpha: ArrayLike, mu: ArrayLike, fz: ArrayLike, params: TireParams) -> ArrayLike:
    """Vehicle-frame lateral force for the selected model.

    The Magic Formula is evaluated at ``-alpha`` so that all three models
    produce a force opposing the slip angle (restoring, ``dFy/dalpha < 0``).
    """
    kind = TireModelKind.parse(kind)
    if kind is TireModelKind.PACEJKA:
        if not isinstance(params, PacejkaParams):
            raise ConfigurationError("Pacejka model requires PacejkaParams")
        return pacejka_lateral(-np.asarray(alpha, dtype=np.float64), mu, fz, params)
    if not isinstance(params, CorneringStiffness):
        raise ConfigurationError(f"{kind.value} model requires CorneringStiffness")
    if kind is TireModelKind.DUGOFF:
        return dugoff_lateral(alpha, mu, fz, params)
    return brush_lateral(alpha, mu, fz, params)


@dataclass(frozen=True)
class TireConfig:
    """Model selection plus the parameters of every model.

    ``c_alpha`` is shared: it sets the Dugoff/Brush stiffness and, unless
    ``pacejka.stiffness_factor_B`` is fixed, the Magic Formula slope.
    """

    model: TireModelKind = TireModelKind.PACEJKA
    c_alpha: float = 30_000.0
    pacejka: PacejkaParams = PacejkaParams()
    load_ref_n: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "model", TireModelKind.parse(self.model))
        if self.pacejka.c_alpha != self.c_alpha or self.pacejka.load_ref_n != self.load_ref_n:
            object.__setattr__(self, "pacejka", replace(self.pacejka, c_alpha=self.c_alpha, load_ref_n=self.load_ref_n))
        CorneringStiffness(self.c_alpha, self.load_ref_n)

    @property
    def cornering_stiffness(self) -> CorneringStiffness:
        return CorneringStiffness(self.c_alpha, self.load_ref_n)

    def params_for(self, kind: TireModelKind | str | None = None) -> TireParams:
        kind = self.model if kind is None else TireModelKind.parse(kind)
        if kind is TireModelKind.PACEJKA:
            return self.pacejka
        return self.cornering_stiffness

