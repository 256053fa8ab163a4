"""Scenario files: YAML descriptions of a maneuver, friction schedule and estimators.

A scenario file looks like::

    name: case1
    seed: 1
    maneuver:
      kind: constant_steer      # or ramp_steer
      duration_s: 50
      u_target_mps: 8
      steer_fl_deg: -18.36      # ramp_steer: final_deg and ramp_s
      steer_fr_deg: -15.82      # optional; Ackermann partner when omitted
      settle_s: 10
    schedule:
      all: [[0, 1.0], [10, 0.7]]   # or per wheel: fl/fr/rl/rr, or left/right
    tire:
      model: pacejka
      c_alpha_n_per_rad: 30000
      load_ref_n: 3000
      pacejka: {C: 1.3, E: -1.0, Svy: 0.0, peak_scale: 1.0}
    noise: {alpha_sd_rad: 0.002, fy_sd_n: 40, fz_sd_n: 40, seed: 1}
    nls: {model: dugoff, alpha_threshold_deg: 1, mu_initial: 0.5, max_iter: 50, tol: 1.0e-12}
    tdnn: {model: default}
    wheels: [fl, fr]
    estimators:
      - {name: tdnn, kind: tdnn}
      - {name: nls_dugoff, kind: nls, model: dugoff}

Every section is optional except ``maneuver`` and ``schedule``. Estimator
entries inherit the ``nls``/``tdnn`` sections and may override any key.
``tdnn.model`` is a file path (relative to the scenario file) or
``default`` for the network bundled with the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from trfc.errors import ConfigurationError
from trfc.nls import NlsConfig
from trfc.signals import NoiseSpec
from trfc.tire_models import PacejkaParams, TireConfig, TireModelKind
from trfc.vehicle import LOAD_REF_N, FrictionSchedule, Maneuver, ManeuverKind, VehicleParams, WheelId

BUILTIN_SCENARIOS = ("ramp", "case1", "case2")
BUILTIN_SETS = ("bench",)
DEFAULT_MODEL = "default"
ESTIMATOR_KINDS = ("nls", "tdnn")


@dataclass(frozen=True)
class EstimatorSpec:
    """One estimator of a scenario.

    Attributes:
        name: Unique label, used in output file names.
        kind: ``nls`` or ``tdnn``.
        nls: Solver settings (``kind == "nls"``).
        model_path: Network file (``kind == "tdnn"``); ``None`` selects the
            bundled network.
        alpha_threshold_rad: Gating threshold on the window peak ``|alpha|``.
        mu_initial: Value held before the first active window.
    """

    name: str
    kind: str
    nls: NlsConfig | None = None
    model_path: Path | None = None
    alpha_threshold_rad: float = math.radians(1.0)
    mu_initial: float = 0.5

    def __post_init__(self):
        if self.kind not in ESTIMATOR_KINDS:
            raise ConfigurationError(f"estimator {self.name!r}: kind must be one of {ESTIMATOR_KINDS}")
        if not self.name or not self.name.replace("_", "").replace("-", "").isalnum():
            raise ConfigurationError(f"estimator name {self.name!r} must be alphanumeric (with - or _)")


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    maneuver: Maneuver
    schedule: FrictionSchedule
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    noise: NoiseSpec = NoiseSpec()
    estimators: tuple[EstimatorSpec, ...] = ()
    wheels: tuple[WheelId, ...] = (WheelId.FL, WheelId.FR)
    seed: int = 0
    source: Path | None = None

    def __post_init__(self):
        names = [e.name for e in self.estimators]
        if len(set(names)) != len(names):
            raise ConfigurationError(f"scenario {self.name!r}: estimator names must be unique")
        if not self.wheels:
            raise ConfigurationError(f"scenario {self.name!r}: no wheels selected")

    def with_model(self, path: str | Path) -> "ScenarioSpec":
        """Point every TDNN estimator at ``path``."""
        ests = tuple(replace(e, model_path=Path(path)) if e.kind == "tdnn" else e for e in self.estimators)
        return replace(self, estimators=ests)


# -- parsing ------------------------------------------------------------------

def _section(d: dict, key: str) -> dict:
    value = d.get(key) or {}
    if not isinstance(value, dict):
        raise ConfigurationError(f"'{key}' must be a mapping")
    return value


def _check_keys(d: dict, allowed: set[str], where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {where}: {', '.join(sorted(map(str, unknown)))}")


def _num(d: dict, key: str, default: Any, where: str) -> Any:
    value = d.get(key, default)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"{where}.{key} must be a number, got {value!r}")
    return float(value)


def parse_tire(d: dict) -> TireConfig:
    _check_keys(d, {"model", "c_alpha_n_per_rad", "load_ref_n", "pacejka"}, "tire")
    pj = _section(d, "pacejka")
    _check_keys(pj, {"C", "E", "Svy", "peak_scale", "B"}, "tire.pacejka")
    base = PacejkaParams()
    pacejka = PacejkaParams(
        shape_C=_num(pj, "C", base.shape_C, "tire.pacejka"),
        curvature_E=_num(pj, "E", base.curvature_E, "tire.pacejka"),
        vertical_offset_Svy=_num(pj, "Svy", base.vertical_offset_Svy, "tire.pacejka"),
        peak_scale=_num(pj, "peak_scale", base.peak_scale, "tire.pacejka"),
        stiffness_factor_B=_num(pj, "B", None, "tire.pacejka"),
    )
    load_ref = d["load_ref_n"] if "load_ref_n" in d else LOAD_REF_N
    return TireConfig(model=TireModelKind.parse(d.get("model", "pacejka")),
                      c_alpha=_num(d, "c_alpha_n_per_rad", 30_000.0, "tire"),
                      pacejka=pacejka,
                      load_ref_n=_num({"v": load_ref}, "v", None, "tire.load_ref_n"))


def parse_vehicle(d: dict, tire: TireConfig) -> VehicleParams:
    allowed = {f.name for f in fields(VehicleParams)} - {"tire"}
    _check_keys(d, allowed, "vehicle")
    return VehicleParams(**{k: _num(d, k, None, "vehicle") for k in d}, tire=tire)


def parse_noise(d: dict, seed: int) -> NoiseSpec:
    _check_keys(d, {"alpha_sd_rad", "fy_sd_n", "fz_sd_n", "seed"}, "noise")
    base = NoiseSpec()
    return NoiseSpec(_num(d, "alpha_sd_rad", base.alpha_sd_rad, "noise"), _num(d, "fy_sd_n", base.fy_sd_n, "noise"),
                     _num(d, "fz_sd_n", base.fz_sd_n, "noise"), int(d.get("seed", seed)))


def parse_maneuver(d: dict) -> Maneuver:
    if not d:
        raise ConfigurationError("scenario needs a 'maneuver' section")
    kind = ManeuverKind(str(d.get("kind", "constant_steer")).lower().replace("-", "_"))
    u = _num(d, "u_target_mps", 10.0, "maneuver")
    if kind is ManeuverKind.RAMP_STEER:
        _check_keys(d, {"kind", "final_deg", "ramp_s", "duration_s", "u_target_mps"}, "maneuver")
        return Maneuver.ramp(_num(d, "final_deg", -18.0, "maneuver"), _num(d, "ramp_s", 30.0, "maneuver"),
                             _num(d, "duration_s", None, "maneuver"), u)
    _check_keys(d, {"kind", "steer_fl_deg", "steer_fr_deg", "duration_s", "u_target_mps", "settle_s"}, "maneuver")
    if "steer_fl_deg" not in d:
        raise ConfigurationError("constant_steer maneuver needs steer_fl_deg")
    return Maneuver.constant(_num(d, "steer_fl_deg", None, "maneuver"), _num(d, "steer_fr_deg", None, "maneuver"),
                             _num(d, "duration_s", 50.0, "maneuver"), u, _num(d, "settle_s", 10.0, "maneuver"))


def _points(value, where: str) -> tuple[tuple[float, float], ...]:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return ((0.0, float(value)),)
    try:
        return tuple((float(t), float(mu)) for t, mu in value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"schedule.{where} must be a number or a list of [t_start_s, mu] pairs") from None


def parse_schedule(d: dict) -> FrictionSchedule:
    if not d:
        raise ConfigurationError("scenario needs a 'schedule' section")
    _check_keys(d, {"all", "left", "right", "fl", "fr", "rl", "rr"}, "schedule")
    per = {}
    if "all" in d:
        per = {w: _points(d["all"], "all") for w in ("fl", "fr", "rl", "rr")}
    for side, wheels in (("left", ("fl", "rl")), ("right", ("fr", "rr"))):
        if side in d:
            per.update({w: _points(d[side], side) for w in wheels})
    for w in ("fl", "fr", "rl", "rr"):
        if w in d:
            per[w] = _points(d[w], w)
    missing = [w for w in ("fl", "fr", "rl", "rr") if w not in per]
    if missing:
        raise ConfigurationError(f"schedule has no entry for wheel(s) {', '.join(missing)}")
    return FrictionSchedule(tuple(per[w] for w in ("fl", "fr", "rl", "rr")))


_NLS_KEYS = {"model", "alpha_threshold_deg", "mu_initial", "max_iter", "tol"}
_TDNN_KEYS = {"model", "alpha_threshold_deg", "mu_initial"}


def _resolve_model(value, base: Path | None) -> Path | None:
    if value is None or value == DEFAULT_MODEL:
        return None
    p = Path(str(value)).expanduser()
    if not p.is_absolute() and base is not None:
        p = base / p
    return p


def parse_estimator(entry: dict, nls_defaults: dict, tdnn_defaults: dict, base: Path | None) -> EstimatorSpec:
    if not isinstance(entry, dict) or "kind" not in entry:
        raise ConfigurationError("each estimator needs at least a 'kind'")
    kind = str(entry["kind"]).lower()
    if kind not in ESTIMATOR_KINDS:
        raise ConfigurationError(f"unknown estimator kind {kind!r}")
    keys = _NLS_KEYS if kind == "nls" else _TDNN_KEYS
    _check_keys(entry, keys | {"name", "kind"}, "estimators")
    d = {**(nls_defaults if kind == "nls" else tdnn_defaults), **entry}
    where = f"estimator {kind}"
    threshold = math.radians(_num(d, "alpha_threshold_deg", 1.0, where))
    mu0 = _num(d, "mu_initial", 0.5, where)
    if kind == "nls":
        model = TireModelKind.parse(d.get("model", "dugoff"))
        cfg = NlsConfig(model=model, alpha_threshold_rad=threshold, mu_initial=mu0,
                        max_iterations=int(d.get("max_iter", 50)), residual_tolerance=_num(d, "tol", 1e-12, where))
        return EstimatorSpec(str(entry.get("name", f"nls_{model.value}")), "nls", nls=cfg,
                             alpha_threshold_rad=threshold, mu_initial=mu0)
    return EstimatorSpec(str(entry.get("name", "tdnn")), "tdnn", model_path=_resolve_model(d.get("model"), base),
                         alpha_threshold_rad=threshold, mu_initial=mu0)


DEFAULT_ESTIMATORS = ({"kind": "tdnn", "name": "tdnn"}, {"kind": "nls", "name": "nls_dugoff", "model": "dugoff"})


def scenario_from_dict(d: dict, base: Path | None = None, source: Path | None = None) -> ScenarioSpec:
    """Build a :class:`ScenarioSpec` from parsed YAML.

    Raises:
        ConfigurationError: unknown keys, missing sections or invalid values.
    """
    if not isinstance(d, dict):
        raise ConfigurationError("scenario file must contain a mapping")
    _check_keys(d, {"name", "seed", "maneuver", "schedule", "tire", "vehicle", "noise", "nls", "tdnn",
                    "estimators", "wheels"}, "scenario")
    try:
        name = str(d.get("name") or (source.stem if source else "scenario"))
        seed = int(d.get("seed", 0))
        tire = parse_tire(_section(d, "tire"))
        nls_defaults, tdnn_defaults = _section(d, "nls"), _section(d, "tdnn")
        _check_keys(nls_defaults, _NLS_KEYS, "nls")
        _check_keys(tdnn_defaults, _TDNN_KEYS, "tdnn")
        entries = d.get("estimators", DEFAULT_ESTIMATORS)
        if not isinstance(entries, (list, tuple)) or not entries:
            raise ConfigurationError("'estimators' must be a non-empty list")
        wheels = tuple(WheelId.parse(w) for w in d.get("wheels", ("fl", "fr")))
        return ScenarioSpec(
            name=name,
            maneuver=parse_maneuver(_section(d, "maneuver")),
            schedule=parse_schedule(_section(d, "schedule")),
            vehicle=parse_vehicle(_section(d, "vehicle"), tire),
            noise=parse_noise(_section(d, "noise"), seed),
            estimators=tuple(parse_estimator(e, nls_defaults, tdnn_defaults, base) for e in entries),
            wheels=wheels,
            seed=seed,
            source=source,
        )
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"invalid scenario value: {exc}") from None


def _read_yaml(path: Path) -> Any:
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc.strerror or exc}") from None
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: malformed YAML: {exc}") from None


def builtin_path(name: str) -> Path:
    return Path(str(resources.files("trfc") / "scenarios" / f"{name}.yaml"))


def _locate(ref: str | Path) -> Path:
    p = Path(ref)
    if p.is_file():
        return p
    if str(ref) in BUILTIN_SCENARIOS + BUILTIN_SETS:
        return builtin_path(str(ref))
    raise ConfigurationError(f"scenario file not found: {ref}")


def load_scenario(ref: str | Path) -> ScenarioSpec:
    """Load a scenario from a YAML file or by built-in name (``ramp``, ``case1``, ``case2``)."""
    path = _locate(ref)
    return scenario_from_dict(_read_yaml(path), base=path.parent, source=path)


def load_scenario_set(ref: str | Path) -> tuple[str, list[ScenarioSpec]]:
    """Load a set file ``{name: ..., scenarios: [file or built-in name, ...]}``.

    Entries may also be inline scenario mappings. Scenario names must be
    unique within the set.
    """
    path = _locate(ref)
    d = _read_yaml(path)
    if not isinstance(d, dict) or not isinstance(d.get("scenarios"), list) or not d["scenarios"]:
        raise ConfigurationError(f"{path}: a scenario set needs a non-empty 'scenarios' list")
    _check_keys(d, {"name", "scenarios"}, "scenario set")
    specs = []
    for entry in d["scenarios"]:
        if isinstance(entry, dict):
            specs.append(scenario_from_dict(entry, base=path.parent, source=path))
            continue
        ref_path = Path(str(entry))
        if not ref_path.is_absolute() and (path.parent / ref_path).is_file():
            ref_path = path.parent / ref_path
        specs.append(load_scenario(ref_path if ref_path.is_file() else str(entry)))
    names = [s.name for s in specs]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ConfigurationError(f"duplicate scenario name(s) in set: {', '.join(dupes)}")
    return str(d.get("name") or path.stem), specs
