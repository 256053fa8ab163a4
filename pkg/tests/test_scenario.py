import math
import textwrap

import pytest

from trfc.errors import ConfigurationError
from trfc.scenario import load_scenario, load_scenario_set, scenario_from_dict
from trfc.tire_models import TireModelKind
from trfc.vehicle import ManeuverKind, WheelId, friction_at

MINIMAL = {"maneuver": {"kind": "constant_steer", "steer_fl_deg": -10.0, "duration_s": 2.0},
           "schedule": {"all": 0.8}}


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


class TestBuiltins:
    def test_ramp(self):
        s = load_scenario("ramp")
        assert s.maneuver.kind is ManeuverKind.RAMP_STEER
        assert s.maneuver.steer_rad == pytest.approx(math.radians(-18.0))
        assert s.maneuver.ramp_s == 30.0
        assert friction_at(s.schedule, 12.0, "fr") == 0.8

    def test_case1_five_levels(self):
        s = load_scenario("case1")
        assert s.maneuver.steer_rad == pytest.approx(math.radians(-18.36))
        assert s.maneuver.steer_other_rad == pytest.approx(math.radians(-15.82))
        assert [friction_at(s.schedule, t, "fl") for t in (5, 15, 25, 35, 45)] == [1.0, 0.7, 0.9, 0.8, 0.6]
        assert {e.name for e in s.estimators} == {"tdnn", "nls_dugoff", "nls_brush"}

    def test_case2_split_friction(self):
        s = load_scenario("case2")
        assert friction_at(s.schedule, 5, "fl") == 0.9 and friction_at(s.schedule, 15, "fl") == 0.8
        assert friction_at(s.schedule, 5, "fr") == 0.8 and friction_at(s.schedule, 15, "fr") == 0.7

    def test_bench_set(self):
        name, specs = load_scenario_set("bench")
        assert name == "bench" and [s.name for s in specs] == ["ramp", "case1", "case2"]


class TestParsing:
    def test_defaults(self):
        s = scenario_from_dict(MINIMAL)
        assert s.wheels == (WheelId.FL, WheelId.FR)
        assert [e.kind for e in s.estimators] == ["tdnn", "nls"]
        assert s.vehicle.tire.load_ref_n == 3000.0
        assert s.estimators[1].nls.model is TireModelKind.DUGOFF

    def test_full_keys(self):
        d = dict(MINIMAL, seed=4,
                 tire={"model": "pacejka", "c_alpha_n_per_rad": 25000, "load_ref_n": None,
                       "pacejka": {"C": 1.4, "E": -0.5, "Svy": 0.0, "peak_scale": 0.9}},
                 noise={"alpha_sd_rad": 0.001, "fy_sd_n": 20, "fz_sd_n": 10},
                 nls={"model": "brush", "alpha_threshold_deg": 2.0, "mu_initial": 0.6, "max_iter": 20, "tol": 1e-10},
                 estimators=[{"kind": "nls"}, {"kind": "nls", "name": "nls_dugoff", "model": "dugoff"}],
                 wheels=["fl", "fr", "rl", "rr"])
        s = scenario_from_dict(d)
        tire = s.vehicle.tire
        assert tire.c_alpha == 25000 and tire.load_ref_n is None
        assert tire.pacejka.shape_C == 1.4 and tire.pacejka.peak_scale == 0.9
        assert s.noise.seed == 4 and s.noise.fy_sd_n == 20
        first, second = s.estimators
        assert first.name == "nls_brush" and first.nls.max_iterations == 20
        assert first.nls.alpha_threshold_rad == pytest.approx(math.radians(2.0))
        assert second.nls.model is TireModelKind.DUGOFF and second.nls.mu_initial == 0.6
        assert len(s.wheels) == 4

    def test_side_and_wheel_schedules(self):
        d = dict(MINIMAL, schedule={"left": [[0, 0.9], [1, 0.8]], "right": 0.7, "rr": 0.5})
        s = scenario_from_dict(d)
        assert [friction_at(s.schedule, 1.5, w) for w in ("fl", "fr", "rl", "rr")] == [0.8, 0.7, 0.8, 0.5]

    @pytest.mark.parametrize("bad", [
        {"schedule": {"fl": 0.8}},
        {"schedule": {"all": [[0, 0.8], [0, 0.7]]}},
        {"schedule": {"all": 3.0}},
        {"schedule": {"all": "slippery"}},
        {"color": "red"},
        {"tire": {"model": "magic"}},
        {"tire": {"pacejka": {"D": 1}}},
        {"maneuver": {"kind": "constant_steer"}},
        {"maneuver": {"kind": "slalom", "steer_fl_deg": 1}},
        {"estimators": [{"kind": "kalman"}]},
        {"estimators": [{"kind": "nls"}, {"kind": "nls"}]},
        {"estimators": []},
        {"wheels": ["front"]},
        {"noise": {"alpha_sd_rad": "lots"}},
    ])
    def test_invalid(self, bad):
        with pytest.raises(ConfigurationError):
            scenario_from_dict({**MINIMAL, **bad})

    def test_missing_sections(self):
        with pytest.raises(ConfigurationError):
            scenario_from_dict({"schedule": {"all": 0.8}})
        with pytest.raises(ConfigurationError):
            scenario_from_dict({"maneuver": MINIMAL["maneuver"]})
        with pytest.raises(ConfigurationError):
            scenario_from_dict([1, 2])


class TestFiles:
    def test_model_path_relative_to_file(self, tmp_path):
        p = write(tmp_path, "s.yaml", """
            maneuver: {kind: ramp_steer, final_deg: -10, ramp_s: 5}
            schedule: {all: 0.8}
            tdnn: {model: nets/m.bin}
            estimators: [{kind: tdnn}]
        """)
        s = load_scenario(p)
        assert s.name == "s"
        assert s.estimators[0].model_path == tmp_path / "nets" / "m.bin"
        assert s.with_model("/x.bin").estimators[0].model_path.name == "x.bin"

    def test_default_model_keyword(self, tmp_path):
        p = write(tmp_path, "s.yaml", """
            maneuver: {kind: ramp_steer}
            schedule: {all: 0.8}
            tdnn: {model: default}
        """)
        assert load_scenario(p).estimators[0].model_path is None

    def test_malformed_yaml(self, tmp_path):
        p = write(tmp_path, "bad.yaml", "maneuver: [unclosed\n")
        with pytest.raises(ConfigurationError, match="malformed"):
            load_scenario(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="not found"):
            load_scenario(tmp_path / "none.yaml")

    def test_set_with_files_and_inline(self, tmp_path):
        write(tmp_path, "a.yaml", """
            name: alpha
            maneuver: {kind: ramp_steer}
            schedule: {all: 0.8}
        """)
        p = write(tmp_path, "set.yaml", """
            name: mine
            scenarios:
              - a.yaml
              - case2
              - {name: inline, maneuver: {kind: ramp_steer}, schedule: {all: 0.5}}
        """)
        name, specs = load_scenario_set(p)
        assert name == "mine" and [s.name for s in specs] == ["alpha", "case2", "inline"]

    def test_set_duplicate_names(self, tmp_path):
        p = write(tmp_path, "set.yaml", "scenarios: [case1, case1]\n")
        with pytest.raises(ConfigurationError, match="duplicate"):
            load_scenario_set(p)

    def test_set_needs_list(self, tmp_path):
        p = write(tmp_path, "set.yaml", "name: empty\n")
        with pytest.raises(ConfigurationError):
            load_scenario_set(p)
