import pytest
from hypothesis import given, strategies as st

from oscsim.scenario import (
    ConfigError,
    Scenario,
    ScenarioSyntaxError,
    convert_value,
    emit_scenario,
    load_scenario,
    parse_dnl,
    parse_scenario,
    scenario_dict,
)


def test_empty_file_gives_defaults():
    sc = parse_scenario("")
    assert sc == Scenario()
    assert sc.network.r_s == 0.5 and sc.regulation.nvm_code == 40
    assert sc.problems() == []


def test_sections_and_dotted_keys():
    sc = parse_scenario("""
        # comment
        [network]
        r_s = 2.0   # trailing comment
        l_osc = 2.2e-6
        regulation.nvm_code = 90
        [FAULT]
        kind = degraded_q
        multiplier = 5
    """)
    assert sc.network.r_s == 2.0 and sc.network.l_osc == 2.2e-6
    assert sc.regulation.nvm_code == 90
    assert sc.fault.kind == "degraded_q" and sc.fault.multiplier == 5.0


def test_negative_r_s_is_named():
    with pytest.raises(ConfigError) as exc:
        parse_scenario("network.r_s = -1")
    assert any("r_s" in p for p in exc.value.problems)


def test_five_percent_window_rejected():
    with pytest.raises(ConfigError) as exc:
        parse_scenario("[regulation]\nwindow_low = 0.025\nwindow_high = 0.025\n")
    assert any("wider than the maximum regulation step" in p for p in exc.value.problems)


def test_every_violation_is_listed():
    with pytest.raises(ConfigError) as exc:
        parse_scenario("network.r_s = -1\nnetwork.l_osc = 0\nsim.decimation = 0\nfault.kind = nope\n")
    text = "\n".join(exc.value.problems)
    for word in ("r_s", "l_osc", "decimation", "fault"):
        assert word in text


def test_unknown_keys_are_errors():
    for text in ("network.r_ss = 1", "[netwrk]\nr_s = 1", "bogus.key = 3"):
        with pytest.raises(ConfigError):
            parse_scenario(text)


def test_syntax_error_reports_line_number():
    with pytest.raises(ScenarioSyntaxError) as exc:
        parse_scenario("[network]\nr_s = 1\nthis is not a pair\n")
    assert exc.value.lineno == 3
    with pytest.raises(ScenarioSyntaxError) as exc:
        parse_scenario("\n[network\n")
    assert exc.value.lineno == 2
    with pytest.raises(ScenarioSyntaxError):
        parse_scenario("r_s = 1")


def test_value_conversion():
    assert convert_value("regulation.enabled", "off") is False
    assert convert_value("sim.decimation", "1e1") == 10
    assert convert_value("dual.r_s", "same") is None
    assert convert_value("dac.dnl_injection", "96:-40, 100:3") == ((96, -40), (100, 3))
    for key, text in [("sim.decimation", "2.5"), ("network.r_s", "nan"), ("network.r_s", "abc"),
                      ("regulation.enabled", "maybe")]:
        with pytest.raises(ConfigError):
            convert_value(key, text)
    with pytest.raises(ValueError):
        parse_dnl("96")


def test_dt_constraint_against_tick_period():
    with pytest.raises(ConfigError) as exc:
        parse_scenario("sim.dt = 2e-5")
    assert any("tick_period" in p for p in exc.value.problems)


def test_cross_section_constraints():
    with pytest.raises(ConfigError):
        parse_scenario("fault.kind = supply_loss\nfault.system = b\n")
    with pytest.raises(ConfigError):
        parse_scenario("fault.kind = open_coil\nfault.t_activate = 1\nsim.t_end = 0.01\n")
    parse_scenario("fault.kind = supply_loss\nfault.system = b\ndual.enabled = true\n")


def test_overrides_take_precedence():
    sc = parse_scenario("network.r_s = 2", {"network.r_s": "3"})
    assert sc.network.r_s == 3.0


def test_round_trip_default_and_custom():
    for sc in (Scenario(), parse_scenario("network.r_s = 0.7\ndac.dnl_injection = 96:-20\n"
                                          "dual.enabled = yes\ndual.nvm_code = 50\n")):
        text = emit_scenario(sc)
        assert parse_scenario(text) == sc
        assert emit_scenario(parse_scenario(text)) == text


@given(st.floats(0.01, 100), st.floats(0.1e-6, 50e-6), st.integers(0, 127))
def test_round_trip_property(r_s, l_osc, code):
    sc = Scenario().with_overrides({"network.r_s": r_s, "network.l_osc": l_osc,
                                    "regulation.nvm_code": code, "sim.dt": 1e-9})
    assert parse_scenario(emit_scenario(sc)) == sc


def test_load_scenario_and_dict(tmp_path):
    p = tmp_path / "s.ini"
    p.write_text("[network]\nr_s = 1.5\n", encoding="utf-8")
    sc = load_scenario(p)
    assert sc.network.r_s == 1.5
    d = scenario_dict(sc)
    assert d["network"]["r_s"] == 1.5 and set(d) >= {"network", "driver", "sim", "dual"}
