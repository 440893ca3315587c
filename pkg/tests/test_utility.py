from __future__ import annotations

import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from qoealloc.errors import ConfigError, DomainError, GridBuildError, GridLoadError, OutOfRangeError
from qoealloc.utility import (
    DEFAULT_D_RANGE,
    UtilityGrid,
    VoipCoefficients,
    build_grid,
    builtin_grid,
    class_model,
    grid_lookup,
    load_grid,
    load_voip_coefficients,
    mos_dl,
    mos_web,
    save_grid,
    scale_mos,
    u_has,
    u_ssh,
    u_voip,
    u_web,
)


def test_mos_web_anchors():
    assert mos_web(2.2) == pytest.approx(4.03, abs=0.01)
    assert mos_web(6.8) == pytest.approx(3.03, abs=0.01)
    assert mos_web(0.5) == 5.0


def test_mos_dl_anchors():
    assert mos_dl(28) == pytest.approx(4.01, abs=0.02)
    assert mos_dl(1) == 5.0
    # -1.68 ln(t) + 9.61 = 1  =>  t = exp(8.61 / 1.68)
    t1 = math.exp(8.61 / 1.68)
    assert t1 == pytest.approx(168.2, abs=0.1)
    assert mos_dl(t1) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("fn", [mos_web, mos_dl])
def test_mos_domain(fn):
    with pytest.raises(DomainError):
        fn(0)


def test_scale_mos_examples():
    assert scale_mos(1, 4.3) == 1.0
    assert scale_mos(4.6, 4.6) == 5.0
    assert scale_mos(2.65, 4.3) == pytest.approx(3.0, abs=1e-12)
    with pytest.raises(DomainError):
        scale_mos(4.7, 4.6)


@given(st.floats(1.5, 5.0), st.floats(0, 1))
def test_scale_mos_affine(mos_max, f):
    mid = 1 + f * (mos_max - 1)
    assert scale_mos(mid, mos_max) == pytest.approx(1 + 4 * f)


def test_u_ssh_examples():
    assert u_ssh(0) == 5.0
    assert u_ssh(1200) == 1.0
    assert u_ssh(1500) == 1.0
    with pytest.raises(DomainError):
        u_ssh(-1)


def test_u_has_examples():
    assert u_has(5, 0, 5) == 5.0
    assert u_has(0, 0, 5) == 1.0
    assert u_has(2.5, 0, 5) == 3.0
    with pytest.raises(DomainError):
        u_has(1, 2, 2)
    with pytest.raises(DomainError):
        u_has(6, 0, 5)


@given(st.floats(0, 1), st.floats(0.1, 10), st.floats(-10, 10))
def test_u_has_relabel_invariant(f, scale, shift):
    q = 3 * f
    assert u_has(q * scale + shift, shift, 3 * scale + shift) == pytest.approx(u_has(q, 0, 3))


def test_u_voip_examples():
    assert u_voip(0, 34.5) == pytest.approx(5.0, abs=0.05)
    assert u_voip(0.08, 80) == pytest.approx(4.9, abs=0.05)
    assert u_voip(1.0, 10) == 1.0
    assert u_voip(1.0, 400) == 1.0


def test_voip_missing_coefficient(tmp_path):
    with pytest.raises(ConfigError, match="missing"):
        VoipCoefficients.from_mapping({"a": 1.0})
    path = tmp_path / "c.json"
    path.write_text('{"a": 3, "b": 0, "c": 0, "d": 0, "e": 0, "f": 0, "g": 0, "h": 0, "i": 0}')
    with pytest.raises(ConfigError, match="j"):
        load_voip_coefficients(path)


@given(st.floats(0.01, 200), st.floats(0, 2000), st.floats(0, 1), st.floats(0, 600))
def test_every_utility_in_range(t, rt, loss, delay):
    for v in (u_web(t), mos_dl(t), u_ssh(rt), u_voip(loss, delay)):
        assert 1.0 <= v <= 5.0


@given(st.floats(0.01, 100))
def test_mos_strictly_decreasing_unclamped(t):
    t2 = t * 1.01
    for fn in (mos_web, mos_dl):
        a, b = fn(t), fn(t2)
        if 1.0 < b and a < 5.0:
            assert b < a


def test_build_grid_dl_example():
    grid = build_grid(class_model("DL"), (4000, 5000), (0, 0), 2, 1)
    assert grid.tp_levels == (4000.0, 5000.0)
    assert [r[0] for r in grid.values] == [mos_dl(20.0), mos_dl(16.0)]
    assert grid.values[0][0] == pytest.approx(4.58, abs=0.02)
    assert grid.values[1][0] == pytest.approx(4.95, abs=0.02)


def test_build_grid_single_point_equals_model():
    model = class_model("WEB")
    grid = build_grid(model, (1000, 1000), (20, 20), 1, 1)
    assert grid.values == ((model(1000.0, 20.0),),)


def test_ssh_grid_column_constant():
    grid = builtin_grid("SSH")
    for j in range(len(grid.d_levels)):
        assert len({row[j] for row in grid.values}) == 1


def test_build_grid_failure_names_point():
    def bad(tp, d):
        if tp > 150:
            raise ValueError("boom")
        return 3.0

    with pytest.raises(GridBuildError, match="tp=200.0"):
        build_grid(bad, (100, 200), (0, 10), 2, 2)


@pytest.mark.parametrize("name", ["WEB", "DL", "SSH", "VoIP", "VoD", "Live"])
def test_builtin_grids_match_model_when_unrepaired(name):
    grid = builtin_grid(name)
    model = class_model(name)
    lo, hi = DEFAULT_D_RANGE[name]
    assert grid.d_levels[0] == lo and grid.d_levels[-1] == hi
    if not grid.repairs:
        for tp, row in zip(grid.tp_levels, grid.values):
            for d, v in zip(grid.d_levels, row):
                assert v == model(tp, d)


def test_monotone_repair_logged():
    grid = build_grid(lambda tp, d: 6.0 if tp > 1 else 2.0 + d, (1, 2), (0, 1), 2, 2)
    assert grid.repairs
    assert grid.values == ((2.0, 2.0), (5.0, 5.0))


def test_grid_lookup():
    grid = builtin_grid("DL")
    assert grid_lookup(grid, len(grid.tp_levels) - 1, 0) == grid.max()
    assert grid_lookup(grid, 0, 0) == class_model("DL")(grid.tp_levels[0], 0.0)
    with pytest.raises(OutOfRangeError):
        grid_lookup(grid, 99, 0)


def test_grid_round_trip(tmp_path):
    for name in ("WEB", "VoIP"):
        grid = builtin_grid(name)
        path = tmp_path / f"{name}.csv"
        save_grid(grid, path)
        assert load_grid(path) == grid


def test_load_grid_errors(tmp_path):
    bad_value = tmp_path / "v.csv"
    bad_value.write_text("tp_kbps\\d_ms,0,10\n100,5.3,4\n200,5,5\n")
    with pytest.raises(GridLoadError, match="row 2, column 2"):
        load_grid(bad_value)
    bad_order = tmp_path / "o.csv"
    bad_order.write_text("tp_kbps\\d_ms,0,10\n200,3,2\n100,4,3\n")
    with pytest.raises(GridLoadError, match="ascending"):
        load_grid(bad_order)
    with pytest.raises(GridLoadError, match="ascending"):
        load_grid(bad_order, repair=True)
    repaired = load_grid(bad_value, repair=True)
    assert repaired.values[0][0] == 5.0 and repaired.repairs


def test_grid_rejects_invalid_values():
    with pytest.raises(GridLoadError):
        UtilityGrid((1.0,), (1.0,), ((0.5,),))
