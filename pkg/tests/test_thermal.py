import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tsepcal.device import DeviceParams, r_on
from tsepcal.errors import PreconditionError, TsepError
from tsepcal.thermal import (
    FIXED_POINT, ONE_SHOT, FosterNetwork, TcFunction, compensate, converter_loss,
    delta_t_jp, foster_step, warmup, write_warmup_csv,
)


class TestCompensation:
    def test_6A_25C_hand_value(self, dev):
        # (1/3)·36·0.0794565·0.96
        assert delta_t_jp(6.0, 25.0, dev) == pytest.approx(0.91533888, abs=1e-9)

    def test_zero_current(self, dev):
        assert delta_t_jp(0.0, 80.0, dev) == 0.0
        assert delta_t_jp(0.0, 80.0, dev, FIXED_POINT) == 0.0

    def test_8A_150C_hand_value(self, dev):
        # 0.6181·150 + 64.004 = 156.719 mΩ
        assert delta_t_jp(8.0, 150.0, dev) == pytest.approx(64 / 3 * 0.156719 * 0.96, abs=1e-9)
        assert delta_t_jp(8.0, 150.0, dev) == pytest.approx(3.2096, abs=1e-4)

    def test_compensate_adds_rise(self, dev):
        assert compensate(25.0, 6.0, dev) == pytest.approx(25.0 + 0.91533888, abs=1e-9)
        assert compensate(70.0, 0.0, dev) == 70.0

    def test_fixed_point_closed_form(self, dev):
        # T = t + g(a T + b)  =>  rise = g(a t + b)/(1 - g a)
        i, t = 8.0, 100.0
        g = i ** 2 * dev.r_th_jp / 3
        a, b = dev.r_on_slope / 1000, dev.r_on_intercept / 1000
        expect = g * (a * t + b) / (1 - g * a)
        assert delta_t_jp(i, t, dev, FIXED_POINT) == pytest.approx(expect, abs=2e-6)

    def test_fixed_point_dominates_one_shot(self, dev):
        for i in np.linspace(0.5, 20, 8):
            for t in np.linspace(-40, 150, 8):
                assert delta_t_jp(i, t, dev, FIXED_POINT) >= delta_t_jp(i, t, dev, ONE_SHOT)

    def test_fixed_point_contraction_guard(self, dev):
        with pytest.raises(TsepError, match="diverges"):
            delta_t_jp(80.0, 25.0, dev, FIXED_POINT)

    def test_negative_current_rejected(self, dev):
        with pytest.raises(PreconditionError):
            delta_t_jp(-1.0, 25.0, dev)

    def test_unknown_mode(self, dev):
        with pytest.raises(ValueError):
            delta_t_jp(1.0, 25.0, dev, "newton")
        with pytest.raises(ValueError):
            TcFunction(dev, "newton")

    def test_surface_increasing(self, dev):
        i = np.linspace(0.5, 12, 20)
        t = np.linspace(-40, 200, 20)
        surf = np.array([[delta_t_jp(a, b, dev) for b in t] for a in i])
        assert np.all(np.diff(surf, axis=0) > 0)
        assert np.all(np.diff(surf, axis=1) > 0)

    @given(st.one_of(st.just(0.0), st.floats(0.01, 30.0)), st.floats(-40.0, 200.0))
    def test_compensated_never_below_plate(self, i, t):
        dev = DeviceParams()
        t_re = compensate(t, i, dev)
        assert t_re >= t
        assert (t_re == t) == (i == 0.0)

    def test_tc_function_binds_device(self, dev):
        tc = TcFunction(dev)
        assert tc(25.0, 6.0) == compensate(25.0, 6.0, dev)
        assert tc.delta(6.0, 25.0) == delta_t_jp(6.0, 25.0, dev)


class TestFoster:
    def test_zero_power_stays_ambient(self):
        net = FosterNetwork()
        state = None
        for _ in range(100):
            t_j, state = foster_step(net, 0.0, 0.1, state)
            assert t_j == net.t_ambient

    def test_steady_state(self):
        net = FosterNetwork()
        t_max = max(tau for _, tau in net.stages)
        state, dt = None, 0.01
        for _ in range(int(10 * t_max / dt)):
            t_j, state = foster_step(net, 50.0, dt, state)
        assert t_j - net.t_ambient == pytest.approx(50.0 * net.r_total, rel=1e-3)

    def test_single_stage_matches_analytic(self):
        r, tau, p = 0.7, 2.0, 30.0
        net = FosterNetwork([(r, tau)], t_ambient=0.0)
        dt = tau / 100
        state, worst = None, 0.0
        for k in range(1, 1001):
            t_j, state = foster_step(net, p, dt, state)
            worst = max(worst, abs(t_j - r * p * (1 - math.exp(-k * dt / tau))))
        assert worst < 1e-3 * r * p

    @given(st.floats(0, 200), st.floats(1e-4, 5.0),
           st.lists(st.floats(-20, 80), min_size=2, max_size=2))
    def test_linearity(self, p, dt, s):
        net = FosterNetwork()
        s = np.array(s)
        _, full = foster_step(net, p, dt, s)
        _, free = foster_step(net, 0.0, dt, s)
        _, forced = foster_step(net, p, dt, None)
        assert np.allclose(full, free + forced, rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("stages", [[], [(0.0, 1.0)], [(1.0, -1.0)]])
    def test_invalid_stages(self, stages):
        with pytest.raises(ValueError):
            FosterNetwork(stages)

    def test_bad_step(self):
        with pytest.raises(PreconditionError):
            foster_step(FosterNetwork(), 1.0, 0.0)

    def test_dict_round_trip(self):
        net = FosterNetwork([(0.3, 1.0), (0.2, 4.0)], 30.0)
        assert FosterNetwork.from_dict(net.to_dict()) == net

    def test_warmup_matches_stepper(self, dev):
        net = FosterNetwork()
        power = lambda t: converter_loss(300.0, 6.0, 1e5, 0.5, t, dev)
        time, p, t_j = warmup(net, power, 5.0, 0.01)
        state, tj = None, net.t_ambient
        for k in range(500):
            tj, state = foster_step(net, power(tj), 0.01, state)
        assert t_j[-1] == pytest.approx(tj, abs=1e-9)
        assert time.size == p.size == t_j.size == 501

    def test_warmup_csv(self, tmp_path):
        net = FosterNetwork()
        time, p, t_j = warmup(net, lambda t: 10.0, 1.0, 0.1)
        path = tmp_path / "w.csv"
        write_warmup_csv(path, time, p, t_j)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["t_s", "p_loss_W", "t_j_C"]
        assert len(rows) == 12

    def test_warmup_requires_whole_steps(self):
        with pytest.raises(PreconditionError):
            warmup(FosterNetwork(), lambda t: 1.0, 1.05, 0.1)


class TestConverterLoss:
    def test_zero_current(self, dev):
        assert converter_loss(300.0, 0.0, 1e5, 0.5, 25.0, dev) == 0.0

    def test_conduction_hand_value(self, dev):
        total = converter_loss(300.0, 6.0, 1e5, 0.5, 25.0, dev, k_sw=0.0)
        assert total == pytest.approx(0.5 * 36 * 0.0794565, abs=1e-12)

    def test_switching_term(self, dev):
        a = converter_loss(300.0, 6.0, 1e5, 0.5, 25.0, dev, k_sw=1e-6)
        b = converter_loss(300.0, 6.0, 1e5, 0.5, 25.0, dev, k_sw=0.0)
        assert a - b == pytest.approx(1e-6 * 300 * 6 * 1e5, rel=1e-12)

    def test_monotone(self, dev):
        v = [converter_loss(vb, 6.0, 1e5, 0.5, 50.0, dev) for vb in np.linspace(50, 800, 30)]
        i = [converter_loss(300.0, il, 1e5, 0.5, 50.0, dev) for il in np.linspace(0.1, 20, 30)]
        assert np.all(np.diff(v) > 0)
        assert np.all(np.diff(i) > 0)

    def test_duty_bounds(self, dev):
        with pytest.raises(PreconditionError):
            converter_loss(300.0, 6.0, 1e5, 1.5, 25.0, dev)

    def test_uses_temperature(self, dev):
        cold = converter_loss(300.0, 6.0, 1e5, 0.5, 25.0, dev)
        hot = converter_loss(300.0, 6.0, 1e5, 0.5, 125.0, dev)
        assert hot - cold == pytest.approx(0.5 * 36 * (r_on(125.0, dev) - r_on(25.0, dev)), rel=1e-12)
