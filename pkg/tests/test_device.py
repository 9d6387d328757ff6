import json
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from tsepcal.device import (
    DeviceParams, default_device_path, intrinsic_density, load_device, load_device_file,
    psi_b, r_on, v_th_true,
)
from tsepcal.errors import ModelDomainError, RangeError


class TestOnResistance:
    def test_25C_hand_value(self, dev):
        # 0.6181*25 + 64.004 = 79.4565 mΩ
        assert r_on(25.0, dev) == pytest.approx(0.0794565, abs=1e-12)

    def test_intercept_at_0C(self, dev):
        assert r_on(0.0, dev) == pytest.approx(0.064004, abs=1e-15)

    def test_100C_hand_value(self, dev):
        assert r_on(100.0, dev) == pytest.approx(0.125814, abs=1e-12)

    @pytest.mark.parametrize("t", [-40.0001, 200.0001, float("nan")])
    def test_out_of_range(self, dev, t):
        with pytest.raises(RangeError):
            r_on(t, dev)

    @given(st.floats(-40, 200), st.floats(-40, 200))
    def test_affine(self, a, b):
        dev = DeviceParams()
        assert r_on(a, dev) + r_on(b, dev) == pytest.approx(2 * r_on(0.5 * (a + b), dev), abs=1e-15)

    def test_positive_over_range(self, dev):
        assert all(r_on(t, dev) > 0 for t in np.linspace(-40, 200, 241))


def _mp_psi_b(t_c, dev):
    mpmath.mp.dps = 50
    k = mpmath.mpf("1.380649e-23") / mpmath.mpf("1.602176634e-19")
    t_k = mpmath.mpf(t_c) + mpmath.mpf("273.15")
    n_i = mpmath.mpf(dev.n_i_prefactor) * t_k ** mpmath.mpf("1.5") * mpmath.exp(-mpmath.mpf(dev.E_g) / (2 * k * t_k))
    return k * t_k * mpmath.log(mpmath.mpf(dev.N_A) / n_i)


class TestThresholdPhysics:
    def test_psi_b_matches_high_precision(self, dev):
        assert psi_b(25.0, dev) == pytest.approx(float(_mp_psi_b(25.0, dev)), rel=1e-9)

    def test_v_th_matches_high_precision(self, dev):
        psi = _mp_psi_b(25.0, dev)
        ref = mpmath.mpf(dev.phi_ms_term) + 2 * psi + mpmath.mpf(dev.c_ox_sqrt_term) * mpmath.sqrt(psi)
        assert v_th_true(25.0, dev) == pytest.approx(float(ref), rel=1e-9)

    def test_psi_b_zero_when_n_i_equals_doping(self, dev):
        d = dev.with_(N_A=intrinsic_density(80.0, dev))
        assert psi_b(80.0, d) == pytest.approx(0.0, abs=1e-12)

    def test_psi_b_falls_with_temperature(self, dev):
        assert psi_b(150.0, dev) < psi_b(25.0, dev)
        vals = [psi_b(t, dev) for t in np.arange(-40, 200.01, 0.5)]
        assert np.all(np.diff(vals) < 0)

    def test_v_th_near_datasheet_class(self, dev):
        assert abs(v_th_true(25.0, dev) - 2.7) < 0.3
        assert v_th_true(25.0, dev) == pytest.approx(2.7, abs=5e-3)

    def test_slope_near_minus_6mV_per_C(self, dev):
        slope = (v_th_true(125.0, dev) - v_th_true(25.0, dev)) / 100.0
        assert -7e-3 < slope < -5e-3

    def test_strictly_decreasing_1C_grid(self, dev):
        v = [v_th_true(float(t), dev) for t in range(-40, 176)]
        assert np.all(np.diff(v) < 0)

    def test_negative_derivative_full_range(self, dev):
        v = np.array([v_th_true(float(t), dev) for t in range(-40, 201)])
        assert np.all(np.diff(v) < 0)

    def test_reduces_to_twice_psi(self, dev):
        d = dev.with_(c_ox_sqrt_term=0.0, phi_ms_term=0.0)
        assert v_th_true(60.0, d) == pytest.approx(2 * psi_b(60.0, d), rel=1e-15)

    def test_intrinsic_density_increasing(self, dev):
        n = [intrinsic_density(t, dev) for t in np.arange(-40, 200.01, 0.25)]
        assert np.all(np.diff(n) > 0)

    def test_domain_error_when_intrinsic_exceeds_doping(self, dev):
        d = dev.with_(N_A=intrinsic_density(150.0, dev))
        with pytest.raises(ModelDomainError):
            v_th_true(180.0, d)

    def test_absolute_zero_rejected(self, dev):
        with pytest.raises(RangeError):
            psi_b(-273.15, dev)

    def test_v_th_range_checked(self, dev):
        with pytest.raises(RangeError):
            v_th_true(250.0, dev)


class TestDeviceParams:
    @pytest.mark.parametrize("name", ["L_D", "L_S", "C_gd", "C_gs", "C_ds", "r_g", "delta_cap", "r_th_jp"])
    def test_positive_fields(self, name):
        with pytest.raises(ValueError):
            DeviceParams(**{name: 0.0})

    def test_negative_transconductance_rejected(self):
        with pytest.raises(ValueError):
            DeviceParams(k_trans=-1e-3)

    def test_dead_channel_allowed(self):
        assert DeviceParams(k_trans=0.0).k_trans == 0.0

    def test_gate_levels_ordered(self):
        with pytest.raises(ValueError):
            DeviceParams(v_gg_on=-5.0)

    def test_unknown_field_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            DeviceParams.from_dict({"bogus": 1.0})

    def test_dict_round_trip(self, dev):
        assert DeviceParams.from_dict(dev.to_dict()) == dev

    def test_bundled_file_matches_defaults(self):
        assert load_device() == DeviceParams()
        doc = load_device_file()
        assert {"foster", "converter"} <= set(doc)

    def test_custom_file(self, tmp_path):
        p = tmp_path / "d.json"
        p.write_text(json.dumps({"device": {"r_g": 10.0}}))
        assert load_device(p).r_g == 10.0

    def test_missing_section(self, tmp_path):
        p = tmp_path / "d.json"
        p.write_text("{}")
        with pytest.raises(ValueError, match="device"):
            load_device(p)

    def test_default_path_exists(self):
        assert default_device_path().is_file()

    def test_hashable(self, dev):
        assert hash(dev) == hash(DeviceParams())
        assert not math.isnan(hash(dev))
