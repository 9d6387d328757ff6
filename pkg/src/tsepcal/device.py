"""Virtual SiC MOSFET: on-resistance law, threshold-voltage physics, parasitics.

Temperatures cross the API in °C; semiconductor formulas run in kelvin.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from importlib import resources
from pathlib import Path

from .errors import ModelDomainError, RangeError

BOLTZMANN_EV = 8.617333262e-5  # eV/K, so kT/q is in volts
ZERO_CELSIUS = 273.15

T_MIN = -40.0
T_MAX = 200.0

_STRICTLY_POSITIVE = (
    "r_th_jp", "L_D", "L_S", "C_gd", "C_gs", "C_ds", "r_g", "L_load",
    "delta_cap", "N_A", "n_i_prefactor", "E_g", "i_rated",
)


@dataclass(frozen=True)
class DeviceParams:
    """Electro-thermal description of the device under test.

    Units: mΩ and mΩ/°C for the on-resistance line, H, F, Ω, V and A elsewhere,
    cm⁻³ for doping. ``phi_ms_term`` and ``c_ox_sqrt_term`` lump the oxide and
    work-function constants that no datasheet publishes.
    """

    r_on_slope: float = 0.6181
    r_on_intercept: float = 64.004
    r_th_jp: float = 0.96

    L_D: float = 4e-9
    L_S: float = 3e-9
    C_gd: float = 6e-12
    C_gs: float = 950e-12
    C_ds: float = 60e-12
    r_loop: float = 20.0

    r_g: float = 25.0
    v_gg_on: float = 20.0
    v_gg_off: float = -4.0

    k_trans: float = 16e-3
    lambda_ch: float = 1e-3

    phi_ms_term: float = -0.1902671366
    N_A: float = 1e17
    n_i_prefactor: float = 4.762579534e24
    E_g: float = 3.26
    c_ox_sqrt_term: float = 1.0

    delta_cap: float = 5e-3
    L_load: float = 1e-3
    i_rated: float = 36.0

    def __post_init__(self):
        for name in _STRICTLY_POSITIVE:
            if not getattr(self, name) > 0:
                raise ValueError(f"DeviceParams.{name} must be > 0, got {getattr(self, name)!r}")
        # k_trans = 0 is the dead-channel diagnostic configuration.
        if self.k_trans < 0:
            raise ValueError(f"DeviceParams.k_trans must be >= 0, got {self.k_trans!r}")
        if self.r_loop < 0 or self.lambda_ch < 0:
            raise ValueError("DeviceParams.r_loop and lambda_ch must be >= 0")
        if self.v_gg_on <= self.v_gg_off:
            raise ValueError("DeviceParams.v_gg_on must exceed v_gg_off")
        if self.r_on_slope * T_MIN + self.r_on_intercept <= 0 or self.r_on_slope * T_MAX + self.r_on_intercept <= 0:
            raise ValueError("on-resistance must stay positive over the modeled range")

    def with_(self, **changes) -> "DeviceParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "DeviceParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown device fields: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})


def default_device_path() -> Path:
    return Path(str(resources.files("tsepcal") / "data" / "default_device.json"))


def load_device_file(path=None) -> dict:
    """Read a device JSON document. Returns the raw mapping with ``device`` parsed."""
    path = Path(path) if path is not None else default_device_path()
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if "device" not in doc:
        raise ValueError(f"{path}: missing 'device' section")
    out = dict(doc)
    out["device"] = DeviceParams.from_dict(doc["device"])
    return out


def load_device(path=None) -> DeviceParams:
    return load_device_file(path)["device"]


def _check_range(t_j: float) -> None:
    if not (T_MIN <= t_j <= T_MAX) or math.isnan(t_j):
        raise RangeError(f"T_j={t_j!r} °C outside modeled range [{T_MIN}, {T_MAX}]")


def r_on(t_j: float, dev: DeviceParams = DeviceParams()) -> float:
    """On-state resistance in Ω; the linear law is in mΩ with T_j in °C."""
    _check_range(t_j)
    return (dev.r_on_slope * t_j + dev.r_on_intercept) / 1000.0


def intrinsic_density(t_j: float, dev: DeviceParams = DeviceParams()) -> float:
    """n_i(T) = n_i_prefactor · T^1.5 · exp(-E_g / 2kT), T in kelvin."""
    t_k = t_j + ZERO_CELSIUS
    if t_k <= 0:
        raise RangeError(f"T_j={t_j!r} °C is at or below absolute zero")
    return dev.n_i_prefactor * t_k ** 1.5 * math.exp(-dev.E_g / (2.0 * BOLTZMANN_EV * t_k))


def psi_b(t_j: float, dev: DeviceParams = DeviceParams()) -> float:
    """Fermi potential ψ_B = (kT/q)·ln(N_A / n_i(T)) in volts."""
    t_k = t_j + ZERO_CELSIUS
    if t_k <= 0:
        raise RangeError(f"T_j={t_j!r} °C is at or below absolute zero")
    return BOLTZMANN_EV * t_k * math.log(dev.N_A / intrinsic_density(t_j, dev))


def v_th_true(t_j: float, dev: DeviceParams = DeviceParams()) -> float:
    """Physical threshold voltage, a function of junction temperature only."""
    _check_range(t_j)
    psi = psi_b(t_j, dev)
    if psi <= 0:
        raise ModelDomainError(f"psi_B={psi:.4g} V <= 0 at T_j={t_j} °C (n_i exceeds N_A)")
    return dev.phi_ms_term + 2.0 * psi + dev.c_ox_sqrt_term * math.sqrt(psi)
