"""Self-heating compensation for dual-pulse calibration, plus a Foster network
used to drive converter warm-up scenarios."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .device import DeviceParams, r_on
from .errors import PreconditionError, TsepError

ONE_SHOT = "one_shot"
FIXED_POINT = "fixed_point"
_MODES = (ONE_SHOT, FIXED_POINT)

DEFAULT_K_SW = 4e-7


@dataclass(frozen=True)
class TcFunction:
    """Plate-to-junction compensation bound to one device and iteration mode."""

    device: DeviceParams
    mode: str = ONE_SHOT

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {self.mode!r}")

    def delta(self, i_load: float, t_plate: float) -> float:
        return delta_t_jp(i_load, t_plate, self.device, self.mode)

    def __call__(self, t_plate: float, i_load: float) -> float:
        return compensate(t_plate, i_load, self.device, self.mode)


def delta_t_jp(i_load: float, t_plate: float, dev: DeviceParams, mode: str = ONE_SHOT,
               tol: float = 1e-6, max_iter: int = 200) -> float:
    """Chip-above-plate temperature rise left by the first pulse.

    ``one_shot`` evaluates R_ON at the plate temperature. ``fixed_point``
    iterates T = t_plate + (1/3)·I²·R_ON(T)·R_th,jp until successive
    rises differ by less than ``tol``.
    """
    if i_load < 0:
        raise PreconditionError("i_load must be >= 0")
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")
    gain = i_load ** 2 * dev.r_th_jp / 3.0
    rise = gain * r_on(t_plate, dev)
    if mode == ONE_SHOT or i_load == 0:
        return rise
    # contraction factor of the affine map T -> t_plate + gain·R_ON(T)
    if gain * dev.r_on_slope / 1000.0 >= 1.0:
        raise TsepError(f"fixed-point compensation diverges at i_load={i_load} A")
    for _ in range(max_iter):
        nxt = gain * r_on(t_plate + rise, dev)
        if abs(nxt - rise) < tol:
            return nxt
        rise = nxt
    raise TsepError(f"fixed-point compensation did not converge at i_load={i_load} A")


def compensate(t_plate: float, i_load: float, dev: DeviceParams, mode: str = ONE_SHOT) -> float:
    """Real chip temperature during the second pulse."""
    return t_plate + delta_t_jp(i_load, t_plate, dev, mode)


@dataclass
class FosterNetwork:
    stages: list = field(default_factory=lambda: [(0.4, 0.8), (0.56, 8.0)])
    t_ambient: float = 25.0

    def __post_init__(self):
        self.stages = [(float(r), float(tau)) for r, tau in self.stages]
        if not self.stages:
            raise ValueError("FosterNetwork needs at least one stage")
        for r, tau in self.stages:
            if r <= 0 or tau <= 0:
                raise ValueError(f"Foster stage ({r}, {tau}) must have r > 0 and tau > 0")

    @property
    def r_total(self) -> float:
        return sum(r for r, _ in self.stages)

    def zero_state(self) -> np.ndarray:
        return np.zeros(len(self.stages))

    @classmethod
    def from_dict(cls, data: dict) -> "FosterNetwork":
        return cls(stages=[tuple(s) for s in data["stages"]], t_ambient=float(data.get("t_ambient", 25.0)))

    def to_dict(self) -> dict:
        return {"stages": [list(s) for s in self.stages], "t_ambient": self.t_ambient}


def foster_step(net: FosterNetwork, p_loss: float, dt: float, state=None):
    """Advance every stage by the exact zero-order-hold update.

    Returns ``(t_j, new_state)``; the state holds per-stage rises above ambient.
    """
    if dt <= 0:
        raise PreconditionError("dt must be > 0")
    state = net.zero_state() if state is None else np.asarray(state, dtype=float)
    r = np.array([s[0] for s in net.stages])
    tau = np.array([s[1] for s in net.stages])
    a = np.exp(-dt / tau)
    new = state * a + r * p_loss * (1.0 - a)
    return net.t_ambient + float(new.sum()), new


def converter_loss(v_bus: float, i_load: float, f_sw: float, duty: float, t_j: float,
                   dev: DeviceParams, k_sw: float = DEFAULT_K_SW) -> float:
    """DUT loss in a hard-switched DC-DC leg: conduction plus V·I-scaled switching."""
    if not 0.0 <= duty <= 1.0:
        raise PreconditionError(f"duty must lie in [0, 1], got {duty}")
    return duty * i_load ** 2 * r_on(t_j, dev) + k_sw * v_bus * i_load * f_sw


def write_warmup_csv(path, time, p_loss, t_j) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s", "p_loss_W", "t_j_C"])
        for row in zip(time, p_loss, t_j):
            w.writerow([repr(float(x)) for x in row])


def warmup(net: FosterNetwork, power, duration: float, dt: float):
    """Integrate a cold-start trajectory with ``power(t_j)`` re-evaluated every step.

    Returns arrays (time, p_loss, t_j) with time[0] = 0 at ambient.
    """
    n = int(round(duration / dt))
    if not math.isclose(n * dt, duration, rel_tol=1e-9):
        raise PreconditionError("duration must be a whole number of steps")
    time = np.arange(n + 1) * dt
    t_j = [net.t_ambient]
    p = []
    # same update as foster_step, unrolled over plain floats
    coef = [(math.exp(-dt / tau), r * (1.0 - math.exp(-dt / tau))) for r, tau in net.stages]
    state = [0.0] * len(coef)
    for _ in range(n):
        pk = power(t_j[-1])
        p.append(pk)
        state = [s * a + g * pk for s, (a, g) in zip(state, coef)]
        t_j.append(net.t_ambient + sum(state))
    p.append(power(t_j[-1]))
    return time, np.array(p), np.array(t_j)
