"""Dual-pulse test bench: load-current control, turn-on transient, V_LS capture.

The second-pulse turn-on is the drain node of the half-bridge during
commutation: V_bus feeds the DUT through the loop inductance L_D + L_S while
the channel, C_gd and C_ds share the drain current. States are the loop
current i_ds and the drain-source voltage v_ds; the gate charges through r_g
as a first-order RC and is integrated in closed form.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from .device import DeviceParams, r_on, v_th_true
from .errors import CaptureError, InstabilityError, PreconditionError

DEFAULT_DT = 50e-12


@dataclass(frozen=True)
class OperatingPoint:
    t_plate: float
    v_bus: float
    i_load_target: float

    def __post_init__(self):
        if not self.v_bus > 0:
            raise PreconditionError(f"v_bus must be > 0, got {self.v_bus!r}")
        if not self.i_load_target >= 0:
            raise PreconditionError(f"i_load_target must be >= 0, got {self.i_load_target!r}")


@dataclass(frozen=True)
class NoiseSpec:
    """Shifted log-normal measurement error: exp(mu_ln + sigma_ln·z) minus its mean."""

    sigma_ln: float = 0.5
    mu_ln: float = -6.0
    seed_base: int = 20240

    def __post_init__(self):
        if self.sigma_ln < 0:
            raise PreconditionError("sigma_ln must be >= 0")

    @property
    def shift(self) -> float:
        return math.exp(self.mu_ln + 0.5 * self.sigma_ln ** 2)


@dataclass
class TransientTrace:
    time: np.ndarray
    v_gs: np.ndarray
    i_ds: np.ndarray
    v_ds: np.ndarray
    v_ls: np.ndarray
    dt: float
    t_th: float | None = None
    v_th_measured: float | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.time)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t_s", "v_gs_V", "i_ds_A", "v_ds_V", "v_ls_V"])
            for row in zip(self.time, self.v_gs, self.i_ds, self.v_ds, self.v_ls):
                w.writerow([repr(float(x)) for x in row])


def first_pulse_width(v_bus: float, i_load_target: float, L_load: float) -> float:
    """Width t1 - t0 of the first pulse that charges L_load to i_load_target."""
    if v_bus <= 0 or L_load <= 0 or i_load_target < 0:
        raise PreconditionError("first_pulse_width needs v_bus, L_load > 0 and i_load_target >= 0")
    return i_load_target * L_load / v_bus


def first_pulse_loss(i_peak: float, t_j: float, dev: DeviceParams) -> float:
    """Mean conduction loss over a linear current ramp to i_peak: (1/3)·i²·R_ON(T_j)."""
    if i_peak < 0:
        raise PreconditionError("i_peak must be >= 0")
    return i_peak ** 2 * r_on(t_j, dev) / 3.0


def _propagators(dev: DeviceParams, dt: float):
    """Exact step matrices for x' = A x + b(t), b quadratic over the step.

    Returns (Phi, G0, G1, G2) with G_n = ∫_0^dt exp(A(dt-s)) (s/dt)^n ds,
    all taken from one block exponential.
    """
    l_loop = dev.L_D + dev.L_S
    c_node = dev.C_gd + dev.C_ds
    a = np.array([[-dev.r_loop / l_loop, -1.0 / l_loop], [1.0 / c_node, 0.0]])
    eye = np.eye(2)
    z = np.zeros((2, 2))
    # d/ds [x, b2, b1, b0] with b(s) = b0 + b1 s + b2 s^2 (s in units of dt)
    aug = np.block([
        [a * dt, z, z, eye * dt],
        [z, z, z, z],
        [z, 2 * eye, z, z],
        [z, z, eye, z],
    ])
    # Columns: response to b0 (via x'), b1 (via s), b2 (via s^2)
    e = expm(aug)
    phi = e[:2, :2]
    g0 = e[:2, 6:8]
    g1 = e[:2, 4:6]
    g2 = e[:2, 2:4]
    return phi, g0, g1, g2


def simulate_turn_on(op: OperatingPoint, t_j_actual: float, dev: DeviceParams,
                     dt: float = DEFAULT_DT, max_time: float = 2e-6) -> TransientTrace:
    """Integrate the second-pulse turn-on from the gate-drive rising edge.

    KVL around the power loop, v_ds = v_bus - (L_D+L_S)·di_ds/dt - r_loop·i_ds,
    and KCL at the drain, i_ds = i_CH + C_gd·dv_gd/dt + C_ds·dv_ds/dt. Once
    v_gs(t) is known the network is linear in (i_ds, v_ds), so each fixed step
    uses the exact propagator with the channel forcing interpolated
    quadratically through the step ends and midpoint. The trace ends once v_gs
    reaches 95 % of v_gg_on or i_ds reaches twice the target load current.
    """
    v_th = v_th_true(t_j_actual, dev)
    tau_g = dev.r_g * (dev.C_gs + dev.C_gd)
    k_eff = dev.k_trans * (1.0 + dev.lambda_ch * op.v_bus)
    c_node = dev.C_gd + dev.C_ds
    l_loop = dev.L_D + dev.L_S
    phi, g0, g1, g2 = _propagators(dev, dt)
    # only the v_ds' row of b(t) varies; the i_ds' row is the constant v_bus/L
    p11, p12, p21, p22 = phi.ravel()
    c1 = op.v_bus / l_loop * g0[:, 0]
    q0, q1, q2 = g0[:, 1], g1[:, 1], g2[:, 1]

    half = math.exp(-0.5 * dt / tau_g)
    v_stop = 0.95 * dev.v_gg_on
    i_stop = 2.0 * op.i_load_target if op.i_load_target > 0 else math.inf
    i_limit = 10.0 * dev.i_rated

    def forcing(v_gs):
        od = v_gs - v_th
        i_ch = k_eff * od * od if od > 0 else 0.0
        return (dev.C_gd * (dev.v_gg_on - v_gs) / tau_g - i_ch) / c_node

    n_max = int(max_time / dt) + 1
    time, v_gs_a, i_a, v_a, vls_a = [0.0], [dev.v_gg_off], [0.0], [op.v_bus], [0.0]
    v_gs, i_ds, v_ds = dev.v_gg_off, 0.0, op.v_bus
    f_a = forcing(v_gs)
    for k in range(1, n_max):
        v_mid = dev.v_gg_on + (v_gs - dev.v_gg_on) * half
        v_gs_next = dev.v_gg_on + (v_mid - dev.v_gg_on) * half
        f_m = forcing(v_mid)
        f_b = forcing(v_gs_next)
        # quadratic through (0, f_a), (1/2, f_m), (1, f_b)
        b1 = -3.0 * f_a + 4.0 * f_m - f_b
        b2 = 2.0 * f_a - 4.0 * f_m + 2.0 * f_b
        i_next = p11 * i_ds + p12 * v_ds + c1[0] + q0[0] * f_a + q1[0] * b1 + q2[0] * b2
        v_next = p21 * i_ds + p22 * v_ds + c1[1] + q0[1] * f_a + q1[1] * b1 + q2[1] * b2
        if not math.isfinite(i_next) or abs(i_next) > i_limit:
            raise InstabilityError(
                f"|i_ds| exceeded {i_limit:g} A at t={k * dt:.3e} s "
                f"(v_bus={op.v_bus}, T_j={t_j_actual}, dt={dt:g}, {dev!r})"
            )
        vls_a.append(dev.L_S * (i_next - i_ds) / dt)
        v_gs, i_ds, v_ds, f_a = v_gs_next, i_next, v_next, f_b
        time.append(k * dt)
        v_gs_a.append(v_gs)
        i_a.append(i_ds)
        v_a.append(v_ds)
        if v_gs >= v_stop or i_ds >= i_stop:
            break
    return TransientTrace(
        time=np.array(time), v_gs=np.array(v_gs_a), i_ds=np.array(i_a),
        v_ds=np.array(v_a), v_ls=np.array(vls_a), dt=dt,
        meta={"v_bus": op.v_bus, "t_j": t_j_actual, "v_th_true": v_th},
    )


def capture_v_th(trace: TransientTrace, dev: DeviceParams) -> float:
    """V_LS-triggered threshold capture.

    Sample k of v_ls is the backward difference over [t_{k-1}, t_k] and is
    placed at the interval midpoint; the δ crossing time is interpolated
    between the bracketing samples and v_gs is read off at that instant.
    """
    if len(trace) == 0:
        raise PreconditionError("empty trace")
    v_ls = trace.v_ls
    hits = np.nonzero(v_ls >= dev.delta_cap)[0]
    if hits.size == 0:
        raise CaptureError(f"v_ls never reached delta_cap={dev.delta_cap:g} V (max {v_ls.max():.3g} V)")
    k = int(hits[0])
    if k == 0:
        t_th = 0.0
    else:
        mid = trace.time - 0.5 * trace.dt
        mid[0] = 0.0
        lo, hi = v_ls[k - 1], v_ls[k]
        frac = (dev.delta_cap - lo) / (hi - lo) if hi != lo else 1.0
        t_th = mid[k - 1] + frac * (mid[k] - mid[k - 1])
    v_th = float(np.interp(t_th, trace.time, trace.v_gs))
    trace.t_th = float(t_th)
    trace.v_th_measured = v_th
    return v_th


@lru_cache(maxsize=65536)
def noiseless_capture(op: OperatingPoint, t_j_actual: float, dev: DeviceParams,
                      dt: float = DEFAULT_DT) -> float:
    return capture_v_th(simulate_turn_on(op, t_j_actual, dev, dt=dt), dev)


def stream_key(seed_base: int, op: OperatingPoint, t_j_actual: float, rep: int) -> int:
    """128-bit Philox key for one (condition, repeat) cell."""
    text = f"{int(seed_base)}|{op.t_plate!r}|{op.v_bus!r}|{op.i_load_target!r}|{float(t_j_actual)!r}|{int(rep)}"
    return int.from_bytes(hashlib.sha256(text.encode("ascii")).digest()[:16], "little")


def noise_draw(noise: NoiseSpec, op: OperatingPoint, t_j_actual: float, rep: int) -> float:
    """Zero-mean, right-skewed error for one cell; independent of evaluation order."""
    if noise.sigma_ln == 0:
        return 0.0
    rng = np.random.Generator(np.random.Philox(key=stream_key(noise.seed_base, op, t_j_actual, rep)))
    z = rng.standard_normal()
    return math.exp(noise.mu_ln + noise.sigma_ln * z) - noise.shift


def measure_v_th(op: OperatingPoint, t_j_actual: float, dev: DeviceParams,
                 noise: NoiseSpec, rep: int) -> float:
    """One repeated measurement: noiseless capture plus the per-cell error draw."""
    return noiseless_capture(op, float(t_j_actual), dev) + noise_draw(noise, op, t_j_actual, rep)
