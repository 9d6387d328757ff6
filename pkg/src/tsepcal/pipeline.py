"""Calibration workflows (conventional and proposed), synthetic dataset
generation, and the converter warm-up evaluation."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .device import DeviceParams
from .dpt import NoiseSpec, OperatingPoint, measure_v_th
from .errors import DegenerateSampleError, PreconditionError, TsepError
from .regress import LinearModel, MlpModel, TrainConfig, fit_linear, predict, train_mlp
from .stats import GAUSSIAN, compare_families, repeat_policy
from .thermal import DEFAULT_K_SW, ONE_SHOT, FosterNetwork, compensate, converter_loss, warmup

DATASET_HEADER = ["t_plate_C", "v_bus_V", "i_load_A", "rep", "v_th_V", "t_label_C"]
TRAJECTORY_HEADER = ["t_s", "t_true_C", "t_conv_C", "t_prop_C"]
TABLE_I_CASES = ((300.0, 4.0), (300.0, 6.0), (200.0, 4.0), (200.0, 6.0))


@dataclass(frozen=True)
class GridSpec:
    plate_temps: tuple = (25.0, 45.0, 65.0, 85.0, 105.0, 125.0, 145.0)
    bus_voltages: tuple = (200.0, 250.0, 300.0, 350.0)
    load_currents: tuple = (4.0,)
    repeats: int = 50
    seed: int | None = None  # overrides the noise seed when given

    def __post_init__(self):
        for name in ("plate_temps", "bus_voltages", "load_currents"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals:
                raise PreconditionError(f"GridSpec.{name} must be nonempty")
            object.__setattr__(self, name, vals)
        if int(self.repeats) < 1:
            raise PreconditionError(f"GridSpec.repeats must be >= 1, got {self.repeats}")

    @property
    def n_rows(self) -> int:
        return len(self.plate_temps) * len(self.bus_voltages) * len(self.load_currents) * self.repeats

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


@dataclass(frozen=True)
class MeasurementRecord:
    t_plate: float
    v_bus: float
    i_load: float
    rep: int
    v_th_measured: float
    t_label: float


@dataclass
class CalibrationDataset:
    records: list
    compensation: bool = True
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def select(self, v_bus=None, rep=None, i_load=None) -> "CalibrationDataset":
        keep = [r for r in self.records
                if (v_bus is None or r.v_bus == v_bus)
                and (rep is None or r.rep == rep)
                and (i_load is None or r.i_load == i_load)]
        return CalibrationDataset(keep, self.compensation, dict(self.meta))

    def conditions(self) -> dict:
        """Rows grouped by (t_plate, v_bus, i_load), in first-seen order."""
        out = {}
        for r in self.records:
            out.setdefault((r.t_plate, r.v_bus, r.i_load), []).append(r)
        return out

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(DATASET_HEADER)
        for r in self.records:
            w.writerow([repr(r.t_plate), repr(r.v_bus), repr(r.i_load), r.rep,
                        repr(r.v_th_measured), repr(r.t_label)])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(self.to_csv_text())

    @classmethod
    def read_csv(cls, path, compensation: bool = True) -> "CalibrationDataset":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != DATASET_HEADER:
            raise ValueError(f"{path}: expected header {','.join(DATASET_HEADER)}")
        recs = [MeasurementRecord(float(a), float(b), float(c), int(d), float(e), float(f))
                for a, b, c, d, e, f in rows[1:]]
        return cls(recs, compensation)


def generate_dataset(grid: GridSpec, dev: DeviceParams, noise: NoiseSpec,
                     compensation: bool = True, mode: str = ONE_SHOT) -> CalibrationDataset:
    """Run every grid cell k times on the simulated bench.

    The simulated chip always sits at the compensated temperature; only the
    label policy depends on ``compensation``.
    """
    if grid.seed is not None:
        noise = NoiseSpec(noise.sigma_ln, noise.mu_ln, int(grid.seed))
    recs = []
    for t_plate in grid.plate_temps:
        for v_bus in grid.bus_voltages:
            for i_load in grid.load_currents:
                op = OperatingPoint(t_plate, v_bus, i_load)
                t_actual = compensate(t_plate, i_load, dev, mode)
                label = t_actual if compensation else t_plate
                for rep in range(grid.repeats):
                    v = measure_v_th(op, t_actual, dev, noise, rep)
                    if not v > 0:
                        raise TsepError(f"non-positive V_TH {v!r} at {op}")
                    recs.append(MeasurementRecord(t_plate, v_bus, i_load, rep, v, label))
    meta = {"grid": grid.to_dict(), "noise": asdict(noise), "compensation": compensation, "tc_mode": mode}
    return CalibrationDataset(recs, compensation, meta)


def calibrate_conventional(dataset: CalibrationDataset) -> LinearModel:
    """Fixed-bus OLS of label on V_TH using only the first repeat of each condition."""
    buses = sorted({r.v_bus for r in dataset.records})
    if len(buses) != 1:
        raise PreconditionError(f"conventional calibration needs a single v_bus, got {buses}")
    if not dataset.records:
        raise PreconditionError("empty dataset")
    first = min(r.rep for r in dataset.records)
    rows = dataset.select(rep=first)
    if len({r.t_plate for r in rows.records}) < 2:
        raise DegenerateSampleError("conventional calibration needs at least 2 plate temperatures")
    model = fit_linear(rows.column("v_th_measured"), rows.column("t_label"))
    return LinearModel(model.slope, model.intercept, model.training_rmse,
                       {"v_bus": buses[0], "rows": len(rows), "compensation": dataset.compensation})


def proposed_features(dataset: CalibrationDataset, coupled: bool = True) -> np.ndarray:
    v = dataset.column("v_th_measured")
    if not coupled:
        return v[:, None]
    return np.column_stack([v, dataset.column("v_bus")])


def calibrate_proposed(dataset: CalibrationDataset, cfg: TrainConfig = TrainConfig(),
                       coupled: bool = True):
    """Train the network on every repeat. Returns ``(model, report)``."""
    buses = {r.v_bus for r in dataset.records}
    temps = {r.t_plate for r in dataset.records}
    if coupled and len(buses) < 2:
        raise PreconditionError("the bus-voltage input needs at least 2 bus voltages in the dataset")
    if len(temps) < 2:
        raise PreconditionError("calibration needs at least 2 plate temperatures")
    rows = []
    for recs in dataset.conditions().values():
        v = np.array([r.v_th_measured for r in recs])
        family = compare_families(v) if v.size >= 2 and np.ptp(v) > 0 else GAUSSIAN
        kept, _ = repeat_policy(v, family)
        rows.extend(recs[:len(kept)])
    sub = CalibrationDataset(rows, dataset.compensation)
    x = proposed_features(sub, coupled)
    y = sub.column("t_label")
    names = ("v_th", "v_bus") if coupled else ("v_th",)
    return train_mlp(x, y, cfg, feature_names=names)


@dataclass(frozen=True)
class ConverterSpec:
    f_sw: float = 100e3
    duty: float = 0.5
    k_sw: float = DEFAULT_K_SW
    duration: float = 300.0
    thermal_dt: float = 0.01
    interval: float = 10.0

    @classmethod
    def from_dict(cls, d: dict) -> "ConverterSpec":
        return cls(**{k: float(v) for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class CaseResult:
    v_bus: float
    i_load: float
    mae_conventional: float
    mae_proposed: float
    reduction: float
    t_s: np.ndarray
    t_true: np.ndarray
    t_conv: np.ndarray
    t_prop: np.ndarray
    final_slope: float
    extrapolated_current: bool

    @property
    def name(self) -> str:
        return f"{self.v_bus:g}V_{self.i_load:g}A"

    def summary(self) -> dict:
        return {
            "v_bus": self.v_bus, "i_load": self.i_load,
            "mae_conventional": self.mae_conventional, "mae_proposed": self.mae_proposed,
            "reduction": self.reduction, "final_dT_dt": self.final_slope,
            "extrapolated_current": self.extrapolated_current, "samples": int(self.t_s.size),
        }

    def write_trajectory_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRAJECTORY_HEADER)
            for row in zip(self.t_s, self.t_true, self.t_conv, self.t_prop):
                w.writerow([repr(float(x)) for x in row])


@dataclass
class EvaluationReport:
    cases: list
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"config": self.config, "cases": [c.summary() for c in self.cases]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        lines = [f"{'case':>12} {'MAE conv (C)':>13} {'MAE prop (C)':>13} {'reduction':>10}"]
        for c in self.cases:
            lines.append(f"{c.name:>12} {c.mae_conventional:13.3f} {c.mae_proposed:13.3f} {100 * c.reduction:9.2f}%")
        return "\n".join(lines)


def _model_features(model, v_th: float, v_bus: float):
    if isinstance(model, MlpModel) and model.input_dim == 2:
        return [[v_th, v_bus]]
    if isinstance(model, MlpModel):
        return [[v_th]]
    return [v_th]


def run_case(v_bus: float, i_load: float, conventional, proposed, dev: DeviceParams,
             noise: NoiseSpec, net: FosterNetwork, conv: ConverterSpec, calib_currents=()):
    """Cold-start warm-up of one converter case with periodic V_TH sampling."""
    try:
        power = lambda t_j: converter_loss(v_bus, i_load, conv.f_sw, conv.duty, t_j, dev, conv.k_sw)
        time, _, t_j = warmup(net, power, conv.duration, conv.thermal_dt)
        stride = int(round(conv.interval / conv.thermal_dt))
        idx = np.arange(stride, time.size, stride)
        t_true, t_c, t_p = [], [], []
        for n, k in enumerate(idx):
            tj = float(t_j[k])
            op = OperatingPoint(tj, v_bus, i_load)
            v = measure_v_th(op, tj, dev, noise, n)
            t_true.append(tj)
            t_c.append(float(np.ravel(predict(conventional, _model_features(conventional, v, v_bus)))[0]))
            t_p.append(float(np.ravel(predict(proposed, _model_features(proposed, v, v_bus)))[0]))
    except TsepError as exc:
        raise TsepError(f"case {v_bus:g}V/{i_load:g}A failed: {exc}") from exc
    t_true, t_c, t_p = np.array(t_true), np.array(t_c), np.array(t_p)
    mae_c = float(np.mean(np.abs(t_c - t_true)))
    mae_p = float(np.mean(np.abs(t_p - t_true)))
    slope = float((t_j[-1] - t_j[-2]) / conv.thermal_dt)
    return CaseResult(v_bus, i_load, mae_c, mae_p, (mae_c - mae_p) / mae_c if mae_c > 0 else 0.0,
                      time[idx], t_true, t_c, t_p, slope,
                      bool(calib_currents) and i_load not in calib_currents)


def evaluate(conventional, proposed, cases=TABLE_I_CASES, dev: DeviceParams = DeviceParams(),
             noise: NoiseSpec = NoiseSpec(), net: FosterNetwork | None = None,
             conv: ConverterSpec = ConverterSpec(), calib_currents=(4.0,)) -> EvaluationReport:
    """Table-I style comparison of both calibrations on converter warm-ups.

    Cases whose current lies outside ``calib_currents`` are flagged as
    extrapolated in the report.
    """
    net = net or FosterNetwork()
    results = [run_case(float(vb), float(il), conventional, proposed, dev, noise, net, conv,
                        tuple(calib_currents)) for vb, il in cases]
    config = {"device": dev.to_dict(), "noise": asdict(noise), "foster": net.to_dict(),
              "converter": asdict(conv), "calib_currents": list(calib_currents),
              "cases": [[float(a), float(b)] for a, b in cases]}
    return EvaluationReport(results, config)


def tc_ablation(dev: DeviceParams = DeviceParams(), noise: NoiseSpec = NoiseSpec(),
                grid: GridSpec = GridSpec(), v_bus: float = 300.0, currents=(6.0, 8.0),
                tc: bool = True, net: FosterNetwork | None = None,
                conv: ConverterSpec = ConverterSpec()) -> dict:
    """MAE reduction from compensation alone, per load current.

    For each current a pair of fixed-bus linear calibrations is built at that
    current, one on plate labels and one on compensated labels, and both are
    evaluated on the converter case (v_bus, current). With ``tc=False`` both
    members of the pair use plate labels.
    """
    net = net or FosterNetwork()
    out = {}
    for i_load in currents:
        g = GridSpec(grid.plate_temps, (float(v_bus),), (float(i_load),), 1, grid.seed)
        base = calibrate_conventional(generate_dataset(g, dev, noise, compensation=False))
        with_tc = calibrate_conventional(generate_dataset(g, dev, noise, compensation=tc))
        res = run_case(float(v_bus), float(i_load), base, with_tc, dev, noise, net, conv)
        out[float(i_load)] = {"mae_without_tc": res.mae_conventional, "mae_with_tc": res.mae_proposed,
                              "reduction": res.reduction}
    return out
