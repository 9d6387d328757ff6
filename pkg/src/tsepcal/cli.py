"""Command-line front end: ``tsepcal <subcommand> [options]``.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .device import default_device_path, load_device_file
from .dpt import NoiseSpec, OperatingPoint, capture_v_th, simulate_turn_on
from .errors import TsepError
from .regress import TrainConfig, cross_validate, load_model, predict, train_mlp
from .stats import fit_histogram_rows, fit_report
from .thermal import FosterNetwork, compensate

OUT_ENV = "TSEPCAL_OUT"
DEFAULT_SEED = 20240
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class ConfigError(Exception):
    pass


# --------------------------------------------------------------------------- helpers

def _floats(text: str, name: str) -> list:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"--{name}: expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise ConfigError(f"--{name}: empty list")
    return vals


def _cases(text: str) -> list:
    out = []
    for part in text.split(","):
        try:
            vb, il = part.split(":")
            out.append((float(vb), float(il)))
        except ValueError:
            raise ConfigError(f"--cases: expected vbus:iload pairs, got {part!r}") from None
    return out


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Artifacts:
    """Atomic writer that remembers what it produced, so a failed run can be rolled back."""

    def __init__(self, root: Path):
        self.root = root
        self.written = []

    def write_text(self, rel: str, text: str) -> Path:
        dest = self.root / rel
        dest.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=dest.parent, prefix=".tmp-", suffix=dest.suffix)
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            os.replace(tmp, dest)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.written.append(rel)
        return dest

    def write_json(self, rel: str, obj) -> Path:
        return self.write_text(rel, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def write_with(self, rel: str, writer) -> Path:
        """Let ``writer(path)`` produce the file, then move it into place."""
        dest = self.root / rel
        dest.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=dest.parent, prefix=".tmp-", suffix=dest.suffix)
        os.close(fd)
        try:
            writer(tmp)
            os.replace(tmp, dest)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.written.append(rel)
        return dest

    def rollback(self) -> None:
        for rel in self.written:
            p = self.root / rel
            if p.exists():
                p.unlink()
        self.written = []

    def manifest(self, command: str, config: dict, extra: dict | None = None) -> dict:
        files = {}
        for rel in sorted(set(self.written)):
            files[rel] = {"sha256": _sha256(self.root / rel)}
        doc = {"command": command, "config": config, "seed": config.get("seed"), "files": files}
        if extra:
            doc.update(extra)
        return doc


def _load_bench(args):
    path = Path(args.device) if args.device else default_device_path()
    if not path.is_file():
        raise ConfigError(f"device file not found: {path}")
    try:
        doc = load_device_file(path)
        net = FosterNetwork.from_dict(doc["foster"]) if "foster" in doc else FosterNetwork()
        conv = pl.ConverterSpec.from_dict(doc.get("converter", {}))
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"device file {path}: {exc}") from exc
    return doc["device"], net, conv, path


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or "tsepcal_out")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"--out {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ConfigError(f"--out {out}: directory is not writable")
    return out


def _noise(args, seed_offset: int = 0) -> NoiseSpec:
    return NoiseSpec(args.sigma_ln, args.mu_ln, int(args.seed) + seed_offset)


def _base_config(args, dev, dev_path, command) -> dict:
    return {
        "command": command,
        "seed": int(args.seed),
        "device_file": str(dev_path),
        "device_sha256": _sha256(dev_path),
        "device": dev.to_dict(),
        "noise": {"sigma_ln": args.sigma_ln, "mu_ln": args.mu_ln},
    }


def _grid(args) -> pl.GridSpec:
    d = pl.GridSpec()
    temps = _floats(args.tplate, "tplate") if args.tplate else d.plate_temps
    buses = _floats(args.vbus, "vbus") if args.vbus else d.bus_voltages
    if getattr(args, "single_vbus", None) is not None:
        buses = (float(args.single_vbus),)
    currents = _floats(args.iload, "iload") if args.iload else d.load_currents
    repeats = args.repeats if args.repeats is not None else d.repeats
    try:
        return pl.GridSpec(tuple(temps), tuple(buses), tuple(currents), int(repeats), int(args.seed))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _read_model(path_text: str, what: str):
    path = Path(path_text)
    if not path.is_file():
        raise ConfigError(f"{what} model file not found: {path}")
    try:
        return load_model(path)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{what} model file {path}: {exc}") from exc


def _train_config(args) -> TrainConfig:
    return TrainConfig(seed=int(args.seed), max_epochs=int(args.epochs))


# --------------------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    dev, _, _, dev_path = _load_bench(args)
    out = _out_dir(args)
    buses = _floats(args.vbus or "300", "vbus")
    temps = _floats(args.tplate or "25", "tplate")
    currents = _floats(args.iload or "4", "iload")
    arts = Artifacts(out)
    rows = []
    try:
        for t_plate in temps:
            for v_bus in buses:
                for i_load in currents:
                    op = OperatingPoint(t_plate, v_bus, i_load)
                    t_j = compensate(t_plate, i_load, dev) if not args.no_tc else t_plate
                    trace = simulate_turn_on(op, t_j, dev, dt=args.dt)
                    v_th = capture_v_th(trace, dev)
                    name = f"trace_{t_plate:g}C_{v_bus:g}V_{i_load:g}A.csv"
                    arts.write_with(name, trace.to_csv)
                    rows.append({"t_plate": t_plate, "v_bus": v_bus, "i_load": i_load, "t_j": t_j,
                                 "v_th_captured": v_th, "t_th": trace.t_th, "trace": name})
                    print(f"t_plate={t_plate:g}C v_bus={v_bus:g}V i_load={i_load:g}A "
                          f"T_j={t_j:.4f}C V_TH={v_th:.6f}V t_TH={trace.t_th * 1e9:.3f}ns")
        config = _base_config(args, dev, dev_path, "simulate")
        config.update({"dt": args.dt, "tc": not args.no_tc})
        arts.write_json("simulate_summary.json", {"config": config, "captures": rows})
        arts.write_json("simulate_manifest.json", arts.manifest("simulate", config))
    except BaseException:
        arts.rollback()
        raise
    return EXIT_OK


def _fit_reports(dataset, arts, config, prefix="fit_reports") -> list:
    names = []
    for (t_plate, v_bus, i_load), recs in dataset.conditions().items():
        v = np.array([r.v_th_measured for r in recs])
        cond = {"t_plate": t_plate, "v_bus": v_bus, "i_load": i_load, "k": len(recs)}
        rep = fit_report(v, cond)
        rep["config"] = config
        stem = f"{prefix}/fit_{t_plate:g}C_{v_bus:g}V_{i_load:g}A"
        arts.write_json(stem + ".json", rep)
        names.append(stem + ".json")
    return names


def cmd_calibrate(args) -> int:
    dev, _, _, dev_path = _load_bench(args)
    out = _out_dir(args)
    grid = _grid(args)
    noise = _noise(args)
    conv_bus = float(args.single_vbus) if args.single_vbus is not None else float(args.conv_vbus)
    config = _base_config(args, dev, dev_path, "calibrate")
    config.update({"grid": grid.to_dict(), "tc": not args.no_tc, "coupled": not args.no_coupled,
                   "conventional_v_bus": conv_bus, "train": _train_config(args).to_dict()})
    arts = Artifacts(out)
    extra = {}
    try:
        ds = pl.generate_dataset(grid, dev, noise, compensation=not args.no_tc)
        arts.write_text("dataset.csv", ds.to_csv_text())
        extra["dataset_rows"] = len(ds)

        fits = []
        if grid.repeats >= 2:
            fits = _fit_reports(ds, arts, config)
        extra["fit_reports"] = len(fits)

        conv_grid = pl.GridSpec(grid.plate_temps, (conv_bus,), grid.load_currents, 1, grid.seed)
        conv_ds = pl.generate_dataset(conv_grid, dev, noise, compensation=False)
        arts.write_text("conventional_dataset.csv", conv_ds.to_csv_text())
        conv_model = pl.calibrate_conventional(conv_ds)
        arts.write_json("model_conventional.json", {**conv_model.to_dict(), "config": config})
        models = ["model_conventional.json"]

        enough = len(grid.bus_voltages) >= 2 or args.no_coupled
        if args.single_vbus is None and enough:
            model, report = pl.calibrate_proposed(ds, _train_config(args), coupled=not args.no_coupled)
            arts.write_json("model_proposed.json", {**model.to_dict(), "config": config})
            arts.write_with("learning_curve.csv", report.write_curve_csv)
            models.append("model_proposed.json")
            extra["test_mse"] = report.test_mse
            print(f"proposed model: test MSE {report.test_mse:.4f} C^2 after {report.epochs_run} epochs")
        extra["models"] = models
        print(f"conventional model at {conv_bus:g} V: slope {conv_model.slope:.3f} C/V, "
              f"intercept {conv_model.intercept:.3f} C")
        print(f"dataset rows {len(ds)}, fit reports {len(fits)}, models {len(models)}")
        arts.write_json("manifest.json", arts.manifest("calibrate", config, extra))
    except BaseException:
        arts.rollback()
        raise
    return EXIT_OK


def _read_dataset(args, out: Path):
    path = Path(args.dataset) if args.dataset else out / "dataset.csv"
    if not path.is_file():
        raise ConfigError(f"dataset file not found: {path}")
    try:
        return pl.CalibrationDataset.read_csv(path), path
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"dataset file {path}: {exc}") from exc


def cmd_fit_dist(args) -> int:
    out = _out_dir(args)
    ds, path = _read_dataset(args, out)
    config = {"command": "fit-dist", "seed": int(args.seed), "dataset": str(path),
              "dataset_sha256": _sha256(path), "bins": args.bins}
    arts = Artifacts(out)
    try:
        names = _fit_reports(ds, arts, config, prefix="dist")
        for (t_plate, v_bus, i_load), recs in ds.conditions().items():
            v = np.array([r.v_th_measured for r in recs])
            stem = f"dist/hist_{t_plate:g}C_{v_bus:g}V_{i_load:g}A.csv"
            arts.write_text(stem, fit_histogram_rows(v, args.bins))
        chosen = [json.loads((out / n).read_text())["family"] for n in names]
        print(f"{len(names)} conditions: " + ", ".join(f"{f}={chosen.count(f)}" for f in sorted(set(chosen))))
        arts.write_json("dist/manifest.json", arts.manifest("fit-dist", config))
    except BaseException:
        arts.rollback()
        raise
    return EXIT_OK


def cmd_train(args) -> int:
    out = _out_dir(args)
    ds, path = _read_dataset(args, out)
    cfg = _train_config(args)
    config = {"command": "train", "seed": int(args.seed), "dataset": str(path),
              "dataset_sha256": _sha256(path), "coupled": not args.no_coupled, "train": cfg.to_dict()}
    arts = Artifacts(out)
    try:
        x = pl.proposed_features(ds, coupled=not args.no_coupled)
        y = ds.column("t_label")
        names = ("v_th", "v_bus") if not args.no_coupled else ("v_th",)
        model, report = train_mlp(x, y, cfg, feature_names=names)
        summary = report.summary()
        if args.cv:
            summary["cv"] = cross_validate(x, y, args.cv, cfg, feature_names=names)
            model.report = summary
            print(f"{args.cv}-fold CV MSE {summary['cv']['mean']:.4f} +/- {summary['cv']['std']:.4f} C^2")
        arts.write_json("model_proposed.json", {**model.to_dict(), "config": config})
        arts.write_with("learning_curve.csv", report.write_curve_csv)
        arts.write_json("train_report.json", {"config": config, **summary})
        print(f"test MSE {report.test_mse:.4f} C^2, best epoch {report.best_epoch}, lambda {report.reg_lambda:.3g}")
        arts.write_json("train_manifest.json", arts.manifest("train", config))
    except BaseException:
        arts.rollback()
        raise
    return EXIT_OK


def cmd_predict(args) -> int:
    model = _read_model(args.model, "input")
    v_th = _floats(args.vth, "vth")
    n_in = getattr(model, "input_dim", 1)
    if n_in == 2:
        if not args.vbus:
            raise ConfigError("--vbus is required for a model with a bus-voltage input")
        v_bus = _floats(args.vbus, "vbus")
        if len(v_bus) == 1:
            v_bus = v_bus * len(v_th)
        if len(v_bus) != len(v_th):
            raise ConfigError("--vbus must give one value or one per --vth value")
        feats = np.column_stack([v_th, v_bus])
    else:
        feats = np.array(v_th)[:, None] if hasattr(model, "input_dim") else np.array(v_th)
    for v, t in zip(v_th, np.ravel(predict(model, feats))):
        print(f"V_TH={v:.6f}V -> T_j={t:.4f}C")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    dev, net, conv, dev_path = _load_bench(args)
    out = _out_dir(args)
    conventional = _read_model(args.conventional or str(out / "model_conventional.json"), "conventional")
    proposed = _read_model(args.proposed or str(out / "model_proposed.json"), "proposed")
    cases = _cases(args.cases) if args.cases else list(pl.TABLE_I_CASES)
    calib = tuple(_floats(args.iload, "iload")) if args.iload else pl.GridSpec().load_currents
    noise = _noise(args, seed_offset=1)
    config = _base_config(args, dev, dev_path, "evaluate")
    config["models"] = {
        "conventional": _sha256(Path(args.conventional or out / "model_conventional.json")),
        "proposed": _sha256(Path(args.proposed or out / "model_proposed.json")),
    }
    arts = Artifacts(out)
    try:
        report = pl.evaluate(conventional, proposed, cases, dev, noise, net, conv, calib)
        doc = report.to_dict()
        doc["config"].update(config)
        for c in report.cases:
            arts.write_with(f"trajectory_{c.name}.csv", c.write_trajectory_csv)
        arts.write_json("evaluation_report.json", doc)
        print(report.table())
        arts.write_json("evaluate_manifest.json", arts.manifest("evaluate", config))
    except BaseException:
        arts.rollback()
        raise
    return EXIT_OK


def cmd_report(args) -> int:
    paths = [Path(p) for p in (args.manifests or [])]
    if not paths:
        out = _out_dir(args)
        paths = sorted(out.glob("*manifest.json")) + sorted(out.glob("*/manifest.json"))
    if not paths:
        raise ConfigError("no manifests found")
    lines = []
    for p in paths:
        if not p.is_file():
            raise ConfigError(f"manifest not found: {p}")
        doc = json.loads(p.read_text(encoding="utf-8"))
        lines.append(f"== {p} ({doc.get('command')}, seed {doc.get('seed')})")
        for key in ("dataset_rows", "fit_reports", "models", "test_mse"):
            if key in doc:
                lines.append(f"   {key}: {doc[key]}")
        for rel, meta in doc.get("files", {}).items():
            lines.append(f"   {meta['sha256'][:12]}  {rel}")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        Artifacts(_out_dir(args)).write_text("report.txt", text)
    return EXIT_OK


# --------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsepcal", description="Threshold-voltage TSEP calibration toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--device", help="device JSON file (default: bundled device)")
    common.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./tsepcal_out)")
    common.add_argument("--seed", type=int, default=DEFAULT_SEED, help="global seed")
    common.add_argument("--sigma-ln", type=float, default=NoiseSpec.sigma_ln, help="log-normal noise sigma")
    common.add_argument("--mu-ln", type=float, default=NoiseSpec.mu_ln, help="log-normal noise mu (ln V)")

    grid = argparse.ArgumentParser(add_help=False)
    grid.add_argument("--vbus", help="bus voltages, comma-separated (V)")
    grid.add_argument("--tplate", help="plate temperatures, comma-separated (C)")
    grid.add_argument("--iload", help="load currents, comma-separated (A)")
    grid.add_argument("--repeats", type=int, help="repeats k per condition")
    grid.add_argument("--no-tc", action="store_true", help="label with plate temperature instead of T_re")

    p = sub.add_parser("simulate", parents=[common, grid], help="turn-on traces and V_TH captures")
    p.add_argument("--dt", type=float, default=50e-12, help="integration step (s)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", parents=[common, grid], help="dataset, distribution fits and both models")
    p.add_argument("--no-coupled", action="store_true", help="train the network on V_TH alone")
    p.add_argument("--single-vbus", type=float, help="restrict to one bus voltage (conventional model only)")
    p.add_argument("--conv-vbus", type=float, default=300.0, help="bus voltage of the conventional model")
    p.add_argument("--epochs", type=int, default=1000)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("fit-dist", parents=[common], help="per-condition distribution fits of a dataset")
    p.add_argument("--dataset", help="dataset CSV (default: <out>/dataset.csv)")
    p.add_argument("--bins", type=int, default=20)
    p.set_defaults(func=cmd_fit_dist)

    p = sub.add_parser("train", parents=[common], help="train the network on a dataset CSV")
    p.add_argument("--dataset", help="dataset CSV (default: <out>/dataset.csv)")
    p.add_argument("--no-coupled", action="store_true")
    p.add_argument("--cv", type=int, default=0, metavar="FOLDS", help="also run k-fold cross-validation")
    p.add_argument("--epochs", type=int, default=1000)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="junction temperature from V_TH (and V_bus)")
    p.add_argument("--model", required=True)
    p.add_argument("--vth", required=True, help="V_TH values, comma-separated (V)")
    p.add_argument("--vbus", help="bus voltage(s), comma-separated (V)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common], help="converter warm-up comparison of both models")
    p.add_argument("--conventional", help="conventional model JSON (default: <out>/model_conventional.json)")
    p.add_argument("--proposed", help="proposed model JSON (default: <out>/model_proposed.json)")
    p.add_argument("--cases", help="vbus:iload pairs, e.g. 300:4,200:6")
    p.add_argument("--iload", help="calibration currents, for the extrapolation flag")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="summarize manifests")
    p.add_argument("manifests", nargs="*")
    p.add_argument("--out", help="directory to search and to write report.txt into")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"tsepcal: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TsepError, RuntimeError, ValueError, ArithmeticError) as exc:
        print(f"tsepcal: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
