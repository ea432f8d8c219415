"""Command-line front end: calibrate, sense, model, simulate, roc, replay.

Every command writes into a staging directory next to ``--out`` and only
moves its files into place once everything succeeded, so a failed run
leaves no partial outputs behind.  Each run records a ``manifest.json``
holding the resolved configuration, input digests and the parameters the
pipeline chose, enough to re-run it with ``iotsense replay``.

Exit codes: 0 success, 2 configuration error, 3 input/output error,
4 degenerate data.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io as _io
import json
import logging
import os
import shutil
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import io as fio
from .detection import (TRUTH, CalibrationError, OccupancyGrid, calibrate_noise,
                        threshold_from_pfa)
from .models import (MEASURED_SITES, ChannelModel, ModelError, arrival_rate_vs_bandwidth,
                     fit_temporal_model, normalized_traffic)
from .pipeline import sense
from .simulator import (SpecError, TrafficSpec, generate_traffic, roc_sweep, synthesize_iq,
                        synthesize_psd, thresholds_for_pfa)
from .spectrogram import SpectrogramConfig, dbm_to_watts, watts_to_dbm

log = logging.getLogger("iotsense")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DEGENERATE = 0, 2, 3, 4

DEFAULTS = {
    "spectrogram": {"window_size": 15000, "averaging": 10, "overlap": 0.0},
    "detection": {"p_f": 1e-6, "min_samples": 1000, "threshold_dbm_per_hz": None},
    "clustering": {"delta": 0.5},
    "frames": {"kappa": 2.0, "alpha": 1e-6},
    "sense": {"block_rows": None},
    "model": {"max_lag_s": None, "n_widths": 20, "min_frames": 30},
    "simulator": TrafficSpec().to_config(),
    "roc": {"p_f": [1e-1, 1e-2, 1e-3, 1e-4, 1e-5], "snr_db": [-5.0, 0.0, 5.0],
            "min_overlap": 0.5},
}


class ConfigError(ValueError):
    pass


class DegenerateData(RuntimeError):
    pass


# --- configuration --------------------------------------------------------

def _merge(base: dict, extra: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if key not in out:
            raise ConfigError(f"unknown config key {where}{key}")
        if isinstance(out[key], dict) and key != "simulator":
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where}{key} must be a section")
            out[key] = _merge(out[key], value, f"{where}{key}.")
        elif key == "simulator":
            out[key] = dict(out[key], **value)
        else:
            out[key] = value
    return out


def load_config(path=None, overrides=None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be an object")
        cfg = _merge(cfg, user)
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, key = dotted.split(".", 1)
        cfg[section][key] = value
    return cfg


def _traffic_spec(cfg) -> TrafficSpec:
    return TrafficSpec.from_config(cfg["simulator"])


def _stft_config(cfg) -> SpectrogramConfig:
    try:
        return SpectrogramConfig(**cfg["spectrogram"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"spectrogram: {exc}") from exc


# --- staged output ----------------------------------------------------------

class Run:
    """Collects outputs in a staging directory and publishes them at the end."""

    def __init__(self, command: str, out: Path, cfg: dict, seed=None, argv=None):
        self.command = command
        self.argv = argv or {}
        self.out = Path(out)
        self.cfg = cfg
        self.seed = seed
        self.inputs = []
        self.chosen = {}
        self.outputs = {}
        self.started = _now()
        self.out.parent.mkdir(parents=True, exist_ok=True)
        self.stage = Path(tempfile.mkdtemp(prefix=f".{self.out.name}.staging-",
                                           dir=self.out.parent))

    def add_input(self, path, role: str):
        path = Path(path)
        self.inputs.append({"role": role, "path": str(path), "sha256": fio.file_digest(path)})
        side = fio.sidecar(path)
        if side.exists():
            self.inputs.append({"role": role + ".meta", "path": str(side),
                                "sha256": fio.file_digest(side)})

    def path(self, name: str) -> Path:
        return self.stage / name

    def text(self, name: str, content: str):
        fio.atomic_write(self.path(name), content)

    def json(self, name: str, obj):
        fio.write_json(self.path(name), obj)

    def manifest(self) -> dict:
        files = sorted(p.name for p in self.stage.iterdir() if p.is_file())
        return {
            "command": self.command,
            "version": __version__,
            "seed": self.seed,
            "config": self.cfg,
            "argv": self.argv,
            "inputs": self.inputs,
            "chosen": self.chosen,
            "outputs": {name: fio.file_digest(self.stage / name) for name in files},
            "started": self.started,
            "finished": _now(),
        }

    def publish(self):
        self.json("manifest.json", self.manifest())
        self.out.mkdir(parents=True, exist_ok=True)
        for p in sorted(self.stage.iterdir()):
            os.replace(p, self.out / p.name)
        self.stage.rmdir()

    def discard(self):
        shutil.rmtree(self.stage, ignore_errors=True)


def _now() -> str:
    # SOURCE_DATE_EPOCH pins timestamps for reproducible outputs
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = float(epoch) if epoch is not None else time.time()
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


# --- commands -------------------------------------------------------------

def cmd_calibrate(run: Run, args):
    cfg = run.cfg["detection"]
    path = Path(args.noise)
    run.add_input(path, "noise")
    if path.suffix == ".csv":
        samples = fio.read_noise_csv(path)
    else:
        samples = fio.read_capture(path, _stft_config(run.cfg)).values
    cal = calibrate_noise(samples, min_samples=int(cfg["min_samples"]))
    p_f = float(cfg["p_f"])
    theta = threshold_from_pfa(cal, p_f)
    verifiable = cal.size * p_f >= 1.0
    record = {
        "p_f": p_f,
        "threshold_w_per_hz": theta,
        "threshold_dbm_per_hz": float(watts_to_dbm(theta)),
        "noise_power_w_per_hz": cal.mean_power,
        "noise_power_dbm_per_hz": float(watts_to_dbm(cal.mean_power)),
        "n_samples": cal.size,
        "verifiable": verifiable,
        "empirical_pfa": float(cal.ccdf(theta)),
    }
    fio.atomic_write(run.path("noise_samples.f32"),
                     np.asarray(cal.samples, dtype=fio.LE_F32).tobytes())
    run.json("calibration.json", record)
    run.chosen.update(p_f=p_f, threshold_w_per_hz=theta)
    print(f"noise power {record['noise_power_dbm_per_hz']:.2f} dBm/Hz")
    print(f"threshold   {record['threshold_dbm_per_hz']:.2f} dBm/Hz (p_f = {p_f:g})")
    if not verifiable:
        print(f"warning: {cal.size} samples cannot verify p_f = {p_f:g}", file=sys.stderr)


def _threshold(run: Run, args) -> float:
    det = run.cfg["detection"]
    if args.calibration:
        run.add_input(args.calibration, "calibration")
        cal = fio.read_json(args.calibration)
        run.chosen["p_f"] = cal.get("p_f")
        return float(cal["threshold_w_per_hz"])
    if det.get("threshold_dbm_per_hz") is not None:
        return float(dbm_to_watts(float(det["threshold_dbm_per_hz"])))
    raise ConfigError("sense needs --calibration or a threshold in dBm/Hz")


def cmd_sense(run: Run, args):
    spec = fio.read_capture(args.capture, _stft_config(run.cfg))
    run.add_input(args.capture, "capture")
    theta = _threshold(run, args)
    delta = float(run.cfg["clustering"]["delta"])
    kappa = float(run.cfg["frames"]["kappa"])
    block_rows = run.cfg["sense"]["block_rows"]
    alpha = run.cfg["frames"]["alpha"]
    res = sense(spec, theta, delta, kappa, block_rows=block_rows, alpha=alpha)
    fs = res.frames
    fio.write_grid(run.path("observed.u8"), res.observed, fs.time_span)
    fio.write_grid(run.path("estimated.u8"), res.estimated, fs.time_span)
    run.text("frames.csv", fio.frames_csv(fs.frames))
    run.json("frames.json", fio.frameset_to_dict(fs))
    run.text("duty.csv", fio.table_csv(["freq_hz", "duty"],
                                       zip(spec.freq_axis.tolist(), res.duty_per_bin.tolist())))
    summary = {
        "threshold_w_per_hz": theta,
        "threshold_dbm_per_hz": float(watts_to_dbm(theta)),
        "duty_cycle": res.duty_cycle,
        "observed_duty_cycle": float(res.observed.bits.mean()),
        "n_frames": len(fs),
        "dt_s": fs.dt,
        "df_hz": fs.df,
        "time_span_s": fs.time_span,
        "blocks": res.blocks,
        "overlaps": len(fs.overlaps),
        "dropped_clusters": len(fs.dropped),
    }
    run.json("summary.json", summary)
    run.chosen.update(threshold_w_per_hz=theta, delta=delta, kappa=kappa, alpha=alpha,
                      min_points=[b["min_points"] for b in res.blocks],
                      eps=[b["eps"] for b in res.blocks])
    print(f"{len(fs)} frames, duty cycle {res.duty_cycle:.4g}")


def cmd_model(run: Run, args):
    if args.check_sites:
        rows, ok = [], True
        for site, (psi, tau, lam, g_quoted) in MEASURED_SITES.items():
            g = normalized_traffic(lam, psi, tau)
            good = abs(g - g_quoted) <= 0.005
            ok &= good
            rows.append([site, psi, tau, lam, g_quoted, g, "ok" if good else "MISMATCH"])
            print(f"{site}: G = {g:.4f} (quoted {g_quoted:.2f}) {'ok' if good else 'MISMATCH'}")
        run.text("sites.csv", fio.table_csv(
            ["site", "psi", "tau_corr_s", "lambda_B", "G_quoted", "G_recomputed", "status"], rows))
        if not ok:
            raise DegenerateData("recomputed normalised traffic disagrees with the quoted values")
        return
    if not args.sense_dir:
        raise ConfigError("model needs a sense output directory or --check-sites")
    src = Path(args.sense_dir)
    grid_path, frames_path = src / "estimated.u8", src / "frames.json"
    grid = fio.read_grid(grid_path)
    frames = fio.frameset_from_dict(fio.read_json(frames_path))
    run.add_input(grid_path, "estimated")
    run.add_input(frames_path, "frames")
    mcfg = run.cfg["model"]
    bits = grid.bits
    psi = float(bits.mean())
    if not 0.0 < psi < 1.0:
        run.json("model.json", {"available": False,
                                "reason": "occupancy is constant; no model can be fitted",
                                "psi": psi})
        raise DegenerateData(f"duty cycle {psi:g}: no model")
    max_lag = mcfg["max_lag_s"]
    temporal, rho = fit_temporal_model(bits, grid.dt, max_lag)
    n_cols = bits.shape[1]
    widths = np.unique(np.linspace(1, n_cols, num=min(n_cols, int(mcfg["n_widths"])))
                       .round().astype(int))
    fit = arrival_rate_vs_bandwidth(frames, widths, n_cols=n_cols, time_span=frames.time_span,
                                    df=frames.df, min_frames=int(mcfg["min_frames"]))
    model = ChannelModel(temporal, fit.lambda_B, fit.lambda_0, fit.band, fit.mse)
    out = dict(model.as_dict(), available=True, n_frames=len(frames),
               low_confidence=fit.low_confidence)
    run.json("model.json", out)
    lags = np.arange(rho.size) * grid.dt
    run.text("autocorrelation.csv", fio.table_csv(
        ["lag_s", "rho", "rho_fit"],
        zip(lags.tolist(), rho.tolist(), np.exp(-lags / temporal.tau_corr).tolist())))
    run.text("arrival.csv", fio.table_csv(
        ["width_hz", "rate", "rate_fit"],
        zip(fit.widths.tolist(), fit.rates.tolist(), fit.rate(fit.widths).tolist())))
    run.chosen.update(psi=temporal.duty_cycle, tau_corr_s=temporal.tau_corr)
    print(f"psi {temporal.duty_cycle:.4g}  tau_corr {temporal.tau_corr * 1e3:.3f} ms  "
          f"lambda(B) {fit.lambda_B:.3f}/s  G(B) {model.normalized_traffic:.4f}")


def _truth_csv(truth) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["start_s", "f_center_hz", "toa_s", "bandwidth_hz", "snr_db", "gain",
                "row0", "row1", "col0", "col1"])
    for f in truth.frames:
        w.writerow([repr(float(f.start)), repr(float(f.f_center)), repr(float(f.toa)),
                    repr(float(f.bandwidth)), repr(float(f.snr_db)), repr(float(f.gain)),
                    f.row0, f.row1, f.col0, f.col1])
    return buf.getvalue()


def cmd_simulate(run: Run, args):
    spec = _traffic_spec(run.cfg)
    truth = generate_traffic(spec)
    run.text("truth.csv", _truth_csv(truth))
    t = np.arange(spec.rows) * spec.dt
    f = spec.f_low + (np.arange(spec.cols) + 0.5) * spec.df
    tg = OccupancyGrid(truth.truth_grid, t, f, kind=TRUTH)
    fio.write_grid(run.path("truth_grid.u8"), tg, spec.duration)
    if args.iq:
        st = _stft_config(run.cfg)
        rec = synthesize_iq(truth, spec, st.window_size, st.averaging)
        fio.write_iq(run.path("capture.iq"), rec)
    else:
        fio.write_spectrogram(run.path("capture.f32"), synthesize_psd(truth, spec))
    run.json("spec.json", spec.to_config())
    print(f"{len(truth.frames)} frames on a {spec.rows}x{spec.cols} grid")


ROC_FIELDS = ["snr", "threshold", "pfa_ed", "pd_ed", "pfa_fw", "pd_fw",
              "frame_pd_ed", "frame_pd_fw", "n_idle", "n_busy"]


def cmd_roc(run: Run, args):
    spec = _traffic_spec(run.cfg)
    rcfg = run.cfg["roc"]
    p_fs = [float(p) for p in rcfg["p_f"]]
    thresholds = thresholds_for_pfa(p_fs, spec.noise_power, spec.averaging)
    points = roc_sweep(spec, thresholds, [float(s) for s in rcfg["snr_db"]],
                       delta=float(run.cfg["clustering"]["delta"]),
                       kappa=float(run.cfg["frames"]["kappa"]),
                       alpha=run.cfg["frames"]["alpha"],
                       min_overlap=float(rcfg["min_overlap"]))
    rows = [[p.snr_db, p.threshold, p.pfa_ed, p.pd_ed, p.pfa_fw, p.pd_fw, p.frame_pd_ed,
             p.frame_pd_fw, p.n_idle, p.n_busy] for p in points]
    run.text("roc.csv", fio.table_csv(ROC_FIELDS, rows))
    run.chosen.update(thresholds_w_per_hz=thresholds.tolist(), p_f=p_fs)
    print(f"{len(points)} ROC points written")


COMMANDS = {"calibrate": cmd_calibrate, "sense": cmd_sense, "model": cmd_model,
            "simulate": cmd_simulate, "roc": cmd_roc}


# --- argument parsing -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="iotsense", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("-c", "--config", help="JSON config with per-module sections")
        sp.add_argument("-o", "--out", required=out_required, help="output directory")
        sp.add_argument("--delta", type=float, help="frequency step of the mapped plane")
        sp.add_argument("--kappa", type=float, help="box width in interquartile ranges")
        sp.add_argument("--window-size", type=int, help="STFT window in samples")
        sp.add_argument("--averaging", type=int, help="DFT bins averaged per column")

    sp = sub.add_parser("calibrate", help="noise ECDF and detection threshold")
    sp.add_argument("noise", help="noise capture: CSV of dBm/Hz samples, spectrogram or IQ")
    sp.add_argument("--p-f", type=float, help="target false-alarm probability")
    common(sp)

    sp = sub.add_parser("sense", help="detect, cluster and box frames in a capture")
    sp.add_argument("capture", help="IQ capture, spectrogram binary or spectrogram CSV")
    sp.add_argument("--calibration", help="calibration.json from the calibrate command")
    sp.add_argument("--threshold-dbm", type=float, help="fixed threshold in dBm/Hz")
    sp.add_argument("--block-rows", type=int, help="process the capture in row blocks")
    common(sp)

    sp = sub.add_parser("model", help="fit the occupancy and arrival models")
    sp.add_argument("sense_dir", nargs="?", help="output directory of a sense run")
    sp.add_argument("--check-sites", action="store_true",
                    help="recompute normalised traffic for the published site results")
    sp.add_argument("--max-lag", type=float, help="largest autocorrelation lag in seconds")
    common(sp)

    sp = sub.add_parser("simulate", help="synthetic capture with ground truth")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--iq", action="store_true", help="write an IQ capture instead of a PSD")
    common(sp)

    sp = sub.add_parser("roc", help="ROC sweep of energy detection versus the framework")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--p-f", type=float, nargs="+", help="nominal false-alarm probabilities")
    sp.add_argument("--snr", type=float, nargs="+", help="SNRs in dB")
    common(sp)

    sp = sub.add_parser("replay", help="re-run a recorded command")
    sp.add_argument("manifest", help="manifest.json of an earlier run")
    sp.add_argument("-o", "--out", required=True, help="output directory")
    return p


def _overrides(args) -> dict:
    g = lambda name: getattr(args, name, None)  # noqa: E731
    return {
        "detection.p_f": g("p_f") if args.command == "calibrate" else None,
        "detection.threshold_dbm_per_hz": g("threshold_dbm"),
        "clustering.delta": g("delta"),
        "frames.kappa": g("kappa"),
        "spectrogram.window_size": g("window_size"),
        "spectrogram.averaging": g("averaging"),
        "sense.block_rows": g("block_rows"),
        "model.max_lag_s": g("max_lag"),
        "simulator.seed": g("seed"),
        "roc.p_f": g("p_f") if args.command == "roc" else None,
        "roc.snr_db": g("snr"),
    }


def _replay_args(manifest_path):
    m = fio.read_json(manifest_path)
    if m.get("command") not in COMMANDS:
        raise ConfigError(f"{manifest_path}: unknown command {m.get('command')!r}")
    for entry in m.get("inputs", []):
        path = Path(entry["path"])
        if not path.exists():
            raise FileNotFoundError(path)
        if fio.file_digest(path) != entry["sha256"]:
            raise fio.FormatError(f"{path}: contents changed since the recorded run")
    ns = argparse.Namespace(**m.get("argv", {}))
    return m, ns


def _execute(command, args, cfg, out) -> int:
    seed = cfg["simulator"].get("seed") if command in ("simulate", "roc") else None
    run = Run(command, out, cfg, seed, _argv_record(args))
    try:
        COMMANDS[command](run, args)
    except DegenerateData:
        # keep the explanatory marker, drop everything else
        marker = run.path("model.json")
        if marker.exists() or (run.stage / "sites.csv").exists():
            run.publish()
        else:
            run.discard()
        raise
    except BaseException:
        run.discard()
        raise
    run.publish()
    return EXIT_OK


def _argv_record(args) -> dict:
    keep = {"noise", "capture", "calibration", "sense_dir", "check_sites", "iq"}
    return {k: v for k, v in vars(args).items() if k in keep and v not in (None, False)}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            manifest, rec = _replay_args(args.manifest)
            command, cfg = manifest["command"], manifest["config"]
            for key in ("noise", "capture", "calibration", "sense_dir"):
                setattr(rec, key, getattr(rec, key, None))
            rec.check_sites = getattr(rec, "check_sites", False)
            rec.iq = getattr(rec, "iq", False)
            rec.command = command
            args_for_run = rec
        else:
            cfg = load_config(args.config, _overrides(args))
            command, args_for_run = args.command, args
        return _execute(command, args_for_run, cfg, args.out)
    except (ConfigError, SpecError) as exc:
        print(f"iotsense: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, fio.FormatError) as exc:
        print(f"iotsense: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DegenerateData, CalibrationError, ModelError) as exc:
        print(f"iotsense: degenerate data: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except ValueError as exc:
        print(f"iotsense: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
