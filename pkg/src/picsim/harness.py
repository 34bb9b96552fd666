"""Run orchestration: end-to-end simulation, parameter sweeps, and
reproducible output directories with digests.

Every metric in a run report is a deterministic function of the resolved
scenario echo, so reports can be recomputed bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__ as _pkg_version
from . import canceller, chain, rxdsp
from .rxdsp import EvmReport, Spectrum
from .scenario import (
    InterfererConfig,
    ReferenceChannel,
    Scenario,
    scenario_to_dict,
)

# interference band probed for suppression, offsets from the carrier
SUPPRESSION_BAND = (5e6, 20e6)

SWEEP_AXES = ("order", "sir_db", "center_freq", "num_interferers", "delay_error")


class StageError(RuntimeError):
    """Pipeline failure tagged with the stage that raised it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[stage={stage}] {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True, eq=False)
class RunReport:
    """Everything one simulation run produced."""

    scenario: dict
    metrics: dict
    tune_result: canceller.TuneResult
    evm_pre: EvmReport
    evm_post: EvmReport
    spectrum_pre: Spectrum
    spectrum_post: Spectrum
    versions: dict
    wall_clock_s: float


def _stage(stage: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, exc) from exc


def run_simulation(sc: Scenario) -> RunReport:
    """Generate, mix, modulate, tune, detect, and demodulate one scenario.

    Pre-cancellation metrics are taken with all reference weights zeroed
    (muted channels, identical detection chain).
    """
    started = time.monotonic()
    rz = _stage("generate", chain.realize, sc)
    pre = _stage("detect", chain.detect, sc, rz, None)
    tr = _stage("tune", canceller.tune, sc, realization=rz)
    post = _stage("detect", chain.detect, sc, rz, tr.settings)
    evm_pre = _stage("demodulate", rxdsp.demodulate_qam, pre, sc.soi.qam, rz.tx_symbols)
    evm_post = _stage("demodulate", rxdsp.demodulate_qam, post, sc.soi.qam,
                      rz.tx_symbols)
    segment = 4096
    sp_pre = _stage("spectra", rxdsp.welch_psd, pre, segment)
    sp_post = _stage("spectra", rxdsp.welch_psd, post, segment)

    fc = sc.sim.center_freq
    lo, hi = SUPPRESSION_BAND
    band_powers = {}
    suppression = {}
    for tag, band in (("lower", (fc - hi, fc - lo)), ("upper", (fc + lo, fc + hi))):
        band_powers[f"band_pre_{tag}_db"] = rxdsp.band_power(sp_pre, *band)
        band_powers[f"band_post_{tag}_db"] = rxdsp.band_power(sp_post, *band)
        suppression[tag] = (
            band_powers[f"band_pre_{tag}_db"] - band_powers[f"band_post_{tag}_db"]
        )
    metrics = {
        "pre_evm_percent": evm_pre.evm_rms_percent,
        "post_evm_percent": evm_post.evm_rms_percent,
        "residual_interference_db": tr.residual_interference_power_db,
        "predicted_residual_db": tr.predicted_residual_db,
        "converged": tr.converged,
        "suppression_lower_db": suppression["lower"],
        "suppression_upper_db": suppression["upper"],
        "suppression_min_db": min(suppression.values()),
        "occupied_bw_pre_hz": rxdsp.occupied_bandwidth(sp_pre, 0.99),
        "occupied_bw_post_hz": rxdsp.occupied_bandwidth(sp_post, 0.99),
        "symbols_used": evm_post.symbols_used,
        **band_powers,
    }
    versions = {
        "picsim": _pkg_version,
        "numpy": np.__version__,
    }
    return RunReport(
        scenario=scenario_to_dict(sc),
        metrics=metrics,
        tune_result=tr,
        evm_pre=evm_pre,
        evm_post=evm_post,
        spectrum_pre=sp_pre,
        spectrum_post=sp_post,
        versions=versions,
        wall_clock_s=time.monotonic() - started,
    )


def apply_axis(sc: Scenario, axis: str, value) -> Scenario:
    """Return a copy of the scenario with one sweep axis applied."""
    if axis == "order":
        qam = replace(sc.soi.qam, order=int(value))
        return replace(sc, soi=replace(sc.soi, qam=qam))
    if axis == "sir_db":
        if not sc.interferers:
            raise ValueError("sir_db axis needs at least one interferer")
        total = np.sqrt(sum(i.gain**2 for i in sc.interferers))
        if total == 0:
            raise ValueError("sir_db axis needs a nonzero interferer gain")
        target_total = sc.soi.gain * 10.0 ** (-float(value) / 20.0)
        scale = target_total / total
        interferers = tuple(
            replace(i, gain=i.gain * scale) for i in sc.interferers
        )
        return replace(sc, interferers=interferers)
    if axis == "center_freq":
        return replace(sc, sim=replace(sc.sim, center_freq=float(value)))
    if axis == "num_interferers":
        n = int(value)
        if n < 1 or not sc.interferers or not sc.reference_channels:
            raise ValueError("num_interferers axis needs a template channel")
        base_int = sc.interferers[0]
        base_ch = sc.reference_channels[0]
        interferers = []
        channels = []
        for k in range(n):
            fm = replace(base_int.fm, seed=base_int.fm.seed + 10 * k)
            interferers.append(
                replace(base_int, fm=fm, delay=base_int.delay + 12.5e-9 * k)
            )
            path = replace(base_ch.path,
                           wavelength_nm=base_ch.path.wavelength_nm + 4.0 * k)
            channels.append(replace(base_ch, path=path))
        return replace(sc, interferers=tuple(interferers),
                       reference_channels=tuple(channels))
    if axis == "delay_error":
        return replace(sc, sim=replace(sc.sim, delay_error=float(value)))
    raise ValueError(f"unknown sweep axis {axis!r}; axes: {', '.join(SWEEP_AXES)}")


def run_sweep(base: Scenario, axis: str, values: Sequence) -> list[RunReport]:
    """Independent runs along one axis, order-stable, no shared state."""
    scenarios = [apply_axis(base, axis, v) for v in values]
    return [run_simulation(sc) for sc in scenarios]


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _json_default(obj):
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _tune_to_dict(tr: canceller.TuneResult) -> dict:
    return {
        "delays_s": [None if d is None else float(d) for d in tr.delays],
        "weights": [[w.real, w.imag] for w in tr.weights],
        "settings": [
            None if s is None else {
                "bias_voltage": s.bias_voltage,
                "attenuation_db": s.attenuation_db,
                "delay_s": s.delay,
            }
            for s in tr.settings
        ],
        "residual_interference_power_db": tr.residual_interference_power_db,
        "predicted_residual_db": tr.predicted_residual_db,
        "converged": tr.converged,
        "locked": list(tr.locked),
    }


def _write_csv(path: Path, header: str, columns) -> None:
    rows = np.column_stack(columns)
    with path.open("w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.10g}" for v in row) + "\n")


def emit_outputs(report: RunReport, out_dir) -> dict:
    """Write the machine-readable report, PSD and constellation tables, and
    a manifest with content digests.  Returns the manifest."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        report_path = out / "report.json"
        with report_path.open("w") as fh:
            json.dump(
                {
                    "scenario": report.scenario,
                    "metrics": report.metrics,
                    "tune": _tune_to_dict(report.tune_result),
                    "versions": report.versions,
                    "wall_clock_s": report.wall_clock_s,
                },
                fh,
                indent=2,
                default=_json_default,
            )
            fh.write("\n")
        for tag, spectrum in (("pre", report.spectrum_pre),
                              ("post", report.spectrum_post)):
            _write_csv(out / f"psd_{tag}.csv", "freq_hz,psd_dbfs",
                       (spectrum.freqs, spectrum.psd_db))
        points_pre = report.evm_pre.constellation_points
        points_post = report.evm_post.constellation_points
        stage = np.concatenate([np.zeros(points_pre.size), np.ones(points_post.size)])
        points = np.concatenate([points_pre, points_post])
        _write_csv(out / "constellation.csv", "i,q,post_cancellation",
                   (points.real, points.imag, stage))
        names = ["report.json", "psd_pre.csv", "psd_post.csv", "constellation.csv"]
        manifest = {
            "files": [
                {
                    "name": name,
                    "sha256": _digest(out / name),
                    "bytes": (out / name).stat().st_size,
                }
                for name in names
            ]
        }
        with (out / "manifest.json").open("w") as fh:
            json.dump(manifest, fh, indent=2)
            fh.write("\n")
        return manifest
    except OSError as exc:
        raise StageError("emit", RuntimeError(f"writing {out}: {exc}"))


def read_report(run_dir) -> dict:
    """Load a run directory, verifying manifest digests."""
    run = Path(run_dir)
    manifest_path = run / "manifest.json"
    if not manifest_path.exists():
        raise StageError("report", FileNotFoundError(f"no manifest in {run}"))
    manifest = json.loads(manifest_path.read_text())
    for entry in manifest["files"]:
        path = run / entry["name"]
        if not path.exists():
            raise StageError("report", FileNotFoundError(f"missing {path}"))
        actual = _digest(path)
        if actual != entry["sha256"]:
            raise StageError(
                "report",
                RuntimeError(
                    f"digest mismatch for {path}: manifest {entry['sha256']}, "
                    f"file {actual}"
                ),
            )
    data = json.loads((run / "report.json").read_text())
    data["manifest"] = manifest
    return data


def load_psd_csv(path) -> tuple[np.ndarray, np.ndarray]:
    table = np.loadtxt(path, delimiter=",", skiprows=1)
    return table[:, 0], table[:, 1]
