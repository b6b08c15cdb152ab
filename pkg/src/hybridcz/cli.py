"""Command-line experiment runner.

Every subcommand reads one JSON configuration (defaults below), runs the
corresponding library operation and writes CSV or JSON to ``--out`` or
standard output.  Logs go to standard error.  Exit status is 0 on success,
2 for configuration errors and 3 for numerical failures.

Example::

    hybridcz calibrate --format json
    hybridcz sweep --config grid.json --threads 4 --out sweep.csv
    hybridcz sweep --print-config > grid.json
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import gates, noise as nz
from .errors import ConfigError, HybridCZError
from .model import SystemParams, build_hamiltonian, hamiltonian_to_json, ueV_to_GHz
from .propagate import evolve_with_record, record_to_csv

log = logging.getLogger("hybridcz")

KINDS = ("sweep", "calibrate", "zcnot", "noise-curve", "lzs-map", "spectrum", "record")
NOISE_KINDS = ("none", "quasistatic", "one_over_f")
SWEEP_COLUMNS = (
    "tau_2g1g",
    "tau_2x1g",
    "t_ramp",
    "t_wait",
    "gate_time",
    "F",
    "F_qt_deficit",
    "F_leak_deficit",
    "F_phase_deficit",
    "G1_re",
    "G1_im",
    "G2",
    "D_CZ",
    "N",
    "seed",
    "error",
)
CURVE_COLUMNS = ("sigma_ueV", "F", "F_leak_deficit", "noise_kind")
LZS_COLUMNS = ("tau_2g1g", "tau_2x1g", "t_wait", "delta_theta", "leakage", "channel")
TAU_BOUNDS = (0.0, 10.0)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class GridAxis:
    """``n`` evenly spaced values from ``start`` to ``stop`` inclusive (GHz)."""

    start: float = 1.0
    stop: float = 5.0
    n: int = 41

    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.n)


@dataclass(frozen=True)
class NoiseConfig:
    """Noise model: ``kind`` with either ``sigma_ueV`` or ``c_eps`` (GHz)."""

    kind: str = "none"
    sigma_ueV: float = 4.14
    c_eps: float | None = None
    N: int = 1000
    nodes: int = 6


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "sweep"
    system: SystemParams = field(default_factory=SystemParams)
    tau_2g1g: GridAxis = field(default_factory=GridAxis)
    tau_2x1g: GridAxis = field(default_factory=GridAxis)
    t_ramp: float = 2.25
    tuning: tuple[float, float] = (4.2, 4.4)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    sigmas_ueV: tuple[float, ...] = (0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0)
    noise_kinds: tuple[str, ...] = ("quasistatic", "one_over_f")
    channel: str = "10"
    record_dt: float = 0.05
    spectrum_duration: float = 2000.0
    spectrum_realizations: int = 8
    seed: int = 0
    threads: int = 1
    out: str | None = None
    format: str = "csv"

    def __post_init__(self):
        validate(self)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["tuning"] = list(self.tuning)
        d["sigmas_ueV"] = list(self.sigmas_ueV)
        d["noise_kinds"] = list(self.noise_kinds)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        data = dict(data)
        _reject_unknown(cls, data, "configuration")
        try:
            if "system" in data:
                data["system"] = SystemParams.from_dict(data["system"])
            for axis in ("tau_2g1g", "tau_2x1g"):
                if axis in data:
                    _reject_unknown(GridAxis, data[axis], axis)
                    data[axis] = GridAxis(**data[axis])
            if "noise" in data:
                _reject_unknown(NoiseConfig, data["noise"], "noise")
                data["noise"] = NoiseConfig(**data["noise"])
            for key in ("tuning", "sigmas_ueV", "noise_kinds"):
                if key in data:
                    data[key] = tuple(data[key])
            return cls(**data)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc


def _reject_unknown(cls, data, what):
    if not isinstance(data, dict):
        raise ConfigError(f"{what} must be a JSON object")
    unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")


def _in_tau_range(v) -> bool:
    return TAU_BOUNDS[0] <= v <= TAU_BOUNDS[1]


def validate(cfg: ExperimentConfig) -> None:
    """Raise :class:`ConfigError` for any invalid field."""
    if cfg.kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}")
    for name in ("tau_2g1g", "tau_2x1g"):
        ax = getattr(cfg, name)
        if not (_in_tau_range(ax.start) and _in_tau_range(ax.stop)):
            raise ConfigError(f"{name} grid must lie within {TAU_BOUNDS} GHz")
        if int(ax.n) != ax.n or ax.n < 1:
            raise ConfigError(f"{name}.n must be a positive integer")
    if len(cfg.tuning) != 2 or not all(_in_tau_range(v) for v in cfg.tuning):
        raise ConfigError("tuning must be two tunnel couplings within [0, 10] GHz")
    if not cfg.t_ramp > 0:
        raise ConfigError("t_ramp must be positive")
    n = cfg.noise
    if n.kind not in NOISE_KINDS:
        raise ConfigError(f"noise.kind must be one of {NOISE_KINDS}")
    if int(n.N) != n.N or n.N < 1 or int(n.nodes) != n.nodes or n.nodes < 1:
        raise ConfigError("noise.N and noise.nodes must be positive integers")
    if n.sigma_ueV < 0 or (n.c_eps is not None and n.c_eps < 0):
        raise ConfigError("noise amplitudes must be non-negative")
    if any(s < 0 for s in cfg.sigmas_ueV):
        raise ConfigError("sigmas_ueV must be non-negative")
    if any(k not in ("quasistatic", "one_over_f") for k in cfg.noise_kinds):
        raise ConfigError("noise_kinds entries must be quasistatic or one_over_f")
    if cfg.channel not in ("10", "11"):
        raise ConfigError("channel must be 10 or 11")
    if cfg.record_dt <= 0 or cfg.spectrum_duration <= 0 or cfg.spectrum_realizations < 1:
        raise ConfigError("record_dt, spectrum_duration and spectrum_realizations must be positive")
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if cfg.threads < 1:
        raise ConfigError("threads must be at least 1")
    if cfg.format not in ("csv", "json"):
        raise ConfigError("format must be csv or json")


# ---------------------------------------------------------------------------
# Noise helpers
# ---------------------------------------------------------------------------
def point_seed(master: int, index: int) -> int:
    """Seed of grid point ``index``, independent of execution order."""
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1, np.uint64)[0])


def _sigma_GHz(ncfg: NoiseConfig, sigma_ueV=None) -> float:
    if sigma_ueV is None and ncfg.c_eps is not None:
        return ncfg.c_eps * math.sqrt(2.0 * math.log(nz.F_HIGH_HZ / nz.F_LOW_HZ))
    return float(ueV_to_GHz(ncfg.sigma_ueV if sigma_ueV is None else sigma_ueV))


def realizations(kind: str, ncfg: NoiseConfig, duration: float, seed: int, sigma_ueV=None):
    """Noise ensemble for one evaluation."""
    if kind == "none":
        return [nz.NOISE_FREE]
    s = _sigma_GHz(ncfg, sigma_ueV)
    if kind == "quasistatic":
        return nz.quadrature_grid(s, s, s, ncfg.nodes)
    unit = nz.one_over_f_ensemble(nz.OneOverFSpec.from_sigma(1.0, seed=seed), duration, ncfg.N)
    return [r.scaled(s) for r in unit]


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------
def _row(g, x, t_ramp, rep, seed, error=""):
    nan = float("nan")
    if rep is None:
        vals = [g, x, t_ramp] + [nan] * 11 + [0, seed, error]
    else:
        vals = [
            g,
            x,
            t_ramp,
            rep.t_wait,
            rep.gate_time,
            rep.F,
            rep.F_qt_deficit,
            rep.F_leak_deficit,
            rep.F_phase_deficit,
            rep.G1.real,
            rep.G1.imag,
            rep.G2,
            rep.D_CZ,
            rep.N_realizations,
            seed,
            error,
        ]
    return dict(zip(SWEEP_COLUMNS, vals))


def _sweep_point(task):
    cfg, index, g, x = task
    seed = point_seed(cfg.seed, index)
    try:
        scan = gates.CZWaitScan(cfg.system, g, x, cfg.t_ramp)
        t_wait = gates.calibrate_t_wait(cfg.system, g, x, cfg.t_ramp, scan=scan)
        settings = gates.CZSettings(g, x, cfg.t_ramp, t_wait)
        if cfg.noise.kind == "none":
            rep = gates.cz_noise_free_report(cfg.system, settings, scan)
        else:
            ns = realizations(cfg.noise.kind, cfg.noise, settings.gate_time, seed)
            rep = gates.evaluate_cz(cfg.system, settings, ns)
        return _row(g, x, cfg.t_ramp, rep, seed)
    except HybridCZError as exc:
        log.warning("grid point (%g, %g) failed: %s", g, x, exc)
        return _row(g, x, cfg.t_ramp, None, seed, type(exc).__name__)


def _map(fn, tasks, threads):
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, tasks, chunksize=1))


def run_sweep(cfg: ExperimentConfig) -> list[dict]:
    """One row per grid point, in row-major ``(tau_2g1g, tau_2x1g)`` order."""
    tasks = [
        (cfg, i * cfg.tau_2x1g.n + j, float(g), float(x))
        for i, g in enumerate(cfg.tau_2g1g.values())
        for j, x in enumerate(cfg.tau_2x1g.values())
    ]
    log.info("sweep: %d points, noise=%s, threads=%d", len(tasks), cfg.noise.kind, cfg.threads)
    return _map(_sweep_point, tasks, cfg.threads)


def run_calibrate(cfg: ExperimentConfig) -> dict:
    g, x = cfg.tuning
    settings = gates.calibrate_cz(cfg.system, g, x, cfg.t_ramp)
    rep = gates.cz_noise_free_report(cfg.system, settings)
    return {"settings": dataclasses.asdict(settings), "report": rep.to_dict()}


def run_zcnot(cfg: ExperimentConfig) -> dict:
    g, x = cfg.tuning
    settings = gates.calibrate_zcnot(cfg.system, g, x, cfg.t_ramp)
    ns = realizations(cfg.noise.kind, cfg.noise, settings.gate_time, cfg.seed)
    return gates.compose_zcnot(cfg.system, settings, ns).to_dict()


def run_noise_curve(cfg: ExperimentConfig) -> list[dict]:
    """Z-CNOT fidelity against noise strength for each configured noise kind."""
    g, x = cfg.tuning
    settings = gates.calibrate_zcnot(cfg.system, g, x, cfg.t_ramp)
    rows = []
    for kind in cfg.noise_kinds:
        unit = None
        if kind == "one_over_f":
            spec = nz.OneOverFSpec.from_sigma(1.0, seed=cfg.seed)
            unit = nz.one_over_f_ensemble(spec, settings.gate_time, cfg.noise.N)
        for s_ueV in cfg.sigmas_ueV:
            s = float(ueV_to_GHz(s_ueV))
            if kind == "quasistatic":
                ns = nz.quadrature_grid(s, s, s, cfg.noise.nodes)
            else:
                ns = [r.scaled(s) for r in unit]
            rep = gates.compose_zcnot(cfg.system, settings, ns)
            log.info("%s sigma=%g ueV: 1-F=%.3e", kind, s_ueV, rep.infidelity)
            rows.append(dict(zip(CURVE_COLUMNS, (s_ueV, rep.F, rep.F_leak_deficit, kind))))
    return rows


def run_lzs(cfg: ExperimentConfig) -> list[dict]:
    m = gates.lzs_phase_map(
        cfg.system, cfg.tau_2g1g.values(), cfg.tau_2x1g.values(), cfg.t_ramp, cfg.channel
    )
    rows = []
    for i, g in enumerate(m.tau_2g1g):
        for j, x in enumerate(m.tau_2x1g):
            vals = (g, x, m.t_wait[i, j], m.delta_theta[i, j], m.leakage[i, j], cfg.channel)
            rows.append(dict(zip(LZS_COLUMNS, vals)))
    return rows


def run_spectrum(cfg: ExperimentConfig) -> dict:
    s = _sigma_GHz(cfg.noise)
    spec = nz.OneOverFSpec.from_sigma(s, seed=cfg.seed)
    traces = nz.one_over_f_ensemble(spec, cfg.spectrum_duration, cfg.spectrum_realizations)
    f, psd = nz.psd_estimate(traces)
    f_min = 10.0 / (cfg.spectrum_duration * 1e-9)
    slope = nz.loglog_slope(f, psd, f_min, 0.5 * spec.f_high)
    log.info("spectrum: c_eps=%.4g GHz, fitted slope %.3f", spec.c_eps, slope)
    return {"c_eps": spec.c_eps, "slope": slope, "f_hz": f, "psd": psd}


def run_record(cfg: ExperimentConfig):
    g, x = cfg.tuning
    settings = gates.calibrate_cz(cfg.system, g, x, cfg.t_ramp)
    return evolve_with_record(cfg.system, settings.schedule(), sample_dt=cfg.record_dt)


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------
def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def rows_to_csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return None if not math.isfinite(obj) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def _dump(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def render(cfg: ExperimentConfig, command: str, result) -> str:
    """Serialize ``result`` of ``command`` in the configured format."""
    fmt = cfg.format
    if command == "sweep":
        return rows_to_csv(result, SWEEP_COLUMNS) if fmt == "csv" else _dump(result)
    if command == "noise-curve":
        return rows_to_csv(result, CURVE_COLUMNS) if fmt == "csv" else _dump(result)
    if command == "lzs-map":
        return rows_to_csv(result, LZS_COLUMNS) if fmt == "csv" else _dump(result)
    if command == "spectrum":
        if fmt == "json":
            return _dump(result)
        rows = [{"f_hz": f, "psd": p} for f, p in zip(result["f_hz"], result["psd"])]
        return rows_to_csv(rows, ("f_hz", "psd"))
    if command == "record":
        if fmt == "csv":
            return record_to_csv(result)
        return _dump({"times": result.times, "populations": result.populations, **result.contributions})
    if command == "calibrate" and fmt == "csv":
        s, r = result["settings"], result["report"]
        row = {**s, "gate_time": r["gate_time"], "F": r["F"], "D_CZ": r["D_CZ"]}
        return rows_to_csv([row], tuple(row))
    if command == "zcnot" and fmt == "csv":
        keys = ("gate_time", "F", "F_qt_deficit", "F_leak_deficit", "F_phase_deficit", "N_realizations")
        return rows_to_csv([result], keys)
    if command == "dump-hamiltonian" and fmt == "csv":
        h = np.asarray(result).real
        return "\n".join(",".join(repr(float(v)) for v in row) for row in h) + "\n"
    if command == "dump-hamiltonian":
        return _dump(hamiltonian_to_json(result))
    return _dump(result)


COMMANDS = {
    "sweep": run_sweep,
    "calibrate": run_calibrate,
    "zcnot": run_zcnot,
    "noise-curve": run_noise_curve,
    "lzs-map": run_lzs,
    "spectrum": run_spectrum,
    "record": run_record,
    "dump-hamiltonian": lambda cfg: build_hamiltonian(cfg.system, *cfg.tuning),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hybridcz", description="Two-qubit hybrid-qubit gate simulations.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        sp.add_argument("--threads", type=int, help="worker processes")
        sp.add_argument("--out", help="output file (default: stdout)")
        sp.add_argument("--format", choices=("csv", "json"))
        sp.add_argument("--print-config", action="store_true", help="print the resolved configuration and exit")
    return p


def load_config(args) -> ExperimentConfig:
    data = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read {args.config}: {exc}") from exc
        data = ExperimentConfig.from_json(text).to_dict()
    for key in ("seed", "threads", "out", "format"):
        v = getattr(args, key)
        if v is not None:
            data[key] = v
    if args.command in KINDS:
        data["kind"] = args.command
    return ExperimentConfig.from_dict(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return 2
    if args.print_config:
        sys.stdout.write(cfg.to_json() + "\n")
        return 0
    try:
        text = render(cfg, args.command, COMMANDS[args.command](cfg))
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return 2
    except HybridCZError as exc:
        log.error("numerical failure: %s: %s", type(exc).__name__, exc)
        return 3
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        log.info("wrote %s", cfg.out)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
