"""Monte-Carlo benchmark of the beamforming methods and beampattern export.

Reported gains are normalized by the pattern's own peak over the
azimuth/elevation grid, so both the satellite and the interference gain are
<= 0 dB and comparable across methods.  Means are taken over dB values.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import __version__
from .array_model import (ArrayGeometry, Direction, Scenario, ScenarioDistribution, derive_seed,
                          random_scenario, sample_covariance, steering_matrix, steering_vector,
                          synthesize_snapshots, uca_geometry)
from .beamformers import (DEFAULT_GREEDY_SAMPLES, ObjectiveParams, capon_weights,
                          coordinate_descent, greedy_sample, naive_quantize, objective,
                          oracle_search, to_complex)
from .linalg import quadratic_form

GAIN_FLOOR_DB = -300.0


class MethodId(str, Enum):
    CAPON = "capon"
    NAIVE = "naive"
    ORACLE = "oracle"
    GREEDY = "greedy"
    COORD_DESCENT = "coord_descent"
    GBDT_REFINE = "gbdt_refine"

    @classmethod
    def parse(cls, name: str) -> MethodId:
        try:
            return cls(name)
        except ValueError:
            raise ValueError(f"unknown method {name!r}; choose from "
                             f"{', '.join(m.value for m in cls)}") from None


ALL_METHODS = tuple(MethodId)


class BenchmarkError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridSpec:
    step_deg: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.step_deg <= 90.0:
            raise ValueError(f"grid step must lie in (0, 90] degrees, got {self.step_deg}")

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        az = np.arange(0.0, 360.0 - 1e-9, self.step_deg)
        el = np.arange(0.0, 90.0 + 1e-9, self.step_deg)
        return az, el


_GRID_CACHE: dict = {}


def _grid_steering(geom: ArrayGeometry, grid: GridSpec) -> np.ndarray:
    key = (geom, grid)
    if key not in _GRID_CACHE:
        az, el = grid.axes()
        azg, elg = np.meshgrid(az, el)  # el-major rows
        _GRID_CACHE[key] = steering_matrix(geom, azg.ravel(), elg.ravel())
    return _GRID_CACHE[key]


def pattern_power(w, geom: ArrayGeometry, grid: GridSpec) -> np.ndarray:
    """|w^H a|^2 over the grid, shape (n_el, n_az)."""
    az, el = grid.axes()
    a = _grid_steering(geom, grid)
    return (np.abs(a @ np.conj(w)) ** 2).reshape(len(el), len(az))


def _to_db(ratio: float) -> float:
    if ratio <= 0.0:
        return GAIN_FLOOR_DB
    return float(max(GAIN_FLOOR_DB, 10.0 * np.log10(ratio)))


def beampattern_gain_db(w, geom: ArrayGeometry, direction: Direction,
                        grid: GridSpec = GridSpec()) -> float:
    """Response toward ``direction`` relative to the pattern peak."""
    w = np.asarray(w, dtype=np.complex128)
    resp = abs(np.vdot(w, steering_vector(geom, direction))) ** 2
    peak = max(float(pattern_power(w, geom, grid).max()), resp)
    if peak == 0.0:
        return GAIN_FLOOR_DB
    return float(min(0.0, _to_db(resp / peak)))


def export_beampattern_grid(w, geom: ArrayGeometry, grid: GridSpec, path) -> int:
    """Write az_deg, el_deg, gain_db rows (elevation-major); returns row count."""
    power = pattern_power(np.asarray(w, dtype=np.complex128), geom, grid)
    peak = power.max()
    az, el = grid.axes()
    rows = 0
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["az_deg", "el_deg", "gain_db"])
        for i, e in enumerate(el):
            for j, a in enumerate(az):
                g = 0.0 if power[i, j] == peak else _to_db(power[i, j] / peak)
                out.writerow([f"{a:g}", f"{e:g}", repr(float(g))])
                rows += 1
    return rows


@dataclass
class MethodRecord:
    method: str
    sat_gain_db: float
    intf_gain_db: float
    objective: float
    latency_ns: int
    weights: list  # complex weights as [re, im] pairs
    symbols: list | None = None
    extra: dict = field(default_factory=dict)


@dataclass
class TrialResult:
    scenario_id: int
    scenario: dict
    records: dict[str, MethodRecord]

    def without_latency(self) -> dict:
        d = asdict(self)
        for rec in d["records"].values():
            rec.pop("latency_ns")
        return d


def _complex_pairs(w) -> list:
    return [[float(z.real), float(z.imag)] for z in np.asarray(w)]


def run_trial(geom: ArrayGeometry, sc: Scenario, methods, p: ObjectiveParams = ObjectiveParams(),
              ml=None, greedy_samples: int = DEFAULT_GREEDY_SAMPLES, seed: int = 0,
              sweeps: int = 20, refine_sweeps: int = 3, grid: GridSpec = GridSpec(),
              scenario_id: int = 0) -> TrialResult:
    """Synthesize one scenario and time each requested solver on it."""
    from .ml_policy import gbdt_predict_refine

    methods = [MethodId.parse(m) if isinstance(m, str) else MethodId(m) for m in methods]
    if MethodId.GBDT_REFINE in methods:
        if ml is None:
            raise ValueError("gbdt_refine requested but no model supplied")
        if ml.n_antennas != geom.n_elements:
            raise ValueError(f"model is for N={ml.n_antennas}, array has N={geom.n_elements}")
    r = sample_covariance(synthesize_snapshots(geom, sc))
    a_g = steering_vector(geom, sc.sat_dir)
    greedy_seed = derive_seed(seed, 1)
    records = {}
    for m in methods:
        extra = {}
        symbols = None
        t0 = time.perf_counter_ns()
        if m is MethodId.CAPON:
            w = capon_weights(r, a_g, p)
        elif m is MethodId.NAIVE:
            symbols = naive_quantize(capon_weights(r, a_g, p))
        elif m is MethodId.ORACLE:
            symbols = oracle_search(r, a_g, p)
        elif m is MethodId.GREEDY:
            symbols = greedy_sample(r, a_g, p, greedy_samples, greedy_seed)
        elif m is MethodId.COORD_DESCENT:
            symbols = coordinate_descent(naive_quantize(capon_weights(r, a_g, p)), r, a_g, p, sweeps)
        else:
            raw, symbols = gbdt_predict_refine(ml, r, a_g, p, refine_sweeps)
        latency = max(1, time.perf_counter_ns() - t0)
        if symbols is not None:
            w = to_complex(symbols)
            obj = objective(symbols, r, a_g, p)
        else:
            obj = p.alpha * abs(np.vdot(w, a_g)) ** 2 - (1 - p.alpha) * quadratic_form(r, w)
            extra["distortionless_error"] = float(abs(np.vdot(w, a_g) - 1.0))
        if m is MethodId.GBDT_REFINE:
            extra["raw_symbols"] = list(raw.symbols)
            extra["raw_objective"] = objective(raw, r, a_g, p)
        if m is MethodId.COORD_DESCENT:
            extra["init_objective"] = objective(naive_quantize(capon_weights(r, a_g, p)), r, a_g, p)
        intf = max(beampattern_gain_db(w, geom, d, grid) for d in sc.jammer_dirs)
        records[m.value] = MethodRecord(
            m.value, beampattern_gain_db(w, geom, sc.sat_dir, grid), intf, float(obj), latency,
            _complex_pairs(w), list(symbols.symbols) if symbols is not None else None, extra)
    return TrialResult(scenario_id, sc.to_dict(), records)


@dataclass
class BenchConfig:
    n: int = 4
    trials: int = 50
    distribution: ScenarioDistribution = field(default_factory=ScenarioDistribution)
    methods: tuple[str, ...] = ("capon", "naive", "oracle", "greedy", "coord_descent")
    greedy_samples: int = DEFAULT_GREEDY_SAMPLES
    sweeps: int = 20
    refine_sweeps: int = 3
    model_path: str | None = None
    master_seed: int = 0
    alpha: float = 0.01
    loading_scale: float = 1e-6
    grid_step: float = 2.0
    out_dir: str | None = None

    def __post_init__(self):
        if isinstance(self.distribution, dict):
            self.distribution = ScenarioDistribution.from_dict(self.distribution)
        self.methods = tuple(MethodId.parse(m).value for m in self.methods)
        if self.trials < 1:
            raise ValueError("trials must be >= 1")

    def to_dict(self) -> dict:
        """Result-determining settings; the output directory is left out."""
        d = asdict(self)
        del d["out_dir"]
        d["distribution"] = self.distribution.to_dict()
        d["methods"] = list(self.methods)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> BenchConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown bench config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json_file(cls, path) -> BenchConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class BenchmarkSummary:
    config: dict
    trial_count: int
    methods: dict  # method -> statistics
    tool_version: str = __version__

    def to_dict(self) -> dict:
        return asdict(self)

    def without_latency(self) -> dict:
        d = self.to_dict()
        for stats in d["methods"].values():
            for key in [k for k in stats if k.startswith("latency")]:
                stats.pop(key)
        return d

    def table(self) -> str:
        lines = [f"{'Method':<16}{'Sat (dB)':>10}{'Intf (dB)':>11}{'Infer. (ms)':>13}"]
        for name, s in self.methods.items():
            lines.append(f"{name:<16}{s['sat_gain_db_mean']:>10.2f}{s['intf_gain_db_mean']:>11.2f}"
                         f"{s['latency_ms_mean']:>13.3f}")
        return "\n".join(lines)


_WORKER: dict = {}


def _init_worker(cfg_dict, model_path):
    from .ml_policy import load_model
    _WORKER["cfg"] = BenchConfig.from_dict(cfg_dict)
    _WORKER["model"] = load_model(model_path) if model_path else None
    _warm_up(_WORKER["cfg"], _WORKER["model"])


def _warm_up(cfg: BenchConfig, model) -> None:
    """Run trial 0 once untimed so JIT loading does not pollute latencies."""
    _run_indexed_trial(cfg, model, 0)


def _trial_job(index: int) -> TrialResult:
    cfg, model = _WORKER["cfg"], _WORKER["model"]
    return _run_indexed_trial(cfg, model, index)


def _run_indexed_trial(cfg: BenchConfig, model, index: int) -> TrialResult:
    trial_seed = derive_seed(cfg.master_seed, index)
    sc = random_scenario(cfg.distribution, trial_seed)
    try:
        return run_trial(uca_geometry(cfg.n), sc, cfg.methods,
                         ObjectiveParams(cfg.alpha, cfg.loading_scale), model, cfg.greedy_samples,
                         trial_seed, cfg.sweeps, cfg.refine_sweeps, GridSpec(cfg.grid_step), index)
    except Exception as exc:
        raise BenchmarkError(f"trial {index} failed ({exc}); scenario: {sc.to_json()}") from exc


def _stats(values: np.ndarray, key: str) -> dict:
    q10, q50, q90 = np.percentile(values, [10, 50, 90])
    return {f"{key}_mean": float(np.mean(values)), f"{key}_p10": float(q10),
            f"{key}_p50": float(q50), f"{key}_p90": float(q90)}


def summarize(cfg: BenchConfig, results: list[TrialResult]) -> BenchmarkSummary:
    methods = {}
    for m in cfg.methods:
        recs = [t.records[m] for t in results]
        stats = {}
        stats.update(_stats(np.array([r.sat_gain_db for r in recs]), "sat_gain_db"))
        stats.update(_stats(np.array([r.intf_gain_db for r in recs]), "intf_gain_db"))
        stats.update(_stats(np.array([r.objective for r in recs]), "objective"))
        stats.update(_stats(np.array([r.latency_ns for r in recs]) / 1e6, "latency_ms"))
        methods[m] = stats
    return BenchmarkSummary(cfg.to_dict(), len(results), methods)


def run_trials(cfg: BenchConfig, threads: int = 1, model=None) -> list[TrialResult]:
    """All trials of ``cfg``; trial i always uses seed derive_seed(master_seed, i)."""
    if MethodId.GBDT_REFINE.value in cfg.methods and model is None and not cfg.model_path:
        raise BenchmarkError("gbdt_refine requested but no model path given")
    if model is None and cfg.model_path and MethodId.GBDT_REFINE.value in cfg.methods:
        from .ml_policy import load_model
        model = load_model(cfg.model_path, cfg.n)
    if threads > 1:
        with ProcessPoolExecutor(threads, initializer=_init_worker,
                                 initargs=(cfg.to_dict(), cfg.model_path)) as ex:
            return list(ex.map(_trial_job, range(cfg.trials)))
    _warm_up(cfg, model)
    return [_run_indexed_trial(cfg, model, i) for i in range(cfg.trials)]


def write_trials_csv(results: list[TrialResult], path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["scenario_id", "method", "sat_gain_db", "intf_gain_db", "objective",
                      "latency_ns", "symbols"])
        for t in results:
            for rec in t.records.values():
                sym = "" if rec.symbols is None else " ".join(str(s) for s in rec.symbols)
                out.writerow([t.scenario_id, rec.method, repr(rec.sat_gain_db),
                              repr(rec.intf_gain_db), repr(rec.objective), rec.latency_ns, sym])


def run_benchmark(cfg: BenchConfig, threads: int = 1, model=None) -> BenchmarkSummary:
    results = run_trials(cfg, threads, model)
    summary = summarize(cfg, results)
    if cfg.out_dir:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
        write_trials_csv(results, out / "trials.csv")
    return summary
