"""Array geometry, scenarios, snapshot synthesis and sample covariance.

Power convention: per-element noise power is 1 and defines the dB
reference.  ``snr_db`` is desired-signal power over noise per element and
``js_db`` is jammer power over desired-signal power, so a jammer's power
relative to noise is ``snr_db + js_db``.

Random draws use numpy's Philox (4x64, counter-based) bit generator keyed
by the 64-bit seed through ``numpy.random.SeedSequence``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .linalg import HermitianMatrix

OMIT_POWER_DB = -300.0
MIN_SEPARATION_DEG = 10.0
MAX_REDRAWS = 100
UINT64_MASK = (1 << 64) - 1


class ScenarioError(ValueError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed) & UINT64_MASK))


def derive_seed(*keys: int) -> int:
    """Hash a tuple of non-negative integers into a 64-bit seed."""
    ss = np.random.SeedSequence([int(k) & UINT64_MASK for k in keys])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class ArrayGeometry:
    positions: np.ndarray  # (N, 3), wavelengths
    kind: str = "uniform-circular"

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 2:
            raise ValueError(f"positions must be (N >= 2, 3), got {pos.shape}")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def n_elements(self) -> int:
        return self.positions.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ArrayGeometry):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.positions, other.positions)

    def __hash__(self):
        return hash((self.kind, self.positions.tobytes()))


def uca_geometry(n_elements: int) -> ArrayGeometry:
    """Uniform circular array with half-wavelength chord between neighbours."""
    if n_elements < 2:
        raise ValueError(f"a circular array needs at least 2 elements, got {n_elements}")
    radius = 0.25 / np.sin(np.pi / n_elements)
    ang = 2.0 * np.pi * np.arange(n_elements) / n_elements
    pos = np.column_stack([radius * np.cos(ang), radius * np.sin(ang), np.zeros(n_elements)])
    return ArrayGeometry(pos, "uniform-circular")


@dataclass(frozen=True)
class Direction:
    azimuth_deg: float
    elevation_deg: float

    def __post_init__(self):
        az, el = float(self.azimuth_deg), float(self.elevation_deg)
        if not (np.isfinite(az) and np.isfinite(el)):
            raise ValueError("direction angles must be finite")
        if not 0.0 <= el <= 90.0:
            raise ValueError(f"elevation must lie in [0, 90] degrees, got {el}")
        az = az % 360.0
        if az >= 360.0:  # -tiny % 360 rounds up to 360
            az = 0.0
        object.__setattr__(self, "azimuth_deg", az)
        object.__setattr__(self, "elevation_deg", el)

    def unit_vector(self) -> np.ndarray:
        az, el = np.deg2rad(self.azimuth_deg), np.deg2rad(self.elevation_deg)
        return np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])


def angular_separation_deg(a: Direction, b: Direction) -> float:
    c = float(np.clip(a.unit_vector() @ b.unit_vector(), -1.0, 1.0))
    return float(np.rad2deg(np.arccos(c)))


def steering_vector(geom: ArrayGeometry, direction: Direction) -> np.ndarray:
    """Entries exp(+j 2 pi <p_i, u>) with positions in wavelengths."""
    return np.exp(2j * np.pi * (geom.positions @ direction.unit_vector()))


def steering_matrix(geom: ArrayGeometry, az_deg: np.ndarray, el_deg: np.ndarray) -> np.ndarray:
    """Steering vectors for many directions at once, shape (len(az), N)."""
    az, el = np.deg2rad(np.asarray(az_deg, float)), np.deg2rad(np.asarray(el_deg, float))
    u = np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)
    return np.exp(2j * np.pi * (u @ geom.positions.T))


@dataclass(frozen=True)
class Scenario:
    sat_dir: Direction
    jammer_dirs: tuple[Direction, ...]
    snr_db: float
    js_db_per_jammer: tuple[float, ...]
    snapshots: int
    seed: int

    def __post_init__(self):
        jd = tuple(self.jammer_dirs)
        js = tuple(float(x) for x in self.js_db_per_jammer)
        if not jd:
            raise ScenarioError("a scenario needs at least one jammer direction")
        if len(jd) != len(js):
            raise ScenarioError(f"{len(jd)} jammer directions but {len(js)} J/S values")
        if int(self.snapshots) < 1:
            raise ScenarioError("snapshot count must be positive")
        object.__setattr__(self, "jammer_dirs", jd)
        object.__setattr__(self, "js_db_per_jammer", js)
        object.__setattr__(self, "snapshots", int(self.snapshots))
        object.__setattr__(self, "seed", int(self.seed) & UINT64_MASK)

    def to_dict(self) -> dict:
        return {
            "sat_dir": asdict(self.sat_dir),
            "jammer_dirs": [asdict(d) for d in self.jammer_dirs],
            "snr_db": self.snr_db,
            "js_db_per_jammer": list(self.js_db_per_jammer),
            "snapshots": self.snapshots,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Scenario:
        return cls(
            sat_dir=Direction(**d["sat_dir"]),
            jammer_dirs=tuple(Direction(**j) for j in d["jammer_dirs"]),
            snr_db=float(d["snr_db"]),
            js_db_per_jammer=tuple(d["js_db_per_jammer"]),
            snapshots=int(d["snapshots"]),
            seed=int(d["seed"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> Scenario:
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ScenarioDistribution:
    sat_az_range: tuple[float, float] = (0.0, 360.0)
    sat_el_range: tuple[float, float] = (15.0, 90.0)
    jammer_az_range: tuple[float, float] = (0.0, 360.0)
    jammer_el_range: tuple[float, float] = (0.0, 30.0)
    js_db_range: tuple[float, float] = (30.0, 70.0)
    snr_db_range: tuple[float, float] = (-40.0, -30.0)
    snapshots: int = 4096
    n_jammers: int = 1
    min_separation_deg: float = MIN_SEPARATION_DEG

    def __post_init__(self):
        for name in ("sat_az_range", "sat_el_range", "jammer_az_range", "jammer_el_range",
                     "js_db_range", "snr_db_range"):
            lo, hi = (float(x) for x in getattr(self, name))
            if hi < lo:
                raise ValueError(f"{name}: upper bound {hi} below lower bound {lo}")
            object.__setattr__(self, name, (lo, hi))
        if self.n_jammers < 1:
            raise ValueError("n_jammers must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> ScenarioDistribution:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario distribution fields: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> ScenarioDistribution:
        return cls.from_dict(json.loads(text))


def _uniform(rng: np.random.Generator, bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    return float(rng.uniform(lo, hi)) if hi > lo else lo


def random_scenario(cfg: ScenarioDistribution, seed: int) -> Scenario:
    """Independent uniform draws for every field of a scenario.

    A jammer whose direction is closer than ``cfg.min_separation_deg`` to the
    satellite has its azimuth redrawn, up to 100 times.
    """
    rng = make_rng(seed)
    sat = Direction(_uniform(rng, cfg.sat_az_range), _uniform(rng, cfg.sat_el_range))
    snr = _uniform(rng, cfg.snr_db_range)
    jammers, js = [], []
    for _ in range(cfg.n_jammers):
        el = _uniform(rng, cfg.jammer_el_range)
        for _attempt in range(MAX_REDRAWS + 1):
            jam = Direction(_uniform(rng, cfg.jammer_az_range), el)
            if angular_separation_deg(sat, jam) >= cfg.min_separation_deg:
                break
        else:
            raise ScenarioError(
                f"could not place a jammer {cfg.min_separation_deg} deg away from the "
                f"satellite at {sat} after {MAX_REDRAWS} redraws"
            )
        jammers.append(jam)
        js.append(_uniform(rng, cfg.js_db_range))
    snap_seed = int(rng.integers(0, 2**64, dtype=np.uint64))
    return Scenario(sat, tuple(jammers), snr, tuple(js), cfg.snapshots, snap_seed)


@dataclass(frozen=True)
class SnapshotBatch:
    samples: np.ndarray  # (K, N) complex

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.complex128)
        if x.ndim != 2:
            raise ValueError("samples must be a (K, N) array")
        if not np.all(np.isfinite(x)):
            raise ValueError("snapshot batch has non-finite samples")
        object.__setattr__(self, "samples", x)

    @property
    def n(self) -> int:
        return self.samples.shape[1]

    @property
    def k(self) -> int:
        return self.samples.shape[0]


def _cgauss(rng: np.random.Generator, power: float, shape) -> np.ndarray:
    z = rng.standard_normal(shape + (2,))
    return np.sqrt(power / 2.0) * (z[..., 0] + 1j * z[..., 1])


def synthesize_snapshots(geom: ArrayGeometry, sc: Scenario) -> SnapshotBatch:
    """x[k] = a_g s[k] + sum_m a_m u_m[k] + n[k].

    s[k] is a +/-1 chip sequence scaled to the SNR, each u_m[k] is circular
    complex Gaussian with power 10^((snr+js)/10), and n[k] is unit-power
    white noise.  Draw order is fixed: chips, jammers, noise.
    """
    n, k = geom.n_elements, sc.snapshots
    if k < n:
        raise ScenarioError(f"need at least N={n} snapshots, scenario has {k}")
    rng = make_rng(sc.seed)
    chips = 2.0 * rng.integers(0, 2, size=k) - 1.0
    x = np.zeros((k, n), dtype=np.complex128)
    if sc.snr_db > OMIT_POWER_DB:
        a_g = steering_vector(geom, sc.sat_dir)
        x += np.outer(np.sqrt(10.0 ** (sc.snr_db / 10.0)) * chips, a_g)
    for jdir, js in zip(sc.jammer_dirs, sc.js_db_per_jammer):
        if js <= OMIT_POWER_DB:
            continue
        u = _cgauss(rng, 10.0 ** ((sc.snr_db + js) / 10.0), (k,))
        x += np.outer(u, steering_vector(geom, jdir))
    x += _cgauss(rng, 1.0, (k, n))
    return SnapshotBatch(x)


def sample_covariance(batch: SnapshotBatch) -> HermitianMatrix:
    """(1/K) sum_k x[k] x[k]^H."""
    x = batch.samples
    if x.shape[0] < 1:
        raise ValueError("need at least one snapshot")
    r = x.T @ x.conj() / x.shape[0]
    return HermitianMatrix(r)
