"""Sectorized cellular network simulator.

Sites sit on a hexagonal grid, three sectors per site at azimuths 0/120/240
degrees.  UEs are dropped uniformly over the union of the site hexagons.
Pathloss, antenna patterns and shadowing follow the usual 3GPP-style closed
forms; per-cell coverage, capacity and quality KPIs are derived from the
RSRP/SINR of the UEs each cell serves.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

SECTOR_AZIMUTHS_DEG = (0.0, 120.0, 240.0)
UE_HEIGHT_M = 1.5
MIN_DISTANCE_M = 35.0
VERTICAL_BEAMWIDTH_DEG = 10.0
VERTICAL_SLA_DB = 20.0
HORIZONTAL_BEAMWIDTH_DEG = 65.0
HORIZONTAL_FBR_DB = 30.0
QUAL_SINR_RANGE_DB = (-5.0, 25.0)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    num_bs: int = 7
    num_cells: int = 21
    num_ues: int = 2000
    carrier_freq_ghz: float = 2.0
    traffic_mean_mbps: float = 20.0
    traffic_var_mbps2: float = 4.0
    antenna_height_m: float = 32.0
    tilt_min_deg: float = 1.0
    tilt_max_deg: float = 16.0
    tilt_step_deg: float = 1.0
    inter_site_distance_m: float = 500.0
    # reference-signal EIRP per resource element at boresight
    tx_power_dbm: float = 32.0
    rsrp_cov_threshold_dbm: float = -85.0
    shadow_sigma_db: float = 8.0
    noise_dbm: float = -123.0
    bandwidth_mhz: float = 10.0
    # fraction of a UE's nominal demand offered at any instant
    ue_activity: float = 0.015
    rng_seed: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.num_bs < 1 or self.num_ues < 1:
            raise ConfigError("num_bs and num_ues must be positive")
        if self.num_cells != 3 * self.num_bs:
            raise ConfigError(
                f"num_cells must equal 3 * num_bs ({3 * self.num_bs}), got {self.num_cells}"
            )
        if not self.tilt_min_deg < self.tilt_max_deg:
            raise ConfigError("tilt_min_deg must be below tilt_max_deg")
        if self.tilt_step_deg <= 0:
            raise ConfigError("tilt_step_deg must be positive")
        if self.inter_site_distance_m <= 0 or self.antenna_height_m <= UE_HEIGHT_M:
            raise ConfigError("invalid geometry")
        if self.traffic_var_mbps2 < 0 or self.shadow_sigma_db < 0:
            raise ConfigError("variances must be non-negative")

    @classmethod
    def for_sites(cls, num_bs: int, **overrides) -> "NetworkConfig":
        return cls(num_bs=num_bs, num_cells=3 * num_bs, **overrides)

    def replace(self, **changes) -> "NetworkConfig":
        if "num_bs" in changes and "num_cells" not in changes:
            changes["num_cells"] = 3 * changes["num_bs"]
        return dataclasses.replace(self, **changes)

    @property
    def tilt_grid(self) -> np.ndarray:
        n = int(round((self.tilt_max_deg - self.tilt_min_deg) / self.tilt_step_deg))
        return self.tilt_min_deg + self.tilt_step_deg * np.arange(n + 1)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Short content hash, excluding the seed."""
        payload = {k: v for k, v in self.to_dict().items() if k != "rng_seed"}
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def read_toml(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def load_config(path: str | Path | None = None, **overrides) -> NetworkConfig:
    """Network keys come from the top level of the file or a ``[network]`` table."""
    values: dict = {}
    if path is not None:
        data = read_toml(path)
        values.update({k: v for k, v in data.items() if not isinstance(v, dict)})
        values.update(data.get("network", {}))
    values.update(overrides)
    known = {f.name for f in dataclasses.fields(NetworkConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "num_bs" in values and "num_cells" not in values:
        values["num_cells"] = 3 * int(values["num_bs"])
    return NetworkConfig(**values)


@dataclass(frozen=True, eq=False)
class NetworkState:
    """Tilts plus frozen UE drop; geometry arrays are derived caches."""

    tilts_deg: np.ndarray  # (C,)
    ue_positions: np.ndarray  # (U, 2)
    ue_demand_mbps: np.ndarray  # (U,)
    shadow_db: np.ndarray  # (U, C)
    site_positions: np.ndarray  # (B, 2)
    # derived, (U, C)
    elevation_deg: np.ndarray = field(repr=False)
    static_gain_db: np.ndarray = field(repr=False)  # horizontal gain - pathloss - shadow

    def with_tilts(self, tilts_deg) -> "NetworkState":
        return dataclasses.replace(self, tilts_deg=np.asarray(tilts_deg, dtype=float).copy())

    def __eq__(self, other) -> bool:
        if not isinstance(other, NetworkState):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f.name), getattr(other, f.name))
            for f in dataclasses.fields(self)
        )


def hex_site_positions(num_bs: int, isd: float) -> np.ndarray:
    """Center site first, then rings of the hexagonal lattice outwards."""
    axial = [(0, 0)]
    directions = [(1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1)]
    ring = 1
    while len(axial) < num_bs:
        q, r = -ring, ring  # start corner
        for dq, dr in directions:
            for _ in range(ring):
                axial.append((q, r))
                q, r = q + dq, r + dr
        ring += 1
    axial = np.array(axial[:num_bs], dtype=float)
    # axial -> cartesian for a lattice with nearest-neighbour spacing isd
    x = isd * (axial[:, 0] + axial[:, 1] / 2.0)
    y = isd * (math.sqrt(3) / 2.0) * axial[:, 1]
    return np.column_stack([x, y])


def _sample_in_hexagon(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    # hexagon with vertices at radius, flat sides facing the lattice neighbours
    out = np.empty((0, 2))
    apothem = radius * math.sqrt(3) / 2.0
    while len(out) < n:
        pts = rng.uniform(-radius, radius, size=(2 * (n - len(out)) + 8, 2))
        ax, ay = np.abs(pts[:, 0]), np.abs(pts[:, 1])
        inside = (ay <= apothem) & (math.sqrt(3) * ax + ay <= math.sqrt(3) * radius)
        # rotate 30 deg so flat sides face neighbours on the lattice above
        out = np.vstack([out, pts[inside]])
    out = out[:n]
    c, s = math.cos(math.pi / 6), math.sin(math.pi / 6)
    return out @ np.array([[c, s], [-s, c]])


def pathloss_db(distance_m) -> np.ndarray:
    """Urban macro log-distance pathloss at 2 GHz."""
    d_km = np.maximum(np.asarray(distance_m, dtype=float), MIN_DISTANCE_M) / 1000.0
    return 128.1 + 37.6 * np.log10(d_km)


def vertical_gain_db(elevation_deg, tilt_deg) -> np.ndarray:
    off = (np.asarray(elevation_deg) - tilt_deg) / VERTICAL_BEAMWIDTH_DEG
    return -np.minimum(12.0 * off**2, VERTICAL_SLA_DB)


def horizontal_gain_db(offset_deg) -> np.ndarray:
    off = np.asarray(offset_deg) / HORIZONTAL_BEAMWIDTH_DEG
    return -np.minimum(12.0 * off**2, HORIZONTAL_FBR_DB)


def make_state(config: NetworkConfig, ue_positions, ue_demand_mbps, shadow_db, tilts_deg) -> NetworkState:
    """Assemble a state from explicit UE data, computing the geometry caches."""
    ue_positions = np.asarray(ue_positions, dtype=float)
    sites = hex_site_positions(config.num_bs, config.inter_site_distance_m)
    cell_site = np.repeat(np.arange(config.num_bs), 3)
    cell_az = np.tile(SECTOR_AZIMUTHS_DEG, config.num_bs)

    delta = ue_positions[:, None, :] - sites[cell_site][None, :, :]
    ground = np.hypot(delta[..., 0], delta[..., 1])
    dh = config.antenna_height_m - UE_HEIGHT_M
    elevation = np.degrees(np.arctan2(dh, np.maximum(ground, 1e-9)))
    bearing = np.degrees(np.arctan2(delta[..., 1], delta[..., 0]))
    offset = (bearing - cell_az[None, :] + 180.0) % 360.0 - 180.0
    dist3d = np.hypot(ground, dh)
    shadow_db = np.asarray(shadow_db, dtype=float)
    static = horizontal_gain_db(offset) - pathloss_db(dist3d) - shadow_db

    tilts = np.asarray(tilts_deg, dtype=float).copy()
    if tilts.shape != (config.num_cells,):
        raise ConfigError(f"expected {config.num_cells} tilts, got shape {tilts.shape}")
    return NetworkState(
        tilts_deg=tilts,
        ue_positions=ue_positions,
        ue_demand_mbps=np.asarray(ue_demand_mbps, dtype=float),
        shadow_db=shadow_db,
        site_positions=sites,
        elevation_deg=elevation,
        static_gain_db=static,
    )


def random_tilts(config: NetworkConfig, rng: np.random.Generator) -> np.ndarray:
    grid = config.tilt_grid
    return grid[rng.integers(0, len(grid), size=config.num_cells)]


def build_network(config: NetworkConfig, seed: int | None = None) -> NetworkState:
    """Drop UEs, demand and shadowing for ``seed`` (defaults to ``config.rng_seed``)."""
    config.validate()
    rng = np.random.default_rng(config.rng_seed if seed is None else seed)
    sites = hex_site_positions(config.num_bs, config.inter_site_distance_m)
    radius = config.inter_site_distance_m / math.sqrt(3)
    owner = rng.integers(0, config.num_bs, size=config.num_ues)
    pos = sites[owner] + _sample_in_hexagon(rng, config.num_ues, radius)
    demand = np.maximum(
        rng.normal(config.traffic_mean_mbps, math.sqrt(config.traffic_var_mbps2), config.num_ues), 0.0
    )
    shadow = rng.normal(0.0, config.shadow_sigma_db, size=(config.num_ues, config.num_cells))
    tilts = random_tilts(config, rng)
    return make_state(config, pos, demand, shadow, tilts)


def rsrp_matrix(state: NetworkState, tilts_deg=None) -> np.ndarray:
    """RSRP (dBm, without tx power) for every (UE, cell); tilts may be batched (..., C)."""
    tilts = state.tilts_deg if tilts_deg is None else np.asarray(tilts_deg, dtype=float)
    return state.static_gain_db + vertical_gain_db(state.elevation_deg, tilts[..., None, :])


def rsrp_dbm(state: NetworkState, config: NetworkConfig, ue: int, cell: int) -> float:
    if not (0 <= ue < len(state.ue_positions) and 0 <= cell < config.num_cells):
        raise IndexError(f"ue {ue} / cell {cell} out of range")
    gain = state.static_gain_db[ue, cell] + vertical_gain_db(
        state.elevation_deg[ue, cell], state.tilts_deg[cell]
    )
    return float(config.tx_power_dbm + gain)


@dataclass(frozen=True)
class CellKpis:
    cov: float
    cap: float
    qual: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.cov, self.cap, self.qual)


def kpi_array(state: NetworkState, config: NetworkConfig, tilts_deg=None) -> np.ndarray:
    """KPIs as an array of shape (..., C, 3) with columns cov, cap, qual.

    A leading batch dimension on ``tilts_deg`` evaluates several tilt
    vectors against the same UE drop in one call.
    """
    rsrp = config.tx_power_dbm + rsrp_matrix(state, tilts_deg)  # (..., U, C)
    batch = rsrp.shape[:-2]
    n_ue, n_cell = rsrp.shape[-2:]
    rsrp = rsrp.reshape(-1, n_ue, n_cell)

    serving = np.argmax(rsrp, axis=-1)  # (b, U)
    best = np.take_along_axis(rsrp, serving[..., None], axis=-1)[..., 0]
    lin = 10.0 ** (rsrp / 10.0)
    total = lin.sum(axis=-1) + 10.0 ** (config.noise_dbm / 10.0)
    signal = 10.0 ** (best / 10.0)
    sinr_lin = signal / (total - signal)
    sinr_db = 10.0 * np.log10(sinr_lin)

    covered = (best >= config.rsrp_cov_threshold_dbm).astype(float)
    se = np.log2(1.0 + sinr_lin)
    demand = config.ue_activity * state.ue_demand_mbps

    out = np.empty((len(rsrp), n_cell, 3))
    lo, hi = QUAL_SINR_RANGE_DB
    for b in range(len(rsrp)):
        idx = serving[b]
        count = np.bincount(idx, minlength=n_cell).astype(float)
        nz = count > 0
        safe = np.where(nz, count, 1.0)
        cov = np.bincount(idx, weights=covered[b], minlength=n_cell) / safe
        mean_sinr = np.bincount(idx, weights=sinr_db[b], minlength=n_cell) / safe
        qual = np.clip((mean_sinr - lo) / (hi - lo), 0.0, 1.0)
        # equal resource share: every attached UE gets bandwidth / count
        rate = config.bandwidth_mhz * np.bincount(idx, weights=se[b], minlength=n_cell) / safe
        dem = np.bincount(idx, weights=demand, minlength=n_cell)
        cap = np.where(dem > 0, np.minimum(1.0, rate / np.where(dem > 0, dem, 1.0)), 1.0)
        out[b, :, 0] = np.where(nz, cov, 1.0)
        out[b, :, 1] = np.where(nz, cap, 1.0)
        out[b, :, 2] = np.where(nz, qual, 1.0)
    return out.reshape(*batch, n_cell, 3)


def compute_kpis(state: NetworkState, config: NetworkConfig) -> list[CellKpis]:
    arr = kpi_array(state, config)
    return [CellKpis(*map(float, row)) for row in arr]


def apply_tilt_change(
    state: NetworkState, config: NetworkConfig, cell: int, delta_deg: float
) -> NetworkState:
    if not 0 <= cell < len(state.tilts_deg):
        raise IndexError(f"unknown cell {cell}")
    tilts = state.tilts_deg.copy()
    tilts[cell] = min(max(tilts[cell] + delta_deg, config.tilt_min_deg), config.tilt_max_deg)
    return state.with_tilts(tilts)
