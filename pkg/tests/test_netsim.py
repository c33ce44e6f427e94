import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import spearmanr

from safe_ret import netsim
from safe_ret.netsim import (
    ConfigError,
    NetworkConfig,
    apply_tilt_change,
    build_network,
    compute_kpis,
    hex_site_positions,
    horizontal_gain_db,
    kpi_array,
    load_config,
    make_state,
    pathloss_db,
    rsrp_dbm,
    vertical_gain_db,
)

CFG = NetworkConfig()


@pytest.fixture(scope="module")
def state():
    return build_network(CFG, 1)


def test_defaults_match_simulator_table():
    assert (CFG.num_bs, CFG.num_cells, CFG.num_ues) == (7, 21, 2000)
    assert CFG.carrier_freq_ghz == 2.0
    assert (CFG.traffic_mean_mbps, CFG.traffic_var_mbps2) == (20.0, 4.0)
    assert CFG.antenna_height_m == 32.0
    assert (CFG.tilt_min_deg, CFG.tilt_max_deg, CFG.tilt_step_deg) == (1.0, 16.0, 1.0)
    assert CFG.tilt_grid.tolist() == list(range(1, 17))


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(num_cells=20),
        dict(tilt_min_deg=16.0, tilt_max_deg=1.0),
        dict(tilt_step_deg=0.0),
        dict(num_bs=0, num_cells=0),
        dict(num_ues=0),
    ],
)
def test_invalid_config(kwargs):
    with pytest.raises(ConfigError):
        NetworkConfig(**kwargs)


def test_load_config(tmp_path):
    p = tmp_path / "net.toml"
    p.write_text("rng_seed = 3\n[network]\ninter_site_distance_m = 750.0\nnum_bs = 1\n")
    cfg = load_config(p)
    assert cfg.inter_site_distance_m == 750.0 and cfg.rng_seed == 3
    assert (cfg.num_bs, cfg.num_cells) == (1, 3)
    p.write_text("bogus_key = 1\n")
    with pytest.raises(ConfigError, match="bogus_key"):
        load_config(p)


def test_digest_ignores_seed_only():
    assert CFG.digest() == CFG.replace(rng_seed=99).digest()
    assert CFG.digest() != CFG.replace(inter_site_distance_m=501.0).digest()


def test_build_network_shapes(state):
    assert state.tilts_deg.shape == (21,)
    assert state.ue_positions.shape == (2000, 2)
    assert state.shadow_db.shape == (2000, 21)
    assert set(state.tilts_deg) <= set(CFG.tilt_grid)
    assert np.all(state.ue_demand_mbps >= 0)
    assert abs(state.ue_demand_mbps.mean() - 20.0) < 0.3


def test_build_network_deterministic(state):
    again = build_network(CFG, 1)
    assert again == state
    assert build_network(CFG, 2) != state


def test_single_site_network():
    cfg = NetworkConfig.for_sites(1)
    s = build_network(cfg, 0)
    assert s.tilts_deg.shape == (3,)
    assert kpi_array(s, cfg).shape == (3, 3)


def test_ues_inside_site_hexagons(state):
    sites = hex_site_positions(7, CFG.inter_site_distance_m)
    d = np.linalg.norm(state.ue_positions[:, None] - sites[None], axis=-1).min(axis=1)
    assert d.max() <= CFG.inter_site_distance_m / math.sqrt(3) + 1e-9
    # uniform over the union: each site hexagon gets ~1/7 of the UEs
    owner = np.linalg.norm(state.ue_positions[:, None] - sites[None], axis=-1).argmin(axis=1)
    counts = np.bincount(owner, minlength=7)
    expected = 2000 / 7
    assert np.all(np.abs(counts - expected) < 5 * math.sqrt(expected))


def test_hex_layout_spacing():
    sites = hex_site_positions(7, 500.0)
    assert np.allclose(sites[0], 0.0)
    assert np.allclose(np.linalg.norm(sites[1:], axis=1), 500.0)


def test_pathloss_doubling():
    assert pathloss_db(400.0) - pathloss_db(200.0) == pytest.approx(37.6 * math.log10(2), abs=1e-12)
    assert pathloss_db(400.0) - pathloss_db(200.0) == pytest.approx(11.3, abs=0.05)
    assert pathloss_db(1000.0) == pytest.approx(128.1)


def test_vertical_pattern():
    assert vertical_gain_db(8.0, 8.0) == 0.0
    # the parabola is 3 dB down at half the beamwidth and 12 dB down at the full beamwidth
    assert vertical_gain_db(13.0, 8.0) == pytest.approx(-3.0)
    assert vertical_gain_db(18.0, 8.0) == pytest.approx(-12.0)
    assert vertical_gain_db(88.0, 8.0) == -20.0


def test_horizontal_pattern():
    assert horizontal_gain_db(0.0) == 0.0
    assert horizontal_gain_db(65.0) == pytest.approx(-12.0)
    assert horizontal_gain_db(180.0) == -30.0


def _boresight_state(cfg, tilt):
    """One UE on the boresight of cell 0 at the ground distance where elevation equals ``tilt``."""
    dh = cfg.antenna_height_m - netsim.UE_HEIGHT_M
    ground = dh / math.tan(math.radians(tilt))
    pos = np.array([[ground, 0.0]])
    return make_state(cfg, pos, [20.0], np.zeros((1, cfg.num_cells)), np.full(cfg.num_cells, tilt)), ground, dh


def test_rsrp_on_boresight():
    cfg = NetworkConfig.for_sites(1)
    s, ground, dh = _boresight_state(cfg, 8.0)
    expected = cfg.tx_power_dbm - pathloss_db(math.hypot(ground, dh))
    assert rsrp_dbm(s, cfg, 0, 0) == pytest.approx(float(expected), abs=1e-9)
    with pytest.raises(IndexError):
        rsrp_dbm(s, cfg, 0, 3)


def test_kpis_cover_all_above_threshold():
    cfg = NetworkConfig.for_sites(1)
    s, _, _ = _boresight_state(cfg, 8.0)
    k = compute_kpis(s, cfg)
    assert k[0].cov == 1.0
    # cells 1 and 2 serve nobody: vacuous convention
    assert k[1].as_tuple() == (1.0, 1.0, 1.0)
    assert k[2].as_tuple() == (1.0, 1.0, 1.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.lists(st.integers(1, 16), min_size=21, max_size=21))
def test_kpi_bounds(seed, tilts):
    s = build_network(CFG.replace(num_ues=300), seed % 50)
    k = kpi_array(s, CFG.replace(num_ues=300), np.array(tilts, float))
    assert np.all((k >= 0.0) & (k <= 1.0))


def test_batched_kpis_match_single(state):
    rng = np.random.default_rng(0)
    batch = rng.integers(1, 17, size=(4, 21)).astype(float)
    out = kpi_array(state, CFG, batch)
    for b in range(4):
        assert np.array_equal(out[b], kpi_array(state.with_tilts(batch[b]), CFG))


def test_kpis_deterministic(state):
    assert np.array_equal(kpi_array(state, CFG), kpi_array(build_network(CFG, 1), CFG))


def test_single_site_downtilt_reduces_coverage():
    for seed in range(3):
        cfg = NetworkConfig.for_sites(1)
        s = build_network(cfg, seed)
        cov8 = kpi_array(s, cfg, np.full(3, 8.0))[:, 0]
        cov16 = kpi_array(s, cfg, np.full(3, 16.0))[:, 0]
        assert np.all(cov16 <= cov8)


def _uniform_tilt_trend(cfg, seed):
    s = build_network(cfg, seed)
    tilts = np.repeat(cfg.tilt_grid[:, None], cfg.num_cells, axis=1)
    k = kpi_array(s, cfg, tilts).mean(axis=1)
    x = np.arange(len(tilts))
    return spearmanr(x, k[:, 0])[0], spearmanr(x, k[:, 2])[0]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_tilt_tradeoff_trend_multi_site(seed):
    rho_cov, rho_qual = _uniform_tilt_trend(CFG, seed)
    assert rho_cov < 0
    assert rho_qual > 0


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_coverage_trend_wide_single_site(seed):
    # a lone site is noise limited, so only coverage carries the trade-off there
    cfg = NetworkConfig.for_sites(1, num_ues=600, inter_site_distance_m=1500.0)
    rho_cov, _ = _uniform_tilt_trend(cfg, seed)
    assert rho_cov < 0


def test_apply_tilt_change():
    s = build_network(CFG, 0).with_tilts(np.full(21, 8.0))
    assert apply_tilt_change(s, CFG, 0, 1.0).tilts_deg[0] == 9.0
    low = s.with_tilts(np.full(21, 1.0))
    assert apply_tilt_change(low, CFG, 3, -1.0).tilts_deg[3] == 1.0
    high = s.with_tilts(np.full(21, 16.0))
    assert apply_tilt_change(high, CFG, 3, 1.0).tilts_deg[3] == 16.0
    moved = apply_tilt_change(s, CFG, 5, 1.0)
    assert np.array_equal(np.delete(moved.tilts_deg, 5), np.delete(s.tilts_deg, 5))
    with pytest.raises(IndexError):
        apply_tilt_change(s, CFG, 21, 1.0)


def test_locality_far_cells_unaffected():
    # 37 sites so that some lie beyond two inter-site distances; the spacing makes
    # inter-site interference negligible against thermal noise
    cfg = NetworkConfig.for_sites(37, inter_site_distance_m=5.0e6, num_ues=37 * 30, shadow_sigma_db=0.0)
    sites = hex_site_positions(37, cfg.inter_site_distance_m)
    rng = np.random.default_rng(4)
    pos = np.repeat(sites, 30, axis=0) + rng.uniform(-300, 300, size=(37 * 30, 2))
    demand = np.full(len(pos), 20.0)
    s = make_state(cfg, pos, demand, np.zeros((len(pos), cfg.num_cells)), np.full(cfg.num_cells, 8.0))
    before = kpi_array(s, cfg)
    after = kpi_array(apply_tilt_change(s, cfg, 0, 1.0), cfg)
    cell_site = np.repeat(np.arange(37), 3)
    far = np.linalg.norm(sites[cell_site] - sites[0], axis=1) > 2 * cfg.inter_site_distance_m
    assert far.sum() > 0
    assert np.abs(after[far] - before[far]).max() < 1e-9
    # the moved cell's own site does change
    assert np.abs(after[:3] - before[:3]).max() > 1e-6
