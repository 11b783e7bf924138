import struct

import numpy as np
import pytest

from channel_mae import chansynth as cs

SMALL = cs.SystemConfig(n_antennas=8, n_subcarriers=16)


def test_system_defaults():
    c = cs.SystemConfig()
    assert (c.n_antennas, c.n_subcarriers, c.max_paths) == (32, 32, 20)
    assert c.subcarrier_spacing == 30e3
    assert (c.carrier_low, c.carrier_high) == (3.5e9, 28e9)


@pytest.mark.parametrize("kw", [dict(max_paths=0), dict(max_paths=21), dict(n_antennas=0),
                                dict(p_los=1.5)])
def test_system_validation(kw):
    with pytest.raises(ValueError):
        cs.SystemConfig(**kw)


class TestSamplePaths:
    def test_deterministic(self):
        a = cs.sample_paths(42, 3, SMALL)
        b = cs.sample_paths(42, 3, SMALL)
        for field in ("gains", "delays", "angles"):
            np.testing.assert_array_equal(getattr(a, field), getattr(b, field))
        assert a.los_index == b.los_index

    def test_no_los(self):
        cfg = cs.SystemConfig(p_los=0.0)
        assert not any(cs.sample_paths(s, 0, cfg).los for s in range(200))

    def test_all_los(self):
        cfg = cs.SystemConfig(p_los=1.0)
        assert all(cs.sample_paths(s, 0, cfg).los for s in range(1000))

    def test_path_invariants(self):
        for s in range(300):
            p = cs.sample_paths(s, s % 5, SMALL)
            assert 1 <= len(p) <= SMALL.max_paths
            assert np.all(p.delays >= 0)
            assert np.all(np.abs(p.angles) < np.pi / 2)
            if p.los:
                assert p.delays[p.los_index] == p.delays.min()
                # LoS carries the largest expected power
                assert abs(p.gains[p.los_index]) ** 2 == pytest.approx(SMALL.rician_k)

    def test_scenarios_differ(self):
        a = np.concatenate([cs.sample_paths(s, 0, SMALL).angles for s in range(400)])
        b = np.concatenate([cs.sample_paths(s, 1, SMALL).angles for s in range(400)])
        assert abs(a.mean() - b.mean()) > 0.05 or abs(a.std() - b.std()) > 0.05


class TestRender:
    def test_single_broadside_path_is_all_ones(self):
        p = cs.PathSet(np.array([1.0 + 0j]), np.array([0.0]), np.array([0.0]))
        h = cs.render_channel(p, SMALL.carrier_low, SMALL)
        np.testing.assert_allclose(h, np.ones((8, 16)), atol=1e-15)

    def test_unit_modulus_steering(self):
        g = 0.7 - 0.2j
        p = cs.PathSet(np.array([g]), np.array([0.0]), np.array([0.4]))
        h = cs.render_channel(p, SMALL.carrier_low, SMALL)
        np.testing.assert_allclose(np.abs(h), abs(g), rtol=1e-12)

    def test_high_band_gain_scaling(self):
        p = cs.PathSet(np.array([1.0 + 0j]), np.array([0.0]), np.array([0.0]))
        h = cs.render_channel(p, SMALL.carrier_high, SMALL)
        np.testing.assert_allclose(np.abs(h), SMALL.carrier_low / SMALL.carrier_high)

    @pytest.mark.parametrize("k", [1, 2, 4])
    def test_two_path_ripple_period(self, k):
        df, nf = SMALL.subcarrier_spacing, SMALL.n_subcarriers
        dtau = k / (nf * df)
        # second path's phase at the carrier is chosen to cancel the first at f=0
        g2 = -np.exp(2j * np.pi * SMALL.carrier_low * dtau)
        p = cs.PathSet(np.array([1.0, g2]), np.array([0.0, dtau]), np.array([0.3, 0.3]))
        mag = np.abs(cs.render_channel(p, SMALL.carrier_low, SMALL)[0])
        # direct evaluation: |1 - exp(-j 2 pi f df dtau)|
        f = np.arange(nf)
        expected = np.abs(1 - np.exp(-2j * np.pi * f * df * dtau))
        np.testing.assert_allclose(mag, expected, atol=1e-9)
        period = nf // k
        np.testing.assert_allclose(mag[:nf - period], mag[period:], atol=1e-9)
        assert mag[0] == pytest.approx(0.0, abs=1e-9)

    def test_energy_sanity(self):
        ds = cs.build_dataset(1000, cs.SystemConfig(), 5)
        e = np.mean(np.abs(ds.h_low) ** 2)
        assert np.isfinite(e) and 1e-6 <= e <= 1e6

    def test_shared_geometry_across_bands(self):
        smp = cs.make_sample(9, 0, SMALL)
        p = cs.sample_paths(9, 0, SMALL)
        np.testing.assert_allclose(smp.h_high, cs.render_channel(p, SMALL.carrier_high, SMALL))
        assert smp.los == p.los


class TestSplits:
    def test_counts(self):
        assert cs.split_counts(10, (0.8, 0.2)) == [8, 2]
        assert cs.split_counts(14840, (0.7, 0.2, 0.1)) == [10388, 2968, 1484]

    def test_partition_is_disjoint_and_complete(self):
        seeds = cs.sample_seeds(101, 1).tolist()
        parts = cs.split_indices(seeds, (0.7, 0.2, 0.1))
        allidx = np.concatenate(parts)
        assert sorted(allidx.tolist()) == list(range(101))

    def test_membership_depends_on_seed_only(self):
        seeds = cs.sample_seeds(50, 2).tolist()
        a = cs.split_indices(seeds, (0.8, 0.2))
        perm = list(reversed(seeds))
        b = cs.split_indices(perm, (0.8, 0.2))
        assert {seeds[i] for i in a[1]} == {perm[i] for i in b[1]}

    def test_bad_ratios(self):
        with pytest.raises(ValueError):
            cs.split_counts(10, (0.5, 0.2))


class TestDatasetFile:
    def test_split_files(self, tmp_path):
        out = cs.generate_dataset(10, (0.8, 0.2), SMALL, 3, tmp_path / "d.wchd")
        assert len(cs.read_dataset(out["train"])) == 8
        assert len(cs.read_dataset(out["val"])) == 2

    def test_byte_identical_regeneration(self, tmp_path):
        a = cs.generate_dataset(20, (1.0,), SMALL, 4, tmp_path / "a.wchd")["all"]
        b = cs.generate_dataset(20, (1.0,), SMALL, 4, tmp_path / "b.wchd")["all"]
        assert a.read_bytes() == b.read_bytes()

    def test_header_layout(self, tmp_path):
        path = cs.generate_dataset(3, (1.0,), SMALL, 0, tmp_path / "h.wchd")["all"]
        raw = path.read_bytes()
        magic, version, count, ns, nf = struct.unpack_from("<4sIIII", raw)
        (std,) = struct.unpack_from("<d", raw, 20)
        assert (magic, version, count, ns, nf) == (b"WCHD", 1, 3, 8, 16)
        assert std > 0
        assert len(raw) == 28 + 3 * (8 + 4 + 1 + 2 * 8 * 16 * 8)

    def test_roundtrip_values(self, tmp_path):
        ds = cs.build_dataset(5, SMALL, 6, scenario_ids=(2, 7))
        ds.normalization_std = 1.25
        cs.write_dataset(ds, tmp_path / "r.wchd")
        back = cs.read_dataset(tmp_path / "r.wchd")
        np.testing.assert_array_equal(back.h_low, ds.h_low)
        np.testing.assert_array_equal(back.h_high, ds.h_high)
        np.testing.assert_array_equal(back.los, ds.los)
        np.testing.assert_array_equal(back.seeds, ds.seeds)
        assert back.scenario_ids.tolist() == [2, 7, 2, 7, 2]
        assert back.normalization_std == 1.25

    def test_normalization_std_from_training_split(self, tmp_path):
        out = cs.generate_dataset(40, (0.8, 0.2), SMALL, 8, tmp_path / "n.wchd")
        tr = cs.read_dataset(out["train"])
        va = cs.read_dataset(out["val"])
        assert tr.normalization_std == pytest.approx(cs.normalization_std(tr.h_low), rel=1e-12)
        assert va.normalization_std == tr.normalization_std

    def test_truncated_file_rejected(self, tmp_path):
        path = cs.generate_dataset(3, (1.0,), SMALL, 0, tmp_path / "t.wchd")["all"]
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(ValueError, match="size mismatch"):
            cs.read_dataset(path)

    def test_unwritable_path_reports_path(self, tmp_path):
        ds = cs.build_dataset(1, SMALL, 0)
        target = tmp_path / "missing" / "x.wchd"
        with pytest.raises(OSError, match="missing"):
            cs.write_dataset(ds, target)

    def test_full_downstream_count(self, tmp_path):
        cfg = cs.SystemConfig(n_antennas=1, n_subcarriers=1, max_paths=2)
        path = cs.generate_dataset(14840, (1.0,), cfg, 0, tmp_path / "big.wchd")["all"]
        assert len(cs.read_dataset(path)) == 14840
