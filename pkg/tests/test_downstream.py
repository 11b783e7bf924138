import numpy as np
import pytest

from channel_mae import chansynth as cs
from channel_mae import downstream as D
from channel_mae import model as M
from channel_mae import patchpipe as pp


def exhaustive_label(h, n_antennas, size):
    """Independent brute force: build each beam, score it, keep the first maximum."""
    best, best_score = 0, -1.0
    for b in range(size):
        sin_t = -1.0 + (2 * b + 1) / size
        f = [np.exp(1j * np.pi * s * sin_t) / np.sqrt(n_antennas) for s in range(n_antennas)]
        score = 0.0
        for col in range(h.shape[1]):
            y = sum(np.conj(f[s]) * h[s, col] for s in range(n_antennas))
            score += abs(y) ** 2
        if score > best_score:
            best, best_score = b, score
    return best


class TestCodebook:
    @pytest.mark.parametrize("size", D.CODEBOOK_SIZES)
    def test_unit_norm_and_distinct(self, size):
        cb = D.dft_codebook(32, size)
        np.testing.assert_allclose(np.linalg.norm(cb.beams, axis=1), 1.0, atol=1e-12)
        assert len(np.unique(np.round(cb.sin_angles, 12))) == size

    def test_degenerate_single_antenna(self):
        cb = D.dft_codebook(1, 2)
        np.testing.assert_allclose(cb.beams, [[1.0], [1.0]])

    def test_square_gram_diagonal_dominant(self):
        cb = D.dft_codebook(16, 16)
        G = np.abs(cb.beams @ cb.beams.conj().T)
        off = G - np.diag(np.diag(G))
        assert np.all(np.diag(G) > off.sum(axis=1))
        # with CS = N_s the grid is the orthogonal DFT basis
        np.testing.assert_allclose(off, 0.0, atol=1e-12)

    def test_oversampled_gram_diagonal_dominant(self):
        cb = D.dft_codebook(16, 64)
        G = np.abs(cb.beams @ cb.beams.conj().T)
        off = G - np.diag(np.diag(G))
        assert np.all(np.diag(G) > off.max(axis=1))

    def test_rejects_tiny(self):
        with pytest.raises(ValueError):
            D.dft_codebook(4, 1)


class TestBeamLabel:
    def test_on_grid_path(self):
        sys_cfg = cs.SystemConfig(n_antennas=16, n_subcarriers=4)
        cb = D.dft_codebook(16, 32)
        for b in (0, 7, 31):
            p = cs.PathSet(np.array([1.0 + 0j]), np.array([0.0]), np.array([np.arcsin(cb.sin_angles[b])]))
            h = cs.render_channel(p, sys_cfg.carrier_high, sys_cfg)
            assert D.beam_label(h, cb) == b

    def test_scale_invariant(self):
        rng = np.random.default_rng(0)
        h = rng.standard_normal((8, 4)) + 1j * rng.standard_normal((8, 4))
        cb = D.dft_codebook(8, 64)
        assert D.beam_label(h, cb) == D.beam_label(3.7 * h, cb)

    def test_batched_matches_single(self):
        rng = np.random.default_rng(1)
        h = rng.standard_normal((20, 8, 4)) + 1j * rng.standard_normal((20, 8, 4))
        cb = D.dft_codebook(8, 16)
        labels = D.beam_label(h, cb)
        assert labels.tolist() == [D.beam_label(x, cb) for x in h]

    def test_random_vs_exhaustive(self):
        rng = np.random.default_rng(2)
        for size in (16, 32):
            for _ in range(25):
                h = rng.standard_normal((8, 3)) + 1j * rng.standard_normal((8, 3))
                assert D.beam_label(h, D.dft_codebook(8, size)) == exhaustive_label(h, 8, size)

    def test_antenna_mismatch(self):
        with pytest.raises(ValueError):
            D.beam_label(np.ones((4, 2)), D.dft_codebook(8, 16))


class TestFeatures:
    cfg = M.ModelConfig(d_e=8, L_enc=1, L_dec=1, M_enc=2, M_dec=2, patch=pp.PatchConfig(4, 8, 1, 4))

    @pytest.fixture
    def setup(self):
        ds = cs.build_dataset(6, cs.SystemConfig(n_antennas=4, n_subcarriers=8), 3)
        ds.normalization_std = cs.normalization_std(ds.h_low)
        ck = M.Checkpoint(self.cfg, M.init_params(self.cfg, np.random.default_rng(0)), ds.normalization_std)
        return ds, ck

    def test_widths(self, setup):
        ds, ck = setup
        assert D.extract_features(ck, ds, "los").shape == (6, 8)
        assert D.extract_features(ck, ds, "beam").shape == (6, 2 * self.cfg.K * 8)
        assert D.extract_features(None, ds, "raw").shape == (6, 2 * 4 * 8)

    def test_identical_channels_identical_features(self, setup):
        ds, ck = setup
        twin = ds.subset(np.array([2, 2, 4]))
        f = D.extract_features(ck, twin, "beam")
        np.testing.assert_array_equal(f[0], f[1])

    def test_batching_does_not_change_features(self, setup):
        ds, ck = setup
        a = D.encode(ck, ds.h_low, batch_size=256)
        b = D.encode(ck, ds.h_low, batch_size=2)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)

    def test_unknown_task(self, setup):
        ds, ck = setup
        with pytest.raises(ValueError):
            D.extract_features(ck, ds, "pool")
        with pytest.raises(ValueError):
            D.extract_features(None, ds, "beam")


class TestProbe:
    def test_separable(self):
        rng = np.random.default_rng(3)
        x = np.r_[rng.normal(-2, 0.3, (50, 2)), rng.normal(2, 0.3, (50, 2))]
        y = np.r_[np.zeros(50), np.ones(50)].astype(int)
        probe = D.linear_probe(x, y, 2, cfg=D.LOS_PROBE)
        assert np.mean(probe.predict(x) == y) == 1.0

    def test_chance_level(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((3000, 8))
        y = rng.integers(0, 4, 3000)
        probe = D.linear_probe(x[:2000], y[:2000], 4, x[2000:2500], y[2000:2500],
                               D.ProbeConfig(lr=0.01, batch_size=256))
        acc = np.mean(probe.predict(x[2500:]) == y[2500:])
        assert abs(acc - 0.25) <= 0.05

    def test_duplicate_invariance_full_batch(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((40, 3))
        y = (x @ [1.0, -1.0, 0.5] + 0.3 * rng.standard_normal(40) > 0).astype(int)
        cfg = D.ProbeConfig(lr=0.05, batch_size=1000, max_epochs=200, patience=1000)
        a = D.linear_probe(x, y, 2, cfg=cfg)
        b = D.linear_probe(np.r_[x, x], np.r_[y, y], 2, cfg=cfg)
        grid = rng.standard_normal((100, 3))
        np.testing.assert_allclose(a.scores(grid), b.scores(grid), atol=1e-8)

    def test_early_stopping_restores_best(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((60, 20))
        y = rng.integers(0, 3, 60)
        xv, yv = rng.standard_normal((30, 20)), rng.integers(0, 3, 30)
        probe = D.linear_probe(x, y, 3, xv, yv, D.ProbeConfig(lr=0.05, batch_size=16, patience=5))
        assert probe.epochs < 1000
        best = int(np.argmin(probe.history))
        assert probe.epochs == best + 1 + 5

    def test_empty_training_set(self):
        with pytest.raises(ValueError):
            D.linear_probe(np.zeros((0, 3)), np.zeros(0), 2)

    def test_defaults(self):
        assert (D.BEAM_PROBE.lr, D.BEAM_PROBE.batch_size, D.BEAM_PROBE.gamma) == (1e-4, 512, 0.995)
        assert (D.LOS_PROBE.lr, D.LOS_PROBE.batch_size, D.LOS_PROBE.gamma) == (0.01, 256, 0.995)
        assert D.BEAM_PROBE.patience == 20


class TestBudgets:
    def test_nested(self):
        subsets = [set(D.budget_subset(1000, b, 7).tolist()) for b in D.BUDGETS]
        for small, large in zip(subsets, subsets[1:]):
            assert small <= large
        assert len(subsets[-1]) == 1000 and len(subsets[0]) == 10

    def test_never_empty(self):
        assert len(D.budget_subset(20, 0.01, 0)) == 1

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            D.budget_subset(10, 0.0, 0)


class TestMetrics:
    def test_perfect(self):
        labels = np.array([0, 2, 1])
        scores = np.eye(3)[labels]
        assert D.topk_accuracy(scores, labels, 1) == D.topk_accuracy(scores, labels, 3) == 1.0
        m = D.binary_metrics(np.array([0.9, 0.1, 0.8]), np.array([1, 0, 1]))
        assert m == {"accuracy": 1.0, "f1": 1.0, "auc": 1.0}

    def test_constant_scores(self):
        assert D.roc_auc(np.full(6, 0.3), np.array([1, 0, 1, 0, 0, 1])) == 0.5

    def test_hand_case(self):
        assert D.roc_auc(np.array([0.9, 0.8, 0.4, 0.1]), np.array([1, 0, 1, 0])) == 0.75

    def test_auc_pairwise_oracle_and_monotone_invariance(self):
        rng = np.random.default_rng(8)
        s = np.round(rng.standard_normal(200), 1)  # forces ties
        y = rng.integers(0, 2, 200)
        pos, neg = s[y == 1], s[y == 0]
        pairs = np.mean((pos[:, None] > neg[None]) + 0.5 * (pos[:, None] == neg[None]))
        assert D.roc_auc(s, y) == pytest.approx(pairs, abs=1e-12)
        assert D.roc_auc(np.exp(3 * s) + 1, y) == pytest.approx(D.roc_auc(s, y), abs=1e-12)

    def test_top3_at_least_top1(self):
        rng = np.random.default_rng(9)
        s = rng.standard_normal((500, 16))
        y = rng.integers(0, 16, 500)
        assert D.topk_accuracy(s, y, 3) >= D.topk_accuracy(s, y, 1)

    def test_ties_favor_lower_index(self):
        assert D.topk_accuracy(np.zeros((1, 4)), np.array([0]), 1) == 1.0
        assert D.topk_accuracy(np.zeros((1, 4)), np.array([1]), 1) == 0.0

    def test_report_format(self):
        rows = [D.MetricRow("beam", "wimae", 32, 0.25, "top1", 0.5),
                D.MetricRow("los", "raw", None, 1.0, "auc", 0.91234567)]
        assert D.format_report(rows) == ("beam\twimae\t32\t0.25\ttop1\t0.500000\n"
                                         "los\traw\t-\t1\tauc\t0.912346\n")


class TestRunners:
    def test_splits_partition(self):
        ds = cs.build_dataset(50, cs.SystemConfig(n_antennas=2, n_subcarriers=2), 1)
        sp = D.probe_splits(ds)
        assert (len(sp.train), len(sp.val), len(sp.test)) == (35, 10, 5)
        assert sorted(np.r_[sp.train, sp.val, sp.test].tolist()) == list(range(50))

    def test_raw_runs(self):
        ds = cs.build_dataset(200, cs.SystemConfig(n_antennas=4, n_subcarriers=4), 2)
        ds.normalization_std = cs.normalization_std(ds.h_low)
        feats = D.extract_features(None, ds, "raw")
        rows = D.run_beam_probe(feats, ds, "raw", 16, (0.5, 1.0))
        assert [(r.budget, r.metric) for r in rows] == [(0.5, "top1"), (0.5, "top3"),
                                                         (1.0, "top1"), (1.0, "top3")]
        los = D.run_los_probe(D.extract_features(None, ds, "raw"), ds, "raw")
        assert [r.metric for r in los] == ["accuracy", "f1", "auc"]
