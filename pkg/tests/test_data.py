import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dacat.data import (AnnotationError, BadMagicError, NonFiniteValueError, SyntheticConfig,
                        TruncatedPayloadError, VersionMismatchError, cluster_means,
                        gen_dataset, gen_stream, gen_stream_with_mask, load_annotations,
                        load_embeddings, write_annotations, write_embeddings)


class TestGenStream:
    def test_length_and_phase_coverage(self):
        cfg = SyntheticConfig(K=7, video_len=280, seed=3)
        X, y = gen_stream(cfg)
        assert X.shape == (280, cfg.d_raw)
        assert len(y) == 280
        assert set(y.labels.tolist()) == set(range(7))
        assert np.all(np.diff(y.labels) >= 0)

    @pytest.mark.parametrize("L", [7, 8, 100, 1001])
    def test_exact_length(self, L):
        X, y = gen_stream(SyntheticConfig(video_len=L, seed=L))
        assert X.shape[0] == len(y) == L

    def test_deterministic(self):
        cfg = SyntheticConfig(seed=11, interference_burst=5.0)
        a, b = gen_stream(cfg), gen_stream(cfg)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1].labels, b[1].labels)

    def test_no_interference_no_noise_is_nearest_mean_separable(self):
        cfg = SyntheticConfig(interference_rate=0.0, noise_scale=0.0, seed=2)
        X, y = gen_stream(cfg)
        means, _ = cluster_means(cfg)
        dist = ((X[:, None, :] - means[None]) ** 2).sum(-1)
        np.testing.assert_array_equal(dist.argmin(1), y.labels)

    def test_interference_closer_to_shared_mean(self):
        cfg = SyntheticConfig(video_len=10_000, interference_rate=0.5, noise_scale=0.3,
                              cluster_separation=10.0, seed=4)
        X, y, mask = gen_stream_with_mask(cfg)
        means, intf = cluster_means(cfg)
        Xi, li = X[mask], y.labels[mask]
        d_int = ((Xi - intf) ** 2).sum(1)
        d_own = ((Xi - means[li]) ** 2).sum(1)
        assert np.mean(d_int < d_own) >= 0.99
        # interference frames keep their phase label
        assert set(li.tolist()) == set(range(cfg.K))

    def test_interference_rate_is_marginal_rate(self):
        for burst in (1.0, 10.0):
            cfg = SyntheticConfig(video_len=50_000, interference_rate=0.2,
                                  interference_burst=burst, seed=5)
            _, _, mask = gen_stream_with_mask(cfg)
            assert abs(mask.mean() - 0.2) < 0.02

    def test_bursts_are_longer(self):
        def mean_run(mask):
            edges = np.flatnonzero(np.diff(np.r_[0, mask.astype(int), 0]))
            return np.mean(edges[1::2] - edges[::2])
        short = gen_stream_with_mask(SyntheticConfig(video_len=20_000, seed=6))[2]
        long = gen_stream_with_mask(SyntheticConfig(video_len=20_000, seed=6,
                                                    interference_burst=10.0))[2]
        assert mean_run(long) > 5 * mean_run(short)

    def test_centred_simplex_geometry(self):
        cfg = SyntheticConfig(K=7, d_raw=16, cluster_separation=3.0)
        means, intf = cluster_means(cfg)
        allm = np.vstack([means, intf])
        np.testing.assert_allclose(allm.sum(0), 0.0, atol=1e-12)
        D = np.linalg.norm(allm[:, None] - allm[None], axis=-1)
        off = D[~np.eye(8, dtype=bool)]
        np.testing.assert_allclose(off, 3.0, rtol=1e-12)

    def test_phase_skips(self):
        X, y = gen_stream(SyntheticConfig(K=7, phase_skip_rate=0.5, seed=1))
        assert y.labels[0] == 0 and np.all(np.diff(y.labels) >= 0)
        assert X.shape[0] == 280

    @pytest.mark.parametrize("kw", [
        {"interference_rate": 1.5}, {"interference_leak": 0.5}, {"interference_burst": 0.5},
        {"video_len": 3, "K": 7}, {"noise_scale": -1.0},
    ])
    def test_invalid_config(self, kw):
        with pytest.raises(ValueError):
            SyntheticConfig(**kw)


class TestGenDataset:
    def test_videos_differ_and_reproduce(self):
        cfg = SyntheticConfig(n_videos=3, seed=9)
        a, b = gen_dataset(cfg), gen_dataset(cfg)
        assert len(a) == 3
        assert not np.array_equal(a[0][0], a[1][0])
        for (xa, _), (xb, _) in zip(a, b):
            np.testing.assert_array_equal(xa, xb)


class TestEmbeddings:
    def test_worked_example(self, tmp_path):
        p = tmp_path / "e.dcat"
        p.write_bytes(b"DCAT" + struct.pack("<IIQ", 1, 2, 2) + struct.pack("<4f", 1, 0, 0, 1))
        np.testing.assert_array_equal(load_embeddings(p), [[1, 0], [0, 1]])

    def test_header_layout(self, tmp_path):
        p = tmp_path / "e.dcat"
        write_embeddings(p, np.ones((3, 2)))
        raw = p.read_bytes()
        assert raw[:4] == b"DCAT"
        assert struct.unpack("<IIQ", raw[4:20]) == (1, 2, 3)
        assert len(raw) == 20 + 4 * 6

    @settings(max_examples=30)
    @given(arrays(np.float32, st.tuples(st.integers(0, 20), st.integers(1, 8)),
                  elements=st.floats(-1e6, 1e6, width=32)))
    def test_round_trip(self, tmp_path_factory, feats):
        p = tmp_path_factory.mktemp("rt") / "e.dcat"
        write_embeddings(p, feats)
        np.testing.assert_array_equal(load_embeddings(p), feats)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "e.dcat"
        p.write_bytes(b"XXXX" + struct.pack("<IIQ", 1, 1, 0))
        with pytest.raises(BadMagicError, match="bad magic"):
            load_embeddings(p)

    def test_version_mismatch(self, tmp_path):
        p = tmp_path / "e.dcat"
        p.write_bytes(b"DCAT" + struct.pack("<IIQ", 2, 1, 0))
        with pytest.raises(VersionMismatchError):
            load_embeddings(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "e.dcat"
        p.write_bytes(b"DCAT" + struct.pack("<IIQ", 1, 2, 2) + struct.pack("<3f", 1, 0, 0))
        with pytest.raises(TruncatedPayloadError):
            load_embeddings(p)
        p.write_bytes(b"DCAT" + struct.pack("<II", 1, 2))
        with pytest.raises(TruncatedPayloadError):
            load_embeddings(p)

    def test_non_finite(self, tmp_path):
        p = tmp_path / "e.dcat"
        p.write_bytes(b"DCAT" + struct.pack("<IIQ", 1, 1, 2) + struct.pack("<2f", 1, np.inf))
        with pytest.raises(NonFiniteValueError):
            load_embeddings(p)


class TestAnnotations:
    def test_parse(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("0,0\n1,0\n2,1")
        np.testing.assert_array_equal(load_annotations(p).labels, [0, 0, 1])

    def test_round_trip(self, tmp_path):
        p = tmp_path / "a.csv"
        write_annotations(p, np.array([0, 0, 3, 3, 6]))
        assert p.read_text() == "0,0\n1,0\n2,3\n3,3\n4,6\n"
        np.testing.assert_array_equal(load_annotations(p, K=7).labels, [0, 0, 3, 3, 6])

    @pytest.mark.parametrize("text,msg", [
        ("0,0\n2,1", "non-contiguous"), ("0,0\n0,1", "non-contiguous"),
        ("", "empty"), ("0;0", "parse"), ("0,9", "out of range"),
    ])
    def test_errors(self, tmp_path, text, msg):
        p = tmp_path / "a.csv"
        p.write_text(text)
        with pytest.raises(AnnotationError, match=msg):
            load_annotations(p, K=7)
