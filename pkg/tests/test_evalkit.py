import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaitkit.errors import ConfigError, DataError
from gaitkit.evalkit import (
    EmbeddingSet,
    EvalProtocol,
    EvalReport,
    cross_view_matrix,
    distance_matrix,
    evaluate,
    load_embedding_set,
    m_inp,
    mean_ap,
    pairwise_distance,
    rank_k,
    save_embedding_set,
)


def brute_force_metrics(dist, plabels, glabels, excl, ks=(1, 5, 10, 20)):
    """Literal-definition ranking metrics via a full sort, for cross-checking."""
    n_p, n_g = dist.shape
    rank_hits = {k: 0 for k in ks}
    rankable = 0
    aps, inps = [], []
    for i in range(n_p):
        cand = [(dist[i, j], j) for j in range(n_g) if not excl[i, j]]
        if not cand:
            continue
        rankable += 1
        cand.sort(key=lambda t: (t[0], t[1]))  # stable: gallery index breaks ties
        flags = [glabels[j] == plabels[i] for _, j in cand]
        for k in ks:
            if any(flags[:k]):
                rank_hits[k] += 1
        match_ranks = [r + 1 for r, f in enumerate(flags) if f]
        if match_ranks:
            aps.append(np.mean([(m + 1) / r for m, r in enumerate(match_ranks)]))
            inps.append(len(match_ranks) / match_ranks[-1])
    return ({k: rank_hits[k] / rankable for k in ks},
            float(np.mean(aps)), float(np.mean(inps)))


def random_instance(rng, n_probe, n_gallery, n_ids):
    dist = rng.random((n_probe, n_gallery))
    plabels = rng.integers(0, n_ids, n_probe)
    glabels = rng.integers(0, n_ids, n_gallery)
    # make sure every probe label appears in the gallery
    for i, lab in enumerate(plabels):
        if not (glabels == lab).any():
            glabels[rng.integers(0, n_gallery)] = lab
    excl = rng.random((n_probe, n_gallery)) < 0.05
    return dist, plabels, glabels, excl


class TestPairwiseDistance:
    def test_identical_embeddings(self):
        e = np.random.default_rng(0).standard_normal((4, 8))
        assert pairwise_distance(e, e) == 0.0

    def test_single_part_is_euclidean(self):
        a = np.array([[0.0, 0.0]])
        b = np.array([[3.0, 4.0]])
        assert pairwise_distance(a, b) == pytest.approx(5.0)

    def test_mean_over_parts(self):
        a = np.zeros((2, 1))
        b = np.array([[1.0], [3.0]])
        assert pairwise_distance(a, b) == pytest.approx(2.0)

    def test_metric_properties_on_random_triples(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            a, b, c = rng.standard_normal((3, 4, 6))
            dab = pairwise_distance(a, b)
            dba = pairwise_distance(b, a)
            assert abs(dab - dba) < 1e-9
            assert dab <= pairwise_distance(a, c) + pairwise_distance(c, b) + 1e-9

    def test_distance_matrix_agrees(self):
        rng = np.random.default_rng(2)
        p = rng.standard_normal((3, 4, 5))
        g = rng.standard_normal((6, 4, 5))
        mat = distance_matrix(p, g)
        for i in range(3):
            for j in range(6):
                assert mat[i, j] == pytest.approx(pairwise_distance(p[i], g[j]), abs=1e-9)


class TestRankK:
    def test_self_match_is_rank1_hit(self):
        dist = np.array([[0.0, 5.0]])
        assert rank_k(dist, ["a"], ["a", "b"], None, k=1) == 1.0

    def test_k_equal_gallery_size(self):
        rng = np.random.default_rng(3)
        dist, pl, gl, _ = random_instance(rng, 5, 8, 3)
        excl = np.zeros_like(dist, dtype=bool)
        assert rank_k(dist, pl, gl, excl, k=8) == 1.0

    def test_hand_instance_matches_oracle(self):
        dist = np.array([[0.3, 0.1, 0.5], [0.2, 0.9, 0.05], [0.6, 0.4, 0.3]])
        pl = np.array([0, 1, 2])
        gl = np.array([0, 1, 2])
        excl = np.zeros((3, 3), dtype=bool)
        expect, _, _ = brute_force_metrics(dist, pl, gl, excl, ks=(1, 2, 3))
        for k in (1, 2, 3):
            assert rank_k(dist, pl, gl, excl, k=k) == pytest.approx(expect[k], abs=1e-12)

    def test_ties_break_by_gallery_order(self):
        dist = np.array([[0.5, 0.5]])
        # both equal; stable order puts gallery 0 first, which is the match
        assert rank_k(dist, ["x"], ["x", "y"], None, k=1) == 1.0
        assert rank_k(dist, ["y"], ["x", "y"], None, k=1) == 0.0

    def test_monotone_in_k(self):
        rng = np.random.default_rng(4)
        dist, pl, gl, excl = random_instance(rng, 10, 20, 4)
        vals = [rank_k(dist, pl, gl, excl, k=k) for k in (1, 5, 10, 20)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))


class TestMapInp:
    def test_all_matches_first(self):
        dist = np.array([[0.1, 0.2, 0.9]])
        ap, unmatched = mean_ap(dist, ["a"], ["a", "a", "b"], None)
        assert ap == 1.0 and unmatched == 0
        inp, _ = m_inp(dist, ["a"], ["a", "a", "b"], None)
        assert inp == 1.0

    def test_matches_at_ranks_one_and_three(self):
        dist = np.array([[0.1, 0.2, 0.3]])
        labels = ["a", "b", "a"]
        ap, _ = mean_ap(dist, ["a"], labels, None)
        assert ap == pytest.approx((1.0 + 2.0 / 3.0) / 2.0, abs=1e-12)
        inp, _ = m_inp(dist, ["a"], labels, None)
        assert inp == pytest.approx(2.0 / 3.0, abs=1e-12)

    def test_single_match_rank_one(self):
        dist = np.array([[0.1, 0.5]])
        inp, _ = m_inp(dist, ["a"], ["a", "b"], None)
        assert inp == 1.0

    def test_unmatched_probe_excluded_and_counted(self):
        dist = np.array([[0.1, 0.2], [0.3, 0.4]])
        ap, unmatched = mean_ap(dist, ["a", "zz"], ["a", "b"], None)
        assert unmatched == 1
        assert ap == 1.0  # only the matched probe contributes


class TestOracleSweep:
    @pytest.mark.parametrize("seed", range(10))
    def test_metrics_match_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        n_p = int(rng.integers(2, 20))
        n_g = int(rng.integers(5, 50))
        dist, pl, gl, excl = random_instance(rng, n_p, n_g, int(rng.integers(2, 6)))
        expect_rank, expect_ap, expect_inp = brute_force_metrics(dist, pl, gl, excl)
        for k in (1, 5, 10, 20):
            assert rank_k(dist, pl, gl, excl, k=k) == pytest.approx(expect_rank[k], abs=1e-9)
        ap, _ = mean_ap(dist, pl, gl, excl)
        inp, _ = m_inp(dist, pl, gl, excl)
        assert ap == pytest.approx(expect_ap, abs=1e-9)
        assert inp == pytest.approx(expect_inp, abs=1e-9)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(42)
        dist, pl, gl, excl = random_instance(rng, 8, 30, 4)
        transformed = np.exp(3.0 * dist) - 0.5
        for k in (1, 5):
            assert rank_k(dist, pl, gl, excl, k=k) == rank_k(transformed, pl, gl, excl, k=k)
        assert mean_ap(dist, pl, gl, excl) == mean_ap(transformed, pl, gl, excl)
        assert m_inp(dist, pl, gl, excl) == m_inp(transformed, pl, gl, excl)


def _toy_set(rng, n_ids=3, per_id=4, parts=2, d=5, views=("000", "090")):
    n = n_ids * per_id
    subj = np.repeat([f"s{i}" for i in range(n_ids)], per_id)
    view = np.asarray([views[i % len(views)] for i in range(n)])
    cond = np.asarray([f"c{i % 2}" for i in range(n)])
    seq = np.asarray([f"q{i}" for i in range(n)])
    centers = rng.standard_normal((n_ids, parts, d)) * 5
    emb = np.stack([centers[i // per_id] + 0.01 * rng.standard_normal((parts, d))
                    for i in range(n)])
    return EmbeddingSet(subj, view, cond, seq, emb)


class TestCrossView:
    def test_identical_view_cell_with_duplicates(self):
        rng = np.random.default_rng(5)
        s = _toy_set(rng, views=("000",))
        names, grid = cross_view_matrix(s, exclude_same_seq=True)
        assert names == ["000"]
        assert grid[0][0] == 1.0

    def test_matrix_shape(self):
        rng = np.random.default_rng(6)
        s = _toy_set(rng, views=("000", "090", "180"))
        names, grid = cross_view_matrix(s)
        assert len(names) == 3 and len(grid) == 3 and all(len(r) == 3 for r in grid)

    def test_two_view_instance_matches_direct_computation(self):
        rng = np.random.default_rng(7)
        s = _toy_set(rng, views=("000", "090"))
        names, grid = cross_view_matrix(s, exclude_same_seq=True)
        i, j = names.index("000"), names.index("090")
        p_idx = np.nonzero(s.views == "000")[0]
        g_idx = np.nonzero(s.views == "090")[0]
        dist = distance_matrix(s.embeddings[p_idx], s.embeddings[g_idx])
        expect = rank_k(dist, s.subjects[p_idx], s.subjects[g_idx],
                        np.zeros(dist.shape, dtype=bool), k=1)
        assert grid[i][j] == pytest.approx(expect)


class TestEvaluate:
    def test_duplicated_data_with_self_exclusion(self):
        rng = np.random.default_rng(8)
        s = _toy_set(rng)
        proto = EvalProtocol(exclude_same_seq=False)
        report = evaluate(proto, s, s)  # probe == gallery, all pairs admitted
        assert report.rank[1] == 1.0  # self distance 0

    def test_empty_probe_raises(self):
        rng = np.random.default_rng(9)
        s = _toy_set(rng)
        proto = EvalProtocol(probe={"condition": ["nope"]})
        with pytest.raises(DataError):
            evaluate(proto, s)

    def test_report_json_round_trip(self):
        rng = np.random.default_rng(10)
        s = _toy_set(rng)
        proto = EvalProtocol(view_matrix=True)
        report = evaluate(proto, s)
        doc = json.loads(report.to_json())
        for key in ("rank1", "rank5", "rank10", "rank20", "map", "minp",
                    "view_matrix", "conditions"):
            assert key in doc
        back = EvalReport.from_dict(doc)
        assert back.to_dict() == report.to_dict()

    def test_all_metrics_in_unit_interval(self):
        rng = np.random.default_rng(11)
        s = _toy_set(rng)
        report = evaluate(EvalProtocol(), s)
        vals = list(report.rank.values()) + [report.map, report.minp]
        assert all(0.0 <= v <= 1.0 for v in vals)

    def test_unknown_protocol_key_rejected(self):
        with pytest.raises(ConfigError):
            EvalProtocol.from_dict({"bogus": 1})

    def test_per_condition_breakdown(self):
        rng = np.random.default_rng(12)
        s = _toy_set(rng)
        report = evaluate(EvalProtocol(), s)
        assert set(report.conditions) == {"c0", "c1"}
        for row in report.conditions.values():
            assert 0.0 <= row["rank1"] <= 1.0 and row["probes"] > 0


class TestEmbeddingIo:
    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(13)
        s = _toy_set(rng)
        save_embedding_set(s, tmp_path / "emb")
        back = load_embedding_set(tmp_path / "emb")
        assert np.array_equal(back.subjects, s.subjects)
        assert np.array_equal(back.embeddings, s.embeddings)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError):
            load_embedding_set(tmp_path)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_rank_k_never_decreases_in_k(seed):
    rng = np.random.default_rng(seed)
    dist, pl, gl, excl = random_instance(rng, 6, 15, 3)
    previous = 0.0
    for k in range(1, 16):
        val = rank_k(dist, pl, gl, excl, k=k)
        assert val >= previous - 1e-12
        previous = val
