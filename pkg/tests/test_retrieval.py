import numpy as np
import pytest

from hashquant import (
    BadMagic,
    CountMismatch,
    DimMismatch,
    IndicatorSet,
    QuantizerModel,
    TooManyCandidates,
    TruncatedFile,
    VersionMismatch,
    ZeroNormVector,
    assign_indicators,
    build_index,
    build_lookup_table,
    full_aqd_query,
    hamming_distances,
    hamming_top_candidates,
    hash_only_query,
    learn_quantizer,
    load_index,
    lossless_query,
    save_index,
    sign_encode,
    synth_dataset,
    two_stage_query,
)


def make_index(rng, count=60, dim=16, num_books=2, book_size=8, seed=0):
    features = rng.standard_normal((count, dim))
    fit = learn_quantizer(features, num_books=num_books, book_size=book_size, alternations=4, seed=seed)
    return features, build_index(features, fit.model, fit.indicators_a, modality="b")


def brute_force_two_stage(query, features, index, candidates, top_k):
    """Full sorts at both stages; the oracle for the partial-selection path."""
    query_codes = sign_encode(query.reshape(1, -1))
    dists = hamming_distances(query_codes, index.codes)
    stage_one = sorted(range(len(features)), key=lambda i: (int(dists[i]), i))[:candidates]
    table = build_lookup_table(query, index.quantizer)
    scored = []
    for item in stage_one:
        idx = index.indicators.indices[item]
        scored.append((-float(table.values[np.arange(index.quantizer.num_books), idx].sum()), item))
    scored.sort()
    return [item for _, item in scored[:top_k]]


class TestRankedResult:
    def test_rejects_increasing_scores(self):
        from hashquant import RankedResult

        with pytest.raises(ValueError):
            RankedResult(indices=np.array([0, 1]), scores=np.array([1.0, 2.0]))

    def test_rejects_bad_tie_order(self):
        from hashquant import RankedResult

        with pytest.raises(ValueError):
            RankedResult(indices=np.array([3, 1]), scores=np.array([2.0, 2.0]))
        RankedResult(indices=np.array([1, 3]), scores=np.array([2.0, 2.0]))


class TestBuildIndex:
    def test_single_item_database(self, rng):
        feature = rng.standard_normal((1, 4))
        model = QuantizerModel(codebooks=rng.standard_normal((1, 4, 2)))
        indicators = assign_indicators(feature, model)
        index = build_index(feature, model, indicators)
        assert index.count == 1
        result = two_stage_query(feature[0], index, candidates=1, top_k=1)
        assert result.indices.tolist() == [0]

    def test_count_and_dim_checks(self, rng):
        features = rng.standard_normal((5, 4))
        model = QuantizerModel(codebooks=rng.standard_normal((1, 4, 2)))
        short = IndicatorSet(book_size=2, indices=np.zeros((3, 1), dtype=np.int32))
        with pytest.raises(CountMismatch):
            build_index(features, model, short)
        wrong_dim = QuantizerModel(codebooks=rng.standard_normal((1, 5, 2)))
        indicators = IndicatorSet(book_size=2, indices=np.zeros((5, 1), dtype=np.int32))
        with pytest.raises(DimMismatch):
            build_index(features, wrong_dim, indicators)

    def test_rebuild_serializes_identically(self, tmp_path, rng):
        features, index = make_index(rng)
        again = build_index(features, index.quantizer, index.indicators, modality="b")
        one, two = tmp_path / "one.hqx", tmp_path / "two.hqx"
        save_index(index, one)
        save_index(again, two)
        assert one.read_bytes() == two.read_bytes()


class TestTwoStage:
    def test_full_candidates_equals_full_aqd(self, rng):
        features, index = make_index(rng, count=80)
        for _ in range(10):
            query = rng.standard_normal(16)
            two_stage = two_stage_query(query, index, candidates=80, top_k=80)
            full = full_aqd_query(query, index, top_k=80)
            assert (two_stage.indices == full.indices).all()
            assert np.array_equal(two_stage.scores, full.scores)

    def test_exact_item_wins(self, rng):
        # plant an item whose reconstruction and sign pattern match the query
        model = QuantizerModel(codebooks=rng.standard_normal((2, 32, 4)))
        planted = model.codebooks[0][:, 1] + model.codebooks[1][:, 3]
        features = np.vstack([rng.standard_normal((30, 32)), planted])
        indicators = assign_indicators(features, model)
        index = build_index(features, model, indicators)
        result = two_stage_query(planted, index, candidates=1, top_k=1)
        assert result.indices.tolist() == [30]

    def test_matches_brute_force_oracle(self, rng):
        features, index = make_index(rng, count=300, dim=24, seed=3)
        for _ in range(8):
            query = rng.standard_normal(24)
            got = two_stage_query(query, index, candidates=50, top_k=10)
            assert got.indices.tolist() == brute_force_two_stage(query, features, index, 50, 10)

    def test_containment_in_stage_one(self, rng):
        features, index = make_index(rng, count=100)
        query = rng.standard_normal(16)
        query_codes = sign_encode(query.reshape(1, -1))
        shortlist = set(hamming_top_candidates(query_codes, index.codes, 20).tolist())
        result = two_stage_query(query, index, candidates=20, top_k=10)
        assert set(result.indices.tolist()) <= shortlist

    def test_monotone_filter_nesting(self, rng):
        features, index = make_index(rng, count=100)
        query = rng.standard_normal(16)
        query_codes = sign_encode(query.reshape(1, -1))
        sets = {
            c: set(hamming_top_candidates(query_codes, index.codes, c).tolist())
            for c in (10, 30, 60, 100)
        }
        assert sets[10] <= sets[30] <= sets[60] <= sets[100]
        for budget in (10, 30, 60):
            result = two_stage_query(query, index, candidates=budget, top_k=10)
            assert set(result.indices.tolist()) <= sets[budget]

    def test_budget_violations(self, rng):
        features, index = make_index(rng, count=20)
        query = rng.standard_normal(16)
        with pytest.raises(TooManyCandidates):
            two_stage_query(query, index, candidates=21, top_k=5)
        with pytest.raises(TooManyCandidates):
            two_stage_query(query, index, candidates=5, top_k=6)
        with pytest.raises(DimMismatch):
            two_stage_query(np.ones(17), index, candidates=5, top_k=5)


class TestBaselineQueries:
    def test_hash_only_identity_item_first(self, rng):
        features, index = make_index(rng, count=40)
        result = hash_only_query(features[13], index, top_k=3)
        assert result.indices[0] == 13
        assert result.scores[0] == 0.0

    def test_hash_only_all_equal_codes_rank_by_index(self):
        features = np.ones((12, 8))
        model = QuantizerModel(codebooks=np.ones((1, 8, 2)))
        indicators = IndicatorSet(book_size=2, indices=np.zeros((12, 1), dtype=np.int32))
        index = build_index(features, model, indicators)
        result = hash_only_query(np.ones(8), index, top_k=5)
        assert result.indices.tolist() == [0, 1, 2, 3, 4]

    def test_hash_only_matches_sort_oracle(self, rng):
        features, index = make_index(rng, count=150)
        for _ in range(5):
            query = rng.standard_normal(16)
            query_codes = sign_encode(query.reshape(1, -1))
            dists = hamming_distances(query_codes, index.codes)
            oracle = sorted(range(150), key=lambda i: (int(dists[i]), i))[:20]
            assert hash_only_query(query, index, top_k=20).indices.tolist() == oracle

    def test_lossless_examples(self, rng):
        database = rng.standard_normal((25, 6))
        result = lossless_query(database[4], database, top_k=1)
        assert result.indices.tolist() == [4]
        assert result.scores[0] == pytest.approx(1.0, rel=1e-12)

        orthogonal = np.array([[1.0, 0.0], [0.0, 1.0]])
        out = lossless_query(np.array([1.0, 0.0]), orthogonal, top_k=2)
        assert out.scores[1] == pytest.approx(0.0, abs=1e-15)

    def test_lossless_matches_cosine_oracle(self, rng):
        database = rng.standard_normal((60, 9))
        query = rng.standard_normal(9)
        result = lossless_query(query, database, top_k=60)
        cosines = database @ query / (np.linalg.norm(database, axis=1) * np.linalg.norm(query))
        oracle = sorted(range(60), key=lambda i: (-cosines[i], i))
        assert result.indices.tolist() == oracle

    def test_lossless_zero_norm(self, rng):
        database = rng.standard_normal((5, 3))
        with pytest.raises(ZeroNormVector):
            lossless_query(np.zeros(3), database, top_k=1)
        database[2] = 0.0
        with pytest.raises(ZeroNormVector):
            lossless_query(np.ones(3), database, top_k=1)


class TestCrossModalSymmetry:
    def test_index_from_either_modality_answers_the_other(self):
        features_a, features_b, labels = synth_dataset(4, 15, 12, 0.2, seed=8)
        fit = learn_quantizer(
            features_a.values, features_b.values, num_books=2, book_size=4, alternations=4, seed=1
        )
        index_a = build_index(features_a.values, fit.model, fit.indicators_a, modality="a")
        index_b = build_index(features_b.values, fit.model, fit.indicators_b, modality="b")
        cluster = np.repeat(np.arange(4), 15)
        for query_idx in (0, 20, 45):
            hits_b = two_stage_query(features_a.values[query_idx], index_b, candidates=30, top_k=5)
            hits_a = two_stage_query(features_b.values[query_idx], index_a, candidates=30, top_k=5)
            assert cluster[hits_b.indices[0]] == cluster[query_idx]
            assert cluster[hits_a.indices[0]] == cluster[query_idx]


class TestIndexFile:
    def test_round_trip_preserves_everything(self, tmp_path, rng):
        features, index = make_index(rng, count=33, dim=70)
        path = tmp_path / "index.hqx"
        save_index(index, path)
        loaded = load_index(path)
        assert (loaded.codes.words == index.codes.words).all()
        assert loaded.codes.dim == index.codes.dim
        assert (loaded.indicators.indices == index.indicators.indices).all()
        # codebooks travel as float32; a second save is byte-identical
        assert np.allclose(loaded.quantizer.codebooks, index.quantizer.codebooks, atol=1e-6)
        second = tmp_path / "again.hqx"
        save_index(loaded, second)
        assert path.read_bytes() == second.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.hqx"
        path.write_bytes(b"JUNK" + bytes(32))
        with pytest.raises(BadMagic):
            load_index(path)

    def test_version_mismatch(self, tmp_path, rng):
        features, index = make_index(rng, count=5, book_size=4)
        path = tmp_path / "x.hqx"
        save_index(index, path)
        blob = bytearray(path.read_bytes())
        blob[4] = 7
        path.write_bytes(bytes(blob))
        with pytest.raises(VersionMismatch):
            load_index(path)

    def test_truncated_codebooks(self, tmp_path, rng):
        features, index = make_index(rng, count=5, book_size=4)
        path = tmp_path / "x.hqx"
        save_index(index, path)
        blob = path.read_bytes()
        # cut inside the codebook section
        words_bytes = index.count * index.codes.words.shape[1] * 8
        path.write_bytes(blob[: 24 + words_bytes + 10])
        with pytest.raises(TruncatedFile):
            load_index(path)
