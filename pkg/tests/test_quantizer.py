import itertools

import numpy as np
import pytest

from hashquant import (
    DimMismatch,
    IndexOutOfRange,
    IndicatorSet,
    NotEnoughItems,
    QuantizerModel,
    SingularSystem,
    aqd,
    aqd_scores,
    assign_indicators,
    build_lookup_table,
    init_codebooks,
    learn_quantizer,
    quantization_objective,
    quantization_residual_norm,
    reconstruct,
    synth_dataset,
    update_codebooks,
)


def exhaustive_best(features, model):
    """Per-item joint optimum over all book_size**num_books assignments."""
    combos = list(itertools.product(range(model.book_size), repeat=model.num_books))
    best_idx = np.zeros((features.shape[0], model.num_books), dtype=np.int64)
    best_val = np.full(features.shape[0], np.inf)
    for combo in combos:
        approx = sum(model.codebooks[l][:, combo[l]] for l in range(model.num_books))
        vals = ((features - approx) ** 2).sum(axis=1)
        better = vals < best_val - 1e-15
        best_val[better] = vals[better]
        best_idx[better] = combo
    return best_idx, best_val


def per_item_objective(features, model, indices):
    return ((features - reconstruct(model, indices)) ** 2).sum(axis=1)


class TestInitCodebooks:
    def test_first_book_is_row_permutation_when_n_equals_k(self, rng):
        features = rng.standard_normal((6, 3))
        model = init_codebooks(features, 1, 6, seed=0)
        columns = sorted(model.codebooks[0].T.tolist())
        assert columns == sorted(features.tolist())

    def test_deterministic(self, rng):
        features = rng.standard_normal((30, 4))
        one = init_codebooks(features, 3, 8, seed=5)
        two = init_codebooks(features, 3, 8, seed=5)
        assert one.codebooks.tobytes() == two.codebooks.tobytes()

    def test_second_book_zero_when_first_book_exact(self, rng):
        atoms = rng.standard_normal((4, 5))
        features = atoms[rng.integers(0, 4, size=20)]
        # every row is one of exactly 4 distinct atoms and k=4, so greedy
        # assignment to book 1 leaves all-zero residuals for book 2
        unique = np.unique(features, axis=0)
        model = init_codebooks(unique, 2, 4, seed=1)
        assert np.allclose(model.codebooks[1], 0.0)

    def test_not_enough_items(self, rng):
        with pytest.raises(NotEnoughItems):
            init_codebooks(rng.standard_normal((3, 2)), 1, 4, seed=0)


class TestAssignIndicators:
    def test_nearest_column_single_book(self):
        model = QuantizerModel(codebooks=np.array([[[1.0, 0.0], [0.0, 1.0]]]))
        out = assign_indicators(np.array([[1.1, 0.0]]), model)
        assert out.indices.tolist() == [[0]]

    def test_exact_column_match_has_zero_residual(self, rng):
        books = rng.standard_normal((1, 4, 5))
        model = QuantizerModel(codebooks=books)
        feature = books[0][:, 3]
        out = assign_indicators(feature.reshape(1, -1), model)
        assert out.indices.tolist() == [[3]]
        assert quantization_residual_norm(feature, model, out.indices[0]) == 0.0

    def test_single_book_matches_exhaustive(self, rng):
        for _ in range(20):
            features = rng.standard_normal((12, 4))
            model = QuantizerModel(codebooks=rng.standard_normal((1, 4, 5)))
            out = assign_indicators(features, model)
            oracle_idx, _ = exhaustive_best(features, model)
            assert (out.indices == oracle_idx).all()

    def test_never_worse_than_previous(self, rng):
        for _ in range(10):
            features = rng.standard_normal((15, 4))
            model = QuantizerModel(codebooks=rng.standard_normal((2, 4, 3)))
            prev = IndicatorSet(book_size=3, indices=rng.integers(0, 3, size=(15, 2), dtype=np.int32))
            out = assign_indicators(features, model, prev, max_rounds=2)
            before = per_item_objective(features, model, prev.indices)
            after = per_item_objective(features, model, out.indices)
            assert (after <= before + 1e-12).all()

    def test_two_books_close_to_joint_optimum(self, rng):
        total = hits = 0
        for _ in range(30):
            features = rng.standard_normal((10, 4))
            model = QuantizerModel(codebooks=rng.standard_normal((2, 4, 3)))
            out = assign_indicators(features, model, None, max_rounds=10)
            got = per_item_objective(features, model, out.indices)
            _, best = exhaustive_best(features, model)
            # never better than the exhaustive optimum, and usually equal
            assert (got >= best - 1e-9).all()
            hits += int((got <= best + 1e-9).sum())
            total += got.shape[0]
        assert hits / total >= 0.85  # fixed-point quality of descent from greedy

    def test_dim_mismatch(self, rng):
        model = QuantizerModel(codebooks=rng.standard_normal((1, 4, 2)))
        with pytest.raises(DimMismatch):
            assign_indicators(rng.standard_normal((3, 5)), model)


class TestUpdateCodebooks:
    def test_single_column_learns_the_mean(self):
        features = np.array([[1.0, 0.0], [3.0, 0.0]])
        indicators = IndicatorSet(book_size=1, indices=np.zeros((2, 1), dtype=np.int32))
        model = update_codebooks(features, indicators, ridge=0.0)
        assert np.allclose(model.codebooks[0][:, 0], [2.0, 0.0])

    def test_one_item_per_column_interpolates_exactly(self, rng):
        features = rng.standard_normal((4, 3))
        indicators = IndicatorSet(book_size=4, indices=np.arange(4, dtype=np.int32).reshape(4, 1))
        model = update_codebooks(features, indicators, ridge=0.0)
        assert np.allclose(model.codebooks[0].T, features)

    def test_closed_form_beats_random_perturbations(self, rng):
        for _ in range(5):
            features = rng.standard_normal((50, 6))
            indicators = IndicatorSet(
                book_size=4, indices=rng.integers(0, 4, size=(50, 1), dtype=np.int32)
            )
            model = update_codebooks(features, indicators, ridge=1e-8)
            base = quantization_objective(features, model, indicators)
            for _ in range(100):
                delta = rng.standard_normal(model.codebooks.shape)
                delta *= 1e-2 / np.linalg.norm(delta)
                shifted = QuantizerModel(codebooks=model.codebooks + delta)
                assert base <= quantization_objective(features, shifted, indicators)

    def test_two_modalities_share_books(self, rng):
        features_a = rng.standard_normal((20, 3))
        features_b = rng.standard_normal((20, 3))
        ind = IndicatorSet(book_size=2, indices=rng.integers(0, 2, size=(20, 1), dtype=np.int32))
        ind_b = IndicatorSet(book_size=2, indices=rng.integers(0, 2, size=(20, 1), dtype=np.int32))
        joint = update_codebooks(features_a, ind, features_b, ind_b, ridge=0.0)
        # stacking both modalities into one call gives the same solution
        stacked = update_codebooks(
            np.vstack([features_a, features_b]),
            IndicatorSet(book_size=2, indices=np.vstack([ind.indices, ind_b.indices])),
            ridge=0.0,
        )
        assert np.allclose(joint.codebooks, stacked.codebooks)

    def test_singular_without_ridge(self):
        features = np.array([[1.0, 2.0]])
        indicators = IndicatorSet(book_size=2, indices=np.zeros((1, 1), dtype=np.int32))
        with pytest.raises(SingularSystem):
            update_codebooks(features, indicators, ridge=0.0)


class TestLearnQuantizer:
    def test_exactly_representable_reaches_zero(self, rng):
        # data is exactly k distinct points, so the sampled init covers them all;
        # the ridge term keeps the final objective at ~1e-15 rather than exact zero
        atoms = rng.standard_normal((4, 6))
        fit = learn_quantizer(atoms, num_books=1, book_size=4, alternations=2, seed=0)
        assert fit.objectives[-1] <= 1e-12

    def test_zero_alternations_keeps_initialization(self, rng):
        features_a = rng.standard_normal((20, 4))
        features_b = rng.standard_normal((20, 4))
        fit = learn_quantizer(features_a, features_b, num_books=2, book_size=4, alternations=0, seed=3)
        init = init_codebooks(np.vstack([features_a, features_b]), 2, 4, seed=3)
        assert (fit.model.codebooks == init.codebooks).all()
        assert len(fit.objectives) == 1

    def test_objective_non_increasing(self, rng):
        features_a = rng.standard_normal((60, 5))
        features_b = rng.standard_normal((60, 5))
        fit = learn_quantizer(features_a, features_b, num_books=2, book_size=8, alternations=10, seed=7)
        for before, after in zip(fit.objectives, fit.objectives[1:]):
            assert after <= before + 1e-9

    def test_beats_unrefined_random_restarts(self):
        features_a, features_b, _ = synth_dataset(4, 25, 6, 0.2, seed=21)
        fit = learn_quantizer(
            features_a.values, features_b.values, num_books=1, book_size=4, alternations=10, seed=0
        )
        for seed in range(1, 6):
            cold = learn_quantizer(
                features_a.values, features_b.values, num_books=1, book_size=4, alternations=0, seed=seed
            )
            assert fit.objectives[-1] <= cold.objectives[-1]


class TestLookupAndAqd:
    def test_zero_query_gives_zero_table(self, rng):
        model = QuantizerModel(codebooks=rng.standard_normal((3, 4, 5)))
        table = build_lookup_table(np.zeros(4), model)
        assert (table.values == 0).all()

    def test_table_example(self):
        books = np.zeros((1, 2, 2))
        books[0, 0, 0] = 1.0  # column 0 = e1 * 1
        books[0, 1, 1] = 2.0  # column 1 = e2 * 2
        table = build_lookup_table(np.array([3.0, 4.0]), QuantizerModel(codebooks=books))
        assert table.values.tolist() == [[3.0, 8.0]]
        assert aqd(table, [1]) == 8.0

    def test_table_matches_direct_dots(self, rng):
        model = QuantizerModel(codebooks=rng.standard_normal((3, 6, 7)))
        query = rng.standard_normal(6)
        table = build_lookup_table(query, model)
        for book in range(3):
            for col in range(7):
                assert table.values[book, col] == pytest.approx(
                    float(query @ model.codebooks[book][:, col]), rel=1e-12
                )

    def test_aqd_exact_when_reconstruction_exact(self, rng):
        model = QuantizerModel(codebooks=rng.standard_normal((2, 5, 3)))
        indices = np.array([1, 2])
        item = model.codebooks[0][:, 1] + model.codebooks[1][:, 2]
        query = rng.standard_normal(5)
        table = build_lookup_table(query, model)
        assert aqd(table, indices) == pytest.approx(float(query @ item), rel=1e-12)

    def test_aqd_error_bound(self, rng):
        model = QuantizerModel(codebooks=rng.standard_normal((2, 5, 4)))
        for _ in range(50):
            query = rng.standard_normal(5)
            item = rng.standard_normal(5)
            indices = assign_indicators(item.reshape(1, -1), model).indices[0]
            table = build_lookup_table(query, model)
            error = abs(aqd(table, indices) - float(query @ item))
            bound = np.linalg.norm(query) * quantization_residual_norm(item, model, indices)
            assert error <= bound * (1 + 1e-6)

    def test_aqd_scores_matches_scalar_aqd(self, rng):
        model = QuantizerModel(codebooks=rng.standard_normal((3, 4, 6)))
        indicators = IndicatorSet(book_size=6, indices=rng.integers(0, 6, size=(9, 3), dtype=np.int32))
        table = build_lookup_table(rng.standard_normal(4), model)
        batch = aqd_scores(table, indicators)
        for i in range(9):
            assert batch[i] == pytest.approx(aqd(table, indicators.indices[i]), rel=1e-12)

    def test_aqd_index_out_of_range(self, rng):
        model = QuantizerModel(codebooks=rng.standard_normal((1, 3, 2)))
        table = build_lookup_table(np.ones(3), model)
        with pytest.raises(IndexOutOfRange):
            aqd(table, [2])
        with pytest.raises(IndexOutOfRange):
            aqd(table, [0, 0])


class TestResidualNorm:
    def test_exact_representation(self, rng):
        model = QuantizerModel(codebooks=rng.standard_normal((2, 4, 3)))
        feature = model.codebooks[0][:, 0] + model.codebooks[1][:, 2]
        assert quantization_residual_norm(feature, model, [0, 2]) == 0.0

    def test_epsilon_offset(self, rng):
        model = QuantizerModel(codebooks=rng.standard_normal((1, 4, 3)))
        feature = model.codebooks[0][:, 1].copy()
        feature[0] += 0.25
        assert quantization_residual_norm(feature, model, [1]) == pytest.approx(0.25, rel=1e-12)

    def test_matches_direct_norm(self, rng):
        model = QuantizerModel(codebooks=rng.standard_normal((3, 5, 4)))
        feature = rng.standard_normal(5)
        indices = [2, 0, 3]
        expected = np.linalg.norm(
            feature - sum(model.codebooks[l][:, indices[l]] for l in range(3))
        )
        assert quantization_residual_norm(feature, model, indices) == pytest.approx(
            float(expected), rel=1e-12
        )

    def test_dim_mismatch(self, rng):
        model = QuantizerModel(codebooks=rng.standard_normal((1, 4, 2)))
        with pytest.raises(DimMismatch):
            quantization_residual_norm(np.ones(5), model, [0])
