import numpy as np
import pytest
from scipy.special import expit, logit

from tokenimpact.errors import GlmError
from tokenimpact.glm import (
    Design,
    DesignSpec,
    LogisticModel,
    auc_score,
    build_design,
    cumulative_impact,
    evaluate,
    fit_logistic,
    group_fix_impact,
    impact_report,
    roc_curve,
    select_interactions_aic,
)
from tokenimpact.synthetic import generate

from conftest import block_world, grouping_from_partition, make_dataset


def auc_oracle(scores, labels):
    """All-pairs concordance with half credit for ties."""
    scores = np.asarray(scores, float)
    labels = np.asarray(labels, bool)
    pos = scores[labels]
    neg = scores[~labels]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def make_design(indicators, y, pairs=()):
    indicators = np.asarray(indicators, dtype=np.float64)
    names = tuple(f"group_{j + 1}" for j in range(indicators.shape[1]))
    cols = [np.ones(indicators.shape[0])]
    cols.extend(indicators.T)
    for a, b in pairs:
        cols.append(indicators[:, a] * indicators[:, b])
    return Design(
        columns=("intercept",) + names + tuple(f"{names[a]}:{names[b]}" for a, b in pairs),
        matrix=np.column_stack(cols),
        response=np.asarray(y, dtype=np.float64),
        group_indicators=indicators,
        group_names=names,
        interactions=tuple(pairs),
    )


def make_model(coefficients, terms=None):
    coefficients = np.asarray(coefficients, dtype=np.float64)
    return LogisticModel(
        terms=tuple(terms or (f"x{j}" for j in range(coefficients.size))),
        coefficients=coefficients,
        covariance=np.zeros((coefficients.size, coefficients.size)),
        ridge=0.0,
        converged=True,
        iterations=1,
        loglik=0.0,
    )


class TestBuildDesign:
    def _dataset(self):
        rows = [
            (1, 1.0, (1, 0, 1, 0)),
            (2, 1.0, (0, 1, 0, 0)),
            (4, 1.0, (0, 0, 0, 1)),
            (4, 1.0, (0, 0, 0, 0)),
        ]
        return make_dataset(rows, n_tokens=4)

    def test_indicator_and_interaction_columns(self):
        ds = self._dataset()
        grouping = grouping_from_partition(ds.vocabulary.names, (0, 0, 1, 1))
        design = build_design(ds, DesignSpec(grouping=grouping, interactions=((0, 1),)))
        assert design.columns == ("intercept", "group_1", "group_2", "group_1:group_2")
        np.testing.assert_array_equal(design.matrix[0], [1, 1, 1, 1])
        np.testing.assert_array_equal(design.matrix[1], [1, 1, 0, 0])
        np.testing.assert_array_equal(design.matrix[3], [1, 0, 0, 0])
        np.testing.assert_array_equal(design.response, [1, 1, 0, 0])

    def test_column_means_equal_prevalences(self):
        ds = self._dataset()
        grouping = grouping_from_partition(ds.vocabulary.names, (0, 0, 1, 1))
        design = build_design(ds, DesignSpec(grouping=grouping))
        g1 = ds.token_matrix[:, :2].any(axis=1).mean()
        g2 = ds.token_matrix[:, 2:].any(axis=1).mean()
        assert design.matrix[:, 1].mean() == g1
        assert design.matrix[:, 2].mean() == g2

    def test_empty_group_rejected(self):
        ds = self._dataset()
        grouping = grouping_from_partition(ds.vocabulary.names, (0, 0, 1, 1))
        empty = grouping.groups[0].__class__(name="group_3", members=(), variance_explained=0.0)
        bad = grouping.__class__(
            groups=grouping.groups + (empty,), unassigned=(), threshold=0.5
        )
        with pytest.raises(GlmError, match="empty"):
            build_design(ds, DesignSpec(grouping=bad))

    def test_interaction_validation(self):
        ds = self._dataset()
        grouping = grouping_from_partition(ds.vocabulary.names, (0, 0, 1, 1))
        with pytest.raises(GlmError):
            DesignSpec(grouping=grouping, interactions=((0, 0),))
        with pytest.raises(GlmError):
            DesignSpec(grouping=grouping, interactions=((0, 5),))
        with pytest.raises(GlmError):
            DesignSpec(grouping=grouping, interactions=((0, 1), (1, 0)))


class TestFitLogistic:
    def test_intercept_only_closed_form(self):
        x = np.ones((400, 1))
        y = np.r_[np.ones(100), np.zeros(300)]
        model = fit_logistic(x, y)
        assert model.converged
        assert model.coefficients[0] == pytest.approx(logit(0.25), abs=1e-6)

    def test_perfect_separation_stays_finite(self):
        x = np.column_stack([np.ones(40), np.r_[np.zeros(20), np.ones(20)]])
        y = np.r_[np.zeros(20), np.ones(20)]
        model = fit_logistic(x, y, max_iter=500)
        assert np.isfinite(model.coefficients).all()
        assert model.converged

    def test_coefficient_recovery_on_planted_world(self):
        spec = block_world(
            n=60000, seed=21, group_sizes=(3,), intercept=-3.0, effects=(2.0,)
        )
        ds, _ = generate(spec, truth_mc_n=100)
        grouping = grouping_from_partition(ds.vocabulary.names, spec.group_partition)
        design = build_design(ds, DesignSpec(grouping=grouping))
        model = fit_logistic(design)
        assert model.coefficients[0] == pytest.approx(-3.0, abs=0.1)
        assert model.coefficients[1] == pytest.approx(2.0, abs=0.1)

    def test_mean_prediction_matches_prevalence(self):
        spec = block_world(n=5000, seed=3, group_sizes=(2, 2), effects=(1.5, 1.0))
        ds, _ = generate(spec, truth_mc_n=100)
        grouping = grouping_from_partition(ds.vocabulary.names, spec.group_partition)
        design = build_design(ds, DesignSpec(grouping=grouping))
        model = fit_logistic(design)
        assert model.predict_proba(design.matrix).mean() == pytest.approx(
            design.response.mean(), abs=1e-4
        )
        assert ((model.predict_proba(design.matrix) > 0) &
                (model.predict_proba(design.matrix) < 1)).all()

    def test_single_class_rejected(self):
        x = np.ones((10, 1))
        with pytest.raises(GlmError, match="both classes"):
            fit_logistic(x, np.zeros(10))

    def test_raw_matrix_needs_response(self):
        with pytest.raises(GlmError):
            fit_logistic(np.ones((5, 1)))


class TestEvaluation:
    def test_constant_scores_give_half(self):
        assert auc_score([0.5] * 6, [1, 0, 1, 0, 1, 0]) == 0.5

    def test_perfect_ordering_gives_one(self):
        assert auc_score([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_six_point_example(self):
        scores = [0.1, 0.4, 0.35, 0.8, 0.35, 0.7]
        labels = [0, 1, 0, 1, 1, 0]
        assert auc_score(scores, labels) == pytest.approx(auc_oracle(scores, labels))

    def test_brute_force_random_with_ties(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            n = int(rng.integers(5, 200))
            scores = rng.integers(0, 6, size=n) / 5.0
            labels = rng.random(n) < 0.4
            if labels.all() or not labels.any():
                continue
            assert auc_score(scores, labels) == pytest.approx(
                auc_oracle(scores, labels), abs=1e-12
            )

    def test_single_class_rejected(self):
        with pytest.raises(GlmError):
            auc_score([0.1, 0.2], [1, 1])

    def test_roc_interpolation(self):
        scores = [0.9, 0.8, 0.7, 0.6, 0.3, 0.2]
        labels = [1, 1, 0, 1, 0, 0]
        roc = roc_curve(scores, labels)
        assert roc.tpr_at_fpr(0.0) == pytest.approx(2 / 3)
        assert roc.tpr_at_fpr(1.0) == 1.0
        assert (np.diff(roc.fpr) >= 0).all() and (np.diff(roc.tpr) >= 0).all()

    def test_evaluate_uses_model_scores(self):
        x = np.column_stack([np.ones(6), [0, 0, 0, 1, 1, 1]])
        y = np.array([0, 0, 1, 1, 1, 1.0])
        model = fit_logistic(x, y)
        result = evaluate(model, x, y)
        assert result.auc == pytest.approx(auc_oracle(model.predict_proba(x), y))


class TestCounterfactuals:
    def test_unreported_group_has_zero_impact(self):
        indicators = np.zeros((10, 1))
        y = np.r_[np.ones(3), np.zeros(7)]
        design = make_design(indicators, y)
        model = make_model([-1.0, 2.0])
        impact = group_fix_impact(model, design, 0, n_boot=50, seed=0)
        assert impact.reduction == 0.0
        assert impact.ci_lo == impact.ci_hi == 0.0

    def test_hand_computed_reduction(self):
        # 4 of 10 records carry the group; steep positive effect
        indicators = np.r_[np.ones(4), np.zeros(6)][:, None]
        y = np.r_[np.ones(4), np.zeros(6)]
        design = make_design(indicators, y)
        model = make_model([-2.0, 3.0])
        p_orig = (4 * expit(1.0) + 6 * expit(-2.0)) / 10
        expected = 1.0 - expit(-2.0) / p_orig
        impact = group_fix_impact(model, design, 0, n_boot=100, seed=1)
        assert impact.reduction == pytest.approx(expected, abs=1e-12)
        assert impact.ci_lo <= impact.reduction <= impact.ci_hi

    def test_bootstrap_is_deterministic(self):
        rng = np.random.default_rng(2)
        indicators = (rng.random((200, 2)) < 0.3).astype(float)
        y = rng.random(200) < 0.3
        design = make_design(indicators, y)
        model = make_model([-1.5, 1.0, 0.5])
        a = group_fix_impact(model, design, 0, n_boot=80, seed=9)
        b = group_fix_impact(model, design, 0, n_boot=80, seed=9)
        assert (a.ci_lo, a.ci_hi) == (b.ci_lo, b.ci_hi)

    def test_positive_effect_fix_never_increases_pcr(self):
        rng = np.random.default_rng(3)
        indicators = (rng.random((500, 3)) < 0.25).astype(float)
        y = rng.random(500) < 0.3
        design = make_design(indicators, y, pairs=((0, 1),))
        model = make_model([-2.0, 1.5, 1.0, 0.8, 0.3])
        p_orig = model.predict_proba(design.matrix)
        for g in range(3):
            p_fix = model.predict_proba(design.with_groups_fixed([g]).matrix)
            assert (p_fix <= p_orig + 1e-12).all()

    def test_single_group_cumulative_equals_individual(self):
        indicators = np.r_[np.ones(4), np.zeros(6)][:, None]
        design = make_design(indicators, np.r_[np.ones(4), np.zeros(6)])
        model = make_model([-2.0, 3.0])
        single = group_fix_impact(model, design, 0, n_boot=10, seed=0)
        cumulative = cumulative_impact(model, design)
        assert cumulative == ((0, pytest.approx(single.reduction)),)

    def test_all_fixed_matches_intercept_only_prediction(self):
        rng = np.random.default_rng(4)
        indicators = (rng.random((300, 2)) < 0.4).astype(float)
        y = rng.random(300) < 0.4
        design = make_design(indicators, y, pairs=((0, 1),))
        model = make_model([-1.2, 0.9, 0.7, -0.5])
        cumulative = cumulative_impact(model, design)
        p_orig = model.predict_proba(design.matrix).mean()
        expected_final = 1.0 - expit(-1.2) / p_orig
        assert cumulative[-1][1] == pytest.approx(expected_final, abs=1e-12)

    def test_cumulative_order_is_monotone_for_positive_effects(self):
        rng = np.random.default_rng(5)
        indicators = (rng.random((400, 3)) < 0.3).astype(float)
        y = rng.random(400) < 0.3
        design = make_design(indicators, y)
        model = make_model([-2.0, 1.0, 0.6, 1.4])
        values = [r for _, r in cumulative_impact(model, design)]
        assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))

    def test_non_additivity_with_interaction(self):
        indicators = np.array(
            [[1, 1], [1, 0], [0, 1], [0, 0]] * 25, dtype=float
        )
        y = np.tile([1, 1, 0, 0], 25).astype(float)
        design = make_design(indicators, y, pairs=((0, 1),))
        model = make_model([-2.0, 1.5, 1.2, -0.9])
        singles = [
            group_fix_impact(model, design, g, n_boot=10, seed=0).reduction
            for g in (0, 1)
        ]
        final = cumulative_impact(model, design, order=(0, 1))[-1][1]
        assert abs(final - sum(singles)) > 0.01

    def test_order_validation(self):
        indicators = np.ones((4, 2))
        design = make_design(indicators, [1, 0, 1, 0])
        model = make_model([0.0, 0.1, 0.2])
        with pytest.raises(GlmError):
            cumulative_impact(model, design, order=(0,))


class TestImpactReport:
    def test_report_shape_and_baseline(self):
        spec = block_world(n=8000, seed=6, group_sizes=(2, 2), effects=(1.8, 1.2))
        ds, _ = generate(spec, truth_mc_n=100)
        grouping = grouping_from_partition(ds.vocabulary.names, spec.group_partition)
        design = build_design(ds, DesignSpec(grouping=grouping))
        model = fit_logistic(design)
        report = impact_report(
            model, design, n_boot=50, seed=5,
            baseline_scores=ds.any_token_mask.astype(float),
        )
        assert report.groups == ("group_1", "group_2")
        assert len(report.cumulative) == 2
        assert report.cumulative[-1] <= 1.0
        assert all(0.0 <= g.reduction <= 1.0 for g in report.individual)
        assert report.auc > report.baseline_auc
        assert report.baseline_pcr == pytest.approx(ds.pcr())
        fpr, tpr = report.tpr_at_fpr
        assert 0.0 <= fpr <= 1.0 and 0.0 <= tpr <= 1.0

    def test_aic_selection_finds_planted_interaction(self):
        spec = block_world(
            n=40000, seed=8, group_sizes=(2, 2), intercept=-2.5,
            effects=(1.8, 1.4), interactions=((0, 1),), interaction_effects=(-1.2,),
        )
        ds, _ = generate(spec, truth_mc_n=100)
        grouping = grouping_from_partition(ds.vocabulary.names, spec.group_partition)
        chosen = select_interactions_aic(ds, grouping)
        assert (0, 1) in chosen
