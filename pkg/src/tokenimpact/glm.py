"""Logistic model on problem-group indicators and counterfactual reductions.

A group indicator is the OR of its member tokens. The model predicts the
poor-call label from the indicators plus selected pairwise interactions;
"fixing" a group zeroes its indicator everywhere (recomputing interactions)
and the relative drop in the mean predicted poor probability is the group's
impact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import GlmError
from .factors import ProblemGrouping
from .survey import SurveyDataset


@dataclass(frozen=True)
class DesignSpec:
    """Model terms: one main effect per group plus optional interactions."""

    grouping: ProblemGrouping
    interactions: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        pairs = []
        seen = set()
        n = len(self.grouping.groups)
        for a, b in self.interactions:
            a, b = int(a), int(b)
            if a == b or not (0 <= a < n and 0 <= b < n):
                raise GlmError(f"bad interaction pair ({a}, {b})")
            key = (min(a, b), max(a, b))
            if key in seen:
                raise GlmError(f"duplicate interaction pair {key}")
            seen.add(key)
            pairs.append(key)
        object.__setattr__(self, "interactions", tuple(pairs))


@dataclass(frozen=True, eq=False)
class Design:
    """Materialized design matrix (intercept first) plus its building blocks."""

    columns: tuple[str, ...]
    matrix: np.ndarray
    response: np.ndarray
    group_indicators: np.ndarray
    group_names: tuple[str, ...]
    interactions: tuple[tuple[int, int], ...]

    @property
    def n_records(self) -> int:
        return self.matrix.shape[0]

    def with_groups_fixed(self, fixed) -> "Design":
        """Counterfactual design: the given group indicators forced to zero."""
        indicators = self.group_indicators.copy()
        for g in fixed:
            indicators[:, g] = 0.0
        matrix = _assemble(indicators, self.interactions)
        return Design(
            columns=self.columns,
            matrix=matrix,
            response=self.response,
            group_indicators=indicators,
            group_names=self.group_names,
            interactions=self.interactions,
        )


def _assemble(indicators: np.ndarray, pairs) -> np.ndarray:
    n = indicators.shape[0]
    cols = [np.ones(n)]
    cols.extend(indicators.T)
    for a, b in pairs:
        cols.append(indicators[:, a] * indicators[:, b])
    return np.column_stack(cols)


def build_design(ds: SurveyDataset, spec: DesignSpec) -> Design:
    """Group indicators (OR of member tokens) with interactions; response is
    the poor-call label."""
    grouping = spec.grouping
    if not grouping.groups:
        raise GlmError("grouping has no groups")
    n = ds.n_records
    indicators = np.zeros((n, len(grouping.groups)))
    for j, group in enumerate(grouping.groups):
        if not group.members:
            raise GlmError(f"group {group.name} is empty")
        cols = [ds.vocabulary.index(tok) for tok in group.members]
        indicators[:, j] = ds.token_matrix[:, cols].any(axis=1)
    names = grouping.group_names
    columns = (
        ("intercept",)
        + names
        + tuple(f"{names[a]}:{names[b]}" for a, b in spec.interactions)
    )
    return Design(
        columns=columns,
        matrix=_assemble(indicators, spec.interactions),
        response=ds.poor_mask.astype(np.float64),
        group_indicators=indicators,
        group_names=names,
        interactions=spec.interactions,
    )


@dataclass(frozen=True, eq=False)
class LogisticModel:
    terms: tuple[str, ...]
    coefficients: np.ndarray
    covariance: np.ndarray  # asymptotic, from the penalized information matrix
    ridge: float
    converged: bool
    iterations: int
    loglik: float

    def predict_proba(self, matrix: np.ndarray) -> np.ndarray:
        return expit(matrix @ self.coefficients)

    def to_dict(self) -> dict:
        return {
            "terms": list(self.terms),
            "coefficients": [float(c) for c in self.coefficients],
            "ridge": self.ridge,
            "converged": self.converged,
            "iterations": self.iterations,
            "loglik": self.loglik,
        }


def _unpack(design, response):
    if isinstance(design, Design):
        matrix = design.matrix
        y = design.response if response is None else np.asarray(response, np.float64)
        terms = design.columns
    else:
        matrix = np.asarray(design, dtype=np.float64)
        if response is None:
            raise GlmError("response required with a raw design matrix")
        y = np.asarray(response, dtype=np.float64)
        terms = tuple(f"x{j}" for j in range(matrix.shape[1]))
    if matrix.ndim != 2 or matrix.shape[0] != y.shape[0]:
        raise GlmError("design matrix and response shapes do not match")
    return matrix, y, terms


def fit_logistic(
    design,
    response=None,
    ridge: float = 1e-6,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> LogisticModel:
    """Penalized maximum likelihood by iteratively reweighted least squares.

    The ridge penalty excludes the intercept (the first column). Newton
    steps are halved whenever they would decrease the penalized likelihood,
    so accepted iterates are monotone. Non-convergence is flagged, not
    fatal; a singular weighted system raises.
    """
    matrix, y, terms = _unpack(design, response)
    if not ((y == 0).any() and (y == 1).any()):
        raise GlmError("response must contain both classes")
    n, p = matrix.shape
    penalized = np.ones(p)
    penalized[0] = 0.0
    beta = np.zeros(p)
    prevalence = y.mean()
    beta[0] = np.log(prevalence / (1.0 - prevalence))

    def objective(b: np.ndarray) -> float:
        eta = matrix @ b
        ll = float(y @ eta - np.logaddexp(0.0, eta).sum())
        return ll - 0.5 * ridge * float((penalized * b * b).sum())

    current = objective(beta)
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        mu = expit(matrix @ beta)
        weights = np.clip(mu * (1.0 - mu), 1e-10, None)
        gradient = matrix.T @ (y - mu) - ridge * penalized * beta
        hessian = (matrix * weights[:, None]).T @ matrix + ridge * np.diag(penalized)
        try:
            delta = np.linalg.solve(hessian, gradient)
        except np.linalg.LinAlgError:
            raise GlmError("singular weighted system") from None
        step = 1.0
        candidate = beta + delta
        value = objective(candidate)
        while value < current - 1e-12 and step > 1e-10:
            step *= 0.5
            candidate = beta + step * delta
            value = objective(candidate)
        if value < current - 1e-12:
            break  # no ascent direction left; report best iterate
        change = float(np.max(np.abs(candidate - beta)))
        beta = candidate
        current = value
        if change < tol:
            converged = True
            break
    eta = matrix @ beta
    loglik = float(y @ eta - np.logaddexp(0.0, eta).sum())
    mu = expit(eta)
    weights = np.clip(mu * (1.0 - mu), 1e-10, None)
    information = (matrix * weights[:, None]).T @ matrix + ridge * np.diag(penalized)
    try:
        covariance = np.linalg.inv(information)
    except np.linalg.LinAlgError:
        raise GlmError("singular information matrix") from None
    return LogisticModel(
        terms=terms,
        coefficients=beta,
        covariance=covariance,
        ridge=ridge,
        converged=converged,
        iterations=iterations,
        loglik=loglik,
    )


def auc_score(scores, labels) -> float:
    """Mann-Whitney AUC with average ranks for ties."""
    from scipy.stats import rankdata

    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise GlmError("AUC requires both classes")
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True, eq=False)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray

    def tpr_at_fpr(self, fpr: float) -> float:
        return float(np.interp(fpr, self.fpr, self.tpr))


def roc_curve(scores, labels) -> RocCurve:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise GlmError("ROC requires both classes")
    order = np.argsort(-s, kind="stable")
    sorted_scores = s[order]
    sorted_labels = y[order]
    distinct = np.r_[np.flatnonzero(np.diff(sorted_scores)), y.size - 1]
    tp = np.cumsum(sorted_labels)[distinct]
    fp = np.cumsum(~sorted_labels)[distinct]
    fpr = np.r_[0.0, fp / n_neg]
    tpr = np.r_[0.0, tp / n_pos]
    thresholds = np.r_[np.inf, sorted_scores[distinct]]
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=thresholds)


@dataclass(frozen=True, eq=False)
class Evaluation:
    auc: float
    roc: RocCurve


def evaluate(model: LogisticModel, design, response=None) -> Evaluation:
    """AUC (rank statistic, tie-corrected) and the ROC of a fitted model."""
    matrix, y, _ = _unpack(design, response)
    scores = model.predict_proba(matrix)
    return Evaluation(auc=auc_score(scores, y), roc=roc_curve(scores, y))


@dataclass(frozen=True)
class GroupImpact:
    group: str
    reduction: float
    ci_lo: float
    ci_hi: float

    def to_dict(self) -> dict:
        return {
            "group": self.group,
            "reduction": self.reduction,
            "ci_lo": self.ci_lo,
            "ci_hi": self.ci_hi,
        }


def _relative_reduction(p_orig: np.ndarray, p_fix: np.ndarray) -> float:
    return float(1.0 - p_fix.mean() / p_orig.mean())


def _coefficient_factor(covariance: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(covariance)
    except np.linalg.LinAlgError:
        eigvals, eigvecs = np.linalg.eigh(0.5 * (covariance + covariance.T))
        return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def group_fix_impact(
    model: LogisticModel,
    design: Design,
    group_index: int,
    n_boot: int = 200,
    *,
    seed: int,
) -> GroupImpact:
    """Relative reduction in mean predicted poor probability when one group
    is fixed, with a percentile bootstrap CI.

    Each replicate resamples records with replacement and draws coefficients
    from the fit's asymptotic normal, so the interval carries both sampling
    and estimation noise without refitting the model. Replicates use
    per-index RNG streams, making the result independent of evaluation order.
    """
    if not 0 <= group_index < len(design.group_names):
        raise GlmError(f"group index {group_index} out of range")
    fixed_matrix = design.with_groups_fixed([group_index]).matrix
    p_orig = model.predict_proba(design.matrix)
    p_fix = expit(fixed_matrix @ model.coefficients)
    reduction = _relative_reduction(p_orig, p_fix)
    n = design.n_records
    factor = _coefficient_factor(model.covariance)
    replicates = np.empty(n_boot)
    for b in range(n_boot):
        rng = np.random.default_rng([seed, group_index, b])
        idx = rng.integers(0, n, size=n)
        beta = model.coefficients + factor @ rng.standard_normal(len(model.coefficients))
        replicates[b] = _relative_reduction(
            expit(design.matrix[idx] @ beta), expit(fixed_matrix[idx] @ beta)
        )
    lo, hi = np.percentile(replicates, [2.5, 97.5])
    return GroupImpact(
        group=design.group_names[group_index],
        reduction=reduction,
        ci_lo=float(lo),
        ci_hi=float(hi),
    )


def cumulative_impact(
    model: LogisticModel, design: Design, order=None
) -> tuple[tuple[int, float], ...]:
    """Running relative reduction as groups are fixed one at a time.

    Default order is descending individual reduction (ties by group index).
    """
    p_orig = model.predict_proba(design.matrix)
    n_groups = len(design.group_names)
    if order is None:
        singles = [
            _relative_reduction(
                p_orig, model.predict_proba(design.with_groups_fixed([g]).matrix)
            )
            for g in range(n_groups)
        ]
        order = sorted(range(n_groups), key=lambda g: (-singles[g], g))
    else:
        order = [int(g) for g in order]
        if sorted(order) != list(range(n_groups)):
            raise GlmError("order must be a permutation of all group indices")
    out = []
    fixed: list[int] = []
    for g in order:
        fixed.append(g)
        p_fix = model.predict_proba(design.with_groups_fixed(fixed).matrix)
        out.append((g, _relative_reduction(p_orig, p_fix)))
    return tuple(out)


@dataclass(frozen=True, eq=False)
class ImpactReport:
    """Per-group and cumulative counterfactual reductions plus model quality."""

    groups: tuple[str, ...]
    individual: tuple[GroupImpact, ...]
    order: tuple[int, ...]
    cumulative: tuple[float, ...]
    auc: float
    baseline_auc: float
    tpr_at_fpr: tuple[float, float]
    baseline_pcr: float

    def to_dict(self) -> dict:
        return {
            "groups": list(self.groups),
            "individual": [g.to_dict() for g in self.individual],
            "order": list(self.order),
            "cumulative": list(self.cumulative),
            "auc": self.auc,
            "baseline_auc": self.baseline_auc,
            "tpr_at_fpr": list(self.tpr_at_fpr),
            "baseline_pcr": self.baseline_pcr,
        }


def impact_report(
    model: LogisticModel,
    design: Design,
    n_boot: int = 200,
    *,
    seed: int,
    order=None,
    baseline_scores=None,
) -> ImpactReport:
    """Assemble the full counterfactual report.

    ``baseline_scores`` defaults to the any-group indicator; its false
    positive rate anchors the reported model TPR so the comparison is at
    matched operating points.
    """
    y = design.response
    individual = tuple(
        group_fix_impact(model, design, g, n_boot=n_boot, seed=seed)
        for g in range(len(design.group_names))
    )
    cumulative = cumulative_impact(model, design, order=order)
    evaluation = evaluate(model, design)
    if baseline_scores is None:
        baseline_scores = design.group_indicators.any(axis=1).astype(np.float64)
    else:
        baseline_scores = np.asarray(baseline_scores, dtype=np.float64)
    baseline_auc = auc_score(baseline_scores, y)
    negatives = y == 0
    baseline_fpr = float(baseline_scores[negatives].mean()) if negatives.any() else 0.0
    return ImpactReport(
        groups=design.group_names,
        individual=individual,
        order=tuple(g for g, _ in cumulative),
        cumulative=tuple(r for _, r in cumulative),
        auc=evaluation.auc,
        baseline_auc=baseline_auc,
        tpr_at_fpr=(baseline_fpr, evaluation.roc.tpr_at_fpr(baseline_fpr)),
        baseline_pcr=float(y.mean()),
    )


def select_interactions_aic(
    ds: SurveyDataset,
    grouping: ProblemGrouping,
    ridge: float = 1e-6,
    max_pairs: int | None = None,
) -> tuple[tuple[int, int], ...]:
    """Greedy forward selection of interaction pairs by AIC."""
    n_groups = len(grouping.groups)
    candidates = [
        (a, b) for a in range(n_groups) for b in range(a + 1, n_groups)
    ]
    chosen: list[tuple[int, int]] = []

    def aic(pairs) -> float:
        design = build_design(ds, DesignSpec(grouping=grouping, interactions=tuple(pairs)))
        model = fit_logistic(design, ridge=ridge)
        return 2.0 * len(model.coefficients) - 2.0 * model.loglik

    best = aic(chosen)
    while candidates and (max_pairs is None or len(chosen) < max_pairs):
        scored = [(aic(chosen + [c]), c) for c in candidates]
        value, pair = min(scored, key=lambda t: t[0])
        if value >= best:
            break
        best = value
        chosen.append(pair)
        candidates.remove(pair)
    return tuple(chosen)
