"""Factor structure over the latent-correlation matrix.

Pipeline: pick the factor count by parallel analysis against simulated
structure-free references, extract loadings by iterated principal-axis
factoring, varimax-rotate toward simple structure, then partition tokens
into problem groups by their dominant rotated loading.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import FactorAnalysisError, NoFactorError
from .polychoric import PolychoricMatrix, _matrix_values
from .survey import SurveyDataset


@dataclass(frozen=True, eq=False)
class FactorModel:
    """Loadings of each token on each extracted factor.

    variance_explained is per factor, as a fraction of total (token count)
    variance; factors are ordered by it, descending. Heywood tokens had
    their communality clamped to 1 during extraction.
    """

    tokens: tuple[str, ...]
    loadings: np.ndarray
    communalities: np.ndarray
    variance_explained: np.ndarray
    rotation: str  # "none" | "varimax"
    converged: bool
    n_iter: int
    heywood_tokens: tuple[str, ...] = ()

    @property
    def n_factors(self) -> int:
        return self.loadings.shape[1]

    def to_dict(self) -> dict:
        return {
            "tokens": list(self.tokens),
            "loadings": [[float(v) for v in row] for row in self.loadings],
            "communalities": [float(v) for v in self.communalities],
            "variance_explained": [float(v) for v in self.variance_explained],
            "rotation": self.rotation,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "heywood_tokens": list(self.heywood_tokens),
        }


@dataclass(frozen=True)
class ProblemGroup:
    name: str
    members: tuple[str, ...]
    variance_explained: float


@dataclass(frozen=True)
class ProblemGrouping:
    """Partition of tokens into problem groups by dominant loading."""

    groups: tuple[ProblemGroup, ...]
    unassigned: tuple[str, ...]
    threshold: float

    @property
    def group_names(self) -> tuple[str, ...]:
        return tuple(g.name for g in self.groups)

    def members_of(self, index: int) -> tuple[str, ...]:
        return self.groups[index].members

    def to_dict(self) -> dict:
        return {
            "groups": [
                {
                    "name": g.name,
                    "members": list(g.members),
                    "variance_explained": g.variance_explained,
                }
                for g in self.groups
            ],
            "unassigned": list(self.unassigned),
            "threshold": self.threshold,
        }


@dataclass(frozen=True, eq=False)
class ParallelAnalysisResult:
    n_factors: int
    observed_eigenvalues: np.ndarray
    reference_quantiles: np.ndarray
    reps: int
    quantile: float

    def to_dict(self) -> dict:
        return {
            "n_factors": self.n_factors,
            "observed_eigenvalues": [float(v) for v in self.observed_eigenvalues],
            "reference_quantiles": [float(v) for v in self.reference_quantiles],
            "reps": self.reps,
            "quantile": self.quantile,
        }


def _reference_eigenvalues(
    prevalences: np.ndarray, n: int, seed: int, rep: int
) -> np.ndarray:
    rng = np.random.default_rng([seed, rep])
    x = rng.random((n, prevalences.size)) < prevalences
    values, _, _ = _matrix_values(x)
    return np.sort(np.linalg.eigvalsh(values))[::-1]


def parallel_analysis_detail(
    corr: PolychoricMatrix,
    ds: SurveyDataset,
    reps: int = 100,
    quantile: float = 0.95,
    *,
    seed: int,
    threads: int = 1,
) -> ParallelAnalysisResult:
    """Factor count plus the eigenvalue evidence behind it.

    References are independent binary columns with the observed marginal
    prevalences, run through the identical latent-correlation estimator, so
    the noise floor reflects the estimator and not just sampling. The kept
    count is the number of leading observed eigenvalues above the per-rank
    reference quantile.
    """
    if reps < 10:
        raise FactorAnalysisError("reps must be at least 10")
    if corr.tokens != ds.vocabulary.names:
        raise FactorAnalysisError("correlation matrix does not match dataset tokens")
    observed = np.sort(np.linalg.eigvalsh(corr.values))[::-1]
    prevalences = ds.token_matrix.mean(axis=0)
    n = ds.n_records
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reference = list(
                pool.map(
                    lambda r: _reference_eigenvalues(prevalences, n, seed, r),
                    range(reps),
                )
            )
    else:
        reference = [
            _reference_eigenvalues(prevalences, n, seed, r) for r in range(reps)
        ]
    ref_q = np.quantile(np.stack(reference), quantile, axis=0)
    k = 0
    for obs, ref in zip(observed, ref_q):
        if obs > ref:
            k += 1
        else:
            break
    return ParallelAnalysisResult(
        n_factors=k,
        observed_eigenvalues=observed,
        reference_quantiles=ref_q,
        reps=reps,
        quantile=quantile,
    )


def parallel_analysis(
    corr: PolychoricMatrix,
    ds: SurveyDataset,
    reps: int = 100,
    quantile: float = 0.95,
    *,
    seed: int,
    threads: int = 1,
) -> int:
    result = parallel_analysis_detail(
        corr, ds, reps=reps, quantile=quantile, seed=seed, threads=threads
    )
    if result.n_factors == 0:
        raise NoFactorError("no factor exceeds noise floor")
    return result.n_factors


def _initial_communalities(values: np.ndarray) -> np.ndarray:
    """Squared multiple correlations; falls back to the largest absolute
    off-diagonal correlation per row when the matrix cannot be inverted."""
    p = values.shape[0]
    try:
        inv = np.linalg.inv(values)
        diag = np.diag(inv)
        if (diag <= 0).any() or not np.isfinite(diag).all():
            raise np.linalg.LinAlgError
        smc = 1.0 - 1.0 / diag
        return np.clip(smc, 0.0, 1.0)
    except np.linalg.LinAlgError:
        off = np.abs(values - np.eye(p))
        return off.max(axis=1)


def _sign_fix(loadings: np.ndarray) -> np.ndarray:
    out = loadings.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            out[:, j] = -col
    return out


def extract_factors(
    corr: PolychoricMatrix, k: int, max_iter: int = 100, tol: float = 1e-6
) -> FactorModel:
    """Iterated principal-axis factoring of the correlation matrix.

    Communalities start at the squared multiple correlations and are refined
    by reconstructing from the top-k eigenpairs of the reduced matrix until
    the largest change falls under ``tol``. Communalities above 1 (Heywood)
    are clamped and flagged. Non-convergence returns the best iterate with
    ``converged`` False.
    """
    values = corr.values
    p = values.shape[0]
    if not 1 <= k < p:
        raise FactorAnalysisError(f"factor count {k} must be in 1..{p - 1}")
    h2 = _initial_communalities(values)
    heywood = np.zeros(p, dtype=bool)
    loadings = np.zeros((p, k))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        reduced = values.copy()
        np.fill_diagonal(reduced, h2)
        eigvals, eigvecs = np.linalg.eigh(reduced)
        top = slice(p - 1, p - 1 - k, -1)
        lam = np.clip(eigvals[top], 0.0, None)
        loadings = eigvecs[:, top] * np.sqrt(lam)
        h2_new = (loadings**2).sum(axis=1)
        over = h2_new > 1.0
        if over.any():
            heywood |= over
            scale = np.ones(p)
            scale[over] = 1.0 / np.sqrt(h2_new[over])
            loadings = loadings * scale[:, None]
            h2_new = np.minimum(h2_new, 1.0)
        change = np.max(np.abs(h2_new - h2))
        h2 = h2_new
        if change < tol:
            converged = True
            break
    loadings = _sign_fix(loadings)
    explained = (loadings**2).sum(axis=0) / p
    order = np.argsort(-explained, kind="stable")
    loadings = loadings[:, order]
    explained = explained[order]
    return FactorModel(
        tokens=corr.tokens,
        loadings=loadings,
        communalities=h2,
        variance_explained=explained,
        rotation="none",
        converged=converged,
        n_iter=it,
        heywood_tokens=tuple(
            corr.tokens[i] for i in range(p) if heywood[i]
        ),
    )


def varimax_criterion(loadings: np.ndarray, normalize: bool = False) -> float:
    """Sum over factors of the variance of squared loadings."""
    lam = np.asarray(loadings, dtype=np.float64)
    if normalize:
        h = np.sqrt((lam**2).sum(axis=1))
        lam = lam / np.where(h > 0, h, 1.0)[:, None]
    sq = lam**2
    return float(sq.var(axis=0).sum())


def _varimax_rotation(
    lam: np.ndarray, tol: float, max_iter: int
) -> tuple[np.ndarray, int]:
    """Orthogonal rotation maximizing the varimax criterion (SVD updates).

    The singular-value sum is the objective surrogate and is non-decreasing
    across sweeps.
    """
    p, k = lam.shape
    rotation = np.eye(k)
    objective = 0.0
    it = 0
    for it in range(1, max_iter + 1):
        basis = lam @ rotation
        gradient = lam.T @ (
            basis**3 - basis @ np.diag((basis**2).sum(axis=0)) / p
        )
        u, s, vt = np.linalg.svd(gradient)
        rotation = u @ vt
        new_objective = s.sum()
        if new_objective <= objective * (1.0 + tol):
            break
        objective = new_objective
    return rotation, it


def varimax(model: FactorModel, tol: float = 1e-8, max_iter: int = 1000) -> FactorModel:
    """Varimax-rotate a factor model (row-normalized during rotation).

    Rotation is orthogonal, so per-token communalities are preserved. The
    rotated factors are re-sorted by explained variance and sign-fixed so
    each column's largest loading is positive. A single factor is returned
    unchanged apart from the rotation tag.
    """
    lam = model.loadings
    p, k = lam.shape
    if k == 1:
        rotated = lam.copy()
    else:
        h = np.sqrt((lam**2).sum(axis=1))
        h_safe = np.where(h > 0, h, 1.0)
        normalized = lam / h_safe[:, None]
        rotation, _ = _varimax_rotation(normalized, tol, max_iter)
        rotated = (normalized @ rotation) * h_safe[:, None]
    rotated = _sign_fix(rotated)
    explained = (rotated**2).sum(axis=0) / p
    order = np.argsort(-explained, kind="stable")
    rotated = rotated[:, order]
    explained = explained[order]
    return FactorModel(
        tokens=model.tokens,
        loadings=rotated,
        communalities=(rotated**2).sum(axis=1),
        variance_explained=explained,
        rotation="varimax",
        converged=model.converged,
        n_iter=model.n_iter,
        heywood_tokens=model.heywood_tokens,
    )


def assign_groups(model: FactorModel, threshold: float = 0.5) -> ProblemGrouping:
    """Partition tokens by dominant absolute loading at or above ``threshold``.

    Ties go to the lower factor index. Groups keep the factor order, which
    is descending explained variance, and are named group_1..group_k for the
    analyst to rename.
    """
    if model.rotation == "none" and model.n_factors > 1:
        raise FactorAnalysisError("assign_groups expects a rotated model")
    absolute = np.abs(model.loadings)
    dominant = absolute.argmax(axis=1)
    strength = absolute[np.arange(len(model.tokens)), dominant]
    assigned = strength >= threshold
    if not assigned.any():
        raise FactorAnalysisError("every token is below the loading threshold")
    groups = tuple(
        ProblemGroup(
            name=f"group_{f + 1}",
            members=tuple(
                tok
                for i, tok in enumerate(model.tokens)
                if assigned[i] and dominant[i] == f
            ),
            variance_explained=float(model.variance_explained[f]),
        )
        for f in range(model.n_factors)
    )
    unassigned = tuple(
        tok for i, tok in enumerate(model.tokens) if not assigned[i]
    )
    return ProblemGrouping(groups=groups, unassigned=unassigned, threshold=threshold)
