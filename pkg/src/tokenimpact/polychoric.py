"""Latent-correlation (tetrachoric) estimation between binary problem tokens.

Each token is modelled as a dichotomised continuous trait: the pair of traits
is standard bivariate normal and a token fires when its trait exceeds a
threshold. The threshold is recovered from the marginal selection rate and
the correlation by maximum likelihood over the observed 2x2 table.

The numerical kernel is a fixed-order Gauss-Legendre scheme for the upper
orthant probability of the bivariate normal (Drezner-Wesolowsky integral for
moderate correlation, a singularity-subtracted expansion near |rho| = 1),
accurate to well below 1e-7 absolute error.
"""

from __future__ import annotations

from dataclasses import dataclass

import math

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import PolychoricError
from .survey import SurveyDataset

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)

# Likelihood cells are clipped here before taking logs; zero cell
# probabilities only occur at the rho boundary which the optimizer avoids.
_PROB_FLOOR = 1e-300

_RHO_BOUND = 1.0 - 1e-12
_DEFAULT_TOL = 1e-8


def _bvn_moderate(h: np.ndarray, k: np.ndarray, r: np.ndarray) -> np.ndarray:
    """P(X > h, Y > k) for |r| < 0.925 via the arcsine-path integral."""
    asr = np.arcsin(r)
    hk = h * k
    hs = 0.5 * (h * h + k * k)
    sn = np.sin(0.5 * asr[..., None] * (_GL_NODES + 1.0))
    integrand = np.exp((sn * hk[..., None] - hs[..., None]) / (1.0 - sn * sn))
    return ndtr(-h) * ndtr(-k) + (asr / (4.0 * np.pi)) * (integrand @ _GL_WEIGHTS)


def _bvn_extreme(h: np.ndarray, k: np.ndarray, r: np.ndarray) -> np.ndarray:
    """P(X > h, Y > k) for 0.925 <= |r| < 1; expansion around the |r| = 1 limit."""
    s = np.sign(r)
    k2 = k * s
    hk = h * k2
    a2s = (1.0 - r) * (1.0 + r)
    a = np.sqrt(a2s)
    bs = (h - k2) ** 2
    c = (4.0 - hk) / 8.0
    d = (12.0 - hk) / 16.0
    asr0 = -0.5 * (bs / a2s + hk)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        term0 = a * np.exp(np.where(asr0 > -100.0, asr0, -np.inf)) * (
            1.0 - c * (bs - a2s) * (1.0 - d * bs / 5.0) / 3.0 + c * d * a2s * a2s / 5.0
        )
        bvn = np.where(asr0 > -100.0, term0, 0.0)
        b = np.sqrt(bs)
        tail = (
            np.exp(np.where(hk > -100.0, -hk, 0.0) / 2.0)
            * math.sqrt(2.0 * math.pi)
            * ndtr(-b / a)
            * b
            * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0)
        )
        bvn = bvn - np.where(hk > -100.0, tail, 0.0)
        half = a / 2.0
        for node, weight in zip(_GL_NODES, _GL_WEIGHTS):
            xs = (half * (node + 1.0)) ** 2
            rs = np.sqrt(1.0 - xs)
            asr_i = -0.5 * (bs / xs + hk)
            ok = asr_i > -100.0
            term = (
                half
                * weight
                * np.exp(np.where(ok, asr_i, -np.inf))
                * (
                    np.exp(-hk * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs
                    - (1.0 + c * xs * (1.0 + d * xs))
                )
            )
            bvn = bvn + np.where(ok, term, 0.0)
    bvn = -bvn / (2.0 * math.pi)
    positive = bvn + ndtr(-np.maximum(h, k))
    negative = -bvn + np.maximum(0.0, ndtr(-h) - ndtr(k))
    return np.where(s > 0, positive, negative)


def _bvn_upper(h: np.ndarray, k: np.ndarray, r: np.ndarray) -> np.ndarray:
    h, k, r = np.broadcast_arrays(
        np.asarray(h, dtype=np.float64),
        np.asarray(k, dtype=np.float64),
        np.asarray(r, dtype=np.float64),
    )
    out = np.empty(h.shape, dtype=np.float64)
    ar = np.abs(r)
    boundary = ar >= 1.0
    moderate = ar < 0.925
    extreme = ~moderate & ~boundary
    if boundary.any():
        hb, kb, rb = h[boundary], k[boundary], r[boundary]
        upper = ndtr(-np.maximum(hb, kb))  # X = Y
        lower = np.maximum(0.0, ndtr(-hb) - ndtr(kb))  # X = -Y
        out[boundary] = np.where(rb > 0, upper, lower)
    if moderate.any():
        out[moderate] = _bvn_moderate(h[moderate], k[moderate], r[moderate])
    if extreme.any():
        out[extreme] = _bvn_extreme(h[extreme], k[extreme], r[extreme])
    return np.clip(out, 0.0, 1.0)


def bvn_upper(tau_x: float, tau_y: float, rho: float) -> float:
    """P(X > tau_x, Y > tau_y) for a standard bivariate normal pair.

    Handles the degenerate boundaries rho = +-1 by their limit formulas.
    """
    if not abs(rho) <= 1.0:
        raise PolychoricError(f"correlation {rho!r} outside [-1, 1]")
    return float(_bvn_upper(np.float64(tau_x), np.float64(tau_y), np.float64(rho)))


@dataclass(frozen=True)
class ContingencyTable2x2:
    """Cross-tabulated counts of two binary tokens.

    Cell ``nxy`` counts records with the first token equal to x and the
    second equal to y. Counts may be fractional (for example exact cell
    proportions); only relative weights enter the likelihood.
    """

    n00: float
    n01: float
    n10: float
    n11: float

    def __post_init__(self):
        cells = (self.n00, self.n01, self.n10, self.n11)
        if any(c < 0 for c in cells):
            raise PolychoricError("negative cell count")
        if sum(cells) < 1.0 - 1e-12:
            raise PolychoricError("table total must be at least 1")

    @classmethod
    def from_arrays(cls, x, y) -> "ContingencyTable2x2":
        xa = np.asarray(x, dtype=bool)
        ya = np.asarray(y, dtype=bool)
        if xa.shape != ya.shape:
            raise PolychoricError("series length mismatch")
        return cls(
            n00=float((~xa & ~ya).sum()),
            n01=float((~xa & ya).sum()),
            n10=float((xa & ~ya).sum()),
            n11=float((xa & ya).sum()),
        )

    @property
    def total(self) -> float:
        return self.n00 + self.n01 + self.n10 + self.n11


@dataclass(frozen=True)
class PolychoricEstimate:
    rho: float
    tau_x: float
    tau_y: float
    loglik: float
    converged: bool
    corrected: bool


def _loglik_batch(
    cells: np.ndarray, px: np.ndarray, py: np.ndarray,
    tx: np.ndarray, ty: np.ndarray, rho: np.ndarray,
) -> np.ndarray:
    """Multinomial log-likelihood of each table at its candidate rho."""
    p11 = _bvn_upper(tx, ty, rho)
    p10 = px - p11
    p01 = py - p11
    p00 = 1.0 - px - py + p11
    probs = np.stack([p00, p01, p10, p11], axis=-1)
    probs = np.clip(probs, _PROB_FLOOR, None)
    return np.sum(cells * np.log(probs), axis=-1)


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _maximize_rho(
    cells: np.ndarray, px: np.ndarray, py: np.ndarray,
    tx: np.ndarray, ty: np.ndarray, tol: float = _DEFAULT_TOL,
) -> tuple[np.ndarray, np.ndarray]:
    """Golden-section maximum of the table likelihood over rho in (-1, 1).

    Runs lock-step over a batch of tables; the iteration count is fixed by
    the tolerance, so results are independent of batch composition order.
    """
    m = cells.shape[0]
    lo = np.full(m, -_RHO_BOUND)
    hi = np.full(m, _RHO_BOUND)
    n_iter = int(math.ceil(math.log(tol / (2.0 * _RHO_BOUND)) / math.log(_GOLDEN)))
    x1 = hi - _GOLDEN * (hi - lo)
    x2 = lo + _GOLDEN * (hi - lo)
    f1 = _loglik_batch(cells, px, py, tx, ty, x1)
    f2 = _loglik_batch(cells, px, py, tx, ty, x2)
    for _ in range(n_iter):
        left = f1 > f2
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        x_new = np.where(left, hi - _GOLDEN * (hi - lo), lo + _GOLDEN * (hi - lo))
        f_new = _loglik_batch(cells, px, py, tx, ty, x_new)
        x1_old, f1_old = x1, f1
        x1 = np.where(left, x_new, x2)
        f1 = np.where(left, f_new, f2)
        x2 = np.where(left, x1_old, x_new)
        f2 = np.where(left, f1_old, f_new)
    rho = 0.5 * (lo + hi)
    loglik = _loglik_batch(cells, px, py, tx, ty, rho)
    return rho, loglik


def _prepare_tables(
    raw_cells: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Continuity-correct zero cells and derive marginals and thresholds."""
    cells = raw_cells.astype(np.float64).copy()
    corrected = (cells == 0).any(axis=1)
    cells[cells == 0] = 0.5
    totals = cells.sum(axis=1)
    px = (cells[:, 2] + cells[:, 3]) / totals
    py = (cells[:, 1] + cells[:, 3]) / totals
    bad = (px <= 0) | (px >= 1) | (py <= 0) | (py >= 1)
    if bad.any():
        raise PolychoricError("degenerate marginal")
    tx = -ndtri(px)
    ty = -ndtri(py)
    return cells, px, py, tx, ty, corrected


def estimate_polychoric(table: ContingencyTable2x2) -> PolychoricEstimate:
    """Two-step maximum-likelihood latent correlation for one 2x2 table.

    Thresholds come from the inverse normal of the marginal proportions; rho
    maximizes the multinomial likelihood of the four cells at those
    thresholds. Zero cells receive a +0.5 continuity correction (flagged via
    ``corrected``) since they would otherwise force |rho| = 1.
    """
    raw = np.array([[table.n00, table.n01, table.n10, table.n11]], dtype=np.float64)
    cells, px, py, tx, ty, corrected = _prepare_tables(raw)
    rho, loglik = _maximize_rho(cells, px, py, tx, ty)
    return PolychoricEstimate(
        rho=float(rho[0]),
        tau_x=float(tx[0]),
        tau_y=float(ty[0]),
        loglik=float(loglik[0]),
        converged=True,
        corrected=bool(corrected[0]),
    )


@dataclass(frozen=True, eq=False)
class PolychoricMatrix:
    """Symmetric latent-correlation matrix with unit diagonal.

    When the pairwise estimates assemble into an indefinite matrix it is
    repaired by eigenvalue clipping and rescaled back to unit diagonal;
    ``psd_repaired`` records that, with the offending eigenvalue kept for
    the report.
    """

    tokens: tuple[str, ...]
    values: np.ndarray
    psd_repaired: bool
    min_eigenvalue_before: float

    def to_dict(self) -> dict:
        return {
            "tokens": list(self.tokens),
            "values": [[float(v) for v in row] for row in self.values],
            "psd_repaired": self.psd_repaired,
            "min_eigenvalue_before": self.min_eigenvalue_before,
        }


_EIG_FLOOR = 1e-8


def repair_to_psd(values: np.ndarray, floor: float = _EIG_FLOOR) -> tuple[np.ndarray, bool, float]:
    """Clip eigenvalues at ``floor`` and rescale to unit diagonal.

    Rescaling can pull the smallest eigenvalue slightly back under the
    floor, so the clip level is raised geometrically until the repaired
    matrix clears it.
    """
    sym = 0.5 * (values + values.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    min_before = float(eigvals.min())
    if min_before >= floor:
        out = sym.copy()
        np.fill_diagonal(out, 1.0)
        return out, False, min_before
    level = floor
    for _ in range(64):
        clipped = np.clip(eigvals, level, None)
        rebuilt = (eigvecs * clipped) @ eigvecs.T
        scale = np.sqrt(np.diag(rebuilt))
        repaired = rebuilt / np.outer(scale, scale)
        repaired = 0.5 * (repaired + repaired.T)
        np.fill_diagonal(repaired, 1.0)
        if np.linalg.eigvalsh(repaired).min() >= floor:
            return repaired, True, min_before
        level *= 4.0
    raise PolychoricError("positive semidefinite repair did not converge")


def _pair_cells(token_matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All-pairs 2x2 cell counts, one row per (i, j) pair with i < j."""
    x = token_matrix.astype(np.float64)
    n = x.shape[0]
    counts = x.sum(axis=0)
    both = x.T @ x
    iu, ju = np.triu_indices(x.shape[1], k=1)
    n11 = both[iu, ju]
    n10 = counts[iu] - n11
    n01 = counts[ju] - n11
    n00 = n - counts[iu] - counts[ju] + n11
    cells = np.stack([n00, n01, n10, n11], axis=1)
    pairs = np.stack([iu, ju], axis=1)
    return cells, pairs


def _matrix_values(token_matrix: np.ndarray) -> tuple[np.ndarray, bool, float]:
    """Pairwise latent correlations for a binary matrix, PSD-repaired."""
    p = token_matrix.shape[1]
    raw_cells, pairs = _pair_cells(token_matrix)
    cells, px, py, tx, ty, _ = _prepare_tables(raw_cells)
    rho, _ = _maximize_rho(cells, px, py, tx, ty)
    values = np.eye(p)
    values[pairs[:, 0], pairs[:, 1]] = rho
    values[pairs[:, 1], pairs[:, 0]] = rho
    return repair_to_psd(values)


def polychoric_matrix(ds: SurveyDataset) -> PolychoricMatrix:
    """Latent-correlation matrix over all token pairs of a dataset."""
    if len(ds.vocabulary) < 2:
        raise PolychoricError("at least two tokens required")
    if ds.n_records == 0:
        raise PolychoricError("empty dataset")
    try:
        values, repaired, min_before = _matrix_values(ds.token_matrix)
    except PolychoricError as exc:
        # rerun pairwise to find the offending pair for the message
        raw_cells, pairs = _pair_cells(ds.token_matrix)
        for row, (i, j) in zip(raw_cells, pairs):
            try:
                _prepare_tables(row[None, :])
            except PolychoricError:
                raise PolychoricError(
                    f"degenerate marginal for pair "
                    f"({ds.vocabulary.names[i]}, {ds.vocabulary.names[j]})"
                ) from None
        raise exc
    values.setflags(write=False)
    return PolychoricMatrix(
        tokens=ds.vocabulary.names,
        values=values,
        psd_repaired=repaired,
        min_eigenvalue_before=min_before,
    )
