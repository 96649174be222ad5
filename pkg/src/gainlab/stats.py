"""Hypothesis-testing pipeline for gain-grid sweep outcomes.

Implements the pieces end to end: binomial logistic regression fit by
iteratively reweighted least squares on (log2 Kp, log2 Kd), one-sided
Barnard's exact unconditional test (score statistic, nuisance maximized
over a 2001-point grid with golden-section refinement), one-sided
Mann-Whitney U (exact by enumeration for small tie-free samples, normal
approximation with tie and continuity corrections otherwise), OLS on
log-transformed errors, and the Bonferroni correction. All operations are
pure functions of their inputs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .control import GainConfig, classify_regime

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SweepOutcome:
    """Per-gain-cell result record."""

    kp: float
    kd: float
    successes: int
    trials: int
    scalar_error: float | None = None
    region: str | None = None

    def __post_init__(self):
        if not 0 <= self.successes <= self.trials:
            raise ValueError("need 0 <= successes <= trials")
        if self.scalar_error is not None and self.scalar_error < 0:
            raise ValueError("scalar_error must be non-negative")


def label_outcomes(outcomes, m_eff: float, stiffness_split: float):
    """Attach regime labels (CO/SO/CU/SU) computed from the gains."""
    out = []
    for o in outcomes:
        regime = classify_regime(GainConfig(kp=o.kp, kd=o.kd), m_eff, stiffness_split)
        out.append(SweepOutcome(kp=o.kp, kd=o.kd, successes=o.successes,
                                trials=o.trials, scalar_error=o.scalar_error,
                                region=regime.label))
    return out


@dataclass(frozen=True)
class RegressionFit:
    """Coefficients (intercept, beta_kp, beta_kd) with standard errors."""

    coef: np.ndarray
    stderr: np.ndarray
    converged: bool = True
    separation_flag: bool = False
    n_iter: int = 0


def _design(outcomes) -> np.ndarray:
    return np.array([[1.0, math.log2(o.kp), math.log2(o.kd)] for o in outcomes])


def logistic_fit(outcomes) -> RegressionFit:
    """Binomial logistic regression of cell successes on log2 gains.

    IRLS with cell-level binomial likelihood; converged when the largest
    coefficient change drops below 1e-10 (at most 100 iterations).
    Perfect separation is flagged (coefficients still reported).
    """
    outcomes = list(outcomes)
    cells = {(o.kp, o.kd) for o in outcomes}
    if len(cells) < 3:
        raise ValueError("need at least 3 distinct gain cells")
    if any(o.trials == 0 for o in outcomes):
        raise ValueError("every cell needs trials > 0")
    X = _design(outcomes)
    y = np.array([o.successes for o in outcomes], dtype=float)
    n = np.array([o.trials for o in outcomes], dtype=float)
    beta = np.zeros(3)
    converged = False
    it = 0
    H = np.eye(3)
    for it in range(1, 101):
        eta = X @ beta
        p = 1.0 / (1.0 + np.exp(-np.clip(eta, -500, 500)))
        p = np.clip(p, 1e-12, 1.0 - 1e-12)
        w = n * p * (1.0 - p)
        g = X.T @ (y - n * p)
        H = (X * w[:, None]).T @ X
        try:
            delta = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        beta = beta + delta
        if np.max(np.abs(delta)) < 1e-10:
            converged = True
            break
    separation = (not converged and float(np.linalg.norm(beta)) > 1e2) \
        or float(np.linalg.norm(beta)) > 1e3
    if separation:
        warnings.warn("possible perfect separation in logistic fit", stacklevel=2)
    with np.errstate(invalid="ignore"):
        cov = np.linalg.pinv(H)
        se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    return RegressionFit(coef=beta, stderr=se, converged=converged,
                         separation_flag=separation, n_iter=it)


def ols_log_fit(outcomes) -> RegressionFit:
    """OLS of log(scalar_error) on (1, log2 Kp, log2 Kd)."""
    outcomes = list(outcomes)
    if any(o.scalar_error is None or o.scalar_error <= 0 for o in outcomes):
        raise ValueError("every row needs scalar_error > 0")
    X = _design(outcomes)
    if np.linalg.matrix_rank(X) < 3:
        raise ValueError("rank-deficient design (need variation in both gains)")
    y = np.log([o.scalar_error for o in outcomes])
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    dof = len(outcomes) - 3
    if dof > 0:
        s2 = float(resid @ resid) / dof
        cov = s2 * np.linalg.inv(X.T @ X)
        se = np.sqrt(np.diag(cov))
    else:
        se = np.full(3, np.nan)
    return RegressionFit(coef=beta, stderr=se)


# ---------------------------------------------------------------------------
# Barnard's exact unconditional test


def _score_statistic(y1, n1, y2, n2):
    """Standardized difference of proportions with pooled variance."""
    p1 = y1 / n1
    p2 = y2 / n2
    pooled = (y1 + y2) / (n1 + n2)
    var = pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(var > 0, (p1 - p2) / np.sqrt(np.where(var > 0, var, 1.0)), 0.0)
    return t


def _log_binom_pmf_table(n: int, pis: np.ndarray) -> np.ndarray:
    """(len(pis), n+1) binomial pmf values."""
    ks = np.arange(n + 1)
    logc = np.array([math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)
                     for k in ks])
    with np.errstate(divide="ignore"):
        logp = np.log(pis)[:, None] * ks[None, :] \
            + np.log1p(-pis)[:, None] * (n - ks)[None, :]
    return np.exp(logc[None, :] + logp)


def barnard_exact(a: int, b: int, c: int, d: int, side: str = "greater",
                  n_grid: int = 2001) -> float:
    """One-sided Barnard's exact test on a 2x2 table.

    Group 1 has ``a`` successes and ``b`` failures, group 2 has ``c`` and
    ``d``. ``side='greater'`` tests the alternative p1 > p2 ('less' the
    reverse) using the score statistic; the p-value maximizes the tail
    probability over the nuisance success probability on a uniform grid
    of ``n_grid`` interior points followed by one golden-section
    refinement pass.
    """
    if min(a, b, c, d) < 0:
        raise ValueError("counts must be non-negative")
    n1, n2 = a + b, c + d
    if n1 == 0 or n2 == 0:
        raise ValueError("both group margins must be positive")
    if side not in ("greater", "less"):
        raise ValueError("side must be 'greater' or 'less'")
    y1 = np.arange(n1 + 1)[:, None]
    y2 = np.arange(n2 + 1)[None, :]
    T = _score_statistic(y1, n1, y2, n2)
    t_obs = float(_score_statistic(np.array(a, dtype=float), n1,
                                   np.array(c, dtype=float), n2))
    tol = 1e-12 * max(1.0, abs(t_obs))
    mask = (T >= t_obs - tol) if side == "greater" else (T <= t_obs + tol)
    mask = mask.astype(float)

    grid = np.linspace(0.0, 1.0, n_grid + 2)[1:-1]
    b1 = _log_binom_pmf_table(n1, grid)
    b2 = _log_binom_pmf_table(n2, grid)
    tail = np.einsum("pi,ij,pj->p", b1, mask, b2)
    k = int(np.argmax(tail))
    p_best = float(tail[k])

    def tail_at(pi: float) -> float:
        row1 = _log_binom_pmf_table(n1, np.array([pi]))[0]
        row2 = _log_binom_pmf_table(n2, np.array([pi]))[0]
        return float(row1 @ mask @ row2)

    lo = grid[k - 1] if k > 0 else 0.0
    hi = grid[k + 1] if k < len(grid) - 1 else 1.0
    x1 = hi - GOLDEN * (hi - lo)
    x2 = lo + GOLDEN * (hi - lo)
    f1, f2 = tail_at(x1), tail_at(x2)
    for _ in range(60):
        if f1 < f2:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + GOLDEN * (hi - lo)
            f2 = tail_at(x2)
        else:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - GOLDEN * (hi - lo)
            f1 = tail_at(x1)
    p_best = max(p_best, f1, f2)
    return float(min(1.0, p_best))


# ---------------------------------------------------------------------------
# Mann-Whitney U


def _rankdata(values: np.ndarray) -> np.ndarray:
    """Fractional (midrank) 1-based ranks."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _mwu_exact_counts(n: int, m: int) -> np.ndarray:
    """Null distribution counts of U over 0..n*m (no ties)."""
    prev = [np.ones(1) for _ in range(m + 1)]
    for i in range(1, n + 1):
        row = [np.ones(1)]
        for j in range(1, m + 1):
            out = np.zeros(i * j + 1)
            shifted = prev[j]
            out[j:j + len(shifted)] += shifted
            out[:len(row[j - 1])] += row[j - 1]
            row.append(out)
        prev = row
    return prev[m]


def _norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def mannwhitney_u(x, y, side: str = "less") -> tuple[float, float]:
    """One-sided Mann-Whitney U test; returns (U_x, p).

    ``side='less'`` tests the alternative that x is stochastically smaller
    than y (small U_x is evidence), 'greater' the reverse. Exact
    enumeration when len(x)*len(y) <= 400 and the pooled sample is
    tie-free; otherwise a normal approximation with tie and continuity
    corrections.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size == 0 or y.size == 0:
        raise ValueError("both samples must be non-empty")
    if side not in ("less", "greater"):
        raise ValueError("side must be 'less' or 'greater'")
    n1, n2 = x.size, y.size
    pooled = np.concatenate([x, y])
    ranks = _rankdata(pooled)
    u_x = float(np.sum(ranks[:n1]) - n1 * (n1 + 1) / 2.0)
    has_ties = len(np.unique(pooled)) < pooled.size
    if n1 * n2 <= 400 and not has_ties:
        counts = _mwu_exact_counts(n1, n2)
        total = counts.sum()
        u_int = int(round(u_x))
        if side == "less":
            p = counts[:u_int + 1].sum() / total
        else:
            p = counts[u_int:].sum() / total
        return u_x, float(min(1.0, p))
    mean = n1 * n2 / 2.0
    nt = n1 + n2
    _, t_counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(t_counts**3 - t_counts)) / (nt * (nt - 1.0))
    var = n1 * n2 / 12.0 * ((nt + 1.0) - tie_term)
    if var <= 0:
        return u_x, 1.0
    sd = math.sqrt(var)
    if side == "less":
        z = (u_x - mean + 0.5) / sd
        p = 1.0 - _norm_sf(z)
    else:
        z = (u_x - mean - 0.5) / sd
        p = _norm_sf(z)
    return u_x, float(min(1.0, max(0.0, p)))


def bonferroni(alpha: float, m: int) -> float:
    """Adjusted level alpha / m."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return alpha / m


# ---------------------------------------------------------------------------
# Region-level hypothesis tests


@dataclass(frozen=True)
class StatsReport:
    """One test outcome: statistic, raw p, adjusted level, decision."""

    test: str
    region: str
    metric: str
    statistic: float
    p_value: float
    alpha: float
    m_comparisons: int
    alpha_adj: float
    reject: bool
    detail: dict = field(default_factory=dict)


def region_test(outcomes, region: str, metric: str, alternative: str = "greater",
                alpha: float = 0.05, m: int = 1) -> StatsReport:
    """Pool a gain region against its complement and test one-sided.

    ``metric='success'`` dispatches Barnard's exact test on the pooled
    2x2 counts; ``metric='error'`` a Mann-Whitney U on the per-cell
    scalar errors. ``alternative`` states the direction for the region
    relative to the complement ('greater' means larger success
    probability / larger error).
    """
    outcomes = list(outcomes)
    inside = [o for o in outcomes if o.region == region]
    outside = [o for o in outcomes if o.region != region]
    if not inside or not outside:
        raise ValueError(f"region {region!r} must be a non-empty proper subset")
    alpha_adj = bonferroni(alpha, m)
    if metric == "success":
        s_in = sum(o.successes for o in inside)
        n_in = sum(o.trials for o in inside)
        s_out = sum(o.successes for o in outside)
        n_out = sum(o.trials for o in outside)
        side = "greater" if alternative == "greater" else "less"
        p = barnard_exact(s_in, n_in - s_in, s_out, n_out - s_out, side=side)
        stat = float(_score_statistic(np.array(float(s_in)), n_in,
                                      np.array(float(s_out)), n_out))
        detail = {"region_rate": s_in / n_in, "complement_rate": s_out / n_out}
        name = "barnard_exact"
    elif metric == "error":
        e_in = [o.scalar_error for o in inside]
        e_out = [o.scalar_error for o in outside]
        if any(e is None for e in e_in + e_out):
            raise ValueError("error metric needs scalar_error on every cell")
        side = "greater" if alternative == "greater" else "less"
        stat, p = mannwhitney_u(e_in, e_out, side=side)
        detail = {"region_median": float(np.median(e_in)),
                  "complement_median": float(np.median(e_out))}
        name = "mannwhitney_u"
    else:
        raise ValueError("metric must be 'success' or 'error'")
    return StatsReport(test=name, region=region, metric=metric, statistic=stat,
                       p_value=p, alpha=alpha, m_comparisons=m,
                       alpha_adj=alpha_adj, reject=p < alpha_adj, detail=detail)
