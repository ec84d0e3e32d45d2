"""Evaluation statistics: R2, residuals, Bland-Altman, ICC, nested OLS, t-tests.

Pure functions over in-memory vectors. All p-values go through the regularized
incomplete beta function rather than lookup tables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc, betaincinv

ICC_VARIANT = "one-way random, single measurement"


@dataclass(frozen=True)
class EvalReport:
    n: int
    r2: float
    residual_mean: float
    residual_sd: float


@dataclass(frozen=True)
class BlandAltman:
    fixed_bias: float
    fixed_bias_p: float
    loa_low: float
    loa_high: float
    prop_slope: float
    prop_ci_low: float
    prop_ci_high: float


@dataclass(frozen=True)
class IccResult:
    icc: float
    n: int
    k: int = 2
    variant: str = ICC_VARIANT


@dataclass(frozen=True)
class VarIncrement:
    r2_base: float
    r2_full: float
    increment: float
    f_stat: float
    p_value: float


def _vec(x, name: str, min_n: int = 2) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64).ravel()
    if v.size < min_n:
        raise ValueError(f"{name} needs at least {min_n} values, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite values")
    return v


def _paired(pred, truth, min_n: int = 2):
    p = _vec(pred, "pred", min_n)
    t = _vec(truth, "truth", min_n)
    if p.size != t.size:
        raise ValueError(f"length mismatch: {p.size} vs {t.size}")
    return p, t


# ---------------------------------------------------------------------------
# Student-t distribution via the regularized incomplete beta function
# ---------------------------------------------------------------------------

def t_cdf(t: float, df: float) -> float:
    """P(T <= t) for Student t with df degrees of freedom."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if t == 0.0:
        return 0.5
    tail = 0.5 * float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return 1.0 - tail if t > 0 else tail


def t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|)."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


def t_quantile_two_sided(alpha: float, df: float) -> float:
    """t* with P(|T| > t*) = alpha."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    x = float(betaincinv(df / 2.0, 0.5, alpha))
    return math.sqrt(df * (1.0 - x) / x)


# ---------------------------------------------------------------------------
# Point summaries
# ---------------------------------------------------------------------------

def r2(pred, truth) -> float:
    p, t = _paired(pred, truth)
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("degenerate truth: constant values leave R2 undefined")
    ss_res = float(np.sum((t - p) ** 2))
    return 1.0 - ss_res / ss_tot


def residual_stats(pred, truth) -> tuple[float, float]:
    """(mean, sample sd) of residuals pred - truth."""
    p, t = _paired(pred, truth)
    d = p - t
    return float(d.mean()), float(d.std(ddof=1))


def eval_report(pred, truth) -> EvalReport:
    mean, sd = residual_stats(pred, truth)
    return EvalReport(n=len(np.ravel(pred)), r2=r2(pred, truth),
                      residual_mean=mean, residual_sd=sd)


# ---------------------------------------------------------------------------
# Bland-Altman
# ---------------------------------------------------------------------------

def bland_altman(pred, truth) -> BlandAltman:
    p, t = _paired(pred, truth, min_n=3)
    n = p.size
    d = p - t
    m = (p + t) / 2.0
    bias = float(d.mean())
    sd_d = float(d.std(ddof=1))
    if sd_d == 0.0:
        bias_p = 1.0  # zero-variance differences carry no evidence either way
    else:
        bias_p = t_two_sided_p(bias / (sd_d / math.sqrt(n)), n - 1)
    sxx = float(np.sum((m - m.mean()) ** 2))
    if sxx == 0.0:
        raise ValueError("degenerate pairs: all pairwise means identical")
    beta = float(np.sum((m - m.mean()) * (d - d.mean())) / sxx)
    alpha = bias - beta * float(m.mean())
    resid = d - alpha - beta * m
    s2 = float(np.sum(resid ** 2)) / (n - 2)
    half = t_quantile_two_sided(0.05, n - 2) * math.sqrt(s2 / sxx)
    return BlandAltman(fixed_bias=bias, fixed_bias_p=bias_p,
                       loa_low=bias - 1.96 * sd_d, loa_high=bias + 1.96 * sd_d,
                       prop_slope=beta, prop_ci_low=beta - half,
                       prop_ci_high=beta + half)


# ---------------------------------------------------------------------------
# One-way random-effects ICC (single measurement, k = 2)
# ---------------------------------------------------------------------------

def icc_oneway(pairs) -> IccResult:
    x = np.asarray(pairs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 2:
        raise ValueError(f"expected (n, 2) replicate pairs, got shape {x.shape}")
    n, k = x.shape
    if n < 3:
        raise ValueError(f"need at least 3 subjects, got {n}")
    if not np.all(np.isfinite(x)):
        raise ValueError("pairs contain non-finite values")
    grand = x.mean()
    row_means = x.mean(axis=1)
    ss_between = k * float(np.sum((row_means - grand) ** 2))
    ss_within = float(np.sum((x - row_means[:, None]) ** 2))
    if ss_between + ss_within == 0.0:
        raise ValueError("degenerate pairs: zero total variance")
    ms_between = ss_between / (n - 1)
    ms_within = ss_within / (n * (k - 1))
    icc = (ms_between - ms_within) / (ms_between + (k - 1) * ms_within)
    return IccResult(icc=icc, n=n, k=k)


# ---------------------------------------------------------------------------
# Nested OLS R2 increment
# ---------------------------------------------------------------------------

def _column_names(p_base: int) -> list[str]:
    return ["intercept"] + [f"base[{i}]" for i in range(p_base)] + ["added"]


def _check_full_rank(design: np.ndarray, names: list[str]) -> None:
    _, r = np.linalg.qr(design)
    diag = np.abs(np.diag(r))
    tol = max(design.shape) * np.finfo(np.float64).eps * (diag.max() or 1.0)
    for j, val in enumerate(diag):
        if val <= tol:
            raise ValueError(f"design matrix is rank deficient at column {names[j]}")


def _ols_sse(design: np.ndarray, y: np.ndarray) -> float:
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    return float(np.sum(resid ** 2))


def r2_increment(y, base_covariates, added) -> VarIncrement:
    y = _vec(y, "y", min_n=3)
    n = y.size
    base = np.asarray(base_covariates, dtype=np.float64)
    if base.ndim == 1:
        base = base[:, None]
    add = _vec(added, "added", min_n=1)
    if base.shape[0] != n or add.size != n:
        raise ValueError("covariate row count must match y")
    ones = np.ones((n, 1))
    design_full = np.hstack([ones, base, add[:, None]])
    if n <= design_full.shape[1] + 1:
        raise ValueError(f"need n > {design_full.shape[1] + 1} rows, got {n}")
    _check_full_rank(design_full, _column_names(base.shape[1]))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("degenerate y: constant values leave R2 undefined")
    sse_base = _ols_sse(np.hstack([ones, base]), y)
    sse_full = _ols_sse(design_full, y)
    df2 = n - design_full.shape[1]
    if sse_full == 0.0:
        f_stat, p = math.inf, 0.0
    else:
        f_stat = max((sse_base - sse_full), 0.0) / (sse_full / df2)
        p = float(betainc(df2 / 2.0, 0.5, df2 / (df2 + f_stat)))
    r2_base = 1.0 - sse_base / ss_tot
    r2_full = 1.0 - sse_full / ss_tot
    return VarIncrement(r2_base=r2_base, r2_full=r2_full,
                        increment=r2_full - r2_base, f_stat=f_stat, p_value=p)


# ---------------------------------------------------------------------------
# t-tests
# ---------------------------------------------------------------------------

def paired_t(a, b) -> tuple[float, float]:
    x, y = _paired(a, b)
    d = x - y
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        raise ValueError("degenerate differences: zero variance")
    t = float(d.mean()) / (sd / math.sqrt(d.size))
    return t, t_two_sided_p(t, d.size - 1)


def unpaired_t(a, b) -> tuple[float, float]:
    """Welch's unequal-variance t-test."""
    x = _vec(a, "a")
    y = _vec(b, "b")
    va, vb = float(x.var(ddof=1)), float(y.var(ddof=1))
    na, nb = x.size, y.size
    se2 = va / na + vb / nb
    if se2 == 0.0:
        raise ValueError("degenerate samples: zero variance in both groups")
    t = (float(x.mean()) - float(y.mean())) / math.sqrt(se2)
    df = se2 ** 2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    return t, t_two_sided_p(t, df)
