"""Dominance analysis on McFadden pseudo-R^2, Welch t and variance-ratio F tests.

Student-t and F distribution functions go through a regularized incomplete
beta evaluated by Lentz's continued fraction, converged to 1e-10 relative.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

CF_TOL = 1e-10
CF_MAX_ITER = 10_000
SIGNIFICANCE = 0.01


# ---------------------------------------------------------------------------
# distribution functions
# ---------------------------------------------------------------------------


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for I_x(a, b), modified Lentz."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < CF_TOL:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if not (a > 0 and b > 0):
        raise ValueError("a and b must be > 0")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    lbt = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    # the fraction converges fast on the side of the mean
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(lbt) * _betacf(a, b, x) / a
    return 1.0 - math.exp(lbt) * _betacf(b, a, 1.0 - x) / b


def t_sf2(t: float, df: float) -> float:
    """Two-sided tail P(|T| >= |t|) of Student's t."""
    if not df > 0:
        raise ValueError("df must be > 0")
    if math.isinf(t):
        return 0.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


def t_cdf(t: float, df: float) -> float:
    tail = 0.5 * t_sf2(t, df)
    return 1.0 - tail if t > 0 else tail


def f_sf(x: float, d1: float, d2: float) -> float:
    """Upper tail P(F >= x) of the F distribution."""
    if not (d1 > 0 and d2 > 0):
        raise ValueError("degrees of freedom must be > 0")
    if x <= 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    return betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * x))


def f_cdf(x: float, d1: float, d2: float) -> float:
    return 1.0 - f_sf(x, d1, d2)


# ---------------------------------------------------------------------------
# tests
# ---------------------------------------------------------------------------


class TestKind(str, Enum):
    __test__ = False  # not a pytest class

    T_TEST_MEAN = "TTestMean"
    F_TEST_VARIANCE = "FTestVariance"


@dataclass(frozen=True)
class TestResult:
    __test__ = False

    statistic: float
    p_value: float
    kind: TestKind
    df: tuple[float, ...] = ()

    @property
    def significant(self) -> bool:
        return self.p_value < SIGNIFICANCE

    def csv_line(self) -> str:
        return f"{self.kind.value},{self.statistic!r},{self.p_value!r},{int(self.significant)}"


def _samples(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, float).ravel()
    b = np.asarray(b, float).ravel()
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least two values")
    return a, b


def t_test_mean(a, b) -> TestResult:
    """Welch two-sample t test, two-sided."""
    a, b = _samples(a, b)
    va = a.var(ddof=1) / a.size
    vb = b.var(ddof=1) / b.size
    se2 = va + vb
    if se2 == 0:
        raise ValueError("both samples have zero variance")
    t = float((a.mean() - b.mean()) / math.sqrt(se2))
    df = se2**2 / (va**2 / (a.size - 1) + vb**2 / (b.size - 1))
    return TestResult(t, float(min(1.0, t_sf2(t, float(df)))), TestKind.T_TEST_MEAN, (float(df),))


def f_test_variance(a, b) -> TestResult:
    """Variance-ratio test, larger over smaller, two-sided."""
    a, b = _samples(a, b)
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va == 0 or vb == 0:
        raise ValueError("a sample has zero variance")
    if va >= vb:
        F, d1, d2 = va / vb, a.size - 1, b.size - 1
    else:
        F, d1, d2 = vb / va, b.size - 1, a.size - 1
    p = float(min(1.0, 2.0 * f_sf(float(F), d1, d2)))
    return TestResult(float(F), p, TestKind.F_TEST_VARIANCE, (float(d1), float(d2)))


def normalized_std(sample) -> float:
    """Sample standard deviation (n - 1) over the mean."""
    x = np.asarray(sample, float).ravel()
    if x.size < 2:
        raise ValueError("need at least two values")
    m = float(x.mean())
    if m == 0:
        raise ValueError("mean is zero")
    return float(x.std(ddof=1) / m)


# ---------------------------------------------------------------------------
# dominance analysis
# ---------------------------------------------------------------------------


class SingularDesign(ValueError):
    """A subset model's design matrix is rank deficient."""


def mcfadden_r2(ll_full: float, ll_null: float) -> float:
    if ll_null == 0:
        raise ValueError("null log-likelihood must be nonzero")
    return 1.0 - ll_full / ll_null


def gaussian_loglik(X: np.ndarray, y: np.ndarray) -> float:
    """Maximized Gaussian log-likelihood of an OLS fit (X already holds the intercept)."""
    n, p = X.shape
    if np.linalg.matrix_rank(X) < p:
        raise SingularDesign(f"rank {np.linalg.matrix_rank(X)} < {p} columns")
    w, *_ = np.linalg.lstsq(X, y, rcond=None)
    rss = float(np.sum((y - X @ w) ** 2))
    if rss <= 0:
        raise SingularDesign("perfect fit, likelihood unbounded")
    return -0.5 * n * (math.log(2.0 * math.pi * rss / n) + 1.0)


def relative_importance(ids: dict, full_r2: float) -> dict:
    """Percent of the full-model R^2 carried by each predictor's interactional dominance."""
    if not full_r2 > 0:
        raise ValueError("full R^2 must be > 0")
    return {k: 100.0 * v / full_r2 for k, v in ids.items()}


# record attribute for each predictor name used by the picking data
PREDICTOR_FIELDS = {"length": "lambda_mm", "thickness": "tau_mm", "spikes": "spikes", "spike": "spikes",
                    "grain_count": "grain_count"}


@dataclass
class DominanceReport:
    predictors: tuple[str, ...]
    subset_r2: dict  # frozenset of names -> R^2
    full_r2: float
    interactional_dominance: dict
    relative_importance_pct: dict
    singular: list = field(default_factory=list)

    @staticmethod
    def mask(subset, predictors) -> int:
        return sum(1 << i for i, p in enumerate(predictors) if p in subset)

    def csv(self) -> str:
        lines = ["subset_mask,r2"]
        for s in sorted(self.subset_r2, key=lambda s: self.mask(s, self.predictors)):
            lines.append(f"{self.mask(s, self.predictors)},{self.subset_r2[s]!r}")
        lines.append("")
        lines.append("predictor,interactional_dominance,relative_importance_pct")
        for p in self.predictors:
            lines.append(f"{p},{self.interactional_dominance[p]!r},{self.relative_importance_pct[p]!r}")
        lines.append(f"full_r2,{self.full_r2!r},")
        return "\n".join(lines) + "\n"


def _columns(data, predictors, response):
    if isinstance(data, dict):
        return {p: np.asarray(data[p], float) for p in predictors}, np.asarray(data[response], float)
    recs = data.records if hasattr(data, "records") else list(data)
    cols = {p: np.array([float(getattr(r, PREDICTOR_FIELDS.get(p, p))) for r in recs]) for p in predictors}
    return cols, np.array([float(getattr(r, response)) for r in recs])


def dominance_analysis(data, predictors, response: str = "picked_units") -> DominanceReport:
    """Fit every non-empty predictor subset and score it against the intercept-only model.

    ``data`` is either a mapping of column arrays or a sequence of pick
    records; predictor names map onto record fields (length, thickness,
    spikes). Interactional dominance of p is R^2(all) - R^2(all but p).
    """
    predictors = tuple(predictors)
    if not predictors:
        raise ValueError("need at least one predictor")
    if len(set(predictors)) != len(predictors):
        raise ValueError("duplicate predictor")
    cols, y = _columns(data, predictors, response)
    n = y.size
    if n < len(predictors) + 2:
        raise ValueError("too few records")
    ones = np.ones((n, 1))
    ll_null = gaussian_loglik(ones, y)
    subset_r2: dict = {frozenset(): 0.0}
    singular = []
    for k in range(1, len(predictors) + 1):
        for sub in itertools.combinations(predictors, k):
            X = np.hstack([ones] + [cols[p][:, None] for p in sub])
            try:
                subset_r2[frozenset(sub)] = mcfadden_r2(gaussian_loglik(X, y), ll_null)
            except SingularDesign as exc:
                singular.append((frozenset(sub), str(exc)))
    full = frozenset(predictors)
    full_r2 = subset_r2.get(full, math.nan)
    ids = {}
    for p in predictors:
        rest = full - {p}
        ids[p] = full_r2 - subset_r2[rest] if rest in subset_r2 else math.nan
    pct = relative_importance(ids, full_r2) if full_r2 > 0 else {p: math.nan for p in predictors}
    del subset_r2[frozenset()]
    return DominanceReport(predictors, subset_r2, full_r2, ids, pct, singular)
