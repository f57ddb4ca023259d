"""Picked-amount model: a linear law in length, modulated by a logistic function of thickness.

    y_hat = w1 * phi(tau) * lambda + w2,   phi(tau) = L / (1 + exp(-t1 (tau - t2))) + L0

Weights (w1, w2) are linear given (t1, t2), so fitting searches (t1, t2) on a
grid scored by exact leave-one-out error, polishes with Nelder-Mead and solves
the weights in closed form. A conjugate Gaussian posterior over the weights
gives predictive bands.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

L_DEFAULT = 0.6
L0_DEFAULT = 0.1
SIGMA_NONSPIKY = 27.44  # picked units, cohort normalizers
SIGMA_SPIKY = 38.27
PRIOR_VARIANCE = 1e4
THETA1_RANGE = (0.1, 50.0)  # 1/mm, magnitude
THETA2_RANGE = (0.0, 2.0)  # mm
GRID_SIZE = 32
TRAIN_FRACTION = 0.9


class DegenerateDesign(ValueError):
    """The length feature carries no variation, so the weights are not identifiable."""


def cohort_sigma(spiky: bool) -> float:
    return SIGMA_SPIKY if spiky else SIGMA_NONSPIKY


@dataclass(frozen=True)
class ModelParams:
    omega1: float
    omega2: float
    theta1: float  # 1/mm
    theta2: float  # mm
    L: float = L_DEFAULT
    L0: float = L0_DEFAULT
    spiky: bool = False
    sigma_normalizer: float | None = None

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError("L must be > 0")
        if not self.L0 >= 0:
            raise ValueError("L0 must be >= 0")
        for k in ("omega1", "omega2", "theta1", "theta2", "L", "L0"):
            if not math.isfinite(getattr(self, k)):
                raise ValueError(f"{k} must be finite")

    @property
    def sigma(self) -> float:
        return cohort_sigma(self.spiky) if self.sigma_normalizer is None else self.sigma_normalizer


def phi(tau, params: ModelParams):
    """Logistic thickness factor in [L0, L + L0]."""
    z = -params.theta1 * (np.asarray(tau, float) - params.theta2)
    # exp overflow just saturates the sigmoid at L0
    with np.errstate(over="ignore"):
        out = params.L / (1.0 + np.exp(z)) + params.L0
    return float(out) if np.ndim(out) == 0 else out


def predict(tau, lam, params: ModelParams):
    """Raw model output in picked units (not clamped)."""
    out = params.omega1 * np.asarray(phi(tau, params)) * np.asarray(lam, float) + params.omega2
    return float(out) if np.ndim(out) == 0 else out


def clamp_units(y, available: int = 100):
    return np.clip(y, 0.0, available)


def nmse(y, y_hat, sigma: float) -> float:
    """Mean squared error divided by sigma (a standard deviation, not a variance)."""
    y = np.asarray(y, float)
    y_hat = np.asarray(y_hat, float)
    if y.shape != y_hat.shape:
        raise ValueError("length mismatch")
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    if y.size == 0:
        raise ValueError("empty input")
    return float(np.mean((y - y_hat) ** 2) / sigma)


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Cohort:
    tau: np.ndarray
    lam: np.ndarray
    y: np.ndarray
    spiky: bool

    def __len__(self):
        return len(self.y)

    def take(self, idx) -> "Cohort":
        return Cohort(self.tau[idx], self.lam[idx], self.y[idx], self.spiky)


def cohort(records, spiky: bool) -> Cohort:
    """Select a cohort (spikes 0, or spikes >= 1) in a canonical order.

    Records are sorted on their content so the result does not depend on the
    order they arrive in.
    """
    rows = sorted((float(r.tau_mm), float(r.lambda_mm), int(r.spikes), int(r.iteration), int(r.seed),
                   float(r.picked_units)) for r in records if (int(r.spikes) > 0) == spiky)
    if not rows:
        return Cohort(np.zeros(0), np.zeros(0), np.zeros(0), spiky)
    a = np.array(rows, float)
    return Cohort(a[:, 0], a[:, 1], a[:, 5], spiky)


def _records(data):
    return data.records if hasattr(data, "records") else data


def _as_cohort(data, spiky: bool) -> Cohort:
    """A Cohort passes through (it must be of the asked kind); records are selected."""
    if isinstance(data, Cohort):
        if data.spiky != spiky:
            raise ValueError("cohort kind does not match")
        return data
    return cohort(_records(data), spiky)


def split(n: int, seed: int, fraction: float = TRAIN_FRACTION) -> tuple[np.ndarray, np.ndarray]:
    """Random train/test index split; the test side gets at least one point."""
    perm = np.random.default_rng(seed).permutation(n)
    n_test = max(1, int(round(n * (1.0 - fraction))))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


def _design(tau, lam, t1, t2, L, L0) -> np.ndarray:
    p = ModelParams(1.0, 0.0, t1, t2, L, L0)
    return np.column_stack([np.asarray(phi(tau, p)) * lam, np.ones(len(lam))])


def _solve(F: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray] | None:
    """Least-squares weights and (F^T F)^-1, or None if the length feature is flat."""
    f = F[:, 0]
    if f.size < 2 or np.ptp(f) <= 1e-12 * max(1.0, float(np.abs(f).max())):
        return None
    G = F.T @ F
    try:
        Ginv = np.linalg.inv(G)
    except np.linalg.LinAlgError:
        return None
    return Ginv @ (F.T @ y), Ginv


def loo_nmse(c: Cohort, t1: float, t2: float, sigma: float, L: float = L_DEFAULT, L0: float = L0_DEFAULT) -> float:
    """Leave-one-out NMSE of the closed-form weights, from the hat matrix diagonal."""
    F = _design(c.tau, c.lam, t1, t2, L, L0)
    sol = _solve(F, c.y)
    if sol is None:
        return math.inf
    w, Ginv = sol
    h = np.einsum("ij,jk,ik->i", F, Ginv, F)
    if np.any(h >= 1.0 - 1e-12):
        return math.inf
    e = (c.y - F @ w) / (1.0 - h)
    return float(np.mean(e**2) / sigma)


def theta_grid(n: int = GRID_SIZE) -> tuple[np.ndarray, np.ndarray]:
    """Steepness candidates (both signs, log-spaced magnitudes) and midpoint candidates."""
    mag = np.geomspace(*THETA1_RANGE, n)
    return np.concatenate([-mag[::-1], mag]), np.linspace(*THETA2_RANGE, n)


@dataclass(frozen=True)
class FitReport:
    params: ModelParams
    nmse_train: float
    nmse_test: float
    loo_nmse: float
    sigma_normalizer: float
    train_index: tuple[int, ...] = field(repr=False)
    test_index: tuple[int, ...] = field(repr=False)
    split: tuple[float, float] = (TRAIN_FRACTION, 1.0 - TRAIN_FRACTION)


def fit_cohort(train: Cohort, sigma: float, L: float = L_DEFAULT, L0: float = L0_DEFAULT,
               polish: bool = True) -> tuple[ModelParams, float]:
    """Pick (t1, t2) by leave-one-out NMSE, then refit the weights on all of ``train``."""
    if len(train) < 3:
        raise DegenerateDesign("need at least three records")
    t1s, t2s = theta_grid()
    best = (math.inf, 0, 0)
    # row-major scan with strict improvement: the lowest-index cell wins ties
    for i, t1 in enumerate(t1s):
        for j, t2 in enumerate(t2s):
            v = loo_nmse(train, t1, t2, sigma, L, L0)
            if v < best[0]:
                best = (v, i, j)
    if not math.isfinite(best[0]):
        raise DegenerateDesign("phi(tau)*lambda is constant for every candidate")
    score, t1, t2 = best[0], float(t1s[best[1]]), float(t2s[best[2]])
    if polish:
        # Nelder-Mead on (sign * log|t1|, t2); the sign of the steepness stays put
        sgn = 1.0 if t1 > 0 else -1.0

        def obj(x):
            mag = math.exp(min(max(x[0], math.log(THETA1_RANGE[0])), math.log(THETA1_RANGE[1])))
            tt2 = min(max(x[1], THETA2_RANGE[0]), THETA2_RANGE[1])
            return loo_nmse(train, sgn * mag, tt2, sigma, L, L0)

        res = minimize(obj, [math.log(abs(t1)), t2], method="Nelder-Mead",
                       options={"xatol": 1e-6, "fatol": 1e-12, "maxiter": 400})
        if res.fun < score:
            score = float(res.fun)
            t1 = sgn * math.exp(min(max(res.x[0], math.log(THETA1_RANGE[0])), math.log(THETA1_RANGE[1])))
            t2 = float(min(max(res.x[1], THETA2_RANGE[0]), THETA2_RANGE[1]))
    F = _design(train.tau, train.lam, t1, t2, L, L0)
    sol = _solve(F, train.y)
    if sol is None:
        raise DegenerateDesign("phi(tau)*lambda is constant on the training data")
    w = sol[0]
    return ModelParams(float(w[0]), float(w[1]), float(t1), float(t2), L, L0, train.spiky, sigma), score


def fit(dataset, spiky: bool, split_seed: int = 0, sigma: float | None = None, *, polish: bool = True) -> FitReport:
    """90/10 split, LOO-selected thickness law, closed-form weights; train and test NMSE."""
    c = _as_cohort(dataset, spiky)
    if len(c) < 10:
        raise ValueError(f"cohort has {len(c)} records, need >= 10")
    s = cohort_sigma(spiky) if sigma is None else float(sigma)
    tr, te = split(len(c), split_seed)
    train, test = c.take(tr), c.take(te)
    params, score = fit_cohort(train, s, polish=polish)
    return FitReport(params, nmse(train.y, predict(train.tau, train.lam, params), s),
                     nmse(test.y, predict(test.tau, test.lam, params), s), score, s,
                     tuple(int(i) for i in tr), tuple(int(i) for i in te))


# ---------------------------------------------------------------------------
# Bayesian weights
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PosteriorSummary:
    weight_mean: np.ndarray  # (2,)
    weight_covariance: np.ndarray  # (2, 2)
    noise_variance: float
    params: ModelParams  # nonlinear part used for the features; weights = posterior mean

    def features(self, tau, lam) -> np.ndarray:
        p = self.params
        return _design(np.atleast_1d(np.asarray(tau, float)), np.atleast_1d(np.asarray(lam, float)),
                       p.theta1, p.theta2, p.L, p.L0)

    def predictive(self, tau, lam) -> tuple[np.ndarray, np.ndarray]:
        """Predictive mean and standard deviation (the one-sigma band)."""
        tau, lam = np.broadcast_arrays(np.asarray(tau, float), np.asarray(lam, float))
        F = self.features(tau.ravel(), lam.ravel())
        mean = F @ self.weight_mean
        var = self.noise_variance + np.einsum("ij,jk,ik->i", F, self.weight_covariance, F)
        return mean.reshape(tau.shape), np.sqrt(np.maximum(var, 0.0)).reshape(tau.shape)


def bayes_fit_cohort(c: Cohort, params: ModelParams, prior_variance: float = PRIOR_VARIANCE) -> PosteriorSummary:
    if len(c) == 0:
        raise ValueError("empty cohort")
    F = _design(c.tau, c.lam, params.theta1, params.theta2, params.L, params.L0)
    sol = _solve(F, c.y)
    if sol is None:
        raise DegenerateDesign("phi(tau)*lambda is constant")
    w_ls = sol[0]
    dof = max(len(c) - 2, 1)
    s2 = float(np.sum((c.y - F @ w_ls) ** 2) / dof)
    s2 = max(s2, 1e-12)
    prec = F.T @ F / s2 + np.eye(2) / prior_variance
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + cov.T)
    mean = cov @ (F.T @ c.y) / s2
    return PosteriorSummary(mean, cov, s2, replace(params, omega1=float(mean[0]), omega2=float(mean[1]),
                                                   spiky=c.spiky))


def bayes_fit(dataset, params: ModelParams, spiky: bool | None = None,
              prior_variance: float = PRIOR_VARIANCE) -> PosteriorSummary:
    """Conjugate posterior over (w1, w2) with (t1, t2, L, L0) held fixed.

    Prior: zero mean, ``prior_variance`` per weight. Noise variance is the
    residual variance of the least-squares fit (n - 2 denominator).
    """
    sp = params.spiky if spiky is None else spiky
    return bayes_fit_cohort(_as_cohort(dataset, sp), params, prior_variance)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

PARAM_KEYS = ("omega1", "omega2", "theta1_per_mm", "theta2_mm", "L", "L0", "spiky", "sigma_normalizer")


def dumps_params(p: ModelParams) -> str:
    vals = {
        "omega1": repr(p.omega1), "omega2": repr(p.omega2), "theta1_per_mm": repr(p.theta1),
        "theta2_mm": repr(p.theta2), "L": repr(p.L), "L0": repr(p.L0), "spiky": "true" if p.spiky else "false",
        "sigma_normalizer": repr(p.sigma),
    }
    return "".join(f"{k}={vals[k]}\n" for k in PARAM_KEYS)


def loads_params(text: str) -> ModelParams:
    vals = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in PARAM_KEYS:
            raise ValueError(f"line {n}: unknown key {k!r}")
        vals[k] = v
    missing = [k for k in PARAM_KEYS if k not in vals]
    if missing:
        raise ValueError(f"missing keys: {', '.join(missing)}")
    if vals["spiky"] not in ("true", "false"):
        raise ValueError("spiky must be true or false")
    return ModelParams(float(vals["omega1"]), float(vals["omega2"]), float(vals["theta1_per_mm"]),
                       float(vals["theta2_mm"]), float(vals["L"]), float(vals["L0"]), vals["spiky"] == "true",
                       float(vals["sigma_normalizer"]))


def save_params(p: ModelParams, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_params(p))


def load_params(path) -> ModelParams:
    with open(path) as fh:
        return loads_params(fh.read())


# ---------------------------------------------------------------------------
# synthetic cohorts
# ---------------------------------------------------------------------------

# generator used by the recovery checks: picks fall with thickness, rise with length
SYNTH_NONSPIKY = ModelParams(0.9, 4.0, -8.0, 0.5, spiky=False)
SYNTH_SPIKY = ModelParams(1.3, 10.0, -8.0, 0.5, spiky=True)


def synthetic_cohort(params: ModelParams, rng: np.random.Generator, noise_std: float | None = None,
                     taus=(0.2, 0.4, 1.0), lams=(12.0, 60.0, 120.0), repeats: int = 10) -> Cohort:
    """Records on the thickness x length grid from ``params`` plus Gaussian noise.

    Spiky cohorts hold two spike levels, so twice the records of a non-spiky one.
    Default noise is a tenth of the cohort normalizer.
    """
    levels = 2 if params.spiky else 1
    sd = 0.1 * params.sigma if noise_std is None else noise_std
    tt, ll = np.meshgrid(np.asarray(taus, float), np.asarray(lams, float), indexing="ij")
    tau = np.tile(np.repeat(tt.ravel(), repeats), levels)
    lam = np.tile(np.repeat(ll.ravel(), repeats), levels)
    y = np.asarray(predict(tau, lam, params)) + rng.normal(0.0, sd, size=tau.size)
    return Cohort(tau, lam, y, params.spiky)
