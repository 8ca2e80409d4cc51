"""ARIMA(p, d, q) by conditional least squares, forecasting and grid selection.

Conventions: ``w`` is the d-times differenced series, ``z = w - intercept``
and the ARMA recursion is

    z[t] = sum_i ar[i] z[t-1-i] + e[t] + sum_j ma[j] e[t-1-j]

so MA terms enter with a plus sign. Residuals before ``max(p, q)`` are zero
(conditional sum of squares).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import FitError
from .trace import TimeSeries

logger = logging.getLogger(__name__)

MAX_ORDER = 5
SCHEMA_VERSION = 1
_UNIT_ROOT_TOL = 1e-6
_STEP_TOL = 1e-10


@dataclass(frozen=True, order=True)
class ArimaOrder:
    p: int
    d: int
    q: int

    def __post_init__(self):
        for name in ("p", "d", "q"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or not 0 <= v <= MAX_ORDER:
                raise ValueError(f"{name} must be an integer in [0, {MAX_ORDER}], got {v!r}")
        if self.p + self.q == 0 and self.d == 0:
            raise ValueError("ARIMA(0,0,0) has nothing to fit")

    @classmethod
    def parse(cls, value) -> "ArimaOrder":
        if isinstance(value, ArimaOrder):
            return value
        if isinstance(value, str):
            value = value.strip("() ").split(",")
        p, d, q = (int(v) for v in value)
        return cls(p, d, q)

    def __str__(self):
        return f"({self.p},{self.d},{self.q})"

    @property
    def label(self) -> str:
        return f"ARIMA {self}"


@dataclass(frozen=True)
class ArimaModel:
    order: ArimaOrder
    ar_coeffs: tuple
    ma_coeffs: tuple
    intercept: float
    residual_variance: float
    last_observations: tuple  # last p + d values on the original scale
    last_residuals: tuple  # last q one-step residuals

    def __post_init__(self):
        if len(self.ar_coeffs) != self.order.p or len(self.ma_coeffs) != self.order.q:
            raise ValueError("coefficient counts do not match the order")
        if self.residual_variance < 0:
            raise ValueError("residual_variance must be non-negative")
        if len(self.last_observations) < self.order.p + self.order.d:
            raise ValueError(f"need {self.order.p + self.order.d} trailing observations")
        if len(self.last_residuals) < self.order.q:
            raise ValueError(f"need {self.order.q} trailing residuals")

    def to_dict(self) -> dict:
        o = self.order
        return {
            "schema": SCHEMA_VERSION,
            "order": [o.p, o.d, o.q],
            "ar_coeffs": [float(c) for c in self.ar_coeffs],
            "ma_coeffs": [float(c) for c in self.ma_coeffs],
            "intercept": float(self.intercept),
            "residual_variance": float(self.residual_variance),
            "last_observations": [float(v) for v in self.last_observations],
            "last_residuals": [float(v) for v in self.last_residuals],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ArimaModel":
        if doc.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported model schema {doc.get('schema')!r}")
        return cls(
            order=ArimaOrder.parse(doc["order"]),
            ar_coeffs=tuple(doc["ar_coeffs"]),
            ma_coeffs=tuple(doc["ma_coeffs"]),
            intercept=doc["intercept"],
            residual_variance=doc["residual_variance"],
            last_observations=tuple(doc["last_observations"]),
            last_residuals=tuple(doc["last_residuals"]),
        )


@dataclass(frozen=True)
class FitReport:
    order: ArimaOrder
    mse: float
    converged: bool
    iterations: int
    holdout_mse: float | None = None
    model: ArimaModel | None = field(default=None, compare=False, repr=False)

    def to_dict(self) -> dict:
        o = self.order
        return {
            "order": [o.p, o.d, o.q],
            "mse": self.mse,
            "holdout_mse": self.holdout_mse,
            "converged": self.converged,
            "iterations": self.iterations,
        }


def _values(series) -> np.ndarray:
    if isinstance(series, TimeSeries):
        return series.values
    return np.asarray(series, dtype=np.float64)


# -- differencing --------------------------------------------------------------


def difference(series, d: int) -> np.ndarray:
    x = _values(series)
    if d < 0:
        raise ValueError("d must be non-negative")
    if x.size <= d:
        raise ValueError(f"series of length {x.size} cannot be differenced {d} times")
    return np.diff(x, n=d) if d else x.copy()


def undifference(diffed, anchor_values, d: int) -> np.ndarray:
    """Invert ``d`` differencings of a continuation, given the last ``d`` original values."""
    out = np.asarray(diffed, dtype=np.float64).copy()
    anchor = np.asarray(anchor_values, dtype=np.float64)
    if anchor.size != d:
        raise ValueError(f"need exactly {d} anchor values, got {anchor.size}")
    for k in range(d - 1, -1, -1):
        level_last = np.diff(anchor, n=k)[-1]
        out = level_last + np.cumsum(out)
    return out


# -- fitting -----------------------------------------------------------------------


def yule_walker(z, p: int) -> np.ndarray:
    """AR(p) coefficients from the sample autocovariances of zero-mean ``z``."""
    z = np.asarray(z, dtype=np.float64)
    n = z.size
    acov = np.array([z[: n - k] @ z[k:] / n for k in range(p + 1)])
    if acov[0] == 0:
        return np.zeros(p)
    toeplitz = acov[np.abs(np.subtract.outer(np.arange(p), np.arange(p)))]
    return np.linalg.solve(toeplitz, acov[1 : p + 1])


def _poly_from_roots(roots) -> np.ndarray:
    """Ascending coefficients of prod(1 - x / r), constant term 1."""
    poly = np.array([1.0 + 0j])
    for r in roots:
        poly = np.convolve(poly, [1.0, -1.0 / r])
    return poly.real


def _reflect(coeffs: np.ndarray, sign: float) -> tuple[np.ndarray, bool]:
    """Move roots of ``1 + sign * sum c_k x^k`` outside the unit circle.

    Returns the adjusted coefficients and False when a root sits on the circle.
    """
    if coeffs.size == 0 or not np.any(coeffs):
        return coeffs, True
    ascending = np.concatenate([[1.0], sign * coeffs])
    roots = np.roots(ascending[::-1])
    mod = np.abs(roots)
    if np.any(np.abs(mod - 1.0) < _UNIT_ROOT_TOL):
        return coeffs, False
    if np.all(mod > 1.0):
        return coeffs, True
    roots = np.where(mod < 1.0, 1.0 / np.conj(roots), roots)
    return sign * _poly_from_roots(roots)[1:], True


def _roots_outside(coeffs, sign) -> bool:
    if coeffs.size == 0 or not np.any(coeffs):
        return True
    ascending = np.concatenate([[1.0], sign * coeffs])
    return bool(np.all(np.abs(np.roots(ascending[::-1])) > 1.0))


def _admissible(theta, p) -> bool:
    """Stationary AR part and invertible MA part."""
    return _roots_outside(theta[:p], -1.0) and _roots_outside(theta[p:], 1.0)


def _sse(z, ar, ma, m):
    e = kernels.css_residuals(z, ar, ma)
    tail = e[m:]
    return float(tail @ tail), e


def _levenberg_marquardt(z, p, q, theta, max_iter, tol):
    """Minimise the conditional sum of squares over ``theta = (ar..., ma...)``.

    Trial steps that leave the stationary/invertible region are rejected like
    steps that increase the objective.
    """
    m = max(p, q)
    lam = 1e-3
    e, jac = kernels.css_residuals_jacobian(z, theta[:p], theta[p:])
    e, jac = e[m:], jac[m:]
    sse = float(e @ e)
    for it in range(1, max_iter + 1):
        grad = jac.T @ e
        hess = jac.T @ jac
        diag = np.diag(hess).copy()
        diag[diag <= 0] = 1.0
        while True:
            try:
                step = np.linalg.solve(hess + lam * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and _admissible(theta + step, p):
                cand = theta + step
                sse_new, _ = _sse(z, cand[:p], cand[p:], m)
                if math.isfinite(sse_new) and sse_new <= sse:
                    break
            lam *= 10.0
            if lam > 1e12:
                return theta, sse, True, it
        improvement = sse - sse_new
        small_step = np.linalg.norm(step) <= _STEP_TOL * (np.linalg.norm(theta) + _STEP_TOL)
        theta = cand
        lam = max(lam / 10.0, 1e-12)
        e, jac = kernels.css_residuals_jacobian(z, theta[:p], theta[p:])
        e, jac = e[m:], jac[m:]
        sse = float(e @ e)
        if improvement <= tol * max(sse, 1e-300) or small_step:
            return theta, sse, True, it
    return theta, sse, False, max_iter


def fit(
    series,
    order,
    include_mean: bool | None = None,
    max_iter: int = 500,
    tol: float = 1e-8,
) -> tuple[ArimaModel, FitReport]:
    """Fit ARIMA by conditional least squares.

    The intercept (mean of the differenced series) is estimated only when
    ``include_mean`` is true, which defaults to ``d == 0``; with ``d >= 1``
    forecasts carry no drift. AR coefficients are warm-started by Yule-Walker,
    MA coefficients from zero. Non-stationary AR or non-invertible MA roots
    are reflected outside the unit circle; a root on the circle marks the fit
    as not converged.
    """
    order = ArimaOrder.parse(order)
    p, d, q = order.p, order.d, order.q
    x = _values(series)
    need = 10 * (p + q + 1) + d
    if x.size < need:
        raise FitError(f"ARIMA{order} needs at least {need} samples, got {x.size}")
    if include_mean is None:
        include_mean = d == 0

    w = difference(x, d)
    if np.ptp(w) == 0:
        # deterministic after differencing: the level is the whole model
        intercept = float(w[0]) if (include_mean or p + q) else 0.0
        z = w - intercept
        model = ArimaModel(order, (0.0,) * p, (0.0,) * q, intercept, float(np.mean(z**2)),
                           tuple(x[x.size - p - d:]) if p + d else (), (0.0,) * q)
        return model, FitReport(order, float(np.mean(z[max(p, q):] ** 2)), True, 0, model=model)

    intercept = float(w.mean()) if include_mean else 0.0
    z = w - intercept
    m = max(p, q)
    converged, iterations = True, 0
    theta = np.zeros(p + q)
    if p:
        theta[:p] = yule_walker(z, p)
        if not _admissible(theta, p):
            theta[:] = 0.0
    if p + q:
        theta, _, converged, iterations = _levenberg_marquardt(z, p, q, theta, max_iter, tol)
        ar, ok_ar = _reflect(theta[:p], -1.0)
        ma, ok_ma = _reflect(theta[p:], 1.0)
        if not (ok_ar and ok_ma):
            logger.info("ARIMA%s: root on the unit circle", order)
            converged = False
        theta = np.concatenate([ar, ma])
    sse, e = _sse(z, theta[:p], theta[p:], m)
    n_eff = z.size - m
    mse = sse / n_eff
    model = ArimaModel(
        order=order,
        ar_coeffs=tuple(float(c) for c in theta[:p]),
        ma_coeffs=tuple(float(c) for c in theta[p:]),
        intercept=intercept,
        residual_variance=mse,
        last_observations=tuple(float(v) for v in x[x.size - p - d:]) if p + d else (),
        last_residuals=tuple(float(v) for v in e[e.size - q:]) if q else (),
    )
    return model, FitReport(order, mse, converged, iterations, model=model)


# -- forecasting -------------------------------------------------------------------


def _arma_forecast(z_tail, e_tail, ar, ma, horizon):
    z = list(z_tail)
    e = list(e_tail) + [0.0] * horizon
    p, q = len(ar), len(ma)
    off = len(e_tail)
    out = []
    for h in range(horizon):
        acc = 0.0
        for i in range(p):
            acc += ar[i] * z[len(z) - 1 - i]
        for j in range(q):
            k = off + h - 1 - j
            if k >= 0:
                acc += ma[j] * e[k]
        z.append(acc)
        out.append(acc)
    return np.array(out)


def forecast_detail(model: ArimaModel, horizon_steps: int) -> tuple[np.ndarray, bool]:
    """Point forecasts clamped at zero, and whether any clamping happened."""
    if horizon_steps < 1:
        raise ValueError("horizon_steps must be >= 1")
    p, d, _ = model.order.p, model.order.d, model.order.q
    obs = np.asarray(model.last_observations, dtype=np.float64)
    if p:
        z_tail = np.diff(obs, n=d)[-p:] - model.intercept
    else:
        z_tail = np.zeros(0)
    zhat = _arma_forecast(z_tail, model.last_residuals, model.ar_coeffs, model.ma_coeffs, horizon_steps)
    xhat = undifference(zhat + model.intercept, obs[obs.size - d:] if d else [], d)
    clamped = bool(np.any(xhat < 0))
    return np.maximum(xhat, 0.0), clamped


def forecast(model: ArimaModel, horizon_steps: int) -> np.ndarray:
    values, clamped = forecast_detail(model, horizon_steps)
    if clamped:
        logger.debug("ARIMA%s forecast clamped at zero", model.order)
    return values


class RollingForecaster:
    """Forecast from any origin of a longer series with fixed coefficients.

    Residuals are computed once over the whole series, so moving the origin
    costs only the forecast recursion.
    """

    def __init__(self, model: ArimaModel, series):
        self.model = model
        self.x = _values(series)
        o = model.order
        z = difference(self.x, o.d) - model.intercept
        self.e = kernels.css_residuals(z, model.ar_coeffs, model.ma_coeffs)

    def state_at(self, origin: int) -> ArimaModel:
        """Model whose state reflects observations ``x[:origin]``."""
        o = self.model.order
        if not o.p + o.d + max(o.p, o.q) <= origin <= self.x.size:
            raise ValueError(f"origin {origin} outside the usable range")
        k = origin - o.d  # residual index of x[origin - 1] is k - 1
        return ArimaModel(
            order=o,
            ar_coeffs=self.model.ar_coeffs,
            ma_coeffs=self.model.ma_coeffs,
            intercept=self.model.intercept,
            residual_variance=self.model.residual_variance,
            last_observations=tuple(self.x[origin - o.p - o.d:origin]) if o.p + o.d else (),
            last_residuals=tuple(self.e[k - o.q:k]) if o.q else (),
        )

    def forecast(self, origin: int, horizon_steps: int) -> np.ndarray:
        return forecast(self.state_at(origin), horizon_steps)


def one_step_errors(model: ArimaModel, train, holdout) -> np.ndarray:
    """One-step-ahead errors over ``holdout`` with coefficients fixed from ``train``.

    A one-step error on the original scale equals the residual of the
    differenced recursion, so this is the residual tail of the joined series.
    """
    x = np.concatenate([_values(train), _values(holdout)])
    d = model.order.d
    z = difference(x, d) - model.intercept
    e = kernels.css_residuals(z, model.ar_coeffs, model.ma_coeffs)
    return e[len(_values(train)) - d:]


def grid_select(train, holdout, orders: Sequence, **fit_kwargs) -> list[FitReport]:
    """Fit every order on ``train`` and rank by one-step MSE over ``holdout``.

    Ties go to the smaller ``p + d + q``, then to the lexicographically smaller
    order. Orders that fail to fit are dropped; if all fail, FitError lists why.
    """
    if not orders:
        raise ValueError("orders must be non-empty")
    reports, failures = [], []
    for raw in orders:
        order = ArimaOrder.parse(raw)
        try:
            model, report = fit(train, order, **fit_kwargs)
            err = one_step_errors(model, train, holdout)
            holdout_mse = float(np.mean(err**2))
            if not math.isfinite(holdout_mse):
                raise FitError("holdout MSE is not finite")
        except (FitError, ValueError, np.linalg.LinAlgError) as exc:
            failures.append(f"ARIMA{order}: {exc}")
            continue
        reports.append(FitReport(order, report.mse, report.converged, report.iterations,
                                 holdout_mse, model))
    if not reports:
        raise FitError("all fits failed: " + "; ".join(failures))
    for f in failures:
        logger.warning("grid_select dropped %s", f)
    reports.sort(key=lambda r: (r.holdout_mse, r.order.p + r.order.d + r.order.q,
                                (r.order.p, r.order.d, r.order.q)))
    return reports


def linear_trend_baseline(series, horizon: int) -> np.ndarray:
    """Least-squares line through the window, extended ``horizon`` steps, clamped at 0."""
    y = _values(series)
    if y.size < 2:
        raise ValueError("need at least two points for a trend")
    t = np.arange(y.size, dtype=np.float64)
    tc = t - t.mean()
    slope = float(tc @ (y - y.mean()) / (tc @ tc))
    level = y.mean() - slope * t.mean()
    future = np.arange(y.size, y.size + horizon, dtype=np.float64)
    return np.maximum(level + slope * future, 0.0)
