"""Damped least-squares (Levenberg-Marquardt) curve fitting.

Jacobians are estimated with central differences, so any vectorised model
``f(x, *params)`` works.  Parameter covariance follows the usual
``s^2 (J^T W J)^-1`` convention with ``s^2`` the reduced chi-square, unless
``absolute_sigma`` is requested.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class FitError(RuntimeError):
    """Raised when a fit cannot be performed or does not converge."""

    def __init__(self, message: str, residual_norm: float = float("nan")):
        super().__init__(message)
        self.residual_norm = residual_norm


@dataclass(frozen=True)
class FitResult:
    params: np.ndarray
    stderr: np.ndarray
    covariance: np.ndarray
    residual_norm: float
    chisq: float
    dof: int
    nfev: int
    converged: bool

    def __iter__(self):
        return iter(self.params)


def _jacobian(fun, p, f0, step):
    jac = np.empty((f0.size, p.size))
    for k in range(p.size):
        h = step * max(abs(p[k]), 1.0)
        dp = np.zeros_like(p)
        dp[k] = h
        jac[:, k] = (fun(p + dp) - fun(p - dp)) / (2 * h)
    return jac


def levenberg_marquardt(
    residuals: Callable[[np.ndarray], np.ndarray],
    p0: Sequence[float],
    *,
    max_iter: int = 200,
    xtol: float = 1e-12,
    ftol: float = 1e-14,
    step: float = 1e-6,
    lam0: float = 1e-3,
) -> tuple[np.ndarray, np.ndarray, int, bool]:
    """Minimise ``||residuals(p)||^2``; returns (params, jacobian, nfev, converged)."""
    p = np.array(p0, dtype=float)
    r = residuals(p)
    nfev = 1
    cost = r @ r
    lam = lam0
    converged = False
    jac = None
    for _ in range(max_iter):
        jac = _jacobian(residuals, p, r, step)
        nfev += 2 * p.size
        jtj = jac.T @ jac
        grad = jac.T @ r
        if np.max(np.abs(grad)) < 1e-300:
            converged = True
            break
        scale = np.diag(jtj).copy()
        scale[scale <= 0] = 1.0
        improved = False
        while lam < 1e16:
            try:
                delta = np.linalg.solve(jtj + lam * np.diag(scale), -grad)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            trial = p + delta
            r_new = residuals(trial)
            nfev += 1
            cost_new = r_new @ r_new
            if np.isfinite(cost_new) and cost_new <= cost:
                improved = True
                break
            lam *= 10
        if not improved:
            converged = True  # no downhill step left at this precision
            break
        small_step = np.all(np.abs(delta) <= xtol * (np.abs(p) + xtol))
        small_drop = cost - cost_new <= ftol * max(cost, 1e-300)
        p, r, cost = trial, r_new, cost_new
        lam = max(lam / 10, 1e-12)
        if small_step or small_drop:
            converged = True
            break
    jac = _jacobian(residuals, p, r, step)
    return p, jac, nfev, converged


def curve_fit(
    model: Callable[..., np.ndarray],
    x: np.ndarray,
    y: np.ndarray,
    p0: Sequence[float],
    sigma: np.ndarray | None = None,
    absolute_sigma: bool = False,
    **kwargs,
) -> FitResult:
    """Weighted least-squares fit of ``model(x, *params)`` to ``y``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if sigma is None:
        w = np.ones_like(y)
    else:
        with np.errstate(divide="ignore"):
            w = 1.0 / np.asarray(sigma, dtype=float)
    if not np.all(np.isfinite(w)):
        raise FitError("sigma must be finite and non-zero")

    def residuals(p):
        return w * (model(x, *p) - y)

    with np.errstate(over="ignore", invalid="ignore"):
        p, jac, nfev, converged = levenberg_marquardt(residuals, p0, **kwargs)
    r = residuals(p)
    chisq = float(r @ r)
    dof = max(y.size - p.size, 1)
    try:
        cov = np.linalg.pinv(jac.T @ jac)
    except np.linalg.LinAlgError:
        cov = np.full((p.size, p.size), np.inf)
    if not absolute_sigma:
        cov = cov * chisq / dof
    stderr = np.sqrt(np.clip(np.diag(cov), 0, None))
    return FitResult(
        params=p,
        stderr=stderr,
        covariance=cov,
        residual_norm=float(np.sqrt(np.sum((model(x, *p) - y) ** 2))),
        chisq=chisq,
        dof=dof,
        nfev=nfev,
        converged=converged,
    )


def fft_frequency(x: np.ndarray, y: np.ndarray, pad: int = 16) -> float:
    """Dominant frequency (cycles per unit x) of uniformly sampled data."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float) - np.mean(y)
    if x.size < 3:
        return 0.0
    dx = np.mean(np.diff(x))
    spec = np.abs(np.fft.rfft(y, n=pad * x.size))
    freqs = np.fft.rfftfreq(pad * x.size, d=dx)
    return float(freqs[np.argmax(spec[1:]) + 1])


def cosine_fit(
    x: np.ndarray,
    y: np.ndarray,
    *,
    phase: float | None = 0.0,
    decay: bool = False,
    freq_max: float | None = None,
) -> FitResult:
    """Fit ``a exp(-g x) cos(2 pi f x + phase) + b``.

    The frequency is initialised from the best of an FFT peak and a
    coarse grid scan (each scored with a linear solve for ``a, b``).  With
    ``phase=None`` the phase is a free parameter.  Params are returned in
    the order (a, f, b[, phase][, g]).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    span = np.ptp(x)
    if span <= 0 or x.size < 4:
        raise FitError("need at least 4 distinct x values")
    if freq_max is None:
        freq_max = 0.5 * (x.size - 1) / span
    candidates = np.concatenate(
        [np.linspace(0.05 / span, freq_max, 400), [fft_frequency(x, y)]]
    )
    free_phase = phase is None

    def linear_score(f):
        if free_phase:
            basis = np.column_stack([np.cos(2 * np.pi * f * x), np.sin(2 * np.pi * f * x), np.ones_like(x)])
        else:
            basis = np.column_stack([np.cos(2 * np.pi * f * x + phase), np.ones_like(x)])
        coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
        return np.sum((basis @ coef - y) ** 2), coef

    scores = [linear_score(f) for f in candidates if f > 0]
    best = int(np.argmin([s[0] for s in scores]))
    f0 = [f for f in candidates if f > 0][best]
    coef = scores[best][1]
    if free_phase:
        a0 = float(np.hypot(coef[0], coef[1]))
        ph0 = float(np.arctan2(-coef[1], coef[0]))
        p0 = [a0, f0, coef[2], ph0]
    else:
        p0 = [coef[0], f0, coef[1]]
    if decay:
        p0.append(0.0)

    def model(xx, a, f, b, *rest):
        ph = rest[0] if free_phase else phase
        g = rest[-1] if decay else 0.0
        return a * np.exp(-g * xx) * np.cos(2 * np.pi * f * xx + ph) + b

    return curve_fit(model, x, y, p0)
