"""Regression accuracy, filter consistency and uncertainty comparison.

The regression metrics accept either 1-D series or ``(N, 3)`` velocity
arrays. Vector input is reduced to the velocity-norm series first; use the
``*_per_axis`` variants for column-wise values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from deepdvl.ekf import STATE_GROUPS


class UndefinedMetricError(ValueError):
    """Raised when a metric's denominator vanishes (constant truth)."""


class MisalignedRunsError(ValueError):
    pass


def _pair(x, x_hat):
    x = np.asarray(x, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    if x.ndim == 2:
        x, x_hat = np.linalg.norm(x, axis=1), np.linalg.norm(x_hat, axis=1)
    elif x.ndim != 1:
        raise ValueError("expected a 1-D series or an (N, 3) array")
    if len(x) == 0:
        raise ValueError("empty series")
    return x, x_hat


def rmse(x, x_hat):
    x, x_hat = _pair(x, x_hat)
    return float(np.sqrt(np.mean((x - x_hat) ** 2)))


def mae(x, x_hat):
    x, x_hat = _pair(x, x_hat)
    return float(np.mean(np.abs(x - x_hat)))


def r_squared(x, x_hat):
    x, x_hat = _pair(x, x_hat)
    ss_tot = np.sum((x - x.mean()) ** 2)
    if ss_tot == 0:
        raise UndefinedMetricError("R² is undefined for a constant truth series")
    return float(1.0 - np.sum((x - x_hat) ** 2) / ss_tot)


def vaf(x, x_hat):
    """Variance accounted for, in percent. Ignores any constant offset."""
    x, x_hat = _pair(x, x_hat)
    var_x = np.var(x)
    if var_x == 0:
        raise UndefinedMetricError("VAF is undefined for a constant truth series")
    return float((1.0 - np.var(x - x_hat) / var_x) * 100.0)


def _per_axis(fn, x, x_hat):
    x = np.asarray(x, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    if x.ndim != 2 or x.shape != x_hat.shape:
        raise ValueError("per-axis metrics need matching (N, k) arrays")
    return np.array([fn(x[:, i], x_hat[:, i]) for i in range(x.shape[1])])


def rmse_per_axis(x, x_hat):
    return _per_axis(rmse, x, x_hat)


def mae_per_axis(x, x_hat):
    return _per_axis(mae, x, x_hat)


def r_squared_per_axis(x, x_hat):
    return _per_axis(r_squared, x, x_hat)


def vaf_per_axis(x, x_hat):
    return _per_axis(vaf, x, x_hat)


def regression_report(x, x_hat):
    """All four metrics on the velocity-norm series, as a plain dict."""
    return {"rmse": rmse(x, x_hat), "mae": mae(x, x_hat), "r2": r_squared(x, x_hat), "vaf": vaf(x, x_hat)}


def chi2_band(dof, n_runs=1, level=0.95):
    """Two-sided band for the average of ``n_runs`` independent chi-square(dof) values."""
    a = (1.0 - level) / 2.0
    total = dof * n_runs
    return chi2.ppf(a, total) / n_runs, chi2.ppf(1.0 - a, total) / n_runs


@dataclass
class NeesResult:
    values: np.ndarray
    mean: float
    band: tuple
    fraction_inside: float
    dof: int

    @property
    def mean_inside(self):
        """Whether the time-averaged NEES lies inside the band for that average."""
        lo, hi = chi2_band(self.dof, len(self.values))
        return lo <= self.mean <= hi


def nees(errors, covariances, level=0.95):
    """Normalised estimation error squared ``e' P^-1 e`` per step.

    ``covariances`` is an ``(n, d, d)`` stack or an ``(n, d)`` array of
    diagonals. The verdict is the fraction of steps inside the two-sided
    chi-square band for ``d`` degrees of freedom.
    """
    e = np.atleast_2d(np.asarray(errors, dtype=float))
    P = np.asarray(covariances, dtype=float)
    n, d = e.shape
    if P.shape == (n, d):
        values = np.sum(e**2 / P, axis=1)
    elif P.shape == (n, d, d):
        values = np.einsum("ni,ni->n", e, np.linalg.solve(P, e[..., None])[..., 0])
    else:
        raise ValueError(f"covariance shape {P.shape} does not match errors {e.shape}")
    band = chi2_band(d, 1, level)
    inside = (values >= band[0]) & (values <= band[1])
    return NeesResult(values, float(values.mean()), band, float(inside.mean()), d)


def nees_run(run, true_errors, level=0.95):
    """NEES of a :class:`deepdvl.ekf.FilterRun` against the true error state.

    ``true_errors`` holds, per state epoch, the true 12-state error of the
    recorded navigation solution (truth minus estimate). The run records the
    solution after each correction has been injected, so these errors are
    the filter's residuals. Uses stored full covariances when the run kept
    them, otherwise the diagonal.
    """
    e = np.asarray(true_errors, dtype=float)
    cov = run.covariances if run.covariances is not None else run.pdiag
    return nees(e, cov, level)


def monte_carlo_nees(errors, covariances, level=0.95):
    """Ensemble-averaged NEES over runs, with the band for that average.

    ``errors`` has shape ``(runs, steps, d)`` and ``covariances``
    ``(runs, steps, d, d)``. Returns ``(mean_per_step, band, occupancy)``
    where occupancy is the fraction of steps whose ensemble mean lies in the
    band.
    """
    e = np.asarray(errors, dtype=float)
    P = np.asarray(covariances, dtype=float)
    runs, steps, d = e.shape
    vals = np.einsum("rsi,rsi->rs", e, np.linalg.solve(P, e[..., None])[..., 0])
    mean = vals.mean(axis=0)
    band = chi2_band(d, runs, level)
    occ = float(np.mean((mean >= band[0]) & (mean <= band[1])))
    return mean, band, occ


def _improvement(aware, neglect):
    if neglect == 0:
        return 0.0 if aware == 0 else -np.inf
    return float((neglect - aware) / neglect * 100.0)


def uncertainty_summary(run_aware, run_neglect, groups=None):
    """Per-group standard-deviation comparison of two time-aligned runs.

    For each 3-axis group reports the time average of the per-axis std
    (averaged over axes), the sum of the final per-axis std, and the
    percentage by which the first run improves on the second for both.
    """
    ta, tn = np.asarray(run_aware.times), np.asarray(run_neglect.times)
    if ta.shape != tn.shape or not np.allclose(ta, tn, rtol=0, atol=1e-9):
        raise MisalignedRunsError("runs are not time-aligned")
    sa = np.sqrt(np.clip(run_aware.pdiag, 0, None))
    sn = np.sqrt(np.clip(run_neglect.pdiag, 0, None))
    report = {}
    for name, sl in (groups or STATE_GROUPS).items():
        avg_a, avg_n = float(sa[:, sl].mean()), float(sn[:, sl].mean())
        fin_a, fin_n = float(sa[-1, sl].sum()), float(sn[-1, sl].sum())
        report[name] = {
            "time_avg_std_aware": avg_a,
            "time_avg_std_neglect": avg_n,
            "final_sum_std_aware": fin_a,
            "final_sum_std_neglect": fin_n,
            "time_avg_improvement_pct": _improvement(avg_a, avg_n),
            "final_improvement_pct": _improvement(fin_a, fin_n),
        }
    return report
