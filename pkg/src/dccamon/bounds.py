"""Monte Carlo check of the non-asymptotic error bound for the sample
canonical-correlation score against a Gaussian ground truth."""
import io
from dataclasses import dataclass

import numpy as np

from .cca import GaussianCcaSpec, cca_batch
from .errors import ConfigError
from .linalg import svd_small, sym_eig


def estimation_error_bound(p, n, delta, B, lambda_min, lambda_max):
    """``4Cp log(6p/delta)/(3n) + sqrt(2 C^2 p^2 log(6p/delta) / n)``
    with ``C = B (lambda_min + lambda_max) / lambda_min^2``.

    >>> round(estimation_error_bound(1, 2, 6 / np.e, 1.0, 1.0, 0.0) - (2 / 3 + 1), 12)
    0.0
    """
    if delta <= 0:
        raise ConfigError("delta must be positive")
    if min(p, n, B) <= 0 or lambda_min < 0 or lambda_max < 0:
        raise ConfigError("p, n, B must be positive and eigenvalue bounds nonnegative")
    if lambda_min == 0:
        return float("inf")
    c = B * (lambda_min + lambda_max) / lambda_min**2
    log_term = np.log(6.0 * p / delta)
    return float(4.0 * c * p * log_term / (3.0 * n) + np.sqrt(2.0 * c**2 * p**2 * log_term / n))


def spectrum_range(spec):
    """``(lambda_min, lambda_max)`` over the eigenvalues of both auto-covariances
    and the singular values of the cross-covariance."""
    s11, s12, s22 = spec.blocks
    vals = np.concatenate([sym_eig(s11).eigenvalues, sym_eig(s22).eigenvalues, svd_small(s12)[1]])
    return float(vals.min()), float(vals.max())


@dataclass
class BoundExperiment:
    spec: GaussianCcaSpec
    n_grid: np.ndarray
    trials: int
    delta: float
    errors: np.ndarray  # (trials, len(n_grid))
    slope: float
    bounds: np.ndarray
    B: np.ndarray  # empirical max squared norm per n
    lambda_min: float
    lambda_max: float

    @property
    def median(self):
        return np.median(self.errors, axis=0)

    def quantile(self, q):
        return np.quantile(self.errors, q, axis=0)

    @property
    def bound_holds(self):
        return bool(np.all(self.quantile(1.0 - self.delta) <= self.bounds))

    def table(self, sep=","):
        """Delimited text: one row per n with median error, q90 error and bound."""
        out = io.StringIO()
        out.write("# B estimated as the empirical max squared sample norm; Gaussian draws are unbounded\n")
        out.write(f"# slope={self.slope:.4f} delta={self.delta} lambda_min={self.lambda_min:.6g} "
                  f"lambda_max={self.lambda_max:.6g} rho={self.spec.true_rho:.6g}\n")
        out.write(sep.join(["n", "median_error", "q90_error", "bound"]) + "\n")
        q90 = self.quantile(0.9)
        for n, m, q, b in zip(self.n_grid, self.median, q90, self.bounds):
            out.write(sep.join([str(int(n)), f"{m:.6g}", f"{q:.6g}", f"{b:.6g}"]) + "\n")
        return out.getvalue()


def loglog_slope(n_grid, values):
    """Least-squares slope of ``log(values)`` against ``log(n)``."""
    x = np.log(np.asarray(n_grid, dtype=np.float64))
    y = np.log(np.asarray(values, dtype=np.float64))
    xc = x - x.mean()
    return float(xc @ (y - y.mean()) / (xc @ xc))


def run_bound_experiment(spec, n_grid, trials=200, delta=0.1, seed=0, ridge=0.0):
    """Measure ``|H_{n,p} - rho|`` over ``trials`` Gaussian draws for each ``n``.

    Every trial uses its own generator keyed by ``(seed, n, trial)``.
    """
    n_grid = np.asarray(n_grid, dtype=np.int64)
    p = spec.p
    if np.any(np.diff(n_grid) <= 0):
        raise ConfigError("n grid must be strictly increasing")
    if np.any(n_grid <= 4 * p):
        raise ConfigError(f"every n must exceed 4p = {4 * p}")
    if trials < 100:
        raise ConfigError("at least 100 trials are required")
    chol = np.linalg.cholesky(spec.covariance)
    lam_min, lam_max = spectrum_range(spec)
    errors = np.empty((trials, n_grid.size))
    b_emp = np.empty(n_grid.size)
    for j, n in enumerate(n_grid):
        draws = np.stack([
            chol @ np.random.default_rng([seed, int(n), t]).standard_normal((2 * p, int(n)))
            for t in range(trials)
        ])
        x, y = draws[:, :p], draws[:, p:]
        res = cca_batch(x, y, ridge=ridge)
        errors[:, j] = np.abs(res.scores - spec.true_rho)
        b_emp[j] = max(np.max(np.sum(x * x, axis=1)), np.max(np.sum(y * y, axis=1)))
    bounds = np.array([estimation_error_bound(p, int(n), delta, b, lam_min, lam_max)
                       for n, b in zip(n_grid, b_emp)])
    slope = loglog_slope(n_grid, np.median(errors, axis=0))
    return BoundExperiment(spec, n_grid, trials, delta, errors, slope, bounds, b_emp, lam_min, lam_max)
