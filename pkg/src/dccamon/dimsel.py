"""Correlation-dimension selection by shrinking autoencoder bottlenecks."""
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InsufficientDataError
from .nn import train_autoencoder
from .training import Standardizer


@dataclass
class DimSelReport:
    chosen: int
    last_acceptable: int  # None when the very first probe already violates
    violated: bool  # a probe exceeded a tolerance (False when the loop ran down to p = 1)
    violation_at_start: bool
    losses: list = field(default_factory=list)  # (p, L1, L2) in probe order
    eps1: float = None
    eps2: float = None
    p_star: int = None

    def table(self, sep=","):
        out = io.StringIO()
        out.write(f"# p_star={self.p_star} eps1={self.eps1:.6g} eps2={self.eps2:.6g} chosen={self.chosen} "
                  f"last_acceptable={self.last_acceptable} violation_at_start={self.violation_at_start}\n")
        out.write(sep.join(["p", "L1", "L2", "violates"]) + "\n")
        for p, l1, l2 in self.losses:
            bad = l1 > self.eps1 or l2 > self.eps2
            out.write(sep.join([str(p), f"{l1:.6g}", f"{l2:.6g}", str(int(bad))]) + "\n")
        return out.getvalue()


@dataclass
class AeSettings:
    hidden: tuple = (64,)
    epochs: int = 300
    lr: float = 1e-3
    batch_size: int = 256


def _probe(data, p, settings, seed):
    _, loss = train_autoencoder(
        data, p, epochs=settings.epochs, lr=settings.lr, seed=seed,
        hidden=settings.hidden, batch_size=settings.batch_size,
    )
    return loss


def _prepare(signals, quality, max_samples, seed):
    X = np.asarray(signals, dtype=np.float64)
    Y = np.asarray(quality, dtype=np.float64)
    if X.shape[1] != Y.shape[1]:
        raise ConfigError("signals and quality must have the same number of columns")
    if X.shape[1] < 10:
        raise InsufficientDataError("need at least 10 samples")
    if max_samples and X.shape[1] > max_samples:
        cols = np.sort(np.random.default_rng([seed, 7]).choice(X.shape[1], max_samples, replace=False))
        X, Y = X[:, cols], Y[:, cols]
    return Standardizer.fit(X)(X), Y


def select_dimension(signals, quality, p_star, eps1, eps2, seed=0, signal_ae=None, quality_ae=None,
                     max_samples=None):
    """Probe ``p = p_star, p_star - 1, ...`` until a reconstruction loss exceeds its tolerance.

    Both blocks should contain normal and abnormal samples. Signals are
    standardised per coordinate; quality data is used as given. Each probe
    trains fresh autoencoders on an 80/20 split seeded by ``(seed, p)``.

    Returns the first violating ``p`` as ``chosen`` and ``p + 1`` as
    ``last_acceptable``. With tolerances never exceeded the loop stops at
    ``p = 1`` with ``chosen = last_acceptable = 1``.
    """
    if p_star < 1:
        raise ConfigError("p_star must be at least 1")
    if eps1 < 0 or eps2 < 0:
        raise ConfigError("tolerances must be nonnegative")
    X, Y = _prepare(signals, quality, max_samples, seed)
    if p_star > min(X.shape[0], Y.shape[0]):
        raise ConfigError(f"p_star={p_star} exceeds the data dimension")
    signal_ae = signal_ae or AeSettings()
    quality_ae = quality_ae or AeSettings()
    losses = []
    for p in range(p_star, 0, -1):
        l1 = _probe(X, p, signal_ae, int(np.random.default_rng([seed, p, 1]).integers(2**31)))
        l2 = _probe(Y, p, quality_ae, int(np.random.default_rng([seed, p, 2]).integers(2**31)))
        losses.append((p, l1, l2))
        if l1 > eps1 or l2 > eps2:
            return DimSelReport(p, p + 1 if p < p_star else None, True, p == p_star, losses, eps1, eps2, p_star)
    return DimSelReport(1, 1, False, False, losses, eps1, eps2, p_star)


def pilot_tolerances(signals, quality, p_star, slack=0.5, seed=0, signal_ae=None, quality_ae=None,
                     max_samples=None):
    """Tolerances ``(1 + slack) * L(p_star)`` from one pilot probe at ``p_star``."""
    X, Y = _prepare(signals, quality, max_samples, seed)
    seed_pilot = int(np.random.default_rng([seed, 0, 9]).integers(2**31))
    l1 = _probe(X, p_star, signal_ae or AeSettings(), seed_pilot)
    l2 = _probe(Y, p_star, quality_ae or AeSettings(), seed_pilot)
    return (1.0 + slack) * l1, (1.0 + slack) * l2
