"""Empirical laws, distances, uniformity tests and ergodic averages."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import stats as sps

KS_CRIT_1PCT = 1.63


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Per-node scalar samples with shape (count, nodes)."""

    samples: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.shape[0] < 2:
            raise ValueError("an empirical measure needs at least 2 samples")
        if not np.all(np.isfinite(s)):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "samples", s)

    @property
    def count(self) -> int:
        return self.samples.shape[0]

    @property
    def nodes(self) -> int:
        return self.samples.shape[1]

    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)

    def var(self) -> np.ndarray:
        return self.samples.var(axis=0, ddof=1)

    def se(self) -> np.ndarray:
        return np.sqrt(self.var() / self.count)

    def node(self, j: int) -> np.ndarray:
        return self.samples[:, j]


def _as_samples(x) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empty sample")
    return x


def wasserstein1(a, b) -> float:
    """W1 between two 1-D empirical laws.

    Integrates |Q_a(s) - Q_b(s)| over s in (0, 1), where Q are the empirical
    quantile functions; for equal sizes this is the mean absolute difference
    of matched order statistics.
    """
    a = np.sort(_as_samples(a))
    b = np.sort(_as_samples(b))
    n, m = a.size, b.size
    if n == m:
        return float(np.mean(np.abs(a - b)))
    levels = np.union1d(np.arange(1, n + 1) / n, np.arange(1, m + 1) / m)
    widths = np.diff(np.concatenate([[0.0], levels]))
    mid = levels - 0.5 * widths
    qa = a[np.minimum((mid * n).astype(int), n - 1)]
    qb = b[np.minimum((mid * m).astype(int), m - 1)]
    return float(np.sum(widths * np.abs(qa - qb)))


def ks_statistic(samples, cdf: Callable) -> float:
    """sup_x |F_n(x) - cdf(x)|."""
    x = np.sort(_as_samples(samples))
    n = x.size
    F = np.asarray(cdf(x), dtype=float)
    upper = np.arange(1, n + 1) / n - F
    lower = F - np.arange(n) / n
    return float(max(upper.max(), lower.max()))


def ks_critical(n: int, m: int | None = None) -> float:
    """Asymptotic 1%-level KS critical value, one- or two-sample."""
    if m is None:
        return KS_CRIT_1PCT / np.sqrt(n)
    return KS_CRIT_1PCT * np.sqrt((n + m) / (n * m))


def ks_two_sample(a, b) -> tuple[float, float]:
    res = sps.ks_2samp(_as_samples(a), _as_samples(b))
    return float(res.statistic), float(res.pvalue)


def exponential_cdf(rate: float) -> Callable:
    return lambda x: 1.0 - np.exp(-rate * np.maximum(x, 0.0))


def angle_uniformity(phi) -> float:
    """Resultant length |mean e^{i phi}|; about 1/sqrt(M) for a uniform law."""
    phi = _as_samples(phi)
    return float(np.abs(np.mean(np.exp(1j * phi))))


def chi2_uniformity(phi, bins: int = 16) -> tuple[float, float]:
    """Histogram chi-square test of uniformity on [0, 2 pi); (statistic, p-value)."""
    phi = np.mod(_as_samples(phi), 2.0 * np.pi)
    counts, _ = np.histogram(phi, bins=bins, range=(0.0, 2.0 * np.pi))
    res = sps.chisquare(counts)
    return float(res.statistic), float(res.pvalue)


def lag1_autocorr(x) -> float:
    x = _as_samples(x)
    d = x - x.mean()
    denom = np.dot(d, d)
    if denom == 0:
        return 0.0
    return float(np.dot(d[:-1], d[1:]) / denom)


def batch_means(values, batches: int = 30) -> tuple[float, float]:
    """Mean and batch-means standard error of a correlated sequence."""
    v = _as_samples(values)
    if v.size < batches:
        raise ValueError(f"need at least {batches} values for batch means")
    usable = (v.size // batches) * batches
    bm = v[v.size - usable:].reshape(batches, -1).mean(axis=1)
    se = float(bm.std(ddof=1) / np.sqrt(batches))
    return float(v.mean()), se


def ergodic_average(times, values, burn_in: float | None = None,
                    batches: int = 30) -> tuple[float, float]:
    """Time average of a recorded observable after burn-in, with batch-means SE.

    ``burn_in`` defaults to 20% of the horizon and is measured from times[0].
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    horizon = times[-1] - times[0]
    if burn_in is None:
        burn_in = 0.2 * horizon
    if burn_in >= horizon:
        raise ValueError("burn-in must be shorter than the horizon")
    keep = times - times[0] >= burn_in
    return batch_means(values[keep], batches)


def bootstrap_w1_se(a, b, reps: int = 200, seed: int = 0) -> float:
    """Bootstrap standard error of wasserstein1(a, b)."""
    a, b = _as_samples(a), _as_samples(b)
    rng = np.random.default_rng(seed)
    vals = np.empty(reps)
    for r in range(reps):
        vals[r] = wasserstein1(rng.choice(a, a.size), rng.choice(b, b.size))
    return float(vals.std(ddof=1))


@dataclass
class NodeComparison:
    node: int
    w1: float
    ks: float
    ks_pvalue: float
    mean_a: float
    mean_b: float
    se: float
    w1_se: float
    passed: bool

    def to_json(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


@dataclass
class ComparisonReport:
    rows: list[NodeComparison]
    tolerances: dict

    @property
    def all_pass(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def max_w1(self) -> float:
        return max(r.w1 for r in self.rows)

    def to_json(self) -> dict:
        return {"nodes": [r.to_json() for r in self.rows],
                "tolerances": self.tolerances, "all_pass": self.all_pass}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def compare_laws(a, b, w1_tol: float | None = None, ks_level: float | None = None,
                 bootstrap: int = 0, seed: int = 0) -> ComparisonReport:
    """Per-node W1, two-sample KS and mean comparison of two ensembles.

    ``a`` and ``b`` are (samples, nodes) arrays or EmpiricalMeasures. A node
    passes when W1 < ``w1_tol`` and the KS p-value exceeds ``ks_level`` (each
    check only if its tolerance is given).
    """
    A = a if isinstance(a, EmpiricalMeasure) else EmpiricalMeasure(a)
    B = b if isinstance(b, EmpiricalMeasure) else EmpiricalMeasure(b)
    if A.nodes != B.nodes:
        raise ValueError(f"node sets differ: {A.nodes} vs {B.nodes}")
    rows = []
    for j in range(A.nodes):
        x, y = A.node(j), B.node(j)
        w = wasserstein1(x, y)
        ks, p = ks_two_sample(x, y)
        se = float(np.sqrt(x.var(ddof=1) / x.size + y.var(ddof=1) / y.size))
        wse = bootstrap_w1_se(x, y, bootstrap, seed + j) if bootstrap > 1 else float("nan")
        ok = True
        if w1_tol is not None:
            ok &= w < w1_tol
        if ks_level is not None:
            ok &= p > ks_level
        rows.append(NodeComparison(j, w, ks, p, float(x.mean()), float(y.mean()), se, wse, bool(ok)))
    return ComparisonReport(rows, {"w1": w1_tol, "ks_level": ks_level})
