"""Score pooling and EER evaluation.

Per-window detection scores become one utterance score either by plain
averaging or by the interleave-sensitive route (moving-average smoothing,
then the mean of the top 5% of smoothed values). Higher always means
more spoof-like. EER comes from the convex hull of the ROC operating
points with linear interpolation at the miss = false-alarm crossing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyClass, EmptySeries, NonFiniteValue


@dataclass
class ScoreSeries:
    """Ordered per-window scores plus the hop that produced them."""

    values: np.ndarray
    shift_frames: int = 10
    origin: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise EmptySeries(f"score series must be 1-D, got shape {self.values.shape}")

    def __len__(self):
        return len(self.values)


def _values(series) -> np.ndarray:
    v = series.values if isinstance(series, ScoreSeries) else np.asarray(series, dtype=np.float64)
    if len(v) == 0:
        raise EmptySeries("score series is empty")
    if not np.all(np.isfinite(v)):
        raise NonFiniteValue("score series contains NaN or Inf")
    return v


def centered_moving_average(values: np.ndarray, window: int) -> np.ndarray:
    """Moving average over [t - window//2, t + window//2], truncated at the
    edges and renormalized by the actual window occupancy (so constants
    are preserved everywhere)."""
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    half = window // 2
    t = np.arange(n)
    lo = np.maximum(t - half, 0)
    hi = np.minimum(t + half, n - 1)
    cum = np.concatenate([[0.0], np.cumsum(values)])
    return (cum[hi + 1] - cum[lo]) / (hi - lo + 1)


def score_average(series) -> float:
    """Arithmetic mean of the series."""
    return float(np.mean(_values(series)))


def interleaved_aware(series, smooth_len=10, top_frac=0.05, repeats=1) -> float:
    """Pooling sensitized to short high-scoring stretches.

    Smooths with a centered moving average of length ``smooth_len``
    (applied ``repeats`` times), then returns the mean of the
    k = max(1, ceil(top_frac * n)) largest smoothed values.
    """
    smoothed = _values(series)
    for _ in range(repeats):
        smoothed = centered_moving_average(smoothed, smooth_len)
    k = max(1, int(np.ceil(top_frac * len(smoothed))))
    top = np.partition(smoothed, len(smoothed) - k)[len(smoothed) - k :]
    return float(np.mean(top))


@dataclass
class EvalReport:
    """EER summary for one trial set."""

    eer: float
    threshold: float
    n_target: int
    n_nontarget: int
    pooling: str = ""
    target_scores: np.ndarray = field(default=None, repr=False)
    nontarget_scores: np.ndarray = field(default=None, repr=False)

    def render(self) -> str:
        lines = [
            f"eer: {self.eer:.6f} ({100.0 * self.eer:.4f}%)",
            f"threshold: {float(self.threshold)!r}",
            f"n_target: {self.n_target}",
            f"n_nontarget: {self.n_nontarget}",
        ]
        if self.pooling:
            lines.insert(0, f"pooling: {self.pooling}")
        return "\n".join(lines) + "\n"


def _roc_counts(target, nontarget):
    """Integer ROC counts at thresholds below, between, and above the
    distinct score values, for the rule "spoof when score > threshold".

    Returns (fa_counts, miss_counts, thresholds); index 0 is the
    accept-everything threshold (fa = n_nontarget, miss = 0).
    """
    tar = np.sort(np.asarray(target, dtype=np.float64))
    non = np.sort(np.asarray(nontarget, dtype=np.float64))
    distinct = np.unique(np.concatenate([tar, non]))
    miss = np.concatenate([[0], np.searchsorted(tar, distinct, side="right")])
    fa = len(non) - np.concatenate([[0], np.searchsorted(non, distinct, side="right")])
    thr = np.empty(len(distinct) + 1)
    thr[0] = distinct[0] - 1.0
    if len(distinct) > 1:
        thr[1:-1] = 0.5 * (distinct[:-1] + distinct[1:])
    thr[-1] = distinct[-1] + 1.0
    return fa.astype(np.int64), miss.astype(np.int64), thr


def _lower_hull(points):
    """Monotone-chain lower hull over integer (fa, miss, thr) triples.

    Turn tests use exact integer cross products and drop collinear
    vertices, so the output is the unique minimal vertex set of the
    lower-left ROC boundary.
    """
    pts = sorted(points, key=lambda p: (p[0], p[1]))
    hull: list[tuple[int, int, float]] = []
    for p in pts:
        px, py = int(p[0]), int(p[1])
        while len(hull) >= 2:
            ox, oy = hull[-2][0], hull[-2][1]
            ax, ay = hull[-1][0], hull[-1][1]
            if (ax - ox) * (py - oy) - (ay - oy) * (px - ox) <= 0:
                hull.pop()
            else:
                break
        hull.append((px, py, float(p[2])))
    return hull


def compute_eer(target_scores, nontarget_scores) -> EvalReport:
    """Equal error rate with target = spoof and higher = more spoof-like.

    Operating points are taken at thresholds between the distinct score
    values, reduced to their convex hull, and the EER read off by linear
    interpolation where the hull crosses miss = fa. Tied scores move
    together; when several thresholds give one operating point the
    lowest threshold represents it.
    """
    tar = np.asarray(target_scores, dtype=np.float64).ravel()
    non = np.asarray(nontarget_scores, dtype=np.float64).ravel()
    if len(tar) == 0 or len(non) == 0:
        raise EmptyClass("need at least one target and one nontarget score")
    if not (np.all(np.isfinite(tar)) and np.all(np.isfinite(non))):
        raise NonFiniteValue("scores contain NaN or Inf")

    fa, miss, thr = _roc_counts(tar, non)
    # keep the lowest-miss (and then lowest-threshold) point per fa count;
    # dominated points can never sit on the lower-left hull
    best = {}
    for j in range(len(fa)):
        key = int(fa[j])
        if key not in best or int(miss[j]) < best[key][0]:
            best[key] = (int(miss[j]), float(thr[j]))
    points = [(k, m, t) for k, (m, t) in best.items()]
    hull = _lower_hull(points)

    rates = [(f / len(non), m / len(tar), t) for f, m, t in hull]
    eer, threshold = _hull_crossing(rates)
    return EvalReport(
        eer=float(eer),
        threshold=float(threshold),
        n_target=len(tar),
        n_nontarget=len(non),
        target_scores=tar,
        nontarget_scores=non,
    )


def _hull_crossing(rates):
    """Walk hull vertices (fa ascending, miss descending) to the first
    segment at or below miss = fa and interpolate the crossing."""
    x1, y1, t1 = rates[0]
    if y1 <= x1:
        return (y1, t1)
    for x2, y2, t2 in rates[1:]:
        if y2 <= x2:
            denom = (x2 - x1) - (y2 - y1)
            if denom == 0.0:
                return (x2, t2)
            lam = (y1 - x1) / denom
            return (x1 + lam * (x2 - x1), t1 + lam * (t2 - t1))
        x1, y1, t1 = x2, y2, t2
    return (y1, t1)
