"""Distance-to-error calibration, thresholds and trust/abstain verdicts."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, ParameterError, UndefinedCorrelationError
from .nnindex import NeighborIndex, nn_distance

TRUSTED = "Trusted"
ABSTAIN = "Abstain"


@dataclass(frozen=True)
class DistanceErrorModel:
    """Monotone piecewise-linear map from neighbor distance to expected error."""

    knots: tuple[tuple[float, float], ...]
    n_calibration: int

    def __post_init__(self):
        if not self.knots:
            raise DataError("a distance-error model needs at least one knot")
        for (d0, e0), (d1, e1) in zip(self.knots, self.knots[1:]):
            if not d1 > d0:
                raise DataError("knot distances must be strictly increasing")
            if e1 < e0:
                raise DataError("knot errors must be non-decreasing")

    def to_json(self) -> str:
        return json.dumps({"knots": [[d, e] for d, e in self.knots], "n_calibration": self.n_calibration}) + "\n"

    @classmethod
    def from_json(cls, text: str, source: str = "<calibration>") -> "DistanceErrorModel":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{source}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict) or "knots" not in doc or "n_calibration" not in doc:
            raise FormatError(f"{source}: missing field 'knots' or 'n_calibration'")
        try:
            knots = tuple((float(d), float(e)) for d, e in doc["knots"])
            return cls(knots, int(doc["n_calibration"]))
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{source}: field 'knots': {exc}") from None


def _pava(y: list[float], w: list[float]) -> list[tuple[int, int, float, float]]:
    """Pool adjacent violators. Returns blocks ``(start, stop, value, weight)``."""
    blocks: list[list] = []
    for i, (yi, wi) in enumerate(zip(y, w)):
        blocks.append([i, i + 1, yi, wi])
        while len(blocks) > 1 and blocks[-2][2] > blocks[-1][2]:
            s1, _, v1, w1 = blocks[-2]
            _, e2, v2, w2 = blocks.pop()
            wt = w1 + w2
            blocks[-1] = [s1, e2, (v1 * w1 + v2 * w2) / wt, wt]
    return [tuple(b) for b in blocks]


def isotonic_values(y, weights=None) -> np.ndarray:
    """Weighted least-squares non-decreasing fit of the sequence ``y`` (PAVA)."""
    y = [float(v) for v in y]
    w = [1.0] * len(y) if weights is None else [float(v) for v in weights]
    if len(w) != len(y):
        raise ParameterError(f"length mismatch: {len(y)} values vs {len(w)} weights")
    if any(not v > 0 for v in w):
        raise ParameterError("weights must be > 0")
    out = np.empty(len(y))
    for start, stop, value, _ in _pava(y, w):
        out[start:stop] = value
    return out


def fit_distance_error(pairs) -> DistanceErrorModel:
    """Least-squares non-decreasing fit of error against distance.

    Pairs are sorted by distance (then error, then input order), equal
    distances are pooled first so the fit is a function of distance, then
    PAVA pools violators. Each block becomes one knot at its mean distance.
    """
    pairs = [(float(d), float(e)) for d, e in pairs]
    if len(pairs) < 2:
        raise ParameterError("fit_distance_error needs at least 2 pairs")
    for d, e in pairs:
        if not (math.isfinite(d) and math.isfinite(e)):
            raise DataError("distance-error pairs must be finite")
        if d < 0 or e < 0:
            raise DataError("distances and errors must be >= 0")
    order = sorted(range(len(pairs)), key=lambda i: (pairs[i][0], pairs[i][1], i))
    xs = [pairs[i][0] for i in order]
    ys = [pairs[i][1] for i in order]

    # group equal distances
    gx, gy, gw = [], [], []
    i = 0
    while i < len(xs):
        j = i
        while j < len(xs) and xs[j] == xs[i]:
            j += 1
        gx.append(xs[i])
        gy.append(sum(ys[i:j]) / (j - i))
        gw.append(float(j - i))
        i = j

    knots = []
    for start, stop, value, _ in _pava(gy, gw):
        wsum = sum(gw[start:stop])
        dmean = sum(gx[t] * gw[t] for t in range(start, stop)) / wsum
        if knots and dmean <= knots[-1][0]:
            # rounding made two block means collide; merge into the earlier knot
            pd, pv, pw = knots[-1]
            knots[-1] = (pd, (pv * pw + value * wsum) / (pw + wsum), pw + wsum)
        else:
            knots.append((dmean, value, wsum))
    return DistanceErrorModel(tuple((d, v) for d, v, _ in knots), len(pairs))


def predict_error(model: DistanceErrorModel, d: float) -> float:
    d = float(d)
    if not math.isfinite(d) or d < 0:
        raise ParameterError(f"distance must be finite and >= 0, got {d}")
    knots = model.knots
    if d <= knots[0][0]:
        return knots[0][1]
    if d >= knots[-1][0]:
        return knots[-1][1]
    lo, hi = 0, len(knots) - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if knots[mid][0] <= d:
            lo = mid
        else:
            hi = mid
    (d0, e0), (d1, e1) = knots[lo], knots[hi]
    if d == d0:
        return e0
    return e0 + (e1 - e0) * (d - d0) / (d1 - d0)


def threshold_from_tolerance(model: DistanceErrorModel, tolerance: float) -> float:
    """Largest distance whose predicted error stays within ``tolerance``.

    Returns ``math.inf`` (trust everything) when even the last knot is within
    tolerance, and ``0.0`` (abstain on everything) when the first knot
    already exceeds it.
    """
    tolerance = float(tolerance)
    if math.isnan(tolerance) or tolerance < 0:
        raise ParameterError(f"tolerance must be >= 0, got {tolerance}")
    knots = model.knots
    if knots[-1][1] <= tolerance:
        return math.inf
    if knots[0][1] > tolerance:
        return 0.0
    last = max(i for i, (_, e) in enumerate(knots) if e <= tolerance)
    (d0, e0), (d1, e1) = knots[last], knots[last + 1]
    if e0 == tolerance:
        return d0
    return d0 + (tolerance - e0) * (d1 - d0) / (e1 - e0)


def threshold_from_budget(distances, budget: int) -> tuple[float, list[int]]:
    """Pick the ``budget`` most distant samples (ties by id).

    Returns ``(threshold, selected_ids)`` where the threshold is the smallest
    selected distance, or ``math.inf`` when nothing is selected.
    """
    if budget < 0:
        raise ParameterError(f"budget must be >= 0, got {budget}")
    ranked = sorted(((float(d), int(i)) for i, d in distances), key=lambda t: (-t[0], t[1]))
    chosen = ranked[: min(budget, len(ranked))]
    if not chosen:
        return math.inf, []
    return chosen[-1][0], [i for _, i in chosen]


@dataclass(frozen=True)
class Verdict:
    id: int
    nn_dist: float
    predicted_error: float
    decision: str


def judge(index: NeighborIndex, z, model: DistanceErrorModel, threshold: float, record_id: int = 0, k: int = 1) -> Verdict:
    d = nn_distance(index, z, k)
    return Verdict(
        id=int(record_id),
        nn_dist=d,
        predicted_error=predict_error(model, d),
        decision=TRUSTED if d <= threshold else ABSTAIN,
    )


def _average_ranks(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v))
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def rank_correlation(xs, ys) -> float:
    """Spearman's rho: Pearson correlation of average ranks."""
    if len(xs) != len(ys):
        raise ParameterError(f"length mismatch: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise ParameterError("rank correlation needs at least 2 samples")
    rx, ry = _average_ranks(xs), _average_ranks(ys)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float((rx * rx).sum()) * float((ry * ry).sum()))
    if denom == 0.0:
        raise UndefinedCorrelationError("rank correlation is undefined for constant input")
    return max(-1.0, min(1.0, float((rx * ry).sum()) / denom))


def write_calibration(path, model: DistanceErrorModel) -> None:
    Path(path).write_text(model.to_json())


def read_calibration(path) -> DistanceErrorModel:
    return DistanceErrorModel.from_json(Path(path).read_text(), source=str(path))
