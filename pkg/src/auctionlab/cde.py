"""Boosting-based conditional density estimation.

Learns a distribution over a real label conditioned on a feature vector by
binning the label range, boosting decision stumps against per-breakpoint
logistic losses, and monotonizing the resulting scores into a proper CDF.
Feature entries may be Unknown (None or NaN); stumps route those examples
to a dedicated third branch.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class LabeledExample:
    features: tuple
    label: float


@dataclass(frozen=True)
class Breakpoints:
    b: tuple
    k: int
    degenerate: bool = False

    def __post_init__(self):
        if len(self.b) != self.k + 2:
            raise ValueError("breakpoint list must have k + 2 entries")
        for lo, hi in zip(self.b[:-2], self.b[1:-1]):
            if not lo < hi:
                raise ValueError("b_0 .. b_k must be strictly increasing")
        if self.b[-2] > self.b[-1]:
            raise ValueError("b_k must not exceed b_{k+1}")


@dataclass(frozen=True)
class Stump:
    feature_index: int
    threshold: float
    a: tuple
    b: tuple
    c: tuple


@dataclass(frozen=True)
class CdeModel:
    breakpoints: Breakpoints
    stumps: tuple
    rounds: int
    smoothing_eps: float = 0.0
    loss_trace: tuple = field(default=())

    @property
    def degenerate(self) -> bool:
        return self.breakpoints.degenerate


@dataclass(frozen=True)
class BinProbabilities:
    p: tuple

    def diffs(self) -> tuple:
        return tuple(a - b for a, b in zip(self.p[:-1], self.p[1:]))


def _feature_matrix(dataset: Sequence[LabeledExample]):
    m = len(dataset)
    width = len(dataset[0].features)
    x = np.empty((m, width))
    for i, ex in enumerate(dataset):
        if len(ex.features) != width:
            raise ValueError("feature vectors must share one length")
        x[i] = [np.nan if v is None else float(v) for v in ex.features]
    y = np.array([float(ex.label) for ex in dataset])
    return x, y


def _vectorize_query(x) -> np.ndarray:
    return np.array([np.nan if v is None else float(v) for v in x])


def compute_breakpoints(labels: Sequence[float], k: int) -> Breakpoints:
    """Entropy-optimal binning of the labels into at most k+1 bins.

    Interior breakpoints are chosen among the distinct observed values to
    minimize sum(q_j ln q_j) over the bin fractions, via dynamic
    programming. The bottom breakpoint is the minimum label and the top is
    the maximum.
    """
    if len(labels) == 0:
        raise ValueError("labels must be nonempty")
    if k < 1:
        raise ValueError("k must be at least 1")
    y = np.sort(np.asarray(labels, dtype=float))
    values, counts = np.unique(y, return_counts=True)
    d = len(values)
    m = len(y)
    if d == 1:
        v = float(values[0])
        return Breakpoints(b=(v, v), k=0, degenerate=True)
    k_eff = min(k, d - 1)
    prefix = np.concatenate(([0], np.cumsum(counts)))
    # cost of a bin holding n of the m labels, indexed by n
    n_range = np.arange(m + 1, dtype=float)
    cost_table = np.full(m + 1, np.inf)
    cost_table[1:] = (n_range[1:] / m) * np.log(n_range[1:] / m)

    n_layers = k_eff + 1
    dp_prev = np.full(d + 1, np.inf)
    dp_prev[0] = 0.0
    parents = np.zeros((n_layers + 1, d + 1), dtype=np.int64)

    # the bin cost is a convex function of the interval's label count, so
    # the optimal split point is monotone in the right endpoint and each
    # layer can be solved by divide and conquer
    for layer in range(1, n_layers + 1):
        dp_cur = np.full(d + 1, np.inf)
        stack = [(layer, d, layer - 1, d - 1)]
        while stack:
            ilo, ihi, olo, ohi = stack.pop()
            if ilo > ihi:
                continue
            mid = (ilo + ihi) // 2
            hi_cand = min(ohi, mid - 1)
            cands = np.arange(olo, hi_cand + 1)
            vals = dp_prev[cands] + cost_table[prefix[mid] - prefix[cands]]
            best = int(np.argmin(vals))
            dp_cur[mid] = vals[best]
            split = int(cands[best])
            parents[layer, mid] = split
            stack.append((ilo, mid - 1, olo, split))
            stack.append((mid + 1, ihi, split, ohi))
        dp_prev = dp_cur
    cut = d
    boundaries = []
    for layer in range(n_layers, 0, -1):
        boundaries.append(cut)
        cut = int(parents[layer, cut])
    boundaries = boundaries[::-1]  # end index (exclusive) of each bin
    interior = [float(values[boundaries[j - 1]]) for j in range(1, n_layers)]
    b = (float(values[0]), *interior, float(values[-1]))
    return Breakpoints(b=b, k=k_eff, degenerate=False)


def _sign_matrix(y: np.ndarray, bp: Breakpoints) -> np.ndarray:
    interior = np.asarray(bp.b[1 : bp.k + 1])
    return np.where(y[:, None] >= interior[None, :], 1.0, -1.0)


class _FeatureLayout:
    """Per-feature sort orders and threshold candidates, shared by rounds."""

    def __init__(self, x: np.ndarray):
        self.m, self.width = x.shape
        self.per_feature = []
        for f in range(self.width):
            col = x[:, f]
            known = np.nonzero(~np.isnan(col))[0]
            order = known[np.argsort(col[known], kind="stable")]
            vals = col[order]
            unknown = np.nonzero(np.isnan(col))[0]
            if len(vals) == 0:
                self.per_feature.append((order, unknown, np.empty(0), np.empty(0, int)))
                continue
            change = np.nonzero(np.diff(vals))[0]
            group_ends = np.append(change, len(vals) - 1)
            distinct = vals[group_ends]
            thresholds = np.concatenate(
                ([distinct[0]], (distinct[:-1] + distinct[1:]) / 2.0))
            below_counts = np.concatenate(([0], group_ends[:-1] + 1))
            self.per_feature.append((order, unknown, thresholds, below_counts))


def _pair_term(wp, wm, eps):
    """Objective contribution of one block at its smoothed optimal value."""
    ratio = (wm + eps) / (wp + eps)
    root = np.sqrt(ratio)
    return wp * root + wm / root


def _block_value(wp, wm, eps):
    return 0.5 * np.log((wp + eps) / (wm + eps))


def _search_stump(wp, wm, layout: _FeatureLayout, eps: float) -> Stump:
    k = wp.shape[1]
    total_p = wp.sum(axis=0)
    total_m = wm.sum(axis=0)
    best = None  # (objective, feature, candidate index)
    for f, (order, unknown, thresholds, below_counts) in enumerate(layout.per_feature):
        if len(thresholds) == 0:
            continue
        if len(unknown):
            up = wp[unknown].sum(axis=0)
            um = wm[unknown].sum(axis=0)
            unknown_term = _pair_term(up, um, eps).sum()
        else:
            up = um = np.zeros(k)
            unknown_term = 0.0
        known_p = total_p - up
        known_m = total_m - um
        cum_p = np.cumsum(wp[order], axis=0)
        cum_m = np.cumsum(wm[order], axis=0)
        n_cand = len(thresholds)
        below_p = np.zeros((n_cand, k))
        below_m = np.zeros((n_cand, k))
        rows = below_counts[1:] - 1
        if len(rows):
            below_p[1:] = cum_p[rows]
            below_m[1:] = cum_m[rows]
        above_p = known_p[None, :] - below_p
        above_m = known_m[None, :] - below_m
        objective = (_pair_term(above_p, above_m, eps).sum(axis=1)
                     + _pair_term(below_p, below_m, eps).sum(axis=1)
                     + unknown_term)
        c = int(np.argmin(objective))
        if best is None or objective[c] < best[0]:
            best = (float(objective[c]), f, c,
                    above_p[c], above_m[c], below_p[c], below_m[c], up, um,
                    len(unknown), int(below_counts[c]), float(thresholds[c]))
    if best is None:
        return Stump(0, 0.0, (0.0,) * k, (0.0,) * k, (0.0,) * k)
    (_, f, _, ap, am, bp_, bm, up, um, n_unknown, n_below, theta) = best
    a = _block_value(ap, am, eps)
    if n_below == 0:
        b = a.copy()
    else:
        b = _block_value(bp_, bm, eps)
    if n_unknown == 0:
        c_vals = np.zeros(k)
    else:
        c_vals = _block_value(up, um, eps)
    return Stump(f, theta, tuple(a.tolist()), tuple(b.tolist()),
                 tuple(c_vals.tolist()))


def best_stump(weights, dataset: Sequence[LabeledExample], breakpoints: Breakpoints,
               smoothing_eps: float) -> Stump:
    """Exhaustive stump search minimizing the weighted exponential objective."""
    if smoothing_eps <= 0:
        raise ValueError("smoothing_eps must be positive")
    w = np.asarray(weights, dtype=float)
    x, y = _feature_matrix(dataset)
    s = _sign_matrix(y, breakpoints)
    wp = w * (s > 0)
    wm = w * (s < 0)
    return _search_stump(wp, wm, _FeatureLayout(x), smoothing_eps)


def _stump_rows(stump: Stump, x: np.ndarray) -> np.ndarray:
    col = x[:, stump.feature_index]
    out = np.empty((len(x), len(stump.a)))
    unknown = np.isnan(col)
    above = ~unknown & (col >= stump.threshold)
    below = ~unknown & ~above
    out[above] = np.asarray(stump.a)
    out[below] = np.asarray(stump.b)
    out[unknown] = np.asarray(stump.c)
    return out


def train(dataset: Sequence[LabeledExample], k: int, rounds: int,
          smoothing_eps: float | None = None) -> CdeModel:
    """Boost decision stumps for the per-breakpoint logistic problems."""
    if not dataset:
        raise ValueError("dataset must be nonempty")
    if rounds < 1:
        raise ValueError("rounds must be at least 1")
    x, y = _feature_matrix(dataset)
    m = len(dataset)
    if smoothing_eps is None:
        smoothing_eps = 1.0 / (2.0 * m)
    if smoothing_eps <= 0:
        raise ValueError("smoothing_eps must be positive")
    bp = compute_breakpoints(y, k)
    if bp.degenerate:
        return CdeModel(bp, (), rounds=0, smoothing_eps=smoothing_eps,
                        loss_trace=(0.0,))
    s = _sign_matrix(y, bp)
    layout = _FeatureLayout(x)
    f_acc = np.zeros((m, bp.k))
    losses = [m * bp.k * math.log(2.0)]
    stumps = []
    for _ in range(rounds):
        w = expit(-(s * f_acc))
        wp = w * (s > 0)
        wm = w * (s < 0)
        stump = _search_stump(wp, wm, layout, smoothing_eps)
        stumps.append(stump)
        f_acc += _stump_rows(stump, x)
        losses.append(float(np.logaddexp(0.0, -(s * f_acc)).sum()))
    return CdeModel(bp, tuple(stumps), rounds=rounds,
                    smoothing_eps=smoothing_eps, loss_trace=tuple(losses))


def monotonize(raw_scores) -> tuple:
    """Average of the tightest nonincreasing upper and lower envelopes."""
    f = np.asarray(raw_scores, dtype=float)
    if f.size == 0:
        return ()
    upper = np.maximum.accumulate(f[::-1])[::-1]
    lower = np.minimum.accumulate(f)
    return tuple(((upper + lower) / 2.0).tolist())


def raw_scores(model: CdeModel, x) -> tuple:
    xv = _vectorize_query(x)
    k = model.breakpoints.k
    f = np.zeros(k)
    for stump in model.stumps:
        v = xv[stump.feature_index]
        if np.isnan(v):
            f += np.asarray(stump.c)
        elif v >= stump.threshold:
            f += np.asarray(stump.a)
        else:
            f += np.asarray(stump.b)
    return tuple(f.tolist())


def predict_cdf(model: CdeModel, x) -> BinProbabilities:
    """Exceedance probabilities p_j = P(label >= b_j), with p_0 = 1 and
    p_{k+1} = 0."""
    if model.degenerate:
        return BinProbabilities((1.0, 0.0))
    scores = monotonize(raw_scores(model, x))
    interior = expit(np.asarray(scores))
    return BinProbabilities((1.0, *interior.tolist(), 0.0))


def sample(model: CdeModel, x, rng) -> float:
    """Draw a label: pick a bin by its probability mass, then a uniform
    point inside it."""
    b = model.breakpoints.b
    if model.degenerate:
        return float(b[0])
    probs = predict_cdf(model, x)
    diffs = np.asarray(probs.diffs())
    cum = np.cumsum(diffs)
    j = int(np.searchsorted(cum, rng.random(), side="right"))
    j = min(j, len(diffs) - 1)
    lo, hi = b[j], b[j + 1]
    return float(lo + rng.random() * (hi - lo))


def expected_value(model: CdeModel, x) -> float:
    """Mean of the predicted distribution, bins taken as uniform."""
    b = model.breakpoints.b
    if model.degenerate:
        return float(b[0])
    probs = predict_cdf(model, x)
    total = 0.0
    for j, mass in enumerate(probs.diffs()):
        total += mass * (b[j] + b[j + 1]) / 2.0
    return float(total)


def model_to_dict(model: CdeModel) -> dict:
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": "cde-model",
        "k": model.breakpoints.k,
        "breakpoints": list(model.breakpoints.b),
        "degenerate": model.breakpoints.degenerate,
        "rounds": model.rounds,
        "smoothing_eps": model.smoothing_eps,
        "loss_trace": list(model.loss_trace),
        "stumps": [
            {
                "feature": st.feature_index,
                "threshold": st.threshold,
                "a": list(st.a),
                "b": list(st.b),
                "c": list(st.c),
            }
            for st in model.stumps
        ],
    }


def model_from_dict(doc: dict) -> CdeModel:
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError("unsupported model format version")
    bp = Breakpoints(b=tuple(doc["breakpoints"]), k=int(doc["k"]),
                     degenerate=bool(doc["degenerate"]))
    stumps = tuple(
        Stump(int(s["feature"]), float(s["threshold"]),
              tuple(s["a"]), tuple(s["b"]), tuple(s["c"]))
        for s in doc["stumps"])
    return CdeModel(bp, stumps, rounds=int(doc["rounds"]),
                    smoothing_eps=float(doc["smoothing_eps"]),
                    loss_trace=tuple(doc.get("loss_trace", ())))


def save_model(model: CdeModel, path) -> None:
    with open(path, "w") as handle:
        json.dump(model_to_dict(model), handle)


def load_model(path) -> CdeModel:
    with open(path) as handle:
        return model_from_dict(json.load(handle))


def write_dataset_csv(dataset: Sequence[LabeledExample], path,
                      feature_names=None) -> None:
    """CSV export with a header row; Unknown features become empty fields."""
    if not dataset:
        raise ValueError("dataset must be nonempty")
    width = len(dataset[0].features)
    if feature_names is None:
        feature_names = [f"f{i}" for i in range(width)]
    if len(feature_names) != width:
        raise ValueError("one name per feature column")
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(list(feature_names) + ["label"])
        for ex in dataset:
            row = ["" if v is None or (isinstance(v, float) and math.isnan(v))
                   else repr(float(v)) for v in ex.features]
            row.append(repr(float(ex.label)))
            writer.writerow(row)


def read_dataset_csv(path):
    """CSV import; returns (dataset, feature_names)."""
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        if not header or header[-1] != "label":
            raise ValueError("last CSV column must be the label")
        names = header[:-1]
        dataset = []
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError("CSV row width does not match header")
            feats = tuple(None if cell == "" else float(cell)
                          for cell in row[:-1])
            dataset.append(LabeledExample(feats, float(row[-1])))
    return dataset, names
