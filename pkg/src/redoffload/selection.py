"""L1-regularised logistic regression and recursive feature elimination."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import DegenerateLabelsError

MAX_ITER = 5000
TOL = 1e-8


def _objective(w, b, x, y, reg):
    z = x @ w + b
    # log(1 + e^z) - y z, computed without overflow
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + reg * np.abs(w).sum())


def l1_logistic_train(x, y, reg_strength: float, max_iter: int = MAX_ITER, tol: float = TOL) -> np.ndarray:
    """Proximal-gradient fit of ``mean logistic loss + reg * ||w||_1``.

    Returns ``F + 1`` coefficients, the intercept last. The intercept is not
    penalised.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("x must be (M, F) and y of length M")
    if x.shape[0] < 2:
        raise ValueError("need at least two samples")
    if not reg_strength > 0:
        raise ValueError("reg_strength must be > 0")
    if np.unique(y).size < 2:
        raise DegenerateLabelsError("labels contain a single class")
    m, f = x.shape
    # logistic loss curvature is at most 1/4
    xt = np.hstack([x, np.ones((m, 1))])
    lip = 0.25 * np.linalg.norm(xt, 2) ** 2 / m
    step = 1.0 / max(lip, 1e-12)
    w = np.zeros(f)
    b = 0.0
    prev = _objective(w, b, x, y, reg_strength)
    for _ in range(max_iter):
        r = expit(x @ w + b) - y
        gw = x.T @ r / m
        gb = r.mean()
        u = w - step * gw
        w = np.sign(u) * np.maximum(np.abs(u) - step * reg_strength, 0.0)
        b -= step * gb
        cur = _objective(w, b, x, y, reg_strength)
        if abs(prev - cur) < tol:
            break
        prev = cur
    return np.append(w, b)


def logistic_predict(coef, x) -> np.ndarray:
    coef = np.asarray(coef, dtype=float)
    return expit(np.asarray(x, dtype=float) @ coef[:-1] + coef[-1])


@dataclass
class RfeRound:
    features: list[int]
    accuracy: float
    weights: np.ndarray  # aligned with ``features``, fitted on standardised inputs


@dataclass
class RfeResult:
    selected: list[int]
    rounds: list[RfeRound] = field(default_factory=list)

    @property
    def best(self) -> RfeRound:
        return next(r for r in self.rounds if r.features == self.selected)

    def relevance(self) -> list[tuple[int, float]]:
        """Selected features with weights scaled so the largest magnitude is 1."""
        w = self.best.weights
        top = np.abs(w).max()
        scaled = w / top if top > 0 else np.zeros_like(w)
        return sorted(zip(self.best.features, scaled.tolist()), key=lambda t: (-abs(t[1]), t[0]))


def _drop_count(step, remaining: int, target: int) -> int:
    if isinstance(step, float):
        if not 0 < step < 1:
            raise ValueError("fractional step must be in (0, 1)")
        k = max(1, int(np.floor(step * remaining)))
    else:
        k = int(step)
        if k < 1:
            raise ValueError("step must be >= 1")
    return min(k, remaining - target)


def recursive_feature_elimination(x, y, target_count: int, x_val, y_val, step: int | float = 0.1,
                                  reg_strength: float = 1e-3) -> RfeResult:
    """Drop the least relevant features round by round, keep the best validation round.

    Features are standardised with training statistics before every fit, so
    weight magnitudes are comparable. Validation ties go to the smaller set.
    """
    x = np.asarray(x, dtype=float)
    x_val = np.asarray(x_val, dtype=float)
    y_val = np.asarray(y_val)
    n_feat = x.shape[1]
    if not 1 <= target_count <= n_feat:
        raise ValueError(f"target_count must be in [1, {n_feat}]")
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd < 1e-12] = 1.0
    xs = (x - mu) / sd
    xvs = (x_val - mu) / sd
    current = list(range(n_feat))
    rounds = []
    while True:
        coef = l1_logistic_train(xs[:, current], y, reg_strength)
        pred = logistic_predict(coef, xvs[:, current]) > 0.5
        acc = float(np.mean(pred == (y_val > 0.5)))
        w = coef[:-1]
        rounds.append(RfeRound(list(current), acc, w))
        if len(current) <= target_count:
            break
        k = _drop_count(step, len(current), target_count)
        order = np.argsort(np.abs(w), kind="stable")
        drop = set(order[:k].tolist())
        current = [c for j, c in enumerate(current) if j not in drop]
    best = max(rounds, key=lambda r: (r.accuracy, -len(r.features)))
    return RfeResult(best.features, rounds)


def write_relevance_csv(result: RfeResult, names: Sequence[str], blocks: Sequence[str], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature", "block", "normalized_relevance"])
        for idx, rel in result.relevance():
            w.writerow([names[idx], blocks[idx], repr(rel)])


def read_relevance_csv(path) -> list[tuple[str, str, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["feature", "block", "normalized_relevance"]:
        raise ValueError("unexpected relevance header")
    return [(a, b, float(c)) for a, b, c in rows[1:]]
