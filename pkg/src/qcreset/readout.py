"""Single-shot IQ readout: synthesis, mixture fitting and classification.

Shot clouds in the IQ plane are modeled as a weighted sum of four 2D
Gaussian components, one per transmon state g, e, f, h. Populations are
estimated by counting shots inside each component's 1-sigma ellipse
(Mahalanobis distance <= 1), normalized by the total count inside any
ellipse; a shot inside several ellipses goes to the component with the
highest posterior responsibility. A matched Gaussian cloud keeps
1 - exp(-1/2) = 39.35% of its shots inside its own ellipse.

The mixture is fitted by expectation-maximization written out directly
(rather than delegated to a library) so the per-iteration log-likelihood
trail is available for monotonicity checks and the collapse/restart
policy is explicit.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = [
    "ShotSet",
    "GaussianComponent",
    "MixtureModel",
    "CovarianceCollapseError",
    "synthesize_shots",
    "fit_mixture",
    "classify_and_estimate",
    "ReadoutEstimate",
    "pexc_from_shots",
    "read_shots_csv",
    "write_shots_csv",
    "mixture_to_json",
    "mixture_from_json",
]

STATE_LABELS = ("g", "e", "f", "h")

# eigenvalue floor for EM covariances, relative to the data variance
COVARIANCE_FLOOR_SCALE = 1e-9
MAX_EM_RESTARTS = 5
# informational: components that end up holding almost no data
LOW_WEIGHT_FLAG_THRESHOLD = 0.02


class CovarianceCollapseError(RuntimeError):
    """EM covariances collapsed repeatedly; the data cannot support 4 clusters."""


@dataclass(frozen=True)
class ShotSet:
    """IQ-plane shots, optionally with ground-truth state labels (0..3)."""

    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("points must be an (n, 2) array")
        if not np.all(np.isfinite(pts)):
            raise ValueError("shot coordinates must be finite")
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=int)
            if lab.shape != (pts.shape[0],):
                raise ValueError("labels must match the number of points")
            object.__setattr__(self, "labels", lab)

    @property
    def n(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class GaussianComponent:
    weight: float
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError("weight must lie in [0, 1]")
        mean = np.asarray(self.mean, dtype=float).reshape(2)
        cov = np.asarray(self.covariance, dtype=float).reshape(2, 2)
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(cov).min() <= 0.0:
            raise ValueError("covariance must be positive definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    def mahalanobis_sq(self, points: np.ndarray) -> np.ndarray:
        diff = np.asarray(points) - self.mean
        sol = np.linalg.solve(self.covariance, diff.T)
        return np.einsum("ij,ji->i", diff, sol)

    def log_pdf(self, points: np.ndarray) -> np.ndarray:
        sign, logdet = np.linalg.slogdet(self.covariance)
        return -0.5 * (self.mahalanobis_sq(points) + logdet) - np.log(2 * np.pi)


@dataclass(frozen=True)
class MixtureModel:
    """Exactly four Gaussian components labeled g, e, f, h (in that order)."""

    components: tuple[GaussianComponent, ...]
    fit_info: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.components) != 4:
            raise ValueError("a mixture model has exactly four components")
        total = sum(c.weight for c in self.components)
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"component weights must sum to 1, got {total}")
        object.__setattr__(self, "components", tuple(self.components))

    def component(self, label: str) -> GaussianComponent:
        return self.components[STATE_LABELS.index(label)]

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    @property
    def means(self) -> np.ndarray:
        return np.array([c.mean for c in self.components])

    def log_responsibilities(self, points: np.ndarray) -> np.ndarray:
        """Unnormalized log posterior log(w_j) + log N_j(x), shape (n, 4)."""
        logs = np.column_stack([
            np.log(max(c.weight, 1e-300)) + c.log_pdf(points)
            for c in self.components
        ])
        return logs


def synthesize_shots(model: MixtureModel, populations: Sequence[float],
                     n: int, seed: int) -> ShotSet:
    """Draw shots with state labels ~ populations and IQ noise per component.

    Deterministic for a fixed seed: one label draw and one standard-normal
    block, transformed through each component's Cholesky factor.
    """
    p = np.asarray(populations, dtype=float)
    if p.shape != (4,) or np.any(p < 0.0):
        raise ValueError("populations must be four nonnegative numbers")
    if abs(p.sum() - 1.0) > 1e-8:
        raise ValueError(f"populations must sum to 1, got {p.sum()}")
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    labels = rng.choice(4, size=n, p=p / p.sum())
    normals = rng.standard_normal((n, 2))
    points = np.empty((n, 2))
    for j, comp in enumerate(model.components):
        mask = labels == j
        if not np.any(mask):
            continue
        chol = np.linalg.cholesky(comp.covariance)
        points[mask] = comp.mean + normals[mask] @ chol.T
    return ShotSet(points=points, labels=labels)


def _em_once(points: np.ndarray, means: np.ndarray, floor: float,
             max_iter: int, tol: float):
    """One EM run; returns (weights, means, covs, loglik_history) or None on
    covariance collapse."""
    n, k = points.shape[0], means.shape[0]
    weights = np.full(k, 1.0 / k)
    base_cov = np.cov(points.T) + floor * np.eye(2)
    covs = np.array([base_cov.copy() for _ in range(k)])
    history = []
    for _ in range(max_iter):
        # E step in log space
        logs = np.empty((n, k))
        for j in range(k):
            sign, logdet = np.linalg.slogdet(covs[j])
            if sign <= 0:
                return None
            diff = points - means[j]
            sol = np.linalg.solve(covs[j], diff.T)
            maha = np.einsum("ij,ji->i", diff, sol)
            logs[:, j] = np.log(max(weights[j], 1e-300)) - 0.5 * (
                maha + logdet) - np.log(2 * np.pi)
        top = logs.max(axis=1, keepdims=True)
        lse = top[:, 0] + np.log(np.exp(logs - top).sum(axis=1))
        loglik = float(lse.sum())
        resp = np.exp(logs - lse[:, None])
        # M step
        counts = resp.sum(axis=0)
        if np.any(counts <= 0.0):
            return None
        weights = counts / n
        means = (resp.T @ points) / counts[:, None]
        for j in range(k):
            diff = points - means[j]
            covs[j] = (resp[:, j, None] * diff).T @ diff / counts[j]
            if np.linalg.eigvalsh(covs[j]).min() < floor:
                return None
        history.append(loglik)
        if len(history) > 1 and abs(history[-1] - history[-2]) <= tol * abs(history[-1]):
            break
    return weights, means, covs, history


def fit_mixture(shots: ShotSet, init_means: np.ndarray | None = None,
                max_iter: int = 300, tol: float = 1e-10,
                seed: int = 0) -> MixtureModel:
    """Expectation-maximization fit of the four-component mixture.

    Component-to-state labels are assigned by matching the fitted means to
    ``init_means`` (given in g, e, f, h order, normally the calibration
    means at zero reset time). Without init means the components are
    labeled by descending weight, ties broken by the first IQ coordinate --
    documented as the less reliable fallback. A covariance eigenvalue
    falling below 1e-9 of the data variance restarts EM from perturbed
    means, at most five times, before raising CovarianceCollapseError.
    """
    points = shots.points
    if shots.n < 16:
        raise ValueError("need at least 4 points per component (16 total)")
    data_var = float(points.var(axis=0).mean())
    floor = COVARIANCE_FLOOR_SCALE * data_var
    if init_means is not None:
        means0 = np.asarray(init_means, dtype=float).reshape(4, 2)
    else:
        rng0 = np.random.default_rng(seed)
        means0 = points[rng0.choice(shots.n, size=4, replace=False)]

    rng = np.random.default_rng((seed, 1))  # distinct stream from the init draw
    restarts = 0
    result = _em_once(points, means0.copy(), floor, max_iter, tol)
    while result is None:
        restarts += 1
        if restarts > MAX_EM_RESTARTS:
            raise CovarianceCollapseError(
                f"EM covariance collapsed in {MAX_EM_RESTARTS} restarts")
        # re-seed the means from the data itself; a tiny cluster that broke
        # the first pass then starts on actual points
        resampled = points[rng.choice(shots.n, size=4, replace=False)]
        result = _em_once(points, resampled, floor, max_iter, tol)
    weights, means, covs, history = result

    if init_means is not None:
        # bijective assignment: fitted component -> calibration state
        cost = np.linalg.norm(means[:, None, :] - means0[None, :, :], axis=2)
        rows, cols = linear_sum_assignment(cost)
        order = np.empty(4, dtype=int)
        order[cols] = rows
    else:
        order = np.lexsort((means[:, 0], -weights))

    flags = [f"low_weight:{STATE_LABELS[pos]}"
             for pos, j in enumerate(order)
             if weights[j] < LOW_WEIGHT_FLAG_THRESHOLD]
    components = tuple(
        GaussianComponent(weight=float(weights[j]), mean=means[j],
                          covariance=covs[j])
        for j in order
    )
    # absorb rounding so the validated weights sum exactly to one
    total = sum(c.weight for c in components)
    components = tuple(
        GaussianComponent(weight=c.weight / total, mean=c.mean,
                          covariance=c.covariance) for c in components
    )
    return MixtureModel(
        components=components,
        fit_info={
            "loglik_history": history,
            "n_iter": len(history),
            "restarts": restarts,
            "converged": len(history) < max_iter,
            "flags": flags,
        },
    )


@dataclass(frozen=True)
class ReadoutEstimate:
    populations: np.ndarray
    counts: np.ndarray
    inside_fraction: float


def classify_and_estimate(shots: ShotSet, model: MixtureModel) -> ReadoutEstimate:
    """Populations from 1-sigma ellipse counts, p_j = N_j / sum_k N_k.

    A shot inside several ellipses is assigned to the contender with the
    highest posterior responsibility; shots outside every ellipse drop out
    of the normalization entirely.
    """
    points = shots.points
    inside = np.column_stack([c.mahalanobis_sq(points) <= 1.0
                              for c in model.components])
    any_inside = inside.any(axis=1)
    if not np.any(any_inside):
        raise ValueError("no shot falls inside any 1-sigma ellipse")
    log_resp = model.log_responsibilities(points)
    masked = np.where(inside, log_resp, -np.inf)
    assignment = np.argmax(masked[any_inside], axis=1)
    counts = np.bincount(assignment, minlength=4).astype(float)
    populations = counts / counts.sum()
    return ReadoutEstimate(
        populations=populations,
        counts=counts,
        inside_fraction=float(any_inside.sum() / shots.n),
    )


def pexc_from_shots(populations: Sequence[float]) -> float:
    """Excitation probability 1 - p_g (equal to p_e + p_f + p_h)."""
    p = np.asarray(populations, dtype=float)
    if p.shape != (4,):
        raise ValueError("populations must be four numbers")
    pexc = 1.0 - p[0]
    if abs(pexc - (p[1] + p[2] + p[3])) > 1e-12:
        raise ValueError("populations are not normalized: 1 - p_g != p_e+p_f+p_h")
    return float(pexc)


# --- io ------------------------------------------------------------------

def write_shots_csv(path, shots: ShotSet) -> None:
    with open(path, "w") as fh:
        fh.write("I,Q" + (",label" if shots.labels is not None else "") + "\n")
        for i in range(shots.n):
            row = f"{shots.points[i, 0]:.12e},{shots.points[i, 1]:.12e}"
            if shots.labels is not None:
                row += f",{STATE_LABELS[shots.labels[i]]}"
            fh.write(row + "\n")


def read_shots_csv(path) -> ShotSet:
    points, labels = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0] in ("I", "i", "t"):
                continue
            points.append([float(row[0]), float(row[1])])
            if len(row) > 2 and row[2] != "":
                labels.append(STATE_LABELS.index(row[2]))
    lab = np.array(labels) if len(labels) == len(points) and labels else None
    return ShotSet(points=np.array(points), labels=lab)


def mixture_to_json(model: MixtureModel) -> dict:
    return {
        "labels": list(STATE_LABELS),
        "weights": [c.weight for c in model.components],
        "means": [c.mean.tolist() for c in model.components],
        "covariances": [c.covariance.tolist() for c in model.components],
    }


def mixture_from_json(data: dict) -> MixtureModel:
    comps = tuple(
        GaussianComponent(weight=float(w), mean=np.array(m),
                          covariance=np.array(c))
        for w, m, c in zip(data["weights"], data["means"], data["covariances"])
    )
    return MixtureModel(components=comps)


def write_mixture_json(path, model: MixtureModel) -> None:
    with open(path, "w") as fh:
        json.dump(mixture_to_json(model), fh, indent=2, sort_keys=True)
        fh.write("\n")
