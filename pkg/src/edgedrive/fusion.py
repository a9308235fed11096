"""Multi-sensor fusion.

Three layers: a discrete Bayes update over categorical hypotheses,
inverse-variance weighted averaging of redundant scalar readings, and a
linear-Gaussian filter (with an extended variant for nonlinear readouts)
that tracks the driving state.  Covariance updates use the Joseph form
and gains come from a linear solve, never an explicit matrix inverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DegenerateEvidenceError,
    DomainError,
    NumericalError,
    ShapeError,
    UsageError,
)
from .sensors import Measurement, SensorKind


# ---------------------------------------------------------------------------
# discrete Bayes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscreteBelief:
    """Categorical distribution over labelled states.

    Probabilities sum to 1 within 1e-12.  Labels are optional; when given
    there must be one per probability.
    """

    probs: np.ndarray
    states: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        object.__setattr__(
            self, "probs", np.asarray(self.probs, dtype=float).reshape(-1)
        )
        if self.probs.size == 0:
            raise ShapeError("a belief needs at least one hypothesis")
        if self.states is not None:
            object.__setattr__(self, "states", tuple(self.states))
            if len(self.states) != self.probs.size:
                raise ShapeError(
                    f"{len(self.states)} state labels for "
                    f"{self.probs.size} probabilities"
                )
        if np.any(self.probs < 0.0) or not np.isfinite(self.probs).all():
            raise DomainError("probabilities must be finite and non-negative")
        if abs(float(self.probs.sum()) - 1.0) > 1e-12:
            raise DomainError(
                f"probabilities must sum to 1, got {float(self.probs.sum())!r}"
            )

    def argmax(self) -> int:
        return int(np.argmax(self.probs))

    def top_state(self) -> Optional[str]:
        return None if self.states is None else self.states[self.argmax()]


def bayes_update(prior: DiscreteBelief, likelihood: np.ndarray) -> DiscreteBelief:
    """Posterior proportional to likelihood times prior, renormalised.

    Raises DegenerateEvidenceError when the evidence rules out every
    hypothesis the prior supports (normaliser is zero).
    """
    like = np.asarray(likelihood, dtype=float).reshape(-1)
    if like.size != prior.probs.size:
        raise ShapeError(
            f"likelihood length {like.size} does not match "
            f"belief size {prior.probs.size}"
        )
    if np.any(like < 0.0) or not np.isfinite(like).all():
        raise DomainError("likelihoods must be finite and non-negative")
    unnorm = like * prior.probs
    total = float(unnorm.sum())
    if total <= 0.0:
        raise DegenerateEvidenceError(
            "evidence assigns zero probability to every supported hypothesis"
        )
    return DiscreteBelief(probs=unnorm / total, states=prior.states)


# ---------------------------------------------------------------------------
# inverse-variance fusion
# ---------------------------------------------------------------------------

def inverse_variance_weights(variances: Sequence[float]) -> np.ndarray:
    """Normalised weights w_i = (1 / var_i) / sum_j (1 / var_j)."""
    var = np.asarray(variances, dtype=float).reshape(-1)
    if var.size == 0:
        raise UsageError("no variances to weight")
    for i, v in enumerate(var):
        if not np.isfinite(v) or v <= 0.0:
            raise DomainError(f"variance at index {i} must be positive, got {v}")
    inv = 1.0 / var
    return inv / inv.sum()


def weighted_fuse(
    estimates: Sequence[Tuple[float, float]]
) -> Tuple[float, float]:
    """Fuse (mean, variance) estimates by inverse-variance weighting.

    Returns (weighted mean, 1 / sum(1 / var_i)); the fused variance never
    exceeds the smallest input variance, and a single estimate is returned
    unchanged.
    """
    pairs = list(estimates)
    if not pairs:
        raise UsageError("nothing to fuse")
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ShapeError("each estimate must be a (mean, variance) pair")
    mu, var = arr[:, 0], arr[:, 1]
    w = inverse_variance_weights(var)
    fused_mean = float(w @ mu)
    fused_var = float(1.0 / np.sum(1.0 / var))
    return fused_mean, fused_var


# ---------------------------------------------------------------------------
# Kalman filtering
# ---------------------------------------------------------------------------

_SYM_TOL = 1e-12


def _check_symmetric(mat: np.ndarray, name: str) -> None:
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ShapeError(f"{name} must be a square matrix")
    if not np.isfinite(mat).all():
        raise DomainError(f"{name} must be finite")
    if np.max(np.abs(mat - mat.T)) > _SYM_TOL * max(1.0, np.max(np.abs(mat))):
        raise DomainError(f"{name} must be symmetric")


@dataclass(frozen=True)
class GaussianEstimate:
    """Gaussian state estimate: mean vector and symmetric covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(-1))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))
        if not np.isfinite(self.mean).all():
            raise DomainError("mean must be finite")
        _check_symmetric(self.cov, "covariance")
        if self.cov.shape[0] != self.mean.size:
            raise ShapeError(
                f"covariance is {self.cov.shape[0]}x{self.cov.shape[0]} but "
                f"the mean has {self.mean.size} components"
            )

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class TransitionModel:
    """Linear dynamics: x' = F x with additive process noise Q."""

    F: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "F", np.asarray(self.F, dtype=float))
        object.__setattr__(self, "Q", np.asarray(self.Q, dtype=float))
        if self.F.ndim != 2 or self.F.shape[0] != self.F.shape[1]:
            raise ShapeError("F must be square")
        _check_symmetric(self.Q, "process noise Q")
        if self.Q.shape != self.F.shape:
            raise ShapeError("Q must match the shape of F")


@dataclass(frozen=True)
class ObservationModel:
    """Measurement map with noise covariance R.

    Linear observations set H; nonlinear ones set h (and optionally an
    analytic jacobian, else a central-difference jacobian is used).
    """

    R: np.ndarray
    H: Optional[np.ndarray] = None
    h: Optional[Callable[[np.ndarray], np.ndarray]] = None
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float))
        _check_symmetric(self.R, "measurement noise R")
        if (self.H is None) == (self.h is None):
            raise UsageError("set exactly one of H (linear) or h (nonlinear)")
        if self.H is not None:
            object.__setattr__(self, "H", np.asarray(self.H, dtype=float))
            if self.H.ndim != 2:
                raise ShapeError("H must be a 2-D matrix")
            if self.H.shape[0] != self.R.shape[0]:
                raise ShapeError(
                    f"H has {self.H.shape[0]} rows but R is "
                    f"{self.R.shape[0]}x{self.R.shape[0]}"
                )

    @property
    def m(self) -> int:
        return self.R.shape[0]


def _gain(cov: np.ndarray, H: np.ndarray, R: np.ndarray) -> np.ndarray:
    S = H @ cov @ H.T + R
    try:
        return np.linalg.solve(S, H @ cov).T
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"innovation covariance is singular: {exc}") from exc


def kalman_gain(cov: np.ndarray, model: ObservationModel) -> np.ndarray:
    """K = P H' (H P H' + R)^-1, computed via a linear solve."""
    if model.H is None:
        raise UsageError("kalman_gain needs a linear observation (H)")
    return _gain(np.asarray(cov, dtype=float), model.H, model.R)


def kalman_predict(est: GaussianEstimate, trans: TransitionModel) -> GaussianEstimate:
    if trans.F.shape[0] != est.dim:
        raise ShapeError(
            f"transition is {trans.F.shape[0]}-dimensional, state is {est.dim}"
        )
    mean = trans.F @ est.mean
    cov = trans.F @ est.cov @ trans.F.T + trans.Q
    return GaussianEstimate(mean=mean, cov=0.5 * (cov + cov.T))


def _joseph_update(
    est: GaussianEstimate, H: np.ndarray, R: np.ndarray, innovation: np.ndarray
) -> GaussianEstimate:
    K = _gain(est.cov, H, R)
    mean = est.mean + K @ innovation
    ikh = np.eye(est.dim) - K @ H
    cov = ikh @ est.cov @ ikh.T + K @ R @ K.T
    return GaussianEstimate(mean=mean, cov=0.5 * (cov + cov.T))


def kalman_update(
    est: GaussianEstimate, z: np.ndarray, model: ObservationModel
) -> GaussianEstimate:
    """Joseph-form measurement update for a linear observation."""
    if model.H is None:
        raise UsageError("kalman_update needs a linear observation (H); use ekf_update")
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size != model.m:
        raise ShapeError(f"measurement has {z.size} components, expected {model.m}")
    if model.H.shape[1] != est.dim:
        raise ShapeError(
            f"H has {model.H.shape[1]} columns but the state has {est.dim}"
        )
    return _joseph_update(est, model.H, model.R, z - model.H @ est.mean)


def numeric_jacobian(
    f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, scale: float = 1e-6
) -> np.ndarray:
    """Central-difference jacobian; step per component is scale * max(1, |x_i|)."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x), dtype=float).reshape(-1)
    jac = np.empty((f0.size, x.size))
    for i in range(x.size):
        step = scale * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        jac[:, i] = (
            np.asarray(f(xp), dtype=float).reshape(-1)
            - np.asarray(f(xm), dtype=float).reshape(-1)
        ) / (2.0 * step)
    return jac


def ekf_update(
    est: GaussianEstimate, z: np.ndarray, model: ObservationModel
) -> GaussianEstimate:
    """Extended update: linearise h at the current mean, then Joseph form.

    With an analytic jacobian and an affine h this reproduces the linear
    update exactly.
    """
    if model.h is None:
        raise UsageError("ekf_update needs a nonlinear observation (h)")
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size != model.m:
        raise ShapeError(f"measurement has {z.size} components, expected {model.m}")
    predicted = np.asarray(model.h(est.mean), dtype=float).reshape(-1)
    if predicted.size != model.m:
        raise ShapeError(
            f"h returned {predicted.size} components, expected {model.m}"
        )
    if model.jacobian is not None:
        H = np.asarray(model.jacobian(est.mean), dtype=float)
    else:
        H = numeric_jacobian(model.h, est.mean)
    if not np.isfinite(H).all():
        raise NumericalError("observation jacobian is not finite at the current mean")
    if H.shape != (model.m, est.dim):
        raise ShapeError(
            f"jacobian shape {H.shape} does not match ({model.m}, {est.dim})"
        )
    return _joseph_update(est, H, model.R, z - predicted)


# ---------------------------------------------------------------------------
# driving-state estimator
# ---------------------------------------------------------------------------

STATE_GAP = 0
STATE_CLOSING = 1
STATE_LATERAL = 2
STATE_SPEED = 3


def scalar_observation(index: int, variance: float, dim: int = 4) -> ObservationModel:
    """Observation of one state component with the given noise variance."""
    H = np.zeros((1, dim))
    H[0, index] = 1.0
    return ObservationModel(R=np.array([[variance]]), H=H)


class DrivingStateEstimator:
    """Tracks [gap to lead obstacle, closing speed, lateral offset, ego speed].

    Per tick: a constant-closing-speed predict, then one fused update of
    all valid range readings (inverse-variance), then per-sensor updates
    of the channels only one sensor sees (radar closing speed, camera
    lateral offset) and an odometry speed update.

    Updates run on raw arrays through a specialised single-component path
    (this sits in the per-tick hot loop); the algebra is the same Joseph
    form as kalman_update and is held to it by tests.
    """

    def __init__(
        self,
        dt: float = 0.1,
        process_noise: Sequence[float] = (0.25, 0.25, 0.01, 0.04),
        odometry_variance: float = 0.01,
        initial_gap: float = 100.0,
    ):
        if dt <= 0.0:
            raise DomainError(f"dt must be positive, got {dt}")
        q = np.asarray(process_noise, dtype=float)
        if q.shape != (4,) or np.any(q < 0.0):
            raise DomainError("process_noise needs 4 non-negative entries")
        if odometry_variance <= 0.0:
            raise DomainError("odometry_variance must be positive")
        self.dt = dt
        self.odometry_variance = odometry_variance
        self.initial_gap = initial_gap
        # gap shrinks at the closing speed; the other channels hold steady
        F = np.eye(4)
        F[STATE_GAP, STATE_CLOSING] = -dt
        self.transition = TransitionModel(F=F, Q=np.diag(q) * dt)

    def reset(self, v0: float = 12.0) -> GaussianEstimate:
        mean = np.array([self.initial_gap, 0.0, 0.0, v0])
        cov = np.diag([2500.0, 25.0, 4.0, 1.0])
        return GaussianEstimate(mean=mean, cov=cov)

    @staticmethod
    def _scalar_update(
        mean: np.ndarray, cov: np.ndarray, index: int, variance: float, z: float
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Joseph-form update for an observation of one state component."""
        s = cov[index, index] + variance
        if s <= 0.0:
            raise NumericalError("innovation variance is not positive")
        k = cov[:, index] / s
        mean = mean + k * (z - mean[index])
        # (I - k e') P (I - k e')' + R k k', expanded with outer products
        ap = cov - np.outer(k, cov[index, :])
        cov = ap - np.outer(ap[:, index], k) + variance * np.outer(k, k)
        return mean, 0.5 * (cov + cov.T)

    def step(
        self,
        est: GaussianEstimate,
        measurements: Sequence[Measurement],
        odometry_speed: Optional[float] = None,
    ) -> GaussianEstimate:
        F, Q = self.transition.F, self.transition.Q
        mean = F @ est.mean
        cov = F @ est.cov @ F.T + Q

        valid = [m for m in measurements if m.valid]
        if valid:
            z, fused_var = weighted_fuse(
                [(float(m.values[0]), m.variance) for m in valid]
            )
            mean, cov = self._scalar_update(mean, cov, STATE_GAP, fused_var, z)
        for m in valid:
            if m.sensor is SensorKind.RADAR:
                mean, cov = self._scalar_update(
                    mean, cov, STATE_CLOSING, m.variance, float(m.values[1])
                )
            elif m.sensor is SensorKind.CAMERA:
                mean, cov = self._scalar_update(
                    mean, cov, STATE_LATERAL, m.variance, float(m.values[1])
                )
        if odometry_speed is not None:
            mean, cov = self._scalar_update(
                mean, cov, STATE_SPEED, self.odometry_variance, float(odometry_speed)
            )
        return GaussianEstimate(mean=mean, cov=0.5 * (cov + cov.T))
