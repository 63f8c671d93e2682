"""Jacobians, estimation bounds, flop models, and campaign error statistics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DegenerateGeometryError, GeometryError
from .scenario import AnchorSet, NoiseSpec, UdState

# Direction vectors are undefined below this range.
_MIN_RANGE = 1e-9


def predict_measurements(state: UdState, anchors: AnchorSet) -> np.ndarray:
    """Noise-free stacked measurement vector [requests, responses] at a state."""
    d_request = np.linalg.norm(anchors.positions - state.pos, axis=1)
    disp = anchors.positions - state.pos - np.outer(anchors.schedule, state.vel)
    d_response = np.linalg.norm(disp, axis=1)
    if d_request.min() < _MIN_RANGE or d_response.min() < _MIN_RANGE:
        raise GeometryError("state coincides with an anchor")
    request = d_request - state.offset
    response = d_response + state.offset + state.drift * anchors.schedule
    return np.concatenate([request, response])


def jacobian(state: UdState, anchors: AnchorSet) -> np.ndarray:
    """Derivative of the stacked measurement vector in the parameter vector.

    Request rows are [-e_i, 0, -1, 0] with e_i the unit vector from the device
    to anchor i at the request instant; response rows are
    [-l_i, -l_i*dt_i, 1, dt_i] with l_i the unit vector at the reception
    instant.
    """
    m, n = anchors.count, anchors.ndim
    diff0 = anchors.positions - state.pos
    d0 = np.linalg.norm(diff0, axis=1)
    diff1 = diff0 - np.outer(anchors.schedule, state.vel)
    d1 = np.linalg.norm(diff1, axis=1)
    if d0.min() < _MIN_RANGE or d1.min() < _MIN_RANGE:
        raise GeometryError("state coincides with an anchor")
    e = diff0 / d0[:, None]
    l = diff1 / d1[:, None]

    jac = np.zeros((2 * m, 2 * n + 2))
    jac[:m, :n] = -e
    jac[:m, 2 * n] = -1.0
    jac[m:, :n] = -l
    jac[m:, n : 2 * n] = -l * anchors.schedule[:, None]
    jac[m:, 2 * n] = 1.0
    jac[m:, 2 * n + 1] = anchors.schedule
    return jac


@dataclass(frozen=True)
class BlockValues:
    """One scalar per parameter block (position, velocity, offset, drift)."""

    pos: float
    vel: float
    offset: float
    drift: float


@dataclass(frozen=True)
class CrlbResult:
    """Fisher information and its inverse, with per-block subtraces.

    ``blocks`` holds traces of the diagonal sub-blocks of the bound, so
    ``sqrt(blocks.pos)`` is the best achievable position RMSE at this state.
    """

    fisher: np.ndarray
    crlb: np.ndarray
    blocks: BlockValues


def crlb(state: UdState, anchors: AnchorSet, noise: NoiseSpec) -> CrlbResult:
    """Lower bound on the error covariance of any unbiased estimator.

    Computed as the inverse of J' W J with J evaluated at the true state and W
    the inverse-variance weight matrix.
    """
    jac = jacobian(state, anchors)
    w = noise.weights()
    fisher = jac.T @ (w[:, None] * jac)
    fisher = 0.5 * (fisher + fisher.T)
    try:
        bound = np.linalg.inv(fisher)
    except np.linalg.LinAlgError as exc:
        raise DegenerateGeometryError("singular information matrix") from exc
    if not np.isfinite(bound).all():
        raise DegenerateGeometryError("singular information matrix")
    n = anchors.ndim
    blocks = BlockValues(
        pos=float(np.trace(bound[:n, :n])),
        vel=float(np.trace(bound[n : 2 * n, n : 2 * n])),
        offset=float(bound[2 * n, 2 * n]),
        drift=float(bound[2 * n + 1, 2 * n + 1]),
    )
    return CrlbResult(fisher=fisher, crlb=bound, blocks=blocks)


def _check_flop_args(ndim: int, an_count: int) -> None:
    if ndim < 1:
        raise ConfigurationError("dimension must be at least 1")
    if an_count < ndim + 2:
        raise ConfigurationError(f"need at least {ndim + 2} anchors")


def flops_cftwlas(ndim: int, an_count: int) -> int:
    """Flop count of one closed-form estimate (constant, no iterations)."""
    _check_flop_args(ndim, an_count)
    n, m = ndim, an_count
    return (
        32 * n**3 + 32 * n**2 * m + 104 * n**2 + 124 * n * m + 148 * n + 130 * m + 697
    )


def flops_iterative_per_iter(ndim: int, an_count: int) -> int:
    """Flop count of a single Gauss-Newton iteration on the same residuals."""
    _check_flop_args(ndim, an_count)
    n, m = ndim, an_count
    return 16 * n**3 + 16 * n**2 * m + 56 * n**2 + 44 * n * m + 64 * n + 32 * m + 24


def block_sq_errors(estimate: UdState, truth: UdState) -> BlockValues:
    """Squared error norms per parameter block."""
    return BlockValues(
        pos=float(np.sum((estimate.pos - truth.pos) ** 2)),
        vel=float(np.sum((estimate.vel - truth.vel) ** 2)),
        offset=float((estimate.offset - truth.offset) ** 2),
        drift=float((estimate.drift - truth.drift) ** 2),
    )


@dataclass(frozen=True)
class ErrorStats:
    """Aggregate accuracy of a batch of runs against per-run bounds.

    A run is a large-error run when its position error strictly exceeds three
    times the square root of that run's position-bound trace. Runs without a
    usable estimate count as failures and as large errors, and are excluded
    from the RMSE averages.
    """

    refined_rmse: BlockValues
    raw_rmse: BlockValues | None
    crlb_mean: BlockValues
    large_error_rate: float
    failure_rate: float
    count: int


def _rmse_blocks(sq_sums: np.ndarray, count: int) -> BlockValues:
    if count == 0:
        return BlockValues(np.nan, np.nan, np.nan, np.nan)
    vals = np.sqrt(sq_sums / count)
    return BlockValues(*vals.tolist())


def error_stats(
    runs: Sequence[tuple[object, UdState, CrlbResult]],
) -> ErrorStats:
    """Summarize estimation errors over (estimate, truth, bound) triples.

    The estimate may be an EstimateReport (its refined state is used, falling
    back to the raw one) or a bare UdState. Raw RMSE is reported when any
    report carries a raw estimate.
    """
    if not runs:
        raise ConfigurationError("no runs to summarize")
    refined_sums = np.zeros(4)
    raw_sums = np.zeros(4)
    crlb_sums = np.zeros(4)
    n_refined = 0
    n_raw = 0
    n_large = 0
    n_failed = 0
    for estimate, truth, bound in runs:
        raw = getattr(estimate, "raw", None)
        state = getattr(estimate, "refined", None)
        if state is None:
            state = raw if raw is not None else (
                estimate if isinstance(estimate, UdState) else None
            )
        crlb_sums += np.sqrt(
            [bound.blocks.pos, bound.blocks.vel, bound.blocks.offset, bound.blocks.drift]
        )
        if raw is not None:
            err = block_sq_errors(raw, truth)
            raw_sums += [err.pos, err.vel, err.offset, err.drift]
            n_raw += 1
        if state is None or not np.isfinite(state.as_vector()).all():
            n_failed += 1
            n_large += 1
            continue
        err = block_sq_errors(state, truth)
        refined_sums += [err.pos, err.vel, err.offset, err.drift]
        n_refined += 1
        if np.sqrt(err.pos) > 3.0 * np.sqrt(bound.blocks.pos):
            n_large += 1
    total = len(runs)
    return ErrorStats(
        refined_rmse=_rmse_blocks(refined_sums, n_refined),
        raw_rmse=_rmse_blocks(raw_sums, n_raw) if n_raw else None,
        crlb_mean=BlockValues(*(crlb_sums / total).tolist()),
        large_error_rate=n_large / total,
        failure_rate=n_failed / total,
        count=total,
    )
