"""Seeded Monte-Carlo campaigns: RMSE vs SNR sweeps and anchor-count ablations.

Every run derives its own random stream from the master seed, the cell index,
and the run index, so campaign statistics are bit-identical for a fixed seed
at any parallelism level. Wall-clock measurements are inherently volatile and
are kept separate from the deterministic statistics.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .analysis import (
    BlockValues,
    block_sq_errors,
    crlb,
    flops_cftwlas,
    flops_iterative_per_iter,
)
from .baseline import gauss_newton, make_initializer
from .errors import ConfigurationError, DegenerateGeometryError
from .estimator import estimate
from .scenario import (
    NoiseSpec,
    add_noise,
    build_square_scenario,
    forward_model,
    noise_for_snr,
    sample_ud_state,
)

_METHOD_KINDS = ("cftwlas", "gauss_newton")


@dataclass(frozen=True)
class MethodSpec:
    """One estimation method to run in a campaign."""

    kind: str = "cftwlas"
    refine_steps: int = 1
    init_std_m: float = 50.0
    max_iter: int = 20
    tol_m: float = 1e-4

    def __post_init__(self) -> None:
        if self.kind not in _METHOD_KINDS:
            raise ConfigurationError(f"unknown method kind {self.kind!r}")
        if self.refine_steps < 1:
            raise ConfigurationError("refine_steps must be >= 1")
        if self.max_iter < 1:
            raise ConfigurationError("max_iter must be >= 1")

    @property
    def label(self) -> str:
        if self.kind == "cftwlas":
            return "cftwlas"
        return f"gauss_newton_init{self.init_std_m:g}"


@dataclass(frozen=True)
class CampaignConfig:
    """Scenario, prior, sweep, and execution parameters of one campaign."""

    anchor_side_m: float = 800.0
    an_counts: tuple[int, ...] = (8,)
    response_step_s: float = 0.010
    region_side_m: float = 500.0
    vmax_mps: float = 50.0
    offset_range_s: tuple[float, float] = (0.0, 20e-6)
    drift_range_ppm: tuple[float, float] = (-10.0, 10.0)
    snr_db: tuple[float, ...] = (30.0,)
    noise_free: bool = False
    runs: int = 2000
    seed: int = 0
    methods: tuple[MethodSpec, ...] = (MethodSpec(),)
    response_sigma_rule: str = "mean"
    workers: int = 1

    def __post_init__(self) -> None:
        if self.runs < 1:
            raise ConfigurationError("runs must be >= 1")
        if not self.noise_free and not self.snr_db:
            raise ConfigurationError("snr_db list must be non-empty")
        if not self.an_counts:
            raise ConfigurationError("an_counts must be non-empty")
        if not self.methods:
            raise ConfigurationError("methods must be non-empty")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")

    @property
    def snr_points(self) -> tuple[float, ...]:
        return (math.inf,) if self.noise_free else tuple(self.snr_db)


def benchmark_config(
    runs: int = 10_000,
    snr_db: tuple[float, ...] = tuple(float(s) for s in range(10, 51, 2)),
    seed: int = 0,
    workers: int = 1,
) -> CampaignConfig:
    """The reference experiment: 800 m anchor square with 8 anchors, device
    prior inside a concentric 500 m square, 10i ms response schedule, offset
    uniform over [0, 20] us, drift uniform over [-10, 10] ppm, speed uniform
    up to 50 m/s; closed-form method plus Gauss-Newton with 50 m and 200 m
    initialization noise."""
    return CampaignConfig(
        snr_db=snr_db,
        runs=runs,
        seed=seed,
        workers=workers,
        methods=(
            MethodSpec(kind="cftwlas"),
            MethodSpec(kind="gauss_newton", init_std_m=50.0),
            MethodSpec(kind="gauss_newton", init_std_m=200.0),
        ),
    )


@dataclass(frozen=True)
class CellStats:
    """Aggregated results of one (method, SNR, anchor-count) cell."""

    method: str
    snr_db: float
    an_count: int
    runs: int
    rmse: BlockValues
    raw_rmse: BlockValues | None
    crlb_mean: BlockValues
    large_error_rate: float
    fallback_rate: float
    failure_rate: float
    flops_per_call: int
    mean_iterations: float | None
    wall_s: float  # volatile: measured solver time, not reproducible


@dataclass(frozen=True)
class CampaignStats:
    """Deterministic campaign results plus volatile timing."""

    config: CampaignConfig
    cells: tuple[CellStats, ...]

    def cell(self, method: str, snr_db: float, an_count: int) -> CellStats:
        for c in self.cells:
            if c.method == method and c.snr_db == snr_db and c.an_count == an_count:
                return c
        raise KeyError((method, snr_db, an_count))


def _unit_noise(count: int) -> NoiseSpec:
    return NoiseSpec(np.ones(count), 1.0)


def _single_run(cfg: CampaignConfig, anchors, center, snr_db, cell_index, run):
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, cell_index, run, 0]))
    ud = sample_ud_state(
        rng,
        cfg.region_side_m,
        cfg.vmax_mps,
        cfg.offset_range_s,
        cfg.drift_range_ppm,
        center=center,
        ndim=anchors.ndim,
    )
    clean = forward_model(ud, anchors)
    if cfg.noise_free:
        noise = _unit_noise(anchors.count)
        meas = clean
    else:
        noise = noise_for_snr(ud, anchors, snr_db, cfg.response_sigma_rule)
        meas = add_noise(clean, noise, rng)
    try:
        blocks = crlb(ud, anchors, noise).blocks
        crlb_sqrt = (
            math.sqrt(blocks.pos),
            math.sqrt(blocks.vel),
            math.sqrt(blocks.offset),
            math.sqrt(blocks.drift),
        )
    except DegenerateGeometryError:
        crlb_sqrt = (math.nan,) * 4

    per_method = []
    for mi, spec in enumerate(cfg.methods):
        start = time.perf_counter()
        raw_state = None
        iterations = None
        if spec.kind == "cftwlas":
            report = estimate(meas, anchors, noise, refine_steps=spec.refine_steps)
            state = report.refined if report.refined is not None else report.raw
            fallback = report.flags.no_real_root_fallback
            raw_state = report.raw
        else:
            method_rng = np.random.default_rng(
                np.random.SeedSequence([cfg.seed, cell_index, run, mi + 1])
            )
            init = make_initializer(ud, spec.init_std_m, method_rng)
            state, trace = gauss_newton(
                meas, anchors, noise, init, max_iter=spec.max_iter, tol=spec.tol_m
            )
            fallback = not trace.converged
            iterations = trace.iterations_used
        seconds = time.perf_counter() - start

        ok = state is not None and bool(np.isfinite(state.as_vector()).all())
        ref_err2 = None
        if ok:
            err = block_sq_errors(state, ud)
            ref_err2 = (err.pos, err.vel, err.offset, err.drift)
        raw_err2 = None
        if raw_state is not None and np.isfinite(raw_state.as_vector()).all():
            err = block_sq_errors(raw_state, ud)
            raw_err2 = (err.pos, err.vel, err.offset, err.drift)
        large = (not ok) or math.sqrt(ref_err2[0]) > 3.0 * crlb_sqrt[0]
        per_method.append((ok, fallback, large, ref_err2, raw_err2, seconds, iterations))
    return crlb_sqrt, tuple(per_method)


def _run_batch(cfg, an_count, snr_db, cell_index, start, stop):
    anchors = build_square_scenario(cfg.anchor_side_m, an_count, cfg.response_step_s)
    center = anchors.center
    return [
        _single_run(cfg, anchors, center, snr_db, cell_index, run)
        for run in range(start, stop)
    ]


def _collect_cell(cfg, an_count, snr_db, cell_index):
    if cfg.workers == 1 or cfg.runs < 2 * cfg.workers:
        return _run_batch(cfg, an_count, snr_db, cell_index, 0, cfg.runs)
    chunk = math.ceil(cfg.runs / cfg.workers)
    windows = [
        (lo, min(lo + chunk, cfg.runs)) for lo in range(0, cfg.runs, chunk)
    ]
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        futures = [
            pool.submit(_run_batch, cfg, an_count, snr_db, cell_index, lo, hi)
            for lo, hi in windows
        ]
        batches = [f.result() for f in futures]
    records = []
    for batch in batches:  # windows are in run order, so this preserves it
        records.extend(batch)
    return records


def _aggregate_cell(cfg, an_count, snr_db, records) -> list[CellStats]:
    runs = len(records)
    crlb_sums = np.zeros(4)
    for crlb_sqrt, _ in records:
        crlb_sums += crlb_sqrt
    crlb_mean = BlockValues(*(crlb_sums / runs).tolist())

    cells = []
    for mi, spec in enumerate(cfg.methods):
        ref_sums = np.zeros(4)
        raw_sums = np.zeros(4)
        n_ok = n_raw = n_large = n_fallback = n_fail = 0
        wall = 0.0
        iter_total = 0
        for _, methods in records:
            ok, fallback, large, ref_err2, raw_err2, seconds, iterations = methods[mi]
            wall += seconds
            if iterations is not None:
                iter_total += iterations
            if fallback:
                n_fallback += 1
            if large:
                n_large += 1
            if ok:
                ref_sums += ref_err2
                n_ok += 1
            else:
                n_fail += 1
            if raw_err2 is not None:
                raw_sums += raw_err2
                n_raw += 1
        rmse = (
            BlockValues(*np.sqrt(ref_sums / n_ok).tolist())
            if n_ok
            else BlockValues(math.nan, math.nan, math.nan, math.nan)
        )
        raw_rmse = BlockValues(*np.sqrt(raw_sums / n_raw).tolist()) if n_raw else None
        if spec.kind == "cftwlas":
            flops = flops_cftwlas(2, an_count)
            mean_iter = None
        else:
            flops = flops_iterative_per_iter(2, an_count)
            mean_iter = iter_total / runs
        cells.append(
            CellStats(
                method=spec.label,
                snr_db=snr_db,
                an_count=an_count,
                runs=runs,
                rmse=rmse,
                raw_rmse=raw_rmse,
                crlb_mean=crlb_mean,
                large_error_rate=n_large / runs,
                fallback_rate=n_fallback / runs,
                failure_rate=n_fail / runs,
                flops_per_call=flops,
                mean_iterations=mean_iter,
                wall_s=wall,
            )
        )
    return cells


def run_campaign(cfg: CampaignConfig) -> CampaignStats:
    """Execute all (anchor-count, SNR) cells and aggregate per method.

    Per-run estimator failures are recorded in the statistics and never abort
    the campaign. Reduction order is fixed by run index, so results do not
    depend on the worker count.
    """
    exec_cells = [
        (an, snr) for an in cfg.an_counts for snr in cfg.snr_points
    ]
    cells: list[CellStats] = []
    for cell_index, (an_count, snr_db) in enumerate(exec_cells):
        records = _collect_cell(cfg, an_count, snr_db, cell_index)
        cells.extend(_aggregate_cell(cfg, an_count, snr_db, records))
    cells.sort(key=lambda c: (c.method, c.snr_db, c.an_count))
    return CampaignStats(config=cfg, cells=tuple(cells))


@dataclass(frozen=True)
class TimingEntry:
    label: str
    wall_s: float
    flops_per_call: int
    mean_iterations: float | None


def timing_report(cfg: CampaignConfig) -> tuple[TimingEntry, ...]:
    """Wall-clock totals per method over identical pre-generated inputs.

    Measurements are synthesized once for the whole campaign; each method is
    then timed end to end over all runs, so methods are compared on the same
    inputs and the flop model can be read next to the measured time.
    """
    inputs = []
    for cell_index, (an_count, snr_db) in enumerate(
        (an, snr) for an in cfg.an_counts for snr in cfg.snr_points
    ):
        anchors = build_square_scenario(
            cfg.anchor_side_m, an_count, cfg.response_step_s
        )
        center = anchors.center
        for run in range(cfg.runs):
            rng = np.random.default_rng(
                np.random.SeedSequence([cfg.seed, cell_index, run, 0])
            )
            ud = sample_ud_state(
                rng,
                cfg.region_side_m,
                cfg.vmax_mps,
                cfg.offset_range_s,
                cfg.drift_range_ppm,
                center=center,
                ndim=anchors.ndim,
            )
            clean = forward_model(ud, anchors)
            if cfg.noise_free:
                noise = _unit_noise(anchors.count)
                meas = clean
            else:
                noise = noise_for_snr(ud, anchors, snr_db, cfg.response_sigma_rule)
                meas = add_noise(clean, noise, rng)
            inputs.append((cell_index, run, anchors, ud, meas, noise))

    entries = []
    for mi, spec in enumerate(cfg.methods):
        iter_total = 0
        start = time.perf_counter()
        for cell_index, run, anchors, ud, meas, noise in inputs:
            if spec.kind == "cftwlas":
                estimate(meas, anchors, noise, refine_steps=spec.refine_steps)
            else:
                method_rng = np.random.default_rng(
                    np.random.SeedSequence([cfg.seed, cell_index, run, mi + 1])
                )
                init = make_initializer(ud, spec.init_std_m, method_rng)
                _, trace = gauss_newton(
                    meas, anchors, noise, init, max_iter=spec.max_iter, tol=spec.tol_m
                )
                iter_total += trace.iterations_used
        wall = time.perf_counter() - start
        an0 = cfg.an_counts[0]
        if spec.kind == "cftwlas":
            flops = flops_cftwlas(2, an0)
            mean_iter = None
        else:
            flops = flops_iterative_per_iter(2, an0)
            mean_iter = iter_total / len(inputs)
        entries.append(TimingEntry(spec.label, wall, flops, mean_iter))
    return tuple(entries)


# --- configuration (de)serialization -------------------------------------

_CONFIG_KEYS = {
    "anchor_side_m": float,
    "an_counts": list,
    "response_step_s": float,
    "region_side_m": float,
    "vmax_mps": float,
    "offset_range_s": list,
    "drift_range_ppm": list,
    "snr_db": list,
    "noise_free": bool,
    "runs": int,
    "seed": int,
    "methods": list,
    "response_sigma_rule": str,
    "workers": int,
}

_METHOD_KEYS = {"kind", "refine_steps", "init_std_m", "max_iter", "tol_m"}


def _method_from_dict(data: dict, index: int) -> MethodSpec:
    if not isinstance(data, dict):
        raise ConfigurationError(f"config key 'methods[{index}]': expected an object")
    unknown = set(data) - _METHOD_KEYS
    if unknown:
        raise ConfigurationError(
            f"config key 'methods[{index}].{sorted(unknown)[0]}': unknown key"
        )
    try:
        return MethodSpec(**data)
    except (TypeError, ConfigurationError) as exc:
        raise ConfigurationError(f"config key 'methods[{index}]': {exc}") from exc


def config_from_dict(data: dict) -> CampaignConfig:
    """Build a campaign configuration from parsed JSON, naming bad keys."""
    if not isinstance(data, dict):
        raise ConfigurationError("config root must be an object")
    unknown = set(data) - set(_CONFIG_KEYS)
    if unknown:
        raise ConfigurationError(f"config key '{sorted(unknown)[0]}': unknown key")
    kwargs: dict = {}
    for key, value in data.items():
        try:
            if key == "methods":
                kwargs[key] = tuple(
                    _method_from_dict(item, i) for i, item in enumerate(value)
                )
            elif key == "an_counts":
                kwargs[key] = tuple(int(v) for v in value)
            elif key == "snr_db":
                kwargs[key] = tuple(float(v) for v in value)
            elif key in ("offset_range_s", "drift_range_ppm"):
                lo, hi = value
                kwargs[key] = (float(lo), float(hi))
            elif key in ("noise_free",):
                if not isinstance(value, bool):
                    raise ConfigurationError("expected true or false")
                kwargs[key] = value
            elif key in ("runs", "seed", "workers"):
                kwargs[key] = int(value)
            elif key == "response_sigma_rule":
                kwargs[key] = str(value)
            else:
                kwargs[key] = float(value)
        except ConfigurationError as exc:
            raise ConfigurationError(f"config key '{key}': {exc}") from exc
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"config key '{key}': {exc}") from exc
    try:
        return CampaignConfig(**kwargs)
    except ConfigurationError as exc:
        raise ConfigurationError(f"config: {exc}") from exc


def config_to_dict(cfg: CampaignConfig) -> dict:
    """Resolved configuration as JSON-ready primitives."""
    return {
        "anchor_side_m": cfg.anchor_side_m,
        "an_counts": list(cfg.an_counts),
        "response_step_s": cfg.response_step_s,
        "region_side_m": cfg.region_side_m,
        "vmax_mps": cfg.vmax_mps,
        "offset_range_s": list(cfg.offset_range_s),
        "drift_range_ppm": list(cfg.drift_range_ppm),
        "snr_db": list(cfg.snr_db),
        "noise_free": cfg.noise_free,
        "runs": cfg.runs,
        "seed": cfg.seed,
        "methods": [
            {
                "kind": m.kind,
                "refine_steps": m.refine_steps,
                "init_std_m": m.init_std_m,
                "max_iter": m.max_iter,
                "tol_m": m.tol_m,
            }
            for m in cfg.methods
        ],
        "response_sigma_rule": cfg.response_sigma_rule,
        "workers": cfg.workers,
    }
