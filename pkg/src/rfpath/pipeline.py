"""Batched tracing over the receiver grid with QC and budget-based degradation.

Receivers are processed in index order in batches of ``cfg.batch_size``.
Per-receiver results never depend on batch composition or thread count, so
runs without a time budget are bit-reproducible. When a batch exceeds
``batch_time_budget_s`` the reflection depth for subsequent batches drops by
one (floor 1) and the event is logged; degraded runs are host-dependent by
nature, which is why the log travels with the results.
"""

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .config import TraceConfig
from .geometry import RxPoint, build_bvh, filter_outdoor_receivers
from .raytracer import PathTracer, PropagationPath
from .scene import Scene, triangulate


@dataclass(frozen=True)
class DegradationEvent:
    batch_index: int
    old_depth: int
    new_depth: int
    elapsed_s: float


@dataclass(frozen=True)
class QcReport:
    outdoor_fraction: float
    passed: bool


@dataclass(frozen=True, eq=False)
class ReceiverRecord:
    point: RxPoint
    paths: list[PropagationPath]


@dataclass(frozen=True, eq=False)
class ResultSet:
    """Per-receiver top-N paths plus run provenance.

    ``records`` holds exactly one entry per grid point, sorted by receiver
    index; indoor receivers carry empty path lists.
    """

    records: list[ReceiverRecord]
    degradation_log: list[DegradationEvent]
    qc: QcReport | None
    config_echo: TraceConfig
    wall_time_s: float


def _resolve_workers(threads: int) -> int:
    if threads == 0:
        return os.cpu_count() or 1
    return max(1, threads)


def _trace_chunked(tracer: PathTracer, positions: np.ndarray, depth: int,
                   workers: int) -> list[list[PropagationPath]]:
    if workers <= 1 or len(positions) < 2 * workers:
        return tracer.trace_batch(positions, depth)
    bounds = np.linspace(0, len(positions), workers + 1).astype(int)
    chunks = [positions[a:b] for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda c: tracer.trace_batch(c, depth), chunks))
    out: list[list[PropagationPath]] = []
    for part in parts:
        out.extend(part)
    return out


def run_trace(scene: Scene, cfg: TraceConfig, threads: int = 1) -> ResultSet:
    """Trace every outdoor grid receiver and assemble records in index order."""
    start = time.perf_counter()
    mesh = triangulate(scene)
    bvh = build_bvh(mesh)
    points = filter_outdoor_receivers(scene, cfg.rx_grid)
    tracer = PathTracer(scene, mesh, bvh, cfg)
    workers = _resolve_workers(threads)

    outdoor = [p for p in points if p.outdoor]
    depth = cfg.max_reflection_depth
    budget = cfg.batch_time_budget_s
    degradation: list[DegradationEvent] = []
    paths_by_index: dict[int, list[PropagationPath]] = {}

    for batch_index, offset in enumerate(range(0, len(outdoor), cfg.batch_size)):
        batch = outdoor[offset:offset + cfg.batch_size]
        positions = np.stack([p.position for p in batch])
        t0 = time.perf_counter()
        results = _trace_chunked(tracer, positions, depth, workers)
        elapsed = time.perf_counter() - t0
        for point, paths in zip(batch, results):
            paths_by_index[point.index] = paths
        if budget is not None and elapsed > budget and depth > 1:
            degradation.append(
                DegradationEvent(batch_index, depth, depth - 1, elapsed)
            )
            depth -= 1

    records = [
        ReceiverRecord(point=p, paths=paths_by_index.get(p.index, []))
        for p in points
    ]
    return ResultSet(
        records=records,
        degradation_log=degradation,
        qc=None,
        config_echo=cfg,
        wall_time_s=time.perf_counter() - start,
    )


def qc_check(rs: ResultSet, cfg: TraceConfig) -> ResultSet:
    """Populate the QC block: outdoor fraction against the configured floor."""
    total = len(rs.records)
    outdoor = sum(1 for r in rs.records if r.point.outdoor)
    fraction = outdoor / total if total else 0.0
    report = QcReport(
        outdoor_fraction=fraction,
        passed=fraction >= cfg.min_outdoor_fraction,
    )
    return replace(rs, qc=report)
