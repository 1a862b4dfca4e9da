"""Flow-field error metrics and the algorithm benchmark harness.

The headline metrics are the space-time angular error statistics: AAE is
the mean per-pixel angle between the estimated and reference
(u, v, frame_interval) vectors, SAD its population standard deviation.
Mean endpoint error (EPE) and the >1 px outlier fraction are supplements
reported alongside them; they are not part of the angular-error family.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DimensionError, EmptyMaskError
from .flow import FlowField
from .image_core import ImageFrame
from .synth import GroundTruth

OUTLIER_EPE_PX = 1.0


@dataclass(frozen=True, eq=False)
class AngularErrorField:
    """Per-pixel angular error in degrees with its comparison mask."""

    phi: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=bool)
        if phi.shape != mask.shape:
            raise DimensionError(
                f"phi and mask must share a shape, got {phi.shape} and {mask.shape}"
            )
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "mask", mask)


@dataclass(frozen=True)
class MetricsReport:
    """One evaluated algorithm run.

    ``aae`` and ``sad`` are degrees; ``epe`` is pixels; ``runtime`` is
    wall-clock seconds around the flow computation only.
    """

    aae: float
    sad: float
    epe: float
    outlier_fraction: float
    runtime: float
    pixel_count: int
    frame_interval: int

    def as_dict(self) -> dict:
        return {
            "aae_deg": self.aae,
            "sad_deg": self.sad,
            "epe_px": self.epe,
            "outlier_fraction": self.outlier_fraction,
            "runtime_s": self.runtime,
            "pixel_count": self.pixel_count,
            "frame_interval": self.frame_interval,
        }


@dataclass(frozen=True)
class BenchmarkRow:
    """One benchmark table row; ``error`` is set when the algorithm failed."""

    name: str
    report: MetricsReport | None
    error: str | None = None


def angular_error(
    estimate: FlowField, truth: FlowField, frame_interval: int = 1
) -> AngularErrorField:
    """Space-time angular error between two fields, degrees per pixel.

    phi = arccos of the normalized dot product of (u, v, k) vectors, with
    the argument clamped to [-1, 1]; the k^2 term keeps zero-flow pixels
    well defined. The mask is the conjunction of both validity masks.
    """
    if estimate.shape != truth.shape:
        raise DimensionError(
            f"field dimensions differ: {estimate.shape} vs {truth.shape}"
        )
    if frame_interval < 1:
        raise ValueError(f"frame_interval must be >= 1, got {frame_interval}")
    k2 = float(frame_interval) ** 2
    uc = truth.u.astype(np.float64)
    vc = truth.v.astype(np.float64)
    ue = estimate.u.astype(np.float64)
    ve = estimate.v.astype(np.float64)
    num = uc * ue + vc * ve + k2
    den = np.sqrt(uc * uc + vc * vc + k2) * np.sqrt(ue * ue + ve * ve + k2)
    phi = np.degrees(np.arccos(np.clip(num / den, -1.0, 1.0)))
    return AngularErrorField(phi=phi, mask=estimate.valid & truth.valid)


def _stats_from_arrays(phi, epe, runtime, frame_interval):
    if phi.size == 0:
        raise EmptyMaskError("no pixel is valid in both fields")
    aae = float(phi.mean())
    sad = float(np.sqrt(((phi - aae) ** 2).mean()))
    return MetricsReport(
        aae=aae,
        sad=sad,
        epe=float(epe.mean()),
        outlier_fraction=float((epe > OUTLIER_EPE_PX).mean()),
        runtime=float(runtime),
        pixel_count=int(phi.size),
        frame_interval=int(frame_interval),
    )


def endpoint_error(estimate: FlowField, truth: FlowField) -> np.ndarray:
    """Per-pixel Euclidean distance between estimated and true vectors."""
    du = estimate.u.astype(np.float64) - truth.u.astype(np.float64)
    dv = estimate.v.astype(np.float64) - truth.v.astype(np.float64)
    return np.hypot(du, dv)


def summarize(
    err: AngularErrorField,
    estimate: FlowField,
    truth: FlowField,
    runtime: float = 0.0,
    frame_interval: int = 1,
) -> MetricsReport:
    """Aggregate an angular-error field plus endpoint statistics."""
    if err.phi.shape != estimate.shape or estimate.shape != truth.shape:
        raise DimensionError("error field and flow fields must share dimensions")
    mask = err.mask
    if not mask.any():
        raise EmptyMaskError("no pixel is valid in both fields")
    epe = endpoint_error(estimate, truth)[mask]
    return _stats_from_arrays(err.phi[mask], epe, runtime, frame_interval)


FlowAlgorithm = Callable[[ImageFrame, ImageFrame], FlowField]


def benchmark(
    algorithms: Mapping[str, FlowAlgorithm],
    frames: Sequence[ImageFrame],
    truth: GroundTruth,
    frame_interval: int = 1,
    repeats: int = 3,
    sort_by: str | None = None,
) -> list[BenchmarkRow]:
    """Run every named algorithm over all consecutive frame pairs.

    Per algorithm: flow is computed for each pair, the per-pixel angular
    and endpoint errors are pooled across pairs, and the reported runtime
    is the median of ``repeats`` timed passes over the whole sequence
    (flow computation only, no I/O). Failures become rows with ``error``
    set rather than aborting the table. ``sort_by`` is None (input order),
    "aae", "runtime", or "name".
    """
    if len(frames) < 2:
        raise DimensionError("benchmark needs at least two frames")
    if len(truth.fields) != len(frames) - 1:
        raise DimensionError(
            f"{len(frames)} frames need {len(frames) - 1} truth fields, "
            f"got {len(truth.fields)}"
        )
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    if sort_by not in (None, "aae", "runtime", "name"):
        raise ValueError(f"unknown sort_by {sort_by!r}")

    rows = []
    for name, algo in algorithms.items():
        try:
            durations = []
            flows = None
            for _ in range(repeats):
                start = time.perf_counter()
                current = [
                    algo(frames[i], frames[i + 1]) for i in range(len(frames) - 1)
                ]
                durations.append(time.perf_counter() - start)
                if flows is None:
                    flows = current
            runtime = float(np.median(durations))
            phis = []
            epes = []
            for flow_field, truth_field in zip(flows, truth.fields):
                err = angular_error(flow_field, truth_field, frame_interval)
                phis.append(err.phi[err.mask])
                epes.append(endpoint_error(flow_field, truth_field)[err.mask])
            report = _stats_from_arrays(
                np.concatenate(phis), np.concatenate(epes), runtime, frame_interval
            )
            rows.append(BenchmarkRow(name=name, report=report))
        except Exception as exc:  # noqa: BLE001 - failure rows are part of the contract
            rows.append(BenchmarkRow(name=name, report=None, error=str(exc)))

    if sort_by == "name":
        rows.sort(key=lambda r: r.name)
    elif sort_by in ("aae", "runtime"):
        def key(row):
            if row.report is None:
                return (1, 0.0)
            return (0, getattr(row.report, sort_by))

        rows.sort(key=key)
    return rows
