"""Dense per-pixel flow fields shared by every solver."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True, eq=False)
class FlowField:
    """Per-pixel displacement field in pixels/frame.

    ``u`` is horizontal, ``v`` vertical, both float32 so fields round-trip
    bit-exactly through the flow file format. ``valid`` is False where the
    solver declined to produce a vector; masked entries hold 0, never
    sentinels.
    """

    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        u = np.ascontiguousarray(np.asarray(self.u, dtype=np.float32))
        v = np.ascontiguousarray(np.asarray(self.v, dtype=np.float32))
        valid = np.ascontiguousarray(np.asarray(self.valid, dtype=bool))
        if u.ndim != 2 or u.shape != v.shape or u.shape != valid.shape:
            raise DimensionError(
                f"u, v, valid must share a 2-D shape, got {u.shape}, {v.shape}, {valid.shape}"
            )
        if valid.any():
            if not (np.isfinite(u[valid]).all() and np.isfinite(v[valid]).all()):
                raise ValueError("valid flow vectors must be finite")
        u.setflags(write=False)
        v.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "valid", valid)

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    @classmethod
    def full(cls, shape: tuple[int, int], u: float = 0.0, v: float = 0.0) -> "FlowField":
        """Uniform all-valid field, handy for ground truth and tests."""
        h, w = shape
        return cls(
            u=np.full((h, w), u, dtype=np.float32),
            v=np.full((h, w), v, dtype=np.float32),
            valid=np.ones((h, w), dtype=bool),
        )
