"""FLOP and communication cost of narrow versus wide stencils.

Per grid point, the narrow 8th-order stencil costs ``112 N + 111`` FLOPs
and the wide one ``23 N + 8`` for ``N`` transported components; the wide
stencil in turn exchanges 64 more bytes (8 extra ghost values of 8 bytes).
"""

from __future__ import annotations

from dataclasses import dataclass

#: Extra ghost-cell bytes exchanged by the wide stencil.
WIDE_EXTRA_BYTES = 64


@dataclass(frozen=True)
class MachineModel:
    """``flops``: floating-point operations per second; ``bandwidth``: bytes per second."""

    flops: float
    bandwidth: float

    def __post_init__(self):
        if not (self.flops > 0 and self.bandwidth > 0):
            raise ValueError("flops and bandwidth must be positive")


def _check_n(N: int):
    if int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N!r}")


def narrow_flops(N: int) -> int:
    _check_n(N)
    return 112 * N + 111


def wide_flops(N: int) -> int:
    _check_n(N)
    return 23 * N + 8


def extra_flop_time(N: int, m: MachineModel) -> float:
    """Seconds spent on the narrow stencil's additional FLOPs."""
    return (narrow_flops(N) - wide_flops(N)) / m.flops


def extra_comm_time(m: MachineModel) -> float:
    """Seconds spent moving the wide stencil's additional bytes."""
    return WIDE_EXTRA_BYTES / m.bandwidth


def time_delta(N: int, m: MachineModel) -> float:
    """Extra compute time of narrow minus extra communication time of wide.

    Positive means the narrow stencil is slower under this model.
    """
    return extra_flop_time(N, m) - extra_comm_time(m)


def crossover_bandwidth(N: int, flops: float) -> float:
    """Bandwidth at which both stencils cost the same."""
    _check_n(N)
    if not flops > 0:
        raise ValueError("flops must be positive")
    return WIDE_EXTRA_BYTES * flops / (narrow_flops(N) - wide_flops(N))
