import pytest
from hypothesis import given
from hypothesis import strategies as st

from narrowsdc.costmodel import (
    MachineModel,
    crossover_bandwidth,
    extra_comm_time,
    extra_flop_time,
    narrow_flops,
    time_delta,
    wide_flops,
)


def test_flop_counts():
    assert narrow_flops(1) == 223 and narrow_flops(64) == 7279
    assert wide_flops(1) == 31 and wide_flops(64) == 1480
    for bad in (0, -3, 2.5):
        with pytest.raises(ValueError):
            narrow_flops(bad)


@given(st.integers(1, 10**6))
def test_flop_difference(n):
    assert narrow_flops(n) - wide_flops(n) == 89 * n + 103


def test_worked_example():
    m = MachineModel(460.8e9, 8e9)
    assert float(f"{extra_flop_time(64, m):.1e}") == 1.3e-8
    assert float(f"{extra_comm_time(m):.1e}") == 8.0e-9


def test_infinite_bandwidth_limit():
    m = MachineModel(1e9, float("inf"))
    assert time_delta(10, m) == (89 * 10 + 103) / 1e9


@given(st.integers(1, 1000), st.floats(1e6, 1e15), st.floats(1e6, 1e12))
def test_crossover_zeroes_delta(n, flops, bandwidth):
    b = crossover_bandwidth(n, flops)
    assert time_delta(n, MachineModel(flops, b)) == pytest.approx(0.0, abs=1e-12 * extra_flop_time(n, MachineModel(flops, b)))
    # monotone in N and F
    m = MachineModel(flops, bandwidth)
    assert time_delta(n + 1, m) > time_delta(n, m)
    assert time_delta(n, MachineModel(flops * 2, bandwidth)) < time_delta(n, m)


def test_machine_validation():
    with pytest.raises(ValueError):
        MachineModel(0, 1)
    with pytest.raises(ValueError):
        crossover_bandwidth(1, -1.0)
