import pytest

from lptsched.core import CostModel
from lptsched.sim.report import account_cost, gpu_seconds

PRICE5 = CostModel(gpu_price_per_hour=5.0)


def test_rectangle():
    series = [(0.0, "m", 2, 0), (3600.0, "m", 2, 0)]
    gpu, storage = account_cost(series, PRICE5)
    assert gpu == pytest.approx(10.0) and storage == 0.0


def test_staircase_matches_rectangles():
    # 0 -> 1 -> 2 -> 3 -> 4 GPUs, one step every 10 s, held 10 s at the top
    series = [(10.0 * k, "m", k, 0) for k in range(5)] + [(50.0, "m", 4, 0)]
    assert gpu_seconds(series) == pytest.approx(10 * (0 + 1 + 2 + 3 + 4))


def test_models_integrate_independently():
    series = [(0.0, "a", 1, 0), (0.0, "b", 3, 0), (5.0, "a", 0, 0), (10.0, "b", 3, 0), (10.0, "a", 0, 0)]
    assert gpu_seconds(series) == pytest.approx(5 * 1 + 10 * 3)


def test_zero_warm_time_costs_only_storage():
    series = [(0.0, "m", 0, 0), (100.0, "m", 0, 0)]
    gpu, storage = account_cost(series, CostModel(storage_price_per_gb_hour=2.0), storage_gb_hours=1.5)
    assert gpu == 0.0 and storage == 3.0
