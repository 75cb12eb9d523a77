import dataclasses

import pytest

from lptsched.core import ExecTimeModel, Job, ModelSpec, SimConfig

_ACCEPTANCE: list[tuple[str, bool, str]] = []


def record_acceptance(criterion: str, passed: bool, detail: str = "") -> None:
    _ACCEPTANCE.append((criterion, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


@pytest.fixture
def acceptance():
    return record_acceptance


UNIT = ModelSpec("m", 1, iter_time=1.0, bank_eval_cost=0.053)


@pytest.fixture
def cfg0():
    """Config with zero communication overhead and one 1-GPU model."""
    return SimConfig(models=(UNIT,), exec_model=ExecTimeModel(comm_fraction=0.0))


def make_job(
    id=0,
    iters=120,
    iter_time=1.0,
    slo=60.0,
    arrival=0.0,
    model=UNIT,
    setup=0.0,
):
    if iter_time != model.iter_time:
        model = dataclasses.replace(model, iter_time=iter_time)
    return Job(id, model, arrival, {1.0: iters}, iters, iter_time, slo, setup_time=setup)


@pytest.fixture
def job_factory():
    return make_job
