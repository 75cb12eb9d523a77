import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lptsched.sim.trace import (
    BUNDLED_SEEDS,
    LOAD_PRESETS,
    Trace,
    TraceError,
    TraceRecord,
    format_trace,
    generate_trace,
    parse_trace,
    preset_trace,
    read_trace,
    spiky_rates,
    task_catalog,
    write_trace,
)

MODELS = ["a", "b"]


def test_zero_rates_empty_trace():
    tr = generate_trace([0] * 20, MODELS, task_catalog(MODELS, 5))
    assert len(tr) == 0 and tr.span == 0.0


def test_same_seed_same_trace():
    a = preset_trace("medium", seed=BUNDLED_SEEDS[0])
    b = preset_trace("medium", seed=BUNDLED_SEEDS[0])
    assert format_trace(a) == format_trace(b)
    assert format_trace(a) != format_trace(preset_trace("medium", seed=BUNDLED_SEEDS[1]))


@pytest.mark.parametrize("total", [55, 77, 200, 1000])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_spiky_peak_to_mean(total, seed):
    r = spiky_rates(total, 20, 5.0, seed=seed)
    assert sum(r) == total
    mean = total / 20
    # the burst is round(5 * mean), so the ratio is 5 up to rounding of one request
    assert abs(max(r) - 5 * mean) <= 0.5
    assert sorted(r)[-2] < max(r)


def test_generated_counts_follow_rates():
    rates = {"a": [3, 0, 5], "b": [1, 2, 0]}
    tr = generate_trace(rates, MODELS, task_catalog(MODELS, 5), seed=4)
    assert tr.per_minute_counts("a") == [3, 0, 5]
    assert tr.per_minute_counts("b") == [1, 2, 0]
    assert all(r.submit_minute == int(r.submit_time // 60) for r in tr.records)


@pytest.mark.parametrize("load", sorted(LOAD_PRESETS))
def test_preset_request_totals(load):
    tr = preset_trace(load)
    for model, count in LOAD_PRESETS[load].items():
        assert sum(tr.per_minute_counts(model)) == count


def test_negative_rates_rejected():
    with pytest.raises(TraceError):
        generate_trace([1, -1], MODELS, task_catalog(MODELS, 5))


def test_file_round_trip(tmp_path):
    tr = preset_trace("low", seed=23, S=0.5)
    p = tmp_path / "t.csv"
    write_trace(tr, p)
    back = read_trace(p)
    assert back.records == tr.records
    assert (back.seed, back.S, back.label) == (23, 0.5, "low")
    assert back.meta["config_hash"] == tr.meta["config_hash"]
    assert preset_trace("low", seed=23, S=1.0).meta["config_hash"] != tr.meta["config_hash"]
    write_trace(back, tmp_path / "u.csv")
    assert (tmp_path / "u.csv").read_bytes() == p.read_bytes()


def test_four_column_rows_default_to_one_gpu():
    tr = parse_trace("# seed=1 S=1.0 label=x\nsubmit_time_s,model,gpu_time_s,task_id\n0.5,a,10,3\n")
    assert tr.records == [TraceRecord(0.5, "a", 10.0, 3, 1)]


@pytest.mark.parametrize(
    "body,lineno",
    [
        ("0.5,a,10,3\n1.0,a,ten,3\n", 4),
        ("0.5,a,10\n", 3),
        ("2.0,a,10,1\n1.0,a,10,1\n", 4),
        ("0.5,a,-1,1\n", 3),
        ("0.5,,1,1\n", 3),
        ("0.5,a,1,1,0\n", 3),
    ],
)
def test_parse_errors_carry_line_numbers(body, lineno):
    text = "# seed=1 S=1.0 label=x\nsubmit_time_s,model,gpu_time_s,task_id,gpus\n" + body
    with pytest.raises(TraceError, match=f"t.csv:{lineno}:"):
        parse_trace(text, "t.csv")


@pytest.mark.parametrize("text", ["", "0.5,a,1,1\n", "# seed=x\n", "# S=0\n", "# junk\n"])
def test_parse_bad_header(text):
    with pytest.raises(TraceError, match=":1:"):
        parse_trace(text, "t.csv")


def test_read_missing_file(tmp_path):
    with pytest.raises(TraceError):
        read_trace(tmp_path / "nope.csv")


def test_unsorted_records_rejected():
    with pytest.raises(TraceError):
        Trace([TraceRecord(5.0, "a", 1.0, 0), TraceRecord(1.0, "a", 1.0, 0)])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 12), min_size=1, max_size=8), st.integers(0, 10_000))
def test_arrivals_stay_in_their_minute(rates, seed):
    tr = generate_trace(rates, ["a"], task_catalog(["a"], 3), seed=seed)
    counts = tr.per_minute_counts("a")
    assert counts == list(rates[: len(counts)])
    assert sum(rates) == len(tr)
