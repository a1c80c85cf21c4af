import pytest

from uwenhance.bench import BenchRow, doubling_ratios, grid_for_length, run_bench, time_op, write_bench_csv


@pytest.mark.parametrize("L,expected", [(1024, (32, 32)), (2048, (32, 64)), (4096, (64, 64)), (12, (3, 4)),
                                        (7, (1, 7))])
def test_grid_for_length(L, expected):
    assert grid_for_length(L) == expected


@pytest.mark.parametrize("op", ["scan", "attention", "swsa"])
def test_time_op_row(op):
    row = time_op(op, 64, C=4, N=4, repeats=3)
    assert row.operator == op and row.L == 64 and 0 < row.median_ns <= row.p90_ns


def test_unknown_operator():
    with pytest.raises(ValueError):
        time_op("conv", 16)


def test_doubling_ratios_skip_gaps():
    rows = [BenchRow("scan", L, 1, 1, t, t) for L, t in ((8, 10), (16, 20), (64, 90), (128, 270))]
    assert doubling_ratios(rows) == [(8, 2.0), (64, 3.0)]


def test_csv(tmp_path):
    rows = run_bench("scan", [8, 16], C=2, N=2, repeats=2)
    write_bench_csv(rows, tmp_path / "b.csv")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "operator,L,C,N,median_ns,p90_ns" and len(lines) == 3
