import numpy as np
import pytest

from services.errors import PreconditionError
from services.genvec import VectorGeometry, sample_generic_vectors
from services.lipfun import GridFunction, GridSpec
from services.reports import (
    REPORT_HEADER,
    ReportRow,
    above,
    at_most,
    below,
    is_grid_csv,
    read_grid_function,
    read_report,
    read_series,
    write_grid_function,
    write_report,
    write_series,
    write_vector_set,
)


def test_row_helpers():
    assert at_most("a", "p", 1.0, 1.0).passed
    assert not below("b", "p", 1.0, 1.0).passed
    assert above("c", "p", 2.0, 1.0).passed
    assert ReportRow("x", "prop", 0.1, 0.2, False).as_csv() == ["x", "prop", "0.1", "0.2", "false"]


def test_report_file_is_deterministic(tmp_path):
    rows = [at_most("lip", "within budget", 0.1 + 0.2, 0.5), above("sep", "apart", 0.0, 0.0)]
    a = write_report(tmp_path / "a" / "report.csv", rows)
    b = write_report(tmp_path / "b" / "report.csv", rows)
    assert a.read_bytes() == b.read_bytes()
    lines = a.read_text().splitlines()
    assert lines[0] == "check_id,paper_ref,value,threshold,pass"
    assert lines[1] == "lip,within budget,0.30000000000000004,0.5,true"
    assert read_report(a) == rows


def test_grid_function_csv_is_bit_exact(tmp_path):
    grid = GridSpec.symmetric(2, 1.5, 7)
    f = GridFunction.sample(grid, lambda p: np.sin(p[:, 0]) / 3.0 + p[:, 1] / 7.0, tau=0.7)
    path = write_grid_function(tmp_path / "f.csv", f)
    assert is_grid_csv(path)
    g = read_grid_function(path, tau=0.7)
    assert g.grid.shape == grid.shape
    np.testing.assert_array_equal(g.values, f.values)
    np.testing.assert_allclose(g.grid.points(), grid.points(), rtol=0, atol=1e-12)


def test_read_rejects_bad_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_grid_function(tmp_path / "missing.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text("index,coord_1,value\n0,0.0,abc\n1,1.0,0.5\n")
    with pytest.raises(PreconditionError, match="malformed"):
        read_grid_function(bad)
    gappy = tmp_path / "gappy.csv"
    gappy.write_text("index,coord_1,value\n0,0.0,0.1\n1,0.1,0.2\n2,0.5,0.3\n")
    with pytest.raises(PreconditionError, match="non-uniform"):
        read_grid_function(gappy)
    other = tmp_path / "other.csv"
    other.write_text("x,y\n0.0,1.0\n")
    assert not is_grid_csv(other)


def test_vector_set_and_sidecar(tmp_path):
    targets = np.full((1, 10), 0.5) + np.linspace(-0.1, 0.1, 10)
    uset = sample_generic_vectors(targets, VectorGeometry.from_indices(10, 2, 6), eta=0.01, seed=0)
    main, side = write_vector_set(tmp_path / "uset.csv", uset)
    assert main.read_text().splitlines()[0] == "m," + ",".join(f"u_{i}" for i in range(1, 11))
    keys = [line.split(",")[0] for line in side.read_text().splitlines()[1:]]
    assert keys == sorted(["attempts", "cond2", "cond3", "cond4", "eta", "seed"])


def test_series_round_trip(tmp_path):
    path = write_series(tmp_path / "cross_g.csv", [0.0, 0.5], [0.25, 1.0 / 3.0])
    xs, ys = read_series(path)
    np.testing.assert_array_equal(ys, [0.25, 1.0 / 3.0])
    assert xs.shape == (2,)
