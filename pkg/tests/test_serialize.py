"""Tests for CSV/JSON round-trips and parse errors."""

import numpy as np
import pytest

from conftest import random_schedule
from tminimax.core import (
    ALWAYS_CONTROL,
    Allocation,
    AssignmentMatrix,
    Family,
    draw_assignment,
    pulse_arm,
)
from tminimax.serialize import (
    ParseError,
    assignment_from_json,
    assignment_to_json,
    format_float,
    matrix_to_csv,
    read_assignment_csv,
    read_matrix_csv,
    read_schedule_csv,
    rows_to_csv,
    rows_to_json,
    schedule_from_json,
    schedule_to_json,
    write_matrix_csv,
    write_assignment_csv,
    write_schedule_csv,
)


class TestMatrixCsv:
    def test_round_trip_is_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        values = rng.normal(size=(7, 4)) * 10.0 ** rng.integers(-8, 8, size=(7, 4))
        path = tmp_path / "m.csv"
        write_matrix_csv(str(path), values)
        assert np.array_equal(read_matrix_csv(str(path)), values)

    def test_header_and_units(self):
        text = matrix_to_csv(np.array([[1.5, 2.0]]))
        lines = text.splitlines()
        assert lines[0] == "unit,t1,t2"
        assert lines[1].startswith("1,")

    def test_seventeen_digit_floats(self):
        x = 0.1 + 0.2
        assert float(format_float(x)) == x

    def test_empty_file(self, tmp_path):
        path = tmp_path / "e.csv"
        path.write_text("")
        with pytest.raises(ParseError, match="empty input"):
            read_matrix_csv(str(path))

    def test_header_only(self, tmp_path):
        path = tmp_path / "h.csv"
        path.write_text("unit,t1,t2\n")
        with pytest.raises(ParseError, match="no data rows"):
            read_matrix_csv(str(path))

    def test_ragged_row_names_the_line(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("unit,t1,t2\n1,1.0,2.0\n2,3.0\n")
        with pytest.raises(ParseError, match="line 3"):
            read_matrix_csv(str(path))

    def test_bad_float_names_line_and_column(self, tmp_path):
        path = tmp_path / "b.csv"
        path.write_text("unit,t1,t2\n1,1.0,oops\n")
        with pytest.raises(ParseError, match="line 2, column 3"):
            read_matrix_csv(str(path))

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bh.csv"
        path.write_text("unit,a,b\n1,1.0,2.0\n")
        with pytest.raises(ParseError, match="expected t1"):
            read_matrix_csv(str(path))

    def test_wrong_unit_number(self, tmp_path):
        path = tmp_path / "u.csv"
        path.write_text("unit,t1,t2\n5,1.0,2.0\n")
        with pytest.raises(ParseError, match="expected unit 1"):
            read_matrix_csv(str(path))


class TestAssignmentCsv:
    @pytest.mark.parametrize("family", [Family.PULSE, Family.WEDGE])
    def test_round_trip(self, tmp_path, family):
        Z = draw_assignment(Allocation(2, 2, (1, 2, 1)), family, seed=3)
        path = tmp_path / "z.csv"
        write_assignment_csv(str(path), Z)
        back = read_assignment_csv(str(path))
        assert back == Z and back.family == family

    def test_ambiguous_rows_take_the_default_family(self, tmp_path):
        # a pulse at the last period looks the same in both families
        Z = AssignmentMatrix([ALWAYS_CONTROL, pulse_arm(3)], 3)
        path = tmp_path / "a.csv"
        write_assignment_csv(str(path), Z)
        assert read_assignment_csv(str(path)).family == Family.PULSE
        assert read_assignment_csv(str(path), family=Family.WEDGE).family == Family.WEDGE

    def test_invalid_pattern_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("unit,t1,t2,t3\n1,1,0,1\n")
        with pytest.raises(ParseError, match="not a valid arm"):
            read_assignment_csv(str(path))

    def test_first_period_pulse_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("unit,t1,t2,t3\n1,1,0,0\n")
        with pytest.raises(ParseError, match="t=1"):
            read_assignment_csv(str(path))

    def test_non_binary_cell_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("unit,t1,t2\n1,0,2\n")
        with pytest.raises(ParseError, match="0 or 1"):
            read_assignment_csv(str(path))

    def test_json_round_trip(self):
        Z = draw_assignment(Allocation(1, 2, (2,)), Family.WEDGE, seed=9)
        assert assignment_from_json(assignment_to_json(Z)) == Z


class TestScheduleFormats:
    def test_json_round_trip_bit_exact(self):
        rng = np.random.default_rng(5)
        sched = random_schedule(rng, 5, 3)
        back = schedule_from_json(schedule_to_json(sched))
        assert back == sched

    def test_json_is_canonical(self):
        rng = np.random.default_rng(5)
        sched = random_schedule(rng, 3, 2)
        assert schedule_to_json(sched) == schedule_to_json(
            schedule_from_json(schedule_to_json(sched))
        )

    def test_csv_directory_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        sched = random_schedule(rng, 4, 3)
        paths = write_schedule_csv(str(tmp_path / "sched"), sched)
        assert len(paths) == 4  # T+1 arms
        assert read_schedule_csv(str(tmp_path / "sched")) == sched

    def test_missing_directory_content(self, tmp_path):
        with pytest.raises(ParseError, match="no arm CSV"):
            read_schedule_csv(str(tmp_path))


class TestRowTables:
    def test_csv_shape_and_floats(self):
        text = rows_to_csv([{"a": 1, "b": 0.5}, {"a": 2, "b": 1.0 / 3.0}])
        lines = text.splitlines()
        assert lines[0] == "a,b"
        assert lines[2] == "2," + format_float(1.0 / 3.0)

    def test_json_canonical(self):
        assert rows_to_json([{"b": 1, "a": 2}]) == '[{"a":2,"b":1}]\n'

    def test_mismatched_columns_rejected(self):
        with pytest.raises(ValueError):
            rows_to_csv([{"a": 1}, {"b": 2}])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            rows_to_csv([])
