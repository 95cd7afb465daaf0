import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from awjm.data import MeasurementSet, NoiseSpec
from awjm.io import (
    grid_from_x,
    output_root,
    read_etch,
    read_json,
    read_measurement_set,
    read_profile,
    write_etch,
    write_json,
    write_measurement_set,
    write_profile,
    write_snapshots,
)
from awjm.model import Grid1D

finite = st.floats(allow_nan=False, allow_infinity=False)


class TestProfiles:
    @settings(max_examples=40, deadline=None)
    @given(st.lists(finite, min_size=1, max_size=50))
    def test_round_trip_bit_identical(self, tmp_path_factory, values):
        path = tmp_path_factory.mktemp("p") / "z.csv"
        z = np.array(values)
        x = np.arange(z.size, dtype=float) / 7
        write_profile(path, x, z)
        x2, z2 = read_profile(path)
        assert x2.tobytes() == x.tobytes()
        assert z2.tobytes() == z.tobytes()

    def test_etch_header(self, tmp_path):
        write_etch(tmp_path / "e.csv", [0.0, 1.0], [0.5, 0.25])
        assert (tmp_path / "e.csv").read_text().splitlines()[0] == "x,e"
        x, e = read_etch(tmp_path / "e.csv")
        assert e.tolist() == [0.5, 0.25]

    def test_wrong_header(self, tmp_path):
        write_etch(tmp_path / "e.csv", [0.0], [1.0])
        with pytest.raises(ValueError):
            read_profile(tmp_path / "e.csv")

    def test_empty_file(self, tmp_path):
        (tmp_path / "z.csv").write_text("")
        with pytest.raises(ValueError):
            read_profile(tmp_path / "z.csv")

    def test_grid_from_x(self):
        g = Grid1D.symmetric(0.55, 228)
        assert grid_from_x(g.x) == g
        x = g.x.copy()
        x[5] += 1e-3
        with pytest.raises(ValueError):
            grid_from_x(x)


class TestMeasurementFiles:
    def test_round_trip(self, tmp_path):
        g = Grid1D.symmetric(1.0, 9)
        rng = np.random.default_rng(0)
        meas = MeasurementSet(list(rng.normal(size=(3, 9))), "superposed", seeds=[(4, 0), (4, 1), (4, 2)],
                              noise=NoiseSpec(15, "posthoc", 4))
        write_measurement_set(tmp_path / "m", meas, g)
        back, g2 = read_measurement_set(tmp_path / "m")
        assert g2 == g
        assert back.combine is meas.combine
        assert back.seeds == meas.seeds and back.noise == meas.noise
        for a, b in zip(back.profiles, meas.profiles):
            assert a.tobytes() == b.tobytes()
        manifest = json.loads((tmp_path / "m" / "manifest.json").read_text())
        assert manifest["noise"]["level_percent"] == 15
        assert manifest["files"] == ["profile_0.csv", "profile_1.csv", "profile_2.csv"]


class TestMisc:
    def test_json_numpy(self, tmp_path):
        write_json(tmp_path / "a.json", {"v": np.arange(3), "f": np.float64(0.5)})
        assert read_json(tmp_path / "a.json") == {"f": 0.5, "v": [0, 1, 2]}

    def test_output_root(self, monkeypatch, tmp_path):
        monkeypatch.setenv("AWJM_OUTPUT_ROOT", str(tmp_path))
        assert output_root() == tmp_path
        monkeypatch.delenv("AWJM_OUTPUT_ROOT")
        assert output_root().name == "awjm-out"

    def test_snapshots(self, tmp_path):
        g = Grid1D.symmetric(1.0, 4)
        states = np.arange(20, dtype=float).reshape(5, 4)
        files = write_snapshots(tmp_path, g, states, 2)
        assert [f.name for f in files] == ["snap_0000000.csv", "snap_0000002.csv", "snap_0000004.csv"]
        assert read_profile(files[1])[1].tolist() == states[2].tolist()
