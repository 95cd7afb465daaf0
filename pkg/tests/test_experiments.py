import json
from dataclasses import replace

import numpy as np
import pytest

from awjm.experiments import (
    MISFIT_CASES,
    PRESETS,
    ExperimentPreset,
    get_preset,
    relative_l2,
    run_ak_study,
    run_e_study,
    run_sensitivity,
)
from awjm.model import Grid1D


@pytest.fixture(scope="module")
def ak50():
    return replace(get_preset("paper-3.2-ak"), n=50, dt_rule="hyperbolic", grad_tol=1e-16, max_iters=200)


class TestPresets:
    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_resolvable(self, name):
        p = get_preset(name)
        assert p.seeds >= 1 and p.version >= 1
        assert p.truth().e.shape == (p.n,)
        for s in p.starts:
            assert p.start(s).e.shape == (p.n,)
        p.cost_spec()

    def test_unknown(self):
        with pytest.raises(ValueError):
            get_preset("paper-9")

    def test_bad_replication(self):
        with pytest.raises(ValueError):
            replace(get_preset("tiny"), seeds=0)

    def test_bad_case(self):
        with pytest.raises(ValueError):
            replace(get_preset("tiny"), cases=("4-superposed",))

    def test_table1_shape(self):
        p = get_preset("paper-table1")
        assert p.noise_levels == (1, 2, 5, 10, 15, 20, 30, 40)
        assert list(p.cases) == list(MISFIT_CASES)
        assert p.seeds == 5

    def test_paper_32_grid(self):
        p = get_preset("paper-3.2")
        assert p.n == 200 and p.scheme.dt <= p.grid.dx**2 / 4 * (1 + 1e-12)

    def test_to_dict_json(self):
        json.dumps(get_preset("paper-3.3-lcurve").to_dict())


class TestMetric:
    def test_relative_l2(self):
        g = Grid1D.symmetric(1.0, 11)
        z = np.ones(11)
        assert relative_l2(z, z, g) == 0
        assert relative_l2(1.1 * z, z, g) == pytest.approx(0.1, rel=1e-12)


class TestAKStudy:
    def test_clean_recovery(self, ak50):
        (cell,) = run_ak_study(ak50, noise_levels=[0], alphas=[1e-12], seeds=[0])
        assert abs(cell.a - 2) < 1e-3 and abs(cell.k - 3) < 1e-3
        assert cell.path[0] == (1.0, 1.5) and len(cell.path) == cell.n_iters + 1

    def test_noise_ordering(self, ak50):
        cells = run_ak_study(ak50, noise_levels=[10, 30], alphas=[1e-8], seeds=range(5))
        e10 = [c.rel_error for c in cells if c.noise == 10]
        e30 = [c.rel_error for c in cells if c.noise == 30]
        assert sum(b > a for a, b in zip(e10, e30)) >= 3

    def test_huge_alpha_stalls(self, ak50):
        (cell,) = run_ak_study(ak50, noise_levels=[10], alphas=[1e3], seeds=[0])
        assert cell.rel_error > 0.4


class TestEStudy:
    def test_fixed_point(self):
        p = replace(get_preset("tiny"), etch="zero", active=("e",), starts=("zero",), noise_levels=(0.0,))
        (run,) = run_e_study(p)
        assert run.trace.n_iters == 0
        assert np.all(run.solution.e == 0)

    def test_good_start_small(self):
        p = replace(get_preset("paper-3.2-e"), n=40, dt_rule="hyperbolic", alpha=1e-8, max_iters=300,
                    grad_rtol=None, starts=("good",))
        (run,) = run_e_study(p)
        assert run.error is None
        assert run.e_error < 1e-2 and run.trench_error < 1e-3


@pytest.fixture(scope="module")
def report():
    p = replace(get_preset("paper-table1"), n=40, max_iters=60)
    return run_sensitivity(p, seeds=2, levels=[0.0, 5.0, 20.0], cases=["single", "2-independent", "2-superposed"])


class TestSensitivity:
    def test_shape(self, report):
        assert report.errors.shape == (3, 3, 2)
        assert np.all(report.errors >= 0)
        assert not report.failures

    def test_noise_free_cells(self, report):
        assert np.all(report.errors[:, 0, :] < 1e-2)

    def test_outputs(self, report, tmp_path):
        report.write_table_csv(tmp_path / "t.csv")
        report.write_long_csv(tmp_path / "l.csv")
        report.write_json(tmp_path / "r.json")
        table = (tmp_path / "t.csv").read_text().splitlines()
        assert table[0] == "trenches,0%,5%,20%"
        assert [r.split(",")[0] for r in table[1:]] == ["single", "2-independent", "2-superposed"]
        assert len((tmp_path / "l.csv").read_text().splitlines()) == 1 + 18
        meta = json.loads((tmp_path / "r.json").read_text())
        assert set(meta["spearman"]) == {"single", "2-independent", "2-superposed"}

    def test_failed_cell_marked(self, tmp_path):
        p = replace(get_preset("paper-table1"), n=20, a=8.0, etch_amplitude=3.0, max_iters=5)
        rep = run_sensitivity(p, seeds=1, levels=[1.0], cases=["single"])
        assert np.isnan(rep.errors[0, 0, 0]) and len(rep.failures) == 1
        rep.write_table_csv(tmp_path / "t.csv")
        assert "failed" in (tmp_path / "t.csv").read_text()

    def test_worker_pool_matches_serial(self):
        p = replace(get_preset("paper-table1"), n=24, max_iters=20)
        kw = dict(seeds=1, levels=[5.0, 10.0], cases=["single", "2-superposed"])
        serial = run_sensitivity(p, workers=1, **kw)
        pooled = run_sensitivity(p, workers=2, **kw)
        np.testing.assert_array_equal(serial.errors, pooled.errors)
