"""
Tests for the experiment harness and its CSV output.
"""

import json
import math

import pytest

from fixdiff.experiments import CSV_HEADER


def read_lines(path):
    return path.read_text().splitlines()


class TestRunRecord:
    """Tests for RunRecord rows and the CSV round trip."""

    def _rec(self, **kw):
        from fixdiff.experiments import RunRecord

        base = dict(method="ITD", t=5, k=0, J=0, epoch=5.0, error=0.25, seed=0, wall_ms=1.25, q=0.5, tref=30, kref=30)
        base.update(kw)
        return RunRecord(**base)

    def test_header(self):
        assert ",".join(CSV_HEADER) == "method,t,k,J,epoch,error,seed,wall_ms,q,tref,kref"

    def test_row_without_timing(self):
        assert self._rec().row() == ["ITD", "5", "0", "0", "5.0", "0.25", "0", "0", "0.5", "30", "30"]

    def test_row_with_timing(self):
        assert self._rec().row(timing=True)[7] == "1.250"

    def test_diverged_sentinel(self):
        rec = self._rec(method="SID-dec", error=math.inf)
        assert rec.diverged
        assert rec.row()[5] == "div"

    def test_negative_error_rejected(self):
        from fixdiff.errors import ArgumentError

        with pytest.raises(ArgumentError):
            self._rec(error=-1.0)
        with pytest.raises(ArgumentError):
            self._rec(error=math.nan)

    def test_csv_round_trip(self, temp_dir):
        from fixdiff.experiments import read_runs_csv, write_runs_csv

        recs = [self._rec(t=10, error=0.1), self._rec(t=5), self._rec(method="SID-const", error=math.inf)]
        path = write_runs_csv(recs, temp_dir / "sub" / "runs.csv")
        lines = read_lines(path)
        assert lines[0] == ",".join(CSV_HEADER)
        assert [line.split(",")[1] for line in lines[1:3]] == ["5", "10"]
        back = read_runs_csv(path)
        assert len(back) == 3
        assert any(r.diverged for r in back)

    def test_read_rejects_other_header(self, temp_dir):
        from fixdiff.errors import ArgumentError
        from fixdiff.experiments import read_runs_csv

        path = temp_dir / "x.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ArgumentError):
            read_runs_csv(path)


class TestHelpers:
    def test_stream_seed(self):
        from fixdiff.experiments import stream_seed

        assert stream_seed(0, 100) == 100
        assert stream_seed(2, 7) == 2 * 1000003 + 7

    def test_elastic_ts(self, tiny_config):
        from fixdiff.experiments import elastic_ts

        assert elastic_ts(tiny_config) == [1, 6, 11, 16, 20]

    def test_schedules_share_first_step(self, tiny_config):
        from fixdiff.experiments import make_schedules

        sch = make_schedules(tiny_config, "elastic", 0.5)
        assert sch["const"].eta(1) == pytest.approx(min(1.0, sch["dec"].eta(1)))
        assert sch["dec"].label == "dec"

    def test_preset_schedule(self, tiny_config):
        from fixdiff.experiments import make_schedules

        tiny_config.schedule = "preset"
        tiny_config.const_eta = 0.3
        sch = make_schedules(tiny_config, "poisoning", 0.5)
        assert sch["const"].eta(7) == pytest.approx(0.3)


class TestRunElastic:
    """End-to-end elastic-net sweep on a tiny configuration."""

    def test_outputs(self, tiny_config, temp_dir):
        from fixdiff.experiments import read_runs_csv, run_elastic

        out = run_elastic(tiny_config, temp_dir)
        target = temp_dir / "lam1_0.1"
        assert {p.name for p in out.files} == {"runs.csv", "deterministic.svg", "stochastic.svg", "meta.json"}
        assert all(p.parent == target for p in out.files)
        assert not out.interrupted

        # 5 t values x 3 methods, plus 2 budgets x (2 NSID + 2 SID + AID-FP), for 2 seeds
        assert out.rows == 50
        recs = read_runs_csv(target / "runs.csv")
        assert len(recs) == 50
        assert {r.seed for r in recs} == {0, 1}
        assert {r.method for r in recs} == {
            "ITD", "AID-FP", "AID-CG", "NSID-const", "NSID-dec", "SID-const", "SID-dec",
        }
        assert all(r.wall_ms == 0.0 for r in recs)
        assert all(0.0 < r.q < 1.0 for r in recs)

        nsid = [r for r in recs if r.method.startswith("NSID")]
        assert {(r.k, r.J) for r in nsid} == {(5, 5), (20, 20)}

        meta = json.loads((target / "meta.json").read_text())
        assert meta["gap"] == "vertex"
        assert set(meta["seeds"]) == {"0", "1"}

    def test_deterministic_errors_shrink(self, tiny_config, temp_dir):
        from fixdiff.experiments import read_runs_csv, run_elastic

        tiny_config.seeds = 1
        tiny_config.run_sid = False
        run_elastic(tiny_config, temp_dir)
        recs = read_runs_csv(temp_dir / "lam1_0.1" / "runs.csv")
        aid = {r.t: r.error for r in recs if r.method == "AID-FP" and r.J == 0 and r.k == r.t}
        assert aid[20] < aid[1]

    def test_deterministic_rows_share_reference_vector(self, tiny_config):
        """Every deterministic row uses y = d1E(w_ref), not the gradient at the current iterate."""
        import numpy as np

        from fixdiff.deterministic import aid_fp_vjp, estimate_error, itd_vjp
        from fixdiff.experiments import SWEEP_DETERMINISTIC, _elastic_cell, _reference
        from fixdiff.problems import build_elastic_net, gen_elastic_net, lambda_max
        from fixdiff.solver import fixed_point_solve

        tiny_config.run_sid = False
        cell = _elastic_cell(tiny_config, 0.1, 0)
        train, val, _ = gen_elastic_net(0, 30, 12, 4, tiny_config.elastic_correlated)
        lam = np.array([0.1 * lambda_max(train), tiny_config.elastic_lam2])
        prob = build_elastic_net(train, val, lam, c=tiny_config.elastic_c)
        ref, y = _reference(prob, lam, tiny_config)
        np.testing.assert_array_equal(y, prob.upper.grad_w(ref.meta["w_ref"], lam))

        traj = fixed_point_solve(prob.phi, lam, np.zeros(prob.phi.d), 20, record=True)
        rows = {(r.method, r.t): r.error for r in cell.records if r.sweep == SWEEP_DETERMINISTIC}
        assert rows[("ITD", 20)] == estimate_error(itd_vjp(prob.phi, traj, lam, y), ref)
        assert rows[("AID-FP", 20)] == estimate_error(aid_fp_vjp(prob.phi, traj.w_t, lam, y, 20, t=20), ref)

    def test_reruns_are_byte_identical(self, tiny_config, temp_dir):
        from fixdiff.experiments import run_elastic

        tiny_config.seeds = 1
        run_elastic(tiny_config, temp_dir / "a")
        tiny_config.workers = 2
        run_elastic(tiny_config, temp_dir / "b")
        for name in ("runs.csv", "deterministic.svg", "stochastic.svg", "meta.json"):
            a = (temp_dir / "a" / "lam1_0.1" / name).read_bytes()
            b = (temp_dir / "b" / "lam1_0.1" / name).read_bytes()
            assert a == b, name

    def test_invalid_config(self, tiny_config, temp_dir):
        from fixdiff.errors import ConfigError
        from fixdiff.experiments import run_elastic

        tiny_config.elastic_k_grid = [0]
        with pytest.raises(ConfigError):
            run_elastic(tiny_config, temp_dir)


class TestRunPoisoning:
    """End-to-end poisoning sweep on a tiny configuration."""

    def test_outputs(self, tiny_config, temp_dir):
        from fixdiff.experiments import read_runs_csv, run_poisoning

        out = run_poisoning(tiny_config, temp_dir)
        assert {p.name for p in out.files} == {"runs.csv", "stochastic.svg", "meta.json"}
        assert out.rows == 20
        recs = read_runs_csv(temp_dir / "runs.csv")
        js = {(r.k, r.J) for r in recs if r.method.startswith("NSID")}
        assert js == {(20, 1), (40, 2)}
        aid = [r for r in recs if r.method == "AID-FP"]
        assert all(r.J == 0 and r.epoch == float(r.k) for r in aid)
        meta = json.loads((temp_dir / "meta.json").read_text())
        for summary in meta["seeds"].values():
            assert summary["q_provenance"] == "heuristic"
            assert 0.0 <= summary["val_accuracy"] <= 1.0


    def test_from_idx_files(self, tiny_config, temp_dir, idx_files):
        from fixdiff.experiments import read_runs_csv, run_poisoning

        tiny_config.seeds = 1
        tiny_config.poison_images_path, tiny_config.poison_labels_path = (str(p) for p in idx_files)
        out = run_poisoning(tiny_config, temp_dir / "out")
        assert out.rows == 10
        assert all(0.0 < r.q < 1.0 for r in read_runs_csv(temp_dir / "out" / "runs.csv"))
        meta = json.loads((temp_dir / "out" / "meta.json").read_text())
        assert meta["data"]["source"] == "idx"
        assert meta["data"]["rows"] == 100
        assert meta["data"]["p"] == 4


class TestPoisoningData:
    """Tests for poisoning_data: synthetic blobs or a dataset file."""

    def _csv(self, temp_dir, n):
        from fixdiff.datasets import write_csv
        from fixdiff.problems import gen_blobs

        path = temp_dir / "blobs.csv"
        write_csv(gen_blobs(5, n, 6, 3), path)
        return path

    def test_blobs_by_default(self, tiny_config):
        from fixdiff.experiments import poisoning_data

        (clean, corrupt, val), source = poisoning_data(tiny_config)
        assert source == {"source": "blobs", "p": 6}
        assert (clean.n_rows, corrupt.n_rows, val.n_rows) == (40, 12, 40)

    def test_csv_file(self, tiny_config, temp_dir):
        from fixdiff.experiments import poisoning_data

        tiny_config.poison_images_path = str(self._csv(temp_dir, 110))
        (clean, corrupt, val), source = poisoning_data(tiny_config)
        assert (clean.n_rows, corrupt.n_rows, val.n_rows) == (40, 12, 40)
        assert (clean.tag, corrupt.tag, val.tag) == ("train", "corruptible", "val")
        assert clean.n_classes == 3
        assert source["source"] == "csv"
        assert source["rows"] == 110
        assert source["p"] == 6

    def test_idx_files(self, tiny_config, idx_files):
        from fixdiff.experiments import poisoning_data

        tiny_config.poison_images_path, tiny_config.poison_labels_path = (str(p) for p in idx_files)
        (clean, corrupt, val), source = poisoning_data(tiny_config)
        assert (clean.n_rows, corrupt.n_rows, val.n_rows) == (40, 12, 40)
        assert clean.n_features == 4
        assert float(clean.X.max()) <= 0.1
        assert source["source"] == "idx"

    def test_split_follows_seed(self, tiny_config, temp_dir):
        import numpy as np

        from fixdiff.experiments import poisoning_data

        tiny_config.poison_images_path = str(self._csv(temp_dir, 110))
        (a, _, _), _ = poisoning_data(tiny_config)
        (b, _, _), _ = poisoning_data(tiny_config)
        np.testing.assert_array_equal(a.X, b.X)
        tiny_config.seed = 1
        (c, _, _), _ = poisoning_data(tiny_config)
        assert not np.array_equal(a.X, c.X)

    def test_too_few_rows(self, tiny_config, temp_dir):
        from fixdiff.errors import ConfigError
        from fixdiff.experiments import poisoning_data

        tiny_config.poison_images_path = str(self._csv(temp_dir, 50))
        with pytest.raises(ConfigError) as exc:
            poisoning_data(tiny_config)
        assert exc.value.field == "poisoning.images_path"

    def test_missing_file(self, tiny_config, temp_dir, idx_files):
        from fixdiff.errors import ConfigError
        from fixdiff.experiments import poisoning_data

        tiny_config.poison_images_path = str(idx_files[0])
        tiny_config.poison_labels_path = str(temp_dir / "absent.idx1-ubyte")
        with pytest.raises(ConfigError) as exc:
            poisoning_data(tiny_config)
        assert exc.value.field == "poisoning.labels_path"

    def test_build_problem_uses_file(self, tiny_config, idx_files):
        from fixdiff.experiments import build_problem

        tiny_config.poison_images_path, tiny_config.poison_labels_path = (str(p) for p in idx_files)
        prob, lam, data = build_problem(tiny_config, "poisoning")
        assert data["source"]["source"] == "idx"
        assert prob.meta["p"] == 4
        assert lam.shape == (12 * 4,)


class TestSolveProblem:
    """Tests for solve_problem."""

    def test_elastic(self, tiny_config):
        from fixdiff.experiments import solve_problem

        report = solve_problem(tiny_config, "elastic")
        assert report["problem"] == "elastic-net"
        assert 0.0 < report["q"] < 1.0
        assert report["residual"] < 1e-6
        assert "outer_values" not in report

    def test_elastic_outer_loop_descends(self, tiny_config):
        from fixdiff.experiments import solve_problem

        report = solve_problem(tiny_config, "elastic", outer_steps=3, outer_lr=1e-5)
        values = report["outer_values"]
        assert len(values) == 4
        assert values[-1] <= values[0] + 1e-9

    def test_poisoning(self, tiny_config):
        from fixdiff.experiments import solve_problem

        report = solve_problem(tiny_config, "poisoning")
        assert report["q_provenance"] == "heuristic"
        assert 0.0 <= report["validation_accuracy"] <= 1.0

    def test_unknown_problem(self, tiny_config):
        from fixdiff.errors import ArgumentError
        from fixdiff.experiments import solve_problem

        with pytest.raises(ArgumentError):
            solve_problem(tiny_config, "lasso")
