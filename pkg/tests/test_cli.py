import json

import numpy as np
import pytest

from tokenimpact.cli import main
from tokenimpact.survey import write_csv

from conftest import make_dataset


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def world_csv(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("world")
    out = tmp / "data.csv"
    rc = run(
        "simulate", "--preset", "default-world", "--n", 4000, "--seed", 7,
        "--out", out, "--truth", tmp / "truth.json", "--truth-mc", 20000,
    )
    assert rc == 0
    return out


def snapshot(outdir):
    return {p.name: p.read_bytes() for p in sorted(outdir.iterdir())}


class TestSimulate:
    def test_truth_file_contents(self, world_csv):
        truth = json.loads((world_csv.parent / "truth.json").read_text())
        assert truth["spec"]["n"] == 4000
        assert len(truth["truth"]["group_reductions"]) == 5
        assert truth["truth"]["n_factors"] == 5

    def test_rerun_is_byte_identical(self, tmp_path, world_csv):
        out = tmp_path / "again.csv"
        rc = run("simulate", "--preset", "default-world", "--n", 4000, "--seed", 7,
                 "--out", out, "--truth-mc", 1000)
        assert rc == 0
        assert out.read_bytes() == world_csv.read_bytes()

    def test_spec_file_round_trip(self, tmp_path, world_csv):
        spec = json.loads((world_csv.parent / "truth.json").read_text())["spec"]
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(spec))
        out = tmp_path / "from_spec.csv"
        rc = run("simulate", "--spec", spec_path, "--out", out, "--truth-mc", 1000)
        assert rc == 0
        assert out.read_bytes() == world_csv.read_bytes()

    def test_spec_and_preset_are_exclusive(self, tmp_path):
        assert run("simulate", "--out", tmp_path / "x.csv") == 2

    def test_preset_requires_seed(self, tmp_path):
        rc = run("simulate", "--preset", "default-world", "--out", tmp_path / "x.csv")
        assert rc == 2


class TestDescribe:
    def test_artifacts(self, tmp_path, world_csv):
        out = tmp_path / "out"
        assert run("describe", "--input", world_csv, "--outdir", out, "--seed", 3) == 0
        report = json.loads((out / "describe_report.json").read_text())
        assert report["information_gain"]["balanced"]["bits"] > 0
        assert report["provenance"]["seed"] == 3
        assert len(report["frequencies"]["tokens"]) == 15
        rates = (out / "token_rates.csv").read_text().splitlines()
        assert rates[0] == "token,population,rate"
        assert len(rates) == 1 + 2 * 15
        jac = (out / "jaccard.csv").read_text().splitlines()
        assert len(jac) == 16

    def test_seed_required(self, tmp_path, world_csv):
        assert run("describe", "--input", world_csv, "--outdir", tmp_path / "o") == 2

    def test_invalid_csv_exits_2(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("call_id,rating,duration_s,ptq_submitted,token_a\nc1,9,5,0,0\n")
        assert run("describe", "--input", bad, "--outdir", tmp_path / "o", "--seed", 1) == 2

    def test_rerun_byte_identical(self, tmp_path, world_csv):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run("describe", "--input", world_csv, "--outdir", out, "--seed", 3) == 0
        assert snapshot(a) == snapshot(b)

    def test_empty_token_dataset_gets_degenerate_flag(self, tmp_path):
        rows = [(1, 60.0, (0, 0))] * 3 + [(4, 60.0, (0, 0))] * 5
        ds = make_dataset(rows, n_tokens=2)
        data = tmp_path / "empty.csv"
        write_csv(ds, data)
        out = tmp_path / "out"
        assert run("describe", "--input", data, "--outdir", out, "--seed", 1) == 0
        report = json.loads((out / "describe_report.json").read_text())
        rates = [t["rate_all_rated"] for t in report["frequencies"]["tokens"]]
        assert rates == [0.0, 0.0]
        ig = report["information_gain"]["representative"]
        assert ig["bits"] == 0.0 and ig["degenerate"] is True
        assert report["jaccard"]["undefined_pairs"] == [["tok0", "tok1"]]


class TestTimu:
    def test_report_both_metrics(self, tmp_path, world_csv):
        out = tmp_path / "out"
        assert run("timu", "--input", world_csv, "--outdir", out, "--seed", 3) == 0
        report = json.loads((out / "timu_report.json").read_text())
        assert set(report["rankings"]) == {"pcr", "acd"}
        assert report["fix_values"]["pcr"] == 0.0
        assert report["fix_values"]["acd"] > 0
        plot = (out / "timu_plot.csv").read_text().splitlines()
        assert plot[0] == "metric,token,impact,ci95_halfwidth"
        assert len(plot) == 1 + 2 * 15

    def test_hand_fixture_impact_through_cli(self, tmp_path, timu_fixture):
        data = tmp_path / "fixture.csv"
        write_csv(timu_fixture, data)
        out = tmp_path / "out"
        assert run("timu", "--input", data, "--outdir", out, "--seed", 1,
                   "--metric", "pcr") == 0
        report = json.loads((out / "timu_report.json").read_text())
        top = report["rankings"]["pcr"][0]
        assert top["token_or_set"] == "audio.noise"
        assert top["mean_impact"] == pytest.approx(0.3, abs=1e-12)

    def test_fix_value_requires_single_metric(self, tmp_path, world_csv):
        rc = run("timu", "--input", world_csv, "--outdir", tmp_path / "o",
                 "--seed", 1, "--fix-value", "0.5")
        assert rc == 2

    def test_strict_delta_narrows_interval(self, tmp_path, timu_fixture):
        data = tmp_path / "fixture.csv"
        write_csv(timu_fixture, data)
        cis = {}
        for name, extra in (("default", []), ("strict", ["--strict-delta"])):
            out = tmp_path / name
            assert run("timu", "--input", data, "--outdir", out, "--seed", 1,
                       "--metric", "pcr", *extra) == 0
            report = json.loads((out / "timu_report.json").read_text())
            top = report["rankings"]["pcr"][0]
            cis[name] = top["ci95_halfwidth"]
        # subtracting the covariance twice removes more shared variance here
        assert cis["strict"] < cis["default"]

    def test_pcr_acd_orders_differ_on_constructed_fixture(self, tmp_path):
        rows = [(1, 300.0, (1, 0))] * 5
        rows += [(4, 3000.0, (0, 1))] * 5
        rows += [(4, 300.0, (0, 0))] * 10
        ds = make_dataset(rows, n_tokens=2)
        data = tmp_path / "two.csv"
        write_csv(ds, data)
        out = tmp_path / "out"
        assert run("timu", "--input", data, "--outdir", out, "--seed", 1,
                   "--no-restrict") == 0
        report = json.loads((out / "timu_report.json").read_text())
        pcr_order = [r["token_or_set"] for r in report["rankings"]["pcr"]]
        acd_order = [r["token_or_set"] for r in report["rankings"]["acd"]]
        assert pcr_order != acd_order


class TestTimm:
    def test_factors_artifacts(self, tmp_path, world_csv):
        out = tmp_path / "out"
        rc = run("timm", "factors", "--input", world_csv, "--outdir", out,
                 "--seed", 5, "--reps", 25)
        assert rc == 0
        grouping = json.loads((out / "grouping.json").read_text())
        assert grouping["grouping"]["groups"]
        factors = json.loads((out / "factors_report.json").read_text())
        assert factors["n_factors"] >= 1
        assert len(factors["parallel_analysis"]["observed_eigenvalues"]) == 15
        poly = (out / "polychoric.csv").read_text().splitlines()
        assert poly[0].startswith("token,")
        assert len(poly) == 16

    def test_impact_artifacts(self, tmp_path, world_csv):
        out = tmp_path / "out"
        rc = run("timm", "impact", "--input", world_csv, "--outdir", out,
                 "--seed", 5, "--reps", 25, "--bootstrap", 50)
        assert rc == 0
        report = json.loads((out / "impact_report.json").read_text())
        impact = report["impact"]
        assert impact["auc"] > impact["baseline_auc"]
        assert len(impact["cumulative"]) == len(impact["groups"])
        plot = (out / "impact_plot.csv").read_text().splitlines()
        assert plot[0] == "group,individual,cumulative,ci_lo,ci_hi"

    def test_independent_world_exits_4(self, tmp_path):
        rng = np.random.default_rng(0)
        rows = [(int(rng.integers(1, 5)), 60.0, tuple(rng.random(4) < 0.2))
                for _ in range(2500)]
        ds = make_dataset(rows, n_tokens=4)
        data = tmp_path / "indep.csv"
        write_csv(ds, data)
        rc = run("timm", "factors", "--input", data, "--outdir", tmp_path / "o",
                 "--seed", 2, "--reps", 25, "--no-restrict")
        assert rc == 4

    def test_force_k_overrides(self, tmp_path, world_csv):
        out = tmp_path / "out"
        rc = run("timm", "factors", "--input", world_csv, "--outdir", out,
                 "--seed", 5, "--reps", 25, "--force-k", 2)
        assert rc == 0
        factors = json.loads((out / "factors_report.json").read_text())
        assert factors["n_factors"] == 2

    def test_rerun_and_threads_byte_identical(self, tmp_path, world_csv):
        outs = [tmp_path / name for name in ("a", "b", "c")]
        for out, threads in zip(outs, (1, 1, 4)):
            rc = run("timm", "impact", "--input", world_csv, "--outdir", out,
                     "--seed", 5, "--reps", 20, "--bootstrap", 40,
                     "--threads", threads)
            assert rc == 0
        assert snapshot(outs[0]) == snapshot(outs[1])
        assert snapshot(outs[0]) == snapshot(outs[2])

    def test_config_file_supplies_options(self, tmp_path, world_csv):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"reps": 20, "bootstrap": 30, "seed": 5}))
        out = tmp_path / "out"
        rc = run("timm", "impact", "--input", world_csv, "--outdir", out,
                 "--config", cfg)
        assert rc == 0
        report = json.loads((out / "impact_report.json").read_text())
        assert report["provenance"]["config"]["reps"] == 20

    def test_config_unknown_key_rejected(self, tmp_path, world_csv):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"repz": 20}))
        rc = run("timm", "impact", "--input", world_csv, "--outdir", tmp_path / "o",
                 "--config", cfg, "--seed", 5)
        assert rc == 2

    def test_explicit_interactions(self, tmp_path, world_csv):
        out = tmp_path / "out"
        rc = run("timm", "impact", "--input", world_csv, "--outdir", out,
                 "--seed", 5, "--reps", 20, "--bootstrap", 30,
                 "--interactions", "1:2")
        assert rc == 0
        report = json.loads((out / "impact_report.json").read_text())
        assert report["interactions"] == [[0, 1]]


class TestTimmRecovery:
    def test_grouping_matches_planted_partition_end_to_end(self, tmp_path):
        data = tmp_path / "big.csv"
        rc = run("simulate", "--preset", "default-world", "--n", 20000, "--seed", 3,
                 "--out", data, "--truth-mc", 1000)
        assert rc == 0
        out = tmp_path / "out"
        rc = run("timm", "factors", "--input", data, "--outdir", out,
                 "--seed", 21, "--reps", 60)
        assert rc == 0
        grouping = json.loads((out / "grouping.json").read_text())["grouping"]
        assert grouping["unassigned"] == []
        got = {frozenset(g["members"]) for g in grouping["groups"]}
        planted = {
            frozenset(["video.dark", "video.stopped", "video.av_sync",
                       "video.poor_image", "video.freeze"]),
            frozenset(["audio.interrupt", "audio.distorted", "audio.low_volume",
                       "audio.echo", "audio.noise"]),
            frozenset(["oneway.no_audio_recv", "oneway.no_audio_sent"]),
            frozenset(["oneway.no_video_recv", "oneway.no_video_sent"]),
            frozenset(["reliability.drop"]),
        }
        assert got == planted


class TestReport:
    def test_full_report(self, tmp_path, world_csv):
        out = tmp_path / "out"
        rc = run("report", "--input", world_csv, "--outdir", out,
                 "--seed", 5, "--reps", 20, "--bootstrap", 30)
        assert rc == 0
        summary = json.loads((out / "summary.json").read_text())
        for name in summary["artifacts"]:
            assert (out / name).exists(), name
