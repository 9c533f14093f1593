import json
from datetime import date

import numpy as np
import pandas as pd
import pytest
from typer.testing import CliRunner

from app.domain import Cardinalities, ModelParams
from app.ingest import parse_matches
from app.main import _target_week, app
from app.storage import save_model
from app.trainer import make_hyperparams

runner = CliRunner()

FAST = ["--states", "2", "--restarts", "2", "--max-iterations", "4", "--bp-cycles", "4", "--seed", "3"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """One small model trained on the bundled match file, shared by the read-only commands."""
    from tests.conftest import FIXTURES

    out = tmp_path_factory.mktemp("trained")
    source = str(FIXTURES / "tiny_matches.csv")
    result = runner.invoke(app, ["train", "--input", source, "--output-dir", str(out), *FAST])
    assert result.exit_code == 0, result.output
    return source, out / "model.json"


def test_ingest_writes_match_file_and_sidecar(tmp_path, fixture_path):
    result = runner.invoke(app, ["ingest", "--input", str(fixture_path), "--output-dir", str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert len(pd.read_csv(tmp_path / "matches.csv")) == 36
    assert json.loads((tmp_path / "matches.json").read_text())["season_boundaries"] == [7, 13]


@pytest.mark.parametrize("mode, code", [("--strict", 1), ("--lenient", 0)])
def test_ingest_ragged_row(tmp_path, mode, code):
    source = tmp_path / "ragged.csv"
    source.write_text("Date,HomeTeam,AwayTeam,FTHG,FTAG\n14/08/93,Arsenal,Coventry,0,3\n"
                      "15/08/93,Leeds,Wimbledon,1,0,EXTRA\n21/08/93,Leeds,Arsenal,2,1\n")
    result = runner.invoke(app, ["ingest", "--input", str(source), "--output-dir", str(tmp_path), mode])
    assert result.exit_code == code, result.output
    if code:
        assert "line 3" in result.output
    else:
        assert len(pd.read_csv(tmp_path / "matches.csv")) == 2


def test_missing_input_is_a_config_error(tmp_path):
    result = runner.invoke(app, ["ingest", "--input", str(tmp_path / "absent.csv"), "--output-dir", str(tmp_path)])
    assert result.exit_code == 2
    assert "not found" in result.output


class TestTrain:
    def test_same_seed_same_bytes(self, tmp_path, fixture_path, trained):
        _, model = trained
        result = runner.invoke(app, ["train", "--input", str(fixture_path), "--output-dir", str(tmp_path), *FAST])
        assert result.exit_code == 0, result.output
        assert (tmp_path / "model.json").read_bytes() == model.read_bytes()
        assert (tmp_path / "trace.csv").exists()

    def test_single_state_is_rejected(self, tmp_path, fixture_path):
        result = runner.invoke(app, ["train", "--input", str(fixture_path), "--output-dir", str(tmp_path),
                                     "--states", "1"])
        assert result.exit_code == 2


class TestValidate:
    def test_trained_model_is_valid(self, trained):
        _, model = trained
        result = runner.invoke(app, ["validate", str(model)])
        assert result.exit_code == 0, result.output

    def test_tampered_model(self, tmp_path, trained):
        _, model = trained
        document = json.loads(model.read_text())
        document["params"]["pi"][0] += 0.01
        (tmp_path / "model.json").write_text(json.dumps(document))
        assert runner.invoke(app, ["validate", str(tmp_path / "model.json")]).exit_code == 1

    def test_invalid_parameters(self, tmp_path, tiny_schedule):
        params = ModelParams.uniform(2, 5)
        psi = params.psi.copy()
        psi[0, 0] = [0.3, 0.2, 0.2, 0.2, 0.2]
        save_model(tmp_path / "bad.json", params.updated(psi=psi), make_hyperparams(tiny_schedule, Cardinalities(2, 5)))
        result = runner.invoke(app, ["validate", str(tmp_path / "bad.json")])
        assert result.exit_code == 1
        assert "psi row (0,0)" in result.output

    def test_missing_model(self, tmp_path):
        assert runner.invoke(app, ["validate", str(tmp_path / "absent.json")]).exit_code == 2


class TestReadOnlyCommands:
    def test_infer(self, tmp_path, trained):
        source, model = trained
        result = runner.invoke(app, ["infer", "--input", source, "--model", str(model), "--output-dir", str(tmp_path)])
        assert result.exit_code == 0, result.output
        assert (tmp_path / "posterior.csv").read_text().strip()

    def test_timeline_skips_the_bridged_weeks(self, tmp_path, trained):
        source, model = trained
        result = runner.invoke(app, ["timeline", "--team", "D", "--role", "defense", "--input", source,
                                     "--model", str(model), "--output-dir", str(tmp_path)])
        assert result.exit_code == 0, result.output
        frame = pd.read_csv(tmp_path / "timeline_D_defense.csv")
        assert 7 not in set(frame["week"])
        assert frame["strength"].between(0.0, 100.0).all()

    def test_unknown_team_suggests_names(self, tmp_path, trained):
        source, model = trained
        result = runner.invoke(app, ["timeline", "--team", "a", "--input", source, "--model", str(model),
                                     "--output-dir", str(tmp_path)])
        assert result.exit_code == 2
        assert "did you mean" in result.output or "no similar team names" in result.output

    def test_bad_role(self, tmp_path, trained):
        source, model = trained
        result = runner.invoke(app, ["timeline", "--team", "A", "--role", "midfield", "--input", source,
                                     "--model", str(model), "--output-dir", str(tmp_path)])
        assert result.exit_code == 2

    def test_predict_fixtures(self, tmp_path, trained, upcoming_path):
        source, model = trained
        result = runner.invoke(app, ["predict", "--input", source, "--model", str(model),
                                     "--fixtures", str(upcoming_path), "--output-dir", str(tmp_path)])
        assert result.exit_code == 0, result.output
        frame = pd.read_csv(tmp_path / "predictions.csv")
        assert list(frame["home"]) == ["A", "D"]
        np.testing.assert_allclose(frame[["p_win", "p_draw", "p_away"]].sum(axis=1), 1.0, atol=1e-9)

    def test_predict_needs_a_fixture(self, tmp_path, trained):
        source, model = trained
        result = runner.invoke(app, ["predict", "--input", source, "--model", str(model),
                                     "--home", "A", "--output-dir", str(tmp_path)])
        assert result.exit_code == 2

    def test_simulated_matches_reingest(self, tmp_path, trained):
        _, model = trained
        result = runner.invoke(app, ["simulate", "--model", str(model), "--teams", "4", "--weeks", "6",
                                     "--seed", "11", "--output-dir", str(tmp_path)])
        assert result.exit_code == 0, result.output
        records = parse_matches((tmp_path / "simulated.csv").read_text())
        assert len(records) == len(pd.read_csv(tmp_path / "simulated.csv"))
        assert (tmp_path / "latents.csv").exists()


class TestRecordedIngestSettings:
    @pytest.fixture(scope="class")
    def one_season(self, tmp_path_factory):
        from tests.conftest import FIXTURES

        out = tmp_path_factory.mktemp("one_season")
        source = str(FIXTURES / "tiny_matches.csv")
        result = runner.invoke(app, ["train", "--input", source, "--output-dir", str(out),
                                     "--season-gap-days", "400", *FAST])
        assert result.exit_code == 0, result.output
        return source, out / "model.json"

    def test_model_records_the_gap(self, one_season):
        _, model = one_season
        assert json.loads(model.read_text())["ingest"] == {"season_gap_days": 400, "strict": True, "schema": None}

    def test_timeline_reuses_the_recorded_gap(self, tmp_path, one_season):
        source, model = one_season
        args = ["timeline", "--team", "D", "--role", "defense", "--input", source, "--model", str(model)]
        for name, extra in (("recorded", []), ("explicit", ["--season-gap-days", "400"]),
                            ("override", ["--season-gap-days", "45"])):
            result = runner.invoke(app, [*args, "--output-dir", str(tmp_path / name), *extra])
            assert result.exit_code == 0, result.output
        recorded = pd.read_csv(tmp_path / "recorded" / "timeline_D_defense.csv")
        pd.testing.assert_frame_equal(recorded, pd.read_csv(tmp_path / "explicit" / "timeline_D_defense.csv"))
        assert list(recorded["week"]) == list(range(1, 19))
        assert 7 not in set(pd.read_csv(tmp_path / "override" / "timeline_D_defense.csv")["week"])

    def test_infer_reuses_the_recorded_gap(self, tmp_path, one_season):
        source, model = one_season
        result = runner.invoke(app, ["infer", "--input", source, "--model", str(model), "--output-dir", str(tmp_path)])
        assert result.exit_code == 0, result.output
        frame = pd.read_csv(tmp_path / "posterior.csv")
        assert set(frame[frame["team"] == "D"]["week"]) == set(range(1, 19))

    def test_predict_accepts_a_gap(self, tmp_path, one_season):
        source, model = one_season
        result = runner.invoke(app, ["predict", "--input", source, "--model", str(model), "--home", "A",
                                     "--away", "B", "--date", "21/09/13", "--season-gap-days", "45",
                                     "--output-dir", str(tmp_path)])
        assert result.exit_code == 0, result.output
        assert len(pd.read_csv(tmp_path / "predictions.csv")) == 1


class TestTargetWeek:
    def test_next_week_without_a_date(self, tiny_schedule):
        assert _target_week(tiny_schedule, None, 45) == (19, set())

    def test_within_the_season(self, tiny_schedule):
        assert _target_week(tiny_schedule, date(2012, 10, 20), 45) == (22, set())

    def test_one_boundary_per_gap_span(self, tiny_schedule):
        assert _target_week(tiny_schedule, date(2012, 11, 20), 45) == (27, {19})
        assert _target_week(tiny_schedule, date(2012, 12, 31), 45) == (33, {19, 20})


class TestEvaluate:
    def test_split_must_leave_training_weeks(self, tmp_path, fixture_path):
        result = runner.invoke(app, ["evaluate", "--input", str(fixture_path), "--output-dir", str(tmp_path),
                                     "--split-week", "1"])
        assert result.exit_code == 2
        assert "split week" in result.output

    def test_accepts_training_flags(self, tmp_path, fixture_path):
        result = runner.invoke(app, ["evaluate", "--input", str(fixture_path), "--output-dir", str(tmp_path),
                                     "--split-week", "1", "--goal-cap", "5", "--c-transition", "10", "--c-goal", "20",
                                     "--bp-cycles", "2", "--tol", "1e-4", "--damping", "0.1", "--season-gap-days", "30"])
        assert result.exit_code == 2
        assert "split week" in result.output

    def test_bad_damping(self, tmp_path, fixture_path):
        result = runner.invoke(app, ["evaluate", "--input", str(fixture_path), "--output-dir", str(tmp_path),
                                     "--split-week", "16", "--damping", "1.5"])
        assert result.exit_code == 2
        assert "damping" in result.output

    def test_needs_a_split(self, tmp_path, fixture_path):
        result = runner.invoke(app, ["evaluate", "--input", str(fixture_path), "--output-dir", str(tmp_path)])
        assert result.exit_code == 2

    @pytest.mark.slow
    def test_writes_all_outputs(self, tmp_path, fixture_path):
        result = runner.invoke(app, ["evaluate", "--input", str(fixture_path), "--output-dir", str(tmp_path),
                                     "--split-week", "16", "--weekly-iters", "1", "--states", "2",
                                     "--restarts", "1", "--max-iterations", "3"])
        assert result.exit_code == 0, result.output
        for name in ("eval.csv", "net_series.csv", "elo.json"):
            assert (tmp_path / name).exists()
