import csv
import time
from pathlib import Path

import pytest
import yaml
from click.testing import CliRunner
from fastapi.testclient import TestClient

from surveysim.cli import main
from surveysim.clock import SimulatedClock
from surveysim.service import ServiceSettings, create_app

SCHEMA_YAML = """\
attributes:
  - name: age
    kind: integer-range
    low: 18
    high: 90
    units: years
  - name: gender
    kind: categorical
    options:
      - {value: male, weight: 0.5}
      - {value: female, weight: 0.5}
narrative_mode: mechanistic
"""

SURVEY_CSV = (
    "question_id,text,answer_kind,options,answer_instruction\n"
    "q1,Rate your week,likert,1|7,\n"
    "q2,Pick a color,single-choice,red|green|blue,\n"
)

CONFIG_YAML = """\
run_seed: 21
population_size: 4
provider_id: mock
model_name: mock-model
temperature: 0.7
top_p: 1.0
max_output_tokens: 200
max_concurrency: 2
rpm_limit: 600
tpm_limit: 500000
retry: {max_retries: 3, base_delay: 0.5, max_delay: 10.0, jitter_fraction: 0.0}
format_repair_attempts: 2
profile_schema:
  attributes:
    - {name: age, kind: integer-range, low: 18, high: 90, units: years}
    - name: gender
      kind: categorical
      options:
        - {value: male, weight: 0.5}
        - {value: female, weight: 0.5}
  narrative_mode: mechanistic
"""


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "config.yaml").write_text(CONFIG_YAML)
    (tmp_path / "survey.csv").write_text(SURVEY_CSV)
    (tmp_path / "schema.yaml").write_text(SCHEMA_YAML)
    return tmp_path


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def csv_rows(path: Path):
    with path.open() as fh:
        return list(csv.DictReader(fh))


class TestRunCommand:
    def test_mock_run_exits_zero_with_full_results(self, workdir):
        out = workdir / "out"
        result = invoke("run", "-c", workdir / "config.yaml", "-s", workdir / "survey.csv",
                        "-o", out, "--mock")
        assert result.exit_code == 0, result.output + str(result.exception)
        rows = csv_rows(out / "results.csv")
        assert len(rows) == 4 * 2
        assert (out / "manifest.jsonl").exists()
        assert (out / "metrics.jsonl").exists()
        assert (out / "directive_version.txt").read_text().strip() == "kv-answer/1"

    def test_invalid_config_exits_one(self, workdir):
        bad = yaml.safe_load(CONFIG_YAML)
        bad["max_concurrency"] = 0
        (workdir / "bad.yaml").write_text(yaml.safe_dump(bad))
        result = invoke("run", "-c", workdir / "bad.yaml", "-s", workdir / "survey.csv",
                        "-o", workdir / "out", "--mock")
        assert result.exit_code == 1
        assert "max_concurrency" in result.stderr

    def test_fatal_mid_run_exits_two_with_manifest(self, workdir):
        script = {
            "scripted": [
                {"agent_id": "agent-00002", "question_id": "q1",
                 "outcomes": [{"kind": "fatal", "detail": "credentials rejected"}]}
            ]
        }
        (workdir / "script.yaml").write_text(yaml.safe_dump(script))
        out = workdir / "out"
        result = invoke("run", "-c", workdir / "config.yaml", "-s", workdir / "survey.csv",
                        "-o", out, "--mock", "--mock-script", workdir / "script.yaml")
        assert result.exit_code == 2
        assert "manifest" in result.output
        assert (out / "results.csv").exists()
        rows = csv_rows(out / "results.csv")
        assert 0 < len(rows) < 8  # partial results preserved

    def test_resume_completes_partial_run(self, workdir):
        script = {
            "scripted": [
                {"agent_id": "agent-00002", "question_id": "q1",
                 "outcomes": [{"kind": "fatal", "detail": "credentials rejected"}]}
            ]
        }
        (workdir / "script.yaml").write_text(yaml.safe_dump(script))
        out = workdir / "out"
        first = invoke("run", "-c", workdir / "config.yaml", "-s", workdir / "survey.csv",
                       "-o", out, "--mock", "--mock-script", workdir / "script.yaml")
        assert first.exit_code == 2
        partial = len(csv_rows(out / "results.csv"))

        second = invoke("run", "-c", workdir / "config.yaml", "-s", workdir / "survey.csv",
                        "-o", out, "--mock", "--resume", out / "manifest.jsonl")
        assert second.exit_code == 0, second.output + str(second.exception)
        rows = csv_rows(out / "results.csv")
        assert len(rows) == 8
        assert len({(r["agent_id"], r["question_id"]) for r in rows}) == 8
        assert partial < 8

    def test_resume_refuses_edited_config(self, workdir):
        out = workdir / "out"
        invoke("run", "-c", workdir / "config.yaml", "-s", workdir / "survey.csv",
               "-o", out, "--mock")
        edited = yaml.safe_load(CONFIG_YAML)
        edited["temperature"] = 1.5
        (workdir / "edited.yaml").write_text(yaml.safe_dump(edited))
        result = invoke("run", "-c", workdir / "edited.yaml", "-s", workdir / "survey.csv",
                        "-o", out, "--mock", "--resume", out / "manifest.jsonl")
        assert result.exit_code == 1
        assert "refused" in result.stderr

    def test_seed_override_changes_fingerprint(self, workdir):
        out1, out2 = workdir / "a", workdir / "b"
        invoke("run", "-c", workdir / "config.yaml", "-s", workdir / "survey.csv",
               "-o", out1, "--mock")
        invoke("run", "-c", workdir / "config.yaml", "-s", workdir / "survey.csv",
               "-o", out2, "--mock", "--seed", "99")
        rows1 = csv_rows(out1 / "results.csv")
        rows2 = csv_rows(out2 / "results.csv")
        assert rows1[0]["config_hash"] != rows2[0]["config_hash"]


class TestGenerateProfiles:
    def test_deterministic_files(self, workdir):
        out1, out2 = workdir / "p1.csv", workdir / "p2.csv"
        r1 = invoke("generate-profiles", "--schema", workdir / "schema.yaml",
                    "-n", 100, "--seed", 1, "-o", out1)
        r2 = invoke("generate-profiles", "--schema", workdir / "schema.yaml",
                    "-n", 100, "--seed", 1, "-o", out2)
        assert r1.exit_code == 0 and r2.exit_code == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_n_zero_header_only(self, workdir):
        out = workdir / "empty.csv"
        result = invoke("generate-profiles", "--schema", workdir / "schema.yaml",
                        "-n", 0, "--seed", 1, "-o", out)
        assert result.exit_code == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 1
        assert lines[0].startswith("agent_id,seed,")


class TestValidate:
    def test_valid_pair(self, workdir):
        result = invoke("validate", "-c", workdir / "config.yaml", "-s", workdir / "survey.csv")
        assert result.exit_code == 0
        assert "2 questions" in result.output

    def test_malformed_survey_exits_one(self, workdir):
        (workdir / "bad.csv").write_text("question_id,text\nq1,hello\n")
        result = invoke("validate", "-c", workdir / "config.yaml", "-s", workdir / "bad.csv")
        assert result.exit_code == 1


class TestCliServiceParity:
    def test_byte_identical_exports(self, workdir, tmp_path):
        out = workdir / "cli-out"
        result = invoke("run", "-c", workdir / "config.yaml", "-s", workdir / "survey.csv",
                        "-o", out, "--mock")
        assert result.exit_code == 0
        cli_csv = (out / "results.csv").read_bytes()

        app = create_app(ServiceSettings(data_dir=tmp_path / "svc", clock=SimulatedClock()))
        with TestClient(app) as client:
            client.post("/auth/register", json={"login": "u", "secret": "p"})
            token = client.post("/auth/login", json={"login": "u", "secret": "p"}).json()["token"]
            headers = {"Authorization": f"Bearer {token}"}
            survey_ref = client.post(
                "/uploads", headers=headers,
                files={"file": ("s.csv", SURVEY_CSV.encode(), "text/csv")},
                data={"kind": "survey", "format": "delimited-table"},
            ).json()["upload_id"]
            config = yaml.safe_load(CONFIG_YAML)
            run_id = client.post(
                "/runs", headers=headers, json={"config": config, "survey_ref": survey_ref}
            ).json()["run_id"]
            for _ in range(400):
                if client.get(f"/runs/{run_id}", headers=headers).json()["state"] == "completed":
                    break
                time.sleep(0.01)
            service_csv = client.get(
                f"/runs/{run_id}/results?format=csv", headers=headers
            ).content
        assert cli_csv == service_csv
