import json
import textwrap

import numpy as np
import pytest

from decomp_lab.cli import (
    EXIT_CONFIG_ERROR,
    EXIT_NUMERICAL_ERROR,
    EXIT_OK,
    ConfigError,
    emit_report,
    ingest_populations,
    main,
    run_analysis,
)
from decomp_lab.functions import fit_linear
from decomp_lab.measures import empirical_joint


def bundled(name):
    from importlib import resources

    return resources.files("decomp_lab") / "configs" / name


def write(path, text):
    path.write_text(textwrap.dedent(text))
    return path


FULL_FACTORIAL_CSV = """\
x1,x2
-1,-1
-1,1
1,-1
1,1
"""


class TestIngest:
    def test_full_factorial_becomes_uniform_product(self, tmp_path):
        path_h = write(tmp_path / "h.csv", FULL_FACTORIAL_CSV)
        path_k = write(tmp_path / "k.csv", FULL_FACTORIAL_CSV)
        x_h, x_k = ingest_populations(path_h, path_k)
        joint = empirical_joint(x_h)
        assert np.all(joint.weights == 0.25)
        np.testing.assert_array_equal(joint.grid.axes[0], [-1.0, 1.0])

    def test_header_only_rejected(self, tmp_path):
        path = write(tmp_path / "h.csv", "x1,x2\n")
        with pytest.raises(ConfigError, match="no data rows"):
            ingest_populations(path, path)

    def test_fit_recovers_exact_linear_outcome(self, tmp_path):
        rows = ["x1,x2,y"]
        rng = np.random.default_rng(2)
        for _ in range(12):
            a, b = rng.normal(size=2)
            rows.append(f"{a},{b},{a + b}")
        path = write(tmp_path / "h.csv", "\n".join(rows) + "\n")
        from decomp_lab.cli import _read_samples

        x, y, _ = _read_samples(path, None)
        model = fit_linear(x, y)
        assert model.intercept == pytest.approx(0.0, abs=1e-10)
        np.testing.assert_allclose(model.coefficients, [1.0, 1.0], atol=1e-10)

    def test_non_numeric_cell_reports_row(self, tmp_path):
        path = write(tmp_path / "h.csv", "x1\n1.0\noops\n")
        with pytest.raises(ConfigError, match="row 3"):
            ingest_populations(path, path)

    def test_missing_column_rejected(self, tmp_path):
        path = write(tmp_path / "h.csv", "x1\n1.0\n")
        with pytest.raises(ConfigError, match="missing columns"):
            ingest_populations(path, path, schema=["x1", "x2"])

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            ingest_populations(tmp_path / "absent.csv", tmp_path / "absent.csv")


class TestBundledExamples:
    def test_example1_reproduces_documented_numbers(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        artifacts = run_analysis(bundled("example1.cfg"))
        report = artifacts.importance
        assert report.yx_terms[(1,)] == pytest.approx(-2.0, abs=1e-9)
        assert report.x_terms[1] == pytest.approx(2.0, abs=1e-9)
        assert report.telescoping_residual <= 1e-9
        assert artifacts.diagnostics.misattribution[(1,)] == pytest.approx(
            -2.0, abs=1e-9
        )

    def test_example2_reproduces_documented_delta(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        artifacts = run_analysis(bundled("example2_ale.cfg"))
        assert artifacts.importance is None
        assert artifacts.diagnostics.misattribution[(1,)] == pytest.approx(
            0.5, abs=1e-8
        )

    def test_examples_command_lists_bundled_configs(self, capsys):
        assert main(["examples"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "example1.cfg" in out
        assert "example2_ale.cfg" in out


MINIMAL_CONFIG = """\
backend = "fanova_generalized"
output_dir = "{out}"

[populations.h]
kind = "product"
[[populations.h.axes]]
kind = "uniform"
points = [-1.0, 1.0]
[[populations.h.axes]]
kind = "uniform"
points = [-1.0, 1.0]

[populations.k]
kind = "product"
[[populations.k.axes]]
kind = "explicit"
points = [-1.0, 1.0]
masses = [0.25, 0.75]
[[populations.k.axes]]
kind = "uniform"
points = [-1.0, 1.0]

[models]
f = "x1 + x2"
"""


class TestRunAnalysis:
    def test_minimal_run_writes_canonical_json(self, tmp_path):
        config = write(
            tmp_path / "run.cfg", MINIMAL_CONFIG.format(out=tmp_path / "out")
        )
        artifacts = run_analysis(config)
        report_path = tmp_path / "out" / "importance.json"
        assert report_path in artifacts.files
        data = json.loads(report_path.read_text())
        assert set(data) == {
            "backend",
            "ordering",
            "yx_terms",
            "x_terms",
            "swap_order",
            "total",
            "telescoping_residual",
        }
        # round trip is bit-exact
        assert data["yx_terms"]["{1}"] == artifacts.importance.yx_terms[(1,)]
        assert data["total"] == artifacts.importance.total

    def test_byte_identical_reruns(self, tmp_path):
        config = write(
            tmp_path / "run.cfg", MINIMAL_CONFIG.format(out=tmp_path / "out")
        )
        run_analysis(config)
        first = (tmp_path / "out" / "importance.json").read_bytes()
        run_analysis(config)
        second = (tmp_path / "out" / "importance.json").read_bytes()
        assert first == second

    def test_empty_diagnostics_block_absent(self, tmp_path):
        config = write(
            tmp_path / "run.cfg", MINIMAL_CONFIG.format(out=tmp_path / "out")
        )
        artifacts = run_analysis(config)
        assert artifacts.diagnostics is None
        assert not (tmp_path / "out" / "diagnostics.json").exists()

    def test_csv_population_round_trip(self, tmp_path):
        write(tmp_path / "h.csv", FULL_FACTORIAL_CSV)
        write(tmp_path / "k.csv", FULL_FACTORIAL_CSV)
        config = write(
            tmp_path / "run.cfg",
            f"""\
            backend = "fanova_recursive"
            output_dir = "{tmp_path / 'out'}"

            [populations.h]
            kind = "csv"
            path = "h.csv"

            [populations.k]
            kind = "csv"
            path = "k.csv"

            [models]
            f = "x1*x2"
            """,
        )
        artifacts = run_analysis(config)
        assert artifacts.importance.total == pytest.approx(0.0, abs=1e-12)

    def test_unknown_backend_is_config_error(self, tmp_path):
        config = write(
            tmp_path / "run.cfg",
            MINIMAL_CONFIG.format(out=tmp_path / "out").replace(
                "fanova_generalized", "partial_dependence"
            ),
        )
        with pytest.raises(ConfigError, match="unknown backend"):
            run_analysis(config)
        assert main(["run", str(config)]) == EXIT_CONFIG_ERROR

    def test_numerical_failure_exit_code(self, tmp_path):
        # zero-mass point makes the generalized backend reject the population
        config = write(
            tmp_path / "run.cfg",
            f"""\
            backend = "fanova_generalized"
            output_dir = "{tmp_path / 'out'}"

            [populations.h]
            kind = "pmf"
            grid = [[0.0, 1.0], [0.0, 1.0]]
            weights = [0.0, 0.5, 0.25, 0.25]

            [populations.k]
            kind = "pmf"
            grid = [[0.0, 1.0], [0.0, 1.0]]
            weights = [0.25, 0.25, 0.25, 0.25]

            [models]
            f = "x1 + x2"
            """,
        )
        assert main(["run", str(config)]) == EXIT_NUMERICAL_ERROR

    def test_missing_config_file(self, tmp_path):
        assert main(["run", str(tmp_path / "none.cfg")]) == EXIT_CONFIG_ERROR

    def test_check_command_validates_only(self, tmp_path):
        config = write(
            tmp_path / "run.cfg", MINIMAL_CONFIG.format(out=tmp_path / "out")
        )
        assert main(["check", str(config)]) == EXIT_OK
        assert not (tmp_path / "out").exists()

    def test_distinct_models_block_misattribution_diagnostics(self, tmp_path):
        text = MINIMAL_CONFIG.format(out=tmp_path / "out").replace(
            'f = "x1 + x2"', 'f_h = "x1 + x2"\nf_k = "x1 - x2"'
        )
        text += "\n[diagnostics]\nmisattribution = true\n"
        config = write(tmp_path / "run.cfg", text)
        with pytest.raises(ConfigError, match="shared model"):
            run_analysis(config)

    def test_witness_and_probe_sections(self, tmp_path):
        text = MINIMAL_CONFIG.format(out=tmp_path / "out")
        text += textwrap.dedent(
            """
            [diagnostics]
            witness = { trials = 10, seed = 3 }
            jacobian_probe = { subset = [1], step = 1e-5, backend = "fanova_uniform" }
            """
        )
        config = write(tmp_path / "run.cfg", text)
        artifacts = run_analysis(config)
        assert artifacts.diagnostics.witness.delta_abs > 1e-6
        assert artifacts.diagnostics.probes[0].verdict == "rank_one_ones"
        data = json.loads((tmp_path / "out" / "diagnostics.json").read_text())
        assert "witness" in data and "jacobian_probes" in data

    def test_affine_gap_section(self, tmp_path):
        text = MINIMAL_CONFIG.format(out=tmp_path / "out")
        text += textwrap.dedent(
            """
            [diagnostics]
            affine_gap = { coefficients = [1.0, 1.0], basis = ["x1", "x1"] }
            """
        )
        config = write(tmp_path / "run.cfg", text)
        artifacts = run_analysis(config)
        # axis-1 means: H is 0, K is 0.5, so the first gap is -0.5
        assert artifacts.diagnostics.affine_gap.gaps[0] == pytest.approx(
            -0.5, abs=1e-10
        )
        assert artifacts.diagnostics.affine_gap.max_discrepancy <= 1e-9
        data = json.loads((tmp_path / "out" / "diagnostics.json").read_text())
        assert "affine_gap" in data


class TestEmitReport:
    def test_formats(self, tmp_path):
        config = write(
            tmp_path / "run.cfg", MINIMAL_CONFIG.format(out=tmp_path / "out")
        )
        artifacts = run_analysis(config)
        report = artifacts.importance
        csv_path = emit_report(report, "csv", tmp_path / "r.csv")
        text_path = emit_report(report, "text", tmp_path / "r.txt")
        csv_text = csv_path.read_text()
        assert csv_text.splitlines()[0] == "section,key,value"
        assert "yx" in csv_text and "total" in csv_text
        rendered = text_path.read_text()
        assert "conditional-outcome terms" in rendered
        assert "covariate-distribution swap terms" in rendered

    def test_unknown_format_rejected(self, tmp_path):
        config = write(
            tmp_path / "run.cfg", MINIMAL_CONFIG.format(out=tmp_path / "out")
        )
        artifacts = run_analysis(config)
        with pytest.raises(ConfigError, match="format"):
            emit_report(artifacts.importance, "yaml", tmp_path / "r.yaml")

    def test_json_round_trip_is_exact(self, tmp_path):
        config = write(
            tmp_path / "run.cfg", MINIMAL_CONFIG.format(out=tmp_path / "out")
        )
        artifacts = run_analysis(config)
        path = emit_report(artifacts.importance, "json", tmp_path / "r.json")
        data = json.loads(path.read_text())
        for subset, value in artifacts.importance.yx_terms.items():
            key = "{" + ",".join(map(str, subset)) + "}"
            assert data["yx_terms"][key] == value
        for j, value in artifacts.importance.x_terms.items():
            assert data["x_terms"][str(j)] == value
        assert data["telescoping_residual"] == artifacts.importance.telescoping_residual
