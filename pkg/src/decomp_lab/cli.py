"""Batch front end: run configured decompositions and emit reports.

A single TOML config file fully describes a run: two populations (inline
distributions, quadrature specs, or CSV paths), the conditional-outcome
models, the decomposition backend, and which analyses and diagnostics to
perform.  Reports are written as canonical JSON (always), plus CSV and
text renderings on request.

Commands::

    decomp-lab run <config>      execute a run, write reports
    decomp-lab check <config>    validate the config and inputs only
    decomp-lab examples          list the bundled example configs

Exit codes: 0 success, 2 config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .diagnostics import (
    DiagnosticsReport,
    affine_class_gap,
    directional_jacobian_probe,
    expected_zero_check,
    misattribution_delta,
    witness_search,
)
from .fanova import ConstraintReport, verify_fanova_constraints
from .functions import (
    FunctionModel,
    LinearModel,
    fit_linear,
    parse_expression,
    tabulated_model,
)
from .measures import (
    DiscreteJoint,
    Grid,
    Marginal1D,
    align_supports,
    empirical_joint,
    gauss_hermite_marginal,
    make_joint_pmf,
    make_product_distribution,
)
from .population_decomp import (
    BACKENDS,
    ImportanceReport,
    decompose,
    importance_decompose,
)

__all__ = [
    "ConfigError",
    "ingest_populations",
    "run_analysis",
    "emit_report",
    "main",
    "EXIT_OK",
    "EXIT_CONFIG_ERROR",
    "EXIT_NUMERICAL_ERROR",
]

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_NUMERICAL_ERROR = 3


class ConfigError(ValueError):
    """The run configuration or its referenced inputs are invalid."""


# ---------------------------------------------------------------------------
# CSV ingestion


def _read_samples(path: Path, columns: list[str] | None):
    """Read one CSV population; returns (X, y or None, used column names)."""
    if not path.is_file():
        raise ConfigError(f"population file not found: {path}")
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames
        if not header:
            raise ConfigError(f"{path}: missing header row")
        if columns is None:
            columns = sorted(
                (c for c in header if c.startswith("x") and c[1:].isdigit()),
                key=lambda c: int(c[1:]),
            )
            if not columns:
                raise ConfigError(f"{path}: no covariate columns x1..xd in header")
        missing = [c for c in columns if c not in header]
        if missing:
            raise ConfigError(f"{path}: missing columns {missing}")
        has_y = "y" in header
        rows, ys = [], []
        for number, record in enumerate(reader, start=2):
            try:
                rows.append([float(record[c]) for c in columns])
                if has_y:
                    ys.append(float(record["y"]))
            except (TypeError, ValueError):
                raise ConfigError(
                    f"{path}: non-numeric cell in row {number}"
                ) from None
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    x = np.asarray(rows, dtype=float)
    y = np.asarray(ys, dtype=float) if has_y else None
    return x, y, columns


def ingest_populations(path_h, path_k, schema: list[str] | None = None):
    """Read the two population CSVs; returns the two sample matrices.

    Columns default to the ``x1..xd`` found in each header (``schema``
    overrides).  Rows with non-numeric cells are rejected with their row
    number.
    """
    x_h, _, cols = _read_samples(Path(path_h), schema)
    x_k, _, _ = _read_samples(Path(path_k), list(cols))
    if x_h.shape[1] != x_k.shape[1]:
        raise ConfigError("the two populations have different covariate counts")
    return x_h, x_k


# ---------------------------------------------------------------------------
# Config -> objects


def _build_marginal(spec: dict, where: str) -> Marginal1D:
    kind = spec.get("kind")
    try:
        if kind == "uniform":
            points = np.asarray(spec["points"], dtype=float)
            return Marginal1D(points, np.full(points.size, 1.0 / points.size))
        if kind == "explicit":
            return Marginal1D(spec["points"], spec["masses"])
        if kind == "gauss_hermite":
            return gauss_hermite_marginal(
                float(spec["mean"]), float(spec["sd"]), int(spec.get("nodes", 21))
            )
    except KeyError as exc:
        raise ConfigError(f"{where}: missing key {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    raise ConfigError(f"{where}: unknown axis kind {kind!r}")


def _build_population(spec: dict, base: Path, where: str):
    """Returns (DiscreteJoint, samples or None, y or None)."""
    kind = spec.get("kind")
    try:
        if kind == "product":
            axes = spec.get("axes")
            if not axes:
                raise ConfigError(f"{where}: product population needs axes")
            marginals = [
                _build_marginal(ax, f"{where}.axes[{i}]") for i, ax in enumerate(axes)
            ]
            return make_product_distribution(marginals), None, None
        if kind == "pmf":
            grid = Grid(tuple(np.asarray(a, dtype=float) for a in spec["grid"]))
            return make_joint_pmf(grid, np.asarray(spec["weights"], dtype=float)), None, None
        if kind == "csv":
            path = base / spec["path"]
            x, y, _ = _read_samples(path, spec.get("columns"))
            return empirical_joint(x), x, y
    except ConfigError:
        raise
    except KeyError as exc:
        raise ConfigError(f"{where}: missing key {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    raise ConfigError(f"{where}: unknown population kind {kind!r}")


def _build_model(spec, d: int, grid: Grid, samples, where: str) -> FunctionModel:
    try:
        if isinstance(spec, str):
            return parse_expression(spec, d)
        if isinstance(spec, dict):
            kind = spec.get("kind")
            if kind == "expression":
                return parse_expression(spec["text"], d)
            if kind == "linear":
                return LinearModel(
                    float(spec.get("intercept", 0.0)),
                    tuple(float(c) for c in spec["coefficients"]),
                )
            if kind == "tabulated":
                return tabulated_model(grid, np.asarray(spec["values"], dtype=float))
            if kind == "fit":
                population = spec.get("population")
                if population not in samples:
                    raise ConfigError(
                        f"{where}: fit requires population 'h' or 'k', got {population!r}"
                    )
                x, y = samples[population]
                if x is None or y is None:
                    raise ConfigError(
                        f"{where}: population {population!r} has no CSV sample with a y column"
                    )
                return fit_linear(x, y)
            raise ConfigError(f"{where}: unknown model kind {kind!r}")
    except ConfigError:
        raise
    except KeyError as exc:
        raise ConfigError(f"{where}: missing key {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    raise ConfigError(f"{where}: model must be an expression string or a table")


@dataclass
class _Run:
    config: dict
    base: Path
    h: DiscreteJoint
    k: DiscreteJoint
    f_h: FunctionModel
    f_k: FunctionModel
    shared_model: bool
    backend: str
    max_order: int | None
    seed: int
    notes: list[str]


def _prepare(config_path) -> _Run:
    path = Path(config_path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as handle:
            config = tomllib.load(handle)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from None
    base = path.parent

    populations = config.get("populations")
    if not isinstance(populations, dict) or set(populations) != {"h", "k"}:
        raise ConfigError("config needs [populations.h] and [populations.k]")
    h, x_h, y_h = _build_population(populations["h"], base, "populations.h")
    k, x_k, y_k = _build_population(populations["k"], base, "populations.k")
    notes = []
    if h.grid != k.grid:
        try:
            h, k = align_supports(h, k)
        except ValueError as exc:
            raise ConfigError(f"populations cannot share a grid: {exc}") from None
        notes.append("populations aligned on the union of their supports")
    d = h.dims

    models = config.get("models")
    if not isinstance(models, dict):
        raise ConfigError("config needs a [models] section")
    samples = {"h": (x_h, y_h), "k": (x_k, y_k)}
    if "f" in models:
        f_h = f_k = _build_model(models["f"], d, h.grid, samples, "models.f")
        shared = True
    else:
        if "f_h" not in models or "f_k" not in models:
            raise ConfigError("models must declare either f, or both f_h and f_k")
        f_h = _build_model(models["f_h"], d, h.grid, samples, "models.f_h")
        f_k = _build_model(models["f_k"], d, k.grid, samples, "models.f_k")
        shared = False
    for name, model in (("f_h", f_h), ("f_k", f_k)):
        if model.arity != d:
            raise ConfigError(
                f"models.{name} has arity {model.arity} but the populations have {d} covariates"
            )

    backend = config.get("backend", "fanova_generalized")
    if backend not in BACKENDS:
        known = ", ".join(sorted(BACKENDS))
        raise ConfigError(f"unknown backend {backend!r}; available: {known}")
    max_order = config.get("max_order")
    if max_order is not None:
        max_order = int(max_order)
        if not 0 <= max_order <= d:
            raise ConfigError(f"max_order must be in 0..{d}")
    seed = int(config.get("seed", 0))
    return _Run(config, base, h, k, f_h, f_k, shared, backend, max_order, seed, notes)


# ---------------------------------------------------------------------------
# Reports


def _report_dict(report) -> dict:
    if isinstance(report, dict):
        return {name: _report_dict(r) for name, r in report.items()}
    return report.to_dict()


def emit_report(report, format: str, path) -> Path:
    """Write one report (importance, diagnostics, or constraints) to a file.

    JSON is the canonical schema with stable keys and full-precision
    numbers; CSV flattens the term tables; text renders a two-block
    swap-terms table for importance reports.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if format == "json":
        text = json.dumps(_report_dict(report), indent=2) + "\n"
    elif format == "csv":
        text = _render_csv(report)
    elif format == "text":
        text = _render_text(report)
    else:
        raise ConfigError(f"unknown report format {format!r}")
    try:
        path.write_text(text)
    except OSError as exc:
        raise ConfigError(f"cannot write report {path}: {exc}") from None
    return path


def _render_csv(report) -> str:
    import io

    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(["section", "key", "value"])
    for section, key, value in _flatten(report):
        writer.writerow([section, key, repr(value) if isinstance(value, float) else value])
    return out.getvalue()


def _flatten(report):
    if isinstance(report, ImportanceReport):
        for s, v in report.yx_terms.items():
            yield "yx", "{" + ",".join(map(str, s)) + "}", v
        for j, v in report.x_terms.items():
            yield "x", str(j), v
        yield "total", "", report.total
        yield "telescoping_residual", "", report.telescoping_residual
        return
    data = _report_dict(report)

    def walk(prefix, node):
        if isinstance(node, dict):
            for key, value in node.items():
                yield from walk(f"{prefix}.{key}" if prefix else key, value)
        elif isinstance(node, list):
            for i, value in enumerate(node):
                yield from walk(f"{prefix}[{i}]", value)
        else:
            yield prefix, node

    for key, value in walk("", data):
        section, _, rest = key.partition(".")
        yield section, rest, value


def _render_text(report) -> str:
    if isinstance(report, ImportanceReport):
        lines = [
            f"importance decomposition (backend: {report.backend})",
            "=" * 58,
            "conditional-outcome terms (covariates fixed at population H)",
        ]
        for s in report.ordering:
            label = "{" + ",".join(map(str, s)) + "}"
            lines.append(f"  {label:<12} {report.yx_terms[s]: .12g}")
        lines.append("covariate-distribution swap terms")
        for j in report.swap_order:
            lines.append(f"  x{j:<11} {report.x_terms[j]: .12g}")
        lines.append("-" * 58)
        lines.append(f"  {'total gap':<12} {report.total: .12g}")
        lines.append(
            f"  {'residual':<12} {report.telescoping_residual: .3e}"
        )
        return "\n".join(lines) + "\n"
    lines = []

    def walk(prefix, node):
        if isinstance(node, dict):
            for key, value in node.items():
                walk(f"{prefix}{key}.", value)
        elif isinstance(node, list):
            for i, value in enumerate(node):
                walk(f"{prefix}{i}.", value)
        else:
            lines.append(f"{prefix.rstrip('.')} = {node}")

    walk("", _report_dict(report))
    return "\n".join(lines) + "\n"


@dataclass
class RunArtifacts:
    """Everything a run produced, plus where it was written."""

    importance: ImportanceReport | None
    constraints: dict[str, ConstraintReport]
    diagnostics: DiagnosticsReport | None
    files: list[Path]
    notes: list[str]


def run_analysis(config_path) -> RunArtifacts:
    """Execute a full configured run and write its reports.

    Raises ConfigError for malformed configs or inputs; numerical errors
    from backends (violated preconditions, evaluation failures) propagate
    as their own exception types.
    """
    run = _prepare(config_path)
    config = run.config
    analysis = config.get("analysis", {})
    diag_cfg = config.get("diagnostics", {})
    out_cfg = config.get("output", {})
    formats = list(out_cfg.get("formats", ["json"]))
    if "json" not in formats:
        formats.insert(0, "json")
    out_dir = Path(config.get("output_dir", "decomp_lab_out"))
    if not out_dir.is_absolute():
        out_dir = Path.cwd() / out_dir

    importance = None
    if analysis.get("importance", True):
        importance = importance_decompose(
            run.f_h,
            run.f_k,
            run.h,
            run.k,
            run.backend,
            ordering=analysis.get("ordering"),
            max_order=run.max_order,
            swap_order=analysis.get("swap_order"),
        )

    constraints: dict[str, ConstraintReport] = {}
    if analysis.get("constraints", True):
        for name, measure, model in (("h", run.h, run.f_h), ("k", run.k, run.f_k)):
            dec = decompose(run.backend, model, measure, run.max_order)
            constraints[name] = verify_fanova_constraints(dec, measure, model)

    diagnostics = None
    sections: dict = {}
    if diag_cfg.get("misattribution") or diag_cfg.get("expected_zero"):
        if not run.shared_model:
            raise ConfigError(
                "misattribution diagnostics require one shared model ([models] f = ...)"
            )
        subsets = diag_cfg.get("subsets")
        if subsets is None:
            probe_dec = decompose(run.backend, run.f_k, run.k, run.max_order)
            subsets = [s for s in probe_dec.subsets if s != ()]
        subsets = [tuple(int(i) for i in s) for s in subsets]
        if diag_cfg.get("misattribution"):
            sections["misattribution"] = {
                s: misattribution_delta(run.backend, run.f_k, run.h, run.k, s, run.max_order)
                for s in subsets
            }
        if diag_cfg.get("expected_zero"):
            sections["expected_zero"] = tuple(
                expected_zero_check(run.f_k, run.h, run.k, s, backend=run.backend)
                for s in subsets
            )
    if "affine_gap" in diag_cfg:
        gap_cfg = diag_cfg["affine_gap"]
        try:
            coefficients = [float(c) for c in gap_cfg["coefficients"]]
            basis = [parse_expression(text, 1) for text in gap_cfg["basis"]]
        except KeyError as exc:
            raise ConfigError(f"diagnostics.affine_gap: missing key {exc}") from None
        sections["affine_gap"] = affine_class_gap(coefficients, basis, run.h, run.k)
    if "jacobian_probe" in diag_cfg:
        probe_cfg = diag_cfg["jacobian_probe"]
        sections["probes"] = (
            directional_jacobian_probe(
                probe_cfg.get("backend", run.backend),
                run.f_k,
                run.k,
                tuple(int(i) for i in probe_cfg.get("subset", [1])),
                step=float(probe_cfg.get("step", 1e-5)),
            ),
        )
    if "witness" in diag_cfg:
        witness_cfg = diag_cfg["witness"]
        sections["witness"] = witness_search(
            run.h,
            run.k,
            backend=witness_cfg.get("backend", run.backend),
            trials=int(witness_cfg.get("trials", 200)),
            seed=int(witness_cfg.get("seed", run.seed)),
        )
    if sections:
        diagnostics = DiagnosticsReport(
            misattribution=sections.get("misattribution"),
            expected_zero=sections.get("expected_zero"),
            affine_gap=sections.get("affine_gap"),
            probes=sections.get("probes"),
            witness=sections.get("witness"),
        )

    files: list[Path] = []
    extension = {"json": "json", "csv": "csv", "text": "txt"}
    if importance is not None:
        for fmt in formats:
            files.append(
                emit_report(importance, fmt, out_dir / f"importance.{extension[fmt]}")
            )
    if constraints:
        files.append(emit_report(constraints, "json", out_dir / "constraints.json"))
    if diagnostics is not None and not diagnostics.is_empty:
        files.append(emit_report(diagnostics, "json", out_dir / "diagnostics.json"))
        if "text" in formats:
            files.append(emit_report(diagnostics, "text", out_dir / "diagnostics.txt"))

    return RunArtifacts(
        importance=importance,
        constraints=constraints,
        diagnostics=diagnostics,
        files=files,
        notes=run.notes,
    )


# ---------------------------------------------------------------------------
# Entry point


def _bundled_configs():
    root = resources.files("decomp_lab") / "configs"
    return sorted(
        (entry.name, entry) for entry in root.iterdir() if entry.name.endswith(".cfg")
    )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="decomp-lab",
        description="Decompose a two-population mean difference and run misattribution diagnostics.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    run_cmd = commands.add_parser("run", help="execute a run configuration")
    run_cmd.add_argument("config", help="path to a TOML run configuration")
    check_cmd = commands.add_parser("check", help="validate a configuration only")
    check_cmd.add_argument("config", help="path to a TOML run configuration")
    commands.add_parser("examples", help="list bundled example configurations")
    args = parser.parse_args(argv)

    if args.command == "examples":
        for name, entry in _bundled_configs():
            print(f"{name}\t{entry}")
        return EXIT_OK

    try:
        if args.command == "check":
            _prepare(args.config)
            print(f"config OK: {args.config}")
            return EXIT_OK
        artifacts = run_analysis(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL_ERROR

    for note in artifacts.notes:
        print(f"note: {note}")
    if artifacts.importance is not None:
        print(_render_text(artifacts.importance), end="")
    for path in artifacts.files:
        print(f"wrote {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
