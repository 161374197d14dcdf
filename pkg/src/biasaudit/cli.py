"""Command-line surface: validate, score, classify, simulate.

Every run is driven by a resolved configuration (flags override a flat
``key = value`` config file, which overrides defaults) and a master
seed; reports embed a fingerprint of the resolved configuration and
rerunning any command with the same configuration produces
byte-identical file bodies.

Exit codes: 0 success (possibly with partial failures listed), 2 for
usage or schema errors, 3 for total computational failure.
"""

import csv
import hashlib
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import click

from .advi import FitConfig, FULL_RANK, MEAN_FIELD
from .errors import BiasAuditError, EmptyTableError, SchemaError
from .forest import RFConfig, name_that_dataset
from .models import CausalModelSpec, ConfoundedModelSpec
from .scoring import (FailedScore, ScoringConfig, aggregate_by_dataset,
                      score_all)
from .synth import GenSpec, MultiDatasetSpec, gen_mixed, gen_multidataset, write_table_csv
from .tabular import CauseSpec, SchemaConfig, load_csv, summarize

log = logging.getLogger("biasaudit")

EXIT_USAGE = 2
EXIT_FAILURE = 3

_SCHEMA_KEYS = ("id_column", "dataset_column", "age_column", "sex_column",
                "diagnosis_column", "healthy_label")


def read_config_file(path) -> dict[str, str]:
    """Parse a flat ``key = value`` config file; '#' starts a comment."""
    values = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SchemaError(f"{path}:{line_no}: expected 'key = value'")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def resolve(ctx: click.Context, file_values: dict, key: str, cast=str, default=None):
    """Flag if explicitly given, else config-file value, else default."""
    flag_value = ctx.params.get(key)
    source = ctx.get_parameter_source(key)
    explicit = source in (click.core.ParameterSource.COMMANDLINE,
                          click.core.ParameterSource.ENVIRONMENT)
    if explicit and flag_value is not None:
        return flag_value
    if key in file_values:
        raw = file_values[key]
        return _parse_bool(raw) if cast is bool else cast(raw)
    if flag_value is not None:
        return flag_value
    return default


def schema_from_config(file_values: dict) -> SchemaConfig:
    kwargs = {k: file_values[k] for k in _SCHEMA_KEYS if k in file_values}
    if "feature_prefixes" in file_values:
        kwargs["feature_prefixes"] = tuple(
            p.strip() for p in file_values["feature_prefixes"].split(",") if p.strip())
    return SchemaConfig(**kwargs)


def fingerprint(resolved: dict) -> str:
    canon = json.dumps(resolved, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else str(v)
                             for v in row])


@click.group()
def main():
    """Quantify confounding bias and detect dataset bias in tabular data."""
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--input", "input_path", type=click.Path(), help="CSV file to validate.")
@click.option("--config", "config_path", type=click.Path(), help="Flat key=value config file.")
def validate(input_path, config_path):
    """Ingest a CSV file and print a per-dataset summary."""
    ctx = click.get_current_context()
    file_values = read_config_file(config_path) if config_path else {}
    input_path = resolve(ctx, file_values, "input_path", default=file_values.get("input"))
    if input_path is None:
        click.echo("error: no input file given", err=True)
        sys.exit(EXIT_USAGE)
    try:
        table, report = load_csv(input_path, schema_from_config(file_values))
    except (SchemaError, EmptyTableError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    click.echo(f"{'dataset':<16}{'N':>6}{'age_mean':>10}{'age_sd':>8}"
               f"{'males_%':>9}{'diseased':>10}")
    for row in summarize(table):
        click.echo(f"{row.dataset:<16}{row.n:>6}{row.age_mean:>10.1f}"
                   f"{row.age_sd:>8.1f}{row.pct_male:>9.1f}{row.n_diseased:>10}")
    click.echo(f"valid rows: {table.n_rows}, rejected rows: {report.n_rejected}")
    for reason in report.reasons:
        click.echo(f"  rejected {reason}", err=True)


def _float_key(file_values, key, default):
    return float(file_values.get(key, default))


def _int_key(file_values, key, default):
    return int(file_values.get(key, default))


@main.command()
@click.option("--input", "input_path", type=click.Path(), help="CSV file to score.")
@click.option("--config", "config_path", type=click.Path(), help="Flat key=value config file.")
@click.option("--out", "out_dir", type=click.Path(), help="Output directory.")
@click.option("--seed", type=int, default=None, help="Master seed.")
@click.option("--jobs", type=int, default=None, help="Parallel workers.")
@click.option("--controls-only/--with-disease", "controls_only", default=None,
              help="Restrict scoring to healthy rows (default) or keep all.")
@click.option("--k", type=int, default=None, help="Latent confounder dimension.")
@click.option("--family", type=click.Choice(["mean-field", "full-rank"]), default=None,
              help="Variational family for the causal model fit.")
@click.option("--method", type=click.Choice(["advi", "closed-form"]), default=None,
              help="Causal-model estimator.")
@click.option("--causes", type=str, default=None,
              help="Cause terms, e.g. 'age,age:square,sex'.")
@click.option("--targets", type=str, default=None,
              help="Comma-separated target columns (default: all features not used as causes).")
def score(input_path, config_path, out_dir, seed, jobs, controls_only, k,
          family, method, causes, targets):
    """Score every (dataset, target) pair and write the reports."""
    ctx = click.get_current_context()
    file_values = read_config_file(config_path) if config_path else {}
    input_path = resolve(ctx, file_values, "input_path", default=file_values.get("input"))
    out_dir = resolve(ctx, file_values, "out_dir", default=file_values.get("out", "."))
    seed = resolve(ctx, file_values, "seed", cast=int, default=0)
    jobs = resolve(ctx, file_values, "jobs", cast=int, default=1)
    controls_only = resolve(ctx, file_values, "controls_only", cast=bool, default=True)
    k = resolve(ctx, file_values, "k", cast=int, default=1)
    family = resolve(ctx, file_values, "family", default="full-rank")
    method = resolve(ctx, file_values, "method", default="advi")
    causes = resolve(ctx, file_values, "causes", default="age,age:square,sex")
    targets = resolve(ctx, file_values, "targets", default=None)
    if input_path is None:
        click.echo("error: no input file given", err=True)
        sys.exit(EXIT_USAGE)

    try:
        table, _ = load_csv(input_path, schema_from_config(file_values))
        cause_spec = CauseSpec.parse(causes)
    except (SchemaError, EmptyTableError, OSError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)

    cause_columns = {t.column for t in cause_spec.terms}
    if targets:
        target_list = tuple(t.strip() for t in targets.split(",") if t.strip())
    else:
        target_list = tuple(c for c in table.feature_names if c not in cause_columns)
    if not target_list:
        click.echo("error: no target columns", err=True)
        sys.exit(EXIT_USAGE)

    fit_config = FitConfig(
        mc_samples_per_step=_int_key(file_values, "mc_samples", 8),
        learning_rate=_float_key(file_values, "learning_rate", 0.01),
        max_iterations=_int_key(file_values, "max_iterations", 20_000),
        convergence_window=_int_key(file_values, "convergence_window", 200),
        relative_tolerance=_float_key(file_values, "relative_tolerance", 1e-4),
        final_elbo_samples=_int_key(file_values, "final_elbo_samples", 2_000),
    )
    config = ScoringConfig(
        cause_spec=cause_spec,
        targets=target_list,
        causal_model=CausalModelSpec(
            sigma_x=_float_key(file_values, "sigma_x", 1.0),
            sigma_w=_float_key(file_values, "sigma_w", 1.0),
            sigma_y=_float_key(file_values, "sigma_y", 1.0)),
        confounded_model=ConfoundedModelSpec(
            k=k,
            sigma_z=_float_key(file_values, "sigma_z", 1.0),
            sigma_w=_float_key(file_values, "sigma_w", 1.0),
            sigma_obs=_float_key(file_values, "sigma_obs", 1.0)),
        fit_config=fit_config,
        master_seed=seed,
        controls_only=controls_only,
        causal_method=method.replace("-", "_"),
        causal_family=FULL_RANK if family == "full-rank" else MEAN_FIELD,
        jobs=jobs,
    )

    resolved = {
        "command": "score", "input": str(input_path), "out": str(out_dir),
        "seed": seed, "jobs": jobs, "controls_only": controls_only,
        "k": k, "family": family, "method": method, "causes": causes,
        "targets": ",".join(target_list),
        "fit": asdict(fit_config) | {"seed": "per-record"},
        "sigma": {"x": config.causal_model.sigma_x,
                  "w": config.causal_model.sigma_w,
                  "y": config.causal_model.sigma_y,
                  "z": config.confounded_model.sigma_z,
                  "obs": config.confounded_model.sigma_obs},
    }
    fp = fingerprint(resolved)

    records = score_all(table, config)
    ok = [r for r in records if not isinstance(r, FailedScore)]
    failed = [r for r in records if isinstance(r, FailedScore)]
    if not ok:
        click.echo("error: every (dataset, target) fit failed", err=True)
        sys.exit(EXIT_FAILURE)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "fingerprint": fp,
        "config": resolved,
        "records": [
            {"dataset": r.dataset, "target": r.target, "n": r.n,
             "L_ca": r.causal_nats, "L_co": r.confounded_nats,
             "delta": r.delta, "delta_per_sample": r.delta_per_sample,
             "diagnostics": r.diagnostics}
            for r in ok
        ],
        "failures": [
            {"dataset": r.dataset, "target": r.target, "error": r.error}
            for r in failed
        ],
    }
    (out / "scores.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    _write_csv(out / "scores.csv",
               ["dataset", "target", "n", "L_ca", "L_co", "delta",
                "delta_per_sample", "converged"],
               [[r.dataset, r.target, r.n, r.causal_nats, r.confounded_nats,
                 r.delta, r.delta_per_sample,
                 r.diagnostics["causal"]["converged"]
                 and r.diagnostics["confounded"]["converged"]]
                for r in ok])
    _write_csv(out / "aggregate.csv",
               ["dataset", "mean_delta", "sd_delta", "n_targets"],
               [[a.dataset, a.mean_delta, a.sd_delta, a.n_targets]
                for a in aggregate_by_dataset(records)])

    click.echo(f"scored {len(ok)} pairs ({len(failed)} failures) -> {out}")
    if failed:
        for f in failed:
            click.echo(f"  failed ({f.dataset}, {f.target}): {f.error}", err=True)


@main.command()
@click.option("--input", "input_path", type=click.Path(), help="CSV file to classify.")
@click.option("--config", "config_path", type=click.Path(), help="Flat key=value config file.")
@click.option("--out", "out_dir", type=click.Path(), help="Output directory.")
@click.option("--seed", type=int, default=None, help="Master seed.")
@click.option("--jobs", type=int, default=None, help="Parallel workers.")
@click.option("--controls-only/--with-disease", "controls_only", default=None)
@click.option("--repetitions", type=int, default=None, help="Repetitions per fraction.")
@click.option("--trees", type=int, default=None, help="Trees per forest.")
def classify(input_path, config_path, out_dir, seed, jobs, controls_only,
             repetitions, trees):
    """Run the dataset-membership experiment and write curve/confusion reports."""
    ctx = click.get_current_context()
    file_values = read_config_file(config_path) if config_path else {}
    input_path = resolve(ctx, file_values, "input_path", default=file_values.get("input"))
    out_dir = resolve(ctx, file_values, "out_dir", default=file_values.get("out", "."))
    seed = resolve(ctx, file_values, "seed", cast=int, default=0)
    jobs = resolve(ctx, file_values, "jobs", cast=int, default=1)
    controls_only = resolve(ctx, file_values, "controls_only", cast=bool, default=True)
    repetitions = resolve(ctx, file_values, "repetitions", cast=int, default=50)
    trees = resolve(ctx, file_values, "trees", cast=int, default=100)
    if input_path is None:
        click.echo("error: no input file given", err=True)
        sys.exit(EXIT_USAGE)

    try:
        table, _ = load_csv(input_path, schema_from_config(file_values))
    except (SchemaError, EmptyTableError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)

    if "fractions" in file_values:
        fractions = tuple(float(f) for f in file_values["fractions"].split(","))
    else:
        fractions = (0.001, 0.005, 0.01, 0.05, 0.1, 0.3, 0.5, 0.7)

    feature_sets = _default_feature_sets(table.feature_names)
    if not feature_sets:
        click.echo("error: no feature columns to classify with", err=True)
        sys.exit(EXIT_USAGE)
    rf_config = RFConfig(n_trees=trees)
    try:
        results = name_that_dataset(
            table, feature_sets, fractions=fractions, repetitions=repetitions,
            seed=seed, rf_config=rf_config,
            controls_only=controls_only, jobs=jobs)
    except (BiasAuditError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)

    resolved = {
        "command": "classify", "input": str(input_path), "out": str(out_dir),
        "seed": seed, "jobs": jobs, "controls_only": controls_only,
        "repetitions": repetitions, "fractions": list(fractions),
        "forest": rf_config.fingerprint(),
        "feature_sets": {name: list(cols) for name, cols in feature_sets.items()},
    }
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "classify.json").write_text(
        json.dumps({"fingerprint": fingerprint(resolved), "config": resolved},
                   indent=2, sort_keys=True) + "\n", encoding="utf-8")
    curve_rows = []
    for fs_name in feature_sets:
        for p in results[fs_name].curve.points:
            curve_rows.append([fs_name, p.train_fraction, p.mean_accuracy,
                               p.sd_accuracy, p.repetitions])
    _write_csv(out / "curve.csv",
               ["feature_set", "fraction", "mean_acc", "sd_acc", "repetitions"],
               curve_rows)

    # the confusion report covers the last (most feature-rich) set
    last = list(feature_sets)[-1]
    confusion = results[last].confusion
    conf_rows = []
    for i, true_label in enumerate(confusion.class_labels):
        for j, pred_label in enumerate(confusion.class_labels):
            conf_rows.append([true_label, pred_label, int(confusion.counts[i, j])])
    _write_csv(out / "confusion.csv",
               ["true_dataset", "predicted_dataset", "count"], conf_rows)
    click.echo(f"classified over {len(feature_sets)} feature sets -> {out}")


def _default_feature_sets(feature_names) -> dict[str, list[str]]:
    """The standard feature subsets: demographics, per-prefix, combined."""
    volume = [c for c in feature_names if c.startswith("vol_")]
    thickness = [c for c in feature_names if c.startswith("thick_")]
    sets: dict[str, list[str]] = {"age_sex": ["age", "sex"]}
    if volume:
        sets["volume"] = volume
    if thickness:
        sets["thickness"] = thickness
    if volume and thickness:
        sets["volume_thickness"] = volume + thickness
    return sets


@main.command()
@click.option("--out", "out_dir", type=click.Path(), default=".", help="Output directory.")
@click.option("--name", type=str, default="synthetic", help="Base name for the files.")
@click.option("--kind", type=click.Choice(["mixed", "multidataset"]), default="mixed")
@click.option("--alpha", type=float, default=1.0,
              help="Causal mixing weight (1 = pure causal, 0 = pure confounded).")
@click.option("--n", type=int, default=500, help="Rows (per dataset for multidataset).")
@click.option("--m", type=int, default=3, help="Cause columns (mixed kind).")
@click.option("--k", type=int, default=1, help="Latent confounder dimension.")
@click.option("--noise-sd", type=float, default=0.5, help="Target noise SD (mixed kind).")
@click.option("--n-datasets", type=int, default=2, help="Datasets (multidataset kind).")
@click.option("--shift", type=float, default=0.0,
              help="Feature mean shift step between consecutive datasets.")
@click.option("--seed", type=int, default=0, help="Generator seed.")
def simulate(out_dir, name, kind, alpha, n, m, k, noise_sd, n_datasets, shift, seed):
    """Generate a synthetic dataset plus a ground-truth sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{name}.csv"
    sidecar_path = out / f"{name}.truth.json"
    try:
        if kind == "mixed":
            spec = GenSpec(n=n, m=m, k=k, alpha=alpha, noise_sd=noise_sd,
                           seed=seed, dataset=name)
            table, truth = gen_mixed(spec)
            sidecar = {
                "kind": "mixed",
                "alpha": truth.alpha,
                "n": n, "m": m, "k": k,
                "noise_sd": truth.noise_sd,
                "seed": truth.seed,
                "weights": truth.weights.tolist(),
                "cause_loadings": truth.cause_loadings.tolist(),
                "latent_loadings": truth.latent_loadings.tolist(),
                "latents": truth.latents.tolist(),
                "noise": truth.noise.tolist(),
                "cause_columns": [f"vol_x{j + 1}" for j in range(m)],
                "target_column": "vol_y",
            }
        else:
            shifts = tuple(shift * d for d in range(n_datasets))
            spec = MultiDatasetSpec(n_per_dataset=n, shifts=shifts, seed=seed)
            table = gen_multidataset(spec)
            sidecar = {
                "kind": "multidataset",
                "n_per_dataset": n,
                "shifts": list(shifts),
                "scales": list(spec.scales),
                "feature_names": list(spec.feature_names),
                "seed": seed,
            }
    except ValueError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    write_table_csv(table, csv_path)
    sidecar_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n",
                            encoding="utf-8")
    click.echo(f"wrote {csv_path} and {sidecar_path}")


if __name__ == "__main__":
    main()
