"""Command-line pipeline: encode containers into feature matrices, train
and evaluate the forest under the split or cross-validation protocol,
compare model configurations, and run the synthetic benchmark.

Every command is deterministic given its config and seed; outputs land
only in the configured directory, and the resolved configuration is
echoed there for reproducibility.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .descriptors import (
    EncodeError,
    FeatureMatrix,
    encode_dataset,
    read_matrix_csv,
    write_matrix_csv,
    write_sidecar,
)
from .evaluation import (
    ChiSquareResult,
    CvResult,
    EvalReport,
    EvaluationError,
    average_reports,
    chi_square_compare,
    evaluate_scores,
    format_comparison_table,
    format_cv_table,
    format_model_table,
    kfold_splits,
    split_train_val_test,
    write_report_json,
    write_roc_csv,
)
from .fmap import FmapError, read_container_file
from .forest import (
    ForestConfig,
    ForestError,
    rf_predict_proba_batch,
    rf_train,
    write_model,
)
from .gmm import EmConfig
from .pca import PcaError, fit_layer_bases, pca_encode_dataset, write_bases
from .synth import SynthConfig, control_config, run_benchmark

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4

_DATA_ERRORS = (FmapError, EncodeError, PcaError, ForestError, EvaluationError)


class ConfigError(Exception):
    """Bad flags, config file, or missing inputs."""


@dataclass(frozen=True)
class ModelSpec:
    encoder: str
    k: int = 2
    pc: int = 3

    @property
    def name(self) -> str:
        return f"gmm_k{self.k}" if self.encoder == "gmm" else f"pca_pc{self.pc}"


def parse_model_spec(text: str) -> ModelSpec:
    head, _, tail = text.partition(":")
    if head not in ("gmm", "pca"):
        raise ConfigError(f"unknown encoder {head!r} in model spec {text!r}")
    spec = ModelSpec(encoder=head)
    if tail:
        for item in tail.split(","):
            key, _, val = item.partition("=")
            if key == "k" and head == "gmm":
                spec = replace(spec, k=int(val))
            elif key == "pc" and head == "pca":
                spec = replace(spec, pc=int(val))
            else:
                raise ConfigError(f"bad key {key!r} in model spec {text!r}")
    if spec.k < 1 or spec.pc < 1:
        raise ConfigError(f"model spec {text!r} has a non-positive parameter")
    return spec


@dataclass(frozen=True)
class RunConfig:
    networks: tuple[str, ...]
    matrices: tuple[str, ...]
    models: tuple[ModelSpec, ...]
    protocol: str
    folds: int
    seed: int
    out: str
    trees: int
    max_depth: int
    min_leaf: int
    mtry: int | None
    max_iterations: int
    rel_tolerance: float
    variance_floor_scale: float

    def em_config(self, spec: ModelSpec) -> EmConfig:
        return EmConfig(
            k=spec.k,
            max_iterations=self.max_iterations,
            rel_tolerance=self.rel_tolerance,
            variance_floor_scale=self.variance_floor_scale,
            seed=self.seed,
        )

    def forest_config(self) -> ForestConfig:
        return ForestConfig(
            tree_count=self.trees,
            max_depth=self.max_depth,
            min_leaf=self.min_leaf,
            mtry=self.mtry,
            seed=self.seed,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["models"] = [asdict(m) | {"name": m.name} for m in self.models]
        return d


_DEFAULTS = {
    "networks": [],
    "matrices": [],
    "encoder": "gmm",
    "k": 2,
    "pc": 3,
    "models": [],
    "protocol": "split",
    "folds": 5,
    "seed": 0,
    "out": "out",
    "trees": 500,
    "max_depth": 15,
    "min_leaf": 1,
    "mtry": None,
    "max_iterations": 500,
    "rel_tolerance": 1e-8,
    "variance_floor_scale": 1e-9,
}


def _resolve(args: argparse.Namespace) -> RunConfig:
    merged = dict(_DEFAULTS)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise ConfigError(f"config file {path}: {err}") from err
        unknown = set(loaded) - set(_DEFAULTS)
        if unknown:
            raise ConfigError(f"config file {path}: unknown keys {sorted(unknown)}")
        merged.update(loaded)
    for key in _DEFAULTS:
        val = getattr(args, key, None)
        if val is not None and val != []:
            merged[key] = val

    if merged["models"]:
        models = tuple(
            parse_model_spec(m) if isinstance(m, str) else ModelSpec(**m)
            for m in merged["models"]
        )
    elif merged["encoder"] == "gmm":
        models = (ModelSpec("gmm", k=int(merged["k"])),)
    elif merged["encoder"] == "pca":
        models = (ModelSpec("pca", pc=int(merged["pc"])),)
    else:
        raise ConfigError(f"unknown encoder {merged['encoder']!r}")
    if len({m.name for m in models}) != len(models):
        raise ConfigError("duplicate model specs")

    cfg = RunConfig(
        networks=tuple(merged["networks"]),
        matrices=tuple(merged["matrices"]),
        models=models,
        protocol=merged["protocol"],
        folds=int(merged["folds"]),
        seed=int(merged["seed"]),
        out=str(merged["out"]),
        trees=int(merged["trees"]),
        max_depth=int(merged["max_depth"]),
        min_leaf=int(merged["min_leaf"]),
        mtry=None if merged["mtry"] in (None, 0) else int(merged["mtry"]),
        max_iterations=int(merged["max_iterations"]),
        rel_tolerance=float(merged["rel_tolerance"]),
        variance_floor_scale=float(merged["variance_floor_scale"]),
    )
    if cfg.protocol not in ("split", "cv"):
        raise ConfigError(f"protocol must be split or cv, got {cfg.protocol!r}")
    if cfg.folds < 2:
        raise ConfigError("folds must be >= 2")
    return cfg


def _require_networks(cfg: RunConfig) -> list[Path]:
    if not cfg.networks:
        raise ConfigError("at least one container is required (--networks)")
    paths = [Path(p) for p in cfg.networks]
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        raise ConfigError(f"container path(s) not found: {missing}")
    return paths


def _load_networks(paths) -> list[list]:
    return [read_container_file(p) for p in paths]


def _restrict(networks, keep_ids) -> list[list]:
    keep = set(keep_ids)
    return [[s for s in samples if s.sample_id in keep] for samples in networks]


def _echo_config(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_report_json(cfg.to_dict(), out / "config.resolved.json")


def _encode_model(
    cfg: RunConfig, spec: ModelSpec, networks, fit_samples=None
) -> tuple[FeatureMatrix, list | None]:
    """Feature matrix for one model spec; PCA bases come from fit_samples."""
    if spec.encoder == "gmm":
        return encode_dataset(networks, cfg.em_config(spec)), None
    fit_on = networks if fit_samples is None else _restrict(networks, fit_samples)
    bases = [fit_layer_bases(samples, spec.pc) for samples in fit_on]
    return pca_encode_dataset(networks, bases), bases


def _write_features(cfg: RunConfig, spec: ModelSpec, fm: FeatureMatrix, out: Path, note: str):
    write_matrix_csv(fm, out / f"features_{spec.name}.csv")
    meta = {
        "encoder": spec.encoder,
        "networks": list(cfg.networks),
        "schema_length": len(fm.schema),
        "basis_fit": note,
        "seed": cfg.seed,
    }
    if spec.encoder == "gmm":
        meta["em"] = asdict(cfg.em_config(spec))
    else:
        meta["pc"] = spec.pc
    write_sidecar(out / f"features_{spec.name}.meta.json", meta)


def cmd_encode(cfg: RunConfig) -> int:
    paths = _require_networks(cfg)
    networks = _load_networks(paths)
    out = Path(cfg.out)
    _echo_config(cfg, out)
    for spec in cfg.models:
        fm, bases = _encode_model(cfg, spec, networks)
        _write_features(cfg, spec, fm, out, "all-samples")
        if bases is not None:
            for mapping, samples in zip(bases, networks):
                tag = samples[0].network_tag
                with open(out / f"bases_{spec.name}_{tag}.pcab", "wb") as fh:
                    write_bases(mapping, fh, tag)
        print(f"encoded {spec.name}: {fm.matrix.shape[0]} samples x {len(fm.schema)} features")
    return EXIT_OK


def _rf_scores(cfg, schema, x_tr, y_tr, x_te):
    model = rf_train(x_tr, y_tr, cfg.forest_config(), schema=schema)
    return model, rf_predict_proba_batch(model, x_te)


@dataclass
class ModelRun:
    """One model configuration's feature source within an experiment.

    matrix_for(fit_ids) yields the feature matrix given the ids the
    encoder may fit on; sources whose encoding is fit-independent
    (mixture descriptors, precomputed matrices) ignore the argument.
    """

    name: str
    matrix_for: object
    refits_per_fold: bool = False
    feature_note: str | None = None
    spec: ModelSpec | None = None


def _model_runs(cfg: RunConfig, networks, matrices) -> list[ModelRun]:
    if matrices is not None:
        return [
            ModelRun(name, (lambda fm: lambda fit_ids: fm)(fm))
            for name, fm in matrices.items()
        ]
    runs = []
    for spec in cfg.models:
        if spec.encoder == "gmm":
            cache: dict = {}

            def get(fit_ids, _spec=spec, _cache=cache):
                if "fm" not in _cache:
                    _cache["fm"] = encode_dataset(networks, cfg.em_config(_spec))
                return _cache["fm"]

            runs.append(ModelRun(spec.name, get, feature_note="n/a", spec=spec))
        else:

            def get(fit_ids, _spec=spec):
                fit_on = networks if fit_ids is None else _restrict(networks, fit_ids)
                bases = [fit_layer_bases(samples, _spec.pc) for samples in fit_on]
                return pca_encode_dataset(networks, bases)

            runs.append(
                ModelRun(
                    spec.name, get, refits_per_fold=True,
                    feature_note="train+validation", spec=spec,
                )
            )
    return runs


def _write_run_features(cfg, run: ModelRun, fm: FeatureMatrix, out: Path):
    if run.feature_note is None:
        return
    _write_features(cfg, run.spec, fm, out, run.feature_note)


def _run_split_model(cfg, run: ModelRun, split, out: Path):
    fm = run.matrix_for(split.train + split.validation)
    index = {sid: i for i, sid in enumerate(fm.sample_ids)}
    tr = np.array([index[s] for s in split.train])
    te = np.array([index[s] for s in split.test])
    model, scores = _rf_scores(cfg, fm.schema, fm.matrix[tr], fm.labels[tr], fm.matrix[te])
    report = evaluate_scores(scores, fm.labels[te])
    _write_run_features(cfg, run, fm, out)
    with open(out / f"model_{run.name}.rf", "wb") as fh:
        write_model(model, fh)
    write_sidecar(
        out / f"model_{run.name}.json",
        {
            "config": asdict(model.config),
            "schema_hash": model.schema_hash,
            "oob_error": model.oob_error,
            "feature_count": model.feature_count,
        },
    )
    write_roc_csv(report.roc, out / f"roc_{run.name}.csv")
    pred = (scores >= 0.5).astype(np.int64)
    correctness = {
        sid: bool(p == l) for sid, p, l in zip(split.test, pred, fm.labels[te])
    }
    return report, correctness


def _run_cv_model(cfg, run: ModelRun, ids, labels, out: Path):
    correctness: dict[str, bool] = {}
    reports: list[EvalReport] = []
    fm = None
    if not run.refits_per_fold:
        fm = run.matrix_for(None)
        _write_run_features(cfg, run, fm, out)
    for fold in kfold_splits(ids, cfg.folds, cfg.seed):
        if run.refits_per_fold:
            fm = run.matrix_for(fold.train + fold.validation)
        index = {sid: i for i, sid in enumerate(fm.sample_ids)}
        tr = np.array([index[s] for s in fold.train])
        te = np.array([index[s] for s in fold.test])
        y_tr = fm.labels[tr]
        if y_tr.min() == y_tr.max():
            raise EvaluationError(
                f"fold {fold.fold_id}: training portion has a single class"
            )
        _, scores = _rf_scores(cfg, fm.schema, fm.matrix[tr], y_tr, fm.matrix[te])
        report = evaluate_scores(scores, fm.labels[te], fold.fold_id)
        reports.append(report)
        write_roc_csv(report.roc, out / f"roc_{run.name}_fold{fold.fold_id}.csv")
        pred = (scores >= 0.5).astype(np.int64)
        for sid, p in zip(fold.test, pred):
            correctness[sid] = bool(p == labels[sid])
    return CvResult(tuple(reports), average_reports(reports)), correctness


def _comparisons(correct_by_model: dict[str, dict[str, bool]]):
    names = list(correct_by_model)
    cells: dict[tuple[str, str], ChiSquareResult | None] = {}
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            ca = correct_by_model[a]
            cb = correct_by_model[b]
            n_a = sum(ca.values())
            n_b = sum(cb.values())
            try:
                cells[(a, b)] = chi_square_compare(
                    (n_a, len(ca) - n_a), (n_b, len(cb) - n_b)
                )
            except EvaluationError:
                # Degenerate table (e.g. both models perfect): undefined, not 0.
                cells[(a, b)] = None
    return cells


def _load_matrices(cfg: RunConfig) -> dict[str, FeatureMatrix]:
    paths = [Path(p) for p in cfg.matrices]
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        raise ConfigError(f"matrix path(s) not found: {missing}")
    out: dict[str, FeatureMatrix] = {}
    ref: FeatureMatrix | None = None
    for path in paths:
        fm = read_matrix_csv(path)
        name = path.stem
        if name in out:
            raise ConfigError(f"duplicate matrix name {name!r}")
        if ref is not None and (
            fm.sample_ids != ref.sample_ids or not np.array_equal(fm.labels, ref.labels)
        ):
            raise EncodeError(f"matrix {path} is not row-aligned with {paths[0]}")
        ref = ref or fm
        out[name] = fm
    return out


def _run_experiment(cfg: RunConfig) -> int:
    if cfg.matrices and cfg.networks:
        raise ConfigError("give either --networks or --matrices, not both")
    if cfg.matrices:
        matrices = _load_matrices(cfg)
        first = next(iter(matrices.values()))
        ids = list(first.sample_ids)
        labels = {sid: int(lab) for sid, lab in zip(first.sample_ids, first.labels)}
        runs = _model_runs(cfg, None, matrices)
    else:
        networks = _load_networks(_require_networks(cfg))
        ids = sorted(s.sample_id for s in networks[0])
        labels = {s.sample_id: s.label for s in networks[0]}
        runs = _model_runs(cfg, networks, None)
    out = Path(cfg.out)
    _echo_config(cfg, out)
    payload: dict = {"protocol": cfg.protocol, "seed": cfg.seed, "models": {}}
    correct_by_model: dict[str, dict[str, bool]] = {}

    if cfg.protocol == "split":
        split = split_train_val_test(ids, cfg.seed)
        payload["split_sizes"] = {
            "train": len(split.train),
            "validation": len(split.validation),
            "test": len(split.test),
        }
        split_reports: dict[str, EvalReport] = {}
        for run in runs:
            report, correctness = _run_split_model(cfg, run, split, out)
            payload["models"][run.name] = report.to_dict()
            correct_by_model[run.name] = correctness
            split_reports[run.name] = report
        (out / "summary.txt").write_text(format_model_table(split_reports))
    else:
        cv_results: dict[str, CvResult] = {}
        for run in runs:
            cv, correctness = _run_cv_model(cfg, run, ids, labels, out)
            cv_results[run.name] = cv
            payload["models"][run.name] = cv.to_dict()
            correct_by_model[run.name] = correctness
        payload["folds"] = cfg.folds
        (out / "table1.txt").write_text(format_cv_table(cv_results))

    if len(runs) >= 2:
        cells = _comparisons(correct_by_model)
        payload["comparisons"] = {
            f"{a}|{b}": (
                {"chi_square": None, "p_value": None}
                if r is None
                else {"chi_square": r.statistic, "p_value": r.p_value}
            )
            for (a, b), r in cells.items()
        }
        (out / "table2.txt").write_text(
            format_comparison_table([r.name for r in runs], cells)
        )
    write_report_json(payload, out / "report.json")
    print(f"experiment complete: {out / 'report.json'}")
    return EXIT_OK


def cmd_experiment(cfg: RunConfig) -> int:
    return _run_experiment(cfg)


def cmd_compare(cfg: RunConfig) -> int:
    sources = len(cfg.matrices) if cfg.matrices else len(cfg.models)
    if sources < 2:
        raise ConfigError("compare needs at least two --models or --matrices entries")
    return _run_experiment(cfg)


def cmd_gridsearch(cfg: RunConfig, trees_grid, depth_grid) -> int:
    paths = _require_networks(cfg)
    networks = _load_networks(paths)
    out = Path(cfg.out)
    _echo_config(cfg, out)
    spec = cfg.models[0]
    ids = sorted(s.sample_id for s in networks[0])
    split = split_train_val_test(ids, cfg.seed)
    fm, _ = _encode_model(cfg, spec, networks, fit_samples=split.train + split.validation)
    index = {sid: i for i, sid in enumerate(fm.sample_ids)}
    tr = np.array([index[s] for s in split.train])
    va = np.array([index[s] for s in split.validation])
    te = np.array([index[s] for s in split.test])

    cells = []
    best = None
    for trees in trees_grid:
        for depth in depth_grid:
            trial = replace(cfg, trees=trees, max_depth=depth)
            _, scores = _rf_scores(trial, fm.schema, fm.matrix[tr], fm.labels[tr], fm.matrix[va])
            acc = float(np.mean((scores >= 0.5) == (fm.labels[va] == 1)))
            cells.append({"trees": trees, "max_depth": depth, "validation_accuracy": acc})
            key = (-acc, trees, depth)
            if best is None or key < best[0]:
                best = (key, trial)
    chosen = best[1]
    _, scores = _rf_scores(chosen, fm.schema, fm.matrix[tr], fm.labels[tr], fm.matrix[te])
    report = evaluate_scores(scores, fm.labels[te])
    write_report_json(
        {
            "model": spec.name,
            "cells": cells,
            "chosen": {"trees": chosen.trees, "max_depth": chosen.max_depth},
            "test_report": report.to_dict(),
        },
        out / "gridsearch.json",
    )
    print(
        f"gridsearch: chose trees={chosen.trees} max_depth={chosen.max_depth} "
        f"(test accuracy {report.to_dict()['accuracy']:.2f})"
    )
    return EXIT_OK


def cmd_synth_bench(cfg: RunConfig, samples_per_class: int) -> int:
    out = Path(cfg.out)
    _echo_config(cfg, out)
    synth = SynthConfig(samples_per_class=samples_per_class, seed=cfg.seed)
    em = EmConfig(
        k=2,
        max_iterations=cfg.max_iterations,
        rel_tolerance=cfg.rel_tolerance,
        variance_floor_scale=cfg.variance_floor_scale,
        seed=cfg.seed,
    )
    forest = cfg.forest_config()
    separable = run_benchmark(synth, em, forest, cfg.folds)
    control = run_benchmark(control_config(synth), em, forest, cfg.folds)
    write_report_json(
        {"separable": separable.to_dict(), "control": control.to_dict()},
        out / "synth_bench.json",
    )
    (out / "table1.txt").write_text(
        format_cv_table({"gmm_k2+rf": separable.cv})
    )
    checks = [
        ("separable mean accuracy >= 95", separable.mean_accuracy >= 95.0,
         f"{separable.mean_accuracy:.2f}"),
        ("separable mean AUC >= 98", separable.mean_auc >= 98.0,
         f"{separable.mean_auc:.2f}"),
        ("control accuracy inside 99% binomial band", control.within_band,
         f"{control.pooled_accuracy:.2f} in [{control.binomial_band[0]:.2f}, "
         f"{control.binomial_band[1]:.2f}]"),
    ]
    ok = True
    for label, passed, detail in checks:
        print(f"{'PASS' if passed else 'FAIL'}  {label}  ({detail})")
        ok = ok and passed
    if not ok:
        print("synthetic benchmark thresholds not met", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from err


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixmap",
        description="Mixture-model feature-map encoding, forest training, and evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, protocol=True):
        p.add_argument("--config", help="JSON config file; flags override its keys")
        p.add_argument("--networks", nargs="+", help="FMAP container per network, in order")
        p.add_argument(
            "--matrices",
            nargs="+",
            help="precomputed feature-matrix CSVs, one model per file "
            "(experiment/compare alternative to --networks)",
        )
        p.add_argument("--encoder", choices=["gmm", "pca"])
        p.add_argument("--k", type=int, help="mixture components (gmm)")
        p.add_argument("--pc", type=int, help="principal components (pca)")
        p.add_argument(
            "--models",
            nargs="+",
            help="model specs like gmm:k=2 pca:pc=3 (overrides --encoder)",
        )
        p.add_argument("--trees", type=int)
        p.add_argument("--max-depth", dest="max_depth", type=int)
        p.add_argument("--min-leaf", dest="min_leaf", type=int)
        p.add_argument("--mtry", type=int)
        p.add_argument("--max-iterations", dest="max_iterations", type=int)
        p.add_argument("--rel-tolerance", dest="rel_tolerance", type=float)
        p.add_argument(
            "--variance-floor-scale", dest="variance_floor_scale", type=float
        )
        if protocol:
            p.add_argument("--protocol", choices=["split", "cv"])
            p.add_argument("--folds", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")

    common(sub.add_parser("encode", help="write feature matrices"), protocol=False)
    common(sub.add_parser("experiment", help="train and evaluate models"))
    common(sub.add_parser("compare", help="experiment requiring >= 2 models"))

    grid = sub.add_parser("gridsearch", help="forest hyper-parameter search")
    common(grid)
    grid.add_argument("--trees-grid", type=_int_list, default=[100, 300, 500])
    grid.add_argument("--depth-grid", type=_int_list, default=[5, 10, 15])

    bench = sub.add_parser("synth-bench", help="synthetic end-to-end benchmark")
    common(bench, protocol=False)
    bench.add_argument("--samples-per-class", type=int, default=60)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve(args)
        if args.command == "encode":
            return cmd_encode(cfg)
        if args.command == "experiment":
            return cmd_experiment(cfg)
        if args.command == "compare":
            return cmd_compare(cfg)
        if args.command == "gridsearch":
            return cmd_gridsearch(cfg, args.trees_grid, args.depth_grid)
        if args.command == "synth-bench":
            return cmd_synth_bench(cfg, args.samples_per_class)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except _DATA_ERRORS as err:
        print(f"data validation error: {err}", file=sys.stderr)
        return EXIT_DATA
    except Exception as err:  # pragma: no cover - defensive
        print(f"runtime error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
