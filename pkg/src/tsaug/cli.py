"""Command-line entry point.

Every command is deterministic given its config and seed. Artifacts start
with ``# config_hash=<sha256>`` comment lines and their file names carry the
seed. Exit codes: 0 on success, 2 for invalid input or configuration, 3 for
numeric failures.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from . import charts
from .augmentations import (
    OpParams,
    augment_dataset,
    chain_sample_fn,
    default_params,
    fit_params_to_length,
    params_for_level,
    parse_op_kind,
)
from .auto_augment import export_trajectory, policy_to_dict, search_policy
from .config import RunConfig, load_run_config
from .data_io import (
    SyntheticKind,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    load_manifest,
    read_dataset_csv,
    save_dataset,
    save_dataset_csv,
    write_csv_table,
)
from .errors import NumericError, TsaugError, ValidationError
from .metrics import AugmentationRef, scatter_sweep, train_run
from .model_zoo import ModelKind, ModelSpec, evaluate
from .rand_augment import RandAugmentConfig, RandAugmentCounter, rand_augment_dataset
from .series_core import Dataset, RngStream, apply_zscore, fit_zscore, fresh_seed, replicate_stream

logger = logging.getLogger(__name__)

LOG_ENV = "TSAUG_LOG"
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3

app = typer.Typer(help="Time-series data augmentation experiments.", no_args_is_help=True, add_completion=False)
console = Console()
err_console = Console(stderr=True)

Splits = Tuple[Dataset, Dataset, Dataset]


def _configure_logging() -> None:
    level_name = os.environ.get(LOG_ENV, "WARNING").strip().upper()
    level = logging.getLevelName(level_name)
    if not isinstance(level, int):
        level = logging.WARNING
    root = logging.getLogger("tsaug")
    if not any(isinstance(handler, RichHandler) for handler in root.handlers):
        root.addHandler(RichHandler(console=err_console, show_path=False))
    root.setLevel(level)


@app.callback()
def _startup() -> None:
    _configure_logging()


@contextmanager
def _exit_codes() -> Iterator[None]:
    try:
        yield
    except NumericError as exc:
        err_console.print(f"[red]numeric error:[/red] {exc}")
        raise typer.Exit(EXIT_NUMERIC) from exc
    except TsaugError as exc:
        err_console.print(f"[red]error:[/red] {exc}")
        raise typer.Exit(EXIT_VALIDATION) from exc


def _load_config(config: Optional[Path], seed: Optional[int], out: Optional[Path], threads: Optional[int]) -> RunConfig:
    cfg = load_run_config(config)
    overrides: Dict[str, object] = {}
    if seed is not None:
        overrides["seed"] = seed
    if out is not None:
        overrides["out_dir"] = out
    if threads is not None:
        if threads < 1:
            raise ValidationError(f"--threads must be >= 1, got {threads}")
        overrides["threads"] = threads
    return replace(cfg, **overrides) if overrides else cfg


def _resolve_seed(cfg: RunConfig) -> int:
    seed = cfg.top_seed()
    return fresh_seed() if seed is None else seed


def _header(cfg_hash: str, seed: object) -> List[str]:
    return [f"config_hash={cfg_hash}", f"seed={seed}"]


def _adhoc_hash(payload: Dict[str, object]) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _load_splits(cfg: RunConfig) -> Splits:
    if cfg.dataset is not None:
        return load_dataset(load_manifest(cfg.dataset))
    train, val, test = generate_synthetic(cfg.synthetic)
    if cfg.normalize:
        stats = fit_zscore(train)
        train, val, test = (apply_zscore(d, stats) for d in (train, val, test))
    return train, val, test


def _model_spec(kind: ModelKind, train: Dataset, cfg: RunConfig) -> ModelSpec:
    return ModelSpec.for_dataset(kind, train, width=cfg.width)


def _seeds_tag(seeds: Sequence[int]) -> str:
    return "-".join(str(seed) for seed in seeds)


def _replicate_root(cfg: RunConfig) -> Tuple[Optional[RngStream], str]:
    """Root stream of the seed replicates and the seed tag for file names.

    With a top-level seed every replicate derives from it and the tag is that
    seed; without one, replicate ``s`` runs on ``RngStream(s)`` and the tag
    lists the replicates.
    """
    top = cfg.top_seed()
    if top is None:
        return None, _seeds_tag(cfg.seeds)
    return RngStream(top), str(top)


def _summary(accuracies: Sequence[float]) -> Tuple[float, float]:
    if not accuracies:
        return float("nan"), float("nan")
    values = np.asarray(accuracies, dtype=np.float64)
    return float(values.mean()), float(values.std())


def _render(title: str, frame: pd.DataFrame) -> None:
    table = Table(title=title)
    for column in frame.columns:
        table.add_column(str(column))
    for row in frame.itertuples(index=False):
        table.add_row(*(f"{value:.4f}" if isinstance(value, float) else str(value) for value in row))
    console.print(table)


def _accuracy_cell(
    kind: ModelKind, tau: Optional[AugmentationRef], splits: Splits, cfg: RunConfig, stream: RngStream
) -> float:
    train, val, test = splits
    spec = _model_spec(kind, train, cfg)
    model, _ = train_run(spec, train, val, cfg.train, stream, tau)
    return evaluate(model, test).accuracy


def _auto_cell(kind: ModelKind, splits: Splits, cfg: RunConfig, stream: RngStream) -> float:
    train, val, test = splits
    spec = _model_spec(kind, train, cfg)
    result = search_policy(train, val, spec, cfg.train, cfg.search, stream)
    return evaluate(result.model, test).accuracy


def _run_cells(jobs: List[Tuple], run, threads: int) -> List[Tuple[Optional[float], Optional[str]]]:
    """Run ``run(*job)`` for every job; failures are recorded, not raised."""

    def _safe(job: Tuple) -> Tuple[Optional[float], Optional[str]]:
        try:
            return run(*job), None
        except TsaugError as exc:
            logger.warning("cell %s failed: %s", job[:2], exc)
            return None, str(exc)

    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(_safe, jobs))
    return [_safe(job) for job in jobs]


def _summary_rows(keys: List[Tuple], outcomes, seeds: Sequence[int]) -> List[Tuple[Tuple, float, float, str]]:
    rows = []
    per_key = len(seeds)
    for index, key in enumerate(keys):
        chunk = outcomes[index * per_key:(index + 1) * per_key]
        good = [(seed, acc) for seed, (acc, _) in zip(seeds, chunk) if acc is not None]
        mean, std = _summary([acc for _, acc in good])
        rows.append((key, mean, std, ";".join(str(seed) for seed, _ in good)))
    return rows


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def _parse_params(pairs: Sequence[str]) -> Dict[str, object]:
    parsed: Dict[str, object] = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ValidationError(f"--param expects key=value, got {pair!r}")
        lowered = value.strip().lower()
        parsed[key.strip()] = lowered == "true" if lowered in ("true", "false") else value.strip()
    return parsed


@app.command()
def augment(
    input_csv: Path = typer.Argument(..., help="Long-form series CSV."),
    op: str = typer.Option(..., "--op", help="Operation name, e.g. jitter or magwarp."),
    level: Optional[float] = typer.Option(None, "--level", help="Magnitude level in [0, 30]."),
    param: List[str] = typer.Option([], "--param", help="Explicit parameter, key=value; repeatable."),
    seed: Optional[int] = typer.Option(None, "--seed"),
    out: Path = typer.Option(Path("results"), "--out", help="Output directory."),
    output: Optional[Path] = typer.Option(None, "--output", help="Output CSV; defaults to <out>/augment_<op>_seed<seed>.csv."),
    svg: bool = typer.Option(False, "--svg", help="Also write an input/augmented overlay of the first series."),
    threads: int = typer.Option(1, "--threads"),
) -> None:
    """Apply one operation to every series of a CSV file."""
    with _exit_codes():
        kind = parse_op_kind(op)
        if level is not None and param:
            raise ValidationError("give either --level or --param, not both")
        if level is not None:
            params = params_for_level(kind, level)
        elif param:
            try:
                params = OpParams.from_dict(_parse_params(param))
            except ValueError as exc:
                raise ValidationError(f"bad --param value: {exc}") from exc
        else:
            params = default_params(kind)
        data = read_dataset_csv(input_csv)
        params = fit_params_to_length(kind, params, data.shape[0])
        if seed is None:
            seed = _resolve_seed(RunConfig())
        augmented = augment_dataset(data, chain_sample_fn([(kind, params)]), RngStream(seed), threads=threads)
        target = output or out / f"augment_{kind.value}_seed{seed}.csv"
        cfg_hash = _adhoc_hash({"command": "augment", "op": kind.value, "params": params.to_dict(), "seed": seed})
        save_dataset_csv(augmented, target, _header(cfg_hash, seed))
        if svg:
            charts.overlay_chart(
                data.samples[0].values, augmented.samples[0].values, target.with_suffix(".svg"), kind.to_display_name()
            )
        console.print(f"wrote {target}")


@app.command()
def randaug(
    input_csv: Path = typer.Argument(..., help="Long-form series CSV."),
    num_ops: Optional[int] = typer.Option(None, "--num-ops", "-j", help="Ops per sample, J."),
    magnitude: Optional[int] = typer.Option(None, "--magnitude", "-m", help="Shared level, M."),
    config: Optional[Path] = typer.Option(None, "--config"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    out: Optional[Path] = typer.Option(None, "--out"),
    threads: Optional[int] = typer.Option(None, "--threads"),
) -> None:
    """Apply randaugment(J, M) to every series of a CSV file."""
    with _exit_codes():
        cfg = _load_config(config, seed, out, threads)
        rand = RandAugmentConfig(
            num_ops=cfg.rand.num_ops if num_ops is None else num_ops,
            magnitude=cfg.rand.magnitude if magnitude is None else magnitude,
            pool=cfg.rand.pool,
        )
        top = _resolve_seed(cfg)
        data = read_dataset_csv(input_csv)
        counter = RandAugmentCounter()
        augmented = rand_augment_dataset(data, rand, RngStream(top), threads=cfg.threads, counter=counter)
        target = cfg.out_dir / f"randaug_J{rand.num_ops}_M{rand.magnitude}_seed{top}.csv"
        cfg_hash = _adhoc_hash({"command": "randaug", "rand": rand.to_dict(), "seed": top})
        save_dataset_csv(augmented, target, _header(cfg_hash, top))
        counts = pd.DataFrame(
            [{"op": kind.value, "count": count} for kind, count in sorted(counter.per_kind.items(), key=lambda kv: kv[0].value)]
        )
        if not counts.empty:
            _render(f"{counter.ops_applied} ops over {counter.samples} series", counts)
        console.print(f"wrote {target}")


def _best_rows(frame: pd.DataFrame, op_names: Sequence[str]) -> pd.DataFrame:
    """One ``best`` row per backbone: the single operation with the highest mean accuracy."""
    singles = frame[frame["augmentation"].isin(op_names)].dropna(subset=["mean_acc"])
    rows = []
    for backbone, group in singles.groupby("backbone", sort=False):
        winner = group.loc[group["mean_acc"].idxmax()]
        rows.append(
            {
                "backbone": backbone, "augmentation": "best", "mean_acc": winner["mean_acc"],
                "std_acc": winner["std_acc"], "seeds": winner["seeds"], "best_op": winner["augmentation"],
            }
        )
    return pd.DataFrame(rows, columns=frame.columns)


@app.command()
def grid(
    config: Optional[Path] = typer.Option(None, "--config"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    out: Optional[Path] = typer.Option(None, "--out"),
    threads: Optional[int] = typer.Option(None, "--threads"),
) -> None:
    """Test accuracy of every backbone under every configured augmentation."""
    with _exit_codes():
        cfg = _load_config(config, seed, out, threads)
        splits = _load_splits(cfg)
        augs: List[Tuple[str, Optional[AugmentationRef]]] = [("none", None)]
        if cfg.grid.include_identity:
            augs.append(("identity", AugmentationRef.identity()))
        for kind in cfg.grid.ops:
            augs.append((kind.value, AugmentationRef(name=kind.value, ops=((kind, default_params(kind)),))))
        if cfg.grid.include_rand:
            augs.append(("rand", AugmentationRef(name="rand", rand=cfg.rand)))
        keys = [(backbone, name) for backbone in cfg.backbones for name, _ in augs]
        by_name = dict(augs)
        jobs = []
        for backbone, name in keys:
            for s in cfg.seeds:
                jobs.append((backbone, name, s))
        if cfg.grid.include_auto:
            keys += [(backbone, "auto") for backbone in cfg.backbones]
            jobs += [(backbone, "auto", s) for backbone in cfg.backbones for s in cfg.seeds]

        root, tag = _replicate_root(cfg)

        def _run(backbone: ModelKind, name: str, s: int) -> float:
            stream = replicate_stream(s, root)
            if name == "auto":
                return _auto_cell(backbone, splits, cfg, stream)
            logger.info("grid cell %s/%s seed %d", backbone.value, name, s)
            return _accuracy_cell(backbone, by_name[name], splits, cfg, stream)

        outcomes = _run_cells(jobs, _run, cfg.threads)
        frame = pd.DataFrame(
            [
                {
                    "backbone": key[0].value, "augmentation": key[1], "mean_acc": mean, "std_acc": std,
                    "seeds": seeds, "best_op": "",
                }
                for key, mean, std, seeds in _summary_rows(keys, outcomes, cfg.seeds)
            ]
        )
        best = _best_rows(frame, [kind.value for kind in cfg.grid.ops])
        if not best.empty:
            frame = pd.concat([frame, best], ignore_index=True)
        target = cfg.out_dir / f"grid_seed{tag}.csv"
        write_csv_table(frame, target, _header(cfg.hash(), tag))
        _render("accuracy grid", frame)
        console.print(f"wrote {target}")


@app.command()
def search(
    config: Optional[Path] = typer.Option(None, "--config"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    out: Optional[Path] = typer.Option(None, "--out"),
    threads: Optional[int] = typer.Option(None, "--threads"),
    backbone: Optional[str] = typer.Option(None, "--backbone", help="mlp or conv1d; defaults to the first configured."),
) -> None:
    """Search an augmentation policy jointly with a model; write policy and trajectory."""
    with _exit_codes():
        cfg = _load_config(config, seed, out, threads)
        top = _resolve_seed(cfg)
        try:
            kind = ModelKind(backbone) if backbone else cfg.backbones[0]
        except ValueError as exc:
            raise ValidationError(f"unknown backbone {backbone!r}") from exc
        train, val, test = _load_splits(cfg)
        result = search_policy(train, val, _model_spec(kind, train, cfg), cfg.train, cfg.search, RngStream(top))
        header = _header(cfg.hash(), top)
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        policy_path = cfg.out_dir / f"policy_seed{top}.json"
        with policy_path.open("w", encoding="utf-8") as handle:
            json.dump({"config_hash": cfg.hash(), "seed": top, "policy": policy_to_dict(result.policy)}, handle, indent=2)
            handle.write("\n")
        matrix = export_trajectory(result.trajectory)
        frame = pd.DataFrame(
            [
                {"epoch": snapshot.epoch, "subpolicy_id": k, "probability": float(matrix[row, k])}
                for row, snapshot in enumerate(result.trajectory.snapshots)
                for k in range(matrix.shape[1])
            ]
        )
        trajectory_path = cfg.out_dir / f"trajectory_seed{top}.csv"
        write_csv_table(frame, trajectory_path, header)
        labels = ["+".join(kind.value for kind in row) for row in result.policy.kinds]
        charts.trajectory_chart(matrix, trajectory_path.with_suffix(".svg"), labels)
        accuracy = evaluate(result.model, test).accuracy
        console.print(f"test accuracy {accuracy:.4f}; wrote {policy_path} and {trajectory_path}")


@app.command()
def metrics(
    config: Optional[Path] = typer.Option(None, "--config"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    out: Optional[Path] = typer.Option(None, "--out"),
    threads: Optional[int] = typer.Option(None, "--threads"),
) -> None:
    """Affinity and diversity of every configured augmentation."""
    with _exit_codes():
        cfg = _load_config(config, seed, out, threads)
        train, val, test = _load_splits(cfg)
        spec = _model_spec(cfg.metrics.backbone, train, cfg)
        root, tag = _replicate_root(cfg)
        reports = scatter_sweep(
            train, val, test, spec, cfg.metrics.resolve(), cfg.train, cfg.seeds, threads=cfg.threads, root=root
        )
        frame = pd.DataFrame([report.to_row() for report in reports])
        target = cfg.out_dir / f"metrics_seed{tag}.csv"
        write_csv_table(frame, target, _header(cfg.hash(), tag))
        charts.scatter_chart(frame["affinity"], frame["acc_delta"], cfg.out_dir / f"metrics_affinity_seed{tag}.svg", "affinity")
        charts.scatter_chart(frame["diversity"], frame["acc_delta"], cfg.out_dir / f"metrics_diversity_seed{tag}.svg", "diversity")
        console.print(f"wrote {target} ({len(frame)} augmentations)")


@app.command("sweep-jm")
def sweep_jm(
    config: Optional[Path] = typer.Option(None, "--config"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    out: Optional[Path] = typer.Option(None, "--out"),
    threads: Optional[int] = typer.Option(None, "--threads"),
) -> None:
    """Randaugment accuracy against J (fixed M) and against M (fixed J)."""
    with _exit_codes():
        cfg = _load_config(config, seed, out, threads)
        splits = _load_splits(cfg)
        settings = cfg.sweep
        points = [("J", j, settings.fixed_m) for j in settings.j_values]
        points += [("M", settings.fixed_j, m) for m in settings.m_values]
        keys = [(backbone, point) for backbone in cfg.backbones for point in points]
        jobs = [(backbone, point, s) for backbone, point in keys for s in cfg.seeds]
        root, tag = _replicate_root(cfg)

        def _run(backbone: ModelKind, point: Tuple[str, int, int], s: int) -> float:
            _, j, m = point
            rand = RandAugmentConfig(num_ops=j, magnitude=m, pool=cfg.rand.pool)
            tau = AugmentationRef(name=f"J{j}M{m}", rand=rand)
            return _accuracy_cell(backbone, tau, splits, cfg, replicate_stream(s, root))

        outcomes = _run_cells(jobs, _run, cfg.threads)
        rows = [
            {
                "backbone": key[0].value, "sweep": key[1][0], "j": key[1][1], "m": key[1][2],
                "mean_acc": mean, "std_acc": std, "seeds": seeds,
            }
            for key, mean, std, seeds in _summary_rows(keys, outcomes, cfg.seeds)
        ]
        frame = pd.DataFrame(rows)
        target = cfg.out_dir / f"sweep_jm_seed{tag}.csv"
        write_csv_table(frame, target, _header(cfg.hash(), tag))
        for axis, column in (("J", "j"), ("M", "m")):
            part = frame[frame["sweep"] == axis]
            series = {name: group["mean_acc"].tolist() for name, group in part.groupby("backbone", sort=False)}
            xs = part[column].drop_duplicates().tolist()
            charts.line_chart(xs, series, cfg.out_dir / f"sweep_{axis.lower()}_seed{tag}.svg", axis)
        _render("randaugment sweep", frame)
        console.print(f"wrote {target}")


@app.command("gen-synthetic")
def gen_synthetic(
    kind: str = typer.Option("sine-vs-frequency", "--kind", help="sine-vs-frequency, trend-vs-flat or sign-of-mean."),
    length: int = typer.Option(64, "--length"),
    channels: int = typer.Option(1, "--channels"),
    samples_per_class: int = typer.Option(100, "--samples-per-class"),
    noise: float = typer.Option(0.1, "--noise"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    out: Path = typer.Option(Path("data"), "--out"),
    name: Optional[str] = typer.Option(None, "--name", help="File stem; defaults to <kind>_seed<seed>."),
    normalize: bool = typer.Option(False, "--normalize", help="Ask loaders to z-score with train statistics."),
) -> None:
    """Generate a synthetic two-class dataset as CSV splits plus a manifest."""
    with _exit_codes():
        if seed is None:
            seed = _resolve_seed(RunConfig())
        spec = SyntheticSpec(
            kind=SyntheticKind.parse(kind),
            length=length,
            channels=channels,
            samples_per_class=samples_per_class,
            noise=noise,
            seed=seed,
        )
        stem = name or f"{spec.kind.value}_seed{seed}"
        cfg_hash = _adhoc_hash({"command": "gen-synthetic", "spec": spec.to_dict(), "normalize": normalize})
        manifest = save_dataset(out, stem, generate_synthetic(spec), normalize=normalize, comments=_header(cfg_hash, seed))
        console.print(f"wrote {manifest}")


def main() -> None:
    app()
