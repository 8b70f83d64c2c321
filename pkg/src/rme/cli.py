"""Command line driver: prep, train, eval, grid and negdump.

Configuration comes from an INI file with one section per stage (data,
split, model, negsample, eval, output). Every key also has a command line
flag, and flags win over the file. Each command writes the fully resolved
configuration next to its outputs so a run can be repeated from that file.

Output layout::

    <dir>/splits/<run>/fold_<i>/   train.tsv valid.tsv test.tsv users.txt items.txt manifest.txt
    <dir>/sppmi/<run>/fold_<i>/    X.sppmi Y.sppmi Z.sppmi (as the variant needs)
    <dir>/models/<run>/fold_<i>/   model.rme history.csv [em_history.csv negatives_<it>.tsv]
    <dir>/reports/<run>/           report.csv summary.txt [significance.csv grid.csv]
"""

from __future__ import annotations

import argparse
import configparser
import csv
import itertools
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import cooccur, evaluation, ingest, model, negsample
from .errors import ConfigError, MissingArtifact, RMEError

logger = logging.getLogger("rme")

SECTIONS = ("data", "split", "model", "negsample", "eval", "output")


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str) -> float | None:
    return None if str(text).strip().lower() in ("", "none") else float(text)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in str(text).split(",") if tok.strip())


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"{text!r} is not one of {', '.join(options)}")
        return text
    return parse


@dataclass(frozen=True)
class Field:
    section: str
    key: str
    parse: Callable[[str], Any]
    default: str
    flag: str
    help: str = ""


def _f(section, key, parse, default, flag=None, help=""):
    return Field(section, key, parse, default, flag or key.replace("_", "-"), help)


FIELDS = (
    _f("data", "path", str, "", help="interaction log"),
    _f("data", "format", _choice(*ingest.FORMATS), "ml"),
    _f("data", "feedback", _choice("explicit", "implicit"), "explicit"),
    _f("data", "like_min", float, "4.0"),
    _f("data", "dislike_max", float, "2.0"),
    _f("data", "like_min_count", float, "1.0"),
    _f("data", "user_min", int, "5"),
    _f("data", "item_min", int, "5"),
    _f("split", "mode", _choice("time", "random"), "time", "split-mode"),
    _f("split", "seed", int, "0", "split-seed"),
    _f("split", "train_frac", float, "0.7"),
    _f("split", "valid_frac", float, "0.1"),
    _f("split", "test_frac", float, "0.2"),
    _f("split", "folds", int, "1"),
    _f("model", "variant", _choice(*model.VARIANTS), "rme"),
    _f("model", "k", int, "30"),
    _f("model", "lam", float, "1.0"),
    _f("model", "lam_context", _opt_float, "none"),
    _f("model", "l", float, "1.0", "scale-l"),
    _f("model", "phi", float, "10.0"),
    _f("model", "w_pos", float, "1.0"),
    _f("model", "w_neg", float, "1.0"),
    _f("model", "w_user", float, "1.0"),
    _f("model", "shift", float, "1.0"),
    _f("model", "max_sweeps", int, "50"),
    _f("model", "patience", int, "1"),
    _f("model", "seed", int, "0", "model-seed"),
    _f("negsample", "tau", float, "0.2"),
    _f("negsample", "max_iter", int, "10"),
    _f("negsample", "seed", int, "0", "neg-seed"),
    _f("negsample", "uniform", _bool, "false"),
    _f("negsample", "warm_start", _bool, "true"),
    _f("eval", "ns", _ints, "5,10,20,50,100"),
    _f("output", "dir", str, "runs", "out-dir"),
    _f("output", "run_id", str, "default", "run-id"),
    _f("output", "prep_id", str, "", "prep-id", help="run id of the prepared splits (default: run-id)"),
)


class Config:
    """Resolved configuration: ``cfg[section][key]`` holds parsed values."""

    def __init__(self, values: dict[str, dict[str, Any]], raw: dict[str, dict[str, str]]):
        self.values = values
        self.raw = raw

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    @classmethod
    def resolve(cls, path: str | None, overrides: dict[tuple[str, str], str]) -> Config:
        parser = configparser.ConfigParser(interpolation=None)
        if path is not None:
            if not Path(path).is_file():
                raise ConfigError(f"config file {path} not found")
            try:
                parser.read(path, encoding="utf-8")
            except configparser.Error as exc:
                raise ConfigError(f"{path}: {exc}") from None
            known = {(f.section, f.key) for f in FIELDS}
            for section in parser.sections():
                if section not in SECTIONS:
                    raise ConfigError(f"{path}: unknown section [{section}]")
                for key in parser[section]:
                    if (section, key) not in known:
                        raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
        values: dict[str, dict[str, Any]] = {s: {} for s in SECTIONS}
        raw: dict[str, dict[str, str]] = {s: {} for s in SECTIONS}
        for f in FIELDS:
            text = overrides.get((f.section, f.key))
            if text is None:
                text = parser.get(f.section, f.key, fallback=f.default)
            try:
                values[f.section][f.key] = f.parse(text)
            except ValueError as exc:
                raise ConfigError(f"[{f.section}] {f.key}: {exc}") from None
            raw[f.section][f.key] = str(text)
        cfg = cls(values, raw)
        cfg.check()
        return cfg

    def check(self) -> None:
        try:
            self.split_spec()
            self.hyperparams()
            self.neg_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not self["eval"]["ns"] or min(self["eval"]["ns"]) < 1:
            raise ConfigError("[eval] ns needs positive cutoffs")

    def write(self, path: Path) -> None:
        parser = configparser.ConfigParser(interpolation=None)
        for section in SECTIONS:
            parser[section] = self.raw[section]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            parser.write(fh)

    # typed views
    @property
    def implicit(self) -> bool:
        return self["data"]["feedback"] == "implicit"

    def policy(self) -> ingest.BinarizePolicy:
        d = self["data"]
        if self.implicit:
            return ingest.Implicit(d["like_min_count"])
        return ingest.Explicit(d["like_min"], d["dislike_max"])

    def split_spec(self) -> ingest.SplitSpec:
        s = self["split"]
        return ingest.SplitSpec(s["train_frac"], s["valid_frac"], s["test_frac"], s["mode"],
                                s["seed"], s["folds"])

    def hyperparams(self, **kw) -> model.Hyperparams:
        m = dict(self["model"])
        variant = m.pop("variant")
        m.update(kw)
        return model.Hyperparams.for_variant(variant, **m)

    def neg_config(self, **kw) -> negsample.NegSampleConfig:
        return negsample.NegSampleConfig(**{**self["negsample"], **kw})

    def run_dir(self, kind: str, run_id: str | None = None) -> Path:
        if run_id is None and kind in ("splits", "sppmi"):
            run_id = self["output"]["prep_id"] or None
        return Path(self["output"]["dir"]) / kind / (run_id or self["output"]["run_id"])


def _fold_dir(base: Path, fold: int) -> Path:
    return base / f"fold_{fold}"


def _ensure(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"{what} not found at {path}")
    return path


# --------------------------------------------------------------------------
# loading prepared artifacts
# --------------------------------------------------------------------------


@dataclass
class FoldData:
    train: ingest.InteractionMatrix
    valid: ingest.InteractionMatrix
    test: ingest.InteractionMatrix
    X: cooccur.SppmiMatrix | None
    Y: cooccur.SppmiMatrix | None
    Z: cooccur.SppmiMatrix | None


def _load_fold(cfg: Config, fold: int, need_sppmi: bool = True) -> FoldData:
    sdir = _require(_fold_dir(cfg.run_dir("splits"), fold), "prepared split (run `rme prep` first)")
    users = ingest.read_index(_require(sdir / "users.txt", "user index"))
    items = ingest.read_index(_require(sdir / "items.txt", "item index"))
    parts = [ingest.read_cells(_require(sdir / f"{name}.tsv", f"{name} cells"), users, items)
             for name in ("train", "valid", "test")]
    mats: dict[str, cooccur.SppmiMatrix | None] = dict(X=None, Y=None, Z=None)
    if need_sppmi:
        hp = cfg.hyperparams()
        pdir = _fold_dir(cfg.run_dir("sppmi"), fold)
        wanted = _sppmi_names(hp, cfg.implicit)
        for name in wanted:
            mats[name] = cooccur.load_sppmi(_require(pdir / f"{name}.sppmi", f"SPPMI matrix {name}"))
    return FoldData(*parts, **mats)


def _sppmi_names(hp: model.Hyperparams, implicit: bool) -> list[str]:
    names = []
    if hp.use_lie:
        names.append("X")
    if hp.use_die and not implicit:  # implicit data gets Y from sampled negatives
        names.append("Y")
    if hp.use_ue:
        names.append("Z")
    return names


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_prep(cfg: Config) -> None:
    d = cfg["data"]
    if not d["path"]:
        raise ConfigError("[data] path is required")
    if not Path(d["path"]).is_file():
        raise MissingArtifact(f"data file {d['path']} not found")
    events = ingest.parse_events(d["path"], d["format"])
    cells = ingest.binarize(events, cfg.policy())
    matrix = ingest.kcore_filter(cells, d["user_min"], d["item_min"])
    spec = cfg.split_spec()
    hp = cfg.hyperparams()
    sbase, pbase = _ensure(cfg.run_dir("splits")), _ensure(cfg.run_dir("sppmi"))
    cfg.write(sbase / "config.ini")
    cfg.write(pbase / "config.ini")
    for fold in range(spec.fold_count):
        parts = ingest.split(matrix, spec, fold)
        sdir = _ensure(_fold_dir(sbase, fold))
        ingest.write_index(matrix.user_ids, sdir / "users.txt")
        ingest.write_index(matrix.item_ids, sdir / "items.txt")
        for name, part in zip(("train", "valid", "test"), parts):
            ingest.write_cells(part, sdir / f"{name}.tsv")
        extra = {"events": len(events), "cells": len(matrix)}
        (sdir / "manifest.txt").write_text(ingest.split_manifest(parts, spec, extra), encoding="utf-8")

        pdir = _ensure(_fold_dir(pbase, fold))
        builders = dict(X=cooccur.build_x, Y=cooccur.build_y, Z=cooccur.build_z)
        for name in _sppmi_names(hp, cfg.implicit):
            cooccur.dump_sppmi(builders[name](parts.train, hp.shift), pdir / f"{name}.sppmi")
        print(f"fold {fold}: train={len(parts.train)} valid={len(parts.valid)} "
              f"test={len(parts.test)} sppmi={','.join(_sppmi_names(hp, cfg.implicit)) or '-'}")


def _write_history(path: Path, history: Sequence[model.SweepRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sweep", "objective", "ndcg100"])
        for rec in history:
            w.writerow([rec.sweep, repr(rec.objective), repr(rec.ndcg)])


def _fit(cfg: Config, data: FoldData, hp: model.Hyperparams, ncfg: negsample.NegSampleConfig,
         out: Path | None = None) -> model.ModelState:
    """Train one model on a prepared fold, writing histories under ``out`` if given."""
    M, V = data.train.liked_matrix(), data.valid.liked_matrix()
    if cfg.implicit and hp.use_die:
        def dump(it: int, negs: negsample.NegativeSampleSet) -> None:
            if out is not None:
                _write_negatives(out / f"negatives_{it}.tsv", negs, data.train)

        state, em_hist = negsample.em_train(data.train, hp, ncfg, data.valid, on_negatives=dump)
        if out is not None:
            with open(out / "em_history.csv", "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["iteration", "ndcg100", "accepted", "negatives"])
                for rec in em_hist:
                    w.writerow([rec.iteration, repr(rec.ndcg), int(rec.accepted), rec.n_negatives])
        return state
    state, history = model.train(M, data.X, data.Y, data.Z, hp, valid=V)
    state.user_ids, state.item_ids = data.train.user_ids, data.train.item_ids
    if out is not None:
        _write_history(out / "history.csv", history)
    return state


def _write_negatives(path: Path, negs: negsample.NegativeSampleSet, train: ingest.InteractionMatrix,
                     fh=None) -> None:
    users, items = negs.pairs()
    lines = "".join(f"{train.user_ids[u]}\t{train.item_ids[p]}\n" for u, p in zip(users, items))
    if fh is not None:
        fh.write(lines)
    else:
        path.write_text(lines, encoding="utf-8")


def cmd_train(cfg: Config) -> None:
    hp, ncfg = cfg.hyperparams(), cfg.neg_config()
    base = _ensure(cfg.run_dir("models"))
    cfg.write(base / "config.ini")
    for fold in range(cfg["split"]["folds"]):
        data = _load_fold(cfg, fold)
        out = _ensure(_fold_dir(base, fold))
        state = _fit(cfg, data, hp, ncfg, out)
        model.save_model(state, hp, out / "model.rme")
        print(f"fold {fold}: model written to {out / 'model.rme'}")


def _load_report_values(path: Path) -> dict[tuple[int, str, str, int], float]:
    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out[int(row["fold"]), row["group"], row["metric"], int(row["N"])] = float(row["value"])
    return out


def cmd_eval(cfg: Config, model_path: str | None = None, against: str | None = None) -> None:
    folds = cfg["split"]["folds"]
    if model_path is not None and folds != 1:
        raise ConfigError("--model only applies to single-fold runs")
    base = _ensure(cfg.run_dir("reports"))
    cfg.write(base / "config.ini")
    reports = []
    for fold in range(folds):
        data = _load_fold(cfg, fold, need_sppmi=False)
        path = Path(model_path) if model_path else _fold_dir(cfg.run_dir("models"), fold) / "model.rme"
        state, _ = model.load_model(_require(path, "model file"))
        if (state.n_users, state.n_items) != data.train.shape:
            raise ConfigError(f"model {path} does not match the prepared split")
        reports.append(evaluation.evaluate(state, data.train, data.test, cfg["eval"]["ns"],
                                           valid=data.valid, fold=fold))
    with open(base / "report.csv", "w", encoding="utf-8", newline="") as fh:
        for i, rep in enumerate(reports):
            rep.to_csv(fh, header=i == 0)
    summary = "\n".join(rep.summary() for rep in reports) + "\n"
    (base / "summary.txt").write_text(summary, encoding="utf-8")
    print(summary, end="")

    if against is not None:
        other = _load_report_values(_require(cfg.run_dir("reports", against) / "report.csv",
                                             f"report of run {against}"))
        mine = _load_report_values(base / "report.csv")
        with open(base / "significance.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "N", "mean", "mean_against", "t", "p", "significant"])
            for metric in evaluation.METRICS:
                for n in cfg["eval"]["ns"]:
                    a = [mine[f, "all", metric, n] for f in range(folds)]
                    b = [v for (f, g, m, nn), v in sorted(other.items())
                         if g == "all" and m == metric and nn == n]
                    sig = evaluation.significance(a, b)
                    w.writerow([metric, n, repr(float(np.mean(a))), repr(float(np.mean(b))),
                                repr(sig.t), repr(sig.p), int(sig.significant)])
        print(f"significance against {against} written to {base / 'significance.csv'}")


# grid search ---------------------------------------------------------------

LAMBDA_GRID = (0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 10.0)
PRESETS = {
    "static": {"lam": LAMBDA_GRID},
    "dynamic": {"lam": LAMBDA_GRID, "lam_context": LAMBDA_GRID},
    "k": {"k": tuple(range(30, 101, 10))},
    "tau": {"tau": (0.2, 0.4, 0.6, 0.8, 1.0)},
}
GRID_AXES = ("lam", "lam_context", "k", "tau")


def _grid_cells(axes: dict[str, Sequence]) -> list[dict[str, Any]]:
    names = [a for a in GRID_AXES if a in axes]
    return [dict(zip(names, combo)) for combo in itertools.product(*(axes[a] for a in names))]


def _run_cell(cfg: Config, data: FoldData, index: int, params: dict[str, Any]) -> tuple[float, str]:
    hp_kw = {k: v for k, v in params.items() if k != "tau"}
    hp = cfg.hyperparams(seed=cfg["model"]["seed"] + index, **hp_kw)
    ncfg = cfg.neg_config(seed=cfg["negsample"]["seed"] + index,
                          **({"tau": params["tau"]} if "tau" in params else {}))
    try:
        state = _fit(cfg, data, hp, ncfg)
        score = evaluation.ranking_ndcg(state.alpha, state.beta, data.train.liked_matrix(),
                                        data.valid.liked_matrix(), 100)
        return score, "ok"
    except (RMEError, ValueError, np.linalg.LinAlgError) as exc:
        category = exc.category if isinstance(exc, RMEError) else type(exc).__name__
        return float("nan"), f"error={category}"


def _run_cell_job(args) -> tuple[float, str]:
    raw, index, params = args
    cfg = Config(*raw)
    return _run_cell(cfg, _load_fold(cfg, 0), index, params)


def cmd_grid(cfg: Config, axes: dict[str, Sequence], jobs: int = 1) -> list[dict[str, Any]]:
    cells = _grid_cells(axes)
    if not cells:
        raise ConfigError("grid is empty")
    data = _load_fold(cfg, 0)
    base = _ensure(cfg.run_dir("reports"))
    cfg.write(base / "config.ini")
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell_job, [((cfg.values, cfg.raw), i, p)
                                                    for i, p in enumerate(cells)]))
    else:
        results = [_run_cell(cfg, data, i, p) for i, p in enumerate(cells)]

    rows = [dict(index=i, **p, ndcg100=score, status=status)
            for i, (p, (score, status)) in enumerate(zip(cells, results))]
    # best first; failed cells last; ties keep grid order
    rows.sort(key=lambda r: (np.isnan(r["ndcg100"]), -np.nan_to_num(r["ndcg100"], nan=0.0), r["index"]))
    names = [a for a in GRID_AXES if a in axes]
    with open(base / "grid.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "index", *names, "seed", "ndcg100", "status"])
        for rank, r in enumerate(rows, start=1):
            w.writerow([rank, r["index"], *(r[a] for a in names), cfg["model"]["seed"] + r["index"],
                        repr(r["ndcg100"]), r["status"]])
    for rank, r in enumerate(rows[:10], start=1):
        params = " ".join(f"{a}={r[a]}" for a in names)
        print(f"{rank:>3} {params} ndcg@100={r['ndcg100']:.5f} {r['status']}")
    return rows


def cmd_negdump(cfg: Config, model_path: str | None, iteration: int, out: str | None) -> None:
    data = _load_fold(cfg, 0, need_sppmi=False)
    path = Path(model_path) if model_path else _fold_dir(cfg.run_dir("models"), 0) / "model.rme"
    state, _ = model.load_model(_require(path, "model file"))
    if (state.n_users, state.n_items) != data.train.shape:
        raise ConfigError(f"model {path} does not match the prepared split")
    negs = negsample.draw_negatives(state, data.train, cfg.neg_config(), iteration=iteration)
    if out is None:
        _write_negatives(Path(), negs, data.train, fh=sys.stdout)
    else:
        _write_negatives(Path(out), negs, data.train)


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="INI configuration file")
    common.add_argument("-v", "--verbose", action="count", default=0)
    for section in SECTIONS:
        group = common.add_argument_group(f"[{section}]")
        for f in FIELDS:
            if f.section == section:
                group.add_argument(f"--{f.flag}", dest=f"cfg:{f.section}:{f.key}", metavar=f.key.upper(),
                                   help=f"{f.help + '; ' if f.help else ''}default {f.default}")

    parser = argparse.ArgumentParser(prog="rme", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("prep", parents=[common], help="parse, filter, split and build SPPMI matrices")
    sub.add_parser("train", parents=[common], help="fit one model per fold")
    p = sub.add_parser("eval", parents=[common], help="score the test split")
    p.add_argument("--model", help="model file (defaults to the run's own)")
    p.add_argument("--against", metavar="RUN_ID", help="compare per-fold values with another run")
    p = sub.add_parser("grid", parents=[common], help="grid search on the validation split")
    p.add_argument("--preset", choices=sorted(PRESETS), help="default grid")
    p.add_argument("--lam-grid", type=_floats)
    p.add_argument("--lam-context-grid", type=_floats)
    p.add_argument("--k-grid", type=lambda s: tuple(int(x) for x in _floats(s)))
    p.add_argument("--tau-grid", type=_floats)
    p.add_argument("--jobs", type=int, default=1, help="grid cells evaluated in parallel")
    p = sub.add_parser("negdump", parents=[common], help="draw negatives from a trained model")
    p.add_argument("--model")
    p.add_argument("--iteration", type=int, default=1)
    p.add_argument("--out", help="output file (default stdout)")
    return parser


def _grid_axes(args) -> dict[str, Sequence]:
    axes = {name: getattr(args, f"{name}_grid") for name in GRID_AXES}
    axes = {k: v for k, v in axes.items() if v is not None}
    if args.preset:
        axes = {**PRESETS[args.preset], **axes}
    return axes or dict(PRESETS["static"])


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {}
    for dest, val in vars(args).items():
        if dest.startswith("cfg:") and val is not None:
            _, section, key = dest.split(":")
            overrides[section, key] = val
    try:
        cfg = Config.resolve(args.config, overrides)
        if args.command == "prep":
            cmd_prep(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "eval":
            cmd_eval(cfg, args.model, args.against)
        elif args.command == "grid":
            cmd_grid(cfg, _grid_axes(args), args.jobs)
        elif args.command == "negdump":
            cmd_negdump(cfg, args.model, args.iteration, args.out)
    except ConfigError as exc:
        print(f"rme: error=ConfigError {exc}", file=sys.stderr)
        return 2
    except RMEError as exc:
        print(f"rme: error={exc.category} {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"rme: error={type(exc).__name__} {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
