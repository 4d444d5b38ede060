"""Command-line pipeline: synth, preprocess, train, prune, quantize, pack, eval, infer, report.

Stages hand off through files. Every stage takes ``--config`` (a RunConfig JSON
file) and derives its own seed from the run seed and the stage name, so any
stage can be rerun alone and reproduce its artifact byte for byte.

Exit codes: 0 success, 1 invalid input (bad config, flags, data or model file),
2 runtime or numeric failure. Failures print one JSON line on stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import CLASSES
from .afib_model import (ArchConfig, Model, build_model, feature_map_sparsity, load_model, save_model,
                         weight_sparsity, write_npz)
from .errors import FormatError, ValidationError
from .metrics import EvalReport
from .packfmt import Scheme, pack, size_report, unpack
from .preprocess import SplitSpec, fit_length, padding_report, prepare_inputs, standardize, \
    stratified_split, write_padding_report
from .prune import PruneSchedule, filter_correlation_prune, iterative_prune, write_prune_csv
from .quantize import QuantConfig, qat_train, sweep_bitwidths, write_sweep_csv
from .rng import derive_seed
from .shift_infer import quantized_forward
from .signal_io import generate_synthetic_dataset, load_dataset, load_signal, save_dataset
from .train import Hyperparams, grid_search, train

log = logging.getLogger("afibshift")

# --- RunConfig ---------------------------------------------------------------

_HP = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "learning_rate": {"type": "number", "minimum": 0},
        "weight_decay": {"type": "number", "minimum": 0},
        "batch_size": {"type": "integer", "minimum": 1},
        "max_epochs": {"type": "integer", "minimum": 1},
        "patience": {"type": "integer", "minimum": 1},
    },
}

RUN_CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "arch": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "input_length": {"type": "integer", "minimum": 1},
                "in_channels": {"type": "integer", "minimum": 1},
                "n_classes": {"const": len(CLASSES)},
                "conv_layers": {"type": "array", "minItems": 1, "items": {
                    "type": "object", "additionalProperties": False, "required": ["channels"],
                    "properties": {
                        "channels": {"type": "integer", "minimum": 1},
                        "kernel_size": {"type": "integer", "minimum": 1},
                        "pool_after": {"type": "boolean"},
                        "pool_window": {"type": "integer", "minimum": 1},
                    }}},
                "dense_layers": {"type": "array", "minItems": 1, "items": {
                    "type": "object", "additionalProperties": False, "required": ["units"],
                    "properties": {"units": {"type": "integer", "minimum": 1}}}},
            },
        },
        "hyperparams": _HP,
        "grid": {"type": "array", "items": _HP},
        "grid_folds": {"type": "integer", "minimum": 2},
        "prune": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sparsity_steps": {"type": "array", "minItems": 1,
                                   "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}},
                "fine_tune": _HP,
                "filter": {
                    "type": "object", "additionalProperties": False, "required": ["clusters_k", "tau"],
                    "properties": {
                        "clusters_k": {"type": "integer", "minimum": 1},
                        "tau": {"type": "number", "minimum": 0},
                        "calibration_records": {"type": "integer", "minimum": 1},
                    }},
            },
        },
        "quant": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "b": {"type": "integer", "minimum": 2},
                "clip_margin": {"type": "number", "minimum": 0},
                "qat": _HP,
                "sweep_bits": {"type": "array", "items": {"type": "integer", "minimum": 2}},
            },
        },
        "synth": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_per_class": {"type": "integer", "minimum": 1},
                "length_range": {"type": "array", "items": {"type": "integer", "minimum": 1},
                                 "minItems": 2, "maxItems": 2},
                "format": {"enum": ["csv_int", "raw_i16le"]},
            },
        },
        "split": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"fractions": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                                         "minItems": 3, "maxItems": 3}},
        },
        "pack": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"scheme": {"enum": ["sparse_rle4", "dense_f32"]}},
        },
        "shift": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"frac_bits": {"type": "integer", "minimum": 0, "maximum": 30}},
        },
        "paths": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"reports_dir": {"type": "string"}},
        },
    },
}


@dataclass
class RunConfig:
    seed: int = 0
    arch: ArchConfig = field(default_factory=ArchConfig)
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    grid: list[Hyperparams] = field(default_factory=list)
    grid_folds: int = 5
    prune: PruneSchedule = field(default_factory=PruneSchedule)
    filter_prune: dict | None = None
    quant: QuantConfig = field(default_factory=QuantConfig)
    qat: Hyperparams = field(default_factory=lambda: Hyperparams(max_epochs=20, patience=5))
    sweep_bits: list[int] = field(default_factory=list)
    n_per_class: int = 100
    length_range: tuple[int, int] = (600, 1200)
    signal_format: str = "csv_int"
    split: SplitSpec = field(default_factory=SplitSpec)
    scheme: Scheme = Scheme.SPARSE_RLE4
    frac_bits: int = 8
    reports_dir: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        try:
            jsonschema.validate(d, RUN_CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ValidationError(f"config {where}: {exc.message}") from None
        prune = d.get("prune", {})
        quant = d.get("quant", {})
        synth = d.get("synth", {})
        default_prune = PruneSchedule()
        return cls(
            seed=d.get("seed", 0),
            arch=ArchConfig.from_dict(d.get("arch", {})),
            hyperparams=Hyperparams(**d.get("hyperparams", {})),
            grid=[Hyperparams(**g) for g in d.get("grid", [])],
            grid_folds=d.get("grid_folds", 5),
            prune=PruneSchedule(tuple(prune.get("sparsity_steps", default_prune.sparsity_steps)),
                                Hyperparams(**{**_hp_dict(default_prune.fine_tune_hp),
                                               **prune.get("fine_tune", {})})),
            filter_prune=prune.get("filter"),
            quant=QuantConfig(quant.get("b", 3), quant.get("clip_margin", 0.5)),
            qat=Hyperparams(**{**_hp_dict(cls.qat_default()), **quant.get("qat", {})}),
            sweep_bits=list(quant.get("sweep_bits", [])),
            n_per_class=synth.get("n_per_class", 100),
            length_range=tuple(synth.get("length_range", (600, 1200))),
            signal_format=synth.get("format", "csv_int"),
            split=SplitSpec(tuple(d.get("split", {}).get("fractions", (0.70, 0.15, 0.15))), d.get("seed", 0)),
            scheme=Scheme.SPARSE_RLE4 if d.get("pack", {}).get("scheme", "sparse_rle4") == "sparse_rle4"
            else Scheme.DENSE_F32,
            frac_bits=d.get("shift", {}).get("frac_bits", 8),
            reports_dir=d.get("paths", {}).get("reports_dir"),
        )

    @staticmethod
    def qat_default() -> Hyperparams:
        return Hyperparams(max_epochs=20, patience=5)

    def stage_seed(self, stage: str) -> int:
        return derive_seed(self.seed, stage)


def _hp_dict(hp: Hyperparams) -> dict:
    return {"learning_rate": hp.learning_rate, "weight_decay": hp.weight_decay, "batch_size": hp.batch_size,
            "max_epochs": hp.max_epochs, "patience": hp.patience}


def load_run_config(path, seed_override: int | None = None) -> RunConfig:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path}: invalid JSON ({exc})") from None
    if not isinstance(d, dict):
        raise ValidationError(f"config {path}: top level must be an object")
    if seed_override is not None:
        d["seed"] = seed_override
    return RunConfig.from_dict(d)


# --- file helpers ------------------------------------------------------------

SPLITS = ("train", "val", "test")


def save_prepared(path, x: np.ndarray, y: np.ndarray, ids, parts) -> None:
    arrays = {}
    for name, idx in zip(SPLITS, parts):
        arrays[f"x_{name}"] = x[idx]
        arrays[f"y_{name}"] = y[idx].astype(np.int64)
        arrays[f"id_{name}"] = np.array([ids[i] for i in idx], dtype="U32")
    write_npz(path, arrays)


def load_prepared(path) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    try:
        with np.load(Path(path), allow_pickle=False) as z:
            return {s: (z[f"x_{s}"], z[f"y_{s}"]) for s in SPLITS}
    except (OSError, KeyError, ValueError) as exc:
        raise ValidationError(f"cannot read prepared data {path}: {exc}") from None


def _side_path(cfg: RunConfig, out: Path, suffix: str) -> Path:
    base = Path(cfg.reports_dir) if cfg.reports_dir else out.parent
    base.mkdir(parents=True, exist_ok=True)
    return base / f"{out.stem}.{suffix}"


def _load_any_model(path: Path) -> tuple[Model, int, str]:
    """Model plus its stored size in bytes; ``.sqnz`` files are unpacked."""
    if path.suffix == ".sqnz":
        data = path.read_bytes()
        return unpack(data).to_model(), len(data), "packed"
    m = load_model(path)
    return m, 4 * m.params.n_elements(), "dense_f32"


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --- stages --------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, args) -> None:
    ds = generate_synthetic_dataset(cfg.n_per_class, cfg.length_range, cfg.stage_seed("synth"))
    save_dataset(ds, args.out, cfg.signal_format)
    log.info("wrote %d records to %s", len(ds), args.out)


def cmd_preprocess(cfg: RunConfig, args) -> None:
    ds = load_dataset(args.inp)
    length = cfg.arch.input_length
    x = prepare_inputs(ds, length)
    parts = stratified_split(ds, SplitSpec(cfg.split.fractions, cfg.stage_seed("split")))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_prepared(out, x, ds.labels, [r.record_id for r in ds], parts)
    write_padding_report(padding_report(ds, length), _side_path(cfg, out, "padding.csv"), length)
    log.info("split sizes train=%d val=%d test=%d", *(len(p) for p in parts))


def cmd_train(cfg: RunConfig, args) -> None:
    data = load_prepared(args.inp)
    x_tr, y_tr = data["train"]
    out = Path(args.out)
    hp = cfg.hyperparams
    if cfg.grid:
        res = grid_search(cfg.grid, cfg.arch, x_tr, y_tr, cfg.grid_folds, cfg.stage_seed("grid"),
                          cfg.stage_seed("init"))
        hp = res.best
        _write_json(_side_path(cfg, out, "grid.json"),
                    {"best": _hp_dict(hp), "mean_accuracy": res.mean_accuracy,
                     "fold_accuracy": res.fold_accuracy, "grid": [_hp_dict(g) for g in cfg.grid]})
    model = build_model(cfg.arch, cfg.stage_seed("init"))
    model, hist = train(model, data["train"], data["val"], hp, cfg.stage_seed("train"))
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    hist.to_csv(_side_path(cfg, out, "history.csv"))


def cmd_prune(cfg: RunConfig, args) -> None:
    data = load_prepared(args.data)
    model = load_model(args.inp)
    out = Path(args.out)
    if cfg.filter_prune:
        fp = cfg.filter_prune
        calib = data["train"][0][:fp.get("calibration_records", 64)]
        model, layers = filter_correlation_prune(model, calib, fp["clusters_k"], fp["tau"],
                                                 cfg.stage_seed("filter_prune"))
        _write_json(_side_path(cfg, out, "filters.json"),
                    [{"layer": r.layer, "removed": r.removed, "degenerate": r.degenerate} for r in layers])
    model, rep = iterative_prune(model, cfg.prune, data["train"], data["val"], cfg.stage_seed("prune"))
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    write_prune_csv(rep, _side_path(cfg, out, "prune.csv"))


def cmd_quantize(cfg: RunConfig, args) -> None:
    data = load_prepared(args.data)
    model = load_model(args.inp)
    out = Path(args.out)
    q = qat_train(model, cfg.quant, data["train"], data["val"], cfg.qat, cfg.stage_seed("quantize"))
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(q, out)
    if cfg.sweep_bits:
        rows = sweep_bitwidths(model, cfg.sweep_bits, data["train"], data["val"], data["test"], cfg.qat,
                               cfg.stage_seed("quantize"))
        write_sweep_csv(rows, _side_path(cfg, out, "sweep.csv"))


def cmd_pack(cfg: RunConfig, args) -> None:
    model = load_model(args.inp)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    blob = pack(model, cfg.scheme)
    out.write_bytes(blob)
    rep = size_report(model, cfg.scheme)
    rep["scheme"] = cfg.scheme.name.lower()
    _write_json(_side_path(cfg, out, "size.json"), rep)


def cmd_eval(cfg: RunConfig, args) -> None:
    data = load_prepared(args.data)
    x, y = data[args.split]
    path = Path(args.inp)
    model, nbytes, storage = _load_any_model(path)
    extra = {"model_bytes": nbytes, "storage": storage, "split": args.split, "engine": args.engine,
             "n_records": int(len(y))}
    if args.engine == "shift":
        packed = unpack(pack(model))
        preds, executed, skipped = [], 0, 0
        for rec in x:
            probs, ops = quantized_forward(packed, rec, cfg.frac_bits)
            preds.append(int(probs.argmax()))
            executed, skipped = ops.macs_executed, ops.macs_skipped_zero_weight
        extra.update(frac_bits=cfg.frac_bits, macs_executed_per_record=executed,
                     macs_skipped_zero_weight_per_record=skipped)
        preds = np.array(preds)
    else:
        preds = model.predict(x)
    report = EvalReport.from_predictions(preds, y, model_sparsity=weight_sparsity(model),
                                         feature_map_sparsity=feature_map_sparsity(model, x), extra=extra)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.save(out)


def cmd_infer(cfg: RunConfig, args) -> None:
    path = Path(args.inp)
    samples = load_signal(path, "raw_i16le" if path.suffix == ".bin" else "csv_int")
    packed = unpack(Path(args.model).read_bytes())
    x = fit_length(standardize(samples), packed.arch.input_length).values
    probs, _ = quantized_forward(packed, x[None, :], cfg.frac_bits)
    print(",".join([CLASSES[int(probs.argmax())]] + [f"{p:.6f}" for p in probs]))


REPORT_COLUMNS = ["model", "accuracy", "precision", "sensitivity", "specificity", "f1", "cinc_f1",
                  "model_sparsity", "feature_map_sparsity", "model_bytes", "compression_ratio"]


def cmd_report(cfg: RunConfig, args) -> None:
    """One row per eval JSON; the first row is the reference for compression_ratio."""
    rows = []
    for p in args.inp_list:
        try:
            r = EvalReport.load(p)
        except (json.JSONDecodeError, TypeError) as exc:
            raise ValidationError(f"cannot read eval report {p}: {exc}") from None
        rows.append((Path(p).stem, r))
    ref_bytes = rows[0][1].extra.get("model_bytes")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for name, r in rows:
            nbytes = r.extra.get("model_bytes")
            ratio = f"{ref_bytes / nbytes:.2f}" if ref_bytes and nbytes else ""
            w.writerow([name] + [f"{getattr(r, k):.4f}" for k in REPORT_COLUMNS[1:9]] +
                       ["" if nbytes is None else nbytes, ratio])


# --- argument parsing ---------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"usage: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="afibshift", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def stage(name, needs_in=True, needs_data=False, help=None):
        s = sub.add_parser(name, help=help)
        s.add_argument("--config", required=True)
        s.add_argument("--seed", type=int, default=None, help="override the config seed")
        if needs_in:
            s.add_argument("--in", dest="inp", required=True)
        if needs_data:
            s.add_argument("--data", required=True, help="prepared .npz from the preprocess stage")
        s.add_argument("--out", required=True)
        return s

    stage("synth", needs_in=False, help="generate the synthetic dataset")
    stage("preprocess", help="standardize, fit length, split; dataset dir -> .npz")
    stage("train", help="train a baseline model")
    stage("prune", needs_data=True, help="iterative magnitude pruning with fine-tuning")
    stage("quantize", needs_data=True, help="log quantization-aware training")
    stage("pack", help="serialize a quantized model to SQNZ")
    ev = stage("eval", needs_data=True, help="score a model (.npz or .sqnz) on a split")
    ev.add_argument("--split", choices=SPLITS, default="test")
    ev.add_argument("--engine", choices=("float", "shift"), default="float")

    inf = sub.add_parser("infer", help="classify one signal file with a packed model")
    inf.add_argument("--model", required=True)
    inf.add_argument("--in", dest="inp", required=True)
    inf.add_argument("--config", default=None)
    inf.add_argument("--seed", type=int, default=None)

    rep = sub.add_parser("report", help="summary CSV from eval JSON files")
    rep.add_argument("--config", required=True)
    rep.add_argument("--seed", type=int, default=None)
    rep.add_argument("--in", dest="inp_list", nargs="+", required=True)
    rep.add_argument("--out", required=True)
    return p


COMMANDS = {
    "synth": cmd_synth, "preprocess": cmd_preprocess, "train": cmd_train, "prune": cmd_prune,
    "quantize": cmd_quantize, "pack": cmd_pack, "eval": cmd_eval, "infer": cmd_infer, "report": cmd_report,
}


def _fail(code: int, kind: str, command: str | None, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "command": command, "message": message, "exit": code}) + "\n")
    return code


def main(argv=None) -> int:
    command = None
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.config is None:
            cfg = RunConfig()
        else:
            cfg = load_run_config(args.config, args.seed)
        COMMANDS[command](cfg, args)
    except (ValidationError, FormatError, FileNotFoundError, IsADirectoryError) as exc:
        return _fail(1, type(exc).__name__, command, str(exc))
    except Exception as exc:  # runtime failures, numeric or otherwise
        return _fail(2, type(exc).__name__, command, str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
