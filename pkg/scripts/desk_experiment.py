"""Desk-scale reproduction of the accuracy/size trade-offs on synthetic data.

Runs baseline training, iterative pruning, a bit-width sweep with quantization-aware
training, packing, and integer shift inference, then writes every table as CSV/JSON
into ``--out``.

    python3 scripts/desk_experiment.py --out results/desk --n-per-class 150
"""
from __future__ import annotations

import argparse
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from afibshift.afib_model import (ArchConfig, ConvSpec, DenseSpec, build_model, feature_map_sparsity,
                                  model_size_bytes, weight_sparsity)
from afibshift.metrics import EvalReport
from afibshift.packfmt import pack, size_report, unpack
from afibshift.preprocess import SplitSpec, padding_report, prepare_inputs, stratified_split, write_padding_report
from afibshift.prune import PruneSchedule, iterative_prune, write_prune_csv
from afibshift.quantize import QuantConfig, qat_train, sweep_bitwidths, write_sweep_csv
from afibshift.rng import derive_seed
from afibshift.shift_infer import quantized_forward
from afibshift.signal_io import generate_synthetic_dataset
from afibshift.train import Hyperparams, train

log = logging.getLogger("desk_experiment")


@dataclass
class DeskConfig:
    seed: int = 6
    n_per_class: int = 150
    length_range: tuple[int, int] = (400, 800)
    input_length: int = 600
    channels: int = 16
    baseline: Hyperparams = field(default_factory=lambda: Hyperparams(0.05, 1e-4, 32, 60, 10))
    prune_steps: tuple[float, ...] = (0.5, 0.7, 0.8, 0.9)
    fine_tune: Hyperparams = field(default_factory=lambda: Hyperparams(0.05, 1e-4, 32, 8, 4))
    qat: Hyperparams = field(default_factory=lambda: Hyperparams(0.05, 1e-4, 32, 15, 5))
    sweep_bits: tuple[int, ...] = (2, 3, 4, 8)
    frac_bits: int = 12

    def arch(self) -> ArchConfig:
        c = self.channels
        return ArchConfig(input_length=self.input_length,
                          conv_layers=(ConvSpec(c, 7, True, 5), ConvSpec(c, 7, True, 5), ConvSpec(c, 7), ConvSpec(c, 7)),
                          dense_layers=(DenseSpec(64), DenseSpec(4)))


def _report(model, x, y, **extra) -> EvalReport:
    return EvalReport.from_predictions(model.predict(x), y, model_sparsity=weight_sparsity(model),
                                       feature_map_sparsity=feature_map_sparsity(model, x), extra=extra)


def run(cfg: DeskConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    seed = lambda name: derive_seed(cfg.seed, name)  # noqa: E731

    ds = generate_synthetic_dataset(cfg.n_per_class, cfg.length_range, seed("synth"))
    write_padding_report(padding_report(ds, cfg.input_length), out / "padding.csv", cfg.input_length)
    x, y = prepare_inputs(ds, cfg.input_length), ds.labels
    tr, va, te = stratified_split(ds, SplitSpec(seed=seed("split")))
    train_set, val_set, test_set = (x[tr], y[tr]), (x[va], y[va]), (x[te], y[te])

    base, hist = train(build_model(cfg.arch(), seed("init")), train_set, val_set, cfg.baseline, seed("train"))
    hist.to_csv(out / "baseline_history.csv")
    base_rep = _report(base, *test_set, model_bytes=model_size_bytes(base, 32).total_bytes)
    base_rep.save(out / "eval_baseline.json")
    log.info("baseline test accuracy %.4f", base_rep.accuracy)

    pruned, steps = iterative_prune(base, PruneSchedule(cfg.prune_steps, cfg.fine_tune), train_set, val_set,
                                    seed("prune"))
    write_prune_csv(steps, out / "prune_steps.csv")

    rows = sweep_bitwidths(pruned, cfg.sweep_bits, train_set, val_set, test_set, cfg.qat, seed("quantize"))
    write_sweep_csv(rows, out / "bit_sweep.csv")

    q3 = qat_train(pruned, QuantConfig(3), train_set, val_set, cfg.qat, seed("quantize"))
    blob = pack(q3)
    (out / "model.sqnz").write_bytes(blob)
    sizes = size_report(q3)
    (out / "size.json").write_text(json.dumps(sizes, indent=2, sort_keys=True) + "\n")
    opt_rep = _report(q3, *test_set, model_bytes=len(blob))
    opt_rep.save(out / "eval_optimised.json")

    packed = unpack(blob)
    shift_pred, float_pred = [], q3.predict(test_set[0])
    for rec in test_set[0]:
        probs, ops = quantized_forward(packed, rec, cfg.frac_bits)
        shift_pred.append(int(probs.argmax()))
    shift_pred = np.array(shift_pred)
    summary = {
        "config": asdict(cfg),
        "baseline_accuracy": base_rep.accuracy,
        "optimised_accuracy": opt_rep.accuracy,
        "accuracy_drop_points": 100 * (base_rep.accuracy - opt_rep.accuracy),
        "shift_engine_accuracy": float(np.mean(shift_pred == test_set[1])),
        "shift_vs_float_argmax_agreement": float(np.mean(shift_pred == float_pred)),
        "macs_executed_per_record": ops.macs_executed,
        "macs_skipped_zero_weight_per_record": ops.macs_skipped_zero_weight,
        "sizes": sizes,
        "sweep": [asdict(r) for r in rows],
        "seconds": time.perf_counter() - t0,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=str) + "\n")
    return summary


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/desk")
    ap.add_argument("--seed", type=int, default=DeskConfig.seed)
    ap.add_argument("--n-per-class", type=int, default=DeskConfig.n_per_class)
    ap.add_argument("--channels", type=int, default=DeskConfig.channels)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    s = run(DeskConfig(seed=args.seed, n_per_class=args.n_per_class, channels=args.channels), Path(args.out))
    print(f"baseline {s['baseline_accuracy']:.4f}  optimised {s['optimised_accuracy']:.4f}  "
          f"packed {s['sizes']['packed_bytes']} B (x{s['sizes']['ratio_packed']:.1f})  "
          f"shift/float agreement {s['shift_vs_float_argmax_agreement']:.4f}")


if __name__ == "__main__":
    main()
