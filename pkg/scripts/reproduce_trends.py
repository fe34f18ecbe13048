#!/usr/bin/env python3
"""Headline comparison tables for the modeled accelerator.

Produces, on stdout and under --out:
  1. throughput of the die/channel designs (SLC NAND, sparsity 0.5, pipelined)
     against the PCIe-bound GPU baselines, per model shape;
  2. throughput and aggregate read bandwidth versus sparsity for the four
     design points on a selected shape;
  3. per-token latency and energy breakdowns (pipelining disabled).

Everything is analytic/simulated; only shapes and masks matter, no weights.
"""

import argparse
import json
from pathlib import Path

from slim.config import MODEL_PRESETS
from slim.model import ModelConfig
from slim.pim import DDR4_2400, BitSerialCostModel
from slim.storage import nand_preset
from slim.system import baseline_preset, evaluate_slim, run_baseline

DRAM_GEO, DRAM_TIMING = DDR4_2400
COST = BitSerialCostModel()
SPARSITIES = (0.0, 0.25, 0.5, 0.75)


def model_for(name: str, seed: int) -> ModelConfig:
    return ModelConfig(**MODEL_PRESETS[name], seed=seed)


def slim_point(cfg, nand, level, sparsity, scheduler, seed):
    geo, timing = nand_preset(nand, level)
    return evaluate_slim(cfg, geo, timing, DRAM_GEO, DRAM_TIMING, COST, sparsity,
                         scheduler=scheduler, seed=seed, collect_trace=False)


def headline_table(models, seed):
    print("\n== tokens/s at sparsity 0.5 (SLC NAND, pipelined) vs dense GPU baselines")
    print(f"{'model':>18} {'die':>8} {'channel':>8} {'ssd_gpu':>9} {'dram_gpu':>9} "
          f"{'die/ssd_gpu':>11} {'die/dram_gpu':>12}")
    rows = {}
    for name in models:
        cfg = model_for(name, seed)
        die = slim_point(cfg, "slc", "die", 0.5, "pipelined", seed).throughput
        ch = slim_point(cfg, "slc", "channel", 0.5, "pipelined", seed).throughput
        ssd = run_baseline(baseline_preset("ssd_gpu"), cfg, 0.0).throughput
        dram = run_baseline(baseline_preset("dram_gpu"), cfg, 0.0).throughput
        print(f"{name:>18} {die:8.2f} {ch:8.2f} {ssd:9.3f} {dram:9.3f} "
              f"{die / ssd:11.1f} {die / dram:12.2f}")
        rows[name] = {"die": die, "channel": ch, "ssd_gpu": ssd, "dram_gpu": dram}
    return rows


def sparsity_table(name, seed):
    cfg = model_for(name, seed)
    print(f"\n== {name}: throughput (tok/s) and raw read bandwidth (GB/s) vs sparsity")
    print(f"{'design':>12} " + " ".join(f"{f's={s}':>16}" for s in SPARSITIES))
    rows = {}
    for nand in ("slc", "tlc"):
        for level in ("die", "channel"):
            cells = []
            pts = []
            for s in SPARSITIES:
                r = slim_point(cfg, nand, level, s, "pipelined", seed)
                bw = r.raw_bytes / r.phases.t_ssd / 1e9
                cells.append(f"{r.throughput:7.2f}/{bw:6.2f}")
                pts.append({"sparsity": s, "tok_per_s": r.throughput, "raw_gbps": bw})
            print(f"{level + '-' + nand:>12} " + " ".join(f"{c:>16}" for c in cells))
            rows[f"{level}-{nand}"] = pts
    return rows


def breakdown_table(models, seed):
    print("\n== per-token breakdown at sparsity 0.5 (die-level SLC, sequential)")
    print(f"{'model':>18} {'qkvo%':>7} {'mha%':>7} {'pred%':>7} {'ffn(ssd)%':>10} "
          f"{'energy mJ':>10}")
    rows = {}
    for name in models:
        cfg = model_for(name, seed)
        r = slim_point(cfg, "slc", "die", 0.5, "sequential", seed)
        total = r.phases.t_dram + r.phases.t_ssd
        shares = {
            "qkvo": r.dram.qkvo.seconds / total,
            "mha": r.dram.mha.seconds / total,
            "pred": r.dram.predict.seconds / total,
            "ffn_ssd": r.phases.t_ssd / total,
        }
        print(f"{name:>18} {shares['qkvo']:7.1%} {shares['mha']:7.1%} "
              f"{shares['pred']:7.1%} {shares['ffn_ssd']:10.1%} "
              f"{r.energy.total * 1e3:10.2f}")
        rows[name] = dict(shares, energy_mj=r.energy.total * 1e3)
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="slim_out/trends", help="output directory")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--quick", action="store_true",
                    help="single model shape, die-level only")
    args = ap.parse_args()

    models = ["llama2_7b_shape"] if args.quick else [
        "llama2_7b_shape", "llama2_13b_shape", "mixtral_8x7b_shape",
        "deepseek_16b_shape"]
    doc = {
        "headline": headline_table(models, args.seed),
        "sparsity_sweep": sparsity_table("llama2_7b_shape", args.seed),
        "breakdown": breakdown_table(models, args.seed),
    }
    if not args.quick:
        doc["sparsity_sweep_moe"] = sparsity_table("deepseek_16b_shape", args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trends.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"\nwrote {out / 'trends.json'}")


if __name__ == "__main__":
    main()
