"""Scenario execution: turn a resolved config into report rows, and the
train/infer pipelines behind the CLI."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import ScenarioConfig, config_hash
from .container import read_tensors, write_tensors
from .errors import ConfigError
from .model import Decoder, LayerWeights, harvest_ffn_inputs
from .predictor import (
    Predictor,
    build_threshold_table,
    init_from_svd,
    measured_sparsity,
    predict_mask,
    thresholds_from_json,
    thresholds_to_json,
    train,
)
from .storage import nand_preset
from .system import (
    ENERGY_COMPONENTS,
    baseline_preset,
    evaluate_slim,
    run_baseline,
)
from .trace import write_ldjson

log = logging.getLogger("slim")

REPORT_FIELDS = (
    "scenario", "design_level", "nand", "sparsity", "tok_per_s",
    "latency_ms_per_token", "raw_gbps", "eff_gbps", "energy_mj_per_token",
    *(f"energy_{c}_mj" for c in ENERGY_COMPONENTS),
    "t_dram_ms", "t_ssd_ms", "weights_write_ms", "config_hash",
)


def _round(x: float) -> float:
    # full precision is noise here; 6 significant-ish digits keep reports stable
    return float(f"{x:.6g}")


def _slim_row(cfg: ScenarioConfig, nand: str, pe_level: str, sparsity: float,
              digest: str, emit_trace_to=None) -> dict:
    geometry, timing = ((cfg.geometry, cfg.nand_timing)
                        if (nand, pe_level) == (cfg.nand, cfg.pe_level)
                        else nand_preset(nand, pe_level))
    res = evaluate_slim(cfg.model, geometry, timing, cfg.dram_geometry,
                        cfg.dram_timing, cfg.cost_model, sparsity,
                        scheduler=cfg.scheduler, n_tokens=cfg.n_tokens,
                        seed=cfg.seed, params=cfg.nsp, constants=cfg.energy,
                        bytes_per_elem=cfg.bytes_per_elem)
    if emit_trace_to is not None:
        emit_trace_to.extend(res.trace)
    row = {
        "scenario": cfg.model_name,
        "design_level": pe_level,
        "nand": nand,
        "sparsity": sparsity,
        "tok_per_s": _round(res.throughput),
        "latency_ms_per_token": _round(res.latency_s_per_token * 1e3),
        "raw_gbps": _round(res.raw_bytes / res.phases.t_ssd / 1e9),
        "eff_gbps": _round(res.useful_bytes / res.phases.t_ssd / 1e9),
        "energy_mj_per_token": _round(res.energy.total * 1e3),
        "t_dram_ms": _round(res.phases.t_dram * 1e3),
        "t_ssd_ms": _round(res.phases.t_ssd * 1e3),
        "weights_write_ms": _round(res.weights_write_s * 1e3),
        "config_hash": digest,
    }
    for c in ENERGY_COMPONENTS:
        row[f"energy_{c}_mj"] = _round(res.energy.components[c] * 1e3)
    return row


def _baseline_row(cfg: ScenarioConfig, kind: str, digest: str) -> dict:
    bl = baseline_preset(kind, cfg.geometry, cfg.nand_timing)
    res = run_baseline(bl, cfg.model, cfg.baseline_sparsity, cfg.energy,
                       cfg.bytes_per_elem)
    rate = res.bytes_moved / res.transfer_s / 1e9 if res.transfer_s else 0.0
    row = {
        "scenario": cfg.model_name,
        "design_level": kind,
        "nand": "-",
        "sparsity": cfg.baseline_sparsity,
        "tok_per_s": _round(res.throughput),
        "latency_ms_per_token": _round(res.latency_s * 1e3),
        "raw_gbps": _round(rate),
        "eff_gbps": _round(rate),
        "energy_mj_per_token": _round(res.energy.total * 1e3),
        "t_dram_ms": 0.0,
        "t_ssd_ms": 0.0,
        "weights_write_ms": 0.0,
        "config_hash": digest,
    }
    for c in ENERGY_COMPONENTS:
        row[f"energy_{c}_mj"] = _round(res.energy.components[c] * 1e3)
    return row


def scenario_rows(cfg: ScenarioConfig, sweep: bool = False,
                  trace_sink: list | None = None) -> list[dict]:
    """Evaluate the scenario's design points over its sparsity grid, plus the
    selected baselines. ``sweep`` expands to all four design-level/NAND
    combinations. Points run in a work pool; rows come back in a fixed order."""
    digest = config_hash(cfg)
    if sweep:
        points = [(nand, level) for level in ("die", "channel")
                  for nand in ("slc", "tlc")]
    else:
        points = [(cfg.nand, cfg.pe_level)]
    jobs = [(nand, level, s) for nand, level in points
            for s in cfg.sparsity_targets]

    first = jobs[0]
    def work(job):
        nand, level, s = job
        sink = trace_sink if (job == first) else None
        return _slim_row(cfg, nand, level, s, digest, emit_trace_to=sink)

    with ThreadPoolExecutor(max_workers=4) as pool:
        rows = list(pool.map(work, jobs))
    for kind in cfg.baselines:
        rows.append(_baseline_row(cfg, kind, digest))
    return rows


def write_report(rows: list[dict], out_dir: Path) -> tuple[Path, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "report.csv"
    json_path = out_dir / "report.json"
    lines = [",".join(REPORT_FIELDS)]
    for row in rows:
        lines.append(",".join(str(row[f]) for f in REPORT_FIELDS))
    csv_path.write_text("\n".join(lines) + "\n")
    json_path.write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


# --- train / infer pipelines -------------------------------------------------

def _load_decoder(cfg: ScenarioConfig) -> Decoder:
    fixture = cfg.paths.model_fixture
    if fixture is None:
        return Decoder.synth(cfg.model)
    path = Path(fixture)
    if not path.exists():
        raise ConfigError(f"model fixture not found: {path}")
    tensors = read_tensors(path)
    layers = []
    m = cfg.model
    try:
        for li in range(m.n_dec):
            pre = f"layer{li:02d}."
            layers.append(LayerWeights(
                w_q=tensors[pre + "w_q"], w_k=tensors[pre + "w_k"],
                w_v=tensors[pre + "w_v"], w_o=tensors[pre + "w_o"],
                w_g=[tensors[f"{pre}expert{e:03d}.w_g"] for e in range(m.n_expert)],
                w_u=[tensors[f"{pre}expert{e:03d}.w_u"] for e in range(m.n_expert)],
                w_d=[tensors[f"{pre}expert{e:03d}.w_d"] for e in range(m.n_expert)],
                router=tensors.get(pre + "router"),
            ))
    except KeyError as exc:
        raise ConfigError(f"fixture {path} is missing tensor {exc}") from exc
    return Decoder(cfg=cfg.model, layers=layers)


def save_model_fixture(dec: Decoder, path) -> None:
    tensors = {}
    for li, lw in enumerate(dec.layers):
        pre = f"layer{li:02d}."
        tensors[pre + "w_q"] = lw.w_q
        tensors[pre + "w_k"] = lw.w_k
        tensors[pre + "w_v"] = lw.w_v
        tensors[pre + "w_o"] = lw.w_o
        for e in range(len(lw.w_g)):
            tensors[f"{pre}expert{e:03d}.w_g"] = lw.w_g[e]
            tensors[f"{pre}expert{e:03d}.w_u"] = lw.w_u[e]
            tensors[f"{pre}expert{e:03d}.w_d"] = lw.w_d[e]
        if lw.router is not None:
            tensors[pre + "router"] = lw.router
    write_tensors(path, tensors)


def train_predictors(cfg: ScenarioConfig, out_dir: Path) -> dict:
    """Calibrate, train and threshold one predictor per (layer, expert); write
    the SLIMWT1 weights and the threshold-table JSON. Returns a summary with
    loss histories."""
    dec = _load_decoder(cfg)
    tp = cfg.train
    dim_lr = tp.dim_lr or max(1, cfg.model.dim_e // 4)
    calib = harvest_ffn_inputs(dec, tp.calib_tokens, seed=cfg.seed + 1)

    tensors = {}
    tables = {}
    summary = {"dim_lr": dim_lr, "layers": []}
    for li, lw in enumerate(dec.layers):
        for e in range(cfg.model.n_expert):
            p0 = init_from_svd(lw.w_g[e], dim_lr)
            p, history = train(p0, calib[li], lw.w_g[e], epochs=tp.epochs, lr=tp.lr)
            tables[(li, e)] = build_threshold_table(p, calib[li], tp.targets)
            pre = f"layer{li:02d}.expert{e:03d}."
            tensors[pre + "L"] = p.l
            tensors[pre + "R"] = p.r
            summary["layers"].append({
                "layer": li, "expert": e,
                "init_loss": history[0], "final_loss": history[-1],
                "history": history,
            })
            log.info("layer %d expert %d: loss %.4e -> %.4e",
                     li, e, history[0], history[-1])

    out_dir.mkdir(parents=True, exist_ok=True)
    write_tensors(out_dir / cfg.paths.predictor, tensors)
    (out_dir / cfg.paths.thresholds).write_text(thresholds_to_json(tables))
    return summary


def load_predictors(cfg: ScenarioConfig, out_dir: Path):
    ppath = out_dir / cfg.paths.predictor
    tpath = out_dir / cfg.paths.thresholds
    if not ppath.exists() or not tpath.exists():
        raise ConfigError(f"trained predictor not found under {out_dir} "
                          f"(expected {ppath.name} and {tpath.name}); run `slim train` first")
    tensors = read_tensors(ppath)
    predictors = {}
    for li in range(cfg.model.n_dec):
        for e in range(cfg.model.n_expert):
            pre = f"layer{li:02d}.expert{e:03d}."
            predictors[(li, e)] = Predictor(l=tensors[pre + "L"], r=tensors[pre + "R"])
    tables = thresholds_from_json(tpath.read_text())
    return predictors, tables


def infer_report(cfg: ScenarioConfig, out_dir: Path) -> dict:
    """Dense vs predictor-masked decode on held-out tokens: output MSE and
    measured per-layer sparsity for every calibrated target."""
    dec = _load_decoder(cfg)
    predictors, tables = load_predictors(cfg, out_dir)
    if predictors[(0, 0)].l.shape[0] != cfg.model.dim_e:
        raise ConfigError("predictor dims do not match the model config")
    rng = np.random.default_rng([cfg.seed, 0xE7A1])
    inputs = [rng.standard_normal((1, cfg.model.dim_e))
              for _ in range(cfg.train.eval_tokens)]

    report = {"targets": []}
    for target in cfg.train.targets:
        cache_d = dec.new_cache()
        cache_m = dec.new_cache()
        sq_err = 0.0
        n_vals = 0
        sparsities = []

        def mask_fn(layer, expert, x_row):
            thr = tables[(layer, expert)].threshold_for(target)
            m = predict_mask(predictors[(layer, expert)], x_row, thr)
            sparsities.append(measured_sparsity(m))
            return m

        for x in inputs:
            dense = dec.decode_step(x, cache_d)
            masked = dec.decode_step(x, cache_m, mask_fn=mask_fn)
            sq_err += float(np.sum((dense - masked) ** 2))
            n_vals += dense.size
        entry = {
            "target_sparsity": target,
            "output_mse": sq_err / n_vals,
            "measured_sparsity": float(np.mean(sparsities)),
        }
        report["targets"].append(entry)
        log.info("target %.2f: mse %.4e, measured sparsity %.3f",
                 target, entry["output_mse"], entry["measured_sparsity"])
    (out_dir / "infer_report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def emit_trace_file(events, out_dir: Path) -> Path:
    path = out_dir / "trace.ldjson"
    write_ldjson(list(events), path)
    return path
