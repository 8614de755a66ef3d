"""Command-line interface: ``match``, ``transfer``, ``convergence``, ``bench`` and ``oracle``."""
import argparse
import csv
import dataclasses
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .accounting import CostLedger
from .aggregate import delta_kernel, fuse_multiscale, standard_aggregate
from .matcher import EmbeddedPatchMatch
from .oracle import BruteForceNNF, brute_force_nnf, convergence_trace, cost_model, init_cost, nnf_mse
from .pyramid import DEFAULT_ITERS, DEFAULT_SCALES, CoarseToFinePatchMatch
from .tensor import (bicubic_resize, extract_descriptors, make_ref_pyramid, round_half_away,
                     to_feature_map)


@dataclass
class RunConfig:
    lr: Optional[Path] = None
    ref: Optional[Path] = None
    out: Optional[Path] = None
    scale: int = 4
    k: float = 0.8
    n: int = 5
    seed: int = 0
    threads: int = 1
    patch_size: int = 3
    mean_subtract: bool = True
    ref_degrade: bool = False
    weights: Optional[Path] = None
    kernel: str = "delta"
    dump_levels: bool = False
    nnf_dir: Optional[Path] = None
    single_iters: int = 10
    scales: tuple = DEFAULT_SCALES
    iters: tuple = DEFAULT_ITERS
    sizes: tuple = (64, 128, 250)
    channels: int = 9
    max_enumerated: int = 250

    def __post_init__(self):
        for name in ("lr", "ref", "out", "weights", "nnf_dir"):
            value = getattr(self, name)
            if value is not None:
                setattr(self, name, Path(value))
        self.scales = tuple(float(s) for s in self.scales)
        self.iters = tuple(int(m) for m in self.iters)
        self.sizes = tuple(int(s) for s in self.sizes)
        if self.scale < 1:
            raise ValueError(f"upscale factor must be >= 1, got {self.scale}")

    def matcher(self):
        return CoarseToFinePatchMatch(self.scales, self.iters, self.seed, n_jobs=self.threads)


# -- pipeline pieces -------------------------------------------------------


def _require(cfg, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(cfg, n) is None]
    if missing:
        raise ValueError(f"missing required option(s): {', '.join(missing)}")


def load_inputs(cfg):
    """Upsampled LR image and the reference pyramid."""
    _require(cfg, "lr", "ref")
    lr = io.read_image(cfg.lr)
    ref = io.read_image(cfg.ref)
    if lr.shape[2] != ref.shape[2]:
        raise ValueError(f"LR has {lr.shape[2]} channels but Ref has {ref.shape[2]}")
    h, w = lr.shape[:2]
    lr_up = bicubic_resize(lr, h * cfg.scale, w * cfg.scale)
    refs = make_ref_pyramid(ref, cfg.k, cfg.n, cfg.patch_size)
    return lr_up, refs


def degrade(img, factor):
    """Bicubic down- then up-sampling by ``factor``, back to the input size."""
    h, w = img.shape[:2]
    small = bicubic_resize(img, max(1, round_half_away(h / factor)),
                           max(1, round_half_away(w / factor)))
    return bicubic_resize(small, h, w)


def query_descriptors(lr_up, cfg):
    return extract_descriptors(lr_up, cfg.patch_size, cfg.mean_subtract)


def ref_descriptors(ref_i, cfg):
    """Reference-side descriptors; ``ref_degrade`` first blurs Ref_i the way
    the LR went through down- and up-sampling."""
    if cfg.ref_degrade and cfg.scale > 1:
        ref_i = degrade(ref_i, cfg.scale)
    return extract_descriptors(ref_i, cfg.patch_size, cfg.mean_subtract)


def match_scales(lr_up, refs, cfg):
    """Run coarse-to-fine matching of the upsampled LR against every Ref level.

    Returns one ``(nnf, ledger, per_level_nnfs)`` tuple per reference scale.
    """
    k_map = query_descriptors(lr_up, cfg)
    results = []
    for ref_i in refs:
        q_map = ref_descriptors(ref_i, cfg)
        est = cfg.matcher().fit(q_map)
        nnf = est.match(k_map)
        results.append((nnf, est.ledger_, est.levels_))
    return results


def _kernel_weights(cfg):
    if cfg.weights is not None:
        return io.read_weights(cfg.weights)
    if cfg.kernel == "delta":
        return delta_kernel()
    if cfg.kernel == "box":
        return None
    raise ValueError(f"unknown kernel {cfg.kernel!r}; use 'delta', 'box' or --weights")


def transfer_from_nnfs(refs, nnfs, weights=None):
    """Aggregate raw Ref pixels around each match and fuse across scales."""
    ys = [standard_aggregate(to_feature_map(r), nnf[0], weights) for r, nnf in zip(refs, nnfs)]
    fused, _ = fuse_multiscale(ys, [nnf[1] for nnf in nnfs])
    return fused.transpose(1, 2, 0)


def psnr(a, b, peak=1.0):
    mse = float(np.mean((np.asarray(a) - np.asarray(b)) ** 2))
    return float("inf") if mse == 0 else 10.0 * np.log10(peak * peak / mse)


# -- subcommands -----------------------------------------------------------


def _nnf_name(i, level=None):
    return f"nnf_scale{i}.nnf" if level is None else f"nnf_scale{i}_level{level}.nnf"


def cmd_match(cfg):
    """Match and write ``nnf_scale{i}.nnf``, ``summary.json`` and ``timing.json`` under ``--out``."""
    _require(cfg, "out")
    start = time.perf_counter()
    lr_up, refs = load_inputs(cfg)
    results = match_scales(lr_up, refs, cfg)
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    scales = []
    for i, ((positions, rel), ledger, levels) in enumerate(results):
        io.write_nnf(out / _nnf_name(i), positions, rel)
        if cfg.dump_levels:
            for lvl, (lpos, lrel) in enumerate(levels):
                io.write_nnf(out / _nnf_name(i, lvl), lpos, lrel)
        scales.append({
            "scale": i,
            "ref_size": list(refs[i].shape[:2]),
            "mean_relevance": float(rel.mean()),
            "relevance_evals": ledger.relevance_evals,
            "init_evals": ledger.init_evals,
            "per_level_breakdown": ledger.per_level_breakdown,
        })
    summary = {
        "lr_up_size": list(lr_up.shape[:2]),
        "k": cfg.k,
        "n": cfg.n,
        "seed": cfg.seed,
        "scales": scales,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    timing = {"wall_time": time.perf_counter() - start,
              "per_scale": [ledger.wall_time for _, ledger, _ in results]}
    (out / "timing.json").write_text(json.dumps(timing, indent=2) + "\n")
    for s in scales:
        print(f"scale {s['scale']}: mean relevance {s['mean_relevance']:.4f}, "
              f"{s['relevance_evals']} evaluations")
    return summary


def cmd_transfer(cfg):
    """Write the texture-transfer image to ``--out``; reuses ``--nnf-dir`` if given."""
    _require(cfg, "out")
    lr_up, refs = load_inputs(cfg)
    if cfg.nnf_dir is not None:
        nnfs = [io.read_nnf(cfg.nnf_dir / _nnf_name(i)) for i in range(len(refs))]
        for i, (pos, _) in enumerate(nnfs):
            if pos.shape[:2] != lr_up.shape[:2]:
                raise ValueError(f"{_nnf_name(i)} is {pos.shape[:2]}, expected {lr_up.shape[:2]}")
    else:
        nnfs = [(nnf.positions, nnf.relevance) for nnf, _, _ in match_scales(lr_up, refs, cfg)]
    image = transfer_from_nnfs(refs, nnfs, _kernel_weights(cfg))
    cfg.out.parent.mkdir(parents=True, exist_ok=True)
    io.write_image(cfg.out, image)
    return image


def _write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["evals", "mse"])
        for evals, mse in trace:
            writer.writerow([evals, repr(float(mse))])


def read_trace(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["evals", "mse"]:
        raise ValueError(f"{path} has header {rows[0]}")
    return [(int(e), float(m)) for e, m in rows[1:]]


def convergence_maps(cfg):
    """Query/reference descriptor maps for the convergence study (Ref level 0 only)."""
    _require(cfg, "lr", "ref")
    lr = io.read_image(cfg.lr)
    ref = io.read_image(cfg.ref)
    h, w = lr.shape[:2]
    if lr.shape[2] != ref.shape[2]:
        raise ValueError(f"LR has {lr.shape[2]} channels but Ref has {ref.shape[2]}")
    lr_up = bicubic_resize(lr, h * cfg.scale, w * cfg.scale)
    return query_descriptors(lr_up, cfg), ref_descriptors(ref, cfg)


def cmd_convergence(cfg):
    """Write ``cfe.csv`` and ``single.csv`` MSE-to-oracle traces under ``--out``."""
    _require(cfg, "out")
    k_map, q_map = convergence_maps(cfg)
    s_star = brute_force_nnf(k_map, q_map).relevance
    traces = {
        "cfe": convergence_trace(k_map, q_map, cfg.matcher(), s_star),
        "single": convergence_trace(
            k_map, q_map, EmbeddedPatchMatch(cfg.single_iters, cfg.seed, n_jobs=cfg.threads), s_star),
    }
    cfg.out.mkdir(parents=True, exist_ok=True)
    for name, trace in traces.items():
        _write_trace(cfg.out / f"{name}.csv", trace)
        print(f"{name}: {len(trace)} snapshots, final MSE {trace[-1][1]:.6f} "
              f"after {trace[-1][0]} evaluations")
    return traces


def bench_rows(cfg):
    """Predicted vs measured propagation evaluations on seeded random maps."""
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for size in cfg.sizes:
        k_map = rng.standard_normal((cfg.channels, size, size))
        q_map = rng.standard_normal((cfg.channels, size, size))
        entries = [
            ("enumerated", BruteForceNNF()),
            ("single", EmbeddedPatchMatch(cfg.iters[-1], cfg.seed, n_jobs=cfg.threads)),
            ("cfe", cfg.matcher()),
        ]
        predicted = {}
        for name, est in entries:
            predicted[name] = cost_model(size, size, est)
            measured = None
            if name != "enumerated" or size <= cfg.max_enumerated:
                est.fit(q_map).match(k_map)
                measured = est.ledger_.relevance_evals
            rows.append({"size": size, "matcher": name, "predicted": predicted[name],
                         "measured": measured, "init_evals": init_cost(size, size, est)})
        rows.append({"size": size, "matcher": "ratio enumerated/cfe",
                     "predicted": predicted["enumerated"] / predicted["cfe"],
                     "measured": None, "init_evals": None})
    return rows


def cmd_bench(cfg):
    rows = bench_rows(cfg)
    print(f"{'size':>6}  {'matcher':<22}{'predicted':>16}{'measured':>16}")
    for r in rows:
        if r["matcher"].startswith("ratio"):
            print(f"{r['size']:>6}  {r['matcher']:<22}{r['predicted']:>16.2f}")
        else:
            measured = "-" if r["measured"] is None else r["measured"]
            print(f"{r['size']:>6}  {r['matcher']:<22}{r['predicted']:>16}{measured:>16}")
    if cfg.out is not None:
        cfg.out.parent.mkdir(parents=True, exist_ok=True)
        cfg.out.write_text(json.dumps(rows, indent=2) + "\n")
    bad = [r for r in rows if r["measured"] is not None and r["measured"] != r["predicted"]]
    if bad:
        raise RuntimeError(f"measured counts disagree with the cost model: {bad}")
    return rows


def cmd_oracle(cfg):
    """Exhaustive matching for every Ref level; compares against ``--nnf-dir`` if given."""
    _require(cfg, "out")
    lr_up, refs = load_inputs(cfg)
    k_map = query_descriptors(lr_up, cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    scales = []
    for i, ref_i in enumerate(refs):
        ledger = CostLedger()
        positions, rel = brute_force_nnf(k_map, ref_descriptors(ref_i, cfg), ledger=ledger)
        io.write_nnf(cfg.out / f"oracle_scale{i}.nnf", positions, rel)
        entry = {"scale": i, "mean_relevance": float(rel.mean()),
                 "relevance_evals": ledger.relevance_evals}
        if cfg.nnf_dir is not None:
            _, approx = io.read_nnf(cfg.nnf_dir / _nnf_name(i))
            # NNF1 stores float32 relevances, so compare against the rounded oracle.
            exact = rel.astype(np.float32).astype(np.float64)
            entry["mse"] = nnf_mse(approx, exact)
            entry["mean_gap"] = float(np.mean(exact - approx))
        scales.append(entry)
        print(json.dumps(entry))
    (cfg.out / "oracle_summary.json").write_text(json.dumps({"scales": scales}, indent=2) + "\n")
    return scales


COMMANDS = {
    "match": cmd_match,
    "transfer": cmd_transfer,
    "convergence": cmd_convergence,
    "bench": cmd_bench,
    "oracle": cmd_oracle,
}


# -- argument handling -----------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="nnfield", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, help="TOML file with RunConfig keys")
    parser.add_argument("--lr", type=Path)
    parser.add_argument("--ref", type=Path)
    parser.add_argument("--out", type=Path)
    parser.add_argument("--scale", type=int, help="LR upsampling factor (default 4)")
    parser.add_argument("--k", type=float, help="Ref pyramid downscale factor (default 0.8)")
    parser.add_argument("--n", type=int, help="number of Ref pyramid levels (default 5)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--weights", type=Path, help="WGT1 aggregation kernel")
    parser.add_argument("--kernel", choices=("delta", "box"),
                        help="built-in aggregation kernel when --weights is absent")
    parser.add_argument("--patch-size", dest="patch_size", type=int)
    parser.add_argument("--no-mean-subtract", dest="mean_subtract", action="store_false",
                        default=None, help="keep patch means in the descriptors")
    parser.add_argument("--ref-degrade", dest="ref_degrade", action="store_true", default=None,
                        help="describe Ref after the same down/up-sampling as the LR")
    parser.add_argument("--dump-levels", dest="dump_levels", action="store_true", default=None)
    parser.add_argument("--nnf-dir", dest="nnf_dir", type=Path)
    parser.add_argument("--single-iters", dest="single_iters", type=int)
    parser.add_argument("--sizes", type=int, nargs="+")
    parser.add_argument("--max-enumerated", dest="max_enumerated", type=int)
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def load_config(args):
    """Merge dataclass defaults, the TOML file and explicit flags (in that order)."""
    values = {}
    if args.config is not None:
        import tomli

        with open(args.config, "rb") as fh:
            values.update(tomli.load(fh))
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    for name in known:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    return RunConfig(**values)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        cfg = load_config(args)
        COMMANDS[args.command](cfg)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"nnfield {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
