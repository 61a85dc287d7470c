"""Command-line interface.

Subcommands: gen-library, simulate, learn, fit-rates, analyze, mix.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime error.
Timing goes to stderr only, so result files are identical across reruns.
"""

import argparse
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis
from .config import ConfigError, RunConfig, config_to_text, load_config
from .forward import (
    G2,
    LT,
    DataFormatError,
    ExperimentTrace,
    NoiseModel,
    attach_weights,
    g2_grid,
    load_trace,
    lt_grid,
    simulate,
    synth_data,
    write_trace,
)
from .library import build_library, library_records
from .model import (
    model_from_text,
    model_to_text,
    preset_independent_emitters,
    preset_single_emitter,
    preset_symmetric_two_emitter,
)
from .sampler import ChainRecord, TraceLikelihood, fit_rates, run_parallel

EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 2, 3, 4


class DataError(Exception):
    pass


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("LL_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"LL_THREADS must be an integer, got {env!r}") from None
    return 1


def _config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    try:
        return cfg.with_overrides(seed=args.seed, chains=args.chains)
    except ValueError as err:
        raise ConfigError(str(err)) from err


def _out(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _grids(cfg):
    return {LT: lt_grid(cfg.lt_t_max, cfg.lt_dt), G2: g2_grid(cfg.g2_t_max, cfg.g2_dt)}


def _resolve(path, args):
    p = Path(path)
    if not p.is_absolute() and args.config:
        p = Path(args.config).parent / p
    return p


def load_data(cfg, args):
    """Weighted data traces named in the config, rebinned onto its grids."""
    grids = _grids(cfg)
    traces = []
    for kind, name in ((LT, cfg.lt_file), (G2, cfg.g2_file)):
        if not name:
            continue
        path = _resolve(name, args)
        try:
            traces.append(load_trace(str(path), kind, grids[kind]))
        except OSError as err:
            raise DataError(f"cannot read {path}: {err}") from err
    if not traces:
        raise ConfigError("no data files given (set lt_file and/or g2_file in [data])")
    return attach_weights(traces, cfg.g2_weight_width, cfg.multipliers())


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, ensure_ascii=False, indent=1)
        fh.write("\n")


def _write_table(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)
                               for v in row) + "\n")


# --- subcommands -----------------------------------------------------------------

def cmd_gen_library(args):
    cfg = _config(args)
    d = args.dim or cfg.dim
    C = args.complexity or cfg.complexity
    lib = build_library(d, C)
    path = _out(args) / f"library_d{d}_C{C}.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for rec in library_records(lib):
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")
    print(f"d={d} C={C} candidates={lib.n_candidates} unique={len(lib)} "
          f"hermitian={len(lib.hamiltonian_indices)} -> {path}")
    return 0


def _preset(args):
    if args.preset == "single":
        return preset_single_emitter(args.omega, args.gamma, args.background)
    if args.preset == "independent":
        return preset_independent_emitters(args.gamma, args.gamma_p, args.background)
    return preset_symmetric_two_emitter(args.gamma, args.gamma_p, args.gamma_d, args.background)


def cmd_simulate(args):
    cfg = _config(args)
    if args.model:
        try:
            text = Path(args.model).read_text(encoding="utf-8")
            model = model_from_text(text)
        except (OSError, ValueError) as err:
            raise DataError(f"cannot read model {args.model}: {err}") from err
    else:
        model = _preset(args)
    out = _out(args)
    (out / "model.txt").write_text(model_to_text(model), encoding="utf-8")
    settings = cfg.settings()
    grids = _grids(cfg)
    rng = np.random.default_rng(cfg.seed)
    noise = NoiseModel(cfg.irf_fwhm, None, cfg.poisson_scale)
    noisy = synth_data(model, noise, grids, rng, settings)
    for tr in noisy:
        # pre-instrument trace: no IRF, no background
        ideal = simulate(model, tr.kind, tr.tau, replace(settings, irf_fwhm=None), background=0.0)
        write_trace(out / f"{tr.kind.lower()}_ideal.tsv", ideal)
        write_trace(out / f"{tr.kind.lower()}_noisy.tsv", tr)
        print(f"{tr.kind}: {tr.tau.size} points -> {out / (tr.kind.lower() + '_noisy.tsv')}")
    return 0


def _records_dir(path):
    p = Path(path)
    return p / "records" if (p / "records").is_dir() else p


def load_records(path):
    files = sorted(_records_dir(path).glob("chain_*.json"))
    if not files:
        raise DataError(f"no chain records (chain_*.json) under {path}")
    recs = []
    for f in files:
        try:
            recs.append(ChainRecord.from_json(f.read_text(encoding="utf-8")))
        except (ValueError, TypeError, KeyError) as err:
            raise DataError(f"{f}: malformed chain record: {err}") from err
    return recs


def cmd_learn(args):
    cfg = _config(args)
    data = load_data(cfg, args)
    lib = build_library(cfg.dim, cfg.complexity)
    lik = TraceLikelihood(data, cfg.settings(), cfg.poisson_scale)
    t0 = time.perf_counter()
    records = run_parallel(cfg.sampler_config(), cfg.chains, lik, lib, cfg.prior(), _threads(args))
    _log(f"learn: {cfg.chains} chains x {cfg.steps} steps in {time.perf_counter() - t0:.1f} s")
    out = _out(args)
    rdir = out / "records"
    rdir.mkdir(exist_ok=True)
    for i, rec in enumerate(records):
        (rdir / f"chain_{i:03d}.json").write_text(rec.to_json() + "\n", encoding="utf-8")
    (out / "config.ini").write_text(config_to_text(cfg), encoding="utf-8")
    summary = {
        "chains": [{
            "seed": r.seed, "samples": len(r.samples), "aborted": r.aborted,
            "proposed": r.proposed, "accepted": r.accepted,
            "acceptance": r.acceptance_rates(),
        } for r in records],
        "library_size": len(lib),
        "library_candidates": lib.n_candidates,
    }
    _write_json(out / "summary.json", summary)
    print(f"wrote {len(records)} chain records to {rdir}")
    return 0


def cmd_fit_rates(args):
    cfg = _config(args)
    data = load_data(cfg, args)
    lib = build_library(cfg.dim, cfg.complexity)
    try:
        model = model_from_text(Path(args.model).read_text(encoding="utf-8"))
    except (OSError, ValueError) as err:
        raise DataError(f"cannot read model {args.model}: {err}") from err
    lik = TraceLikelihood(data, cfg.settings(), cfg.poisson_scale)
    t0 = time.perf_counter()
    rs = fit_rates(model, cfg.sampler_config(), lik, lib, cfg.prior())
    _log(f"fit-rates: {cfg.steps} steps in {time.perf_counter() - t0:.1f} s")
    out = _out(args)
    _write_table(out / "rate_samples.tsv", rs.labels + [f"beta_{k}" for k in lik.kinds],
                 np.hstack([rs.values, rs.beta]).tolist())
    rows = list(zip(rs.labels, rs.mean(), rs.std()))
    _write_table(out / "rate_summary.tsv", ["process", "mean", "sd"], rows)
    for lab, m, s in rows:
        print(f"{lab}\t{m:.6g}\t{s:.3g}")
    print(f"acceptance\t{rs.acceptance:.3f}")
    return 0


def cmd_analyze(args):
    cfg = _config(args)
    records = load_records(args.records)
    if not any(r.samples for r in records):
        raise DataError("records hold no post-burn-in samples")
    data = load_data(cfg, args) if (cfg.lt_file or cfg.g2_file) else []
    lib = build_library(records[0].dim, cfg.complexity)
    t0 = time.perf_counter()
    classes = analysis.cluster_records(records, cfg.subsample, cfg.seed, cfg.k_max,
                                       cfg.variance_target, lib)
    out = _out(args)
    lines = [f"samples\t{sum(len(r.samples) for r in records)}", f"classes\t{len(classes)}", ""]
    class_rows, sig_rows = [], []
    for c in classes:
        draws = analysis.class_draws(c, records, library=lib)
        mse = analysis.compute_mse(draws, data, cfg.mse_samples, cfg.seed, cfg.settings()) if data else {}
        lines.append(f"class {c.id}\tpopularity {c.popularity:.6f}\tsamples {c.count}")
        lines.append(f"  top\t{c.top_signature}")
        for kind, fs in mse.items():
            lines.append(f"  mse_{kind}\t{fs.mse:.6e} +- {fs.mse_sd:.2e}")
            _write_table(out / f"fit_class{c.id}_{kind}.tsv", ["tau_ns", "data", "mean", "sd"],
                         zip(fs.tau, fs.data, fs.mean, fs.sd))
        rates = np.array([m.rates() for m in draws])
        for lab, m, s in zip(draws[0].rate_labels(), rates.mean(0), rates.std(0)):
            lines.append(f"  rate\t{lab}\t{m:.6g}\t{s:.3g}")
        for sig, n in c.signatures[:10]:
            lines.append(f"  {n}\t{sig}")
            sig_rows.append((c.id, n, sig))
        lines.append("")
        class_rows.append((c.id, c.count, c.popularity, c.top_signature,
                           *(mse[k].mse if k in mse else "" for k in (LT, G2))))
    mu = analysis.mixing_matrix(records)
    _write_table(out / "classes.tsv", ["class", "samples", "popularity", "top_signature",
                                       "mse_LT", "mse_G2"], class_rows)
    _write_table(out / "signatures.tsv", ["class", "samples", "signature"], sig_rows)
    _write_table(out / "mixing.tsv", ["chain"] + [str(j) for j in range(len(records))],
                 [[i] + list(row) for i, row in enumerate(mu)])
    (out / "report.txt").write_text("\n".join(lines), encoding="utf-8")
    _log(f"analyze: {time.perf_counter() - t0:.1f} s")
    print("\n".join(lines[:2] + lines[3:5]))
    return 0


def cmd_mix(args):
    records = load_records(args.records)
    mu = analysis.mixing_matrix(records)
    out = _out(args)
    _write_table(out / "mixing.tsv", ["chain"] + [str(j) for j in range(len(records))],
                 [[i] + list(row) for i, row in enumerate(mu)])
    for row in mu:
        print(" ".join(f"{v:.3f}" for v in row))
    return 0


# --- entry point -------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--chains", type=int, help="override the configured chain count")
    common.add_argument("--out", default=".", help="output directory (default: .)")
    common.add_argument("--threads", type=int, help="worker processes (fallback: $LL_THREADS, 1)")

    p = argparse.ArgumentParser(prog="lindblearn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-library", parents=[common], help="write the operator library")
    g.add_argument("--dim", type=int, choices=(2, 4))
    g.add_argument("--complexity", type=int)
    g.set_defaults(func=cmd_gen_library)

    s = sub.add_parser("simulate", parents=[common], help="simulate LT and G2 traces")
    s.add_argument("--model", help="model file (default: use --preset)")
    s.add_argument("--preset", choices=("single", "independent", "symmetric"), default="single")
    s.add_argument("--omega", type=float, default=0.5, help="drive energy, GHz (single)")
    s.add_argument("--gamma", type=float, default=1.0, help="decay rate, GHz")
    s.add_argument("--gamma-p", type=float, default=0.0, help="pump rate, GHz")
    s.add_argument("--gamma-d", type=float, default=0.0, help="dephasing rate, GHz")
    s.add_argument("--background", type=float, default=0.0)
    s.set_defaults(func=cmd_simulate)

    lr = sub.add_parser("learn", parents=[common], help="run the structure-learning chains")
    lr.set_defaults(func=cmd_learn)

    f = sub.add_parser("fit-rates", parents=[common], help="rate-only chain on a fixed model")
    f.add_argument("--model", required=True)
    f.set_defaults(func=cmd_fit_rates)

    a = sub.add_parser("analyze", parents=[common], help="cluster, rank and score chain records")
    a.add_argument("--records", required=True, help="learn output directory")
    a.set_defaults(func=cmd_analyze)

    m = sub.add_parser("mix", parents=[common], help="chain mixing matrix")
    m.add_argument("--records", required=True)
    m.set_defaults(func=cmd_mix)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        _log(f"config error: {err}")
        return EXIT_CONFIG
    except (DataError, DataFormatError) as err:
        _log(f"data error: {err}")
        return EXIT_DATA
    except Exception as err:  # noqa: BLE001 - report anything else as a runtime failure
        _log(f"runtime error: {type(err).__name__}: {err}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
