"""Command line entry point.

Subcommands wire the pipeline stages into reproducible runs:

    gen       write a synthetic corpus
    pretrain  supervised vocalized pretraining -> checkpoint
    train     iterative adversarial training from a checkpoint
    eval      score a checkpoint on the test split
    ablate    full / no_its / no_dat / baseline comparison over seeds
    bench     numba vs numpy kernel timings

Configs are JSON with sections ``corpus``, ``train``, ``dims``, ``probe``
plus ``mode`` and ``seeds``; every value has a default, so all sections are
optional.  ``--seed`` overrides the config seed.  Exit codes: 0 ok, 1
usage/config error, 2 data/format error, 3 numeric failure.
"""

import argparse
import dataclasses
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import metrics, trainer
from .backend import HAVE_NUMBA, backend_name
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (
    ContractError,
    DataError,
    FormatError,
    NumericError,
    SilencioError,
)
from .netblocks import Dims
from .synthcorpus import (
    SILENT,
    VOCALIZED,
    CorpusConfig,
    generate_corpus,
    load_corpus,
    save_corpus,
)

MODES = ("full", "no_its", "no_dat", "baseline")


class UsageError(SilencioError):
    """Bad flags or config contents."""


# ---------------------------------------------------------------------------
# configplumbing

_TOP_KEYS = {"corpus", "train", "dims", "probe", "mode", "seeds"}


def load_config(path):
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}")
    if not isinstance(raw, dict):
        raise UsageError(f"{path}: top level must be a JSON object")
    for key in raw:
        if key not in _TOP_KEYS:
            raise UsageError(f"{path}: unknown config field {key!r}")
    return raw


def _build(cls, data, label, tuple_fields=(), reject=()):
    if not isinstance(data, dict):
        raise UsageError(f"config section {label!r} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key in reject or key not in names:
            raise UsageError(f"unknown config field {label}.{key}")
        kwargs[key] = tuple(value) if key in tuple_fields else value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise UsageError(f"bad config section {label!r}: {e}")


def corpus_config_from(raw, seed=None):
    cfg = _build(
        CorpusConfig, raw.get("corpus", {}), "corpus",
        tuple_fields=("stretch", "alpha", "length_range"),
    )
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    cfg.validate()
    return cfg


def train_config_from(raw, seed=None):
    dims = _build(Dims, raw.get("dims", {}), "dims", reject=("k",))
    cfg = _build(
        trainer.TrainConfig, raw.get("train", {}), "train",
        reject=("dims", "use_disc", "silent_supervision"),
    )
    cfg = replace(cfg, dims=dims)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    cfg.validate()
    return cfg


def probe_config_from(raw, seed=None):
    cfg = _build(metrics.ProbeConfig, raw.get("probe", {}), "probe")
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def apply_mode(cfg, mode):
    """Resolve an ablation mode into trainer flags."""
    if mode == "full":
        return cfg
    if mode == "no_its":
        return replace(cfg, iterations=1)
    if mode == "no_dat":
        return replace(cfg, use_disc=False)
    if mode == "baseline":
        return replace(cfg, use_disc=False, silent_supervision=False)
    raise UsageError(f"unknown mode {mode!r} (choose from {', '.join(MODES)})")


def _echo(out_dir, payload):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config_echo.json").write_text(
        json.dumps(payload, indent=1, sort_keys=True, default=_jsonable) + "\n"
    )


def _jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return dataclasses.asdict(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _require(value, flag):
    if value is None:
        raise UsageError(f"missing required flag {flag}")
    return value


def _load_corpus_checked(corpus_dir, train_cfg=None):
    corpus = load_corpus(_require(corpus_dir, "--corpus"))
    if train_cfg is not None and corpus.config.k != train_cfg.k:
        raise UsageError(
            f"rate ratio mismatch: corpus k={corpus.config.k}, train k={train_cfg.k}"
        )
    return corpus


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args):
    raw = load_config(args.config)
    cfg = corpus_config_from(raw, seed=args.seed)
    out = Path(_require(args.out, "--out"))
    corpus = generate_corpus(cfg)
    save_corpus(corpus, out)
    _echo(out, {"corpus": cfg})
    n = len(corpus.utterances)
    print(f"wrote corpus with {n} utterances to {out}")
    return 0


def cmd_pretrain(args):
    raw = load_config(args.config)
    cfg = train_config_from(raw, seed=args.seed)
    corpus = _load_corpus_checked(args.corpus, cfg)
    out = Path(_require(args.out, "--out"))
    out.mkdir(parents=True, exist_ok=True)
    params, history = trainer.pretrain_vocalized(corpus, cfg)
    ckpt = out / "pretrain.ckpt"
    save_checkpoint(ckpt, params)
    stats = [trainer.IterationStats(0, float("nan"), 0, [], history)]
    trainer.write_loss_history(out / "pretrain_loss.csv", stats)
    _echo(out, {"train": cfg, "seed": cfg.seed})
    final = history[-1].recon_v if history else float("nan")
    print(f"pretrained {cfg.pretrain_epochs} epochs (final recon_v {final:.6f}) -> {ckpt}")
    return 0


def cmd_train(args):
    raw = load_config(args.config)
    mode = args.mode or raw.get("mode", "full")
    if mode not in MODES:
        raise UsageError(f"unknown mode {mode!r} (choose from {', '.join(MODES)})")
    cfg = apply_mode(train_config_from(raw, seed=args.seed), mode)
    corpus = _load_corpus_checked(args.corpus, cfg)
    ckpt_path = Path(_require(args.checkpoint, "--checkpoint"))
    if not ckpt_path.is_file():
        raise UsageError(f"checkpoint not found: {ckpt_path}")
    params = load_checkpoint(ckpt_path)
    out = Path(_require(args.out, "--out"))
    out.mkdir(parents=True, exist_ok=True)
    pseudo_dir = Path(args.corpus) if cfg.silent_supervision else None
    params, stats = trainer.iterative_train(
        corpus, cfg, params=params, evaluate_each=True, pseudo_dir=pseudo_dir
    )
    for st in stats:
        it_dir = out / f"iter{st.iteration}"
        it_dir.mkdir(exist_ok=True)
        save_checkpoint(it_dir / "model.ckpt", st.params_snapshot)
    save_checkpoint(out / "final.ckpt", params)
    trainer.write_loss_history(out / "loss_history.csv", stats)
    metrics.write_trace(stats, out / "trace.csv")
    summary = []
    for st in stats:
        metrics.write_report(st.report, out / f"iter{st.iteration}")
        summary.append(
            {
                "iteration": st.iteration,
                "epsilon": st.epsilon,
                "n_reliable": st.n_reliable,
                "excluded_speakers": st.excluded_speakers,
            }
        )
    (out / "stats.json").write_text(
        json.dumps({"mode": mode, "seed": cfg.seed, "iterations": summary},
                   indent=1, sort_keys=True, default=_jsonable) + "\n"
    )
    _echo(out, {"train": cfg, "mode": mode, "seed": cfg.seed})
    last = stats[-1].report.aggregates
    sil = last.get(SILENT)
    msg = f"mode={mode}: trained {len(stats)} iteration(s)"
    if sil:
        msg += f", silent test mse {sil['recon_mse'].mean:.6f}"
    print(msg + f" -> {out}")
    return 0


def cmd_eval(args):
    corpus = _load_corpus_checked(args.corpus)
    ckpt_path = Path(_require(args.checkpoint, "--checkpoint"))
    if not ckpt_path.is_file():
        raise UsageError(f"checkpoint not found: {ckpt_path}")
    params = load_checkpoint(ckpt_path)
    out = Path(_require(args.out, "--out"))
    # mirror the training-time exclusion rule with this encoder's alignments
    from .align import compute_threshold, generate_pseudo_targets, select_reliable

    targets = generate_pseudo_targets(corpus, params, args.iteration)
    selection = select_reliable(targets, compute_threshold([t.dtw_cost for t in targets]), corpus)
    report = metrics.evaluate(
        params, corpus, args.iteration, excluded_speakers=selection.excluded_speakers
    )
    metrics.write_report(report, out)
    _echo(out, {"checkpoint": str(ckpt_path), "iteration": args.iteration,
                "epsilon": selection.epsilon,
                "excluded_speakers": selection.excluded_speakers})
    for mode in sorted(report.aggregates):
        agg = report.aggregates[mode]["recon_mse"]
        print(f"{mode}: recon mse {agg.mean:.6f} +- {agg.ci95:.6f} (n={agg.count})")
    return 0


# ---------------------------------------------------------------------------
# ablation study


def run_ablation(corpus, base_cfg, seeds, out_dir, probe_cfg=None, modes=MODES):
    """Train and score the requested modes with shared corpus and seeds.

    Per seed: one shared pretraining run, then each mode from the same
    starting point.  The excluded-speaker list from the full method's first
    round is reused for every mode's final scoring so all silent aggregates
    cover the same utterances.  Returns {mode: {seed: result dict}}.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    probe_cfg = probe_cfg or metrics.ProbeConfig()
    results = {mode: {} for mode in modes}
    for seed in seeds:
        seed_cfg = replace(base_cfg, seed=int(seed))
        pre_params, _ = trainer.pretrain_vocalized(corpus, seed_cfg)
        excluded = None
        for mode in modes:
            cfg = apply_mode(seed_cfg, mode)
            params, stats = trainer.iterative_train(
                corpus, cfg, params=pre_params.copy(), evaluate_each=True
            )
            if mode == "full":
                excluded = stats[0].excluded_speakers
                metrics.write_trace(stats, out / f"fig2_trace_seed{seed}.csv")
            final = metrics.evaluate(
                params, corpus, stats[-1].iteration, excluded_speakers=excluded or ()
            )
            probe_acc = None
            if mode in ("full", "no_dat"):
                probe_acc = metrics.probe_domain_accuracy(
                    params, corpus, replace(probe_cfg, seed=int(seed))
                )
            save_checkpoint(out / f"{mode}-seed{seed}.ckpt", params)
            results[mode][int(seed)] = {
                "report": final,
                "stats": stats,
                "probe_acc": probe_acc,
            }
    _write_ablation_tables(results, seeds, out, modes)
    return results


def _agg_mean(report, mode, metric):
    group = report.aggregates.get(mode)
    if not group or metric not in group:
        return None
    return group[metric].mean


def _write_ablation_tables(results, seeds, out, modes=MODES):
    rows = []
    for mode in modes:
        for seed in seeds:
            r = results[mode][int(seed)]
            rep = r["report"]
            rows.append(
                {
                    "seed": int(seed),
                    "method": mode,
                    "silent_mse": _agg_mean(rep, SILENT, "recon_mse"),
                    "silent_mcd": _agg_mean(rep, SILENT, "mcd"),
                    "vocalized_mse": _agg_mean(rep, VOCALIZED, "recon_mse"),
                    "vocalized_mcd": _agg_mean(rep, VOCALIZED, "mcd"),
                    "pseudo_fidelity": _agg_mean(rep, SILENT, "pseudo_fidelity"),
                    "alignment_error": _agg_mean(rep, SILENT, "alignment_error"),
                    "probe_acc": r["probe_acc"],
                }
            )
    cols = list(rows[0].keys())
    lines = [",".join(cols)]
    for row in rows:
        lines.append(",".join("" if row[c] is None else repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in cols))
    (out / "per_seed.csv").write_text("\n".join(lines) + "\n")

    def med(mode, key):
        vals = [r[key] for r in rows if r["method"] == mode and r[key] is not None]
        return float(np.median(vals)) if vals else None

    lines = ["speech_mode,method,median_mse,median_mcd,median_probe_acc"]
    for speech, mse_key, mcd_key in (
        ("S", "silent_mse", "silent_mcd"),
        ("V", "vocalized_mse", "vocalized_mcd"),
    ):
        for mode in modes:
            pm = med(mode, "probe_acc")
            lines.append(
                f"{speech},{mode},{med(mode, mse_key)!r},{med(mode, mcd_key)!r},"
                + ("" if pm is None else repr(pm))
            )
    (out / "summary.csv").write_text("\n".join(lines) + "\n")

    # per-speaker comparison of the baseline and the full method (silent mode)
    base_by_speaker, full_by_speaker = {}, {}
    for mode, store in (("baseline", base_by_speaker), ("full", full_by_speaker)):
        if mode not in results:
            continue
        for seed in seeds:
            for rec in results[mode][int(seed)]["report"].records:
                if rec.mode == SILENT:
                    store.setdefault(rec.speaker, []).append(rec.recon_mse)
    speakers = sorted(set(base_by_speaker) & set(full_by_speaker))
    if len(speakers) >= 2:
        xs = [float(np.mean(base_by_speaker[s])) for s in speakers]
        ys = [float(np.mean(full_by_speaker[s])) for s in speakers]
        if np.ptp(xs) > 0:
            metrics.write_speaker_fit(
                out / "per_speaker_fit.csv", speakers, xs, ys,
                "baseline_silent_mse", "full_silent_mse",
            )
    (out / "seeds.json").write_text(json.dumps({"seeds": [int(s) for s in seeds]}) + "\n")


def cmd_ablate(args):
    raw = load_config(args.config)
    cfg = train_config_from(raw, seed=args.seed)
    corpus = _load_corpus_checked(args.corpus, cfg)
    out = Path(_require(args.out, "--out"))
    seeds = raw.get("seeds")
    if seeds is None:
        base = cfg.seed
        seeds = [base + i for i in range(5)]
    if not isinstance(seeds, list) or not seeds:
        raise UsageError("config field 'seeds' must be a non-empty list of integers")
    probe_cfg = probe_config_from(raw)
    run_ablation(corpus, cfg, seeds, out, probe_cfg=probe_cfg)
    _echo(out, {"train": cfg, "seeds": seeds})
    print(f"ablation over seeds {seeds} -> {out}/summary.csv")
    return 0


# ---------------------------------------------------------------------------
# kernel benchmark


def cmd_bench(args):
    from . import kernels

    rng = np.random.default_rng(0)
    frames, cin, cout, hid, din = 200, 16, 16, 16, 24
    x = rng.normal(size=(frames, cin))
    w = rng.normal(size=(3, cin, cout))
    gout = rng.normal(size=(frames, cout))
    gx = rng.normal(size=(frames, din))
    gru_args = (
        gx,
        rng.normal(size=(din, hid)), rng.normal(size=(din, hid)), rng.normal(size=(din, hid)),
        rng.normal(size=(hid, hid)), rng.normal(size=(hid, hid)), rng.normal(size=(hid, hid)),
        rng.normal(size=hid), rng.normal(size=hid), rng.normal(size=hid),
    )
    dist = np.abs(rng.normal(size=(120, 160)))

    cases = [
        ("conv1d_fwd", kernels.conv1d_fwd_np, (x, w)),
        ("conv1d_bwd", kernels.conv1d_bwd_np, (x, w, gout)),
        ("gru_fwd", kernels.gru_fwd_np, gru_args),
        ("dtw_table", kernels.dtw_table_np, (dist,)),
    ]
    h, z, r, c = kernels.gru_fwd_np(*gru_args)
    cases.append(("gru_bwd", kernels.gru_bwd_np, (*gru_args[:7], z, r, c, h, np.ones_like(h))))

    def time_fn(fn, fargs):
        fn(*fargs)  # warm (and JIT-compile)
        best = float("inf")
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            fn(*fargs)
            best = min(best, time.perf_counter() - t0)
        return best

    print(f"active backend: {backend_name()}")
    print(f"{'kernel':<12} {'numpy':>12} {'numba':>12} {'speedup':>9}")
    for name, np_fn, fargs in cases:
        t_np = time_fn(np_fn, fargs)
        if HAVE_NUMBA:
            nb_fn = getattr(kernels, name + "_nb")
            t_nb = time_fn(nb_fn, fargs)
            print(f"{name:<12} {t_np * 1e6:>10.1f}us {t_nb * 1e6:>10.1f}us {t_np / t_nb:>8.1f}x")
        else:
            print(f"{name:<12} {t_np * 1e6:>10.1f}us {'n/a':>12} {'':>9}")
    return 0


# ---------------------------------------------------------------------------
# argument plumbing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="silencio", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name, fn, **flags):
        p = sub.add_parser(name)
        for flag, kw in flags.items():
            p.add_argument(flag, **kw)
        p.set_defaults(fn=fn)
        return p

    common = {
        "--config": dict(default=None, metavar="PATH"),
        "--out": dict(default=None, metavar="DIR"),
        "--seed": dict(default=None, type=int, metavar="N"),
    }
    add("gen", cmd_gen, **common)
    add("pretrain", cmd_pretrain, **common, **{"--corpus": dict(default=None, metavar="DIR")})
    add(
        "train",
        cmd_train,
        **common,
        **{
            "--corpus": dict(default=None, metavar="DIR"),
            "--checkpoint": dict(default=None, metavar="PATH"),
            "--mode": dict(default=None, choices=MODES),
        },
    )
    add(
        "eval",
        cmd_eval,
        **common,
        **{
            "--corpus": dict(default=None, metavar="DIR"),
            "--checkpoint": dict(default=None, metavar="PATH"),
            "--iteration": dict(default=0, type=int, metavar="N"),
        },
    )
    add("ablate", cmd_ablate, **common, **{"--corpus": dict(default=None, metavar="DIR")})
    add("bench", cmd_bench, **{"--repeat": dict(default=5, type=int, metavar="N")})
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "fn", None):
            parser.print_help()
            return 1
        return args.fn(args)
    except (UsageError, ContractError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (DataError, FormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
