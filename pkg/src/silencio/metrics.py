"""Evaluation: reconstruction error, mel-cepstral distortion, alignment
error against generation ground truth, a domain probe, and report assembly.

Silent test utterances are scored against their synthetic oracle targets
(the vocalized acoustics carried through the true generation warp), which
is a strictly stronger reference than anything derivable from the data
itself.  Speakers excluded by the reliability selection are left out of the
silent aggregates.
"""

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .align import pseudo_for_utterance
from .backend import worker_count
from .errors import ContractError, DataError
from .netblocks import decode, encode, init_params
from .synthcorpus import SILENT, VOCALIZED
from .tensorgrad import Tape, adam_init, adam_step, backward, bind

_MCD_SCALE = 10.0 / math.log(10.0)


def mse_seq(a, b):
    """Mean squared difference over all entries of two equal-shape matrices."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch {a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(d * d))


def mcd(a, b):
    """Mel-cepstral distortion in dB, treating feature dims as cepstra:
    mean over frames of (10/ln10) * sqrt(2 * sum_d diff^2)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] < 1:
        raise ContractError(f"need equal non-empty matrices, got {a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(_MCD_SCALE * np.sqrt(2.0 * np.sum(d * d, axis=1))))


def alignment_error(path, truth_warp):
    """Mean |mean aligned vocalized index - true index| over silent frames."""
    truth_warp = np.asarray(truth_warp, dtype=np.float64)
    t_sil = int(path.sj[-1]) + 1
    if truth_warp.shape[0] != t_sil:
        raise ContractError(
            f"path covers {t_sil} silent frames, truth warp has {truth_warp.shape[0]}"
        )
    sums = np.zeros(t_sil)
    counts = np.zeros(t_sil)
    for i, j in zip(path.vi, path.sj):
        sums[j] += i
        counts[j] += 1.0
    return float(np.mean(np.abs(sums / counts - truth_warp)))


def linear_fit(xs, ys):
    """Ordinary least squares slope and intercept."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.size < 2:
        raise ContractError("need at least two (x, y) points of equal count")
    if np.ptp(xs) == 0.0:
        raise ContractError("xs are all equal; slope undefined")
    xm, ym = xs.mean(), ys.mean()
    slope = float(np.sum((xs - xm) * (ys - ym)) / np.sum((xs - xm) ** 2))
    return slope, float(ym - slope * xm)


# ---------------------------------------------------------------------------
# report types


@dataclass
class UtteranceRecord:
    utterance_id: str
    speaker: str
    mode: str
    recon_mse: float
    mcd: float
    pseudo_fidelity: Optional[float] = None
    alignment_error: Optional[float] = None


@dataclass
class Aggregate:
    mean: float
    ci95: float
    count: int


@dataclass
class EvalReport:
    iteration: int
    records: list
    aggregates: dict  # mode -> metric -> Aggregate

    def aggregate(self, mode, metric):
        return self.aggregates[mode][metric]


def _aggregate(values):
    arr = np.asarray(values, dtype=np.float64)
    n = arr.size
    ci = 1.96 * arr.std(ddof=1) / math.sqrt(n) if n > 1 else 0.0
    return Aggregate(mean=float(arr.mean()), ci95=float(ci), count=int(n))


def make_aggregates(records):
    out = {}
    for mode in (SILENT, VOCALIZED):
        sub = [r for r in records if r.mode == mode]
        if not sub:
            continue
        metrics_for_mode = {
            "recon_mse": _aggregate([r.recon_mse for r in sub]),
            "mcd": _aggregate([r.mcd for r in sub]),
        }
        if mode == SILENT:
            metrics_for_mode["pseudo_fidelity"] = _aggregate(
                [r.pseudo_fidelity for r in sub]
            )
            metrics_for_mode["alignment_error"] = _aggregate(
                [r.alignment_error for r in sub]
            )
        out[mode] = metrics_for_mode
    return out


def evaluate(params, corpus, iteration, excluded_speakers=()):
    """Free-running decode of every test utterance, scored against natural
    acoustics (vocalized) or the generation oracle (silent)."""
    excluded = set(excluded_speakers)
    test_ids = [
        uid
        for uid in sorted(corpus.splits["test"])
        if not (
            corpus.utterances[uid].mode == SILENT
            and corpus.utterances[uid].speaker in excluded
        )
    ]
    if not test_ids:
        raise DataError("test split is empty after speaker exclusion")

    def score(uid):
        utt = corpus.utterances[uid]
        silent = utt.mode == SILENT
        enc = encode(utt, params)
        pred = decode(enc, params, teacher=None)
        ref = corpus.truths[uid].oracle if silent else utt.acoustic
        rec = UtteranceRecord(
            utterance_id=uid,
            speaker=utt.speaker,
            mode=utt.mode,
            recon_mse=mse_seq(pred.post, ref),
            mcd=mcd(pred.post, ref),
        )
        if silent:
            target, path = pseudo_for_utterance(corpus, uid, params, iteration)
            rec.pseudo_fidelity = mse_seq(target.acoustic, corpus.truths[uid].oracle)
            rec.alignment_error = alignment_error(path, corpus.truths[uid].warp)
        return rec

    workers = worker_count()
    if workers > 1 and len(test_ids) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(score, test_ids))
    else:
        records = [score(uid) for uid in test_ids]
    return EvalReport(
        iteration=iteration, records=records, aggregates=make_aggregates(records)
    )


# ---------------------------------------------------------------------------
# domain probe


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 30
    learning_rate: float = 2e-3
    batch_size: int = 8
    n_segments: int = 8
    seg_len: int = 10
    eval_views: int = 4  # spliced draws per held-out utterance
    seed: int = 0


def probe_on_encodings(train_set, test_set, dims, config):
    """Train a fresh discriminator (no reversal pressure) on frozen spliced
    encodings and report held-out accuracy.

    ``train_set``/``test_set`` are lists of (spliced matrix, label) pairs.
    """
    from .netblocks import ModelParams, build_discriminator, discriminate

    if not train_set or not test_set:
        raise DataError("probe needs non-empty train and test sets")
    disc = init_params(dims, config.seed).disc
    opt = adam_init(disc)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 31]))
    for _ in range(config.epochs):
        order = rng.permutation(len(train_set))
        for bi in range(0, len(order), config.batch_size):
            idx = order[bi : bi + config.batch_size]
            grads = None
            for i in idx:
                spliced, label = train_set[i]
                tape = Tape()
                b = bind(tape, disc)
                _, ce = build_discriminator(tape, b, tape.leaf(spliced), 0.0, label=label)
                gm = backward(tape, tape.mul_scalar(ce, 1.0 / len(idx)))
                g = {k: gm[n] for k, n in b.items()}
                if grads is None:
                    grads = g
                else:
                    for k, v in g.items():
                        grads[k] += v
            disc, opt = adam_step(disc, grads, opt, config.learning_rate)
    shell = ModelParams(dims=dims, encoder={}, decoder={}, disc=disc)
    hits = 0
    for spliced, label in test_set:
        probs = discriminate(spliced, shell, 0.0).probs
        hits += int(np.argmax(probs) == label)
    return hits / len(test_set)


def probe_domain_accuracy(params, corpus, config=ProbeConfig()):
    """Domain separability of the frozen encoder's representations:
    accuracy of a freshly trained classifier on held-out utterances.
    Values near 0.5 mean the domains are indistinguishable.

    Held-out accuracy pools the val and test splits with several spliced
    views per utterance, so its quantization stays well below the
    separability differences being compared.
    """
    from .trainer import LABEL_SILENT, LABEL_VOCALIZED, sample_segments

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 32]))

    def spliced_set(splits, views):
        items = []
        for split in splits:
            for uid in sorted(corpus.splits[split]):
                utt = corpus.utterances[uid]
                enc = encode(utt, params)
                label = LABEL_SILENT if utt.mode == SILENT else LABEL_VOCALIZED
                for _ in range(views):
                    spliced = sample_segments(enc, config.n_segments, config.seg_len, rng)
                    items.append((spliced, label))
        return items

    train_set = spliced_set(("train",), 1)
    held_out = spliced_set(("val", "test"), max(1, config.eval_views))
    return probe_on_encodings(train_set, held_out, params.dims, config)


# ---------------------------------------------------------------------------
# CSV / JSON emission


def _fmt(x):
    return "" if x is None else repr(float(x))


def write_report(report, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "per_utterance.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            [
                "utterance_id",
                "speaker",
                "mode",
                "recon_mse",
                "mcd",
                "pseudo_fidelity",
                "alignment_error",
            ]
        )
        for r in report.records:
            w.writerow(
                [
                    r.utterance_id,
                    r.speaker,
                    r.mode,
                    _fmt(r.recon_mse),
                    _fmt(r.mcd),
                    _fmt(r.pseudo_fidelity),
                    _fmt(r.alignment_error),
                ]
            )
    with open(out / "aggregate.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["mode", "metric", "mean", "ci95", "count"])
        for mode in sorted(report.aggregates):
            for metric in sorted(report.aggregates[mode]):
                agg = report.aggregates[mode][metric]
                w.writerow([mode, metric, repr(agg.mean), repr(agg.ci95), agg.count])
    summary = {
        "iteration": report.iteration,
        "n_records": len(report.records),
        "aggregates": {
            mode: {
                metric: {"mean": agg.mean, "ci95": agg.ci95, "count": agg.count}
                for metric, agg in metrics_for_mode.items()
            }
            for mode, metrics_for_mode in report.aggregates.items()
        },
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return out


def write_trace(stats, path):
    """Per-iteration silent/vocalized metric trace CSV."""
    lines = ["iteration,silent_mse,vocalized_mse,pseudo_fidelity,alignment_error"]
    for st in stats:
        rep = st.report
        sil = rep.aggregates.get(SILENT, {})
        voc = rep.aggregates.get(VOCALIZED, {})

        def m(group, key):
            agg = group.get(key)
            return "" if agg is None else repr(agg.mean)

        lines.append(
            f"{st.iteration},{m(sil, 'recon_mse')},{m(voc, 'recon_mse')},"
            f"{m(sil, 'pseudo_fidelity')},{m(sil, 'alignment_error')}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_speaker_fit(path, speakers, xs, ys, x_name, y_name):
    """Per-speaker metric pairs with the least squares line over them."""
    slope, intercept = linear_fit(xs, ys)
    lines = [f"speaker,{x_name},{y_name},slope,intercept"]
    for sp, x, y in zip(speakers, xs, ys):
        lines.append(f"{sp},{x!r},{y!r},{slope!r},{intercept!r}")
    Path(path).write_text("\n".join(lines) + "\n")
    return slope, intercept
