"""DTW alignment of encoder outputs and pseudo acoustic target generation.

For each silent utterance the vocalized twin's natural acoustics are warped
onto the silent time base along the minimum-cost monotone alignment of the
two encoder outputs.  Alignment costs (path-length normalized) drive the
reliability threshold: the mean cost over all silent training utterances.
Samples at or above the threshold are dropped for the next training round,
and speakers none of whose silent utterances pass are flagged so evaluation
can exclude them.
"""

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from . import kernels
from .backend import worker_count
from .errors import ContractError, DataError
from .netblocks import encode
from .synthcorpus import SILENT, write_ataf


@dataclass
class AlignmentPath:
    """Monotone pairing of a vocalized (i) and silent (j) frame axis."""

    vi: np.ndarray
    sj: np.ndarray
    total_cost: float
    normalized_cost: float

    def __len__(self):
        return len(self.vi)

    def pairs(self):
        return list(zip(self.vi.tolist(), self.sj.tolist()))


@dataclass
class PseudoTarget:
    utterance_id: str
    speaker: str
    acoustic: np.ndarray
    dtw_cost: float
    iteration: int
    reliable: bool = False


@dataclass
class SelectionResult:
    epsilon: float
    reliable_ids: list
    costs: dict  # utterance id -> normalized cost
    speakers: dict  # utterance id -> speaker id
    excluded_speakers: list = field(default_factory=list)


def pairwise_distance(f_v, f_s):
    """Euclidean distance between every vocalized and silent frame pair."""
    f_v = np.asarray(f_v, dtype=np.float64)
    f_s = np.asarray(f_s, dtype=np.float64)
    if f_v.ndim != 2 or f_s.ndim != 2 or f_v.shape[1] != f_s.shape[1]:
        raise ContractError(
            f"frame widths differ: {f_v.shape} vs {f_s.shape}"
        )
    return cdist(f_v, f_s)


def dtw(dist):
    """Minimum-total-cost monotone path through a cost matrix.

    Steps are {(1,0),(0,1),(1,1)}; backtracking prefers the diagonal, then
    (0,1), then (1,0) on ties, which makes the path deterministic.
    """
    dist = np.ascontiguousarray(dist, dtype=np.float64)
    if dist.ndim != 2 or dist.shape[0] < 1 or dist.shape[1] < 1:
        raise ContractError(f"cost matrix must be non-empty 2-D, got shape {dist.shape}")
    if not np.isfinite(dist).all() or (dist < 0).any():
        raise ContractError("cost matrix entries must be finite and >= 0")
    acc = kernels.dtw_table(dist)
    vi, sj = kernels.dtw_backtrack(acc)
    total = float(acc[-1, -1])
    return AlignmentPath(vi=vi, sj=sj, total_cost=total, normalized_cost=total / len(vi))


def warp_acoustic(a_v, path, k=1):
    """Warp vocalized acoustics onto the silent time base along a path.

    Silent frame j receives the mean of the acoustic rows aligned to it;
    with rate ratio k the rule applies to each of the k sub-frames of the
    aligned articulatory frames blockwise.
    """
    a_v = np.asarray(a_v, dtype=np.float64)
    t_voc = int(path.vi[-1]) + 1
    t_sil = int(path.sj[-1]) + 1
    if a_v.shape[0] != k * t_voc:
        raise ContractError(
            f"acoustics have {a_v.shape[0]} rows, path implies {k * t_voc}"
        )
    d_a = a_v.shape[1]
    out = np.zeros((k * t_sil, d_a))
    counts = np.zeros(t_sil)
    for i, j in zip(path.vi, path.sj):
        out[j * k : (j + 1) * k] += a_v[i * k : (i + 1) * k]
        counts[j] += 1.0
    out /= np.repeat(counts, k)[:, None]
    return out


def path_of_warp(warp):
    """The alignment path equivalent to a generation-time staircase warp."""
    warp = np.asarray(warp, dtype=np.int64)
    return AlignmentPath(
        vi=warp.copy(),
        sj=np.arange(len(warp), dtype=np.int64),
        total_cost=0.0,
        normalized_cost=0.0,
    )


def pseudo_for_utterance(corpus, silent_id, enc_params, iteration):
    """Pseudo target and alignment path for one silent utterance."""
    silent = corpus.utterances[silent_id]
    voc = corpus.twin(silent_id)
    if voc.acoustic is None:
        raise DataError(f"vocalized twin {voc.id} of {silent_id} has no acoustics")
    f_s = encode(silent, enc_params).features
    f_v = encode(voc, enc_params).features
    path = dtw(pairwise_distance(f_v, f_s))
    acoustic = warp_acoustic(voc.acoustic, path, corpus.config.k)
    target = PseudoTarget(
        utterance_id=silent_id,
        speaker=silent.speaker,
        acoustic=acoustic,
        dtw_cost=path.normalized_cost,
        iteration=iteration,
    )
    return target, path


def generate_pseudo_targets(corpus, enc_params, iteration):
    """Pseudo targets for every silent training utterance, ordered by id."""
    ids = corpus.split_ids("train", mode=SILENT)
    for uid in ids:
        utt = corpus.utterances[uid]
        if utt.parallel_id not in corpus.utterances:
            raise DataError(f"utterance {uid} has no parallel twin {utt.parallel_id}")
    workers = worker_count()
    if workers > 1 and len(ids) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(
                pool.map(lambda u: pseudo_for_utterance(corpus, u, enc_params, iteration)[0], ids)
            )
    else:
        results = [pseudo_for_utterance(corpus, u, enc_params, iteration)[0] for u in ids]
    return results


def compute_threshold(costs):
    """Reliability threshold: the arithmetic mean of the alignment costs."""
    costs = list(costs)
    if not costs:
        raise ContractError("cannot compute a threshold from zero costs")
    arr = np.asarray(costs, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise ContractError("costs must be finite")
    return float(arr.mean())


def select_reliable(pseudo_targets, epsilon, corpus):
    """Split pseudo targets at the threshold (strictly below passes).

    Also marks each target's ``reliable`` flag in place and lists speakers
    with no passing silent utterance; those are excluded from silent-mode
    test aggregates downstream.
    """
    if not np.isfinite(epsilon):
        raise ContractError(f"epsilon must be finite, got {epsilon}")
    costs, speakers, reliable_ids = {}, {}, []
    passing_speakers, all_speakers = set(), set()
    for target in pseudo_targets:
        costs[target.utterance_id] = target.dtw_cost
        speakers[target.utterance_id] = target.speaker
        all_speakers.add(target.speaker)
        target.reliable = target.dtw_cost < epsilon
        if target.reliable:
            reliable_ids.append(target.utterance_id)
            passing_speakers.add(target.speaker)
    return SelectionResult(
        epsilon=float(epsilon),
        reliable_ids=sorted(reliable_ids),
        costs=costs,
        speakers=speakers,
        excluded_speakers=sorted(all_speakers - passing_speakers),
    )


def save_pseudo_targets(targets, base_dir, iteration):
    """Persist one iteration's pseudo targets plus the cost table CSV."""
    out = Path(base_dir) / "pseudo" / f"iter{iteration}"
    out.mkdir(parents=True, exist_ok=True)
    for t in sorted(targets, key=lambda t: t.utterance_id):
        write_ataf(out / f"{t.utterance_id}.ataf", t.acoustic)
    with open(out / "costs.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["utterance_id", "speaker_id", "cost", "reliable"])
        for t in sorted(targets, key=lambda t: t.utterance_id):
            writer.writerow([t.utterance_id, t.speaker, repr(t.dtw_cost), int(t.reliable)])
    return out
