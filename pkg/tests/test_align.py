import dataclasses

import numpy as np
import pytest

from silencio.align import (
    AlignmentPath,
    compute_threshold,
    dtw,
    generate_pseudo_targets,
    pairwise_distance,
    path_of_warp,
    pseudo_for_utterance,
    select_reliable,
    warp_acoustic,
)
from silencio.errors import ContractError
from silencio.netblocks import Dims, init_params
from silencio.synthcorpus import SILENT, CorpusConfig, generate_corpus


def brute_force_min_cost(dist):
    """Exhaustive enumeration of every monotone path (no DP shortcuts)."""
    t, u = dist.shape
    best = [np.inf]

    def walk(i, j, acc):
        acc = acc + dist[i, j]
        if i == t - 1 and j == u - 1:
            best[0] = min(best[0], acc)
            return
        if i + 1 < t:
            walk(i + 1, j, acc)
        if j + 1 < u:
            walk(i, j + 1, acc)
        if i + 1 < t and j + 1 < u:
            walk(i + 1, j + 1, acc)

    walk(0, 0, 0.0)
    return best[0]


def assert_valid_path(path, t, u):
    pairs = path.pairs()
    assert pairs[0] == (0, 0)
    assert pairs[-1] == (t - 1, u - 1)
    deltas = {(b[0] - a[0], b[1] - a[1]) for a, b in zip(pairs, pairs[1:])}
    assert deltas <= {(1, 0), (0, 1), (1, 1)}
    assert {p[0] for p in pairs} == set(range(t))
    assert {p[1] for p in pairs} == set(range(u))


class TestPairwiseDistance:
    def test_identical_sequences_zero_diagonal(self, rng):
        f = rng.normal(size=(5, 3))
        d = pairwise_distance(f, f)
        assert np.allclose(np.diag(d), 0.0)
        assert np.all(d >= 0.0)

    def test_one_dimensional_frames(self):
        d = pairwise_distance(np.array([[0.0]]), np.array([[3.0]]))
        assert d.shape == (1, 1)
        assert d[0, 0] == 3.0

    def test_against_per_pair_norms(self, rng):
        a = rng.normal(size=(3, 2))
        b = rng.normal(size=(4, 2))
        d = pairwise_distance(a, b)
        for i in range(3):
            for j in range(4):
                assert abs(d[i, j] - np.linalg.norm(a[i] - b[j])) <= 1e-12

    def test_width_mismatch_rejected(self, rng):
        with pytest.raises(ContractError):
            pairwise_distance(rng.normal(size=(3, 2)), rng.normal(size=(3, 3)))


class TestDtw:
    def test_single_cell(self):
        path = dtw(np.array([[0.0]]))
        assert path.pairs() == [(0, 0)]
        assert path.total_cost == 0.0
        assert path.normalized_cost == 0.0

    def test_two_by_two_diagonal(self):
        path = dtw(np.array([[1.0, 2.0], [3.0, 1.0]]))
        assert path.pairs() == [(0, 0), (1, 1)]
        assert path.total_cost == 2.0
        assert path.normalized_cost == 1.0

    def test_identical_sequences_pure_diagonal(self, rng):
        f = rng.normal(size=(6, 4))
        path = dtw(pairwise_distance(f, f))
        assert path.pairs() == [(i, i) for i in range(6)]
        assert path.total_cost == 0.0

    def test_rejects_empty_and_invalid(self, rng):
        with pytest.raises(ContractError):
            dtw(np.zeros((0, 3)))
        with pytest.raises(ContractError):
            dtw(np.array([[1.0, -0.5]]))
        with pytest.raises(ContractError):
            dtw(np.array([[np.nan]]))

    def test_equals_brute_force_enumeration(self, rng):
        for _ in range(40):
            t = int(rng.integers(1, 7))
            u = int(rng.integers(1, 7))
            dist = np.abs(rng.normal(size=(t, u)))
            path = dtw(dist)
            assert_valid_path(path, t, u)
            assert abs(path.total_cost - brute_force_min_cost(dist)) <= 1e-10
            direct = sum(dist[i, j] for i, j in path.pairs())
            assert abs(path.total_cost - direct) <= 1e-10

    def test_total_cost_symmetric_under_transpose(self, rng):
        for _ in range(20):
            dist = np.abs(rng.normal(size=(4, 6)))
            assert abs(dtw(dist).total_cost - dtw(dist.T.copy()).total_cost) <= 1e-10


class TestWarpAcoustic:
    def test_one_to_many_repeats(self):
        path = AlignmentPath(np.array([0, 0, 1]), np.array([0, 1, 2]), 0.0, 0.0)
        out = warp_acoustic(np.array([[0.0], [10.0]]), path)
        assert np.array_equal(out, np.array([[0.0], [0.0], [10.0]]))

    def test_many_to_one_averages(self):
        path = AlignmentPath(np.array([0, 1, 2]), np.array([0, 0, 1]), 0.0, 0.0)
        out = warp_acoustic(np.array([[0.0], [4.0], [10.0]]), path)
        assert np.array_equal(out, np.array([[2.0], [10.0]]))

    def test_diagonal_path_is_identity(self, rng):
        a = rng.normal(size=(5, 3))
        path = AlignmentPath(np.arange(5), np.arange(5), 0.0, 0.0)
        assert np.array_equal(warp_acoustic(a, path), a)

    def test_length_mismatch_rejected(self, rng):
        path = AlignmentPath(np.arange(5), np.arange(5), 0.0, 0.0)
        with pytest.raises(ContractError):
            warp_acoustic(rng.normal(size=(4, 3)), path)

    def test_width_preserved_and_convex(self, rng):
        for _ in range(20):
            a = rng.normal(size=(4, 3))
            path = dtw(np.abs(rng.normal(size=(4, 6))))
            out = warp_acoustic(a, path)
            assert out.shape == (6, 3)
            for j in range(6):
                rows = [a[i] for i, jj in path.pairs() if jj == j]
                lo = np.min(rows, axis=0) - 1e-12
                hi = np.max(rows, axis=0) + 1e-12
                assert np.all(out[j] >= lo) and np.all(out[j] <= hi)

    def test_blockwise_for_rate_ratio_two(self):
        # vocalized frames 0,1 with k=2 acoustic rows each; silent j=0 maps
        # to both, j=1 to frame 1 only
        a = np.array([[0.0], [2.0], [10.0], [20.0]])
        path = AlignmentPath(np.array([0, 1, 1]), np.array([0, 0, 1]), 0.0, 0.0)
        out = warp_acoustic(a, path, k=2)
        assert np.array_equal(out, np.array([[5.0], [11.0], [10.0], [20.0]]))


def identity_like_encoder(dims, seed=0):
    """Per-frame injective encoder: center-tap sign-split convs, random
    projection.  No temporal mixing, so frame-equal inputs stay
    frame-equal after encoding."""
    params = init_params(dims, seed)
    mid = dims.kernel // 2
    for prefix, width in (("t", dims.d_t), ("l", dims.d_l)):
        w1 = np.zeros_like(params.encoder[f"{prefix}_conv1_w"])
        for i in range(width):
            w1[mid, i, i] = 1.0
            w1[mid, i, width + i] = -1.0
        params.encoder[f"{prefix}_conv1_w"] = w1
        w2 = np.zeros_like(params.encoder[f"{prefix}_conv2_w"])
        for c in range(w2.shape[1]):
            w2[mid, c, c] = 1.0
        params.encoder[f"{prefix}_conv2_w"] = w2
        params.encoder[f"{prefix}_conv1_b"][:] = 0.0
        params.encoder[f"{prefix}_conv2_b"][:] = 0.0
    return params


@pytest.fixture(scope="module")
def clean_corpus():
    return generate_corpus(
        CorpusConfig(speakers=2, utterances_per_speaker=4, seed=3, noise=0.0, silent_noise=0.0, alpha=(1.0, 1.0))
    )


class TestGeneratePseudoTargets:
    def test_exact_recovery_with_injective_encoder(self, clean_corpus):
        params = identity_like_encoder(Dims(), seed=1)
        targets = generate_pseudo_targets(clean_corpus, params, 1)
        assert len(targets) == len(clean_corpus.split_ids("train", SILENT))
        for t in targets:
            assert t.dtw_cost == 0.0
            assert np.array_equal(t.acoustic, clean_corpus.truths[t.utterance_id].oracle)
            assert t.iteration == 1

    def test_recovered_path_matches_generation_warp(self, clean_corpus):
        params = identity_like_encoder(Dims(), seed=1)
        sid = clean_corpus.split_ids("train", SILENT)[0]
        _, path = pseudo_for_utterance(clean_corpus, sid, params, 1)
        truth = clean_corpus.truths[sid]
        assert np.array_equal(path.vi, path_of_warp(truth.warp).vi)
        assert np.array_equal(path.sj, path_of_warp(truth.warp).sj)

    def test_no_silent_utterances_gives_empty_list(self, clean_corpus):
        stripped = dataclasses.replace(
            clean_corpus,
            splits={
                "train": [
                    u
                    for u in clean_corpus.splits["train"]
                    if clean_corpus.utterances[u].mode != SILENT
                ],
                "val": list(clean_corpus.splits["val"]),
                "test": list(clean_corpus.splits["test"]),
            },
        )
        assert generate_pseudo_targets(stripped, identity_like_encoder(Dims()), 1) == []

    def test_regeneration_deterministic(self, clean_corpus):
        params = init_params(Dims(), seed=9)
        t1 = generate_pseudo_targets(clean_corpus, params, 2)
        t2 = generate_pseudo_targets(clean_corpus, params, 2)
        for a, b in zip(t1, t2):
            assert a.utterance_id == b.utterance_id
            assert a.dtw_cost == b.dtw_cost
            assert np.array_equal(a.acoustic, b.acoustic)


class TestThresholdAndSelection:
    def test_mean_of_two(self):
        assert compute_threshold([30.0, 50.0]) == 40.0

    def test_single_sample(self):
        assert compute_threshold([7.25]) == 7.25

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            compute_threshold([])

    def _targets(self, costs):
        from silencio.align import PseudoTarget

        return [
            PseudoTarget(uid, speaker, np.zeros((2, 2)), cost, 1)
            for uid, speaker, cost in costs
        ]

    def test_strict_inequality_selection(self, tiny_corpus):
        targets = self._targets([("u1", "spk00", 30.0), ("u2", "spk00", 50.0)])
        sel = select_reliable(targets, 40.0, tiny_corpus)
        assert sel.reliable_ids == ["u1"]
        assert targets[0].reliable and not targets[1].reliable

    def test_boundary_cost_excluded(self, tiny_corpus):
        targets = self._targets([("u1", "spk00", 40.0)])
        assert select_reliable(targets, 40.0, tiny_corpus).reliable_ids == []

    def test_epsilon_below_all_excludes_every_speaker(self, tiny_corpus):
        targets = self._targets(
            [("u1", "spk00", 5.0), ("u2", "spk00", 6.0), ("u3", "spk01", 7.0)]
        )
        sel = select_reliable(targets, 1.0, tiny_corpus)
        assert sel.reliable_ids == []
        assert sel.excluded_speakers == ["spk00", "spk01"]

    def test_monotone_in_epsilon_and_partition(self, rng, tiny_corpus):
        for _ in range(50):
            n = int(rng.integers(1, 12))
            targets = self._targets(
                [(f"u{i}", f"spk{i % 3}", float(rng.uniform(0, 100))) for i in range(n)]
            )
            e1, e2 = sorted(rng.uniform(0, 100, size=2))
            r1 = set(select_reliable(targets, e1, tiny_corpus).reliable_ids)
            r2 = set(select_reliable(targets, e2, tiny_corpus).reliable_ids)
            assert r1 <= r2
            sel = select_reliable(targets, e1, tiny_corpus)
            unreliable = {t.utterance_id for t in targets if not t.reliable}
            assert unreliable | set(sel.reliable_ids) == {t.utterance_id for t in targets}
            assert not (unreliable & set(sel.reliable_ids))
