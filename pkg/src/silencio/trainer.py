"""Joint adversarial training of the encoder/decoder and discriminator.

The per-batch objective mirrors the encoder's overall loss

    L = L_recon_silent + L_recon_vocalized - lambda * L_disc

realized with a single backward pass: the cross-entropy term reaches the
discriminator parameters unscaled while the gradient reversal marker folds
``-lambda`` into everything upstream of it.  Update cadence is asymmetric:
before ``switch_epoch`` the discriminator steps every batch and the
encoder/decoder step every ``slow_update_every`` batches (with gradients
accumulated, not discarded); afterwards the roles swap.

The iterative strategy regenerates pseudo targets with the freshly updated
encoder, recomputes the reliability threshold from the new cost
distribution, and retrains, a configurable number of rounds.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from . import metrics
from .align import (
    SelectionResult,
    compute_threshold,
    generate_pseudo_targets,
    save_pseudo_targets,
    select_reliable,
)
from .errors import ContractError, DataError, NumericError
from .netblocks import (
    Dims,
    EncodedSequence,
    bind_model,
    build_decoder_teacher,
    build_discriminator,
    build_encoder,
    init_params,
)
from .synthcorpus import SILENT, VOCALIZED
from .tensorgrad import Tape, adam_init, adam_step, backward

# domain labels fed to the discriminator
LABEL_SILENT = 0
LABEL_VOCALIZED = 1

# rng stream tags (mixed with the seed so independent stages never share a stream)
_STREAM_PRETRAIN = 11
_STREAM_SHUFFLE = 12
_STREAM_SEGMENTS = 13


@dataclass(frozen=True)
class TrainConfig:
    epochs_per_iteration: int = 60
    switch_epoch: int = 30
    slow_update_every: int = 5
    batch_size: int = 8
    learning_rate: float = 5e-4
    n_segments: int = 8
    seg_len: int = 10
    iterations: int = 3
    k: int = 1
    seed: int = 0
    pretrain_epochs: int = 100
    dims: Dims = Dims()
    use_disc: bool = True
    silent_supervision: bool = True

    def validate(self):
        if self.epochs_per_iteration < 1:
            raise ContractError("epochs_per_iteration must be >= 1")
        if not (0 <= self.switch_epoch <= self.epochs_per_iteration):
            raise ContractError(
                f"switch_epoch {self.switch_epoch} outside [0, {self.epochs_per_iteration}]"
            )
        if self.slow_update_every < 1:
            raise ContractError("slow_update_every must be >= 1")
        if self.iterations < 1:
            raise ContractError("iterations must be >= 1")
        if self.batch_size < 1 or self.n_segments < 1 or self.seg_len < 1:
            raise ContractError("batch_size, n_segments and seg_len must be >= 1")
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be > 0")
        if self.pretrain_epochs < 0 or self.seed < 0 or self.k < 1:
            raise ContractError("pretrain_epochs, seed and k must be non-negative (k >= 1)")

    def model_dims(self):
        return replace(self.dims, k=self.k)


def paper_profile(**overrides):
    """The full-scale segment splicing profile (32 segments of 50 frames)."""
    return TrainConfig(**{"n_segments": 32, "seg_len": 50, **overrides})


@dataclass
class LossBreakdown:
    recon_s: float
    recon_v: float
    disc: float
    lam: float
    total: float


@dataclass
class UpdateFlags:
    update_encdec: bool
    update_disc: bool


@dataclass
class IterationStats:
    iteration: int
    epsilon: float
    n_reliable: int
    excluded_speakers: list
    history: list
    report: object = None  # metrics.EvalReport when evaluation ran
    params_snapshot: object = None  # ModelParams at end of the round


def lambda_schedule(current_epoch, total_epochs):
    """Adversarial weight ramp: 2 / (1 + exp(-2 e / E)) - 1, from 0 to tanh(1)."""
    if total_epochs < 1 or not (0 <= current_epoch <= total_epochs):
        raise ContractError(
            f"need 0 <= current_epoch <= total_epochs, got {current_epoch}/{total_epochs}"
        )
    return 2.0 / (1.0 + math.exp(-2.0 * current_epoch / total_epochs)) - 1.0


def update_flags(epoch, batch_idx, config):
    """Which parameter groups step after this batch."""
    if epoch >= config.epochs_per_iteration:
        raise ContractError(f"epoch {epoch} outside the configured iteration")
    slow_fires = (batch_idx + 1) % config.slow_update_every == 0
    if epoch < config.switch_epoch:
        return UpdateFlags(update_encdec=slow_fires, update_disc=True)
    return UpdateFlags(update_encdec=True, update_disc=slow_fires)


def sample_segments(encoded, n_segments, seg_len, rng, tape=None):
    """Splice randomly chosen fixed-length segments of an encoded sequence.

    Sequences shorter than ``seg_len`` are first extended cyclically to
    exactly ``seg_len`` rows.  Returns a tape node when a tape is given
    (gradients flow back into the sliced frames), else a float matrix.
    """
    if n_segments < 1 or seg_len < 1:
        raise ContractError("n_segments and seg_len must be >= 1")
    feats = encoded.features
    frames = feats.shape[0]
    if frames < 1:
        raise ContractError("cannot sample segments from an empty sequence")
    on_tape = tape is not None
    if on_tape:
        if encoded.node is None:
            raise ContractError("sample_segments on a tape needs an encoded node")
        base = encoded.node
        if frames < seg_len:
            full, rem = divmod(seg_len - frames, frames)
            parts = [base] * (1 + full)
            if rem:
                parts.append(tape.slice_time(base, 0, rem))
            base = tape.concat_time(*parts)
        usable = max(frames, seg_len)
        offsets = rng.integers(0, usable - seg_len + 1, size=n_segments)
        pieces = [tape.slice_time(base, o, o + seg_len) for o in offsets]
        return pieces[0] if len(pieces) == 1 else tape.concat_time(*pieces)
    ext = feats
    if frames < seg_len:
        full, rem = divmod(seg_len - frames, frames)
        parts = [feats] * (1 + full)
        if rem:
            parts.append(feats[:rem])
        ext = np.concatenate(parts, axis=0)
    usable = ext.shape[0]
    offsets = rng.integers(0, usable - seg_len + 1, size=n_segments)
    return np.concatenate([ext[o : o + seg_len] for o in offsets], axis=0)


# ---------------------------------------------------------------------------
# train state and the per-batch step


def _rng(seed, *tags):
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + [int(t) for t in tags]))


class TrainState:
    """Parameters, optimizer moments and pending gradient accumulators."""

    def __init__(self, params, config, iteration=0):
        self.params = params.copy()
        self.config = config
        self.opt_encdec = adam_init(self._encdec())
        self.opt_disc = adam_init(params.disc)
        self.acc_encdec = None
        self.n_acc_encdec = 0
        self.acc_disc = None
        self.n_acc_disc = 0
        self.rng_shuffle = _rng(config.seed, _STREAM_SHUFFLE, iteration)
        self.rng_segments = _rng(config.seed, _STREAM_SEGMENTS, iteration)

    def _encdec(self):
        merged = {f"enc/{k}": v for k, v in self.params.encoder.items()}
        merged.update({f"dec/{k}": v for k, v in self.params.decoder.items()})
        return merged

    def _write_encdec(self, merged):
        for name, arr in merged.items():
            group, key = name.split("/", 1)
            if group == "enc":
                self.params.encoder[key] = arr
            else:
                self.params.decoder[key] = arr

    def push_encdec(self, grads):
        if self.acc_encdec is None:
            self.acc_encdec = {k: g.copy() for k, g in grads.items()}
        else:
            for k, g in grads.items():
                self.acc_encdec[k] += g
        self.n_acc_encdec += 1

    def push_disc(self, grads):
        if self.acc_disc is None:
            self.acc_disc = {k: g.copy() for k, g in grads.items()}
        else:
            for k, g in grads.items():
                self.acc_disc[k] += g
        self.n_acc_disc += 1

    def step_encdec(self, lr):
        if self.n_acc_encdec == 0:
            return
        mean = {k: g / self.n_acc_encdec for k, g in self.acc_encdec.items()}
        new, self.opt_encdec = adam_step(self._encdec(), mean, self.opt_encdec, lr)
        self._write_encdec(new)
        self.acc_encdec = None
        self.n_acc_encdec = 0

    def step_disc(self, lr):
        if self.n_acc_disc == 0:
            return
        mean = {k: g / self.n_acc_disc for k, g in self.acc_disc.items()}
        self.params.disc, self.opt_disc = adam_step(self.params.disc, mean, self.opt_disc, lr)
        self.acc_disc = None
        self.n_acc_disc = 0


@dataclass
class BatchItem:
    utterance: object
    target: np.ndarray
    label: int
    is_silent: bool


def training_step(batch, state, lam, flags):
    """One batch: forward, single backward through the reversal marker,
    gradient accumulation, and optimizer steps for the flagged groups.

    The whole batch is recorded on one tape sharing one parameter binding;
    backward is linear, so the summed loss node yields exactly the summed
    per-utterance gradients.
    """
    if not batch:
        raise ContractError("training_step needs a non-empty batch")
    config = state.config
    n_total = len(batch)
    n_s = sum(1 for item in batch if item.is_silent)
    n_v = n_total - n_s
    sum_s = sum_v = sum_d = 0.0
    tape = Tape()
    binds = bind_model(tape, state.params)
    total_node = None
    for item in batch:
        utt = item.utterance
        enc_node = build_encoder(
            tape, binds["encoder"], tape.leaf(utt.tongue), tape.leaf(utt.lip)
        )
        pre, post = build_decoder_teacher(
            tape, binds["decoder"], enc_node, item.target, config.k
        )
        target_node = tape.leaf(item.target)
        # per-utterance squared L2 norm of the difference matrix; an
        # entrywise mean here would let the bounded cross-entropy gradients
        # drown the reconstruction signal once the fit is good
        recon = tape.mul_scalar(
            tape.add(tape.sq_err_mean(pre, target_node), tape.sq_err_mean(post, target_node)),
            0.5 * item.target.size,
        )
        share = tape.mul_scalar(recon, 1.0 / (n_s if item.is_silent else n_v))
        if config.use_disc:
            enc_seq = EncodedSequence(utt.id, tape.value(enc_node), node=enc_node)
            spliced = sample_segments(
                enc_seq, config.n_segments, config.seg_len, state.rng_segments, tape=tape
            )
            _, ce = build_discriminator(tape, binds["disc"], spliced, lam, label=item.label)
            sum_d += float(tape.value(ce))
            share = tape.add(share, tape.mul_scalar(ce, 1.0 / n_total))
        if item.is_silent:
            sum_s += float(tape.value(recon))
        else:
            sum_v += float(tape.value(recon))
        total_node = share if total_node is None else tape.add(total_node, share)
    grad_map = backward(tape, total_node)
    enc_grads = {f"enc/{k}": grad_map[n] for k, n in binds["encoder"].items()}
    enc_grads.update({f"dec/{k}": grad_map[n] for k, n in binds["decoder"].items()})
    disc_grads = (
        {k: grad_map[n] for k, n in binds["disc"].items()} if config.use_disc else None
    )
    state.push_encdec(enc_grads)
    if flags.update_encdec:
        state.step_encdec(config.learning_rate)
    if config.use_disc:
        state.push_disc(disc_grads)
        if flags.update_disc:
            state.step_disc(config.learning_rate)
    recon_s = sum_s / n_s if n_s else 0.0
    recon_v = sum_v / n_v if n_v else 0.0
    disc = sum_d / n_total if config.use_disc else 0.0
    breakdown = LossBreakdown(
        recon_s=recon_s,
        recon_v=recon_v,
        disc=disc,
        lam=lam,
        total=recon_s + recon_v - lam * disc,
    )
    if not math.isfinite(breakdown.total):
        raise NumericError(
            f"non-finite loss (recon_s={recon_s}, recon_v={recon_v}, disc={disc})"
        )
    return breakdown


def _batch_item(corpus, uid, pseudo_map):
    utt = corpus.utterances[uid]
    if utt.mode == SILENT:
        return BatchItem(utt, pseudo_map[uid].acoustic, LABEL_SILENT, True)
    return BatchItem(utt, utt.acoustic, LABEL_VOCALIZED, False)


def _epoch_mean(per_batch):
    n = len(per_batch)
    recon_s = sum(b.recon_s for b in per_batch) / n
    recon_v = sum(b.recon_v for b in per_batch) / n
    disc = sum(b.disc for b in per_batch) / n
    lam = per_batch[0].lam
    return LossBreakdown(recon_s, recon_v, disc, lam, recon_s + recon_v - lam * disc)


def run_epochs(corpus, selection, pseudo_map, params, config, iteration):
    """Train over the union of vocalized and reliable silent utterances."""
    config.validate()
    voc_ids = corpus.split_ids("train", mode=VOCALIZED)
    sil_ids = list(selection.reliable_ids) if config.silent_supervision else []
    pool = sorted(voc_ids) + sorted(sil_ids)
    if not pool:
        raise DataError("no training utterances: vocalized and reliable sets both empty")
    state = TrainState(params, config, iteration=iteration)
    epochs = config.epochs_per_iteration
    history = []
    for epoch in range(epochs):
        lam = lambda_schedule(epoch, epochs) if config.use_disc else 0.0
        order = [pool[i] for i in state.rng_shuffle.permutation(len(pool))]
        per_batch = []
        for bi in range(0, len(order), config.batch_size):
            batch_ids = order[bi : bi + config.batch_size]
            flags = update_flags(epoch, bi // config.batch_size, config)
            batch = [_batch_item(corpus, uid, pseudo_map) for uid in batch_ids]
            per_batch.append(training_step(batch, state, lam, flags))
        history.append(_epoch_mean(per_batch))
    return state.params, history


def pretrain_vocalized(corpus, config):
    """Supervised encoder+decoder training on vocalized data only.

    Provides the initial encoder the first pseudo-target pass relies on.
    Returns the trained parameters and the per-epoch loss trace.
    """
    config.validate()
    voc_ids = corpus.split_ids("train", mode=VOCALIZED)
    if not voc_ids:
        raise DataError("pretraining needs vocalized training utterances")
    params = init_params(config.model_dims(), config.seed)
    history = []
    if config.pretrain_epochs == 0:
        return params, history
    sup = replace(config, use_disc=False)
    state = TrainState(params, sup, iteration=0)
    state.rng_shuffle = _rng(config.seed, _STREAM_PRETRAIN)
    flags = UpdateFlags(update_encdec=True, update_disc=False)
    pool = sorted(voc_ids)
    for _ in range(config.pretrain_epochs):
        order = [pool[i] for i in state.rng_shuffle.permutation(len(pool))]
        per_batch = []
        for bi in range(0, len(order), config.batch_size):
            batch = [_batch_item(corpus, uid, {}) for uid in order[bi : bi + config.batch_size]]
            per_batch.append(training_step(batch, state, 0.0, flags))
        history.append(_epoch_mean(per_batch))
    return state.params, history


def iterative_train(
    corpus,
    config,
    params=None,
    evaluate_each=True,
    pseudo_dir=None,
):
    """Alternate pseudo-target generation and adversarial training.

    Round 1 aligns with the given (pretrained) encoder; later rounds re-align
    with the encoder the previous round produced and recompute the threshold
    from the fresh cost distribution.  Optimizer state resets every round.
    """
    config.validate()
    if params is None:
        params, _ = pretrain_vocalized(corpus, config)
    stats = []
    for iteration in range(1, config.iterations + 1):
        pseudo_map = {}
        if config.silent_supervision:
            targets = generate_pseudo_targets(corpus, params, iteration)
            epsilon = compute_threshold([t.dtw_cost for t in targets])
            selection = select_reliable(targets, epsilon, corpus)
            pseudo_map = {t.utterance_id: t for t in targets if t.reliable}
            if pseudo_dir is not None:
                save_pseudo_targets(targets, pseudo_dir, iteration)
        else:
            selection = SelectionResult(
                epsilon=float("nan"), reliable_ids=[], costs={}, speakers={}
            )
        params, history = run_epochs(corpus, selection, pseudo_map, params, config, iteration)
        report = None
        if evaluate_each:
            report = metrics.evaluate(
                params, corpus, iteration, excluded_speakers=selection.excluded_speakers
            )
        stats.append(
            IterationStats(
                iteration=iteration,
                epsilon=selection.epsilon,
                n_reliable=len(selection.reliable_ids),
                excluded_speakers=list(selection.excluded_speakers),
                history=history,
                report=report,
                params_snapshot=params.copy(),
            )
        )
    return params, stats


def write_loss_history(path, stats):
    """Per-epoch loss CSV across iterations."""
    lines = ["iteration,epoch,recon_s,recon_v,disc,lambda,total"]
    for st in stats:
        for epoch, lb in enumerate(st.history):
            lines.append(
                f"{st.iteration},{epoch},{lb.recon_s!r},{lb.recon_v!r},"
                f"{lb.disc!r},{lb.lam!r},{lb.total!r}"
            )
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
