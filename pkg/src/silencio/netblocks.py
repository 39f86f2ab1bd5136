"""The three networks: dual-stream encoder, autoregressive decoder, domain
discriminator.

All three are built from tensorgrad primitives so the whole model remains
finite-difference checkable.  The encoder runs each articulatory stream
(tongue, lip) through its own two-layer temporal conv stack, concatenates
per frame and projects to the shared feature width.  The decoder is
frame-synchronous: encoder frame n (repeated ``k`` times for rate ratio k)
is consumed at step n together with the previous acoustic frame fed through
a pre-net; a gated recurrent cell drives the frame projection and a
two-layer conv post-net with a residual connection refines the result.  The
discriminator sees spliced encoder segments through a gradient reversal
marker, two conv+relu layers, a global max-pool over time and a linear
head.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError
from .tensorgrad import Tape, bind


@dataclass(frozen=True)
class Dims:
    """Layer widths; defaults are sized for finite-difference testing."""

    d_t: int = 6
    d_l: int = 4
    d_f: int = 16
    d_a: int = 8
    enc_hidden: int = 16
    gru_hidden: int = 16
    prenet_dim: int = 8
    disc_hidden: int = 16
    kernel: int = 3
    k: int = 1

    def validate(self):
        for name, v in self.__dict__.items():
            if v < 1:
                raise ContractError(f"Dims.{name} must be positive, got {v}")
        if self.kernel % 2 == 0:
            raise ContractError(f"Dims.kernel must be odd, got {self.kernel}")


@dataclass
class ModelParams:
    dims: Dims
    encoder: dict
    decoder: dict
    disc: dict

    def copy(self):
        return ModelParams(
            dims=self.dims,
            encoder={k: v.copy() for k, v in self.encoder.items()},
            decoder={k: v.copy() for k, v in self.decoder.items()},
            disc={k: v.copy() for k, v in self.disc.items()},
        )


@dataclass
class EncodedSequence:
    """Per-frame articulatory representation, one row per input frame."""

    utterance_id: str
    features: np.ndarray
    node: Optional[int] = None


@dataclass
class Prediction:
    """Decoder output pair: initial frames and post-net refined frames."""

    utterance_id: str
    pre: np.ndarray
    post: np.ndarray


@dataclass
class DiscResult:
    probs: np.ndarray
    logits: np.ndarray
    loss_node: Optional[int] = None
    logits_node: Optional[int] = None


def _glorot(rng, shape, fan_in, fan_out):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def init_params(dims, seed):
    """Uniform Glorot weights, zero biases, deterministic per seed.

    Each network draws from its own derived RNG stream, so e.g. building a
    model with or without ever touching the discriminator yields identical
    encoder/decoder weights.
    """
    dims.validate()
    enc_ss, dec_ss, disc_ss = np.random.SeedSequence(seed).spawn(3)
    ker = dims.kernel

    rng = np.random.default_rng(enc_ss)
    eh, df = dims.enc_hidden, dims.d_f
    encoder = {}
    for prefix, width in (("t", dims.d_t), ("l", dims.d_l)):
        encoder[f"{prefix}_conv1_w"] = _glorot(rng, (ker, width, eh), ker * width, ker * eh)
        encoder[f"{prefix}_conv1_b"] = np.zeros(eh)
        encoder[f"{prefix}_conv2_w"] = _glorot(rng, (ker, eh, eh), ker * eh, ker * eh)
        encoder[f"{prefix}_conv2_b"] = np.zeros(eh)
    encoder["proj_w"] = _glorot(rng, (2 * eh, df), 2 * eh, df)
    encoder["proj_b"] = np.zeros(df)

    rng = np.random.default_rng(dec_ss)
    da, dp, hid = dims.d_a, dims.prenet_dim, dims.gru_hidden
    din = dp + df
    decoder = {
        "pre_w": _glorot(rng, (da, dp), da, dp),
        "pre_b": np.zeros(dp),
    }
    for gate in ("z", "r", "h"):
        decoder[f"w{gate}"] = _glorot(rng, (din, hid), din, hid)
    for gate in ("z", "r", "h"):
        decoder[f"u{gate}"] = _glorot(rng, (hid, hid), hid, hid)
    for gate in ("z", "r", "h"):
        decoder[f"b{gate}"] = np.zeros(hid)
    decoder["out_w"] = _glorot(rng, (hid, da), hid, da)
    decoder["out_b"] = np.zeros(da)
    decoder["post1_w"] = _glorot(rng, (ker, da, hid), ker * da, ker * hid)
    decoder["post1_b"] = np.zeros(hid)
    decoder["post2_w"] = _glorot(rng, (ker, hid, da), ker * hid, ker * da)
    decoder["post2_b"] = np.zeros(da)

    rng = np.random.default_rng(disc_ss)
    dh = dims.disc_hidden
    disc = {
        "conv1_w": _glorot(rng, (ker, df, dh), ker * df, ker * dh),
        "conv1_b": np.zeros(dh),
        "conv2_w": _glorot(rng, (ker, dh, dh), ker * dh, ker * dh),
        "conv2_b": np.zeros(dh),
        "head_w": _glorot(rng, (dh, 2), dh, 2),
        "head_b": np.zeros(2),
    }
    return ModelParams(dims=dims, encoder=encoder, decoder=decoder, disc=disc)


def bind_model(tape, params):
    """Declare all parameter groups as leaves of one tape."""
    return {
        "encoder": bind(tape, params.encoder),
        "decoder": bind(tape, params.decoder),
        "disc": bind(tape, params.disc),
    }


# ---------------------------------------------------------------------------
# tape builders (gradient-carrying paths)


def _conv_relu(tape, x, w, b):
    return tape.relu(tape.add(tape.conv1d(x, w), b))


def build_encoder(tape, b, tongue_node, lip_node):
    t = _conv_relu(tape, tongue_node, b["t_conv1_w"], b["t_conv1_b"])
    t = _conv_relu(tape, t, b["t_conv2_w"], b["t_conv2_b"])
    l = _conv_relu(tape, lip_node, b["l_conv1_w"], b["l_conv1_b"])
    l = _conv_relu(tape, l, b["l_conv2_w"], b["l_conv2_b"])
    fused = tape.concat_feat(t, l)
    return tape.add(tape.matmul(fused, b["proj_w"]), b["proj_b"])


def build_decoder_teacher(tape, b, enc_node, teacher, k):
    """Teacher-forced decode: step n consumes teacher frame n-1."""
    frames = tape.value(enc_node).shape[0] * k
    teacher = np.asarray(teacher, dtype=np.float64)
    if teacher.shape[0] != frames:
        raise ContractError(
            f"teacher has {teacher.shape[0]} frames, decoder produces {frames}"
        )
    prev = np.vstack([np.zeros((1, teacher.shape[1])), teacher[:-1]])
    p = tape.tanh(tape.add(tape.matmul(tape.leaf(prev), b["pre_w"]), b["pre_b"]))
    rep = enc_node if k == 1 else tape.repeat_time(enc_node, k)
    x = tape.concat_feat(p, rep)
    h = tape.gru_seq(
        x, b["wz"], b["wr"], b["wh"], b["uz"], b["ur"], b["uh"], b["bz"], b["br"], b["bh"]
    )
    pre = tape.add(tape.matmul(h, b["out_w"]), b["out_b"])
    q = tape.relu(tape.add(tape.conv1d(pre, b["post1_w"]), b["post1_b"]))
    q = tape.add(tape.conv1d(q, b["post2_w"]), b["post2_b"])
    post = tape.add(pre, q)
    return pre, post


def build_discriminator(tape, b, spliced_node, lam, label=None):
    if tape.value(spliced_node).shape[0] < 1:
        raise ContractError("discriminator input must have at least one frame")
    g = tape.grl(spliced_node, lam)
    h = _conv_relu(tape, g, b["conv1_w"], b["conv1_b"])
    h = _conv_relu(tape, h, b["conv2_w"], b["conv2_b"])
    pooled = tape.maxpool_time(h)
    logits = tape.add(tape.matmul(pooled, b["head_w"]), b["head_b"])
    loss = tape.softmax_xent2(logits, label) if label is not None else None
    return logits, loss


def _softmax2(logits):
    e = np.exp(logits - logits.max())
    return e / e.sum()


# ---------------------------------------------------------------------------
# value-level entry points


def encode(utterance, params, tape=None):
    """Encode one utterance; with a caller tape the node id is kept so
    gradients can flow onward."""
    tongue = np.asarray(utterance.tongue, dtype=np.float64)
    lip = np.asarray(utterance.lip, dtype=np.float64)
    if tongue.shape[0] != lip.shape[0] or tongue.shape[0] < 1:
        raise ContractError(
            f"stream lengths differ for {utterance.id}: tongue {tongue.shape[0]}, lip {lip.shape[0]}"
        )
    own = tape is None
    t = Tape() if own else tape
    b = bind(t, params.encoder)
    node = build_encoder(t, b, t.leaf(tongue), t.leaf(lip))
    return EncodedSequence(
        utterance_id=utterance.id,
        features=t.value(node).copy(),
        node=None if own else node,
    )


def _gru_step(x, h, d):
    z = 1.0 / (1.0 + np.exp(-(x @ d["wz"] + h @ d["uz"] + d["bz"])))
    r = 1.0 / (1.0 + np.exp(-(x @ d["wr"] + h @ d["ur"] + d["br"])))
    c = np.tanh(x @ d["wh"] + (r * h) @ d["uh"] + d["bh"])
    return (1.0 - z) * h + z * c


def decode(encoded, params, teacher=None, tape=None):
    """Decode an encoded sequence into k*T acoustic frames.

    With ``teacher`` the run is teacher-forced and recorded on a tape (the
    caller's, or a throwaway).  Without it the decoder free-runs on its own
    previous post-net frame; the post-net is applied causally to the prefix
    produced so far, so the output for the first m encoder frames never
    depends on later ones.
    """
    from . import kernels

    dims = params.dims
    d = params.decoder
    k = dims.k
    if teacher is not None:
        own = tape is None
        t = Tape() if own else tape
        b = bind(t, params.decoder)
        enc_node = encoded.node if (not own and encoded.node is not None) else t.leaf(
            encoded.features
        )
        pre, post = build_decoder_teacher(t, b, enc_node, teacher, k)
        return Prediction(encoded.utterance_id, t.value(pre).copy(), t.value(post).copy())

    feats = encoded.features
    steps = feats.shape[0] * k
    da = dims.d_a
    pre = np.empty((steps, da))
    post = np.empty((steps, da))
    h = np.zeros(dims.gru_hidden)
    prev_post = np.zeros(da)
    for n in range(steps):
        pn = np.tanh(prev_post @ d["pre_w"] + d["pre_b"])
        x = np.concatenate([pn, feats[n // k]])
        h = _gru_step(x, h, d)
        pre[n] = h @ d["out_w"] + d["out_b"]
        prefix = pre[: n + 1]
        q = np.maximum(kernels.conv1d_fwd(prefix, d["post1_w"]) + d["post1_b"], 0.0)
        q = kernels.conv1d_fwd(q, d["post2_w"]) + d["post2_b"]
        post[n] = prefix[n] + q[n]
        prev_post = post[n]
    return Prediction(encoded.utterance_id, pre, post)


def discriminate(spliced, params, lam, tape=None, label=None):
    """Classify a spliced representation as silent (0) or vocalized (1).

    Returns softmax probabilities; when ``label`` is given the cross-entropy
    loss node is included so the result can join a training objective.
    """
    own = tape is None
    t = Tape() if own else tape
    b = bind(t, params.disc)
    node = spliced if isinstance(spliced, (int, np.integer)) else t.leaf(spliced)
    logits_node, loss_node = build_discriminator(t, b, node, lam, label=label)
    logits = t.value(logits_node).reshape(-1).copy()
    return DiscResult(
        probs=_softmax2(logits),
        logits=logits,
        loss_node=None if own else loss_node,
        logits_node=None if own else logits_node,
    )
