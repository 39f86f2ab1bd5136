"""Synthetic parallel vocalized/silent corpora with known ground truth.

Every utterance pair shares one smoothed latent trajectory.  The vocalized
streams and acoustics are deterministic functions of it; the silent twin is
a time-stretched (monotone warp), amplitude-reduced, re-noised copy of the
vocalized articulatory streams.  Because the generating warp is stored, the
ideal pseudo acoustic target of every silent utterance is known exactly,
which is what makes alignment quality measurable downstream.

Persistence layout under a corpus directory:

    manifest.json
    streams/<utt_id>.tongue.ataf  /  .lip.ataf  /  .acoustic.ataf
    truth/<utt_id>.warp.csv       /  .oracle.ataf
    pseudo/iter<N>/...            (written by the alignment stage)

Matrix files (".ataf") are 16 bytes of header (magic ``ATAF``, u32 rows,
u32 cols, u32 reserved, little endian) followed by row-major float64.
"""

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ContractError, DataError, FormatError

VOCALIZED = "vocalized"
SILENT = "silent"

_ATAF_MAGIC = b"ATAF"


@dataclass
class Utterance:
    id: str
    speaker: str
    mode: str
    tongue: np.ndarray
    lip: np.ndarray
    acoustic: Optional[np.ndarray]
    parallel_id: str

    @property
    def frames(self):
        return self.tongue.shape[0]


@dataclass
class GroundTruth:
    utterance_id: str
    warp: np.ndarray  # silent frame index -> vocalized frame index
    oracle: np.ndarray  # vocalized acoustics carried through the true warp
    alpha: float


@dataclass(frozen=True)
class CorpusConfig:
    speakers: int = 8
    utterances_per_speaker: int = 18
    seed: int = 2024
    stretch: tuple = (1.2, 1.6)
    alpha: tuple = (0.6, 0.9)
    noise: float = 0.02
    silent_noise: float = 0.3
    length_range: tuple = (24, 40)
    d_t: int = 6
    d_l: int = 4
    d_a: int = 8
    d_z: int = 4
    k: int = 1
    smooth: int = 7

    def validate(self):
        if self.speakers < 2:
            raise ContractError(f"need >= 2 speakers, got {self.speakers}")
        if self.utterances_per_speaker < 4:
            raise ContractError(
                f"need >= 4 utterances per speaker, got {self.utterances_per_speaker}"
            )
        lo, hi = self.stretch
        if not (1.0 <= lo <= hi <= 2.0):
            raise ContractError(f"stretch range must lie in [1.0, 2.0], got {self.stretch}")
        alo, ahi = self.alpha
        if not (0.0 < alo <= ahi <= 1.0):
            raise ContractError(f"alpha range must lie in (0, 1], got {self.alpha}")
        if self.noise < 0.0 or self.silent_noise < 0.0:
            raise ContractError(
                f"noise levels must be >= 0, got {self.noise}/{self.silent_noise}"
            )
        if self.length_range[0] < 8 or self.length_range[0] > self.length_range[1]:
            raise ContractError(f"bad length range {self.length_range}")
        for name in ("d_t", "d_l", "d_a", "d_z", "k", "smooth"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive")


@dataclass
class Corpus:
    config: CorpusConfig
    utterances: dict  # id -> Utterance
    splits: dict  # "train"/"val"/"test" -> sorted list of ids
    truths: dict  # silent id -> GroundTruth

    def split_ids(self, split, mode=None):
        ids = self.splits[split]
        if mode is None:
            return list(ids)
        return [u for u in ids if self.utterances[u].mode == mode]

    def twin(self, utt_id):
        utt = self.utterances[utt_id]
        try:
            return self.utterances[utt.parallel_id]
        except KeyError:
            raise DataError(f"utterance {utt_id} has no parallel twin {utt.parallel_id}")

    def speakers(self):
        return sorted({u.speaker for u in self.utterances.values()})


# ---------------------------------------------------------------------------
# generation


def sample_warp(frames, stretch_range, rng):
    """Draw a monotone warp from a stretched silent time base onto 0..T-1.

    The warp is a non-decreasing staircase with steps in {0, 1} hitting both
    endpoints, so it is exactly representable as an alignment path and every
    vocalized frame is used.
    """
    lo, hi = stretch_range
    if not (1.0 <= lo <= hi <= 2.0):
        raise ContractError(f"stretch range must lie in [1.0, 2.0], got {stretch_range}")
    if frames < 4:
        raise ContractError(f"need >= 4 frames, got {frames}")
    s = rng.uniform(lo, hi)
    stretched = max(frames, int(round(s * frames)))
    w = np.sort(rng.uniform(0.0, frames - 1.0, size=stretched))
    w = np.round(w).astype(np.int64)
    w[0] = 0
    w[-1] = frames - 1
    for j in range(1, stretched):  # clamp upward jumps to single steps
        if w[j] > w[j - 1] + 1:
            w[j] = w[j - 1] + 1
    w[-1] = frames - 1
    for j in range(stretched - 1, 0, -1):  # lift the tail so the end is reached
        if w[j - 1] < w[j] - 1:
            w[j - 1] = w[j] - 1
    return stretched, w


def warp_rows(matrix, warp, k=1):
    """Carry rows of a (k*T) x d matrix through a frame warp (repetition)."""
    if k == 1:
        return matrix[warp].copy()
    blocks = [matrix[i * k : (i + 1) * k] for i in warp]
    return np.concatenate(blocks, axis=0)


@dataclass(frozen=True)
class SpeakerProfile:
    speaker: str
    mix_tongue: np.ndarray
    mix_lip: np.ndarray


def _smooth_noise(rng, frames, width, window):
    raw = rng.normal(size=(frames + window - 1, width))
    kernel = np.ones(window) / window
    out = np.empty((frames, width))
    for j in range(width):
        out[:, j] = np.convolve(raw[:, j], kernel, mode="valid")
    return out * np.sqrt(window)


def synth_pair(profile, utt_length, config, acoustic_maps, rng):
    """One parallel vocalized/silent pair plus its generation ground truth."""
    if utt_length < 8:
        raise ContractError(f"utterance length must be >= 8, got {utt_length}")
    g_map, h_map = acoustic_maps
    z = _smooth_noise(rng, utt_length, config.d_z, config.smooth)
    tongue_v = z @ profile.mix_tongue + config.noise * rng.normal(size=(utt_length, config.d_t))
    lip_v = z @ profile.mix_lip + config.noise * rng.normal(size=(utt_length, config.d_l))
    if config.k == 1:
        za = z
    else:
        fine = np.linspace(0.0, utt_length - 1.0, utt_length * config.k)
        za = np.stack([np.interp(fine, np.arange(utt_length), z[:, j]) for j in range(config.d_z)], axis=1)
    acoustic_v = np.tanh(za @ g_map) @ h_map

    stretched, warp = sample_warp(utt_length, config.stretch, rng)
    alpha = float(rng.uniform(*config.alpha))
    # silent-mode corruption is pattern-like (smoothed) rather than white:
    # slow spurious movements, not sensor noise
    tongue_s = alpha * tongue_v[warp] + config.silent_noise * _smooth_noise(
        rng, stretched, config.d_t, config.smooth
    )
    lip_s = alpha * lip_v[warp] + config.silent_noise * _smooth_noise(
        rng, stretched, config.d_l, config.smooth
    )
    oracle = warp_rows(acoustic_v, warp, config.k)
    return tongue_v, lip_v, acoustic_v, tongue_s, lip_s, warp, oracle, alpha


def generate_corpus(config):
    """Deterministic corpus: per speaker, one parallel pair is held out for
    validation and one for test; every other pair goes to the training
    split.  A pair always stays in one split, so the held-out vocalized
    twins double as the vocalized val/test sets."""
    config.validate()
    master = np.random.SeedSequence(config.seed)
    global_rng = np.random.default_rng(master)
    g_map = global_rng.normal(size=(config.d_z, config.d_a)) / np.sqrt(config.d_z)
    h_map = global_rng.normal(size=(config.d_a, config.d_a)) / np.sqrt(config.d_a)

    utterances = {}
    truths = {}
    splits = {"train": [], "val": [], "test": []}
    for sp in range(config.speakers):
        sp_rng = np.random.default_rng(np.random.SeedSequence([config.seed, sp]))
        profile = SpeakerProfile(
            speaker=f"spk{sp:02d}",
            mix_tongue=sp_rng.normal(size=(config.d_z, config.d_t)) / np.sqrt(config.d_z),
            mix_lip=sp_rng.normal(size=(config.d_z, config.d_l)) / np.sqrt(config.d_z),
        )
        holdout = sp_rng.choice(config.utterances_per_speaker, size=2, replace=False)
        for ui in range(config.utterances_per_speaker):
            length = int(sp_rng.integers(config.length_range[0], config.length_range[1] + 1))
            tv, lv, av, ts, ls, warp, oracle, alpha = synth_pair(
                profile, length, config, (g_map, h_map), sp_rng
            )
            vid = f"{profile.speaker}-u{ui:03d}-v"
            sid = f"{profile.speaker}-u{ui:03d}-s"
            utterances[vid] = Utterance(vid, profile.speaker, VOCALIZED, tv, lv, av, sid)
            utterances[sid] = Utterance(sid, profile.speaker, SILENT, ts, ls, None, vid)
            truths[sid] = GroundTruth(sid, warp, oracle, alpha)
            split = "val" if ui == holdout[0] else "test" if ui == holdout[1] else "train"
            splits[split] += [vid, sid]
    for key in splits:
        splits[key] = sorted(splits[key])
    return Corpus(config=config, utterances=utterances, splits=splits, truths=truths)


# ---------------------------------------------------------------------------
# persistence


def write_ataf(path, matrix):
    matrix = np.ascontiguousarray(matrix, dtype="<f8")
    if matrix.ndim != 2:
        raise ContractError(f"ataf files hold 2-D matrices, got shape {matrix.shape}")
    with open(path, "wb") as f:
        f.write(_ATAF_MAGIC)
        f.write(struct.pack("<III", matrix.shape[0], matrix.shape[1], 0))
        f.write(matrix.tobytes())


def read_ataf(path):
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 16 or data[:4] != _ATAF_MAGIC:
        raise FormatError(f"{path}: bad or missing ATAF magic")
    rows, cols, _ = struct.unpack("<III", data[4:16])
    expected = 16 + rows * cols * 8
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    return np.frombuffer(data[16:], dtype="<f8").reshape(rows, cols).copy()


def _warp_csv(path, warp):
    lines = ["silent_index,vocalized_index"]
    lines += [f"{j},{int(w)}" for j, w in enumerate(warp)]
    Path(path).write_text("\n".join(lines) + "\n")


def _read_warp_csv(path):
    lines = Path(path).read_text().strip().splitlines()
    if not lines or lines[0] != "silent_index,vocalized_index":
        raise FormatError(f"{path}: bad warp csv header")
    return np.array([int(line.split(",")[1]) for line in lines[1:]], dtype=np.int64)


def save_corpus(corpus, out_dir):
    out = Path(out_dir)
    (out / "streams").mkdir(parents=True, exist_ok=True)
    (out / "truth").mkdir(parents=True, exist_ok=True)
    entries = []
    for uid in sorted(corpus.utterances):
        utt = corpus.utterances[uid]
        files = {
            "tongue": f"streams/{uid}.tongue.ataf",
            "lip": f"streams/{uid}.lip.ataf",
        }
        write_ataf(out / files["tongue"], utt.tongue)
        write_ataf(out / files["lip"], utt.lip)
        if utt.acoustic is not None:
            files["acoustic"] = f"streams/{uid}.acoustic.ataf"
            write_ataf(out / files["acoustic"], utt.acoustic)
        entry = {
            "id": uid,
            "speaker": utt.speaker,
            "mode": utt.mode,
            "parallel_id": utt.parallel_id,
            "files": files,
        }
        if uid in corpus.truths:
            truth = corpus.truths[uid]
            entry["truth"] = {
                "warp": f"truth/{uid}.warp.csv",
                "oracle": f"truth/{uid}.oracle.ataf",
                "alpha": truth.alpha,
            }
            _warp_csv(out / entry["truth"]["warp"], truth.warp)
            write_ataf(out / entry["truth"]["oracle"], truth.oracle)
        entries.append(entry)
    manifest = {
        "format": "silencio-corpus-v1",
        "config": asdict(corpus.config),
        "utterances": entries,
        "splits": corpus.splits,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return out


def load_corpus(corpus_dir):
    root = Path(corpus_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise FormatError(f"{manifest_path}: manifest not found")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{manifest_path}: {e}")
    if manifest.get("format") != "silencio-corpus-v1":
        raise FormatError(f"{manifest_path}: unknown corpus format {manifest.get('format')!r}")
    cfg_raw = dict(manifest["config"])
    for key in ("stretch", "alpha", "length_range"):
        cfg_raw[key] = tuple(cfg_raw[key])
    config = CorpusConfig(**cfg_raw)
    utterances = {}
    truths = {}
    for entry in manifest["utterances"]:
        files = entry["files"]
        for rel in files.values():
            if not (root / rel).is_file():
                raise FormatError(f"manifest references missing file {rel}")
        utterances[entry["id"]] = Utterance(
            id=entry["id"],
            speaker=entry["speaker"],
            mode=entry["mode"],
            tongue=read_ataf(root / files["tongue"]),
            lip=read_ataf(root / files["lip"]),
            acoustic=read_ataf(root / files["acoustic"]) if "acoustic" in files else None,
            parallel_id=entry["parallel_id"],
        )
        if "truth" in entry:
            truths[entry["id"]] = GroundTruth(
                utterance_id=entry["id"],
                warp=_read_warp_csv(root / entry["truth"]["warp"]),
                oracle=read_ataf(root / entry["truth"]["oracle"]),
                alpha=float(entry["truth"]["alpha"]),
            )
    return Corpus(
        config=config,
        utterances=utterances,
        splits={k: list(v) for k, v in manifest["splits"].items()},
        truths=truths,
    )
