"""Vocabulary, synthetic corpora, and persistence.

The synthetic task stands in for paired speech/text data: sentences are
sampled from a seeded per-domain bigram over V word types, and each token
is rendered as a variable number of copies of a fixed per-token acoustic
embedding plus Gaussian noise.  Domains share the acoustic rendering and
differ only in their bigram statistics, so text-only adaptation of the
language model is the thing that separates them.

Token embeddings come in near-identical pairs (a small offset around a
shared centroid), which makes pair members acoustically confusable at the
default noise level; disambiguating them is the language model's job.

Checkpoints and feature archives share one container format: a single
human-readable JSON manifest line followed by raw little-endian float64
blobs, indexed by name.  Round trips are bit-exact.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from fnt import models
from fnt.models import FactorizedTransducer, RecurrentLM
from fnt.symbols import NUM_RESERVED, UNK_ID

RESERVED_TOKENS = ("<blank>", "<bos>", "<eos>", "<unk>")

CONTAINER_FORMAT = "fnt-container"
CONTAINER_VERSION = 1

# acoustic rendering is shared across domains: same fixed seed for all
_RENDER_SEED = 20210831
_PAIR_OFFSET = 0.25  # distance of a token embedding from its pair centroid


class CheckpointError(Exception):
    pass


class CorruptFileError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class KindMismatchError(CheckpointError):
    pass


class VocabMismatchError(ValueError):
    pass


class Vocab:
    """Bidirectional token/id map with reserved blank, bos, eos, unk.

    Ids are dense: 0 blank, 1 bos, 2 eos, 3 unk, then regular tokens.
    ``V`` counts every non-blank id (the width of LM and label heads).
    """

    def __init__(self, regular_tokens):
        regular = list(regular_tokens)
        self.tokens = list(RESERVED_TOKENS) + regular
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self._ids = {tok: i for i, tok in enumerate(self.tokens)}

    @classmethod
    def synthetic(cls, n_regular: int) -> "Vocab":
        width = max(2, len(str(n_regular - 1)))
        return cls([f"w{i:0{width}d}" for i in range(n_regular)])

    @property
    def V(self) -> int:
        return len(self.tokens) - 1

    @property
    def n_regular(self) -> int:
        return len(self.tokens) - NUM_RESERVED

    def regular_ids(self):
        return range(NUM_RESERVED, len(self.tokens))

    def id_of(self, token: str) -> int:
        if token in RESERVED_TOKENS:
            return UNK_ID  # reserved names are not real text tokens
        return self._ids.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        return self.tokens[idx]

    def tokenize(self, line: str) -> tuple:
        """Whitespace tokenization; unknown words map to unk, never blank."""
        return tuple(self.id_of(tok) for tok in line.split())

    def detokenize(self, ids) -> str:
        return " ".join(self.tokens[i] for i in ids)

    def regular_list(self):
        return self.tokens[NUM_RESERVED:]

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def __len__(self):
        return len(self.tokens)


def tokenize(vocab: Vocab, line: str) -> tuple:
    return vocab.tokenize(line)


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Knobs of the synthetic source/target-domain task."""

    V: int = 30
    d: int = 16
    dup_min: int = 2
    dup_max: int = 4
    noise_sigma: float = 0.3
    domain_seed: int = 1
    bigram_temperature: float = 0.5

    def __post_init__(self):
        if not (1 <= self.dup_min <= self.dup_max):
            raise ValueError("need 1 <= dup_min <= dup_max")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.V < 2 or self.d < 1:
            raise ValueError("V >= 2 and d >= 1 required")
        if self.bigram_temperature <= 0:
            raise ValueError("bigram_temperature must be > 0")


def save_task_spec(spec: SyntheticTaskSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(asdict(spec), f, indent=2, sort_keys=True)
        f.write("\n")


def load_task_spec(path) -> SyntheticTaskSpec:
    with open(path, encoding="utf-8") as f:
        return SyntheticTaskSpec(**json.load(f))


@dataclass
class Utterance:
    utt_id: str
    features: np.ndarray  # (T, d) float64
    tokens: tuple  # reference ids, reserved ids excluded

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.tokens = tuple(int(t) for t in self.tokens)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError(f"features must be (T>=1, d), got {self.features.shape}")
        if any(t < NUM_RESERVED for t in self.tokens):
            raise ValueError("reference tokens must not contain reserved ids")


@dataclass
class Corpus:
    vocab: Vocab
    split: str
    spec: SyntheticTaskSpec
    sentences: list  # token id tuples
    utterances: list = field(default_factory=list)  # empty for text-only splits

    def text_lines(self):
        return [self.vocab.detokenize(s) for s in self.sentences]


def token_embeddings(spec: SyntheticTaskSpec) -> np.ndarray:
    """Fixed per-token acoustic embeddings, shared by every domain.

    Tokens 2i and 2i+1 sit _PAIR_OFFSET away from a common centroid, so
    each pair is acoustically confusable relative to the noise level.
    """
    rng = np.random.default_rng([_RENDER_SEED, spec.V, spec.d])
    centroids = rng.normal(size=((spec.V + 1) // 2, spec.d))
    offsets = rng.normal(size=(spec.V, spec.d))
    offsets /= np.linalg.norm(offsets, axis=1, keepdims=True)
    return centroids[np.arange(spec.V) // 2] + _PAIR_OFFSET * offsets


def bigram_table(spec: SyntheticTaskSpec):
    """(start, transition) probabilities over the V regular word types."""
    rng = np.random.default_rng([spec.domain_seed, spec.V, 101])
    start = rng.normal(size=spec.V) / spec.bigram_temperature
    trans = rng.normal(size=(spec.V, spec.V)) / spec.bigram_temperature

    def softmax(rows):
        m = rows.max(axis=-1, keepdims=True)
        e = np.exp(rows - m)
        return e / e.sum(axis=-1, keepdims=True)

    return softmax(start[None, :])[0], softmax(trans)


def bigram_kl(spec_a: SyntheticTaskSpec, spec_b: SyntheticTaskSpec) -> float:
    """Mean per-row KL divergence between the two transition tables (nats)."""
    _, pa = bigram_table(spec_a)
    _, pb = bigram_table(spec_b)
    return float((pa * np.log(pa / pb)).sum(axis=1).mean())


def gen_domain(
    spec: SyntheticTaskSpec, n_sentences: int, split: str, render: bool = True
) -> Corpus:
    """Sample a corpus; pure function of (spec, n_sentences, split).

    ``render=False`` produces a text-only corpus (no feature rendering),
    e.g. for adaptation text.
    """
    if n_sentences < 1:
        raise ValueError("need at least one sentence")
    vocab = Vocab.synthetic(spec.V)
    start, trans = bigram_table(spec)
    emb = token_embeddings(spec)
    rng = np.random.default_rng([1729, spec.domain_seed, zlib.crc32(split.encode())])
    sentences = []
    utterances = []
    for i in range(n_sentences):
        length = int(rng.integers(3, 10))
        idx = [int(rng.choice(spec.V, p=start))]
        for _ in range(length - 1):
            idx.append(int(rng.choice(spec.V, p=trans[idx[-1]])))
        tokens = tuple(NUM_RESERVED + j for j in idx)
        sentences.append(tokens)
        if render:
            frames = []
            for j in idx:
                k = int(rng.integers(spec.dup_min, spec.dup_max + 1))
                noise = rng.normal(size=(k, spec.d)) * spec.noise_sigma
                frames.append(emb[j] + noise)
            utterances.append(
                Utterance(
                    utt_id=f"{split}-{i:05d}",
                    features=np.concatenate(frames, axis=0),
                    tokens=tokens,
                )
            )
    return Corpus(vocab=vocab, split=split, spec=spec, sentences=sentences, utterances=utterances)


# ---------------------------------------------------------------------------
# container format: one JSON manifest line + concatenated float64 blobs


def write_container(path, payload: dict, arrays: dict) -> None:
    tensors = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        tensors.append(
            {"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(data)}
        )
        blobs.append(data)
        offset += len(data)
    manifest = {
        "format": CONTAINER_FORMAT,
        "version": CONTAINER_VERSION,
        "payload": payload,
        "tensors": tensors,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(manifest, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        for blob in blobs:
            f.write(blob)


def read_container(path):
    with open(path, "rb") as f:
        header = f.readline()
        body = f.read()
    try:
        manifest = json.loads(header.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptFileError(f"{path}: unreadable manifest") from e
    if manifest.get("format") != CONTAINER_FORMAT:
        raise CorruptFileError(f"{path}: not a {CONTAINER_FORMAT} file")
    if manifest.get("version") != CONTAINER_VERSION:
        raise VersionMismatchError(
            f"{path}: container version {manifest.get('version')} != {CONTAINER_VERSION}"
        )
    expected = sum(t["nbytes"] for t in manifest["tensors"])
    if len(body) != expected:
        raise CorruptFileError(
            f"{path}: payload is {len(body)} bytes, manifest expects {expected}"
        )
    arrays = {}
    for t in manifest["tensors"]:
        raw = body[t["offset"] : t["offset"] + t["nbytes"]]
        arrays[t["name"]] = np.frombuffer(raw, dtype="<f8").reshape(t["shape"]).copy()
    return manifest["payload"], arrays


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model, path, vocab: Vocab | None = None) -> None:
    """Versioned snapshot: kind + config + vocab + named parameter tensors."""
    vocab = vocab if vocab is not None else getattr(model, "vocab", None)
    if vocab is None:
        raise ValueError("a Vocab is required (pass vocab= or set model.vocab)")
    if vocab.V != model.vocab_size:
        raise VocabMismatchError(
            f"vocab has V={vocab.V} but model was built for V={model.vocab_size}"
        )
    payload = {
        "kind": model.kind,
        "config": models.config_to_dict(model.cfg),
        "vocab": vocab.regular_list(),
    }
    write_container(path, payload, {p.name: p.data for p in model.parameters()})


def load_checkpoint(path, expect_kind: str | None = None):
    """Rebuild a model from a checkpoint, bit-exactly."""
    payload, arrays = read_container(path)
    kind = payload.get("kind")
    if kind not in models.MODEL_KINDS:
        raise CorruptFileError(f"{path}: unknown model kind {kind!r}")
    if expect_kind is not None and kind != expect_kind:
        raise KindMismatchError(f"{path}: checkpoint is {kind!r}, expected {expect_kind!r}")
    cfg = models.config_from_dict(kind, payload["config"])
    model = models.build_model(kind, cfg)
    params = {p.name: p for p in model.parameters()}
    if set(params) != set(arrays):
        raise CorruptFileError(f"{path}: parameter names do not match the {kind} layout")
    for name, p in params.items():
        if arrays[name].shape != p.data.shape:
            raise CorruptFileError(f"{path}: tensor {name} has shape {arrays[name].shape}")
        p.data = arrays[name]
        p.grad = np.zeros_like(p.data)
    model.vocab = Vocab(payload["vocab"])
    return model


def swap_vocab_predictor(model: FactorizedTransducer, lm) -> FactorizedTransducer:
    """Replace the vocabulary-predictor branch with another language model.

    ``lm`` may be a RecurrentLM or a path to an rnnlm checkpoint trained on
    the identical vocabulary.  The encoder and blank branch are untouched.
    """
    if not isinstance(model, FactorizedTransducer):
        raise TypeError("can only swap the vocabulary predictor of a factorized model")
    if not isinstance(lm, RecurrentLM):
        lm = load_checkpoint(lm, expect_kind="rnnlm")
    if lm.vocab_size != model.vocab_size:
        raise VocabMismatchError(
            f"LM vocabulary V={lm.vocab_size} != model V={model.vocab_size}"
        )
    model_vocab = getattr(model, "vocab", None)
    lm_vocab = getattr(lm, "vocab", None)
    if model_vocab is not None and lm_vocab is not None and model_vocab != lm_vocab:
        raise VocabMismatchError("LM and model vocabularies contain different tokens")
    model.vocab_lm = lm
    model.cfg.vocab_predictor = lm.cfg.predictor
    return model


# ---------------------------------------------------------------------------
# corpus files


def write_text(path, lines) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(line + "\n")


def read_text(path) -> list:
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f if line.strip()]


def save_features(path, utterances) -> None:
    """Feature archive: versioned binary with a per-utterance index."""
    index = [
        {"utt_id": u.utt_id, "tokens": list(u.tokens), "shape": list(u.features.shape)}
        for u in utterances
    ]
    write_container(
        path,
        {"kind": "features", "index": index},
        {u.utt_id: u.features for u in utterances},
    )


def load_features(path) -> list:
    payload, arrays = read_container(path)
    if payload.get("kind") != "features":
        raise CorruptFileError(f"{path}: not a feature archive")
    return [
        Utterance(
            utt_id=entry["utt_id"],
            features=arrays[entry["utt_id"]],
            tokens=tuple(entry["tokens"]),
        )
        for entry in payload["index"]
    ]
