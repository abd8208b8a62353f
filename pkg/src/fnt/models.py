"""Transducer model families.

Two architectures over a shared causal recurrent encoder:

  * StandardTransducer: one predictor over label history, joint network
    projects relu(f_t + g_u) to V+1 logits (blank at index 0).
  * FactorizedTransducer: a blank predictor with its own tiny joint head
    (one logit), and a vocabulary predictor that is structurally a
    standalone recurrent language model; its normalized log-probabilities
    are combined with an acoustic vocabulary projection at the logit
    level, then renormalized together with the blank logit.

The vocabulary predictor of the factorized model is exposed as
``RecurrentLM`` so it can be trained, evaluated, adapted, and swapped in
or out as an ordinary language model.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from fnt import autodiff as ad
from fnt import lattice
from fnt.autodiff import GRUCell, Parameter, ShapeError, Tensor
from fnt.lattice import LatticeLogProbs
from fnt.symbols import BOS_ID, EOS_ID


@dataclass
class EncoderConfig:
    input_dim: int
    hidden_dim: int = 64
    layers: int = 2
    causal: bool = True

    def __post_init__(self):
        if self.layers < 1 or self.input_dim < 1 or self.hidden_dim < 1:
            raise ValueError("encoder dims and layer count must be >= 1")
        if not self.causal:
            raise ValueError("only causal encoders are supported")


@dataclass
class PredictorConfig:
    embed_dim: int = 32
    hidden_dim: int = 64
    layers: int = 1


@dataclass
class StandardConfig:
    vocab_size: int  # V: output tokens excluding blank
    encoder: EncoderConfig
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    seed: int = 0


@dataclass
class FactorizedConfig:
    vocab_size: int
    encoder: EncoderConfig
    blank_predictor: PredictorConfig = field(default_factory=PredictorConfig)
    vocab_predictor: PredictorConfig = field(default_factory=PredictorConfig)
    seed: int = 0


@dataclass
class LMConfig:
    vocab_size: int
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    seed: int = 0


@dataclass
class LossBreakdown:
    """Combined training loss: total = transducer + lam * lm_nll."""

    total: float
    transducer: float
    lm_nll: float
    lam: float
    node: Tensor = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        residual = abs(self.total - (self.transducer + self.lam * self.lm_nll))
        if residual > 1e-12 * max(1.0, abs(self.total)):
            raise ValueError(f"loss breakdown violated by {residual:g}")


class RecurrentStack:
    """Stack of gated recurrent cells applied frame by frame."""

    def __init__(self, prefix, input_dim, hidden_dim, layers, rng):
        self.cells = []
        for i in range(layers):
            in_dim = input_dim if i == 0 else hidden_dim
            self.cells.append(GRUCell(f"{prefix}.l{i}", in_dim, hidden_dim, rng))

    def parameters(self):
        return [p for c in self.cells for p in c.parameters()]

    def zero_states(self):
        return [c.zero_state() for c in self.cells]

    def step(self, x, states, tape=None):
        new_states = []
        out = x
        for cell, h in zip(self.cells, states):
            out = cell.step(out, h, tape)
            new_states.append(out)
        return out, new_states

    def zero_states_np(self):
        return [np.zeros(c.hidden_dim) for c in self.cells]

    def step_np(self, x, states):
        new_states = []
        out = x
        for cell, h in zip(self.cells, states):
            out = cell.step_np(out, h)
            new_states.append(out)
        return out, new_states


class Encoder:
    """Causal recurrent acoustic encoder: f_t depends on frames 1..t only."""

    def __init__(self, cfg: EncoderConfig, rng, prefix="enc"):
        self.cfg = cfg
        self.stack = RecurrentStack(prefix, cfg.input_dim, cfg.hidden_dim, cfg.layers, rng)

    def parameters(self):
        return self.stack.parameters()

    def forward(self, features: np.ndarray, tape=None) -> Tensor:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] < 1:
            raise ShapeError(f"features must be (T>=1, d), got {features.shape}")
        if features.shape[1] != self.cfg.input_dim:
            raise ShapeError(
                f"feature dim {features.shape[1]} != encoder input {self.cfg.input_dim}"
            )
        states = self.stack.zero_states()
        outs = []
        for t in range(features.shape[0]):
            out, states = self.stack.step(Tensor(features[t]), states, tape)
            outs.append(out)
        return ad.stack_rows(outs, tape)

    def forward_np(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        states = self.stack.zero_states_np()
        outs = np.empty((features.shape[0], self.cfg.hidden_dim))
        for t in range(features.shape[0]):
            outs[t], states = self.stack.step_np(features[t], states)
        return outs


class RecurrentLM:
    """Recurrent language model over token ids 1..V (no blank).

    Doubles as the factorized model's vocabulary predictor; parameter
    names use a fixed prefix so a standalone LM can be checkpoint-swapped
    into a factorized transducer without renaming.
    """

    kind = "rnnlm"
    PREFIX = "vocab_lm"

    def __init__(self, cfg: LMConfig, rng=None):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        V, p = cfg.vocab_size, cfg.predictor
        self.embed = Parameter(f"{self.PREFIX}.embed", ad.uniform_init(rng, (V + 1, p.embed_dim)))
        self.stack = RecurrentStack(self.PREFIX, p.embed_dim, p.hidden_dim, p.layers, rng)
        self.w_out = Parameter(f"{self.PREFIX}.w_out", ad.uniform_init(rng, (p.hidden_dim, V)))
        self.b_out = Parameter(f"{self.PREFIX}.b_out", ad.uniform_init(rng, (V,)))

    @property
    def vocab_size(self):
        return self.cfg.vocab_size

    def parameters(self):
        return [self.embed, *self.stack.parameters(), self.w_out, self.b_out]

    def _check_ids(self, tokens):
        for y in tokens:
            if not 1 <= y <= self.vocab_size:
                raise ValueError(f"token id {y} outside [1, {self.vocab_size}]")

    def prefix_rows(self, tokens, tape=None) -> Tensor:
        """Log-probability rows z_u = log P(. | y_1..u) for u = 0..len(tokens).

        Row u is the distribution over the NEXT token after the first u
        labels; row 0 conditions only on start-of-sequence.
        """
        tokens = tuple(tokens)
        self._check_ids(tokens)
        states = self.stack.zero_states()
        outs = []
        for tok in (BOS_ID,) + tokens:
            emb = ad.take_rows(self.embed, [tok], tape)
            x = ad.reshape(emb, (self.cfg.predictor.embed_dim,), tape)
            out, states = self.stack.step(x, states, tape)
            outs.append(out)
        g = ad.stack_rows(outs, tape)
        logits = ad.add(ad.matmul(ad.relu(g, tape), self.w_out, tape), self.b_out, tape)
        return ad.log_softmax(logits, tape)

    def nll_node(self, tokens, tape=None) -> Tensor:
        """Negative log-likelihood of the sequence, end-of-sequence included."""
        tokens = tuple(tokens)
        rows = self.prefix_rows(tokens, tape)
        idx = [y - 1 for y in tokens + (EOS_ID,)]
        return ad.neg(ad.tsum(ad.pick(rows, idx, tape), tape), tape)

    def next_logprobs(self, history) -> np.ndarray:
        """Inference: log P(. | history) as a length-V array (index k = id k+1)."""
        history = tuple(history)
        self._check_ids(history)
        row, states = self.start_np()
        for tok in history:
            row, states = self.advance_np(states, tok)
        return row

    # streaming inference used by decoding/fusion
    def start_np(self):
        states = self.stack.zero_states_np()
        return self._row_after(BOS_ID, states)

    def advance_np(self, states, token):
        return self._row_after(token, states)

    def _row_after(self, token, states):
        out, states = self.stack.step_np(self.embed.data[token], states)
        logits = np.maximum(out, 0.0) @ self.w_out.data + self.b_out.data
        return ad.np_log_softmax(logits), states


def _outer_add(a: Tensor, b: Tensor, tape=None) -> Tensor:
    """(T, h) + (U, h) -> (T, U, h)."""
    T, h = a.shape
    U = b.shape[0]
    return ad.add(ad.reshape(a, (T, 1, h), tape), ad.reshape(b, (1, U, h), tape), tape)


class StandardTransducer:
    """Eq-1 style transducer: one predictor, full-width joint projection."""

    kind = "standard"

    def __init__(self, cfg: StandardConfig, rng=None):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        V, p = cfg.vocab_size, cfg.predictor
        self.encoder = Encoder(cfg.encoder, rng)
        self.embed = Parameter("pred.embed", ad.uniform_init(rng, (V + 1, p.embed_dim)))
        self.pred = RecurrentStack("pred", p.embed_dim, p.hidden_dim, p.layers, rng)
        if p.hidden_dim != cfg.encoder.hidden_dim:
            raise ValueError("joint addition needs predictor and encoder widths to match")
        self.w_joint = Parameter("joint.w", ad.uniform_init(rng, (p.hidden_dim, V + 1)))
        self.b_joint = Parameter("joint.b", ad.uniform_init(rng, (V + 1,)))

    @property
    def vocab_size(self):
        return self.cfg.vocab_size

    def parameters(self):
        return [
            *self.encoder.parameters(),
            self.embed,
            *self.pred.parameters(),
            self.w_joint,
            self.b_joint,
        ]

    def encode(self, features, tape=None) -> Tensor:
        return self.encoder.forward(features, tape)

    def prefix_states(self, tokens, tape=None) -> Tensor:
        """g_u rows for u = 0..U (label-history representations)."""
        states = self.pred.zero_states()
        outs = []
        for tok in (BOS_ID,) + tuple(tokens):
            emb = ad.take_rows(self.embed, [tok], tape)
            x = ad.reshape(emb, (self.cfg.predictor.embed_dim,), tape)
            out, states = self.pred.step(x, states, tape)
            outs.append(out)
        return ad.stack_rows(outs, tape)

    def joint(self, f: Tensor, g: Tensor, targets, tape=None) -> LatticeLogProbs:
        z = ad.add(
            ad.matmul(ad.relu(_outer_add(f, g, tape), tape), self.w_joint, tape),
            self.b_joint,
            tape,
        )
        node = ad.log_softmax(z, tape)
        return LatticeLogProbs(logp=node.data, targets=tuple(targets), node=node)

    def transducer_loss(self, utt, tape=None) -> LossBreakdown:
        f = self.encode(utt.features, tape)
        g = self.prefix_states(utt.tokens, tape)
        lat = self.joint(f, g, utt.tokens, tape)
        node = transducer_loss_node(lat, tape)
        val = node.item()
        return LossBreakdown(total=val, transducer=val, lm_nll=0.0, lam=0.0, node=node)

    # --- inference protocol -------------------------------------------------
    def decode_frames(self, features):
        return {"f": self.encoder.forward_np(features)}

    def decode_start(self):
        states = self.pred.zero_states_np()
        g, states = self.pred.step_np(self.embed.data[BOS_ID], states)
        return {"states": states, "g": g}

    def decode_row(self, frames, t, state) -> np.ndarray:
        z = np.maximum(frames["f"][t] + state["g"], 0.0) @ self.w_joint.data + self.b_joint.data
        return ad.np_log_softmax(z)

    def decode_advance(self, state, token):
        g, states = self.pred.step_np(self.embed.data[token], state["states"])
        return {"states": states, "g": g}


class FactorizedTransducer:
    """Blank/vocabulary-factorized transducer (separate predictors)."""

    kind = "factorized"

    def __init__(self, cfg: FactorizedConfig, rng=None):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        V, bp = cfg.vocab_size, cfg.blank_predictor
        self.encoder = Encoder(cfg.encoder, rng)
        self.embed_blank = Parameter("blank.embed", ad.uniform_init(rng, (V + 1, bp.embed_dim)))
        self.blank_pred = RecurrentStack("blank", bp.embed_dim, bp.hidden_dim, bp.layers, rng)
        if bp.hidden_dim != cfg.encoder.hidden_dim:
            raise ValueError("blank joint needs predictor and encoder widths to match")
        self.w_blank = Parameter("blank.w_out", ad.uniform_init(rng, (bp.hidden_dim, 1)))
        self.b_blank = Parameter("blank.b_out", ad.uniform_init(rng, (1,)))
        self.w_encv = Parameter("encv.w", ad.uniform_init(rng, (cfg.encoder.hidden_dim, V)))
        self.b_encv = Parameter("encv.b", ad.uniform_init(rng, (V,)))
        self.vocab_lm = RecurrentLM(LMConfig(V, cfg.vocab_predictor, cfg.seed), rng)

    @property
    def vocab_size(self):
        return self.cfg.vocab_size

    def parameters(self):
        return [*self.acoustic_parameters(), *self.vocab_lm.parameters()]

    def acoustic_parameters(self):
        """Everything outside the vocabulary predictor: frozen during LM adaptation."""
        return [
            *self.encoder.parameters(),
            self.embed_blank,
            *self.blank_pred.parameters(),
            self.w_blank,
            self.b_blank,
            self.w_encv,
            self.b_encv,
        ]

    def encode(self, features, tape=None) -> Tensor:
        return self.encoder.forward(features, tape)

    def blank_prefix_states(self, tokens, tape=None) -> Tensor:
        states = self.blank_pred.zero_states()
        outs = []
        for tok in (BOS_ID,) + tuple(tokens):
            emb = ad.take_rows(self.embed_blank, [tok], tape)
            x = ad.reshape(emb, (self.cfg.blank_predictor.embed_dim,), tape)
            out, states = self.blank_pred.step(x, states, tape)
            outs.append(out)
        return ad.stack_rows(outs, tape)

    def joint(self, f: Tensor, g_blank: Tensor, vocab_rows: Tensor, targets, tape=None) -> LatticeLogProbs:
        """softmax([z_blank ; z_enc + z_lm]) per (t, u) cell."""
        T, U1 = f.shape[0], g_blank.shape[0]
        V = self.cfg.vocab_size
        z_blank = ad.add(
            ad.matmul(ad.relu(_outer_add(f, g_blank, tape), tape), self.w_blank, tape),
            self.b_blank,
            tape,
        )
        z_enc = ad.add(ad.matmul(ad.relu(f, tape), self.w_encv, tape), self.b_encv, tape)
        z_vocab = ad.add(
            ad.reshape(z_enc, (T, 1, V), tape),
            ad.reshape(vocab_rows, (1, U1, V), tape),
            tape,
        )
        node = ad.log_softmax(ad.concat_last([z_blank, z_vocab], tape), tape)
        return LatticeLogProbs(logp=node.data, targets=tuple(targets), node=node)

    def combined_loss(self, utt, lam: float, tape=None) -> LossBreakdown:
        if lam < 0:
            raise ValueError("lambda must be >= 0")
        f = self.encode(utt.features, tape)
        g_blank = self.blank_prefix_states(utt.tokens, tape)
        vocab_rows = self.vocab_lm.prefix_rows(utt.tokens, tape)
        lat = self.joint(f, g_blank, vocab_rows, utt.tokens, tape)
        jt = transducer_loss_node(lat, tape)
        nll = self.vocab_lm.nll_node(utt.tokens, tape)
        total = ad.add(jt, ad.scale(nll, lam, tape), tape)
        return LossBreakdown(
            total=total.item(),
            transducer=jt.item(),
            lm_nll=nll.item(),
            lam=lam,
            node=total,
        )

    def predict_vocab(self, history) -> np.ndarray:
        """Next-token log-distribution of the internal LM (length V, no blank)."""
        return self.vocab_lm.next_logprobs(history)

    # --- inference protocol -------------------------------------------------
    def decode_frames(self, features):
        f = self.encoder.forward_np(features)
        z_enc = np.maximum(f, 0.0) @ self.w_encv.data + self.b_encv.data
        return {"f": f, "z_enc": z_enc}

    def decode_start(self):
        b_states = self.blank_pred.zero_states_np()
        g_blank, b_states = self.blank_pred.step_np(self.embed_blank.data[BOS_ID], b_states)
        lm_row, lm_states = self.vocab_lm.start_np()
        return {
            "b_states": b_states,
            "g_blank": g_blank,
            "lm_states": lm_states,
            "lm_row": lm_row,
        }

    def decode_row(self, frames, t, state) -> np.ndarray:
        z_blank = (
            np.maximum(frames["f"][t] + state["g_blank"], 0.0) @ self.w_blank.data
            + self.b_blank.data
        )
        z_vocab = frames["z_enc"][t] + state["lm_row"]
        return ad.np_log_softmax(np.concatenate([z_blank, z_vocab]))

    def decode_advance(self, state, token):
        g_blank, b_states = self.blank_pred.step_np(
            self.embed_blank.data[token], state["b_states"]
        )
        lm_row, lm_states = self.vocab_lm.advance_np(state["lm_states"], token)
        return {
            "b_states": b_states,
            "g_blank": g_blank,
            "lm_states": lm_states,
            "lm_row": lm_row,
        }


def transducer_loss_node(lat: LatticeLogProbs, tape=None) -> Tensor:
    """Lattice loss as a tape node; gradient flows into the joint output."""
    loss, grad = lattice.loss_and_grad(lat)
    out = Tensor(loss)
    if tape is not None and lat.node is not None:
        tape.record(out, (lat.node,), lambda g: (float(g) * grad,))
    return out


# --- operation-style wrappers ------------------------------------------------


def encode(model, features, tape=None) -> Tensor:
    return model.encode(features, tape)


def predict_vocab(model, history) -> np.ndarray:
    return model.predict_vocab(history)


def joint_standard(model: StandardTransducer, f, g, targets, tape=None) -> LatticeLogProbs:
    return model.joint(f, g, targets, tape)


def joint_factorized(
    model: FactorizedTransducer, f, g_blank, vocab_rows, targets, tape=None
) -> LatticeLogProbs:
    return model.joint(f, g_blank, vocab_rows, targets, tape)


def combined_loss(model: FactorizedTransducer, utt, lam, tape=None) -> LossBreakdown:
    return model.combined_loss(utt, lam, tape)


def lm_nll(model, tokens, tape=None) -> Tensor:
    lm = model.vocab_lm if isinstance(model, FactorizedTransducer) else model
    return lm.nll_node(tokens, tape)


# --- config (de)serialization -------------------------------------------------

MODEL_KINDS = ("standard", "factorized", "rnnlm")


def config_to_dict(cfg) -> dict:
    return asdict(cfg)


def config_from_dict(kind: str, d: dict):
    if kind == "standard":
        return StandardConfig(
            vocab_size=d["vocab_size"],
            encoder=EncoderConfig(**d["encoder"]),
            predictor=PredictorConfig(**d["predictor"]),
            seed=d["seed"],
        )
    if kind == "factorized":
        return FactorizedConfig(
            vocab_size=d["vocab_size"],
            encoder=EncoderConfig(**d["encoder"]),
            blank_predictor=PredictorConfig(**d["blank_predictor"]),
            vocab_predictor=PredictorConfig(**d["vocab_predictor"]),
            seed=d["seed"],
        )
    if kind == "rnnlm":
        return LMConfig(
            vocab_size=d["vocab_size"],
            predictor=PredictorConfig(**d["predictor"]),
            seed=d["seed"],
        )
    raise ValueError(f"unknown model kind {kind!r}")


def build_model(kind: str, cfg):
    if kind == "standard":
        return StandardTransducer(cfg)
    if kind == "factorized":
        return FactorizedTransducer(cfg)
    if kind == "rnnlm":
        return RecurrentLM(cfg)
    raise ValueError(f"unknown model kind {kind!r}")
