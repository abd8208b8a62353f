"""Training, adaptation, and evaluation loops.

``train`` fits any of the three model kinds from scratch (combined loss
for the factorized transducer, lattice loss for the standard one, plain
cross entropy for a language model).  ``adapt_lm`` fine-tunes only the
vocabulary predictor on target-domain text: the encoder, blank predictor,
and acoustic vocabulary projection are never touched, which is the whole
point of the factorization.

Everything is deterministic given the config seed: one optimizer-update
sequence, index-ordered batch reduction, no wall-clock anywhere.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from fnt import autodiff as ad
from fnt import data as data_mod
from fnt import decoding
from fnt.autodiff import Tape
from fnt.models import FactorizedTransducer, RecurrentLM, StandardTransducer


@dataclass
class TrainConfig:
    lam: float = 0.5
    lr: float = 1e-3
    epochs: int = 5
    batch_size: int = 16
    seed: int = 0
    grad_clip: float = 5.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.lr <= 0:
            raise ValueError("learning rate must be > 0")


@dataclass
class AdaptConfig:
    sweeps: int = 4
    lr: float = 1e-4
    batch_size: int = 16
    seed: int = 0
    grad_clip: float = 5.0

    def __post_init__(self):
        if self.sweeps < 1:
            raise ValueError("need at least one sweep")
        if self.lr <= 0:
            raise ValueError("learning rate must be > 0")


class TrainingDiverged(RuntimeError):
    def __init__(self, step, utt_id):
        super().__init__(f"non-finite loss at step {step} on {utt_id!r}")
        self.step = step
        self.utt_id = utt_id


class MetricLog:
    """Append-only metric rows, monotone by step."""

    def __init__(self):
        self.rows = []

    def append(self, step: int, **metrics):
        if self.rows and step < self.rows[-1]["step"]:
            raise ValueError("metric steps must be non-decreasing")
        self.rows.append({"step": step, **metrics})

    def series(self, key):
        return [row[key] for row in self.rows if row.get(key) is not None]

    def to_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for row in self.rows:
                f.write(json.dumps(row, sort_keys=True) + "\n")

    @classmethod
    def from_jsonl(cls, path):
        log = cls()
        with open(path, encoding="utf-8") as f:
            for line in f:
                row = json.loads(line)
                log.append(row.pop("step"), **row)
        return log


class Adam:
    """Adam with bias correction; state arrays keyed by parameter order."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m += (1 - b1) * (g - m)
            v += (1 - b2) * (g * g - v)
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_gradients(params, max_norm: float) -> float:
    total = math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / total
        for p in params:
            p.grad = p.grad * factor
    return total


def _items_for(model, corpus):
    if isinstance(corpus, data_mod.Corpus):
        return corpus.sentences if isinstance(model, RecurrentLM) else corpus.utterances
    return list(corpus)


def _item_id(item, index):
    return getattr(item, "utt_id", f"item-{index:05d}")


def _loss_node(model, item, lam, tape):
    """(scalar node, transducer part, lm part) for one corpus item."""
    if isinstance(model, FactorizedTransducer):
        b = model.combined_loss(item, lam, tape)
        return b.node, b.transducer, b.lm_nll
    if isinstance(model, StandardTransducer):
        b = model.transducer_loss(item, tape)
        return b.node, b.transducer, 0.0
    tokens = item.tokens if hasattr(item, "tokens") else item
    node = model.nll_node(tokens, tape)
    return node, 0.0, node.item()


def _run_updates(model, params, items, *, lam, lr, epochs, batch_size, seed, grad_clip,
                 log, eval_each_epoch):
    optimizer = Adam(params, lr=lr)
    rng = np.random.default_rng(seed)
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(len(items))
        sum_trans, sum_lm, n_items = 0.0, 0.0, 0
        for lo in range(0, len(order), batch_size):
            batch = [items[i] for i in order[lo : lo + batch_size]]
            tape = Tape()
            total = None
            for offset, item in enumerate(batch):
                try:
                    node, trans, lm_part = _loss_node(model, item, lam, tape)
                except ad.NonFiniteError:
                    raise TrainingDiverged(step, _item_id(item, int(order[lo + offset])))
                if not math.isfinite(node.item()):
                    raise TrainingDiverged(step, _item_id(item, int(order[lo + offset])))
                sum_trans += trans
                sum_lm += lm_part
                total = node if total is None else ad.add(total, node, tape)
            n_items += len(batch)
            loss = ad.scale(total, 1.0 / len(batch), tape)
            ad.backward(tape, loss, params)
            clip_gradients(params, grad_clip)
            optimizer.step()
            step += 1
        metrics = {
            "epoch": epoch + 1,
            "loss_transducer": sum_trans / n_items,
            "loss_lm": sum_lm / n_items,
        }
        if eval_each_epoch is not None:
            metrics.update(eval_each_epoch())
        log.append(step, **metrics)
    return step


def train(model, corpus, cfg: TrainConfig, dev_text=None):
    """Fit from scratch; returns (model, MetricLog), deterministic by seed.

    ``dev_text`` (token sequences) adds a held-out perplexity column for
    models with a language-model view.
    """
    items = _items_for(model, corpus)
    if not items:
        raise ValueError("training corpus is empty")
    log = MetricLog()

    def evaluate():
        if dev_text is None or isinstance(model, StandardTransducer):
            return {}
        return {"ppl": eval_ppl(model, dev_text)}

    _run_updates(
        model,
        model.parameters(),
        items,
        lam=cfg.lam,
        lr=cfg.lr,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
        grad_clip=cfg.grad_clip,
        log=log,
        eval_each_epoch=evaluate,
    )
    return model, log


def adapt_lm(model, adapt_text, cfg: AdaptConfig, dev_text=None, dev_utts=None,
             beam_cfg=None):
    """Fine-tune only the vocabulary predictor on target-domain text.

    One sweep is one full pass over ``adapt_text``.  The returned log has
    one row per sweep (plus a step-0 baseline) carrying perplexity on
    ``dev_text`` and, when ``dev_utts`` is given, decoding WER.
    """
    sentences = _items_for(
        model.vocab_lm if isinstance(model, FactorizedTransducer) else model,
        adapt_text,
    )
    if not sentences:
        raise ValueError("adaptation text is empty")
    lm = model.vocab_lm if isinstance(model, FactorizedTransducer) else model
    params = lm.parameters()
    optimizer = Adam(params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    log = MetricLog()

    def evaluate(step):
        metrics = {}
        if dev_text is not None:
            metrics["ppl"] = eval_ppl(model, dev_text)
        if dev_utts is not None:
            metrics["wer"] = eval_wer(model, dev_utts, beam_cfg=beam_cfg)[0]
        log.append(step, sweep=step, **metrics)

    evaluate(0)
    step = 0
    for sweep in range(1, cfg.sweeps + 1):
        order = rng.permutation(len(sentences))
        for lo in range(0, len(order), cfg.batch_size):
            batch = [sentences[i] for i in order[lo : lo + cfg.batch_size]]
            tape = Tape()
            total = None
            for offset, toks in enumerate(batch):
                try:
                    node = lm.nll_node(toks, tape)
                except ad.NonFiniteError:
                    raise TrainingDiverged(step, _item_id(toks, int(order[lo + offset])))
                if not math.isfinite(node.item()):
                    raise TrainingDiverged(step, _item_id(toks, int(order[lo + offset])))
                total = node if total is None else ad.add(total, node, tape)
            loss = ad.scale(total, 1.0 / len(batch), tape)
            ad.backward(tape, loss, params)
            clip_gradients(params, cfg.grad_clip)
            optimizer.step()
            step += 1
        evaluate(sweep)
    return model, log


def eval_ppl(model, sentences) -> float:
    """exp(total nll / total predicted tokens), end-of-sequence included."""
    lm = model.vocab_lm if isinstance(model, FactorizedTransducer) else model
    sentences = [s.tokens if hasattr(s, "tokens") else tuple(s) for s in sentences]
    if not sentences:
        raise ValueError("empty evaluation corpus")
    total, count = 0.0, 0
    for toks in sentences:
        total += lm.nll_node(toks).item()
        count += len(toks) + 1
    return math.exp(total / count)


def eval_wer(model, utts, beam_cfg=None, max_symbols_per_frame=3):
    """Decode every utterance and pool edit statistics into corpus WER.

    Decoding is greedy unless a BeamConfig is given.  FT_THREADS > 1
    decodes utterances in parallel; results stay ordered by input index.
    """
    utts = list(utts)

    def decode_one(utt):
        if beam_cfg is None:
            hyp = decoding.greedy_decode(model, utt.features, max_symbols_per_frame)
        else:
            hyp = decoding.beam_decode(model, utt.features, beam_cfg)[0]
        return hyp

    threads = int(os.environ.get("FT_THREADS", "1"))
    if threads > 1 and len(utts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            hyps = list(pool.map(decode_one, utts))
    else:
        hyps = [decode_one(u) for u in utts]

    report = []
    for utt, hyp in zip(utts, hyps):
        stats = decoding.edit_distance(utt.tokens, hyp.tokens)
        report.append(
            {
                "utt_id": utt.utt_id,
                "ref": list(utt.tokens),
                "hyp": list(hyp.tokens),
                "score": hyp.score,
                "subs": stats.subs,
                "ins": stats.ins,
                "dels": stats.dels,
            }
        )
    corpus_wer = decoding.wer([u.tokens for u in utts], [h.tokens for h in hyps])
    return corpus_wer, report


def _ranks(values) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average rank for ties
        i = j + 1
    return ranks


def spearman(xs, ys) -> float:
    """Spearman rank correlation with average ranks for ties."""
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    if xs.shape != ys.shape or xs.size < 2:
        raise ValueError("need two equal-length series of length >= 2")
    rx, ry = _ranks(xs), _ranks(ys)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float((rx * rx).sum()) * float((ry * ry).sum()))
    if denom == 0.0:
        return 0.0  # a constant series carries no ordering information
    return float((rx * ry).sum() / denom)
