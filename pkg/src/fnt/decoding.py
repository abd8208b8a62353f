"""Greedy and beam-search decoding plus error-rate metrics.

Both model families expose the same stepwise inference protocol
(``decode_frames`` / ``decode_start`` / ``decode_row`` / ``decode_advance``),
so one decoder serves both.  Search is frame-synchronous with a per-frame
label cap; hypothesis scores are path log-probabilities (no alignment
merging).  Shallow fusion adds ``mu * log P_lm(token | prefix)`` from an
external language model on every non-blank expansion.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from fnt.symbols import BLANK_ID


@dataclass(frozen=True)
class Hypothesis:
    """Decoded label sequence with its search score (blanks removed)."""

    tokens: tuple
    score: float
    transducer_score: float = None
    lm_score: float = 0.0
    predictor_states: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.transducer_score is None:
            object.__setattr__(self, "transducer_score", self.score)
        if BLANK_ID in self.tokens:
            raise ValueError("hypothesis tokens must not contain blank")
        if self.score > 1e-12:
            raise ValueError("log-probability score must be <= 0")


@dataclass
class BeamConfig:
    beam_size: int = 8
    max_symbols_per_frame: int = 3
    fusion_weight: float = 0.0
    fusion_lm: object = None

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_symbols_per_frame < 1:
            raise ValueError("max_symbols_per_frame must be >= 1")
        if self.fusion_weight < 0:
            raise ValueError("fusion weight must be >= 0")
        if self.fusion_weight > 0 and self.fusion_lm is None:
            raise ValueError("fusion_weight > 0 requires a fusion_lm")


def greedy_decode(model, features, max_symbols_per_frame: int = 3) -> Hypothesis:
    """Frame-synchronous argmax decoding.

    Ties break toward blank, then the lowest token id (argmax order); when
    the per-frame label cap is reached the blank transition is taken.
    """
    frames = model.decode_frames(features)
    state = model.decode_start()
    tokens = []
    score = 0.0
    for t in range(frames["f"].shape[0]):
        emitted = 0
        while True:
            row = model.decode_row(frames, t, state)
            choice = BLANK_ID if emitted >= max_symbols_per_frame else int(np.argmax(row))
            score += row[choice]
            if choice == BLANK_ID:
                break
            tokens.append(choice)
            state = model.decode_advance(state, choice)
            emitted += 1
    return Hypothesis(
        tokens=tuple(tokens), score=score, transducer_score=score,
        predictor_states=state,
    )


@dataclass
class _Partial:
    tokens: tuple
    trans: float
    lm: float
    state: object
    lm_state: object
    lm_row: object
    finished: bool  # took the blank for this frame
    pending: object = None  # (parent_state, token) advanced lazily

    def fused(self, mu):
        return self.trans + mu * self.lm


def _sort_key(mu):
    return lambda h: (-h.fused(mu), len(h.tokens), h.tokens)


def beam_decode(model, features, cfg: BeamConfig) -> list:
    """Frame-synchronous beam search; returns hypotheses ranked by score.

    With beam_size=1 and fusion off this follows exactly the greedy path,
    including tie-breaking and the per-frame label cap.
    """
    mu = cfg.fusion_weight
    fusion = cfg.fusion_lm if mu > 0 else None
    frames = model.decode_frames(features)

    lm_row, lm_state = fusion.start_np() if fusion is not None else (None, None)
    beam = [
        _Partial(
            tokens=(), trans=0.0, lm=0.0, state=model.decode_start(),
            lm_state=lm_state, lm_row=lm_row, finished=False,
        )
    ]
    for t in range(frames["f"].shape[0]):
        active = beam
        for h in active:
            h.finished = False
        done = []
        for step in range(cfg.max_symbols_per_frame + 1):
            if not active:
                break
            force_blank = step == cfg.max_symbols_per_frame
            candidates = list(done)
            for hyp in active:
                row = model.decode_row(frames, t, hyp.state)
                candidates.append(
                    _Partial(
                        tokens=hyp.tokens, trans=hyp.trans + row[BLANK_ID],
                        lm=hyp.lm, state=hyp.state, lm_state=hyp.lm_state,
                        lm_row=hyp.lm_row, finished=True,
                    )
                )
                if force_blank:
                    continue
                for k in range(1, row.shape[0]):
                    lm_add = hyp.lm_row[k - 1] if fusion is not None else 0.0
                    candidates.append(
                        _Partial(
                            tokens=hyp.tokens + (k,), trans=hyp.trans + row[k],
                            lm=hyp.lm + lm_add, state=None, lm_state=hyp.lm_state,
                            lm_row=hyp.lm_row, finished=False,
                            pending=(hyp.state, k),
                        )
                    )
            candidates.sort(key=_sort_key(mu))
            kept = candidates[: cfg.beam_size]
            done = [h for h in kept if h.finished]
            active = []
            for h in kept:
                if h.finished:
                    continue
                parent_state, tok = h.pending
                h.state = model.decode_advance(parent_state, tok)
                h.pending = None
                if fusion is not None:
                    h.lm_row, h.lm_state = fusion.advance_np(h.lm_state, tok)
                active.append(h)
        beam = sorted(done, key=_sort_key(mu))

    return [
        Hypothesis(
            tokens=h.tokens, score=h.fused(mu), transducer_score=h.trans,
            lm_score=h.lm, predictor_states=h.state,
        )
        for h in beam
    ]


def hypothesis_record(utt_id: str, hyp: Hypothesis, mu: float = 0.0) -> dict:
    """JSON-line payload for decoded output."""
    return {
        "utt_id": utt_id,
        "tokens": list(hyp.tokens),
        "score": hyp.score,
        "breakdown": {
            "transducer": hyp.transducer_score,
            "lm": hyp.lm_score,
            "fusion_weight": mu,
        },
    }


class EditStats(NamedTuple):
    subs: int
    ins: int
    dels: int

    @property
    def total(self):
        return self.subs + self.ins + self.dels


def edit_distance(ref, hyp) -> EditStats:
    """Levenshtein alignment with unit costs.

    On cost ties the substitution/match path is preferred over deletion,
    and deletion over insertion, so counts are deterministic.
    """
    ref, hyp = list(ref), list(hyp)
    R, H = len(ref), len(hyp)
    # dp[j] = (total, subs, ins, dels) for current ref prefix vs hyp[:j]
    dp = [(j, 0, j, 0) for j in range(H + 1)]
    for i in range(1, R + 1):
        prev = dp
        dp = [(i, 0, 0, i)] + [None] * H
        for j in range(1, H + 1):
            match = ref[i - 1] == hyp[j - 1]
            d_total, d_subs, d_ins, d_dels = prev[j - 1]
            diag = (d_total + (0 if match else 1), d_subs + (0 if match else 1), d_ins, d_dels)
            u_total, u_subs, u_ins, u_dels = prev[j]
            dele = (u_total + 1, u_subs, u_ins, u_dels + 1)
            l_total, l_subs, l_ins, l_dels = dp[j - 1]
            ins = (l_total + 1, l_subs, l_ins + 1, l_dels)
            best = diag
            if dele[0] < best[0]:
                best = dele
            if ins[0] < best[0]:
                best = ins
            dp[j] = best
    total, subs, ins_, dels = dp[H]
    return EditStats(subs=subs, ins=ins_, dels=dels)


def wer(refs, hyps) -> float:
    """Corpus-pooled word error rate in percent.

    100 * sum(errors) / sum(reference lengths); not a mean of
    per-utterance rates.
    """
    if len(refs) != len(hyps):
        raise ValueError("reference and hypothesis lists differ in length")
    if not refs:
        raise ValueError("empty reference corpus")
    errors = 0
    ref_len = 0
    for r, h in zip(refs, hyps):
        errors += edit_distance(r, h).total
        ref_len += len(r)
    if ref_len == 0:
        raise ValueError("reference corpus has no tokens")
    return 100.0 * errors / ref_len
