import math

import numpy as np
import pytest

from fnt.decoding import (
    BeamConfig,
    EditStats,
    Hypothesis,
    beam_decode,
    edit_distance,
    greedy_decode,
    hypothesis_record,
    wer,
)
from fnt.models import (
    EncoderConfig,
    FactorizedConfig,
    FactorizedTransducer,
    LMConfig,
    PredictorConfig,
    RecurrentLM,
    StandardConfig,
    StandardTransducer,
)

C, A, T_ = 4, 5, 6


class ScriptModel:
    """Stub decode protocol: rows looked up by (frame, emitted label count)."""

    def __init__(self, rows):
        self.rows = {k: np.asarray(v, dtype=np.float64) for k, v in rows.items()}
        self.T = 1 + max(t for t, _ in rows)

    def decode_frames(self, features):
        return {"f": np.zeros((self.T, 1))}

    def decode_start(self):
        return {"u": 0}

    def decode_row(self, frames, t, state):
        return self.rows[(t, state["u"])]

    def decode_advance(self, state, token):
        return {"u": state["u"] + 1}


def lp(*weights):
    """Normalized log-probs from unnormalized log-weights."""
    w = np.asarray(weights, dtype=np.float64)
    return w - (w.max() + np.log(np.exp(w - w.max()).sum()))


def small_standard(seed):
    return StandardTransducer(
        StandardConfig(
            vocab_size=4,
            encoder=EncoderConfig(input_dim=2, hidden_dim=6, layers=1),
            predictor=PredictorConfig(embed_dim=3, hidden_dim=6, layers=1),
            seed=seed,
        )
    )


def small_factorized(seed):
    return FactorizedTransducer(
        FactorizedConfig(
            vocab_size=4,
            encoder=EncoderConfig(input_dim=2, hidden_dim=6, layers=1),
            blank_predictor=PredictorConfig(embed_dim=3, hidden_dim=6, layers=1),
            vocab_predictor=PredictorConfig(embed_dim=3, hidden_dim=6, layers=1),
            seed=seed,
        )
    )


def test_greedy_all_blank_gives_empty():
    model = ScriptModel({(t, u): lp(10.0, 0.0, 0.0) for t in range(3) for u in range(4)})
    hyp = greedy_decode(model, np.zeros((3, 1)))
    assert hyp.tokens == ()
    assert hyp.score == pytest.approx(3 * lp(10.0, 0.0, 0.0)[0])


def test_greedy_single_frame_single_label():
    model = ScriptModel({(0, 0): lp(0.0, 5.0, 0.0), (0, 1): lp(5.0, 0.0, 0.0)})
    hyp = greedy_decode(model, np.zeros((1, 1)))
    assert hyp.tokens == (1,)


def test_greedy_tie_breaks_toward_blank_then_low_id():
    model = ScriptModel({(0, 0): lp(1.0, 1.0, 1.0)})
    assert greedy_decode(model, np.zeros((1, 1))).tokens == ()
    model = ScriptModel({(0, 0): lp(0.0, 2.0, 2.0), (0, 1): lp(9.0, 0.0, 0.0)})
    assert greedy_decode(model, np.zeros((1, 1))).tokens == (1,)


def test_greedy_respects_label_cap():
    # labels always beat blank; the cap must force the frame to close
    model = ScriptModel({(0, u): lp(0.0, 4.0, 1.0) for u in range(10)})
    hyp = greedy_decode(model, np.zeros((1, 1)), max_symbols_per_frame=3)
    assert hyp.tokens == (1, 1, 1)
    row = lp(0.0, 4.0, 1.0)
    assert hyp.score == pytest.approx(3 * row[1] + row[0])


def replay_score(model, features, tokens, max_symbols_per_frame=3):
    """Independent recomputation of the greedy path score."""
    frames = model.decode_frames(features)
    state = model.decode_start()
    score = 0.0
    pos = 0
    for t in range(frames["f"].shape[0]):
        emitted = 0
        while True:
            row = model.decode_row(frames, t, state)
            choice = 0 if emitted >= max_symbols_per_frame else int(np.argmax(row))
            score += row[choice]
            if choice == 0:
                break
            assert pos < len(tokens) and tokens[pos] == choice
            pos += 1
            state = model.decode_advance(state, choice)
            emitted += 1
    assert pos == len(tokens)
    return score


def test_greedy_score_matches_replay_oracle():
    rng = np.random.default_rng(0)
    for seed in range(10):
        model = small_standard(seed) if seed % 2 else small_factorized(seed)
        feats = rng.normal(size=(4, 2)) * 3.0
        hyp = greedy_decode(model, feats)
        assert hyp.score == pytest.approx(replay_score(model, feats, hyp.tokens), abs=1e-9)


def test_beam_one_equals_greedy_on_random_models():
    rng = np.random.default_rng(1)
    for seed in range(50):
        model = small_standard(seed) if seed % 2 else small_factorized(seed)
        feats = rng.normal(size=(int(rng.integers(1, 5)), 2)) * 3.0
        greedy = greedy_decode(model, feats)
        beam = beam_decode(model, feats, BeamConfig(beam_size=1))
        assert len(beam) == 1
        assert beam[0].tokens == greedy.tokens
        assert beam[0].score == pytest.approx(greedy.score, abs=1e-12)


def exhaustive_best(model, features, cap):
    """Best path log-probability over every capped monotone decision tree."""
    frames = model.decode_frames(features)
    T = frames["f"].shape[0]
    best = -math.inf

    def walk(t, state, emitted, score):
        nonlocal best
        if t == T:
            best = max(best, score)
            return
        row = model.decode_row(frames, t, state)
        walk(t + 1, state, 0, score + row[0])
        if emitted < cap:
            for k in range(1, row.shape[0]):
                walk(t, model.decode_advance(state, k), emitted + 1, score + row[k])

    walk(0, model.decode_start(), 0, 0.0)
    return best


def test_beam_monotone_and_reaches_exhaustive_optimum():
    rng = np.random.default_rng(2)
    for seed in range(4):
        model = small_standard(seed) if seed % 2 else small_factorized(seed)
        feats = rng.normal(size=(3, 2)) * 2.0
        oracle = exhaustive_best(model, feats, cap=2)
        prev = -math.inf
        for beam_size in (1, 2, 4, 8, 16):
            best = beam_decode(
                model, feats, BeamConfig(beam_size=beam_size, max_symbols_per_frame=2)
            )[0].transducer_score
            assert best <= oracle + 1e-9
            assert best >= prev - 1e-9
            prev = best
        # a beam wider than the whole tree prunes nothing
        full = beam_decode(
            model, feats, BeamConfig(beam_size=50000, max_symbols_per_frame=2)
        )[0].transducer_score
        assert full == pytest.approx(oracle, abs=1e-9)


def test_uniform_fusion_lm_preserves_equal_length_ranking():
    model = small_factorized(3)
    uniform_lm = RecurrentLM(LMConfig(vocab_size=4, predictor=PredictorConfig(embed_dim=3, hidden_dim=6)))
    uniform_lm.w_out.data[...] = 0.0
    uniform_lm.b_out.data[...] = 0.0
    feats = np.random.default_rng(4).normal(size=(3, 2)) * 2.0
    cfg0 = BeamConfig(beam_size=4000, max_symbols_per_frame=2)
    cfg1 = BeamConfig(
        beam_size=4000, max_symbols_per_frame=2, fusion_weight=0.7, fusion_lm=uniform_lm
    )
    base = beam_decode(model, feats, cfg0)
    fused = beam_decode(model, feats, cfg1)
    const = -math.log(4)
    by_len_base = {}
    by_len_fused = {}
    for h in base:
        by_len_base.setdefault(len(h.tokens), []).append(h)
    for h in fused:
        by_len_fused.setdefault(len(h.tokens), []).append(h)
        # fused score is the transducer score shifted by a constant per token
        assert h.score == pytest.approx(h.transducer_score + 0.7 * const * len(h.tokens), abs=1e-9)
    for length, hyps in by_len_base.items():
        got = [h.tokens for h in by_len_fused[length]]
        want = [h.tokens for h in hyps]
        assert got == want


def test_beam_config_validation():
    with pytest.raises(ValueError):
        BeamConfig(beam_size=0)
    with pytest.raises(ValueError):
        BeamConfig(fusion_weight=0.5)  # no fusion LM
    with pytest.raises(ValueError):
        BeamConfig(max_symbols_per_frame=0)


def test_hypothesis_validation():
    with pytest.raises(ValueError):
        Hypothesis(tokens=(0, 1), score=-1.0)
    with pytest.raises(ValueError):
        Hypothesis(tokens=(1,), score=0.5)


def test_hypothesis_scores_nonincreasing_along_prefix():
    rng = np.random.default_rng(5)
    model = small_factorized(7)
    feats = rng.normal(size=(4, 2)) * 2.0
    for hyp in beam_decode(model, feats, BeamConfig(beam_size=8)):
        assert hyp.score <= 1e-12


def test_hypothesis_record_shape():
    rec = hypothesis_record("utt7", Hypothesis(tokens=(2, 3), score=-1.5), mu=0.3)
    assert rec["utt_id"] == "utt7"
    assert rec["tokens"] == [2, 3]
    assert set(rec["breakdown"]) == {"transducer", "lm", "fusion_weight"}


def test_edit_distance_examples():
    assert edit_distance([C, A, T_], [C, T_]) == EditStats(subs=0, ins=0, dels=1)
    assert edit_distance([C, A, T_], [C, A, T_]) == EditStats(0, 0, 0)
    assert edit_distance([], [1, 2]) == EditStats(subs=0, ins=2, dels=0)
    assert edit_distance([1, 2], []) == EditStats(subs=0, ins=0, dels=2)


def brute_edit(ref, hyp):
    if not ref:
        return len(hyp)
    if not hyp:
        return len(ref)
    return min(
        brute_edit(ref[1:], hyp[1:]) + (ref[0] != hyp[0]),
        brute_edit(ref[1:], hyp) + 1,
        brute_edit(ref, hyp[1:]) + 1,
    )


def test_edit_distance_matches_recursive_oracle():
    rng = np.random.default_rng(6)
    for _ in range(40):
        ref = list(rng.integers(1, 4, size=rng.integers(0, 7)))
        hyp = list(rng.integers(1, 4, size=rng.integers(0, 7)))
        assert edit_distance(ref, hyp).total == brute_edit(ref, hyp)


def test_edit_distance_prefers_substitution():
    stats = edit_distance([1], [2])
    assert stats == EditStats(subs=1, ins=0, dels=0)


def test_substitution_count_symmetric_on_equal_length():
    rng = np.random.default_rng(7)
    for _ in range(20):
        n = int(rng.integers(1, 6))
        a = list(rng.integers(1, 4, size=n))
        b = list(rng.integers(1, 4, size=n))
        assert edit_distance(a, b).subs == edit_distance(b, a).subs


def test_wer_examples():
    assert wer([[C, A, T_]], [[C, A, T_]]) == 0.0
    assert wer([[C, A, T_]], [[C, T_]]) == pytest.approx(100.0 / 3)
    # pooled, not averaged: 1 error over 10 reference tokens
    refs = [[1, 2, 3], [1, 2, 3, 4, 5, 6, 7]]
    hyps = [[1, 3], [1, 2, 3, 4, 5, 6, 7]]
    assert wer(refs, hyps) == pytest.approx(10.0)


def test_wer_errors():
    with pytest.raises(ValueError):
        wer([], [])
    with pytest.raises(ValueError):
        wer([[1]], [])
    with pytest.raises(ValueError):
        wer([[]], [[]])
