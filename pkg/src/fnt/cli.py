"""Command-line entry point.

Subcommands: gen-data, train, adapt, decode, eval, ppl, sweep-lambda.
Every run writes a manifest of its resolved configuration and seed into
the run directory, and reports are emitted both as JSON lines and as a
rendered plain-text table.  Reruns with the same manifest produce
bit-identical outputs (no timestamps anywhere).
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import fnt
from fnt import data as data_mod
from fnt import decoding, lattice, models, training


def _write_manifest(out_dir, command, args):
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {
        "command": command,
        "config": resolved,
        "lattice_backend": lattice.BACKEND,
        "package_version": fnt.__version__,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _ensure_out(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def render_table(rows, columns) -> str:
    """Plain-text table: columns is a list of (header, key) pairs."""

    def fmt(value):
        if isinstance(value, float):
            return f"{value:.4g}"
        return str(value)

    table = [[h for h, _ in columns]] + [[fmt(r.get(k, "-")) for _, k in columns] for r in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(columns))]
    lines = []
    for i, row in enumerate(table):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _write_report(out_dir, stem, rows, columns):
    with open(os.path.join(out_dir, f"{stem}.jsonl"), "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")
    with open(os.path.join(out_dir, f"{stem}.txt"), "w", encoding="utf-8") as f:
        f.write(render_table(rows, columns))


# ---------------------------------------------------------------------------
# dataset directory helpers


def _dataset_paths(root):
    return {
        "task_source": os.path.join(root, "task_source.json"),
        "task_target": os.path.join(root, "task_target.json"),
        "vocab": os.path.join(root, "vocab.txt"),
        "source": {
            split: os.path.join(root, "source", split) for split in ("train", "dev", "test")
        },
        "target": {
            split: os.path.join(root, "target", split) for split in ("dev", "test")
        },
        "adapt": os.path.join(root, "target", "adapt.txt"),
    }


def _load_vocab(root) -> data_mod.Vocab:
    return data_mod.Vocab(data_mod.read_text(os.path.join(root, "vocab.txt")))


def _read_sentences(vocab, path):
    return [vocab.tokenize(line) for line in data_mod.read_text(path)]


def cmd_gen_data(args):
    out = _ensure_out(args)
    source_spec = (
        data_mod.load_task_spec(args.spec) if args.spec else data_mod.SyntheticTaskSpec()
    )
    target_seed = args.target_seed if args.target_seed is not None else source_spec.domain_seed + 1
    target_spec = data_mod.SyntheticTaskSpec(
        **{**vars(source_spec).copy(), "domain_seed": target_seed}
    )
    kl = data_mod.bigram_kl(source_spec, target_spec)
    vocab = data_mod.Vocab.synthetic(source_spec.V)

    data_mod.save_task_spec(source_spec, os.path.join(out, "task_source.json"))
    data_mod.save_task_spec(target_spec, os.path.join(out, "task_target.json"))
    data_mod.write_text(os.path.join(out, "vocab.txt"), vocab.regular_list())
    os.makedirs(os.path.join(out, "source"), exist_ok=True)
    os.makedirs(os.path.join(out, "target"), exist_ok=True)

    sizes = {"train": args.n_train, "dev": args.n_dev, "test": args.n_test}
    for split, n in sizes.items():
        corpus = data_mod.gen_domain(source_spec, n, split)
        data_mod.write_text(os.path.join(out, "source", f"{split}.txt"), corpus.text_lines())
        data_mod.save_features(os.path.join(out, "source", f"{split}.feats"), corpus.utterances)
    for split in ("dev", "test"):
        corpus = data_mod.gen_domain(target_spec, sizes[split], split)
        data_mod.write_text(os.path.join(out, "target", f"{split}.txt"), corpus.text_lines())
        data_mod.save_features(os.path.join(out, "target", f"{split}.feats"), corpus.utterances)
    adapt = data_mod.gen_domain(target_spec, args.n_adapt, "adapt", render=False)
    data_mod.write_text(os.path.join(out, "target", "adapt.txt"), adapt.text_lines())

    _write_manifest(out, "gen-data", args)
    print(f"wrote corpora under {out} (bigram KL source->target: {kl:.3f} nats)")
    return 0


def _build_model(kind, vocab, spec, args):
    encoder = models.EncoderConfig(
        input_dim=spec.d, hidden_dim=args.hidden, layers=args.encoder_layers
    )
    predictor = models.PredictorConfig(
        embed_dim=args.embed, hidden_dim=args.hidden, layers=args.predictor_layers
    )
    if kind == "standard":
        cfg = models.StandardConfig(
            vocab_size=vocab.V, encoder=encoder, predictor=predictor, seed=args.seed
        )
    elif kind == "factorized":
        cfg = models.FactorizedConfig(
            vocab_size=vocab.V,
            encoder=encoder,
            blank_predictor=predictor,
            vocab_predictor=predictor,
            seed=args.seed,
        )
    else:
        cfg = models.LMConfig(vocab_size=vocab.V, predictor=predictor, seed=args.seed)
    model = models.build_model(kind, cfg)
    model.vocab = vocab
    return model


def cmd_train(args):
    out = _ensure_out(args)
    vocab = _load_vocab(args.data)
    spec = data_mod.load_task_spec(os.path.join(args.data, "task_source.json"))
    model = _build_model(args.model, vocab, spec, args)

    dev_text = _read_sentences(vocab, os.path.join(args.data, "source", "dev.txt"))
    if args.model == "rnnlm":
        text_path = args.text or os.path.join(args.data, "source", "train.txt")
        corpus = _read_sentences(vocab, text_path)
    else:
        corpus = data_mod.load_features(os.path.join(args.data, "source", "train.feats"))
        if args.limit_train:
            corpus = corpus[: args.limit_train]

    cfg = training.TrainConfig(
        lam=getattr(args, "lambda"),
        lr=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    _, log = training.train(model, corpus, cfg, dev_text=dev_text)
    data_mod.save_checkpoint(model, os.path.join(out, "model.ckpt"), vocab=vocab)
    log.to_jsonl(os.path.join(out, "metrics.jsonl"))
    _write_manifest(out, "train", args)
    last = log.rows[-1]
    print(
        f"trained {args.model} for {args.epochs} epochs: "
        f"loss_t={last['loss_transducer']:.3f} loss_lm={last['loss_lm']:.3f}"
        + (f" dev_ppl={last['ppl']:.2f}" if "ppl" in last else "")
    )
    return 0


def cmd_adapt(args):
    out = _ensure_out(args)
    model = data_mod.load_checkpoint(args.checkpoint)
    if model.kind not in ("factorized", "rnnlm"):
        raise data_mod.KindMismatchError("adaptation needs a factorized or rnnlm checkpoint")
    vocab = model.vocab
    adapt_text = _read_sentences(vocab, args.text)
    # PPL curves fall back to the adaptation text when no held-out text is given
    dev_text = _read_sentences(vocab, args.dev_text) if args.dev_text else adapt_text
    dev_utts = data_mod.load_features(args.dev_feats) if args.dev_feats else None

    cfg = training.AdaptConfig(sweeps=args.sweeps, lr=args.lr, seed=args.seed)
    _, log = training.adapt_lm(model, adapt_text, cfg, dev_text=dev_text, dev_utts=dev_utts)
    data_mod.save_checkpoint(model, os.path.join(out, "adapted.ckpt"), vocab=vocab)
    log.to_jsonl(os.path.join(out, "curves.jsonl"))
    columns = [("sweep", "sweep"), ("ppl", "ppl"), ("wer", "wer")]
    with open(os.path.join(out, "curves.txt"), "w", encoding="utf-8") as f:
        f.write(render_table(log.rows, columns))
    _write_manifest(out, "adapt", args)
    print(render_table(log.rows, columns), end="")
    return 0


def _beam_config(args):
    """(BeamConfig or None for greedy, resolved fusion weight).

    The fusion weight defaults to 0.3 when a fusion LM is supplied and to
    0 otherwise.
    """
    fusion_lm = None
    if args.fusion_lm:
        fusion_lm = data_mod.load_checkpoint(args.fusion_lm, expect_kind="rnnlm")
    mu = args.fusion_weight
    if mu is None:
        mu = 0.3 if fusion_lm is not None else 0.0
    if args.beam < 1:
        if mu > 0:
            raise ValueError("shallow fusion requires --beam >= 1")
        return None, 0.0  # greedy
    return (
        decoding.BeamConfig(
            beam_size=args.beam,
            max_symbols_per_frame=args.max_symbols,
            fusion_weight=mu,
            fusion_lm=fusion_lm,
        ),
        mu,
    )


def cmd_decode(args):
    out = _ensure_out(args)
    model = data_mod.load_checkpoint(args.checkpoint)
    utts = data_mod.load_features(args.feats)
    beam_cfg, mu = _beam_config(args)
    rows = []
    for utt in utts:
        if beam_cfg is None:
            hyp = decoding.greedy_decode(model, utt.features, args.max_symbols)
        else:
            hyp = decoding.beam_decode(model, utt.features, beam_cfg)[0]
        rows.append(decoding.hypothesis_record(utt.utt_id, hyp, mu))
    with open(os.path.join(out, "hyps.jsonl"), "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")
    _write_manifest(out, "decode", args)
    print(f"decoded {len(rows)} utterances -> {os.path.join(out, 'hyps.jsonl')}")
    return 0


def cmd_eval(args):
    out = _ensure_out(args)
    model = data_mod.load_checkpoint(args.checkpoint)
    utts = data_mod.load_features(args.feats)
    beam_cfg, _ = _beam_config(args)
    wer, report = training.eval_wer(model, utts, beam_cfg=beam_cfg, max_symbols_per_frame=args.max_symbols)
    columns = [
        ("utt", "utt_id"), ("subs", "subs"), ("ins", "ins"), ("dels", "dels"), ("score", "score"),
    ]
    _write_report(out, "report", report, columns)
    summary = {"wer": wer, "utterances": len(report)}
    with open(os.path.join(out, "wer.json"), "w", encoding="utf-8") as f:
        json.dump(summary, f, sort_keys=True)
        f.write("\n")
    _write_manifest(out, "eval", args)
    print(f"WER {wer:.2f}% over {len(report)} utterances")
    return 0


def cmd_ppl(args):
    model = data_mod.load_checkpoint(args.checkpoint)
    if model.kind == "standard":
        raise data_mod.KindMismatchError(
            "a standard transducer has no standalone language model to score text"
        )
    vocab = model.vocab
    sentences = [vocab.tokenize(line) for line in data_mod.read_text(args.text)]
    ppl = training.eval_ppl(model, sentences)
    if args.out:
        out = _ensure_out(args)
        with open(os.path.join(out, "ppl.json"), "w", encoding="utf-8") as f:
            json.dump({"ppl": ppl, "sentences": len(sentences)}, f, sort_keys=True)
            f.write("\n")
        _write_manifest(out, "ppl", args)
    print(f"PPL {ppl:.3f} over {len(sentences)} sentences")
    return 0


def cmd_sweep_lambda(args):
    out = _ensure_out(args)
    vocab = _load_vocab(args.data)
    spec = data_mod.load_task_spec(os.path.join(args.data, "task_source.json"))
    train_utts = data_mod.load_features(os.path.join(args.data, "source", "train.feats"))
    if args.limit_train:
        train_utts = train_utts[: args.limit_train]
    test_utts = data_mod.load_features(os.path.join(args.data, "source", "test.feats"))
    dev_text = _read_sentences(vocab, os.path.join(args.data, "source", "dev.txt"))

    rows = []
    std = _build_model("standard", vocab, spec, args)
    training.train(
        std,
        train_utts,
        training.TrainConfig(lam=0.0, lr=args.lr, epochs=args.epochs, batch_size=args.batch_size, seed=args.seed),
    )
    data_mod.save_checkpoint(std, os.path.join(out, "standard.ckpt"), vocab=vocab)
    wer, _ = training.eval_wer(std, test_utts)
    rows.append({"model": "standard", "lambda": None, "ppl": None, "wer": wer})

    for lam in args.values:
        model = _build_model("factorized", vocab, spec, args)
        training.train(
            model,
            train_utts,
            training.TrainConfig(lam=lam, lr=args.lr, epochs=args.epochs, batch_size=args.batch_size, seed=args.seed),
        )
        name = f"factorized_lambda{lam:g}"
        data_mod.save_checkpoint(model, os.path.join(out, f"{name}.ckpt"), vocab=vocab)
        wer, _ = training.eval_wer(model, test_utts)
        ppl = training.eval_ppl(model, dev_text)
        rows.append({"model": "factorized", "lambda": lam, "ppl": ppl, "wer": wer})

    columns = [("model", "model"), ("lambda", "lambda"), ("ppl", "ppl"), ("wer", "wer")]
    _write_report(out, "sweep", rows, columns)
    _write_manifest(out, "sweep-lambda", args)
    print(render_table(rows, columns), end="")
    return 0


def _float_list(text):
    return [float(v) for v in text.split(",") if v != ""]


def build_parser():
    parser = argparse.ArgumentParser(prog="fnt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic two-domain task")
    p.add_argument("--spec", help="task spec JSON for the source domain")
    p.add_argument("--out", required=True)
    p.add_argument("--target-seed", type=int, default=None)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-dev", type=int, default=200)
    p.add_argument("--n-test", type=int, default=200)
    p.add_argument("--n-adapt", type=int, default=5000)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model from scratch")
    p.add_argument("--data", required=True, help="gen-data output directory")
    p.add_argument("--out", required=True)
    p.add_argument("--model", choices=models.MODEL_KINDS, default="factorized")
    p.add_argument("--lambda", type=float, default=0.5, dest="lambda")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--embed", type=int, default=32)
    p.add_argument("--encoder-layers", type=int, default=2)
    p.add_argument("--predictor-layers", type=int, default=1)
    p.add_argument("--limit-train", type=int, default=0)
    p.add_argument("--text", help="training text for --model rnnlm")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("adapt", help="text-only LM adaptation of a factorized model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--text", required=True, help="adaptation text, one sentence per line")
    p.add_argument("--out", required=True)
    p.add_argument("--sweeps", type=int, default=4)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dev-text", help="held-out text for per-sweep PPL")
    p.add_argument("--dev-feats", help="held-out features for per-sweep WER")
    p.set_defaults(func=cmd_adapt)

    def add_decode_flags(p):
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--feats", required=True, help="feature archive")
        p.add_argument("--out", required=True)
        p.add_argument("--beam", type=int, default=0, help="beam size; 0 = greedy")
        p.add_argument("--max-symbols", type=int, default=3)
        p.add_argument("--fusion-weight", type=float, default=None,
                       help="defaults to 0.3 when --fusion-lm is given")
        p.add_argument("--fusion-lm", help="rnnlm checkpoint for shallow fusion")

    p = sub.add_parser("decode", help="decode a feature archive to JSON lines")
    add_decode_flags(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="decode and score WER against references")
    add_decode_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ppl", help="perplexity of text under a checkpoint's LM")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ppl)

    p = sub.add_parser("sweep-lambda", help="Table-2-shaped PPL/WER report over lambda")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--values", type=_float_list, default=[0.0, 0.1, 0.2, 0.5, 1.0])
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--embed", type=int, default=32)
    p.add_argument("--encoder-layers", type=int, default=2)
    p.add_argument("--predictor-layers", type=int, default=1)
    p.add_argument("--limit-train", type=int, default=0)
    p.set_defaults(func=cmd_sweep_lambda)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (OSError, ValueError, data_mod.CheckpointError, training.TrainingDiverged) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


run = main  # operation-style alias


if __name__ == "__main__":
    sys.exit(main())
