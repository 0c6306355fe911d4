"""Command-line surface for the whole pipeline.

Every command reads an optional key=value config file plus --set overrides,
validates inputs up front, and fails with a one-line error. Exit codes:
0 success, 1 validation error, 2 runtime or numeric failure.
"""

import argparse
import concurrent.futures
import dataclasses
import json
import os
import sys

import numpy as np

from . import checkpoints, config, game, metrics, seq2seq, textdata
from .seq2seq import RegularizerConfig


def _cfg(args):
    return config.load_config(args.config, args.set or [])


def _add_common(p):
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")


# ---- data commands -----------------------------------------------------


def cmd_features_synth(args):
    cfg = _cfg(args)
    rng = np.random.default_rng(cfg.data_seed)
    train, valid = game.make_feature_splits(
        cfg.n_train_feats, cfg.n_valid_feats, cfg.feat_dim,
        cfg.feat_clusters, cfg.feat_sigma, rng)
    game.save_ecfv(args.out_train, train.vectors)
    game.save_ecfv(args.out_valid, valid.vectors)
    print(f"wrote {train.n}x{train.dim} to {args.out_train}, "
          f"{valid.n}x{valid.dim} to {args.out_valid}")
    return 0


def cmd_bpe_learn(args):
    lines = []
    for path in args.corpus:
        lines.extend(textdata.read_lines(path))
    if not lines:
        raise ValueError("bpe-learn: no input lines")
    model = textdata.BpeModel.learn(lines, args.merges)
    model.save(args.out)
    print(f"learned {len(model.merges)} merges from {len(lines)} lines -> {args.out}")
    return 0


def cmd_bpe_apply(args):
    model = textdata.BpeModel.load(args.model)
    out = [" ".join(model.segment_line(ln)) for ln in textdata.read_lines(args.input)]
    textdata.write_lines(args.output, out)
    print(f"segmented {len(out)} lines -> {args.output}")
    return 0


# ---- pretraining -------------------------------------------------------


def cmd_ec_pretrain(args):
    cfg = _cfg(args)
    train = game.FeatureSet(game.load_ecfv(args.features), "train")
    valid = game.FeatureSet(game.load_ecfv(args.valid_features), "valid")
    if train.dim != valid.dim:
        raise ValueError(f"feature dims differ: {train.dim} vs {valid.dim}")
    os.makedirs(args.out_dir, exist_ok=True)
    rng = np.random.default_rng(cfg.ec_seed)
    agent = game.Agent(cfg.ec_vocab, cfg.embed_dim, cfg.hidden_dim,
                       train.dim, cfg.l_max, rng)
    steps = cfg.ec_steps if args.steps is None else args.steps
    stop = cfg.stop_accuracy if cfg.stop_accuracy > 0 else None
    records = game.train_agent(
        agent, train, valid, steps=steps, k_train=cfg.k_train, k_eval=cfg.k_eval,
        rng=rng, batch=cfg.batch, lr=cfg.lr, drop=cfg.dropout_ec,
        eval_every=cfg.eval_every, eval_rounds=cfg.eval_rounds,
        stop_accuracy=stop, temperature=cfg.temperature,
        log_path=os.path.join(args.out_dir, "ec-log.ndjson"))
    chash = config.config_hash(cfg)
    for rec in records:
        path = os.path.join(args.out_dir, f"agent-{rec.step:06d}.eckp")
        checkpoints.save_agent(path, agent, step=rec.step,
                               eval_accuracy=rec.accuracy, config_hash=chash,
                               rng=rng, snapshot=rec.snapshot)
        rec.path = path
    last = records[-1]
    print(f"checkpoints={len(records)} final_step={last.step} "
          f"final_accuracy={last.accuracy:.4f} dir={args.out_dir}")
    return 0


# ---- corpus loading for fine-tuning ------------------------------------


def _read_id_lines(path):
    seqs = []
    for ln_no, line in enumerate(textdata.read_lines(path), 1):
        try:
            seqs.append([int(tok) for tok in line.split()])
        except ValueError:
            raise ValueError(f"{path}:{ln_no}: expected whitespace-separated integer ids")
    return seqs


def _load_pairs(args, src_path, tgt_path):
    if args.format == "ids":
        return _read_id_lines(src_path), _read_id_lines(tgt_path)
    if not args.bpe_src or not args.bpe_tgt:
        raise ValueError("text format needs --bpe-src and --bpe-tgt")
    src_model = textdata.BpeModel.load(args.bpe_src)
    tgt_model = textdata.BpeModel.load(args.bpe_tgt)
    src_vocab = textdata.Vocab.build(src_model)
    tgt_vocab = textdata.Vocab.build(tgt_model)
    src = [textdata.encode_line(src_model, src_vocab, ln)
           for ln in textdata.read_lines(src_path)]
    tgt = [textdata.encode_line(tgt_model, tgt_vocab, ln)
           for ln in textdata.read_lines(tgt_path)]
    return src, tgt


def _check_ids(seqs, vocab_size, what):
    top = max((max(s) for s in seqs if s), default=0)
    if top >= vocab_size:
        raise ValueError(f"{what}: token id {top} outside vocab of {vocab_size}")


# ---- fine-tuning -------------------------------------------------------


def build_model(cfg, args, src_vocab, tgt_vocab):
    bottleneck = None if args.no_adapter else cfg.adapter_dim
    if args.no_transfer:
        return seq2seq.fresh(src_vocab, tgt_vocab, cfg.embed_dim, cfg.hidden_dim,
                             np.random.default_rng(cfg.ft_seed),
                             adapter_bottleneck=bottleneck,
                             adapter_drop=cfg.dropout_mt)
    if not args.src_agent or not args.tgt_agent:
        raise ValueError("nmt-finetune: need --src-agent and --tgt-agent, or --no-transfer")
    src_ag, _ = checkpoints.load_agent(args.src_agent)
    tgt_ag, _ = checkpoints.load_agent(args.tgt_agent)
    return seq2seq.assemble(src_ag, tgt_ag, np.random.default_rng(cfg.ft_seed),
                            transfer_scope=args.transfer_scope,
                            adapter_bottleneck=bottleneck,
                            adapter_drop=cfg.dropout_mt)


def cmd_nmt_finetune(args):
    cfg = _cfg(args)
    train_src, train_tgt = _load_pairs(args, args.train_src, args.train_tgt)
    valid_src, valid_tgt = _load_pairs(args, args.valid_src, args.valid_tgt)
    train = textdata.ParallelCorpus(train_src, train_tgt, "train")
    valid = textdata.ParallelCorpus(valid_src, valid_tgt, "valid")
    model = build_model(cfg, args, args.src_vocab or cfg.ec_vocab,
                        args.tgt_vocab or cfg.ec_vocab)
    for seqs, what in ((train.src, "train source"), (valid.src, "valid source")):
        _check_ids(seqs, model.src_vocab, what)
    for seqs, what in ((train.tgt, "train target"), (valid.tgt, "valid target")):
        _check_ids(seqs, model.tgt_vocab, what)
    reg_kind = args.reg if args.reg is not None else cfg.reg
    reg = RegularizerConfig(reg_kind, alpha=cfg.alpha, lam=cfg.lam)
    if reg.kind != "OFF" and args.no_transfer:
        raise ValueError("nmt-finetune: regularizer needs transferred weights; use --reg off")
    rng = np.random.default_rng(cfg.ft_seed)
    epochs = cfg.ft_epochs if args.epochs is None else args.epochs
    history = seq2seq.finetune(
        model, train, valid, rng, epochs=epochs, batch_size=cfg.batch,
        lr=cfg.lr, drop=cfg.dropout_mt, reg=reg, max_len=cfg.max_len,
        log_path=args.log)
    best = max((h["valid_bleu"] for h in history), default=0.0)
    step = history[-1]["step"] if history else 0
    checkpoints.save_model(args.out, model, step=step, valid_bleu=best,
                           config_hash=config.config_hash(cfg), rng=rng)
    print(f"epochs={len(history)} steps={step} best_valid_bleu={best:.4f} -> {args.out}")
    return 0


# ---- decoding and scoring ----------------------------------------------


def cmd_translate(args):
    cfg = _cfg(args)
    model, _ = checkpoints.load_model(args.model)
    beam = cfg.beam if args.beam is None else args.beam
    if args.format == "ids":
        srcs = _read_id_lines(args.input)
        _check_ids(srcs, model.src_vocab, "translate input")
        hyps = seq2seq.translate_corpus(model, srcs, beam_width=beam,
                                        max_len=cfg.max_len)
        textdata.write_lines(args.output, [" ".join(map(str, h)) for h in hyps])
    else:
        if not args.bpe_src or not args.bpe_tgt:
            raise ValueError("text format needs --bpe-src and --bpe-tgt")
        src_model = textdata.BpeModel.load(args.bpe_src)
        tgt_model = textdata.BpeModel.load(args.bpe_tgt)
        src_vocab = textdata.Vocab.build(src_model)
        tgt_vocab = textdata.Vocab.build(tgt_model)
        srcs = [textdata.encode_line(src_model, src_vocab, ln)
                for ln in textdata.read_lines(args.input)]
        _check_ids(srcs, model.src_vocab, "translate input")
        hyps = seq2seq.translate_corpus(model, srcs, beam_width=beam,
                                        max_len=cfg.max_len)
        textdata.write_lines(args.output,
                             [textdata.decode_ids(tgt_vocab, h) for h in hyps])
    print(f"translated {len(srcs)} lines -> {args.output}")
    return 0


def cmd_score_bleu(args):
    hyp = [ln.split() for ln in textdata.read_lines(args.hyp)]
    ref = [ln.split() for ln in textdata.read_lines(args.ref)]
    report = metrics.bleu4(hyp, ref)
    print(report.to_json())
    return 0


# ---- sweeps ------------------------------------------------------------


def _pretrain_stream(cfg, seed, feats):
    """One agent trained on the shared features; returns its eval records."""
    rng = np.random.default_rng(seed)
    agent = game.Agent(cfg.ec_vocab, cfg.embed_dim, cfg.hidden_dim,
                       feats[0].dim, cfg.l_max, rng)
    records = game.train_agent(
        agent, feats[0], feats[1], steps=cfg.ec_steps, k_train=cfg.k_train,
        k_eval=cfg.k_eval, rng=rng, batch=cfg.batch, lr=cfg.lr,
        drop=cfg.dropout_ec, eval_every=cfg.eval_every,
        eval_rounds=cfg.eval_rounds, temperature=cfg.temperature)
    return agent, records


def _rebuilt_agent(agent, snapshot):
    clone = game.Agent(agent.vocab_size, agent.embed_dim, agent.hidden_dim,
                       agent.feat_dim, agent.l_max, np.random.default_rng(0))
    clone.params().load_snapshot(snapshot)
    return clone


def _finetune_cell(cfg, src_agent, tgt_agent, corpora, reg_kind="REG_A"):
    """Assemble, fine-tune, and score one sweep cell; returns test BLEU."""
    train, valid, test = corpora
    model = seq2seq.assemble(src_agent, tgt_agent,
                             np.random.default_rng(cfg.ft_seed),
                             adapter_bottleneck=cfg.adapter_dim,
                             adapter_drop=cfg.dropout_mt)
    reg = RegularizerConfig(reg_kind, alpha=cfg.alpha, lam=cfg.lam)
    seq2seq.finetune(model, train, valid, np.random.default_rng(cfg.ft_seed),
                     epochs=cfg.ft_epochs, batch_size=cfg.batch, lr=cfg.lr,
                     drop=cfg.dropout_mt, reg=reg, max_len=cfg.max_len)
    hyps = seq2seq.translate_corpus(model, test.src, beam_width=cfg.beam,
                                    max_len=cfg.max_len)
    return seq2seq.corpus_bleu_ids(hyps, test.tgt)


def _cell_path(workdir, cfg, tag):
    return os.path.join(workdir, f"cell-{config.config_hash(cfg, tag)}.json")


def _parse_floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ValueError(f"expected comma-separated numbers, got {text!r}")


ACCURACY_BAND = 0.2  # how far a snapshot may sit from its requested accuracy


def cmd_sweep_accuracy(args):
    cfg = _cfg(args)
    src_targets = _parse_floats(args.targets_src)
    tgt_targets = _parse_floats(args.targets_tgt)
    os.makedirs(args.workdir, exist_ok=True)
    corpora = textdata.synthetic_task(args.train_n, args.valid_n, args.test_n,
                                      np.random.default_rng(cfg.data_seed),
                                      vocab=cfg.ec_vocab)
    feats = game.make_feature_splits(cfg.n_train_feats, cfg.n_valid_feats,
                                     cfg.feat_dim, cfg.feat_clusters,
                                     cfg.feat_sigma,
                                     np.random.default_rng(cfg.data_seed))
    src_ref, src_records = _pretrain_stream(cfg, cfg.ec_seed, feats)
    tgt_ref, tgt_records = _pretrain_stream(cfg, cfg.ec_seed + 1, feats)

    def run_cell(st, tt):
        tag = f"sweep-accuracy:{st}:{tt}:{args.train_n}"
        path = _cell_path(args.workdir, cfg, tag)
        if os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                return json.load(fh)
        src_rec = game.checkpoint_at_accuracy(src_records, st)
        tgt_rec = game.checkpoint_at_accuracy(tgt_records, tt)
        if (abs(src_rec.accuracy - st) > ACCURACY_BAND
                or abs(tgt_rec.accuracy - tt) > ACCURACY_BAND):
            cell = {"bleu": None, "src_accuracy": src_rec.accuracy,
                    "tgt_accuracy": tgt_rec.accuracy}
        else:
            bleu = _finetune_cell(cfg,
                                  _rebuilt_agent(src_ref, src_rec.snapshot),
                                  _rebuilt_agent(tgt_ref, tgt_rec.snapshot),
                                  corpora)
            cell = {"bleu": bleu, "src_accuracy": src_rec.accuracy,
                    "tgt_accuracy": tgt_rec.accuracy}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(cell, fh)
        return cell

    jobs = [(st, tt) for st in src_targets for tt in tgt_targets]
    with concurrent.futures.ThreadPoolExecutor(max_workers=args.workers) as pool:
        cells = dict(zip(jobs, pool.map(lambda j: run_cell(*j), jobs)))

    lines = ["src\\tgt," + ",".join(str(t) for t in tgt_targets)]
    for st in src_targets:
        row = [str(st)]
        for tt in tgt_targets:
            b = cells[(st, tt)]["bleu"]
            row.append("NA" if b is None else f"{b:.4f}")
        lines.append(",".join(row))
    textdata.write_lines(args.out, lines)
    print(f"grid {len(src_targets)}x{len(tgt_targets)} -> {args.out}")
    return 0


def cmd_sweep_maxlen(args):
    cfg = _cfg(args)
    l_values = [int(x) for x in _parse_floats(args.l_values)]
    os.makedirs(args.workdir, exist_ok=True)
    corpora = textdata.synthetic_task(args.train_n, args.valid_n, args.test_n,
                                      np.random.default_rng(cfg.data_seed),
                                      vocab=cfg.ec_vocab)

    def run_row(l_max):
        tag = f"sweep-maxlen:{l_max}:{args.accuracy_target}:{args.train_n}"
        path = _cell_path(args.workdir, cfg, tag)
        if os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                return json.load(fh)
        # one independent pretraining pair per message-length budget
        row_cfg = dataclasses.replace(cfg, l_max=l_max)
        feats = game.make_feature_splits(cfg.n_train_feats, cfg.n_valid_feats,
                                         cfg.feat_dim, cfg.feat_clusters,
                                         cfg.feat_sigma,
                                         np.random.default_rng(cfg.data_seed))
        src_ref, src_recs = _pretrain_stream(row_cfg, cfg.ec_seed, feats)
        tgt_ref, tgt_recs = _pretrain_stream(row_cfg, cfg.ec_seed + 1, feats)
        src_rec = game.checkpoint_at_accuracy(src_recs, args.accuracy_target)
        tgt_rec = game.checkpoint_at_accuracy(tgt_recs, args.accuracy_target)
        acc = 0.5 * (src_rec.accuracy + tgt_rec.accuracy)
        flagged = (abs(src_rec.accuracy - args.accuracy_target) > ACCURACY_BAND
                   or abs(tgt_rec.accuracy - args.accuracy_target) > ACCURACY_BAND)
        bleu = _finetune_cell(row_cfg,
                              _rebuilt_agent(src_ref, src_rec.snapshot),
                              _rebuilt_agent(tgt_ref, tgt_rec.snapshot),
                              corpora)
        row = {"l_max": l_max, "ec_accuracy": acc, "bleu": bleu,
               "flag": "off-target" if flagged else ""}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(row, fh)
        return row

    with concurrent.futures.ThreadPoolExecutor(max_workers=args.workers) as pool:
        rows = list(pool.map(run_row, l_values))
    lines = ["l_max,ec_accuracy,bleu,flag"]
    for r in rows:
        lines.append(f"{r['l_max']},{r['ec_accuracy']:.4f},{r['bleu']:.4f},{r['flag']}")
    textdata.write_lines(args.out, lines)
    print(f"rows={len(rows)} -> {args.out}")
    return 0


# ---- wiring ------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="emergentmt")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("features-synth", help="generate synthetic image features")
    _add_common(p)
    p.add_argument("--out-train", required=True)
    p.add_argument("--out-valid", required=True)
    p.set_defaults(func=cmd_features_synth)

    p = sub.add_parser("bpe-learn", help="learn BPE merges from raw text")
    p.add_argument("corpus", nargs="+")
    p.add_argument("--merges", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bpe_learn)

    p = sub.add_parser("bpe-apply", help="segment raw text with a BPE model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_bpe_apply)

    p = sub.add_parser("ec-pretrain", help="train one referential-game agent")
    _add_common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--valid-features", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(func=cmd_ec_pretrain)

    p = sub.add_parser("nmt-finetune", help="fine-tune a translation model")
    _add_common(p)
    p.add_argument("--train-src", required=True)
    p.add_argument("--train-tgt", required=True)
    p.add_argument("--valid-src", required=True)
    p.add_argument("--valid-tgt", required=True)
    p.add_argument("--format", choices=("ids", "text"), default="ids")
    p.add_argument("--bpe-src")
    p.add_argument("--bpe-tgt")
    p.add_argument("--src-agent")
    p.add_argument("--tgt-agent")
    p.add_argument("--no-transfer", action="store_true")
    p.add_argument("--no-adapter", action="store_true")
    p.add_argument("--transfer-scope", choices=seq2seq.TRANSFER_SCOPES,
                   default="all_matching")
    p.add_argument("--reg", choices=("off", "na", "reg-a", "reg-b"), default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--src-vocab", type=int, default=None)
    p.add_argument("--tgt-vocab", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None)
    p.set_defaults(func=cmd_nmt_finetune)

    p = sub.add_parser("translate", help="decode a source file with beam search")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--format", choices=("ids", "text"), default="ids")
    p.add_argument("--bpe-src")
    p.add_argument("--bpe-tgt")
    p.add_argument("--beam", type=int, default=None)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("score-bleu", help="corpus BLEU-4 of hypothesis vs reference")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.set_defaults(func=cmd_score_bleu)

    p = sub.add_parser("sweep-accuracy",
                       help="BLEU grid over agent accuracy checkpoints")
    _add_common(p)
    p.add_argument("--targets-src", required=True)
    p.add_argument("--targets-tgt", required=True)
    p.add_argument("--train-n", type=int, default=500)
    p.add_argument("--valid-n", type=int, default=100)
    p.add_argument("--test-n", type=int, default=500)
    p.add_argument("--workdir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep_accuracy)

    p = sub.add_parser("sweep-maxlen", help="BLEU as the message budget varies")
    _add_common(p)
    p.add_argument("--l-values", required=True)
    p.add_argument("--accuracy-target", type=float, required=True)
    p.add_argument("--train-n", type=int, default=500)
    p.add_argument("--valid-n", type=int, default=100)
    p.add_argument("--test-n", type=int, default=500)
    p.add_argument("--workdir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep_maxlen)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage problems; those are validation errors here
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ArithmeticError, MemoryError) as exc:
        print(f"runtime-error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
