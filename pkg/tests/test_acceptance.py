"""Acceptance scorecard: one test per shipping criterion.

Each test prints a single `criterion NN [PASS|FAIL]` line (visible with
pytest -s or in the failure report) and asserts the same condition, so a
log scrape of this file gives the whole scorecard. The heavy criteria
(agent pretraining, the transfer comparison, the sweeps) share one
pretraining fixture and together dominate the suite's runtime; expect
roughly an hour on one core.
"""

import itertools
import json
import math
import time
from collections import Counter

import numpy as np
import pytest

from emergentmt import checkpoints, cli, game, metrics, nn, seq2seq, textdata
from emergentmt import tensor as T
from emergentmt.seq2seq import RegularizerConfig
from emergentmt.tensor import Tensor
from emergentmt.textdata import BOS, EOS, PAD


def _verdict(num, ok, text):
    line = f"criterion {num:02d} [{'PASS' if ok else 'FAIL'}] {text}"
    print(line)
    assert ok, line


# ---- criterion 1: finite-difference gradient checks ---------------------


_FD_POINTS = 20


def _t64(a):
    # check points and constants must be float64 or the 1e-6 probe drowns
    # in float32 quantization
    return Tensor(a, dtype=np.float64)


def _fd_block(make, seed_base, h=1e-6, tol=1e-4):
    """Run grad_check at _FD_POINTS random float64 points.

    relu layers can land a coordinate on the kink; those points are redrawn
    (the check targets gradient correctness where the loss is differentiable).
    """
    worst = 0.0
    for i in range(_FD_POINTS):
        rep = None
        for attempt in range(4):
            f, pts = make(np.random.default_rng(seed_base + 7919 * i + attempt))
            rep = T.grad_check(f, pts, h=h, tol=tol)
            if not rep.kinks:
                break
        if rep.kinks or rep.max_rel_err > tol:
            return False, rep.max_rel_err
        worst = max(worst, rep.max_rel_err)
    return True, worst


def _make_gru(rng):
    gru = nn.GruCell(3, 4, rng)
    pts = list(gru.params().values())
    for t in pts:
        t.data = rng.standard_normal(t.data.shape) * 0.6
    x = _t64(rng.standard_normal((2, 3)))
    h = _t64(rng.standard_normal((2, 4)))
    c = _t64(rng.standard_normal((2, 4)))

    def f(*_):
        return (gru.step(x, h) * c).sum()

    return f, [x, h] + pts


def _make_mlp(rng):
    act = "relu" if rng.random() < 0.5 else "tanh"
    mlp = nn.Mlp([3, 5, 2], rng, activation=act)
    pts = list(mlp.params().values())
    for t in pts:
        t.data = rng.standard_normal(t.data.shape) * 0.7
    x = _t64(rng.standard_normal((2, 3)))
    c = _t64(rng.standard_normal((2, 2)))

    def f(*_):
        return (mlp.forward(x) * c).sum()

    return f, [x] + pts


def _make_embedding(rng):
    emb = nn.Embedding(6, 3, rng)
    emb.table.data = rng.standard_normal((6, 3)) * 0.8
    ids = rng.integers(0, 6, size=5)
    dist = _t64(rng.random((2, 6)))
    c1 = _t64(rng.standard_normal((5, 3)))
    c2 = _t64(rng.standard_normal((2, 3)))

    def f(*_):
        hard = T.tanh(emb.lookup(ids))
        soft = T.tanh(emb.soft_lookup(dist))
        return (hard * c1).sum() + (soft * c2).sum()

    return f, [emb.table, dist]


def _make_adapter(rng):
    ad = seq2seq.Adapter(4, 3, rng, drop=0.0)
    pts = list(ad.params().values())
    for t in pts:
        t.data = rng.standard_normal(t.data.shape) * 0.5
    x = _t64(rng.standard_normal((2, 4)))
    c = _t64(rng.standard_normal((2, 4)))

    def f(*_):
        return (ad.forward(x) * c).sum()

    return f, [x] + pts


def _make_game_loss(rng):
    # relaxed round: softmax tokens in place of the hard straight-through
    # samples, so the whole speaker-listener-scoring chain is differentiable.
    # The hard sampler's gradient equals the soft one's by construction
    # (forward substitution only), so this covers the training path.
    agent = game.Agent(6, 3, 4, 5, 3, rng)
    pts = [t for _, t in agent.params().items()]
    for t in pts:
        t.data = rng.standard_normal(t.data.shape) * 0.5
    feats = _t64(rng.standard_normal((2, 5)))
    cand = rng.standard_normal((2, 3, 5))
    mask0 = np.zeros((1, 6))
    mask0[0, EOS] = game.EOS_MASK

    def f(*_):
        h = agent.mlp1.forward(feats)
        x = agent.speaker_embed.lookup(np.full(2, BOS, dtype=np.int64))
        softs = []
        for t_ in range(3):
            h = agent.speaker_gru.step(x, h)
            logits = agent.speaker_out.forward(h)
            if t_ == 0:
                logits = logits + Tensor(mask0)
            p = T.softmax(logits)
            softs.append(p)
            x = agent.speaker_embed.soft_lookup(p)
        hl = Tensor(np.zeros((2, 4)))
        for p in softs:
            hl = agent.listener_gru.step(agent.listener_embed.soft_lookup(p), hl)
        return game.game_loss(game.candidate_scores(agent, hl, cand))

    return f, pts + [feats]


def _make_sequence_loss(rng):
    model = seq2seq.fresh(7, 7, 3, 4, rng, adapter_bottleneck=3, adapter_drop=0.0)
    pts = [t for _, t in model.params().items()]
    for t in pts:
        t.data = rng.standard_normal(t.data.shape) * 0.5
    batch = textdata.Batch(
        np.array([[4, 5, 0], [5, 6, 4]], dtype=np.int64),
        np.array([[6, 4], [5, 5]], dtype=np.int64),
        np.array([2, 3], dtype=np.int64),
        np.array([2, 2], dtype=np.int64),
    )

    def f(*_):
        return seq2seq.sequence_loss(model, batch)

    return f, pts


def _make_penalty(rng):
    a1 = game.Agent(6, 3, 4, 5, 2, rng)
    a2 = game.Agent(6, 3, 4, 5, 2, rng)
    model = seq2seq.assemble(a1, a2, rng, adapter_bottleneck=3, adapter_drop=0.0)
    store = model.params()
    pts = [store[n] for n in model.w_star]
    for t in pts:
        t.data = t.data.astype(np.float64) + rng.standard_normal(t.data.shape) * 0.3
    kind = ("NA", "REG_A", "REG_B")[int(rng.integers(0, 3))]
    cfg = RegularizerConfig(kind, alpha=2.0, lam=0.99)
    k = int(rng.integers(1, 50))

    def f(*_):
        return seq2seq.reg_penalty(model, cfg, k)

    return f, pts


def test_criterion_01_gradient_checks():
    t0 = time.monotonic()
    blocks = [
        ("gru", _make_gru, 100),
        ("mlp", _make_mlp, 200),
        ("embedding", _make_embedding, 300),
        ("adapter", _make_adapter, 400),
        ("game-loss", _make_game_loss, 500),
        ("sequence-loss", _make_sequence_loss, 600),
        ("penalty", _make_penalty, 700),
    ]
    failed = []
    worst = 0.0
    for name, make, seed in blocks:
        ok, err = _fd_block(make, seed)
        worst = max(worst, err)
        if not ok:
            failed.append((name, err))
    elapsed = time.monotonic() - t0
    ok = not failed and elapsed < 120.0
    _verdict(1, ok,
             f"finite-difference checks, {_FD_POINTS} points per block, "
             f"worst rel err {worst:.2e}, {elapsed:.1f}s"
             + (f", failed: {failed}" if failed else ""))


# ---- criterion 2: uniform-score loss identity ---------------------------


def test_criterion_02_uniform_loss():
    bad = []
    for k in (1, 3, 31, 127):
        scores = Tensor(np.full((1, k + 1), 3.7))
        loss = float(game.game_loss(scores).data)
        if abs(loss - math.log(k + 1)) > 1e-6:
            bad.append((k, loss))
    _verdict(2, not bad,
             "uniform candidate scores give loss ln(K+1) for K in {1,3,31,127}"
             + (f", off: {bad}" if bad else ""))


# ---- criterion 3: game convergence (shared with criterion 9) ------------


@pytest.fixture(scope="module")
def pretrained_agents():
    t0 = time.monotonic()
    out = []
    for seed in (101, 102, 103):
        rng = np.random.default_rng(seed)
        train, valid = game.make_feature_splits(2000, 200, 256, 32, 0.5, rng)
        agent = game.Agent(64, 64, 128, 256, 10, rng)
        records = game.train_agent(
            agent, train, valid, steps=3000, k_train=31, k_eval=31,
            rng=rng, batch=128, eval_every=50, eval_rounds=500,
            stop_accuracy=0.95, keep_snapshots=False)
        out.append((agent, records))
    return out, time.monotonic() - t0


def test_criterion_03_game_convergence(pretrained_agents):
    results, elapsed = pretrained_agents
    finals = [(recs[-1].step, recs[-1].accuracy) for _, recs in results]
    ok = all(acc >= 0.95 and step <= 3000 for step, acc in finals)
    ok = ok and elapsed < 900.0
    _verdict(3, ok,
             f"2000x256 features, K=31, L_max=10, vocab 64: finals {finals}, "
             f"{elapsed:.0f}s for 3 seeds")


# ---- criterion 4: hard sampling matches the softmax distribution --------


def test_criterion_04_sampler_distribution():
    rng = np.random.default_rng(4)
    row = rng.standard_normal(8) * 1.5
    n = 100_000
    logits = Tensor(np.tile(row.astype(np.float32), (n, 1)))
    sample = nn.gumbel_softmax(logits, temperature=1.0, hard=True,
                               rng=np.random.default_rng(44))
    counts = np.bincount(np.argmax(sample.data, axis=-1), minlength=8)
    p_emp = counts / n
    z = row - row.max()
    p_true = np.exp(z) / np.exp(z).sum()
    tv = 0.5 * np.abs(p_emp - p_true).sum()
    _verdict(4, tv <= 0.02,
             f"10^5 hard samples at temperature 1: total variation {tv:.4f} <= 0.02")


# ---- criterion 5: annealing schedules and the adapter's exemption -------


def test_criterion_05_regularizer_schedules():
    probs = []
    a = RegularizerConfig("REG_A", alpha=5.0, lam=0.998)
    target = 5.0 * math.exp(1000 * math.log(0.998))
    if abs(a.coefficient(1000) - target) > 1e-6 * target:
        probs.append(f"exp-decay k=1000: {a.coefficient(1000)!r}")
    b = RegularizerConfig("REG_B", alpha=5.0)
    if b.coefficient(10) != 0.5:
        probs.append(f"inverse-k k=10: {b.coefficient(10)!r}")
    for cfg, label in ((a, "exp-decay"), (b, "inverse-k")):
        seq = [cfg.coefficient(k) for k in range(1, 2001)]
        if not all(x > y for x, y in zip(seq, seq[1:])):
            probs.append(f"{label} not strictly decreasing")

    rng = np.random.default_rng(5)
    a1 = game.Agent(8, 4, 6, 5, 3, rng)
    a2 = game.Agent(8, 4, 6, 5, 3, rng)
    model = seq2seq.assemble(a1, a2, rng, adapter_bottleneck=4)
    # make the penalty nonzero so there is a real gradient to exempt from
    for name in model.w_star:
        model.params()[name].data += 0.05
    pen = seq2seq.reg_penalty(model, a, 7)
    model.params().zero_grad()
    T.backward(pen)
    for name, t in model.params().items():
        if name.startswith("adapter."):
            if not (t.grad is None or not t.grad.any()):
                probs.append(f"adapter gradient leaked into {name}")
        elif name in model.w_star and t.grad is None:
            probs.append(f"no gradient on transferred {name}")
    _verdict(5, not probs,
             "schedule values, strict decrease, adapter exactly outside the penalty"
             + (f"; problems: {probs}" if probs else ""))


# ---- criterion 6: adapter is the identity at initialization -------------


def _teacher_forced_logit_bytes(model, batch):
    src, src_len, tgt_in, _ = seq2seq.prep_batch(batch)
    out = []
    with T.no_grad():
        enc = seq2seq._encode(model, src, src_len)
        h = seq2seq._decoder_start(model, enc)
        for t in range(tgt_in.shape[1]):
            h = model.decoder_gru.step(model.decoder_embed.lookup(tgt_in[:, t]), h)
            out.append(model.decoder_out.forward(h).data.tobytes())
    return b"".join(out)


def test_criterion_06_adapter_identity_at_init():
    rng = np.random.default_rng(6)
    a1 = game.Agent(16, 8, 12, 10, 4, rng)
    a2 = game.Agent(16, 8, 12, 10, 4, rng)
    model = seq2seq.assemble(a1, a2, np.random.default_rng(60),
                             adapter_bottleneck=6, adapter_drop=0.0)
    ids = np.random.default_rng(61)
    batch = textdata.Batch(
        ids.integers(4, 16, size=(3, 5)).astype(np.int64),
        ids.integers(4, 16, size=(3, 4)).astype(np.int64),
        np.array([5, 3, 4], dtype=np.int64),
        np.array([4, 2, 4], dtype=np.int64),
    )
    with_adapter = _teacher_forced_logit_bytes(model, batch)
    saved = model.adapter
    model.adapter = None
    without = _teacher_forced_logit_bytes(model, batch)
    model.adapter = saved
    _verdict(6, with_adapter == without,
             "pre-fine-tuning logits with and without the adapter are bitwise equal")


# ---- criterion 7: beam search against exhaustive enumeration ------------


def _forced_norm_score(model, src_ids, tgt_ids):
    """Length-normalized log-probability of emitting tgt_ids exactly."""
    src = np.asarray(list(src_ids) + [EOS], dtype=np.int64).reshape(1, -1)
    with T.no_grad():
        enc = seq2seq._encode(model, src, np.array([src.shape[1]]))
        h = seq2seq._decoder_start(model, enc)
        total = 0.0
        prev = BOS
        for tok in tgt_ids:
            h = model.decoder_gru.step(
                model.decoder_embed.lookup(np.array([prev], dtype=np.int64)), h)
            logp = T.log_softmax(model.decoder_out.forward(h)).data
            total += float(logp[0, tok])
            prev = tok
    return total / len(tgt_ids)


def _exhaustive_argmax(model, src_ids, max_len):
    non_eos = [t for t in range(4) if t != EOS]
    cands = [body + (EOS,)
             for k in range(max_len)
             for body in itertools.product(non_eos, repeat=k)]
    cands.extend(itertools.product(non_eos, repeat=max_len))
    scored = [(c, _forced_norm_score(model, src_ids, c)) for c in cands]
    return max(scored, key=lambda cs: cs[1])


def test_criterion_07_beam_optimality():
    max_len = 3
    misses = []
    for seed in range(50):
        rng = np.random.default_rng(seed)
        model = seq2seq.fresh(4, 4, 3, 5, rng)
        model.decoder_out.params()["w0"].data *= 5.0
        src = list(rng.integers(0, 4, size=int(rng.integers(1, 4))))
        got = seq2seq.beam_search(model, src, beam_width=64, max_len=max_len)
        # an open hypothesis survives only at the horizon, so shorter
        # results must have closed on <eos> (stripped from the return)
        full = tuple(got) if len(got) == max_len else tuple(got) + (EOS,)
        best, best_score = _exhaustive_argmax(model, src, max_len)
        if full != best and abs(_forced_norm_score(model, src, full) - best_score) > 1e-12:
            misses.append(seed)
    _verdict(7, not misses,
             f"width-64 beam equals exhaustive argmax on {50 - len(misses)}/50 "
             f"random 4-token-vocab models"
             + (f", missed seeds {misses}" if misses else ""))


# ---- criterion 8: corpus BLEU against an independent scorer -------------


def _reference_bleu(hyps, refs):
    """Second opinion written against the textbook definition: corpus-level
    clipped n-gram precisions (multiset intersection), geometric mean,
    brevity penalty, no smoothing."""
    log_avg = 0.0
    for n in range(1, 5):
        num = den = 0
        for h_line, r_line in zip(hyps, refs):
            h_toks, r_toks = h_line.split(), r_line.split()
            h_g = Counter(zip(*[h_toks[j:] for j in range(n)]))
            r_g = Counter(zip(*[r_toks[j:] for j in range(n)]))
            num += sum((h_g & r_g).values())
            den += sum(h_g.values())
        if den == 0 or num == 0:
            return 0.0
        log_avg += math.log(num / den) / 4.0
    h_total = sum(len(h.split()) for h in hyps)
    r_total = sum(len(r.split()) for r in refs)
    if h_total == 0:
        return 0.0
    bp = 1.0 if h_total >= r_total else math.exp(1.0 - r_total / h_total)
    return 100.0 * bp * math.exp(log_avg)


def _bleu_cases():
    words = list("abcdefgh")
    cases = []
    for i in range(20):
        rng = np.random.default_rng(800 + i)
        hyp, ref = [], []
        for _ in range(int(rng.integers(1, 5))):
            r = [words[j] for j in rng.integers(0, len(words), int(rng.integers(4, 12)))]
            mode = rng.random()
            if mode < 0.25:
                h = list(r)
            elif mode < 0.5:
                h = r[: int(rng.integers(3, len(r) + 1))]
            elif mode < 0.75:
                h = list(r)
                for _ in range(int(rng.integers(1, 3))):
                    h[int(rng.integers(0, len(h)))] = words[int(rng.integers(0, len(words)))]
            else:
                h = [words[j] for j in rng.integers(0, len(words), int(rng.integers(4, 12)))]
            hyp.append(" ".join(h))
            ref.append(" ".join(r))
        cases.append((hyp, ref))
    return cases


def test_criterion_08_bleu_oracle():
    probs = []
    for i, (hyp, ref) in enumerate(_bleu_cases()):
        mine = metrics.bleu4(hyp, ref).bleu
        other = _reference_bleu(hyp, ref)
        if abs(mine - other) > 1e-4:
            probs.append(f"case {i}: {mine:.6f} vs {other:.6f}")
    if metrics.bleu4(["a b c d e"], ["a b c d e"]).bleu != 100.0:
        probs.append("identity corpus is not 100.0")
    if metrics.bleu4(["a b c x e f"], ["a b c d e f"]).bleu != 0.0:
        probs.append("zero-4-gram corpus is not 0.0")
    _verdict(8, not probs,
             "matches an independent scorer on 20 corpora to 4 decimals, "
             "identity 100.0, zero-4-gram 0.0"
             + (f"; problems: {probs}" if probs else ""))


# ---- criterion 9: transfer beats scratch, adapter earns its keep --------


def test_criterion_09_transfer_benefit(pretrained_agents):
    t0 = time.monotonic()
    results, _ = pretrained_agents
    src_agent = results[0][0]
    tgt_agent = results[1][0]
    train, valid, test = textdata.synthetic_task(
        500, 100, 500, np.random.default_rng(7), vocab=64, len_lo=4, len_hi=7)

    def run_arm(kind, ft_seed):
        rng = np.random.default_rng(ft_seed)
        if kind == "baseline":
            model = seq2seq.fresh(64, 64, 64, 128, rng)
            reg = RegularizerConfig("OFF")
        elif kind == "noadapter":
            model = seq2seq.assemble(src_agent, tgt_agent, rng)
            reg = RegularizerConfig("REG_A", alpha=5.0, lam=0.9995)
        else:
            model = seq2seq.assemble(src_agent, tgt_agent, rng,
                                     adapter_bottleneck=32, adapter_drop=0.2)
            reg = RegularizerConfig("REG_A", alpha=5.0, lam=0.9995)
        seq2seq.finetune(model, train, valid, rng, epochs=500, batch_size=32,
                         lr=3e-3, drop=0.1, reg=reg, max_len=12)
        hyps = seq2seq.translate_corpus(model, test.src, beam_width=12, max_len=12)
        return seq2seq.corpus_bleu_ids(hyps, test.tgt)

    means = {}
    for kind in ("baseline", "noadapter", "full"):
        means[kind] = float(np.mean([run_arm(kind, s) for s in (11, 12, 13)]))
    elapsed = time.monotonic() - t0
    ok = (means["full"] > means["baseline"]
          and means["full"] > means["noadapter"]
          and elapsed < 3600.0)
    _verdict(9, ok,
             f"mean test BLEU over 3 seeds: full {means['full']:.2f} > "
             f"baseline {means['baseline']:.2f} and > no-adapter "
             f"{means['noadapter']:.2f}, {elapsed:.0f}s")


# ---- criterion 10: sweep shapes ----------------------------------------


# lr above ~1e-3 destabilizes the game at batch 32 (rises then collapses),
# so both stages run at the shared default rate and cells take more epochs
_SWEEP_SETS = [
    "--set", "embed_dim=64", "--set", "hidden_dim=128", "--set", "ec_vocab=64",
    "--set", "adapter_dim=32", "--set", "feat_dim=256",
    "--set", "n_train_feats=2000", "--set", "n_valid_feats=200",
    "--set", "feat_clusters=32", "--set", "k_train=31", "--set", "k_eval=31",
    "--set", "l_max=10", "--set", "ec_steps=2500", "--set", "eval_every=50",
    "--set", "eval_rounds=300", "--set", "lr=1e-3", "--set", "dropout_mt=0.1",
    "--set", "batch=32", "--set", "ft_epochs=500", "--set", "alpha=5",
    "--set", "lam=0.998", "--set", "beam=12", "--set", "max_len=12",
]


def test_criterion_10_sweep_shapes(tmp_path):
    from scipy import stats

    t0 = time.monotonic()
    acc_dir = tmp_path / "acc"
    acc_csv = tmp_path / "acc.csv"
    rc = cli.main(["sweep-accuracy", "--targets-src", "0.3,0.6,0.9",
                   "--targets-tgt", "0.3,0.6,0.9",
                   "--train-n", "400", "--valid-n", "100", "--test-n", "200",
                   "--workdir", str(acc_dir), "--out", str(acc_csv)] + _SWEEP_SETS)
    assert rc == 0
    cells = []
    for p in sorted(acc_dir.glob("cell-*.json")):
        with open(p, encoding="utf-8") as fh:
            cells.append(json.load(fh))
    pairs = [(0.5 * (c["src_accuracy"] + c["tgt_accuracy"]), c["bleu"])
             for c in cells if c["bleu"] is not None]
    rho = float(stats.spearmanr([a for a, _ in pairs], [b for _, b in pairs]).statistic)

    ml_dir = tmp_path / "ml"
    ml_csv = tmp_path / "ml.csv"
    rc = cli.main(["sweep-maxlen", "--l-values", "5,10,15,20",
                   "--accuracy-target", "0.9",
                   "--train-n", "400", "--valid-n", "100", "--test-n", "200",
                   "--workdir", str(ml_dir), "--out", str(ml_csv)] + _SWEEP_SETS)
    assert rc == 0
    rows = {}
    for line in textdata.read_lines(str(ml_csv))[1:]:
        l_max, _, bleu, _ = line.split(",")
        rows[int(l_max)] = float(bleu)
    elapsed = time.monotonic() - t0
    shortest_worst = all(rows[5] < rows[l] for l in (10, 15, 20))
    ok = len(pairs) == 9 and rho > 0.0 and shortest_worst
    _verdict(10, ok,
             f"accuracy grid Spearman {rho:.3f} > 0 over {len(pairs)} cells; "
             f"message budget 5 scores lowest in {rows}; {elapsed:.0f}s")


# ---- criterion 11: bit-identical reruns ---------------------------------


_TINY_SETS = [
    "--set", "ec_vocab=16", "--set", "embed_dim=8", "--set", "hidden_dim=16",
    "--set", "feat_dim=8", "--set", "n_train_feats=48", "--set", "n_valid_feats=24",
    "--set", "feat_clusters=4", "--set", "k_train=7", "--set", "k_eval=7",
    "--set", "l_max=4", "--set", "eval_every=25", "--set", "eval_rounds=40",
    "--set", "batch=16", "--set", "adapter_dim=8", "--set", "beam=4",
    "--set", "max_len=8",
]


def _write_ids(path, seqs):
    textdata.write_lines(str(path), [" ".join(map(str, s)) for s in seqs])


def _tiny_pipeline(root):
    root.mkdir()
    feats = root / "train.ecfv"
    featsv = root / "valid.ecfv"
    assert cli.main(["features-synth", "--out-train", str(feats),
                     "--out-valid", str(featsv)] + _TINY_SETS) == 0
    agents = root / "agents"
    assert cli.main(["ec-pretrain", "--features", str(feats),
                     "--valid-features", str(featsv), "--out-dir", str(agents),
                     "--steps", "50"] + _TINY_SETS) == 0
    agent = agents / "agent-000050.eckp"

    train, valid, test = textdata.synthetic_task(
        60, 20, 20, np.random.default_rng(5), vocab=16, len_lo=3, len_hi=5)
    for name, corpus in (("train", train), ("valid", valid), ("test", test)):
        _write_ids(root / f"{name}.src", corpus.src)
        _write_ids(root / f"{name}.tgt", corpus.tgt)

    model = root / "model.eckp"
    assert cli.main(["nmt-finetune",
                     "--train-src", str(root / "train.src"),
                     "--train-tgt", str(root / "train.tgt"),
                     "--valid-src", str(root / "valid.src"),
                     "--valid-tgt", str(root / "valid.tgt"),
                     "--src-agent", str(agent), "--tgt-agent", str(agent),
                     "--reg", "reg-a", "--epochs", "3",
                     "--out", str(model)] + _TINY_SETS) == 0
    hyp = root / "test.hyp"
    assert cli.main(["translate", "--model", str(model),
                     "--input", str(root / "test.src"),
                     "--output", str(hyp)] + _TINY_SETS) == 0
    bleu = metrics.bleu4(textdata.read_lines(str(hyp)),
                         textdata.read_lines(str(root / "test.tgt"))).bleu
    return {
        "agent": agent.read_bytes(),
        "agent_meta": (agents / "agent-000050.eckp.json").read_bytes(),
        "model": model.read_bytes(),
        "model_meta": (root / "model.eckp.json").read_bytes(),
        "hyp": hyp.read_bytes(),
        "bleu": bleu,
    }


def test_criterion_11_reproducibility(tmp_path):
    one = _tiny_pipeline(tmp_path / "one")
    two = _tiny_pipeline(tmp_path / "two")
    diffs = [k for k in ("agent", "agent_meta", "model", "model_meta", "hyp")
             if one[k] != two[k]]
    same_bleu = round(one["bleu"], 4) == round(two["bleu"], 4)
    _verdict(11, not diffs and same_bleu,
             f"two identical runs: artifacts byte-equal, BLEU {one['bleu']:.4f} both times"
             + (f"; differing: {diffs}" if diffs else ""))
