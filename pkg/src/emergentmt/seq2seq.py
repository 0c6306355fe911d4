"""GRU encoder-decoder built from game agents, or from scratch as a baseline.

The source agent's listener becomes the encoder and the target agent's
speaker the decoder; an optional bottleneck adapter sits between the
encoder's final state and the decoder's initial state. Fine-tuning can pull
the transferred weights back toward their pretrained snapshot (w_star) with
an annealed squared-distance penalty.
"""

import json

import numpy as np

from . import metrics, nn
from . import tensor as T
from .tensor import ParamStore, Tensor, backward
from .textdata import BOS, EOS, PAD

TRANSFER_SCOPES = ("rnn_only", "all_matching")
REG_KINDS = ("OFF", "NA", "REG_A", "REG_B")


class Adapter:
    """Residual bottleneck: x + up(relu(down(dropout(x)))).

    The up-projection starts at zero, so a fresh adapter is exactly the
    identity map and the assembled model behaves as if it were absent.
    """

    def __init__(self, hidden_dim, bottleneck, rng, drop=0.2):
        self.hidden_dim = hidden_dim
        self.bottleneck = bottleneck
        self.drop = drop
        self.w_down = nn.uniform_param(rng, (hidden_dim, bottleneck))
        self.b_down = nn.zero_param((bottleneck,))
        self.w_up = nn.zero_param((bottleneck, hidden_dim))
        self.b_up = nn.zero_param((hidden_dim,))

    def forward(self, x, rng=None, training=False):
        inner = T.dropout(x, self.drop, rng) if training and self.drop > 0 else x
        mid = T.relu(inner @ self.w_down + self.b_down)
        return x + (mid @ self.w_up + self.b_up)

    def params(self):
        return {"w_down": self.w_down, "b_down": self.b_down,
                "w_up": self.w_up, "b_up": self.b_up}


class RegularizerConfig:
    def __init__(self, kind="OFF", alpha=5.0, lam=0.998):
        kind = kind.upper().replace("-", "_")
        if kind not in REG_KINDS:
            raise ValueError(f"regularizer kind must be one of {REG_KINDS}, got {kind!r}")
        if not 0.0 <= lam < 1.0:
            raise ValueError(f"regularizer lambda must be in [0, 1), got {lam}")
        if alpha <= 0:
            raise ValueError(f"regularizer alpha must be positive, got {alpha}")
        self.kind = kind
        self.alpha = alpha
        self.lam = lam

    def coefficient(self, k):
        if self.kind == "OFF":
            return 0.0
        if self.kind == "NA":
            return self.alpha
        if self.kind == "REG_A":
            return self.alpha * self.lam**k
        if k < 1:
            raise ValueError(f"REG_B needs step k >= 1, got {k}")
        return self.alpha / k


class TranslationModel:
    """Encoder-decoder over BPE ids; see `fresh` and `assemble`."""

    def __init__(self, encoder_embed, encoder_gru, decoder_embed, decoder_gru,
                 decoder_out, adapter=None):
        if encoder_gru.hidden_dim != decoder_gru.hidden_dim:
            raise T.ShapeError(
                f"encoder hidden {encoder_gru.hidden_dim} != decoder hidden {decoder_gru.hidden_dim}"
            )
        self.encoder_embed = encoder_embed
        self.encoder_gru = encoder_gru
        self.decoder_embed = decoder_embed
        self.decoder_gru = decoder_gru
        self.decoder_out = decoder_out
        self.adapter = adapter
        self.w_star = None
        store = ParamStore()
        store.merge("encoder.embed", encoder_embed.params())
        store.merge("encoder.gru", encoder_gru.params())
        store.merge("decoder.embed", decoder_embed.params())
        store.merge("decoder.gru", decoder_gru.params())
        store.merge("decoder.out", decoder_out.params())
        if adapter is not None:
            store.merge("adapter", adapter.params())
        self._store = store

    @property
    def src_vocab(self):
        return self.encoder_embed.vocab_size

    @property
    def tgt_vocab(self):
        return self.decoder_embed.vocab_size

    @property
    def hidden_dim(self):
        return self.encoder_gru.hidden_dim

    def params(self):
        return self._store


def fresh(src_vocab, tgt_vocab, embed_dim, hidden_dim, rng,
          adapter_bottleneck=None, adapter_drop=0.2):
    """Randomly initialized model (the no-transfer baseline).

    Plain small-scale init throughout, so an untrained model predicts
    near-uniformly; any learned recurrent dynamics must come from transfer.
    """
    enc_embed = nn.Embedding(src_vocab, embed_dim, rng)
    enc_gru = nn.GruCell(embed_dim, hidden_dim, rng)
    dec_embed = nn.Embedding(tgt_vocab, embed_dim, rng)
    dec_gru = nn.GruCell(embed_dim, hidden_dim, rng)
    dec_out = nn.Mlp([hidden_dim, tgt_vocab], rng)
    adapter = None
    if adapter_bottleneck:
        adapter = Adapter(hidden_dim, adapter_bottleneck, rng, drop=adapter_drop)
    return TranslationModel(enc_embed, enc_gru, dec_embed, dec_gru, dec_out, adapter)


_SCOPE_MAP = {
    "rnn_only": [
        ("encoder.gru", "listener.gru"),
        ("decoder.gru", "speaker.gru"),
    ],
    "all_matching": [
        ("encoder.embed", "listener.embed"),
        ("encoder.gru", "listener.gru"),
        ("decoder.embed", "speaker.embed"),
        ("decoder.gru", "speaker.gru"),
        ("decoder.out", "speaker.out"),
    ],
}


def assemble(src_agent, tgt_agent, rng, *, transfer_scope="all_matching",
             adapter_bottleneck=None, adapter_drop=0.2):
    """Source agent's listener + target agent's speaker, with w_star snapshot.

    The image projection is dropped (text replaces images); non-transferred
    parts keep their fresh initialization. Parameters are copied, so later
    fine-tuning never mutates the agents.
    """
    if transfer_scope not in TRANSFER_SCOPES:
        raise ValueError(f"transfer_scope must be one of {TRANSFER_SCOPES}, got {transfer_scope!r}")
    if src_agent.hidden_dim != tgt_agent.hidden_dim:
        raise T.ShapeError(
            f"agents disagree on hidden dim: {src_agent.hidden_dim} vs {tgt_agent.hidden_dim}"
        )
    if src_agent.embed_dim != tgt_agent.embed_dim:
        raise T.ShapeError(
            f"agents disagree on embed dim: {src_agent.embed_dim} vs {tgt_agent.embed_dim}"
        )
    model = fresh(src_agent.vocab_size, tgt_agent.vocab_size,
                  tgt_agent.embed_dim, tgt_agent.hidden_dim, rng,
                  adapter_bottleneck=adapter_bottleneck, adapter_drop=adapter_drop)
    stores = {"listener": src_agent.params(), "speaker": tgt_agent.params()}
    w_star = {}
    for model_prefix, agent_prefix in _SCOPE_MAP[transfer_scope]:
        agent_store = stores[agent_prefix.split(".")[0]]
        for name, live in model.params().items():
            if not name.startswith(model_prefix + "."):
                continue
            suffix = name[len(model_prefix):]
            src_tensor = agent_store[agent_prefix + suffix]
            if src_tensor.data.shape != live.data.shape:
                raise T.ShapeError(
                    f"transfer {name}: shape {src_tensor.data.shape} != {live.data.shape}"
                )
            live.data = src_tensor.data.copy()
            w_star[name] = src_tensor.data.copy()
    model.w_star = w_star
    return model


def _encode(model, src, src_len, rng=None, training=False, drop=0.0):
    b, steps = src.shape
    h = Tensor(np.zeros((b, model.hidden_dim), dtype=np.float32))
    final = Tensor(np.zeros((b, model.hidden_dim), dtype=np.float32))
    for t in range(steps):
        x = model.encoder_embed.lookup(src[:, t])
        if training and drop > 0.0:
            x = T.dropout(x, drop, rng)
        h = model.encoder_gru.step(x, h)
        sel = (src_len == t + 1).astype(np.float32).reshape(b, 1)
        if sel.any():
            final = final + h * Tensor(sel)
    return final


def _decoder_start(model, enc_final, rng=None, training=False):
    if model.adapter is None:
        return enc_final
    return model.adapter.forward(enc_final, rng=rng, training=training)


def prep_batch(batch):
    """Frame raw id blocks: <eos> closes the source and the target reference,
    <bos> opens the decoder input. Returns (src, src_len, tgt_in, tgt_out)."""
    b, s = batch.src.shape
    src = np.full((b, s + 1), PAD, dtype=np.int64)
    src[:, :s] = batch.src
    src[np.arange(b), batch.src_len] = EOS
    t = batch.tgt.shape[1]
    tgt_in = np.full((b, t + 1), PAD, dtype=np.int64)
    tgt_in[:, 0] = BOS
    tgt_in[:, 1:] = batch.tgt
    tgt_out = np.full((b, t + 1), PAD, dtype=np.int64)
    tgt_out[:, :t] = batch.tgt
    tgt_out[np.arange(b), batch.tgt_len] = EOS
    return src, batch.src_len + 1, tgt_in, tgt_out


def sequence_loss(model, batch, rng=None, training=False, drop=0.0):
    """Teacher-forced cross-entropy, averaged over non-pad target tokens."""
    if batch.size == 0:
        raise ValueError("sequence_loss: empty batch")
    src, src_len, tgt_in, tgt_out = prep_batch(batch)
    enc = _encode(model, src, src_len, rng=rng, training=training, drop=drop)
    h = _decoder_start(model, enc, rng=rng, training=training)
    b, steps = tgt_in.shape
    total = None
    n_tokens = 0
    for t in range(steps):
        mask = (tgt_out[:, t] != PAD)
        if not mask.any():
            break
        x = model.decoder_embed.lookup(tgt_in[:, t])
        if training and drop > 0.0:
            x = T.dropout(x, drop, rng)
        h = model.decoder_gru.step(x, h)
        logits = model.decoder_out.forward(h)
        logp = T.log_softmax(logits)
        onehot = np.zeros((b, model.tgt_vocab), dtype=np.float32)
        onehot[mask, tgt_out[mask, t]] = 1.0
        step_loss = -(logp * Tensor(onehot)).sum()
        total = step_loss if total is None else total + step_loss
        n_tokens += int(mask.sum())
    return total * (1.0 / n_tokens)


def reg_penalty(model, cfg, k):
    """Coefficient(k) times the squared distance of live transferred weights
    from w_star. The adapter is never part of the sum, so its gradient from
    this term is exactly zero."""
    coef = cfg.coefficient(k)
    if cfg.kind == "OFF":
        return Tensor(np.zeros((), dtype=np.float32))
    if not model.w_star:
        raise ValueError("regularizer needs a transfer snapshot; assemble the model first")
    store = model.params()
    total = None
    for name, ref in model.w_star.items():
        d = store[name] - Tensor(ref)
        sq = (d * d).sum()
        total = sq if total is None else total + sq
    return total * coef


def transfer_distance(model):
    """Squared L2 distance of the live transferred weights from w_star."""
    store = model.params()
    return float(sum(((store[n].data - ref) ** 2).sum() for n, ref in model.w_star.items()))


def greedy_decode_batch(model, src, src_len, max_len):
    """Argmax decoding for a whole padded block at once; rows stop at <eos>."""
    with T.no_grad():
        enc = _encode(model, src, src_len)
        h = _decoder_start(model, enc)
        b = src.shape[0]
        prev = np.full(b, BOS, dtype=np.int64)
        done = np.zeros(b, dtype=bool)
        rows = [[] for _ in range(b)]
        for _ in range(max_len):
            h = model.decoder_gru.step(model.decoder_embed.lookup(prev), h)
            logits = model.decoder_out.forward(h)
            prev = np.argmax(logits.data, axis=-1)
            for i in range(b):
                if not done[i]:
                    if prev[i] == EOS:
                        done[i] = True
                    else:
                        rows[i].append(int(prev[i]))
            if done.all():
                break
    return rows


def beam_search(model, src_ids, beam_width=12, max_len=80):
    """Best target id sequence under length-normalized log-probability.

    Hypotheses close on <eos> (not emitted in the result) and keep
    competing with open ones; with beam_width=1 this is greedy decoding.
    """
    if beam_width < 1:
        raise ValueError(f"beam_width must be >= 1, got {beam_width}")
    src = np.asarray(list(src_ids) + [EOS], dtype=np.int64).reshape(1, -1)
    with T.no_grad():
        enc = _encode(model, src, np.array([src.shape[1]]))
        h0 = _decoder_start(model, enc)
        # hypothesis: (ids, cumulative logp, hidden row, closed)
        beams = [((), 0.0, h0.data[0], False)]
        for _ in range(max_len):
            open_beams = [b for b in beams if not b[3]]
            if not open_beams:
                break
            closed = [b for b in beams if b[3]]
            hs = Tensor(np.stack([b[2] for b in open_beams]))
            prev = np.array([b[0][-1] if b[0] else BOS for b in open_beams], dtype=np.int64)
            h = model.decoder_gru.step(model.decoder_embed.lookup(prev), hs)
            logp = T.log_softmax(model.decoder_out.forward(h)).data
            cand = list(closed)
            for row, (ids, lp, _, _) in enumerate(open_beams):
                order = np.argsort(logp[row])[::-1][:beam_width]
                for tok in order:
                    tok = int(tok)
                    cand.append((ids + (tok,), lp + float(logp[row, tok]), h.data[row], tok == EOS))
            cand.sort(key=lambda b: b[1] / len(b[0]), reverse=True)
            beams = cand[:beam_width]
        best = max(beams, key=lambda b: b[1] / max(1, len(b[0])))
    ids = best[0]
    return list(ids[:-1]) if ids and ids[-1] == EOS else list(ids)


def translate_corpus(model, sentences, beam_width=12, max_len=80):
    """Decode a list of source id sequences independently."""
    return [beam_search(model, s, beam_width=beam_width, max_len=max_len) for s in sentences]


def corpus_bleu_ids(hyp_seqs, ref_seqs):
    return metrics.bleu4([[str(t) for t in h] for h in hyp_seqs],
                         [[str(t) for t in r] for r in ref_seqs]).bleu


def finetune(model, train_corpus, valid_corpus, rng, *, epochs=10, batch_size=128,
             lr=1e-3, drop=0.2, reg=None, max_len=80, log_path=None):
    """Joint training of adapter and model weights with annealed pull to w_star.

    k counts optimizer steps from 1. Each epoch ends with teacher-forced
    validation loss and greedy validation BLEU; the best-BLEU parameters are
    restored into the model before returning the per-epoch history.
    """
    from .textdata import make_batches

    reg = reg or RegularizerConfig("OFF")
    if reg.kind != "OFF" and not model.w_star:
        raise ValueError("regularizer needs a transfer snapshot; use kind OFF for fresh models")
    store = model.params()
    opt = nn.Adam(store, lr=lr)
    train_batches = make_batches(train_corpus, batch_size=batch_size)
    # corpus order kept so decoded rows pair with the right references
    valid_batches = make_batches(valid_corpus, batch_size=batch_size, sort_by_length=False)
    log = open(log_path, "a", encoding="utf-8") if log_path else None
    history = []
    best = (-1.0, None)
    k = 0
    try:
        for _ in range(epochs):
            order = rng.permutation(len(train_batches))
            last_train = last_reg = 0.0
            for bi in order:
                k += 1
                loss = sequence_loss(model, train_batches[bi], rng=rng, training=True, drop=drop)
                pen = reg_penalty(model, reg, k)
                store.zero_grad()
                backward(loss + pen)
                opt.step()
                last_train = float(loss.data)
                last_reg = float(pen.data)
            with T.no_grad():
                vloss = np.mean([float(sequence_loss(model, b).data) for b in valid_batches])
            hyps = []
            for b in valid_batches:
                hyps.extend(greedy_decode_batch(model, *prep_batch(b)[:2], max_len))
            vbleu = corpus_bleu_ids(hyps, valid_corpus.tgt)
            entry = {"step": k, "train_loss": last_train, "reg_value": last_reg,
                     "valid_loss": float(vloss), "valid_bleu": vbleu}
            history.append(entry)
            if log:
                log.write(json.dumps(entry) + "\n")
                log.flush()
            if vbleu > best[0]:
                best = (vbleu, store.snapshot())
    finally:
        if log:
            log.close()
    if best[1] is not None:
        store.load_snapshot(best[1])
    return history
