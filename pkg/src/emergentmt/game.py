"""Referential game between a speaker and a listener over image features.

The speaker turns a feature vector into a discrete message (Gumbel-Softmax
tokens, straight-through at train time, plain argmax at eval). The listener
runs the message through its own GRU and is scored by how close its final
state lands to the shared image projection of each candidate; the round is
a softmax classification over the candidate set with the target at column 0.
"""

import json
import struct

import numpy as np

from . import metrics, nn
from . import tensor as T
from .tensor import ParamStore, Tensor, backward
from .textdata import BOS, EOS, PAD

EOS_MASK = -1e9


class FeatureSet:
    """N feature vectors of one split, rows addressed by index."""

    def __init__(self, vectors, split=""):
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise ValueError(f"feature set: expected 2-d array, got shape {vectors.shape}")
        if not np.isfinite(vectors).all():
            raise ValueError("feature set: non-finite values")
        self.vectors = vectors
        self.split = split

    @property
    def n(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]


def synth_features(n, dim, clusters, sigma, rng, centers=None):
    """Gaussian blobs: unit-normal cluster centers, per-point noise sigma."""
    if centers is None:
        centers = rng.standard_normal((clusters, dim))
    assign = rng.integers(0, len(centers), n)
    pts = centers[assign] + sigma * rng.standard_normal((n, dim))
    return pts.astype(np.float32)


def make_feature_splits(n_train, n_valid, dim, clusters, sigma, rng):
    """Train and valid splits drawn from one shared cluster mixture."""
    centers = rng.standard_normal((clusters, dim))
    train = synth_features(n_train, dim, clusters, sigma, rng, centers=centers)
    valid = synth_features(n_valid, dim, clusters, sigma, rng, centers=centers)
    return FeatureSet(train, "train"), FeatureSet(valid, "valid")


ECFV_MAGIC = b"ECFV"


def save_ecfv(path, vectors):
    vectors = np.ascontiguousarray(vectors, dtype="<f4")
    with open(path, "wb") as f:
        f.write(ECFV_MAGIC)
        f.write(struct.pack("<II", vectors.shape[0], vectors.shape[1]))
        f.write(vectors.tobytes())


def load_ecfv(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != ECFV_MAGIC:
        raise ValueError(f"feature file {path}: missing ECFV magic")
    if len(blob) < 12:
        raise ValueError(f"feature file {path}: truncated header")
    n, d = struct.unpack("<II", blob[4:12])
    body = np.frombuffer(blob, dtype="<f4", offset=12)
    if body.size != n * d:
        raise ValueError(f"feature file {path}: expected {n * d} floats, found {body.size}")
    return body.reshape(n, d).copy()


class Agent:
    """Speaker and listener halves sharing one image projection.

    The speaker is Embedding + GruCell + an output projection to vocab
    logits; the listener is its own Embedding + GruCell. Both compare
    against mlp1(image), which maps features into the hidden space.
    """

    def __init__(self, vocab_size, embed_dim, hidden_dim, feat_dim, l_max, rng):
        if vocab_size <= 4:
            raise ValueError(f"agent: vocab size {vocab_size} leaves no message tokens")
        if l_max < 1:
            raise ValueError(f"agent: l_max must be >= 1, got {l_max}")
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.feat_dim = feat_dim
        self.l_max = l_max
        self.speaker_embed = nn.Embedding(vocab_size, embed_dim, rng)
        self.speaker_gru = nn.GruCell(embed_dim, hidden_dim, rng)
        self.speaker_out = nn.Mlp([hidden_dim, vocab_size], rng)
        self.listener_embed = nn.Embedding(vocab_size, embed_dim, rng)
        self.listener_gru = nn.GruCell(embed_dim, hidden_dim, rng)
        self.mlp1 = nn.Mlp([feat_dim, hidden_dim], rng)
        # init calibration, chosen so the game trains from a cold start:
        # output logits spread ~2 so sampled tokens reflect the image signal
        # over the Gumbel noise; embeddings large enough to move the GRUs;
        # update-gate bias -2 keeps h from decaying before the message ends
        self.speaker_out.params()["w0"].data *= 30.0
        self.speaker_embed.params()["table"].data *= 5.0
        self.listener_embed.params()["table"].data *= 5.0
        self.speaker_gru.b_z.data[:] = -2.0
        self.listener_gru.b_z.data[:] = -2.0
        store = ParamStore()
        store.merge("speaker.embed", self.speaker_embed.params())
        store.merge("speaker.gru", self.speaker_gru.params())
        store.merge("speaker.out", self.speaker_out.params())
        store.merge("listener.embed", self.listener_embed.params())
        store.merge("listener.gru", self.listener_gru.params())
        store.merge("mlp1", self.mlp1.params())
        self._store = store

    def params(self):
        return self._store


class Message:
    """Batch of messages: ids padded past each row's length, lengths in steps.

    `soft` holds the per-step relaxed token tensors when generated for
    training (gradient path), else None.
    """

    def __init__(self, ids, lengths, soft=None):
        self.ids = ids
        self.lengths = lengths
        self.soft = soft

    @property
    def steps(self):
        return self.ids.shape[1]


def generate_message(agent, feats, rng=None, training=False, drop=0.0, temperature=1.0):
    """Roll the speaker forward from mlp1(image), one token per step.

    The first step masks <eos> so messages are never empty; rows stop at
    their first <eos> (which stays part of the message) or at l_max.
    """
    feats = np.asarray(feats, dtype=np.float32)
    if feats.shape[1] != agent.feat_dim:
        raise T.ShapeError(f"generate_message: feature dim {feats.shape[1]} != {agent.feat_dim}")
    b = feats.shape[0]
    h = agent.mlp1.forward(Tensor(feats))
    x = agent.speaker_embed.lookup(np.full(b, BOS, dtype=np.int64))
    mask0 = np.zeros((1, agent.vocab_size), dtype=np.float32)
    mask0[0, EOS] = EOS_MASK
    ids = np.full((b, agent.l_max), PAD, dtype=np.int64)
    lengths = np.full(b, agent.l_max, dtype=np.int64)
    done = np.zeros(b, dtype=bool)
    soft = [] if training else None
    steps = 0
    for t in range(agent.l_max):
        if training and drop > 0.0:
            x = T.dropout(x, drop, rng)
        h = agent.speaker_gru.step(x, h)
        logits = agent.speaker_out.forward(h)
        if t == 0:
            logits = logits + Tensor(mask0)
        if training:
            onehot = nn.gumbel_softmax(logits, temperature=temperature, hard=True, rng=rng)
            tokens = np.argmax(onehot.data, axis=-1)
            soft.append(onehot)
            x = agent.speaker_embed.soft_lookup(onehot)
        else:
            tokens = np.argmax(logits.data, axis=-1)
            x = agent.speaker_embed.lookup(tokens)
        ids[~done, t] = tokens[~done]
        steps = t + 1
        newly = (~done) & (tokens == EOS)
        lengths[newly] = t + 1
        done |= newly
        if done.all():
            break
    return Message(ids[:, :steps], lengths, soft)


def listen(agent, message, rng=None, training=False, drop=0.0):
    """Run the listener GRU over the message; final state taken per-row at
    the true length, so steps past a row's <eos> never leak in."""
    if message.steps == 0:
        raise ValueError("listen: empty message")
    b = message.ids.shape[0]
    h = Tensor(np.zeros((b, agent.hidden_dim), dtype=np.float32))
    final = Tensor(np.zeros((b, agent.hidden_dim), dtype=np.float32))
    for t in range(message.steps):
        if training:
            x = agent.listener_embed.soft_lookup(message.soft[t])
        else:
            x = agent.listener_embed.lookup(message.ids[:, t])
        if training and drop > 0.0:
            x = T.dropout(x, drop, rng)
        h = agent.listener_gru.step(x, h)
        sel = (message.lengths == t + 1).astype(np.float32).reshape(b, 1)
        if sel.any():
            final = final + h * Tensor(sel)
    return final


def compatibility_score(h_final, image, mlp1):
    """Inverse squared distance between the listener state and mlp1(image);
    the squared distance is floored at 1e-8 so the score tops out at 1e8."""
    u = mlp1.forward(image if isinstance(image, Tensor) else Tensor(np.asarray(image, np.float32).reshape(1, -1)))
    diff = h_final.reshape(1, -1) - u.reshape(1, -1)
    d2 = (diff * diff).sum()
    return T.reciprocal(T.clamp_min(d2, 1e-8))


def candidate_scores(agent, h_final, cand_feats):
    """Score matrix (batch, K+1) of inverse squared distances."""
    b, kk, d = cand_feats.shape
    flat = agent.mlp1.forward(Tensor(cand_feats.reshape(b * kk, d)))
    u = flat.reshape(b, kk, agent.hidden_dim)
    diff = h_final.reshape(b, 1, agent.hidden_dim) - u
    d2 = (diff * diff).sum(axis=2)
    return T.reciprocal(T.clamp_min(d2, 1e-8))


def game_loss(scores, target_position=0):
    """Cross-entropy over candidate scores treated as logits, mean over rows."""
    if scores.data.ndim == 1:
        scores = scores.reshape(1, -1)
    b, kk = scores.shape
    logp = T.log_softmax(scores)
    onehot = np.zeros((b, kk), dtype=scores.data.dtype)
    onehot[np.arange(b), np.broadcast_to(np.asarray(target_position), b)] = 1.0
    return -((logp * Tensor._from_op(onehot, (), None)).sum() * (1.0 / b))


def draw_candidate_sets(features, k, batch, rng):
    """Per row: K+1 distinct uniform indices, a uniformly chosen one swapped
    into column 0 as the target."""
    if features.n <= k + 1:
        raise ValueError(f"need more than {k + 1} features, have {features.n}")
    u = rng.random((batch, features.n))
    cand = np.argpartition(u, k, axis=1)[:, : k + 1]
    pick = rng.integers(0, k + 1, batch)
    rows = np.arange(batch)
    tgt = cand[rows, pick].copy()
    cand[rows, pick] = cand[:, 0]
    cand[:, 0] = tgt
    return tgt, cand


def play_round(agent, features, targets, candidates):
    """Evaluation round: argmax messages, no noise; returns picked columns."""
    msg = generate_message(agent, features.vectors[targets], training=False)
    h = listen(agent, msg, training=False)
    scores = candidate_scores(agent, h, features.vectors[candidates])
    return np.argmax(scores.data, axis=1)


def round_loss(agent, features, targets, candidates, rng, drop=0.0, temperature=1.0):
    """Training round loss plus the batch's (noisy) prediction accuracy."""
    msg = generate_message(agent, features.vectors[targets], rng=rng, training=True,
                           drop=drop, temperature=temperature)
    h = listen(agent, msg, rng=rng, training=True, drop=drop)
    scores = candidate_scores(agent, h, features.vectors[candidates])
    acc = float((np.argmax(scores.data, axis=1) == 0).mean())
    return game_loss(scores), acc


class TrainRecord:
    def __init__(self, step, accuracy, snapshot=None, path=None):
        self.step = step
        self.accuracy = accuracy
        self.snapshot = snapshot
        self.path = path

    def __repr__(self):
        return f"TrainRecord(step={self.step}, accuracy={self.accuracy:.4f})"


def train_agent(
    agent,
    train_feats,
    valid_feats,
    *,
    steps,
    k_train,
    k_eval,
    rng,
    batch=128,
    lr=1e-3,
    drop=0.1,
    eval_every=50,
    eval_rounds=1000,
    eval_seed=9,
    stop_accuracy=None,
    keep_snapshots=True,
    log_path=None,
    temperature=1.0,
):
    """Adam training loop with periodic fixed-seed evaluation snapshots.

    Per step the rng draws, in order: candidate sets, then per-token Gumbel
    noise and dropout masks inside the round. Evaluation re-seeds its own
    rng so every checkpoint sees identical distractor sets. Returns the
    checkpoint records (step 0 first, then every `eval_every` steps).
    """
    if train_feats.n <= k_train + 1:
        raise ValueError(f"need more than {k_train + 1} features, have {train_feats.n}")
    store = agent.params()
    opt = nn.Adam(store, lr=lr)
    records = []
    log = open(log_path, "a", encoding="utf-8") if log_path else None

    def evaluate(step, train_loss=None):
        acc = metrics.game_accuracy(
            agent, valid_feats, k_eval, eval_rounds, np.random.default_rng(eval_seed)
        )
        snap = store.snapshot() if keep_snapshots else None
        records.append(TrainRecord(step, acc, snapshot=snap))
        if log:
            entry = {"step": step, "eval_accuracy": acc}
            if train_loss is not None:
                entry["train_loss"] = train_loss
            log.write(json.dumps(entry) + "\n")
            log.flush()
        return acc

    try:
        evaluate(0)
        for step in range(1, steps + 1):
            targets, cands = draw_candidate_sets(train_feats, k_train, batch, rng)
            loss, _ = round_loss(agent, train_feats, targets, cands, rng, drop=drop,
                                 temperature=temperature)
            store.zero_grad()
            backward(loss)
            opt.step()
            if step % eval_every == 0:
                acc = evaluate(step, train_loss=float(loss.data))
                if stop_accuracy is not None and acc >= stop_accuracy:
                    break
    finally:
        if log:
            log.close()
    return records


def checkpoint_at_accuracy(records, target):
    """Record whose accuracy is closest to target; ties go to the earliest step."""
    if not records:
        raise ValueError("checkpoint_at_accuracy: no checkpoints")
    return min(records, key=lambda r: (abs(r.accuracy - target), r.step))
