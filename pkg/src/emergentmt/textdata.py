"""Corpus plumbing: tokenization, byte-pair encoding, vocabularies, batching.

Words carry a fused end-of-word marker on their final character (cat ->
c, a, t</w>), so merged tokens are unambiguous about word boundaries and
decoding is a plain join. Reserved ids 0..3 are <pad>, <bos>, <eos>, <unk>.
"""

import hashlib
import unicodedata
from collections import Counter, defaultdict

import numpy as np

EOW = "</w>"
PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")


def tokenize(line):
    """Lowercase, isolate punctuation as standalone tokens, split on whitespace."""
    parts = []
    for ch in line.lower():
        if unicodedata.category(ch).startswith("P"):
            parts.append(f" {ch} ")
        else:
            parts.append(ch)
    return "".join(parts).split()


def _word_symbols(word):
    return tuple(word[:-1]) + (word[-1] + EOW,)


def _merge_once(syms, pair, joined):
    out = []
    i = 0
    while i < len(syms):
        if i + 1 < len(syms) and syms[i] == pair[0] and syms[i + 1] == pair[1]:
            out.append(joined)
            i += 2
        else:
            out.append(syms[i])
            i += 1
    return tuple(out)


def corpus_fingerprint(lines):
    digest = hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()
    return digest[:12]


BPE_HEADER = "bpe-merges-v1"


class BpeModel:
    """Ordered merge list learned greedily by pair frequency.

    Ties on frequency break toward the lexicographically smallest pair, so
    relearning on the same corpus is byte-identical. The model also carries
    the training alphabet (every seen character in bare and word-final
    form), so a vocabulary can be rebuilt from the model file alone.
    """

    def __init__(self, merges, fingerprint="", alphabet=()):
        if len(set(merges)) != len(merges):
            raise ValueError("bpe model: duplicate merges")
        self.merges = [tuple(m) for m in merges]
        self.fingerprint = fingerprint
        self.alphabet = tuple(sorted(set(alphabet)))
        self._ranks = {pair: i for i, pair in enumerate(self.merges)}
        self._cache = {}

    @classmethod
    def learn(cls, lines, num_merges):
        if num_merges < 1:
            raise ValueError(f"bpe_learn: num_merges must be >= 1, got {num_merges}")
        word_freq = Counter(w for line in lines for w in tokenize(line))
        if not word_freq:
            raise ValueError("bpe_learn: empty corpus")
        alphabet = {form for w in word_freq for ch in w for form in (ch, ch + EOW)}
        words = {_word_symbols(w): f for w, f in word_freq.items()}
        merges = []
        for _ in range(num_merges):
            pair_counts = Counter()
            for syms, f in words.items():
                for pair in zip(syms, syms[1:]):
                    pair_counts[pair] += f
            if not pair_counts:
                break
            top = max(pair_counts.values())
            best = min(p for p, c in pair_counts.items() if c == top)
            merges.append(best)
            joined = best[0] + best[1]
            remapped = defaultdict(int)
            for syms, f in words.items():
                remapped[_merge_once(syms, best, joined)] += f
            words = dict(remapped)
        return cls(merges, corpus_fingerprint(list(lines)), alphabet)

    def segment(self, word):
        """Split one lowercased word into merge-table symbols, lowest rank first."""
        cached = self._cache.get(word)
        if cached is not None:
            return list(cached)
        syms = list(_word_symbols(word))
        while len(syms) > 1:
            ranked = [
                (self._ranks[p], p)
                for p in zip(syms, syms[1:])
                if p in self._ranks
            ]
            if not ranked:
                break
            _, pair = min(ranked)
            syms = list(_merge_once(tuple(syms), pair, pair[0] + pair[1]))
        self._cache[word] = tuple(syms)
        return syms

    def segment_line(self, line):
        return [s for w in tokenize(line) for s in self.segment(w)]

    def save(self, path):
        # one-symbol lines are alphabet entries, two-symbol lines merges;
        # symbols never contain spaces (tokenize splits on whitespace)
        lines = [f"{BPE_HEADER} {self.fingerprint}".rstrip()]
        lines += list(self.alphabet)
        lines += [f"{a} {b}" for a, b in self.merges]
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            raw = f.read().splitlines()
        if not raw or raw[0].split()[:1] != [BPE_HEADER]:
            raise ValueError(f"bpe model file {path}: missing '{BPE_HEADER}' header")
        header = raw[0].split()
        fingerprint = header[1] if len(header) > 1 else ""
        merges = []
        alphabet = []
        for lineno, line in enumerate(raw[1:], start=2):
            if not line.strip():
                continue
            parts = line.split(" ")
            if len(parts) == 1:
                alphabet.append(parts[0])
            elif len(parts) == 2:
                merges.append((parts[0], parts[1]))
            else:
                raise ValueError(
                    f"bpe model file {path}:{lineno}: expected one or two symbols")
        return cls(merges, fingerprint, alphabet)


class Vocab:
    """Token/id bijection with the four reserved ids up front.

    Built from a BPE model: every merge output and both forms (bare and
    word-final) of every seen character get an id, so any word over seen
    characters encodes without <unk>. Extra corpus lines may widen the
    character set (older model files carry no alphabet).
    """

    def __init__(self, tokens):
        self._tokens = list(RESERVED) + list(tokens)
        self._ids = {t: i for i, t in enumerate(self._tokens)}
        if len(self._ids) != len(self._tokens):
            raise ValueError("vocab: duplicate tokens")

    @classmethod
    def build(cls, model, lines=()):
        symbols = set(model.alphabet)
        for line in lines:
            for word in tokenize(line):
                for ch in word:
                    symbols.add(ch)
                    symbols.add(ch + EOW)
        for a, b in model.merges:
            symbols.add(a + b)
        return cls(sorted(symbols))

    def __len__(self):
        return len(self._tokens)

    def id(self, token):
        return self._ids.get(token, UNK)

    def token(self, i):
        return self._tokens[i]

    def ids(self, symbols):
        return [self.id(s) for s in symbols]

    def tokens(self):
        return list(self._tokens)


def encode_line(model, vocab, line):
    """Raw sentence -> BPE token ids (no <bos>/<eos> furniture)."""
    return vocab.ids(model.segment_line(line))


def decode_ids(vocab, ids):
    """Token ids -> detokenized sentence; reserved ids other than <unk> drop out."""
    symbols = []
    for i in ids:
        if i in (PAD, BOS, EOS):
            continue
        symbols.append("<unk>" + EOW if i == UNK else vocab.token(i))
    return "".join(symbols).replace(EOW, " ").strip()


class ParallelCorpus:
    """Aligned source/target id sequences for one split."""

    def __init__(self, src, tgt, split=""):
        if len(src) != len(tgt):
            raise ValueError(
                f"parallel corpus: {len(src)} source vs {len(tgt)} target sentences"
            )
        for i, (s, t) in enumerate(zip(src, tgt)):
            if not s or not t:
                raise ValueError(f"parallel corpus: empty sentence at line {i + 1}")
        self.src = list(src)
        self.tgt = list(tgt)
        self.split = split

    def __len__(self):
        return len(self.src)


def synthetic_task(n_train, n_valid, n_test, rng, vocab=64, len_lo=5, len_hi=9):
    """Toy translation task with a learnable, fully deterministic mapping.

    Source sentences are random words from ids 4..vocab-1. The target is a
    fixed word-for-word substitution (one seeded bijection shared by every
    split), then each disjoint adjacent pair swaps when the first source
    word id is odd. Models the lexicon + local reordering that real
    translation needs, at a scale where exact rules are recoverable.
    """
    if vocab <= 5:
        raise ValueError(f"synthetic_task: vocab {vocab} leaves too few words")
    words = np.arange(4, vocab)
    mapping = dict(zip(words.tolist(), rng.permutation(words).tolist()))

    def draw_split(n, split):
        src, tgt = [], []
        for _ in range(n):
            length = int(rng.integers(len_lo, len_hi + 1))
            s = [int(w) for w in rng.integers(4, vocab, length)]
            t = [mapping[w] for w in s]
            for i in range(0, length - 1, 2):
                if s[i] % 2 == 1:
                    t[i], t[i + 1] = t[i + 1], t[i]
            src.append(s)
            tgt.append(t)
        return ParallelCorpus(src, tgt, split=split)

    return (draw_split(n_train, "train"), draw_split(n_valid, "valid"),
            draw_split(n_test, "test"))


def subsample(corpus, n, seed):
    """Uniform sample of n pairs without replacement, kept in corpus order.

    Slicing one seeded permutation makes samples nested: the n=500 set is a
    subset of the n=1000 set for the same seed.
    """
    if n > len(corpus):
        raise ValueError(f"subsample: n={n} exceeds corpus size {len(corpus)}")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.permutation(len(corpus))[:n])
    return ParallelCorpus(
        [corpus.src[i] for i in idx],
        [corpus.tgt[i] for i in idx],
        split=corpus.split,
    )


class Batch:
    def __init__(self, src, tgt, src_len, tgt_len):
        self.src = src
        self.tgt = tgt
        self.src_len = src_len
        self.tgt_len = tgt_len

    @property
    def size(self):
        return self.src.shape[0]


def make_batches(corpus, batch_size=128, pad_id=PAD, sort_by_length=True):
    """Chunk the corpus into padded batches; final partial batch is kept.

    Length-sorting buckets similar lengths together to limit padding; pad
    positions are recoverable from the per-sentence lengths.
    """
    order = list(range(len(corpus)))
    if sort_by_length:
        order.sort(key=lambda i: (len(corpus.src[i]) + len(corpus.tgt[i])))
    batches = []
    for start in range(0, len(order), batch_size):
        chunk = order[start : start + batch_size]
        src = [corpus.src[i] for i in chunk]
        tgt = [corpus.tgt[i] for i in chunk]
        batches.append(
            Batch(
                _pad_block(src, pad_id),
                _pad_block(tgt, pad_id),
                np.array([len(s) for s in src], dtype=np.int64),
                np.array([len(t) for t in tgt], dtype=np.int64),
            )
        )
    return batches


def _pad_block(seqs, pad_id):
    width = max(len(s) for s in seqs)
    block = np.full((len(seqs), width), pad_id, dtype=np.int64)
    for r, s in enumerate(seqs):
        block[r, : len(s)] = s
    return block


def mean_length(seqs):
    """Average sentence length in tokens; guides the message-length budget."""
    return sum(len(s) for s in seqs) / len(seqs)


def filter_by_length(src_lines, tgt_lines, lo=5, hi=15):
    """Keep pairs whose both sides have lo..hi words after tokenization."""
    kept_src, kept_tgt = [], []
    for s, t in zip(src_lines, tgt_lines):
        ns, nt = len(tokenize(s)), len(tokenize(t))
        if lo <= ns <= hi and lo <= nt <= hi:
            kept_src.append(s)
            kept_tgt.append(t)
    return kept_src, kept_tgt


def read_lines(path):
    with open(path, encoding="utf-8") as f:
        return f.read().splitlines()


def write_lines(path, lines):
    with open(path, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(line + "\n")
