"""Property-based checks over the text plumbing and batch framing."""

import numpy as np
from hypothesis import given, settings, strategies as st

from emergentmt import seq2seq, textdata as td
from emergentmt.seq2seq import RegularizerConfig

MODEL = td.BpeModel.learn(
    ["a bad cab fed a fad", "deaf bed decaf face", "be ace cede dab fab"],
    num_merges=10)
VOCAB = td.Vocab.build(MODEL)

words = st.text(alphabet="abcdef", min_size=1, max_size=8)


@settings(deadline=None)
@given(st.lists(words, min_size=1, max_size=8))
def test_bpe_round_trip_over_seen_alphabet(ws):
    line = " ".join(ws)
    ids = td.encode_line(MODEL, VOCAB, line)
    assert td.UNK not in ids
    assert td.decode_ids(VOCAB, ids) == line


@settings(deadline=None)
@given(st.data())
def test_prep_batch_framing(data):
    b = data.draw(st.integers(1, 5))
    src_lens = data.draw(st.lists(st.integers(1, 6), min_size=b, max_size=b))
    tgt_lens = data.draw(st.lists(st.integers(1, 6), min_size=b, max_size=b))
    s, t = max(src_lens), max(tgt_lens)
    rng = np.random.default_rng(data.draw(st.integers(0, 2**16)))
    src = np.full((b, s), td.PAD, dtype=np.int64)
    tgt = np.full((b, t), td.PAD, dtype=np.int64)
    for i in range(b):
        src[i, : src_lens[i]] = rng.integers(4, 16, src_lens[i])
        tgt[i, : tgt_lens[i]] = rng.integers(4, 16, tgt_lens[i])
    batch = td.Batch(src, tgt, np.array(src_lens), np.array(tgt_lens))
    f_src, f_len, tgt_in, tgt_out = seq2seq.prep_batch(batch)
    for i in range(b):
        # source: payload, one <eos>, pad tail; length counts the <eos>
        assert f_src[i, src_lens[i]] == td.EOS
        assert (f_src[i, : src_lens[i]] == src[i, : src_lens[i]]).all()
        assert (f_src[i, src_lens[i] + 1 :] == td.PAD).all()
        assert f_len[i] == src_lens[i] + 1
        # decoder input starts with <bos>; reference ends with <eos>
        assert tgt_in[i, 0] == td.BOS
        assert (tgt_in[i, 1 : tgt_lens[i] + 1] == tgt[i, : tgt_lens[i]]).all()
        assert tgt_out[i, tgt_lens[i]] == td.EOS
        assert (tgt_out[i, : tgt_lens[i]] == tgt[i, : tgt_lens[i]]).all()
        assert (tgt_out[i, tgt_lens[i] + 1 :] == td.PAD).all()


@settings(deadline=None)
@given(st.floats(0.01, 50.0), st.floats(0.0, 0.999), st.integers(1, 500))
def test_annealing_coefficients_decay(alpha, lam, k):
    a = RegularizerConfig("REG_A", alpha=alpha, lam=lam)
    b = RegularizerConfig("REG_B", alpha=alpha)
    assert 0.0 <= a.coefficient(k + 1) <= a.coefficient(k) <= alpha
    assert 0.0 < b.coefficient(k + 1) < b.coefficient(k) <= alpha
