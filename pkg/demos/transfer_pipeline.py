# the whole pipeline at desk scale: pretrain two agents, recombine them
# into a translation model (listener -> encoder, speaker -> decoder),
# fine-tune with the annealed pull toward the pretrained weights, decode.
# takes a few minutes on one core.
#
# the equivalent through the command line is:
#   emergentmt features-synth / ec-pretrain / nmt-finetune / translate / score-bleu
import numpy as np

from emergentmt import game, seq2seq, textdata
from emergentmt.seq2seq import RegularizerConfig

VOCAB = 64

def pretrain(seed):
    rng = np.random.default_rng(seed)
    train, valid = game.make_feature_splits(2000, 200, 256, 32, 0.5, rng)
    agent = game.Agent(VOCAB, 64, 128, 256, 10, rng)
    recs = game.train_agent(agent, train, valid, steps=3000, k_train=31,
                            k_eval=31, rng=rng, batch=128, eval_every=50,
                            eval_rounds=500, stop_accuracy=0.95,
                            keep_snapshots=False)
    print(f"agent seed {seed}: accuracy {recs[-1].accuracy:.3f} at step {recs[-1].step}")
    return agent

src_agent = pretrain(1)
tgt_agent = pretrain(2)

train, valid, test = textdata.synthetic_task(
    500, 100, 200, np.random.default_rng(3), vocab=VOCAB, len_lo=4, len_hi=7)

rng = np.random.default_rng(4)
model = seq2seq.assemble(src_agent, tgt_agent, rng,
                         adapter_bottleneck=32, adapter_drop=0.2)
print("transferred tensors:", len(model.w_star))

# the pull toward the pretrained weights fades as lam**step; most of the
# learning happens after it has decayed, so give the run room to breathe
reg = RegularizerConfig("REG_A", alpha=5.0, lam=0.999)
history = seq2seq.finetune(model, train, valid, rng, epochs=500,
                           batch_size=32, lr=3e-3, drop=0.1, reg=reg,
                           max_len=12)
for h in history[:: max(1, len(history) // 6)]:
    print(f"step {h['step']:5d}  train {h['train_loss']:.3f}  "
          f"reg {h['reg_value']:.4f}  valid bleu {h['valid_bleu']:.2f}")

hyps = seq2seq.translate_corpus(model, test.src, beam_width=12, max_len=12)
print(f"test BLEU {seq2seq.corpus_bleu_ids(hyps, test.tgt):.2f}")
print("distance from pretrained weights:", round(seq2seq.transfer_distance(model), 2))

for i in range(3):
    print("src", test.src[i], "\n ref", test.tgt[i], "\n hyp", hyps[i])
