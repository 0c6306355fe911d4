# pretrain one speaker-listener agent on the image referential game and
# watch the protocol emerge: accuracy rises, messages become distinctive
import numpy as np

from emergentmt import game

rng = np.random.default_rng(7)

train, valid = game.make_feature_splits(1000, 200, 128, 16, 0.5, rng)
agent = game.Agent(vocab_size=32, embed_dim=32, hidden_dim=64,
                   feat_dim=128, l_max=6, rng=rng)

records = game.train_agent(
    agent, train, valid, steps=800, k_train=15, k_eval=15, rng=rng,
    batch=64, eval_every=100, eval_rounds=300, keep_snapshots=False)

for r in records:
    print(f"step {r.step:4d}  accuracy {r.accuracy:.3f}")

# greedy messages for a few validation images; same cluster tends to get
# the same prefix once the game is learned
msg = game.generate_message(agent, valid.vectors[:6])
for i in range(6):
    ids = msg.ids[i, :msg.lengths[i]]
    print("image", i, "->", " ".join(str(t) for t in ids))
