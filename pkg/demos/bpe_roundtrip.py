# learn a small BPE model, segment text, map to ids and back
from emergentmt import textdata

corpus = [
    "the cat sat on the mat",
    "the dog sat on the log",
    "a cat and a dog met on the mat",
    "low lower lowest",
    "new newer newest",
]

model = textdata.BpeModel.learn(corpus, num_merges=40)
print(f"{len(model.merges)} merges; first five: {model.merges[:5]}")

# the model file carries its alphabet, so the vocab rebuilds from it alone
vocab = textdata.Vocab.build(model)
print("vocab size", len(vocab))

# "strand" and "maths" never appear in the corpus but use only seen characters
for line in ["the newest cat sat", "strand maths", "quiz"]:
    pieces = model.segment_line(line)
    ids = textdata.encode_line(model, vocab, line)
    back = textdata.decode_ids(vocab, ids)
    print("line:", line)
    print("  pieces:", " ".join(pieces))
    print("  ids:   ", ids)
    print("  back:  ", back)
print("characters outside the learned alphabet come back as <unk>")
