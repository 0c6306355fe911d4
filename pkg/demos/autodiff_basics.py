# fit a tiny GRU on a 4-bit parity task with the bundled autodiff engine,
# then verify one gradient against finite differences
import numpy as np

from emergentmt import nn
from emergentmt import tensor as T
from emergentmt.tensor import ParamStore, Tensor

rng = np.random.default_rng(0)

gru = nn.GruCell(2, 16, rng)
out = nn.Mlp([16, 1], rng)
store = ParamStore()
store.merge("gru", gru.params())
store.merge("out", out.params())
opt = nn.Adam(store, lr=1e-2)

def batch(n=64):
    bits = rng.integers(0, 2, size=(n, 4))
    x = np.zeros((n, 4, 2), dtype=np.float32)
    x[np.arange(n)[:, None], np.arange(4)[None, :], bits] = 1.0
    y = (bits.sum(axis=1) % 2).astype(np.float32).reshape(n, 1)
    return x, y

def forward(x):
    h = Tensor(np.zeros((x.shape[0], 16), dtype=np.float32))
    for t in range(x.shape[1]):
        h = gru.step(Tensor(x[:, t]), h)
    return T.sigmoid(out.forward(h))

# parity sits on a loss plateau for a while before it breaks; give it room
for step in range(2000):
    x, y = batch()
    p = forward(x)
    # plain mse is enough here
    diff = p - Tensor(y)
    loss = (diff * diff).sum() * (1.0 / len(y))
    store.zero_grad()
    T.backward(loss)
    opt.step()
    if step % 250 == 0:
        print(f"step {step:4d}  loss {float(loss.data):.4f}")

x, y = batch(512)
acc = ((forward(x).data > 0.5) == (y > 0.5)).mean()
print(f"parity accuracy {acc:.3f}")

# finite-difference spot check of the same graph (float64 for precision)
w = Tensor(rng.standard_normal((3, 3)), requires_grad=True, dtype=np.float64)
x64 = Tensor(rng.standard_normal((4, 3)), dtype=np.float64)
report = T.grad_check(lambda p: (T.tanh(x64 @ p)).sum(), w, h=1e-6)
print(f"grad check: max rel err {report.max_rel_err:.2e}, passed={report.passed}")
