"""The reverse-mode engine in isolation: tape, backward, gradient checking.

Run with:  python3 demos/autodiff_basics.py
"""

import numpy as np

from degfair import autodiff as ad
from degfair.autodiff import Tape, Tensor
from degfair.optim import Adam

rng = np.random.default_rng(0)

print("== a taped computation and its gradients")
w = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
x = Tensor(rng.standard_normal((5, 3)))

with Tape() as tape:
    h = ad.relu(ad.matmul(x, w))
    loss = ad.sq_norm(h)
tape.backward(loss)
print("loss =", round(loss.item(), 4))
print("dloss/dw =\n", np.round(w.grad, 4))

print("\n== the gradient checker agrees with central differences")
err = ad.fd_check(lambda: ad.sq_norm(ad.relu(ad.matmul(x, w))), [w])
print(f"max relative error vs finite differences: {err:.2e}")

print("\n== a few optimizer steps shrink the loss")
opt = Adam([w], lr=0.05)
for step in range(5):
    opt.zero_grad()
    with Tape() as tape:
        loss = ad.sq_norm(ad.relu(ad.matmul(x, w)))
    tape.backward(loss)
    opt.step()
    print(f"step {step}: loss = {loss.item():.4f}")

print("\n== softmax rows are exact probability distributions")
p = ad.softmax_rows(Tensor(rng.standard_normal((2, 4)) * 10))
print(np.round(p.data, 4), "row sums:", p.data.sum(axis=1))
