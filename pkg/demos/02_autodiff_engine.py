"""The reverse-mode engine underneath the models.

Builds a tiny computation, checks its gradients against central finite
differences, then fits a least-squares problem with Adam + decoupled
weight decay.
"""

import numpy as np

from dynst import autodiff as ad
from dynst.autodiff import AdamState, Tensor, adam_step, zero_grads
from dynst.gradcheck import finite_difference_grad

# --- gradients by hand vs the engine ------------------------------------

x = Tensor(np.array([0.5, -1.0, 2.0]), requires_grad=True)
w = Tensor(np.array([[0.3], [0.7], [-0.2]]), requires_grad=True)
out = ad.sigmoid(ad.matmul(ad.reshape(x, (1, 3)), w)).sum()
out.backward()
print("analytic dx:", x.grad)

numeric = finite_difference_grad(
    lambda t: ad.sigmoid(ad.matmul(ad.reshape(t["x"], (1, 3)), w)).sum(), {"x": x}, "x"
)
print("numeric  dx:", numeric)
print("max abs difference:", np.abs(x.grad - numeric).max())

# --- a short Adam run -----------------------------------------------------

rng = np.random.default_rng(0)
target = rng.standard_normal((4, 1))
features = rng.standard_normal((64, 4))
labels = features @ target + 0.01 * rng.standard_normal((64, 1))

weights = Tensor(np.zeros((4, 1)), requires_grad=True)
state = AdamState(lr=0.05, weight_decay=0.001)
for step in range(200):
    err = ad.add(ad.matmul(Tensor(features), weights), Tensor(-labels))
    loss = ad.mul(err, err).sum()
    zero_grads({"w": weights})
    loss.backward()
    adam_step({"w": weights}, state)
    if step % 50 == 0:
        print(f"step {step:3d}  loss {float(loss.data):8.4f}")

print("recovered weights:", weights.data.ravel().round(3))
print("true weights:     ", target.ravel().round(3))
