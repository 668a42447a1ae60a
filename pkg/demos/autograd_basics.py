"""Walk through the tensor core: build a small graph, backpropagate, compare with finite differences.

Run: python demos/autograd_basics.py
"""
import numpy as np

from mbanet.tensor_core import Tensor, check_gradients, matmul, no_grad
from mbanet.tensor_core import functional as F
from mbanet.training import smoothed_cross_entropy

rng = np.random.default_rng(0)

# ---------------------------------------------------------------------------
# 1. a two-layer perceptron by hand
# ---------------------------------------------------------------------------
x = Tensor(rng.normal(size=(4, 3)), dtype=np.float64)
w1 = Tensor(rng.normal(size=(3, 5)) * 0.5, requires_grad=True, dtype=np.float64)
w2 = Tensor(rng.normal(size=(5, 2)) * 0.5, requires_grad=True, dtype=np.float64)

hidden = F.relu(matmul(x, w1))
logits = matmul(hidden, w2)
loss = smoothed_cross_entropy(logits, [0, 1, 1, 0], eps=0.0)  # plain cross-entropy
loss.backward()

print("loss:", float(loss.data))
print("dL/dw2 column sums:", w2.grad.sum(axis=0))

# ---------------------------------------------------------------------------
# 2. does the analytic gradient agree with central differences?
# ---------------------------------------------------------------------------
w1.grad = w2.grad = None
errors = check_gradients(lambda: matmul(F.relu(matmul(x, w1)), w2), [w1, w2])
for idx, err in errors.items():
    print(f"input {idx}: relative error {err:.2e}")

# ---------------------------------------------------------------------------
# 3. inference mode skips graph construction
# ---------------------------------------------------------------------------
with no_grad():
    y = matmul(x, w1)
print("graph recorded under no_grad:", y.requires_grad)

# softmax is shift invariant and stays finite for large logits
big = Tensor([[1e4, 1e4 - 1.0, -1e4]], dtype=np.float64)
print("softmax of huge logits:", F.softmax_rows(big).data.round(4))
