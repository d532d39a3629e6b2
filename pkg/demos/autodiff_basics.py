"""
Gradients on a tape
===================

Every operation on a ``Tensor`` is recorded on the current thread's tape.
``backward`` walks the tape in reverse and fills ``.grad`` on the leaves.
"""

import numpy as np

from noilin import tensor as T
from noilin.tensor import Tensor

# a small least-squares problem
rng = np.random.default_rng(0)
x = rng.normal(size=(5, 3))
w = Tensor(np.zeros((3, 1)), requires_grad=True)
target = x @ np.array([[1.0], [-2.0], [0.5]])

residual = T.sub(T.matmul(x, w), target)
loss = T.mean(T.mul(residual, residual))
T.backward(loss)
print("loss at w=0:", loss.item())
print("analytic gradient:", w.grad.ravel())
print("closed form      :", (-2 * x.T @ target / len(target)).ravel())

# ``grad`` returns arrays instead of accumulating, which is what the attacks use
xt = Tensor(x, requires_grad=True)
(gx,) = T.grad(T.sum(T.relu(xt)), [xt])
print("d sum(relu(x)) / dx is the indicator of x > 0:", np.array_equal(gx, (x > 0) * 1.0))
