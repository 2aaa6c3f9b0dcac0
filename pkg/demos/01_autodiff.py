"""
Reverse-mode autodiff on the built-in tape
==========================================

Every differentiable operation in catkg records onto an explicit Tape;
gradients come from walking that tape backwards. No framework needed.
"""

import numpy as np

from catkg import tensor as T
from catkg.tensor import Tape, Tensor

# leaf tensors opt in to gradients explicitly
x = Tensor(np.array([0.5, -1.2, 2.0]), requires_grad=True)
w = Tensor(np.array([[0.1, 0.3], [-0.2, 0.8], [0.5, -0.5]]),
           requires_grad=True)

with Tape() as tape:
    y = T.gelu(x @ w)          # (2,)
    loss = (y * y).sum()
tape.backward(loss)

print("loss        :", float(loss.data))
print("dloss/dx    :", x.grad)
print("dloss/dw    :", w.grad, sep="\n")

# the tape is consumed by backward; a fresh forward needs a fresh tape
x.grad = None
with Tape() as tape:
    loss = (x * 3.0 + T.exp(x)).sum()
tape.backward(loss)
print("d/dx [3x + exp(x)] =", x.grad, "(expect 3 + exp(x))")
print("3 + exp(x)         =", 3.0 + np.exp(x.data))

# grad_check compares the tape against central finite differences;
# it is how every operator in this package is verified
err = T.grad_check(lambda t: T.reduce_sum(T.softmax(t, axis=-1) * t),
                   [Tensor(np.random.default_rng(0).normal(size=(4, 5)))])
print("grad_check on softmax(t)*t:", err)
