"""Compare backpropagated gradients of an LW unit with finite differences.

Run: python demos/04_gradient_check.py

Everything is cast to float64 first; in float32 the central-difference
estimate itself is only good to about 1e-3. An error near 1e-6 on a single
tensor usually means a perturbation pushed some ReLU input across zero, so
the difference quotient straddles a kink; tests/gradcheck.py skips those.
"""

import numpy as np

from lwnet3d.models import LWUnit, LwUnitConfig

rng = np.random.default_rng(0)
unit = LWUnit(LwUnitConfig(2, 4, stride=2), rng).astype(np.float64)
x = rng.standard_normal((3, 2, 5, 3, 3))
w = rng.standard_normal(unit.forward(x).shape)


def loss():
    return float(np.sum(unit.forward(x) * w))


unit.zero_grad()
unit.forward(x)
unit.backward(w)

h = 1e-5
for name, p in unit.named_parameters():
    flat, grad = p.data.reshape(-1), p.grad.reshape(-1)
    num = np.empty(flat.size)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = loss()
        flat[i] = old - h
        num[i] = (up - loss()) / (2 * h)
        flat[i] = old
    err = np.abs(grad - num).max() / max(np.abs(num).max(), 1e-300)
    print(f"{name:<22} {p.data.shape!s:<18} rel err {err:.1e}")
