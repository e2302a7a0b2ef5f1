"""Network stack walkthrough: forward passes, exact gradients, Adam fitting.

Run: python demos/03_networks_and_gradients.py
"""

import numpy as np

from trader.neural import AdamState, Mlp, adam_step, backward, forward

rng = np.random.default_rng(0)

# The bid-head shape: 37 inputs -> 3 softmax outputs.
net = Mlp([37, 128, 128, 3], ["tanh", "tanh", "softmax"], rng=rng)
x = rng.random(37)
probs, tape = forward(net, x)
print(f"bid-shaped net: {net.n_params} parameters, output {probs.round(4)} "
      f"(sums to {probs.sum():.12f})")

# Reverse-mode gradient vs a central finite difference, one coordinate.
g = rng.standard_normal(3)
analytic = backward(net, tape, g)
i = int(rng.integers(net.n_params))
h = 1e-5
base = net.params.copy()
for sign in (+1, -1):
    net.params = base.copy()
    net.params[i] += sign * h
    y, _ = forward(net, x)
    if sign > 0:
        up = float(g @ y)
    else:
        down = float(g @ y)
net.params = base
numeric = (up - down) / (2 * h)
print(f"gradient check at coordinate {i}: analytic {analytic[i]:+.8f} "
      f"numeric {numeric:+.8f}")

# Adam fitting a tiny regression: y = sin(3x) on [-1, 1].
fit = Mlp([1, 32, 1], ["tanh", "identity"], rng=rng)
xs = np.linspace(-1, 1, 64)[:, None]
ys = np.sin(3 * xs)
state = AdamState.init(fit.n_params, lr=0.01)
for step in range(2000):
    pred, tape = forward(fit, xs)
    err = pred - ys
    grad = backward(fit, tape, 2 * err / len(xs))
    fit.params, state = adam_step(fit.params, grad, state)
    if step % 500 == 0 or step == 1999:
        print(f"  adam step {step:4d}: mse {float(np.mean(err ** 2)):.6f}")
