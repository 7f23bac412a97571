"""AdamW with decoupled weight decay.

Moments are bias-corrected with the step count incremented before the
correction; decay is applied to the parameter directly rather than mixed
into the moment estimates.
"""

from __future__ import annotations

import numpy as np


class AdamW:
    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        if lr < 0:
            raise ValueError(f"learning rate must be nonnegative, got {lr}")
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = (float(b) for b in betas)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = np.float32(self.beta1), np.float32(self.beta2)
        c1 = np.float32(1.0 - self.beta1**self.t)
        c2 = np.float32(1.0 - self.beta2**self.t)
        lr = np.float32(self.lr)
        eps = np.float32(self.eps)
        wd = np.float32(self.weight_decay)
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ValueError(
                    f"gradient shape {g.shape} does not match parameter shape {p.data.shape}"
                )
            m *= b1
            m += (np.float32(1.0) - b1) * g
            v *= b2
            v += (np.float32(1.0) - b2) * (g * g)
            m_hat = m / c1
            v_hat = v / c2
            p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
            if wd != 0.0:
                p.data -= lr * wd * p.data

    def state_arrays(self):
        """Moment buffers and step count, for checkpointing."""
        return {"m": self.m, "v": self.v, "t": self.t}

    def load_state_arrays(self, state):
        if len(state["m"]) != len(self.params):
            raise ValueError("optimizer state does not match parameter count")
        for dst, src in zip(self.m, state["m"]):
            if dst.shape != src.shape:
                raise ValueError("optimizer moment shape mismatch")
            dst[...] = src
        for dst, src in zip(self.v, state["v"]):
            dst[...] = src
        self.t = int(state["t"])
