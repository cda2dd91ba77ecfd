"""Adam with an optional lazy row-sparse update path."""

from __future__ import annotations

import numpy as np


class Adam:
    """Adam over a dict of named arrays, updated in place.

    ``update_rows`` touches only the given rows of a parameter (and of its
    moment buffers); bias correction always uses the global step count, so a
    full-row ``update_rows`` is identical to a dense ``update``.
    """

    def __init__(self, params: dict, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = float(lr)
        self.b1, self.b2 = betas
        self.eps = float(eps)
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def _scales(self):
        return 1.0 - self.b1 ** self.t, 1.0 - self.b2 ** self.t

    def tick(self):
        self.t += 1

    def update(self, name, grad):
        p, m, v = self.params[name], self.m[name], self.v[name]
        m *= self.b1
        m += (1 - self.b1) * grad
        v *= self.b2
        v += (1 - self.b2) * grad * grad
        c1, c2 = self._scales()
        p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def update_rows(self, name, rows, grad_rows):
        p, m, v = self.params[name], self.m[name], self.v[name]
        mr = self.b1 * m[rows] + (1 - self.b1) * grad_rows
        vr = self.b2 * v[rows] + (1 - self.b2) * grad_rows * grad_rows
        m[rows] = mr
        v[rows] = vr
        c1, c2 = self._scales()
        p[rows] -= self.lr * (mr / c1) / (np.sqrt(vr / c2) + self.eps)

    def step(self, grads: dict):
        self.tick()
        for name, g in grads.items():
            self.update(name, g)
