"""Adaptive-moment (Adam) parameter updates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamConfig:
    rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class Adam:
    """Adam with bias correction. State is keyed by parameter name."""

    config: AdamConfig = field(default_factory=AdamConfig)
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
                raise FloatingPointError(f"non-finite gradient for {name!r} ({bad} entries)")
        self.step += 1
        c = self.config
        out = {}
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                out[name] = p
                continue
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
            m = c.beta1 * self.m.get(name, 0.0) + (1 - c.beta1) * g
            v = c.beta2 * self.v.get(name, 0.0) + (1 - c.beta2) * g * g
            self.m[name], self.v[name] = m, v
            m_hat = m / (1 - c.beta1**self.step)
            v_hat = v / (1 - c.beta2**self.step)
            out[name] = p - c.rate * m_hat / (np.sqrt(v_hat) + c.eps)
        return out


def optimizer_update(params, grads, state: Adam) -> dict[str, np.ndarray]:
    """Functional wrapper: one Adam step using (and advancing) ``state``."""
    return state.update(params, grads)
