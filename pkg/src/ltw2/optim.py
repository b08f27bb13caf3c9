"""AdamW with decoupled weight decay."""
import json
from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradient(FloatingPointError):
    """A gradient entry is NaN or infinite."""


@dataclass
class AdamWState:
    """First/second moments per leaf plus the step counter."""

    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_mask: list = field(default_factory=list)

    @classmethod
    def zeros_like(cls, leaves, decay_mask=None, **kw):
        mask = list(decay_mask) if decay_mask is not None else [True] * len(leaves)
        return cls([np.zeros_like(x) for x in leaves], [np.zeros_like(x) for x in leaves],
                   decay_mask=mask, **kw)

    def to_dict(self):
        return {"step": self.step, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "decay_mask": list(map(bool, self.decay_mask)),
                "m": [np.asarray(a).tolist() for a in self.m],
                "v": [np.asarray(a).tolist() for a in self.v]}

    @classmethod
    def from_dict(cls, doc):
        return cls([np.asarray(a, dtype=np.float64) for a in doc["m"]],
                   [np.asarray(a, dtype=np.float64) for a in doc["v"]],
                   int(doc["step"]), float(doc["beta1"]), float(doc["beta2"]),
                   float(doc["eps"]), list(doc["decay_mask"]))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)


def adamw_step(state, leaves, grads, lr, wd):
    """One AdamW update.

    ``x <- x - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * x`` where the
    decay term is skipped for leaves whose ``decay_mask`` entry is False.

    Args:
        state: AdamWState, updated in place.
        leaves: List of arrays.
        grads: Matching list of gradient arrays.
        lr: Learning rate.
        wd: Weight decay coefficient.

    Returns:
        List of updated arrays (new objects; inputs are not modified).
    """
    if len(leaves) != len(grads) or len(leaves) != len(state.m):
        raise ValueError("leaves, grads and optimizer state must have equal lengths")
    for k, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in leaf {k}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    mask = state.decay_mask or [True] * len(leaves)
    out = []
    for k, (x, g) in enumerate(zip(leaves, grads)):
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        upd = (state.m[k] / c1) / (np.sqrt(state.v[k] / c2) + state.eps)
        new = x - lr * upd
        if wd and mask[k]:
            new = new - lr * wd * x
        out.append(new)
    return out
