"""Dice loss, cross-entropy loss, and their alpha-weighted blend.

Dice runs on the foreground-channel probability of the binary task; the
cross entropy is computed from logits through log-softmax for stability
and mean-reduced over voxels so the blend weight keeps the same balance
at any window size.
"""

from __future__ import annotations

from dataclasses import dataclass

from .autograd import Tensor, concat

DICE_EPS = 1e-5

LOSS_KINDS = ("dice", "ce", "dice_ce")


@dataclass
class LossConfig:
    kind: str = "dice_ce"
    alpha: float = 0.5
    dice_eps: float = DICE_EPS

    def validate(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.dice_eps <= 0:
            raise ValueError("dice_eps must be positive")
        return self


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def dice_loss(target, fg_prob, eps=DICE_EPS):
    """1 - 2*sum(G*Y) / (sum(G) + sum(Y) + eps), differentiable in Y."""
    target, fg_prob = _wrap(target), _wrap(fg_prob)
    if target.shape != fg_prob.shape:
        raise ValueError(f"shape mismatch: {target.shape} vs {fg_prob.shape}")
    overlap = (target * fg_prob).sum()
    denom = target.sum() + fg_prob.sum() + eps
    return 1.0 - (2.0 * overlap) / denom


def cross_entropy_loss(onehot, logits):
    """Mean over voxels of -sum_c G_c * log softmax(logits)_c.

    ``logits`` has the class axis first; ``onehot`` matches its shape.
    To score ready-made probabilities, pass their elementwise log as the
    logits (log-softmax of log p is log p when p sums to one).
    """
    onehot, logits = _wrap(onehot), _wrap(logits)
    if onehot.shape != logits.shape:
        raise ValueError(f"shape mismatch: {onehot.shape} vs {logits.shape}")
    logp = logits.log_softmax(axis=0)
    n_vox = logits.size // logits.shape[0]
    return -(onehot * logp).sum() / float(n_vox)


def label_onehot(labels) -> Tensor:
    """Binary (X, Y, Z) labels -> (2, X, Y, Z) one-hot float tensor."""
    fg = _wrap(labels)
    bg = 1.0 - fg
    return concat([bg.reshape((1,) + fg.shape), fg.reshape((1,) + fg.shape)], axis=0)


def dice_ce_loss(labels, logits, alpha=0.5, eps=DICE_EPS):
    """Blend alpha * dice + (1 - alpha) * ce on logits for binary labels.

    Returns (total, dice_term, ce_term); the endpoints alpha=1 and
    alpha=0 reproduce the component losses exactly.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    labels, logits = _wrap(labels), _wrap(logits)
    onehot = label_onehot(labels)
    d = dice_loss(onehot[1], logits.softmax(axis=0)[1], eps=eps)
    c = cross_entropy_loss(onehot, logits)
    if alpha == 1.0:
        total = d
    elif alpha == 0.0:
        total = c
    else:
        total = alpha * d + (1.0 - alpha) * c
    return total, d, c


def segmentation_loss(cfg: LossConfig, labels, logits):
    """Loss selected by config; always reports both components."""
    total, d, c = dice_ce_loss(labels, logits, alpha=cfg.alpha, eps=cfg.dice_eps)
    if cfg.kind == "dice":
        return d, d, c
    if cfg.kind == "ce":
        return c, d, c
    return total, d, c
