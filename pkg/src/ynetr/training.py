"""Training loop: balanced window draws, Dice-CE descent, checkpoints.

Each optimizer step uses its own counter-keyed random stream, so a run
is bitwise reproducible and resuming from a checkpoint at step k replays
exactly the draws an uninterrupted run would have made.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor
from .checkpoint import save_checkpoint
from .losses import LossConfig, segmentation_loss
from .optim import AdamW
from .sampling import (
    NoBackgroundError,
    NoForegroundError,
    SamplerConfig,
    pad_to_window,
    sample_any_window,
    sample_window,
)
from .volume import LabelVolume, Volume3D, normalize_intensity
from .wavelet import split_frequency

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, step, value):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step
        self.value = value


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 300
    steps_per_epoch: int = 100
    batch_size: int = 1
    weight_decay: float = 0.01
    loss: LossConfig = field(default_factory=LossConfig)
    deterministic: bool = True
    seed: int = 0
    checkpoint_every: int = 0

    def validate(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 1 or self.steps_per_epoch < 1 or self.batch_size < 1:
            raise ValueError("epochs, steps_per_epoch and batch_size must be >= 1")
        self.loss.validate()
        return self

    @property
    def total_steps(self):
        return self.epochs * self.steps_per_epoch


@dataclass
class TrainingCase:
    """One volume with its precomputed frequency pair, padded to window."""

    name: str
    lf: np.ndarray
    hf: np.ndarray
    label: np.ndarray
    fg_coords: np.ndarray


@dataclass
class StepRecord:
    step: int
    loss: float
    dice: float
    ce: float


def prepare_case(name, volume: Volume3D, label: LabelVolume, window,
                 hu_window=(-175.0, 250.0)) -> TrainingCase:
    """Normalize, pad to the sampling window, and split frequencies once."""
    norm = normalize_intensity(volume, *hu_window)
    vox = pad_to_window(norm.voxels, window)
    lab = pad_to_window(label.labels, window)
    pair = split_frequency(Volume3D(vox, volume.spacing_mm))
    return TrainingCase(
        name=name,
        lf=pair.lf.voxels,
        hf=pair.hf.voxels,
        label=lab,
        fg_coords=np.argwhere(lab > 0),
    )


def _draw(case, want_positive, rng, sampler_cfg):
    try:
        return sample_window(
            case.lf, case.hf, case.label, want_positive, rng, sampler_cfg,
            fg_coords=case.fg_coords,
        )
    except NoForegroundError:
        log.warning("case %s has no tumor voxels; substituting a negative window", case.name)
        return sample_window(case.lf, case.hf, case.label, False, rng, sampler_cfg)
    except NoBackgroundError:
        log.warning("case %s has no tumor-free window; substituting an unconstrained window",
                    case.name)
        return sample_any_window(case.lf, case.hf, case.label, rng, sampler_cfg)


def step_rng(seed, step):
    """Counter-keyed stream: deterministic and resume-safe."""
    return np.random.default_rng([seed, step])


def train(model, cases, cfg: TrainConfig, sampler_cfg: SamplerConfig,
          optimizer: AdamW | None = None, start_step: int = 0,
          checkpoint_path=None, progress=None):
    """Run (or resume) the optimization; returns (history, optimizer).

    ``start_step`` is the number of steps already taken; the loop runs
    until ``cfg.total_steps``.
    """
    cfg.validate()
    sampler_cfg.validate()
    if not cases:
        raise ValueError("training needs at least one case")
    if optimizer is None:
        optimizer = AdamW(
            model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay
        )
    history = []
    inv_batch = 1.0 / cfg.batch_size
    for step in range(start_step + 1, cfg.total_steps + 1):
        rng = step_rng(cfg.seed, step)
        optimizer.zero_grad()
        loss_sum = dice_sum = ce_sum = 0.0
        for b in range(cfg.batch_size):
            draw_index = (step - 1) * cfg.batch_size + b
            want_positive = draw_index % 2 == 0
            case = cases[int(rng.integers(len(cases)))]
            sample = _draw(case, want_positive, rng, sampler_cfg)
            logits = model(Tensor(sample.lf[None]), Tensor(sample.hf[None]))
            total, d, c = segmentation_loss(cfg.loss, sample.label.astype(np.float32), logits)
            loss_val = total.item()
            if not math.isfinite(loss_val):
                raise TrainingDiverged(step, loss_val)
            loss_sum += loss_val
            dice_sum += d.item()
            ce_sum += c.item()
            scaled = total * inv_batch if cfg.batch_size > 1 else total
            scaled.backward()
        optimizer.step()
        rec = StepRecord(step, loss_sum * inv_batch, dice_sum * inv_batch, ce_sum * inv_batch)
        history.append(rec)
        if progress is not None:
            progress(rec)
        if (
            checkpoint_path is not None
            and cfg.checkpoint_every
            and step % cfg.checkpoint_every == 0
        ):
            save_checkpoint(checkpoint_path, model, optimizer, step=step)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model, optimizer, step=cfg.total_steps)
    return history, optimizer


def write_history_csv(history, path):
    with open(path, "w") as fh:
        fh.write("step,loss,dice_component,ce_component\n")
        for rec in history:
            fh.write(f"{rec.step},{rec.loss!r},{rec.dice!r},{rec.ce!r}\n")


def read_history_csv(path):
    records = []
    with open(path) as fh:
        next(fh)
        for line in fh:
            s, l, d, c = line.strip().split(",")
            records.append(StepRecord(int(s), float(l), float(d), float(c)))
    return records
