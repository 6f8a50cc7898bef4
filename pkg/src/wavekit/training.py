"""Supervised training of the encoder-solver on (residual, error) pairs."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import torch

import torch as _torch

DEFAULT_DTYPE = _torch.float32

__all__ = ["TrainingConfig", "TrainingDiverged", "train", "train_epoch", "evaluate_mse"]


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 40
    batch_size: int = 16
    learning_rate: float = 1e-4
    lr_decay_every: int = 40
    lr_decay_factor: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


class TrainingDiverged(RuntimeError):
    """Raised when the training loss turns non-finite."""


def prepare_tensors(samples, omega, dtype=DEFAULT_DTYPE):
    """Stack a sample list into training tensors (residuals, targets, media, gamma)."""
    if not samples:
        raise ValueError("dataset is empty")
    g = samples[0].m.grid
    scale = omega**2 * g.hx * g.hy
    r = np.stack([np.stack([s.r.values.real, s.r.values.imag]) for s in samples])
    e = np.stack([np.stack([s.e_true.values.real, s.e_true.values.imag]) for s in samples])
    m = np.stack([scale * s.m.values[None] for s in samples])
    gamma = np.stack([s.gamma.values[None] for s in samples])
    return {
        "r": torch.from_numpy(r).to(dtype),
        "e": torch.from_numpy(e).to(dtype),
        "m": torch.from_numpy(m).to(dtype),
        "gamma": torch.from_numpy(gamma).to(dtype),
    }


def _rotate_phase(pair, theta):
    """Rotate (re, im) channel pairs by a per-sample global phase."""
    c = torch.cos(theta).view(-1, 1, 1)
    s = torch.sin(theta).view(-1, 1, 1)
    re, im = pair[:, 0], pair[:, 1]
    return torch.stack([c * re - s * im, s * re + c * im], dim=1)


def _batch_loss(model, tensors, idx, theta=None):
    contexts = model.encoder(tensors["m"][idx])
    r = tensors["r"][idx]
    e = tensors["e"][idx]
    if theta is not None:
        # a global phase is an exact symmetry of H e = r: rotating each pair
        # diversifies the residual space without touching the sample budget
        r = _rotate_phase(r, theta)
        e = _rotate_phase(e, theta)
    out = model.forward_normalized(r, tensors["gamma"][idx], contexts)
    return ((out - e) ** 2).sum(dim=(1, 2, 3)).mean()


def train_epoch(model, tensors, optimizer, batch_size, rng, augment_phase=True):
    """One shuffled pass over the dataset; returns the mean batch loss."""
    n = tensors["r"].shape[0]
    perm = rng.permutation(n)
    total = 0.0
    batches = 0
    for start in range(0, n, batch_size):
        take = perm[start:start + batch_size]
        idx = torch.from_numpy(take.copy())
        theta = None
        if augment_phase:
            theta = torch.from_numpy(rng.uniform(0.0, 2.0 * np.pi, take.size)).to(
                tensors["r"].dtype)
        loss = _batch_loss(model, tensors, idx, theta)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        val = float(loss.detach())
        if not np.isfinite(val):
            raise TrainingDiverged(f"non-finite loss {val} in batch {batches}")
        total += val
        batches += 1
    return total / batches


def evaluate_mse(model, samples, omega, batch_size=32):
    """Mean over samples of the squared error norm (no gradient)."""
    tensors = prepare_tensors(samples, omega, model.dtype)
    n = tensors["r"].shape[0]
    total = 0.0
    with torch.no_grad():
        for start in range(0, n, batch_size):
            idx = torch.arange(start, min(start + batch_size, n))
            contexts = model.encoder(tensors["m"][idx])
            out = model.forward_normalized(tensors["r"][idx], tensors["gamma"][idx], contexts)
            total += float(((out - tensors["e"][idx]) ** 2).sum(dim=(1, 2, 3)).sum())
    return total / n


def train(model, samples, omega, config=None, on_epoch=None):
    """Minimize the batch MSE of the encoder-solver with ADAM.

    Shuffles per epoch with a seeded stream and halves the learning rate on
    the configured schedule. Returns the per-epoch mean training loss.
    Raises TrainingDiverged (leaving weights as they are) on a non-finite
    loss.
    """
    cfg = config or TrainingConfig()
    tensors = prepare_tensors(samples, omega, model.dtype)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        loss = train_epoch(model, tensors, optimizer, cfg.batch_size, rng)
        history.append(loss)
        if on_epoch is not None:
            on_epoch(epoch, loss, time.perf_counter() - t0)
        if cfg.lr_decay_every > 0 and (epoch + 1) % cfg.lr_decay_every == 0:
            for group in optimizer.param_groups:
                group["lr"] *= cfg.lr_decay_factor
    return history
