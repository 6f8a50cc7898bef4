"""Light-weight retraining of the encoder-solver between inversion windows.

The dataset self-bootstraps: during the first few epochs every stored pair
spawns a new one by running a single V-cycle-preconditioned FGMRES step from
the network's own error estimate and re-deriving the matching residual, so
the appended pairs reflect the network's current failure modes while
satisfying the exact linear relation H e = r.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import torch

from .data import TrainingSample, generate_sample
from .grid import ComplexField, HelmholtzProblem, helmholtz_operator
from .krylov import fgmres
from .multigrid import VCyclePreconditioner
from .training import TrainingDiverged, evaluate_mse, prepare_tensors, train_epoch

__all__ = ["RetrainConfig", "RetrainReport", "should_retrain", "retrain"]

_UNREACHABLE_TOL = 1e-300


@dataclass(frozen=True)
class RetrainConfig:
    epochs: int = 30
    data_epochs: int = 3
    initial_size: int = 128
    batch_size: int = 16
    learning_rate: float = 1e-4
    stride: int = 1

    def __post_init__(self):
        if self.data_epochs > self.epochs:
            raise ValueError("data_epochs cannot exceed epochs")
        if self.initial_size < 1:
            raise ValueError("initial_size must be at least 1")
        if self.stride < 0:
            raise ValueError("stride must be non-negative")

    @property
    def final_size(self):
        # each data epoch doubles the dataset
        return self.initial_size * 2**self.data_epochs


@dataclass(frozen=True)
class RetrainReport:
    omega: float
    dataset_final: int
    epochs_run: int
    final_mse: float
    seconds: float
    reverted: bool
    growth: tuple
    loss_history: tuple


def should_retrain(window_index, stride=1):
    """Retrain gate for frequency-continuation windows.

    stride 1 retrains before every window, stride 0 disables retraining
    entirely (the no-retraining baseline), stride k hits every k-th window.
    """
    if stride == 0:
        return False
    return window_index % stride == 0


def retrain(model, m_current, gamma, omega, config=None, seed=0):
    """Run the self-bootstrapping retraining session for the current medium.

    Builds an initial dataset for m_current, then alternates training epochs
    with dataset-doubling passes for the first `data_epochs` epochs. On a
    non-finite loss the incoming weights are restored and the report is
    flagged. Returns (model, report); the model is updated in place.
    """
    cfg = config or RetrainConfig()
    t0 = time.perf_counter()
    problem = HelmholtzProblem(m_current, gamma, omega)
    h = helmholtz_operator(problem)
    vcycle = VCyclePreconditioner(problem)
    shape = problem.grid.shape

    dataset = [
        generate_sample(m_current, gamma, omega, np.random.default_rng(seed + i),
                        preconditioner=vcycle)
        for i in range(cfg.initial_size)
    ]
    growth = [len(dataset)]

    snapshot = model.clone_state()
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    shuffle_rng = np.random.default_rng(seed + 7919)
    tensors = prepare_tensors(dataset, omega, model.dtype)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        try:
            loss = train_epoch(model, tensors, optimizer, cfg.batch_size, shuffle_rng)
        except TrainingDiverged:
            model.restore_state(snapshot)
            return model, RetrainReport(omega, len(dataset), epoch, float("nan"),
                                        time.perf_counter() - t0, True,
                                        tuple(growth), tuple(history))
        history.append(loss)
        if epoch <= cfg.data_epochs:
            contexts = model.context(problem)
            appended = []
            for s in list(dataset):
                e_new = model.apply(s.r.values, gamma.values, contexts)
                e_ref, _ = fgmres(h, vcycle, s.r.values.ravel(), x0=e_new.ravel(),
                                  tol=_UNREACHABLE_TOL, max_iter=1)
                r_ref = h(e_ref)
                appended.append(TrainingSample(
                    r=ComplexField(problem.grid, r_ref.reshape(shape)),
                    e_true=ComplexField(problem.grid, e_ref.reshape(shape)),
                    m=m_current,
                    gamma=gamma,
                ))
            dataset.extend(appended)
            growth.append(len(dataset))
            tensors = prepare_tensors(dataset, omega, model.dtype)

    final_mse = evaluate_mse(model, dataset, omega)
    report = RetrainReport(omega, len(dataset), cfg.epochs, final_mse,
                           time.perf_counter() - t0, False, tuple(growth),
                           tuple(history))
    return model, report
