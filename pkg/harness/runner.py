"""
Evaluation protocols built on the engine.

Every protocol predicts a block before absorbing it, and the reported metrics
are recomputed from the recorded per-point predictions.
"""
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from mixture.bandit import WarmStart
from mixture.engine import ensemble_predict, init_ensemble, step
from mixture.exceptions import InputError

from .datasets import Normalization, StreamPlan
from .persistence import load_arm_pool

logger = logging.getLogger(__name__)


@dataclass
class RunRecord:
    """Outcome of one protocol run; ``metrics`` is None until the run completes."""

    command: str
    config: dict
    seed: int
    steps: list = field(default_factory=list)
    predictions: pd.DataFrame = None
    metrics: dict = None
    ensemble: object = None

    @property
    def optimizer_runs(self):
        return sum(report.optimizer_runs for report in self.steps)

    @property
    def optimizer_iterations(self):
        return sum(report.optimizer_iterations for report in self.steps)


def metrics_from_predictions(predictions):
    """Summed log density and mean squared error, read off the prediction table."""
    if predictions is None or predictions.empty:
        raise InputError("No predictions were recorded.")
    errors = predictions['y'].to_numpy() - predictions['mean'].to_numpy()
    return {
        'pred_ll': float(predictions['log_density'].sum()),
        'pred_mse': float(np.mean(errors ** 2)),
        'n_predictions': int(len(predictions)),
    }


def _config_snapshot(config, **extra):
    snapshot = {
        'particles': config.particles,
        'alpha': config.alpha,
        'minibatch': config.minibatch,
        'resample_threshold': config.resample_threshold,
        'threads': config.threads,
        'max_iters': config.optimizer.max_iters,
        'grad_tol': config.optimizer.grad_tol,
    }
    snapshot.update(extra)
    return snapshot


def predict_rows(ens, dataset, rows, stage):
    """
    Predict ``rows`` of ``dataset`` with the current ensemble and return them
    in file units (denormalized, output offset added back).
    """
    rows = np.asarray(rows, dtype=int)
    offset = float(ens.metadata.get('output_offset', 0.0))
    normalization = dataset.normalization
    prediction = ensemble_predict(ens, dataset.inputs[rows])
    frame = pd.DataFrame(normalization.denormalize_inputs(dataset.inputs[rows]), columns=dataset.input_columns)
    frame.insert(0, 'row', rows)
    frame.insert(0, 'stage', stage)
    frame['y'] = normalization.denormalize_outputs(dataset.outputs[rows])
    frame['mean'] = normalization.denormalize_outputs(prediction.mean + offset)
    frame['var'] = normalization.denormalize_variance(prediction.variance)
    frame['log_density'] = normalization.denormalize_log_density(
        prediction.log_density(dataset.outputs[rows] - offset)
    )
    if dataset.truth is not None:
        frame['f'] = dataset.truth[rows]
    return frame


def _centered(inputs, outputs, offset):
    return inputs, outputs - offset


def _finish(record, frames, started, ens):
    record.predictions = pd.concat(frames, ignore_index=True)
    record.ensemble = ens
    metrics = metrics_from_predictions(record.predictions)
    metrics.update({
        'particles': ens.size,
        'steps': ens.step_counter,
        'optimizer_runs': record.optimizer_runs,
        'optimizer_iterations': record.optimizer_iterations,
        'wall_time_seconds': time.perf_counter() - started,
    })
    record.metrics = metrics
    logger.info(
        f"{record.command} finished in {metrics['wall_time_seconds']:.2f}s: "
        f"pred_ll={metrics['pred_ll']:.3f} pred_mse={metrics['pred_mse']:.4f}"
    )
    return record


def _start(train_batches, config, seed, warm_start, normalization, offset):
    inputs, outputs = train_batches[0]
    ens = init_ensemble(_centered(inputs, outputs, offset), config, master_seed=seed, warm_start=warm_start)
    ens.metadata.update({'output_offset': offset, 'normalization': normalization.as_dict()})
    return ens


def run_fit(train, test, plan, config, seed=0, test_blocks=5, warm_start=None, command='fit'):
    """
    Stream the training blocks through a fresh ensemble, then walk the test
    set in ``test_blocks`` blocks, predicting each before absorbing it. With
    ``test_blocks=0`` the test set is scored once and never absorbed.
    """
    if test.size == 0:
        raise InputError("The test set is empty.")
    # The plan sets the per-cluster minibatch for the streamed run.
    config = replace(config, minibatch=plan.minibatch)
    started = time.perf_counter()
    record = RunRecord(
        command=command,
        config=_config_snapshot(config, blocks=plan.blocks, ordering=plan.ordering, test_blocks=test_blocks),
        seed=seed,
    )
    offset = float(np.mean(train.outputs))
    batches = plan.batches(train, seed)
    logger.info(f"{command}: {train.size} training rows in {plan.blocks} block(s), {test.size} test rows")

    ens = _start(batches, config, seed, warm_start, train.normalization, offset)
    record.steps.append(ens.last_report)
    for inputs, outputs in batches[1:]:
        record.steps.append(step(ens, _centered(inputs, outputs, offset)))

    frames = []
    if test_blocks == 0:
        frames.append(predict_rows(ens, test, np.arange(test.size), stage=0))
    else:
        for stage, rows in enumerate(np.array_split(np.arange(test.size), min(test_blocks, test.size))):
            frames.append(predict_rows(ens, test, rows, stage=stage))
            record.steps.append(step(ens, _centered(test.inputs[rows], test.outputs[rows], offset)))
    return _finish(record, frames, started, ens)


def run_warmfit(train, test, plan, config, pool_path, seed=0, test_blocks=5,
                allow_new_arm=False, refine=False, run_id='warm', merge_tol=0.05):
    """``run_fit`` with hyperparameters selected from the arm pool stored at ``pool_path``."""
    pool = load_arm_pool(pool_path)
    if not len(pool):
        raise InputError(f"Arm pool {pool_path} holds no arms.")
    initial = len(pool)
    warm_start = WarmStart(
        pool=pool, allow_new_arm=allow_new_arm, refine=refine, run_id=run_id, merge_tol=merge_tol,
    )
    record = run_fit(train, test, plan, config, seed, test_blocks, warm_start, command='warm-fit')
    record.config.update(
        allow_new_arm=allow_new_arm, refine=refine, merge_tol=merge_tol, pool_path=str(pool_path),
    )
    record.metrics.update(arms=initial, arms_added=len(pool) - initial)
    return record


def run_track(data, split_fraction, config, seed=0, blocks=1):
    """
    One-step-ahead tracking over time-ordered ``data``: fit the first
    ``split_fraction`` of the rows, then predict each remaining point before
    absorbing it as a singleton batch.
    """
    n_train = int(np.floor(split_fraction * data.size))
    if n_train < 1 or n_train >= data.size:
        raise InputError(f"split_fraction {split_fraction} leaves no training or no tracking rows.")
    started = time.perf_counter()
    record = RunRecord(
        command='track',
        config=_config_snapshot(config, split_fraction=split_fraction, blocks=blocks),
        seed=seed,
    )
    train = data.subset(np.arange(n_train))
    plan = StreamPlan.even(train.size, min(blocks, train.size), ordering='time', minibatch=config.minibatch)
    batches = plan.batches(train, seed)
    offset = float(np.mean(train.outputs))

    ens = _start(batches, config, seed, None, data.normalization, offset)
    record.steps.append(ens.last_report)
    for inputs, outputs in batches[1:]:
        record.steps.append(step(ens, _centered(inputs, outputs, offset)))

    frames = []
    for row in range(n_train, data.size):
        frames.append(predict_rows(ens, data, [row], stage=row - n_train))
        record.steps.append(step(ens, _centered(data.inputs[row:row + 1], data.outputs[row:row + 1], offset)))
    return _finish(record, frames, started, ens)


def score_model(ens, test):
    """Score a fitted ensemble on ``test`` without updating it."""
    if test.size == 0:
        raise InputError("The test set is empty.")
    started = time.perf_counter()
    record = RunRecord(command='score', config=_config_snapshot(ens.config), seed=ens.master_seed)
    frames = [predict_rows(ens, test, np.arange(test.size), stage=0)]
    return _finish(record, frames, started, ens)


def normalization_of(ens):
    """The normalization a saved model was trained under (identity if none was stored)."""
    stored = ens.metadata.get('normalization')
    if stored is None:
        return Normalization.identity(ens.dim)
    return Normalization.from_dict(stored)
