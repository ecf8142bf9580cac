"""
Datasets for the harness: the piecewise-periodic synthetic generator, CSV
ingestion with optional standardization, train/test splits and the batch
schedule an ensemble is streamed through.
"""
import logging
from dataclasses import dataclass, field, replace
from math import ceil

import numpy as np
import pandas as pd

from mixture.exceptions import InputError
from mixture.kernel_gp import as_points
from mixture.streams import data_stream

logger = logging.getLogger(__name__)

# Indices into the data stream family; each purpose gets its own generator.
SYNTHETIC_STREAM = 0
SHUFFLE_STREAM = 1
SPLIT_STREAM = 2


@dataclass(frozen=True)
class Normalization:
    """Per-column location and scale; identity when nothing was standardized."""

    input_mean: np.ndarray
    input_sd: np.ndarray
    output_mean: float = 0.0
    output_sd: float = 1.0

    @classmethod
    def identity(cls, dim):
        return cls(input_mean=np.zeros(dim), input_sd=np.ones(dim))

    @classmethod
    def fit(cls, inputs, outputs, columns=None):
        """Column means and population standard deviations; a constant column is an error."""
        inputs = as_points(inputs)
        outputs = np.asarray(outputs, dtype=float).ravel()
        table = np.column_stack([inputs, outputs])
        sd = table.std(axis=0)
        names = columns or [f"column {i + 1}" for i in range(table.shape[1])]
        constant = [name for name, value in zip(names, sd) if not value > 0]
        if constant:
            raise InputError(f"Cannot normalize zero-variance column(s): {', '.join(constant)}.")
        mean = table.mean(axis=0)
        return cls(
            input_mean=mean[:-1], input_sd=sd[:-1],
            output_mean=float(mean[-1]), output_sd=float(sd[-1]),
        )

    def normalize_inputs(self, inputs):
        return (as_points(inputs) - self.input_mean) / self.input_sd

    def normalize_outputs(self, outputs):
        return (np.asarray(outputs, dtype=float) - self.output_mean) / self.output_sd

    def denormalize_inputs(self, inputs):
        return as_points(inputs) * self.input_sd + self.input_mean

    def denormalize_outputs(self, outputs):
        return np.asarray(outputs, dtype=float) * self.output_sd + self.output_mean

    def denormalize_variance(self, variance):
        return np.asarray(variance, dtype=float) * self.output_sd ** 2

    def denormalize_log_density(self, log_density):
        return np.asarray(log_density, dtype=float) - np.log(self.output_sd)

    def apply(self, dataset):
        """Standardize a raw dataset with these parameters (e.g. a test file with training statistics)."""
        if dataset.dim != len(self.input_mean):
            raise InputError(f"Dataset has {dataset.dim} input columns, normalization expects {len(self.input_mean)}.")
        return replace(
            dataset,
            inputs=self.normalize_inputs(dataset.inputs),
            outputs=self.normalize_outputs(dataset.outputs),
            normalization=self,
        )

    def as_dict(self):
        return {
            'input_mean': [float(v) for v in self.input_mean],
            'input_sd': [float(v) for v in self.input_sd],
            'output_mean': float(self.output_mean),
            'output_sd': float(self.output_sd),
        }

    @classmethod
    def from_dict(cls, values):
        return cls(
            input_mean=np.asarray(values['input_mean'], dtype=float),
            input_sd=np.asarray(values['input_sd'], dtype=float),
            output_mean=float(values['output_mean']),
            output_sd=float(values['output_sd']),
        )


@dataclass(frozen=True)
class Dataset:
    """Model-space inputs and outputs; ``normalization`` maps them back to file units."""

    inputs: np.ndarray
    outputs: np.ndarray
    normalization: Normalization = None
    # Noiseless function values, known only for synthetic data.
    truth: np.ndarray = None
    columns: tuple = ()

    def __post_init__(self):
        inputs = as_points(self.inputs)
        outputs = np.asarray(self.outputs, dtype=float).ravel()
        if len(inputs) != len(outputs):
            raise InputError(f"Dataset inputs and outputs differ in length ({len(inputs)} != {len(outputs)}).")
        object.__setattr__(self, 'inputs', inputs)
        object.__setattr__(self, 'outputs', outputs)
        if self.normalization is None:
            object.__setattr__(self, 'normalization', Normalization.identity(inputs.shape[1]))
        if not self.columns:
            names = ('x',) if inputs.shape[1] == 1 else tuple(f"x{i}" for i in range(inputs.shape[1]))
            object.__setattr__(self, 'columns', names + ('y',))

    @property
    def size(self):
        return len(self.outputs)

    @property
    def dim(self):
        return self.inputs.shape[1]

    @property
    def input_columns(self):
        return list(self.columns[:-1])

    def subset(self, indices):
        indices = np.asarray(indices, dtype=int)
        return replace(
            self,
            inputs=self.inputs[indices],
            outputs=self.outputs[indices],
            truth=None if self.truth is None else self.truth[indices],
        )

    def time_ordered(self):
        """Rows sorted by the first input column (stable for ties)."""
        return self.subset(np.argsort(self.inputs[:, 0], kind='stable'))

    def raw_inputs(self):
        return self.normalization.denormalize_inputs(self.inputs)

    def raw_outputs(self):
        return self.normalization.denormalize_outputs(self.outputs)

    def to_frame(self):
        frame = pd.DataFrame(self.raw_inputs(), columns=self.input_columns)
        frame[self.columns[-1]] = self.raw_outputs()
        return frame

    def truth_frame(self):
        """Inputs with the noiseless function value ``f``; synthetic data only."""
        if self.truth is None:
            raise InputError("Dataset carries no noiseless function values.")
        frame = pd.DataFrame(self.raw_inputs(), columns=self.input_columns)
        frame['f'] = self.truth
        return frame


@dataclass(frozen=True)
class SyntheticSpec:
    """
    Piecewise-periodic regression problem. ``frequencies`` are multiples of
    pi, one per regime; ``breakpoints`` separate consecutive regimes.
    """

    n_train: int = 1000
    n_test: int = 100
    noise_sd: float = 1.0
    seed: int = 0
    domain: tuple = (0.0, 10.0)
    breakpoints: tuple = (5.0,)
    frequencies: tuple = (0.6, 4.0)

    def __post_init__(self):
        if self.n_train < 1 or self.n_test < 1:
            raise InputError(f"n_train and n_test must be >= 1, got {self.n_train} and {self.n_test}.")
        if not self.noise_sd >= 0:
            raise InputError(f"noise_sd must be >= 0, got {self.noise_sd}.")
        low, high = self.domain
        if not low < high:
            raise InputError(f"Domain must satisfy low < high, got {self.domain}.")
        if len(self.frequencies) != len(self.breakpoints) + 1:
            raise InputError(
                f"Need one frequency per regime: {len(self.breakpoints)} breakpoints, "
                f"{len(self.frequencies)} frequencies."
            )
        if list(self.breakpoints) != sorted(self.breakpoints):
            raise InputError(f"Breakpoints must be increasing, got {self.breakpoints}.")


def regime_function(x, breakpoints=(5.0,), frequencies=(0.6, 4.0)):
    x = np.asarray(x, dtype=float)
    regime = np.searchsorted(np.asarray(breakpoints, dtype=float), x, side='right')
    return np.sin(np.asarray(frequencies, dtype=float)[regime] * np.pi * x)


def generate_synthetic(spec):
    """Uniform inputs on the domain, regime function plus Gaussian noise."""
    rng = data_stream(spec.seed, SYNTHETIC_STREAM)
    total = spec.n_train + spec.n_test
    x = rng.uniform(spec.domain[0], spec.domain[1], size=total)
    f = regime_function(x, spec.breakpoints, spec.frequencies)
    y = f + spec.noise_sd * rng.standard_normal(total)
    data = Dataset(inputs=x, outputs=y, truth=f)
    train = data.subset(np.arange(spec.n_train))
    test = data.subset(np.arange(spec.n_train, total))
    return train, test


def _strip(frame):
    return frame.fillna('').apply(lambda column: column.str.strip())


def ingest_csv(path, normalize=False):
    """
    Read a numeric CSV: the first columns are inputs, the last the output.

    A first row made only of non-numeric fields is taken as the header. Rows
    with any other non-numeric or non-finite field are rejected, reporting
    their line numbers.
    """
    try:
        frame = pd.read_csv(path, header=None, dtype=str, skip_blank_lines=False, keep_default_na=False)
    except FileNotFoundError as exc:
        raise InputError(f"CSV file {path} does not exist.") from exc
    except pd.errors.EmptyDataError as exc:
        raise InputError(f"CSV file {path} is empty.") from exc
    except pd.errors.ParserError as exc:
        raise InputError(f"CSV file {path} is malformed: {exc}") from exc

    frame = _strip(frame)
    frame.index = np.arange(1, len(frame) + 1)  # file line numbers
    frame = frame[(frame != '').any(axis=1)]
    if frame.empty:
        raise InputError(f"CSV file {path} is empty.")
    if frame.shape[1] < 2:
        raise InputError(f"CSV file {path} needs at least 2 columns, found {frame.shape[1]}.")

    numeric = frame.apply(pd.to_numeric, errors='coerce')
    columns = ()
    if numeric.iloc[0].isna().all():
        columns = tuple(frame.iloc[0])
        frame, numeric = frame.iloc[1:], numeric.iloc[1:]
    if numeric.empty:
        raise InputError(f"CSV file {path} has a header but no data rows.")

    values = numeric.to_numpy(dtype=float)
    bad = ~np.isfinite(values).all(axis=1)
    if bad.any():
        lines = ', '.join(str(line) for line in numeric.index[bad])
        raise InputError(f"CSV file {path} has non-numeric values on line(s) {lines}.")

    dataset = Dataset(inputs=values[:, :-1], outputs=values[:, -1], columns=columns)
    logger.info(f"Read {dataset.size} rows with {dataset.dim} input column(s) from {path}")
    if normalize:
        normalization = Normalization.fit(dataset.inputs, dataset.outputs, list(columns) or None)
        dataset = normalization.apply(dataset)
    return dataset


def split_dataset(dataset, mode='random', fraction=0.1, seed=0):
    """Hold out ``fraction`` of the rows: a random subset, or the tail of the file."""
    if not 0.0 < fraction < 1.0:
        raise InputError(f"Test fraction must lie in (0, 1), got {fraction}.")
    n_test = int(ceil(fraction * dataset.size))
    if n_test >= dataset.size:
        raise InputError(f"Cannot hold out {n_test} of {dataset.size} rows and keep a training set.")
    if mode == 'tail':
        test_rows = np.arange(dataset.size - n_test, dataset.size)
    elif mode == 'random':
        rng = data_stream(seed, SPLIT_STREAM)
        test_rows = np.sort(rng.permutation(dataset.size)[:n_test])
    else:
        raise InputError(f"Unknown split mode {mode!r}; expected 'random' or 'tail'.")
    train_mask = np.ones(dataset.size, dtype=bool)
    train_mask[test_rows] = False
    return dataset.subset(np.flatnonzero(train_mask)), dataset.subset(test_rows)


@dataclass(frozen=True)
class StreamPlan:
    """Block sizes for the training stream and the order rows are dealt out in."""

    block_sizes: tuple
    ordering: str = 'shuffled'
    minibatch: int = 0
    total: int = field(init=False)

    def __post_init__(self):
        sizes = tuple(int(size) for size in self.block_sizes)
        if not sizes or min(sizes) < 1:
            raise InputError(f"Every block needs at least one row, got sizes {sizes}.")
        if self.ordering not in ('shuffled', 'time'):
            raise InputError(f"Unknown ordering {self.ordering!r}; expected 'shuffled' or 'time'.")
        if self.minibatch < 0:
            raise InputError(f"minibatch must be >= 0, got {self.minibatch}.")
        object.__setattr__(self, 'block_sizes', sizes)
        object.__setattr__(self, 'total', sum(sizes))

    @classmethod
    def even(cls, total, blocks, ordering='shuffled', minibatch=0):
        if blocks < 1 or blocks > total:
            raise InputError(f"Cannot split {total} rows into {blocks} non-empty blocks.")
        sizes = [len(chunk) for chunk in np.array_split(np.arange(total), blocks)]
        return cls(block_sizes=tuple(sizes), ordering=ordering, minibatch=minibatch)

    @property
    def blocks(self):
        return len(self.block_sizes)

    def batches(self, dataset, seed=0):
        """The (inputs, outputs) blocks of ``dataset`` in streaming order."""
        if dataset.size != self.total:
            raise InputError(f"Plan covers {self.total} rows, dataset has {dataset.size}.")
        if self.ordering == 'shuffled':
            order = data_stream(seed, SHUFFLE_STREAM).permutation(dataset.size)
        else:
            order = np.arange(dataset.size)
        bounds = np.cumsum((0,) + self.block_sizes)
        return [
            (dataset.inputs[order[start:stop]], dataset.outputs[order[start:stop]])
            for start, stop in zip(bounds[:-1], bounds[1:])
        ]
