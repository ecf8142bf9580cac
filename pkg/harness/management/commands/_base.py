from django.core.management.base import BaseCommand, CommandError
from rest_framework.exceptions import ValidationError

from harness.config import engine_config, resolve_options
from harness.datasets import StreamPlan, ingest_csv, split_dataset
from harness.serializers import EngineConfigSerializer, flatten_errors
from mixture.exceptions import InputError, NumericalError, StateError

INPUT_ERROR_EXIT = 2
NUMERICAL_ERROR_EXIT = 3

ENGINE_OPTIONS = (
    'particles', 'alpha', 'blocks', 'test_blocks', 'minibatch', 'threads',
    'resample_threshold', 'max_iters', 'grad_tol', 'seed', 'ordering',
)
DATA_OPTIONS = ('train', 'test', 'data', 'split', 'test_fraction', 'normalize')


class EngineCommand(BaseCommand):
    """
    Shared flags and error mapping for the engine commands. Subclasses
    implement ``run(options)`` and list the option names a ``--config`` file
    may set in ``config_options``.
    """

    config_options = ENGINE_OPTIONS
    options_serializer = EngineConfigSerializer

    def add_config_argument(self, parser):
        parser.add_argument('--config', help="key=value file supplying any of the options below")

    def add_engine_arguments(self, parser):
        self.add_config_argument(parser)
        parser.add_argument('--particles', type=int, help="Number of SMC particles J")
        parser.add_argument('--alpha', type=float, help="CRP concentration")
        parser.add_argument('--blocks', type=int, help="Number of training blocks")
        parser.add_argument('--minibatch', type=int, help="Per-cluster minibatch size B (0 = off)")
        parser.add_argument('--seed', type=int, help="Master seed")
        parser.add_argument('--threads', type=int, help="Worker threads for the particle map")
        parser.add_argument('--resample-threshold', type=float, help="Resample when ESS < threshold * J")
        parser.add_argument('--max-iters', type=int, help="Optimizer iteration cap per refresh")
        parser.add_argument('--grad-tol', type=float, help="Optimizer gradient tolerance")
        parser.add_argument('--ordering', choices=['shuffled', 'time'], help="Order training rows are streamed in")

    def add_data_arguments(self, parser):
        parser.add_argument('--train', help="Training CSV")
        parser.add_argument('--test', help="Test CSV")
        parser.add_argument('--data', help="Single CSV split into train and test with --split")
        parser.add_argument('--split', choices=['random', 'tail'], help="How --data is split (default random)")
        parser.add_argument('--test-fraction', type=float, help="Held-out fraction of --data (default 0.1)")
        parser.add_argument('--test-blocks', type=int, help="Predict-then-absorb blocks over the test set (0 = score only)")
        parser.add_argument('--normalize', action='store_true', default=None, help="Standardize every column")

    def handle(self, *args, **options):
        try:
            return self.run(options)
        except ValidationError as exc:
            raise CommandError(flatten_errors(exc.detail), returncode=INPUT_ERROR_EXIT) from exc
        except NumericalError as exc:
            raise CommandError(f"Numerical failure: {exc}", returncode=NUMERICAL_ERROR_EXIT) from exc
        except (InputError, StateError) as exc:
            raise CommandError(str(exc), returncode=INPUT_ERROR_EXIT) from exc

    def run(self, options):
        raise NotImplementedError('subclasses of EngineCommand must provide a run() method')

    def resolve(self, options):
        return resolve_options(options, self.config_options, options.get('config'), self.options_serializer)

    def require(self, resolved, *names):
        missing = [f"--{name.replace('_', '-')}" for name in names if not resolved.get(name)]
        if missing:
            raise InputError(f"Missing required option(s): {', '.join(missing)}.")

    def engine_config(self, resolved):
        return engine_config(resolved)

    def load_train_test(self, resolved):
        normalize = resolved['normalize']
        if resolved.get('data'):
            dataset = ingest_csv(resolved['data'], normalize)
            return split_dataset(dataset, resolved['split'], resolved['test_fraction'], resolved['seed'])
        if not resolved.get('train') or not resolved.get('test'):
            raise InputError("Provide --train and --test, or --data.")
        train = ingest_csv(resolved['train'], normalize)
        test = ingest_csv(resolved['test'], normalize=False)
        return train, train.normalization.apply(test)

    def stream_plan(self, resolved, train):
        return StreamPlan.even(
            train.size, resolved['blocks'], ordering=resolved['ordering'], minibatch=resolved['minibatch'],
        )

    def success(self, message):
        self.stdout.write(self.style.SUCCESS(message))
