"""
Option resolution for the management commands.

Precedence, lowest first: ``settings.STREAMGP`` (itself read from the
environment), a key=value ``--config`` file, then command-line flags.
"""
import logging
from pathlib import Path

from django.conf import settings
from dotenv import dotenv_values

from mixture.engine import EngineConfig
from mixture.exceptions import InputError
from mixture.kernel_gp import OptimizerConfig

from .serializers import EngineConfigSerializer, flatten_errors

logger = logging.getLogger(__name__)

SETTINGS_KEYS = {
    'particles': 'PARTICLES',
    'alpha': 'ALPHA',
    'blocks': 'BLOCKS',
    'test_blocks': 'TEST_BLOCKS',
    'minibatch': 'MINIBATCH',
    'threads': 'THREADS',
    'resample_threshold': 'RESAMPLE_THRESHOLD',
    'max_iters': 'MAX_ITERS',
    'grad_tol': 'GRAD_TOL',
    'seed': 'SEED',
}


def option_name(key):
    """``--Test-Blocks`` and ``TEST_BLOCKS`` both name the ``test_blocks`` option."""
    return key.strip().lstrip('-').replace('-', '_').lower()


def settings_defaults():
    engine = getattr(settings, 'STREAMGP', {})
    return {key: engine[name] for key, name in SETTINGS_KEYS.items() if name in engine}


def read_config_file(path):
    if not Path(path).is_file():
        raise InputError(f"Config file {path} does not exist.")
    options = {}
    for key, value in dotenv_values(path).items():
        if value is None:
            raise InputError(f"Config file {path}: key {key} has no value.")
        options[option_name(key)] = value
    return options


def resolve_options(cli_options, known_keys, config_path=None, serializer_class=EngineConfigSerializer):
    """
    Merge and validate a command's options; returns a plain dict.

    ``known_keys`` limits what a config file may set. ``serializer_class``
    types and checks the merged values; command-line values it does not
    declare are taken as given.
    """
    known_keys = set(known_keys)
    merged = settings_defaults()
    if config_path:
        file_options = read_config_file(config_path)
        unknown = sorted(set(file_options) - known_keys)
        if unknown:
            raise InputError(f"Unknown option(s) in config file {config_path}: {', '.join(unknown)}.")
        merged.update(file_options)
        logger.info(f"Loaded {len(file_options)} option(s) from {config_path}")
    merged.update({key: value for key, value in cli_options.items() if value is not None})

    serializer = serializer_class(data=merged)
    if not serializer.is_valid():
        raise InputError(f"Invalid options: {flatten_errors(serializer.errors)}")
    resolved = dict(merged)
    resolved.update(serializer.validated_data)
    return resolved


def engine_config(options):
    return EngineConfig(
        particles=options['particles'],
        alpha=options['alpha'],
        optimizer=OptimizerConfig(max_iters=options['max_iters'], grad_tol=options['grad_tol']),
        minibatch=options['minibatch'],
        resample_threshold=options['resample_threshold'],
        threads=options['threads'],
    )
