"""
Model and arm-pool files.

A file is JSON Lines: a header line naming the format, version, the ordered
list of sections and a SHA-256 checksum of the section lines, followed by one
``{"section": ..., "body": ...}`` line per section. A truncated file therefore
loses whole trailing sections, which are reported by name.

A model stores the data it absorbed and each particle's assignment log rather
than the derived statistics; loading replays the logs, so the reconstructed
ensemble's next step is bitwise identical to the saved one's.
"""
import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from mixture.bandit import Arm, ArmPool, WarmStart
from mixture.crp_niw import NIWPrior
from mixture.engine import EngineConfig, ParticleEnsemble
from mixture.exceptions import InputError
from mixture.kernel_gp import KernelHyperparams, OptimizerConfig, as_points
from mixture.particle import Particle

from .outputs import atomic_write_text
from .serializers import SECTION_SERIALIZERS, FileHeaderSerializer, flatten_errors

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MODEL_FORMAT = 'streamgp-model'
ARMS_FORMAT = 'streamgp-arms'
MODEL_SECTIONS = ('config', 'ensemble', 'data', 'particles')
ARMS_SECTIONS = ('pool',)


class PersistenceError(InputError):
    """A model or arm-pool file is missing, truncated, corrupt or of another version."""


def _dump(value):
    return json.dumps(value, sort_keys=True, separators=(',', ':'))


def _checksum(lines):
    return hashlib.sha256('\n'.join(lines).encode('utf-8')).hexdigest()


def write_document(path, file_format, sections):
    lines = [_dump({'section': name, 'body': body}) for name, body in sections.items()]
    header = _dump({
        'format': file_format,
        'version': FORMAT_VERSION,
        'sections': list(sections),
        'checksum': _checksum(lines),
    })
    return atomic_write_text(path, '\n'.join([header] + lines) + '\n')


def read_document(path, file_format, required):
    """Parse, version-check and checksum a sectioned file; returns validated section bodies."""
    try:
        text = Path(path).read_text(encoding='utf-8')
    except FileNotFoundError as exc:
        raise PersistenceError(f"{path} does not exist.") from exc
    except (OSError, UnicodeDecodeError) as exc:
        raise PersistenceError(f"Cannot read {path}: {exc}") from exc

    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise PersistenceError(f"{path} is empty.")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise PersistenceError(f"{path}: header line is truncated or not JSON.") from exc
    if not isinstance(header, dict):
        raise PersistenceError(f"{path}: header line must be a JSON object.")
    if header.get('format') != file_format:
        raise PersistenceError(f"{path} is not a {file_format} file (format {header.get('format')!r}).")
    if header.get('version') != FORMAT_VERSION:
        raise PersistenceError(
            f"{path} has unsupported {file_format} version {header.get('version')!r}; "
            f"this build reads version {FORMAT_VERSION}."
        )
    serializer = FileHeaderSerializer(data=header)
    if not serializer.is_valid():
        raise PersistenceError(f"{path}: invalid header: {flatten_errors(serializer.errors)}")
    expected = list(serializer.validated_data['sections'])

    bodies, section_lines = {}, []
    for line in lines[1:]:
        try:
            record = json.loads(line)
        except json.JSONDecodeError:
            break
        if not isinstance(record, dict) or set(record) != {'section', 'body'}:
            raise PersistenceError(f"{path}: malformed section line {len(section_lines) + 2}.")
        bodies[record['section']] = record['body']
        section_lines.append(line)

    missing = [name for name in dict.fromkeys(expected + list(required)) if name not in bodies]
    if missing:
        raise PersistenceError(f"{path} is truncated or incomplete: missing section(s) {', '.join(missing)}.")
    if _checksum(section_lines) != serializer.validated_data['checksum']:
        raise PersistenceError(f"{path}: checksum mismatch; the file was modified or corrupted.")

    validated = {}
    for name, body in bodies.items():
        section_serializer = SECTION_SERIALIZERS.get(name)
        if section_serializer is None:
            raise PersistenceError(f"{path}: unknown section {name!r}.")
        checked = section_serializer(data=body)
        if not checked.is_valid():
            raise PersistenceError(f"{path}: section {name} is invalid: {flatten_errors(checked.errors)}")
        validated[name] = checked.validated_data
    return validated


def _theta_body(theta):
    return [float(v) for v in theta.as_array()]


def _pool_body(pool):
    return {
        'version': pool.version,
        'arms': [
            {'theta': _theta_body(arm.theta), 'provenance': list(arm.provenance), 'harvest_lml': float(arm.harvest_lml)}
            for arm in pool.arms
        ],
    }


def _pool_from_body(body):
    arms = [
        Arm(
            theta=KernelHyperparams.from_array(arm['theta']),
            provenance=tuple(arm['provenance']),
            harvest_lml=float(arm['harvest_lml']),
        )
        for arm in body['arms']
    ]
    return ArmPool(arms=arms, version=body['version'])


def _particle_body(particle):
    return {
        'log_weight': float(particle.log_weight),
        'lml_total': float(particle.lml_total),
        'next_cluster_id': particle.next_cluster_id,
        'assignment_log': [[int(b), int(i), int(k)] for b, i, k in particle.assignment_log],
        'experts': [
            {
                'cluster_id': int(cluster_id),
                'theta': _theta_body(expert.theta),
                'cached_lml': float(expert.cached_lml),
                'dirty': bool(expert.dirty),
                'fitted': bool(expert.fitted),
                'subsample': None if expert.subsample is None else [int(i) for i in expert.subsample],
            }
            for cluster_id, expert in particle.experts.items()
        ],
    }


def save_model(ens, path):
    config = ens.config
    sections = {
        'config': {
            'particles': config.particles,
            'alpha': float(config.alpha),
            'minibatch': config.minibatch,
            'resample_threshold': float(config.resample_threshold),
            'threads': config.threads,
            'max_iters': config.optimizer.max_iters,
            'grad_tol': float(config.optimizer.grad_tol),
            'bounds': [[float(low), float(high)] for low, high in config.optimizer.bounds],
        },
        'ensemble': {
            'master_seed': ens.master_seed,
            'step_counter': ens.step_counter,
            'prior': {
                'mu0': ens.prior.mu0.tolist(),
                'lam': ens.prior.lam,
                'Psi': ens.prior.Psi.tolist(),
                'nu': ens.prior.nu,
            },
            'default_theta': _theta_body(ens.default_theta),
            'metadata': ens.metadata,
            'warm_start': None if ens.warm_start is None else {
                'allow_new_arm': ens.warm_start.allow_new_arm,
                'refine': ens.warm_start.refine,
                'run_id': ens.warm_start.run_id,
                'merge_tol': float(ens.warm_start.merge_tol),
            },
        },
        'data': {
            'batches': [{'inputs': inputs.tolist(), 'outputs': outputs.tolist()} for inputs, outputs in ens.batches],
        },
        'particles': {'particles': [_particle_body(p) for p in ens.particles]},
    }
    if ens.warm_start is not None:
        sections['arm_pool'] = _pool_body(ens.warm_start.pool)
    written = write_document(path, MODEL_FORMAT, sections)
    logger.info(f"Saved model ({ens.size} particles, step {ens.step_counter}) to {path}")
    return written


def _rebuild_particle(body, dim, batches, theta):
    particle = Particle(dim=dim)
    for batch_id, index, _ in body['assignment_log']:
        if batch_id >= len(batches) or index >= len(batches[batch_id][1]):
            raise PersistenceError(f"Assignment ({batch_id}, {index}) points outside the stored data.")
    particle.replay([tuple(entry) for entry in body['assignment_log']], batches, theta)
    for record in body['experts']:
        expert = particle.experts[record['cluster_id']]
        expert.theta = KernelHyperparams.from_array(record['theta'])
        expert.cached_lml = float(record['cached_lml'])
        expert.dirty = record['dirty']
        expert.fitted = record['fitted']
        if record['subsample'] is not None:
            subsample = np.asarray(record['subsample'], dtype=int)
            if subsample.size and subsample.max() >= expert.stats.count:
                raise PersistenceError(f"Subsample of cluster {record['cluster_id']} exceeds its membership.")
            expert.subsample = subsample
    particle.next_cluster_id = body['next_cluster_id']
    particle.lml_total = float(body['lml_total'])
    particle.log_weight = float(body['log_weight'])
    return particle


def load_model(path):
    sections = read_document(path, MODEL_FORMAT, MODEL_SECTIONS)
    try:
        return _build_ensemble(sections)
    except PersistenceError:
        raise
    except InputError as exc:
        raise PersistenceError(f"{path}: {exc}") from exc


def _build_ensemble(sections):
    cfg, state = sections['config'], sections['ensemble']
    config = EngineConfig(
        particles=cfg['particles'],
        alpha=cfg['alpha'],
        optimizer=OptimizerConfig(
            max_iters=cfg['max_iters'],
            grad_tol=cfg['grad_tol'],
            bounds=tuple(tuple(pair) for pair in cfg['bounds']),
        ),
        minibatch=cfg['minibatch'],
        resample_threshold=cfg['resample_threshold'],
        threads=cfg['threads'],
    )
    prior_body = state['prior']
    prior = NIWPrior(
        mu0=np.asarray(prior_body['mu0'], dtype=float),
        lam=prior_body['lam'],
        Psi=np.asarray(prior_body['Psi'], dtype=float),
        nu=prior_body['nu'],
    )
    default_theta = KernelHyperparams.from_array(state['default_theta'])

    batches = []
    for body in sections['data']['batches']:
        inputs = as_points(np.asarray(body['inputs'], dtype=float).reshape(len(body['outputs']), -1))
        if inputs.shape[1] != prior.dim:
            raise PersistenceError(f"Stored batch has dimension {inputs.shape[1]}, prior has {prior.dim}.")
        batches.append((inputs, np.asarray(body['outputs'], dtype=float)))

    particle_bodies = sections['particles']['particles']
    if len(particle_bodies) != config.particles:
        raise PersistenceError(f"Expected {config.particles} particles, found {len(particle_bodies)}.")
    particles = [_rebuild_particle(body, prior.dim, batches, default_theta) for body in particle_bodies]

    warm_start = None
    if state['warm_start'] is not None:
        if 'arm_pool' not in sections:
            raise PersistenceError("Model was fitted from an arm pool but the arm_pool section is missing.")
        warm_start = WarmStart(pool=_pool_from_body(sections['arm_pool']), **state['warm_start'])

    ens = ParticleEnsemble(
        particles=particles,
        config=config,
        prior=prior,
        default_theta=default_theta,
        master_seed=state['master_seed'],
        step_counter=state['step_counter'],
        batches=batches,
        warm_start=warm_start,
        metadata=dict(state['metadata']),
    )
    logger.info(f"Loaded model with {ens.size} particles at step {ens.step_counter}")
    return ens


def save_arm_pool(pool, path):
    written = write_document(path, ARMS_FORMAT, {'pool': _pool_body(pool)})
    logger.info(f"Saved {len(pool)} arms (pool version {pool.version}) to {path}")
    return written


def load_arm_pool(path):
    sections = read_document(path, ARMS_FORMAT, ARMS_SECTIONS)
    try:
        return _pool_from_body(sections['pool'])
    except InputError as exc:
        raise PersistenceError(f"{path}: {exc}") from exc
