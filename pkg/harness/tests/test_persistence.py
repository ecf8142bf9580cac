import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from harness.persistence import (
    PersistenceError,
    load_arm_pool,
    load_model,
    read_document,
    save_arm_pool,
    save_model,
    write_document,
)
from mixture.bandit import WarmStart, harvest_arms
from mixture.engine import EngineConfig, ensemble_predict, init_ensemble, step
from mixture.exceptions import InputError
from mixture.kernel_gp import OptimizerConfig


def batches(seed, n=45, blocks=3):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 10, size=(n, 1))
    y = np.sin(x[:, 0]) + 0.2 * rng.standard_normal(n)
    return [(x[chunk], y[chunk]) for chunk in np.array_split(np.arange(n), blocks)]


def fitted(seed=0, particles=3, minibatch=0, warm_start=None):
    data = batches(seed)
    config = EngineConfig(
        particles=particles, alpha=1.5, minibatch=minibatch, optimizer=OptimizerConfig(max_iters=15),
    )
    ens = init_ensemble(data[0], config, master_seed=seed, warm_start=warm_start)
    step(ens, data[1])
    return ens, data[2]


class PersistenceTestCase(SimpleTestCase):
    def setUp(self):
        directory = tempfile.TemporaryDirectory()
        self.addCleanup(directory.cleanup)
        self.dir = Path(directory.name)

    def lines(self, path):
        return Path(path).read_text().splitlines()

    def rewrite(self, path, lines):
        Path(path).write_text('\n'.join(lines) + '\n')


class ModelRoundTripTests(PersistenceTestCase):
    def assert_same_next_step(self, ens, next_batch):
        path = save_model(ens, self.dir / 'model.jsonl')
        loaded = load_model(path)
        self.assertEqual(loaded.step_counter, ens.step_counter)
        np.testing.assert_array_equal(loaded.log_weights, ens.log_weights)
        self.assertEqual(step(loaded, next_batch), step(ens, next_batch))
        np.testing.assert_array_equal(loaded.log_weights, ens.log_weights)
        Xtest = np.linspace(0, 10, 7)[:, None]
        np.testing.assert_array_equal(ensemble_predict(loaded, Xtest).mean, ensemble_predict(ens, Xtest).mean)

    def test_next_step_is_identical(self):
        self.assert_same_next_step(*fitted())

    def test_next_step_is_identical_with_minibatches(self):
        self.assert_same_next_step(*fitted(seed=1, minibatch=5))

    def test_failed_particles_survive(self):
        ens, next_batch = fitted(seed=2)
        ens.particles[0].log_weight = -np.inf
        loaded = load_model(save_model(ens, self.dir / 'model.jsonl'))
        self.assertEqual(loaded.particles[0].log_weight, -np.inf)
        self.assertTrue(loaded.particles[0].failed)

    def test_metadata_is_kept(self):
        ens, _ = fitted()
        ens.metadata['output_offset'] = 0.25
        loaded = load_model(save_model(ens, self.dir / 'model.jsonl'))
        self.assertEqual(loaded.metadata, {'output_offset': 0.25})

    def test_warm_started_model_keeps_its_pool(self):
        donor, _ = fitted(seed=3)
        pool = harvest_arms(donor, 'donor')
        ens, next_batch = fitted(seed=4, warm_start=WarmStart(pool=pool, allow_new_arm=True, run_id='w', merge_tol=0.1))
        path = save_model(ens, self.dir / 'model.jsonl')
        self.assertIn('arm_pool', json.loads(self.lines(path)[0])['sections'])
        loaded = load_model(path)
        self.assertEqual(loaded.warm_start.pool, ens.warm_start.pool)
        self.assertEqual(loaded.warm_start.run_id, 'w')
        self.assertEqual(loaded.warm_start.merge_tol, 0.1)
        self.assertEqual(step(loaded, next_batch), step(ens, next_batch))


class ModelFileErrorTests(PersistenceTestCase):
    def setUp(self):
        super().setUp()
        ens, _ = fitted()
        self.path = save_model(ens, self.dir / 'model.jsonl')

    def test_truncated_file_names_missing_sections(self):
        self.rewrite(self.path, self.lines(self.path)[:3])
        with self.assertRaisesMessage(PersistenceError, "particles"):
            load_model(self.path)

    def test_cut_mid_line(self):
        text = Path(self.path).read_text()
        Path(self.path).write_text(text[: len(text) - 40])
        with self.assertRaisesMessage(PersistenceError, "missing section(s) particles"):
            load_model(self.path)

    def test_newer_version(self):
        lines = self.lines(self.path)
        header = json.loads(lines[0])
        header['version'] += 1
        self.rewrite(self.path, [json.dumps(header)] + lines[1:])
        with self.assertRaisesMessage(PersistenceError, "version 2"):
            load_model(self.path)

    def test_checksum_mismatch(self):
        lines = self.lines(self.path)
        record = json.loads(lines[3])
        record['body']['batches'][0]['outputs'][0] += 1.0
        lines[3] = json.dumps(record, sort_keys=True, separators=(',', ':'))
        self.rewrite(self.path, lines)
        with self.assertRaisesMessage(PersistenceError, "checksum"):
            load_model(self.path)

    def test_wrong_format(self):
        with self.assertRaises(PersistenceError):
            load_arm_pool(self.path)

    def test_missing_and_empty_files(self):
        with self.assertRaises(PersistenceError):
            load_model(self.dir / 'absent.jsonl')
        empty = self.dir / 'empty.jsonl'
        empty.write_text('')
        with self.assertRaises(PersistenceError):
            load_model(empty)

    def test_is_an_input_error(self):
        self.assertTrue(issubclass(PersistenceError, InputError))


class DocumentTests(PersistenceTestCase):
    def test_schema_violation_names_the_field(self):
        path = write_document(self.dir / 'pool.jsonl', 'streamgp-arms', {
            'pool': {'version': 1, 'arms': [{'theta': [0.0, 0.0], 'provenance': ['r', 0, 0], 'harvest_lml': 0.0}]},
        })
        with self.assertRaisesMessage(PersistenceError, "section pool is invalid: arms[0].theta"):
            read_document(path, 'streamgp-arms', ('pool',))

    def test_unknown_section(self):
        path = write_document(self.dir / 'odd.jsonl', 'streamgp-arms', {'pool': {'version': 0, 'arms': []}, 'extra': {}})
        with self.assertRaisesMessage(PersistenceError, "extra"):
            read_document(path, 'streamgp-arms', ('pool',))


class ArmPoolFileTests(PersistenceTestCase):
    def test_round_trip(self):
        ens, _ = fitted(seed=5)
        pool = harvest_arms(ens, 'run-5')
        loaded = load_arm_pool(save_arm_pool(pool, self.dir / 'arms.jsonl'))
        self.assertEqual(loaded, pool)
        self.assertEqual(loaded.arms[0].provenance[0], 'run-5')

    def test_write_is_atomic(self):
        ens, _ = fitted(seed=5)
        save_arm_pool(harvest_arms(ens, 'a'), self.dir / 'arms.jsonl')
        self.assertEqual([p.name for p in self.dir.iterdir()], ['arms.jsonl'])
