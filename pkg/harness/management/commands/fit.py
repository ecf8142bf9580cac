from harness.outputs import write_run
from harness.persistence import save_arm_pool, save_model
from harness.runner import run_fit
from mixture.bandit import harvest_arms

from ._base import DATA_OPTIONS, ENGINE_OPTIONS, EngineCommand


class Command(EngineCommand):
    help = "Fit the particle ensemble on a training stream and score it on a test stream"

    config_options = ENGINE_OPTIONS + DATA_OPTIONS + ('baseline', 'out_dir', 'model_out', 'arms_out', 'run_id')

    def add_arguments(self, parser):
        self.add_engine_arguments(parser)
        self.add_data_arguments(parser)
        parser.add_argument('--baseline', action='store_true', default=None, help="Single-particle local-GP run")
        parser.add_argument('--out-dir', help="Directory for metrics.json, predictions.csv and steps.csv")
        parser.add_argument('--model-out', help="Save the fitted model here")
        parser.add_argument('--arms-out', help="Harvest an arm pool from the fitted model into this file")
        parser.add_argument('--run-id', default=None, help="Provenance label for harvested arms (default fit)")

    def run(self, options):
        resolved = self.resolve(options)
        self.require(resolved, 'out_dir')
        train, test = self.load_train_test(resolved)
        record = run_fit(
            train, test, self.stream_plan(resolved, train), self.engine_config(resolved),
            seed=resolved['seed'], test_blocks=resolved['test_blocks'],
        )
        write_run(record, resolved['out_dir'])
        if resolved.get('model_out'):
            save_model(record.ensemble, resolved['model_out'])
        if resolved.get('arms_out'):
            save_arm_pool(harvest_arms(record.ensemble, resolved.get('run_id') or 'fit'), resolved['arms_out'])
        metrics = record.metrics
        self.success(
            f"pred_ll={metrics['pred_ll']:.4f} pred_mse={metrics['pred_mse']:.4f} "
            f"wall_time={metrics['wall_time_seconds']:.2f}s"
        )
