from harness.datasets import ingest_csv
from harness.outputs import write_run
from harness.persistence import save_model
from harness.runner import run_track

from ._base import ENGINE_OPTIONS, EngineCommand


class Command(EngineCommand):
    help = "One-step-ahead tracking: predict each point of a time series, then absorb it"

    config_options = ENGINE_OPTIONS + ('data', 'normalize', 'split_fraction', 'sort', 'out_dir', 'model_out')

    def add_arguments(self, parser):
        self.add_engine_arguments(parser)
        parser.add_argument('--data', help="Time-ordered CSV (first column is time)")
        parser.add_argument('--split-fraction', type=float, help="Leading fraction used for the initial fit (default 0.5)")
        parser.add_argument('--normalize', action='store_true', default=None, help="Standardize every column")
        parser.add_argument('--sort', action='store_true', default=None, help="Sort rows by the first column first")
        parser.add_argument('--out-dir', help="Directory for metrics.json, predictions.csv and steps.csv")
        parser.add_argument('--model-out', help="Save the final model here")

    def run(self, options):
        resolved = self.resolve(options)
        self.require(resolved, 'data', 'out_dir')
        data = ingest_csv(resolved['data'], resolved['normalize'])
        if resolved['sort']:
            data = data.time_ordered()
        record = run_track(
            data, resolved['split_fraction'], self.engine_config(resolved),
            seed=resolved['seed'], blocks=resolved['blocks'],
        )
        write_run(record, resolved['out_dir'])
        if resolved.get('model_out'):
            save_model(record.ensemble, resolved['model_out'])
        metrics = record.metrics
        self.success(
            f"Tracked {metrics['n_predictions']} points: one-step pred_mse={metrics['pred_mse']:.4f} "
            f"pred_ll={metrics['pred_ll']:.4f}"
        )
