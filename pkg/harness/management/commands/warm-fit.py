from harness.outputs import write_run
from harness.persistence import save_arm_pool, save_model
from harness.runner import run_warmfit

from ._base import DATA_OPTIONS, ENGINE_OPTIONS, EngineCommand


class Command(EngineCommand):
    help = "Fit like `fit`, selecting kernel hyperparameters from an arm pool instead of optimizing"

    config_options = ENGINE_OPTIONS + DATA_OPTIONS + (
        'arms_in', 'arms_out', 'allow_new_arm', 'refine', 'merge_tol', 'run_id', 'out_dir', 'model_out',
    )

    def add_arguments(self, parser):
        self.add_engine_arguments(parser)
        self.add_data_arguments(parser)
        parser.add_argument('--arms-in', help="Arm pool to warm-start from")
        parser.add_argument('--arms-out', help="Write the (possibly grown) arm pool here")
        parser.add_argument('--allow-new-arm', action='store_true', default=None,
                            help="Optimize a fresh arm when no pooled arm fits better")
        parser.add_argument('--refine', action='store_true', default=None,
                            help="Run one optimization starting from the selected arm")
        parser.add_argument('--merge-tol', type=float, default=None,
                            help="Drop new arms within this log-parameter distance of a pooled arm (default 0.05)")
        parser.add_argument('--run-id', default=None, help="Provenance label for new arms (default warm)")
        parser.add_argument('--out-dir', help="Directory for metrics.json, predictions.csv and steps.csv")
        parser.add_argument('--model-out', help="Save the fitted model here")

    def run(self, options):
        resolved = self.resolve(options)
        self.require(resolved, 'arms_in', 'out_dir')
        train, test = self.load_train_test(resolved)
        record = run_warmfit(
            train, test, self.stream_plan(resolved, train), self.engine_config(resolved), resolved['arms_in'],
            seed=resolved['seed'], test_blocks=resolved['test_blocks'],
            allow_new_arm=resolved['allow_new_arm'], refine=resolved['refine'],
            run_id=resolved.get('run_id') or 'warm', merge_tol=resolved['merge_tol'],
        )
        write_run(record, resolved['out_dir'])
        ens = record.ensemble
        if resolved.get('model_out'):
            save_model(ens, resolved['model_out'])
        if resolved.get('arms_out'):
            save_arm_pool(ens.warm_start.pool, resolved['arms_out'])
        metrics = record.metrics
        self.success(
            f"pred_ll={metrics['pred_ll']:.4f} pred_mse={metrics['pred_mse']:.4f} "
            f"optimizer_iterations={metrics['optimizer_iterations']} arms={len(ens.warm_start.pool)} "
            f"wall_time={metrics['wall_time_seconds']:.2f}s"
        )
