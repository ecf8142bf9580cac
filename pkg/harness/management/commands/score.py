from harness.datasets import ingest_csv
from harness.outputs import write_run
from harness.persistence import load_model
from harness.runner import normalization_of, score_model
from harness.serializers import SavedModelOptionsSerializer

from ._base import EngineCommand


class Command(EngineCommand):
    help = "Score a saved model on a test CSV without updating it"

    config_options = ('model_in', 'test', 'out_dir')
    options_serializer = SavedModelOptionsSerializer

    def add_arguments(self, parser):
        self.add_config_argument(parser)
        parser.add_argument('--model-in', help="Saved model file")
        parser.add_argument('--test', help="Test CSV in the training file's units")
        parser.add_argument('--out-dir', help="Directory for metrics.json and predictions.csv")

    def run(self, options):
        resolved = self.resolve(options)
        self.require(resolved, 'model_in', 'test', 'out_dir')
        ens = load_model(resolved['model_in'])
        test = normalization_of(ens).apply(ingest_csv(resolved['test'], normalize=False))
        record = score_model(ens, test)
        write_run(record, resolved['out_dir'])
        metrics = record.metrics
        self.success(f"pred_ll={metrics['pred_ll']:.4f} pred_mse={metrics['pred_mse']:.4f}")
