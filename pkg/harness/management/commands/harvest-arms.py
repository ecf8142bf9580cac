from harness.persistence import load_model, save_arm_pool
from harness.serializers import SavedModelOptionsSerializer
from mixture.bandit import harvest_arms

from ._base import EngineCommand


class Command(EngineCommand):
    help = "Harvest the kernel hyperparameters of a saved model's best particle into an arm pool"

    config_options = ('model_in', 'arms_out', 'run_id')
    options_serializer = SavedModelOptionsSerializer

    def add_arguments(self, parser):
        self.add_config_argument(parser)
        parser.add_argument('--model-in', help="Saved model file")
        parser.add_argument('--arms-out', help="Arm pool file to write")
        parser.add_argument('--run-id', help="Provenance label stored with each arm (default harvest)")

    def run(self, options):
        resolved = self.resolve(options)
        self.require(resolved, 'model_in', 'arms_out')
        ens = load_model(resolved['model_in'])
        pool = harvest_arms(ens, resolved['run_id'])
        save_arm_pool(pool, resolved['arms_out'])
        self.success(f"Harvested {len(pool)} arms into {resolved['arms_out']}")
