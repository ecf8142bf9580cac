from pathlib import Path

import pandas as pd

from harness.datasets import SyntheticSpec, generate_synthetic
from harness.outputs import write_frame
from harness.serializers import SynthOptionsSerializer

from ._base import EngineCommand


class Command(EngineCommand):
    help = "Write a piecewise-periodic synthetic train.csv, test.csv and the noiseless truth.csv"

    config_options = ('out_dir', 'n_train', 'n_test', 'noise_sd', 'seed', 'low', 'high', 'breakpoints', 'frequencies')
    options_serializer = SynthOptionsSerializer

    def add_arguments(self, parser):
        self.add_config_argument(parser)
        parser.add_argument('--out-dir', help="Directory for train.csv, test.csv and truth.csv")
        parser.add_argument('--n-train', type=int, help="Training rows (default 1000)")
        parser.add_argument('--n-test', type=int, help="Test rows (default 100)")
        parser.add_argument('--noise-sd', type=float, help="Gaussian noise standard deviation (default 1)")
        parser.add_argument('--seed', type=int)
        parser.add_argument('--low', type=float, help="Lower end of the input domain (default 0)")
        parser.add_argument('--high', type=float, help="Upper end of the input domain (default 10)")
        parser.add_argument('--breakpoints', help="Comma-separated regime boundaries (default 5)")
        parser.add_argument(
            '--frequencies',
            help="Comma-separated regime frequencies, in multiples of pi (default 0.6,4)",
        )

    def run(self, options):
        resolved = self.resolve(options)
        self.require(resolved, 'out_dir')
        spec = SyntheticSpec(
            n_train=resolved['n_train'],
            n_test=resolved['n_test'],
            noise_sd=resolved['noise_sd'],
            seed=resolved['seed'],
            domain=(resolved['low'], resolved['high']),
            breakpoints=tuple(resolved['breakpoints']),
            frequencies=tuple(resolved['frequencies']),
        )
        train, test = generate_synthetic(spec)
        out_dir = Path(resolved['out_dir'])
        write_frame(out_dir / 'train.csv', train.to_frame())
        write_frame(out_dir / 'test.csv', test.to_frame())
        write_frame(out_dir / 'truth.csv', pd.concat([train.truth_frame(), test.truth_frame()], ignore_index=True))
        self.success(f"Wrote {train.size} training and {test.size} test rows to {out_dir}")
