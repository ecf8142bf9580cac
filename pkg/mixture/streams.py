"""
Counter-based random streams.

Every stream is a Philox generator keyed by ``(master_seed, purpose, step,
index)``, so the numbers a particle draws depend only on where it sits in the
ensemble and which batch is being absorbed, never on thread scheduling.
"""
import numpy as np

PARTICLE = 0
RESAMPLE = 1
DATA = 2


def stream(master_seed, purpose, step, index=0):
    seed_seq = np.random.SeedSequence(
        entropy=int(master_seed) & 0xFFFFFFFFFFFFFFFF,
        spawn_key=(int(purpose), int(step), int(index)),
    )
    return np.random.Generator(np.random.Philox(seed_seq))


def particle_stream(master_seed, step, index):
    return stream(master_seed, PARTICLE, step, index)


def resample_stream(master_seed, step):
    return stream(master_seed, RESAMPLE, step)


def data_stream(seed, index=0):
    return stream(seed, DATA, 0, index)
