"""Named deterministic random streams derived from a single experiment seed.

Every consumer keys its generator as (seed, namespace[, index]), so each
pipeline phase (teacher training, collection, distillation shuffling,
evaluation) is reproducible on its own, and parallel actors cannot collide.
Environments use counter-based Philox streams; everything else uses PCG64.
"""

import numpy as np

INIT = 1  # network weight initialization
ROLLOUT = 2  # per-actor action sampling during PPO rollouts
UPDATE = 3  # minibatch shuffling inside PPO updates
COLLECTION = 4  # teacher action sampling while filling a replay buffer
DISTILL_SHUFFLE = 5  # record shuffling between distillation epochs
EVAL = 6  # action sampling during evaluation
ENV = 7  # per-environment dynamics (slip outcomes, reset states)
VALUE_INIT = 8  # fresh critic head before fine-tuning


def generator(seed: int, namespace: int, *index: int) -> np.random.Generator:
    """PCG64 stream for the (seed, namespace[, index]) key."""
    key = (int(seed), int(namespace)) + tuple(int(i) for i in index)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


def env_generator(seed: int, index: int = 0) -> np.random.Generator:
    """Counter-based Philox stream owned by environment instance `index`."""
    key = (int(seed), ENV, int(index))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
