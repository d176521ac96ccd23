"""Seeded stratified train/validation splitting."""

from typing import Hashable, List, Sequence, Tuple

import numpy as np

# Handle imports - try relative first, then absolute
try:
    from .exceptions import DegenerateDataError, InvalidArgumentError
except ImportError:
    from exceptions import DegenerateDataError, InvalidArgumentError


def split_indices(groups: Sequence[Hashable], train_fraction: float = 0.8,
                  seed: int = 0) -> Tuple[List[int], List[int]]:
    """Partition record indices, keeping round(fraction * n_g) of every group for training.

    Groups are visited in sorted order so the draw does not depend on
    record order; both index lists come back ascending.
    """
    if not 0.0 < train_fraction < 1.0:
        raise InvalidArgumentError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if len(groups) == 0:
        raise DegenerateDataError("Cannot split an empty manifest")

    rng = np.random.default_rng(seed)
    keys = np.asarray([str(g) for g in groups])
    train, val = [], []
    for key in sorted(set(keys.tolist())):
        members = np.flatnonzero(keys == key)
        shuffled = members[rng.permutation(members.size)]
        n_train = int(round(train_fraction * members.size))
        train.extend(shuffled[:n_train].tolist())
        val.extend(shuffled[n_train:].tolist())
    return sorted(train), sorted(val)


def split(manifest, train_fraction: float = 0.8, seed: int = 0):
    """(train manifest, val manifest), stratified by the manifest's group key."""
    train, val = split_indices(manifest.group_keys(), train_fraction, seed)
    return manifest.subset(train, split_tag="train"), manifest.subset(val, split_tag="val")
