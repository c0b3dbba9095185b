import zlib

import numpy as np

MASK_32b = 0xFFFFFFFF


def _path_word(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8")) & MASK_32b
    if part < 0:
        raise ValueError(f"Stream path components must be non-negative, got {part}")
    return int(part)


def derive_seed_sequence(seed: int, *path: int | str) -> np.random.SeedSequence:
    """
    Build the seed sequence of a named stream below the master seed

    :param seed: Master seed
    :param path: Stream path, e.g. ("mle", "dataset", 7)
    :return: Seed sequence whose spawn key encodes the path
    """
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_path_word(part) for part in path))


def derive_rng(seed: int, *path: int | str) -> np.random.Generator:
    """
    Counter-based generator for one named stream. Streams depend only on (seed, path), never on how many sibling
    streams were drawn before, so adding trials or scenes does not reshuffle earlier ones

    :param seed: Master seed
    :param path: Stream path
    :return: Philox-backed generator
    """
    return np.random.Generator(np.random.Philox(derive_seed_sequence(seed, *path)))


def derive_int(seed: int, *path: int | str) -> int:
    """
    Derive a plain 63-bit integer seed for a named stream, used where a sub-experiment takes its own master seed
    """
    return int(derive_seed_sequence(seed, *path).generate_state(2, dtype=np.uint32).view(np.uint64)[0] >> 1)
