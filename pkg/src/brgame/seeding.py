"""Seed derivation for independent, worker-count-invariant sub-streams."""

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One output of the splitmix64 generator whose state is ``x``."""
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, index: int) -> int:
    """Seed of sub-stream ``index``: ``splitmix64(splitmix64(master) ^ index)``."""
    return splitmix64(splitmix64(int(master) & MASK64) ^ (int(index) & MASK64))
