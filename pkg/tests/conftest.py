import random

import pytest

from treeminer.tree import RootedTree


def random_tree(rng: random.Random, n: int, unit: bool = False, lo: float = 0.2, hi: float = 2.0) -> RootedTree:
    """Random recursive tree with n nodes."""
    t = RootedTree(0)
    for i in range(1, n):
        t.add_child(rng.randrange(i), 1.0 if unit else rng.uniform(lo, hi), node=i)
    return t


def random_simple_tree(rng: random.Random, leaves: int, lo: float = 0.2, hi: float = 2.0) -> RootedTree:
    """Random simple tree with the given number of leaves."""
    while True:
        t = random_tree(rng, rng.randint(leaves, 2 * leaves + 1), lo=lo, hi=hi).normalize_simple()
        if len(t.leaves()) == leaves:
            return t


@pytest.fixture
def rng():
    return random.Random(12345)
