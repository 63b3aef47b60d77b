import numpy as np
import pytest

from vibratree import Branch, SimState, TreeModel


@pytest.fixture
def single_rod():
    """m=1, l=1, k=3, g=0: analytic pendulum with omega = 3 rad/s."""
    return TreeModel([Branch(None, 1.0, 1.0, 3.0, 0.0)], gravity=0.0)


@pytest.fixture
def fig6_model():
    from vibratree.data import fig6_path

    return TreeModel.load(fig6_path())


@pytest.fixture
def tilted_chain():
    return TreeModel(
        [Branch(None, 1.0, 1.0, 50.0, 0.3), Branch(0, 0.5, 0.8, 20.0, -0.4)],
        gravity=9.81,
    )


def random_stable_tree(rng, max_branches=8, gravity=9.81):
    """Random tree with stiffness large enough to stay statically stable."""
    n = int(rng.integers(2, max_branches + 1))
    branches = [Branch(None, 1.0 + rng.random(), 0.8 + 0.4 * rng.random(), 0.0, rng.normal(0, 0.3))]
    for i in range(1, n):
        branches.append(
            Branch(
                int(rng.integers(0, i)),
                0.2 + 0.5 * rng.random(),
                0.4 + 0.5 * rng.random(),
                0.0,
                rng.normal(0, 0.4),
            )
        )
    # stiffness well above the gravity softening scale of the whole subtree
    total_ml = sum(b.mass * b.length for b in branches)
    branches = [
        Branch(b.parent, b.mass, b.length,
               (3.0 + 5.0 * rng.random()) * gravity * total_ml, b.rest_angle)
        for b in branches
    ]
    return TreeModel(branches, gravity=gravity)


@pytest.fixture
def make_random_tree():
    return random_stable_tree


def zero_state(model):
    return SimState(0.0, np.zeros(model.n_branches), np.zeros(model.n_branches))
