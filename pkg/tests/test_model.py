import json
import math

import numpy as np
import pytest

from vibratree import Branch, TreeModel, moment_of_inertia, static_positions, validate_tree
from vibratree.errors import CycleDetected, MultipleRoots, NonPositiveParameter


def chain(n, **overrides):
    kwargs = dict(mass=1.0, length=1.0, stiffness=1.0, rest_angle=0.0)
    kwargs.update(overrides)
    return [Branch(parent=None if i == 0 else i - 1, **kwargs) for i in range(n)]


class TestValidate:
    def test_minimal_chain_ok(self):
        validate_tree(TreeModel(chain(3)))

    def test_self_loop(self):
        with pytest.raises(CycleDetected) as exc:
            TreeModel([Branch(None, 1, 1, 1, 0.0), Branch(0, 1, 1, 1, 0.0),
                       Branch(2, 1, 1, 1, 0.0)])
        assert exc.value.branch_id == 2

    def test_two_cycle(self):
        with pytest.raises(CycleDetected):
            TreeModel([Branch(None, 1, 1, 1, 0.0), Branch(2, 1, 1, 1, 0.0),
                       Branch(1, 1, 1, 1, 0.0)])

    def test_zero_mass(self):
        with pytest.raises(NonPositiveParameter) as exc:
            TreeModel([Branch(None, 1, 1, 1, 0.0), Branch(0, 0.0, 1, 1, 0.0)])
        assert exc.value.branch_id == 1
        assert exc.value.name == "mass"

    def test_multiple_roots(self):
        with pytest.raises(MultipleRoots):
            TreeModel([Branch(None, 1, 1, 1, 0.0), Branch(None, 1, 1, 1, 0.0)])

    def test_against_dfs_oracle(self):
        # oracle: a parent array is a tree iff one root and every walk to the
        # root terminates without revisiting
        def oracle_is_tree(parents):
            roots = [i for i, p in enumerate(parents) if p is None]
            if len(roots) != 1:
                return False
            for start in range(len(parents)):
                seen = set()
                i = start
                while parents[i] is not None:
                    if i in seen:
                        return False
                    seen.add(i)
                    i = parents[i]
            return True

        rng = np.random.default_rng(7)
        for _ in range(200):
            n = int(rng.integers(1, 7))
            parents = [None if rng.random() < 0.3 else int(rng.integers(0, n))
                       for _ in range(n)]
            parents[int(rng.integers(0, n))] = None if rng.random() < 0.5 else parents[0]
            branches = [Branch(p, 1.0, 1.0, 1.0, 0.0) for p in parents]
            ok_oracle = oracle_is_tree(parents)
            try:
                TreeModel(branches)
                ok_impl = True
            except (CycleDetected, MultipleRoots):
                ok_impl = False
            assert ok_impl == ok_oracle, parents


class TestStaticPositions:
    def test_single_branch(self):
        geo = static_positions(TreeModel([Branch(None, 1, 2.0, 1, 0.0)], gravity=0))
        assert np.allclose(geo.tips[0], [2.0, 0.0])
        assert np.allclose(geo.anchor, [0.0, 0.0])

    def test_two_chain(self):
        geo = static_positions(TreeModel(chain(2)))
        assert np.allclose(geo.tips[1], [2.0, 0.0])

    def test_quarter_turn(self):
        geo = static_positions(
            TreeModel([Branch(None, 1, 1.0, 1, math.pi / 2)], gravity=0)
        )
        assert np.allclose(geo.tips[0], [0.0, 1.0], atol=1e-15)

    def test_reindexing_invariance(self):
        rng = np.random.default_rng(3)
        base = [Branch(None, 1, 1.0, 1, 0.2), Branch(0, 1, 0.7, 1, -0.3),
                Branch(0, 1, 0.5, 1, 0.9), Branch(1, 1, 0.4, 1, 0.1)]
        tips = static_positions(TreeModel(base)).tips
        perm = rng.permutation(4)
        inv = np.argsort(perm)
        shuffled = [None] * 4
        for old, b in enumerate(base):
            shuffled[inv[old]] = Branch(
                None if b.parent is None else int(inv[b.parent]),
                b.mass, b.length, b.stiffness, b.rest_angle,
            )
        tips2 = static_positions(TreeModel(shuffled)).tips
        assert np.allclose(tips2[inv], tips)

    def test_length_scaling_linearity(self):
        base = [Branch(None, 1, 1.0, 1, 0.2), Branch(0, 1, 0.7, 1, -0.3),
                Branch(1, 1, 0.5, 1, 0.9)]
        doubled = [Branch(b.parent, b.mass, 2 * b.length, b.stiffness, b.rest_angle)
                   for b in base]
        t1 = static_positions(TreeModel(base)).tips
        t2 = static_positions(TreeModel(doubled)).tips
        assert np.allclose(t2, 2 * t1)


class TestMomentOfInertia:
    def test_unit_beam(self):
        assert moment_of_inertia(Branch(None, 1.0, 1.0, 1.0, 0.0)) == (1 / 12, 1 / 3)

    def test_scaling(self):
        ic, ip = moment_of_inertia(Branch(None, 3.0, 2.0, 1.0, 0.0))
        assert (ic, ip) == (1.0, 4.0)

    def test_degenerate(self):
        with pytest.raises(NonPositiveParameter):
            moment_of_inertia(Branch(None, 1.0, 0.0, 1.0, 0.0))


class TestSerialization:
    def test_round_trip(self, tmp_path):
        m = TreeModel(chain(4, rest_angle=0.3), gravity=5.0)
        path = tmp_path / "tree.json"
        m.save(path)
        m2 = TreeModel.load(path)
        assert m2.gravity == m.gravity
        assert m2.branches == m.branches

    def test_schema_fields(self, tmp_path):
        m = TreeModel(chain(2))
        path = tmp_path / "tree.json"
        m.save(path)
        data = json.loads(path.read_text())
        assert set(data) == {"gravity", "branches"}
        assert set(data["branches"][0]) == {
            "parent", "mass", "length", "stiffness", "rest_angle"
        }

    def test_subtree_extraction(self):
        m = TreeModel([Branch(None, 1, 1, 10, 0.0), Branch(0, 1, 1, 5, 0.4),
                       Branch(1, 1, 1, 2, -0.2), Branch(0, 1, 1, 3, 0.1)])
        sub, ids = m.subtree(1)
        assert ids == [1, 2]
        assert sub.root_index == 0
        assert sub.branches[1].parent == 0
        assert sub.branches[0].stiffness == 5
