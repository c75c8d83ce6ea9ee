from __future__ import annotations

import numpy as np
import pytest

import oracles
from bonfield import fields, lattice
from bonfield.fields import (
    Bernoulli, ExplicitField, IIDField, MovingField, NonEnumerableModel, Pareto, PointMass,
    StateSpaceTooLarge, Table,
)


def test_marginal_validation():
    with pytest.raises(ValueError):
        Bernoulli(1.5)
    with pytest.raises(ValueError):
        Table([0, 1], [0.5, 0.6])
    with pytest.raises(ValueError):
        Pareto(0.0)


def test_table_from_uniform_edges():
    t = Table([10, 20, 30], [0.2, 0.3, 0.5])
    u = np.array([0.0, 0.199999, 0.2, 0.49, 0.5, 0.999999])
    assert t.from_uniform(u).tolist() == [10, 10, 20, 20, 30, 30]


def test_matrix_table_shape():
    a = np.array([[1, 1], [0, 1]])
    t = Table([np.eye(2, dtype=int), a], [0.5, 0.5])
    assert t.value_shape == (2, 2)
    batch = IIDField(t).sample_batch(lattice.line(3), seed=1, start=0, count=10)
    assert batch.values.shape == (10, 3, 2, 2)


def test_pareto_tail_identity():
    # P(Y > y) = y^-alpha for y >= 1
    u = np.linspace(0, 1, 100001)[:-1]
    y = Pareto(0.8).from_uniform(u)
    assert np.all(y >= 1)
    assert np.mean(y > 10.0) == pytest.approx(10.0**-0.8, abs=2e-5)


def test_pareto_not_enumerable():
    with pytest.raises(NonEnumerableModel):
        IIDField(Pareto(0.5)).state_count(lattice.line(2))


def test_sampling_is_index_addressable():
    model = MovingField(Table([0, 1, 2], [0.5, 0.3, 0.2]), [(0, 0), (1, 0)], "sum")
    win = lattice.box((3, 2))
    batch = model.sample_batch(win, seed=7, start=1000, count=60)  # straddles a counter block
    for i in (0, 23, 24, 59):
        s = fields.sample(model, win, 7, 1000 + i)
        assert s.values == batch.row(i).values
    other = model.sample_batch(win, seed=8, start=1000, count=60)
    assert not np.array_equal(batch.values, other.values)


def test_bernoulli_frequency():
    batch = IIDField(Bernoulli(0.3)).sample_batch(lattice.line(1), seed=3, start=0, count=100_000)
    assert batch.values.mean() == pytest.approx(0.3, abs=4 * np.sqrt(0.21 / 1e5))


@pytest.mark.parametrize("model,offsets,values,probs,combine", [
    (IIDField(Bernoulli(0.3)), [(0,)], [0, 1], [0.7, 0.3], sum),
    (MovingField(Table([0, 1, 2], [0.5, 0.3, 0.2]), [(0,), (1,)], "sum"), [(0,), (1,)], [0, 1, 2], [0.5, 0.3, 0.2], sum),
    (MovingField(Bernoulli(0.4), [(0,), (1,)], "all_ones"), [(0,), (1,)], [0, 1], [0.6, 0.4], oracles.all_ones),
])
def test_enumeration_matches_brute_force(model, offsets, values, probs, combine):
    win = lattice.line(3)
    got = {}
    for o in fields.enumerate_outcomes(model, win):
        key = tuple(o.sample.values[s] for s in sorted(win))
        got[key] = got.get(key, 0.0) + o.probability
    want = {}
    for z, w in oracles.moving_outcomes(win, offsets, values, probs, combine):
        key = tuple(z[s] for s in sorted(win))
        want[key] = want.get(key, 0.0) + w
    assert got.keys() == want.keys()
    for k in want:
        assert got[k] == pytest.approx(want[k], abs=1e-15)
    assert sum(got.values()) == pytest.approx(1.0, abs=1e-12)


def test_state_cap():
    model = IIDField(Bernoulli(0.5))
    assert model.state_count(lattice.box((3, 3))) == 512
    with pytest.raises(StateSpaceTooLarge, match="state space too large"):
        list(model.enumerate_batches(lattice.box((3, 3)), cap=100))


def test_dependence_range():
    assert fields.dependence_range(IIDField(Bernoulli(0.1))) == 0
    assert MovingField(Bernoulli(0.1), [(0,), (1,)]).dependence_range() == 1
    assert MovingField(Bernoulli(0.1), [(0, 0), (1, 0), (0, 2)]).dependence_range() == 2


def test_point_mass_enumerates_once():
    outs = list(IIDField(PointMass(0)).enumerate_outcomes(lattice.line(4)))
    assert len(outs) == 1 and outs[0].probability == 1.0


def test_explicit_field():
    model = ExplicitField([(0,), (1,)], [([0, 1], 0.25), ([1, 1], 0.75)])
    win = frozenset([(0,), (1,)])
    outs = list(model.enumerate_outcomes(win))
    assert [o.probability for o in outs] == [0.25, 0.75]
    assert outs[0].sample.values == {(0,): 0, (1,): 1}
    with pytest.raises(fields.InsufficientSupport):
        model.state_count(frozenset([(5,)]))


def test_model_from_spec():
    m = fields.model_from_spec({"kind": "moving", "marginal": {"type": "table", "entries": [[0, 0.5], [1, 0.5]]},
                                "offsets": [[0], [1]]})
    assert isinstance(m, MovingField) and m.dependence_range() == 1
    c = fields.marginal_from_spec({"type": "point", "value": "1+2j"})
    assert c.value == 1 + 2j
    with pytest.raises(ValueError, match="model.kind"):
        fields.model_from_spec({"kind": "nope"})
    with pytest.raises(ValueError, match="marginal.type"):
        fields.marginal_from_spec({"type": "nope"})
