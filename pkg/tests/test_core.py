import numpy as np
import pytest
from hypothesis import given, strategies as st

from midorf.core import (
    Bag,
    DataValidationError,
    ModelParams,
    OrdinalScale,
    check_dataset,
    decode_cutpoints,
    encode_cutpoints,
    equal_mass_cutpoints,
    make_dataset,
    validate_dataset,
)


def test_scale_needs_two_levels():
    with pytest.raises(ValueError):
        OrdinalScale(1)
    assert list(OrdinalScale(3).levels) == [1, 2, 3]


def test_validation_reports_each_problem():
    bags = [
        Bag("ok", np.zeros((3, 2)), 2, [1, 2, 1]),
        Bag("high", np.zeros((2, 2)), 4),
        Bag("dim", np.zeros((2, 3)), 1),
        Bag("empty", np.zeros((0, 2)), 1),
        Bag("ragged", [[0.0, 1.0], [1.0]], 1),
        Bag("hlen", np.zeros((2, 2)), 2, [1, 2, 2]),
    ]
    report = validate_dataset(make_dataset(bags, 3, 2))
    kinds = {(v.bag_id, v.kind) for v in report.violations}
    assert ("high", "label_range") in kinds
    assert ("dim", "dimension") in kinds
    assert ("empty", "empty") in kinds
    assert ("ragged", "dimension") in kinds
    assert ("hlen", "instance_labels") in kinds
    assert not any(v.bag_id == "ok" for v in report.violations)
    with pytest.raises(DataValidationError, match="high"):
        check_dataset(make_dataset(bags, 3, 2))


def test_training_view_strips_instance_labels():
    ds = make_dataset([Bag("a", np.ones((2, 1)), 2, [1, 2])], 2, 1)
    view = ds.training_view()
    assert view.bags[0].instance_labels is None
    assert ds.bags[0].instance_labels is not None
    assert view.bags[0].label == 2


def test_bags_are_read_only():
    b = Bag("a", np.ones((2, 1)), 1)
    with pytest.raises(ValueError):
        b.instances[0, 0] = 5.0


def test_equal_mass_cutpoints():
    c = equal_mass_cutpoints(4)
    np.testing.assert_allclose(c, [-0.6744897501960817, 0.0, 0.6744897501960817], atol=1e-12)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6, unique=True))
def test_cutpoint_encoding_round_trip(values):
    cuts = np.sort(np.array(values))
    if np.any(np.diff(cuts) < 1e-6):
        return
    first, gaps = encode_cutpoints(cuts)
    p = ModelParams(np.zeros(1), first, gaps, np.zeros((cuts.size + 1,) * 2))
    full = decode_cutpoints(p)
    assert full[0] == -np.inf and full[-1] == np.inf
    np.testing.assert_allclose(full[1:-1], cuts, atol=1e-9)


@given(st.integers(2, 6), st.integers(1, 5), st.integers(0, 100))
def test_params_vector_round_trip(L, d, seed):
    p = ModelParams.initial(L, d, seed)
    v = p.to_vector()
    assert v.size == p.size == d + 1 + (L - 2) + L * L + 1
    assert ModelParams.from_vector(v, L, d) == p


def test_initial_params():
    p = ModelParams.initial(6, 10, seed=3)
    assert np.all(p.transition == 0) and p.card_weight == 0.0
    assert np.std(p.beta) < 0.05
    np.testing.assert_allclose(p.cutpoints[1:-1], equal_mass_cutpoints(6), atol=1e-12)
    assert p == ModelParams.initial(6, 10, seed=3)
    assert p != ModelParams.initial(6, 10, seed=4)


def test_params_reject_bad_transition_shape():
    with pytest.raises(ValueError):
        ModelParams(np.zeros(2), 0.0, np.zeros(1), np.zeros((2, 2)))
