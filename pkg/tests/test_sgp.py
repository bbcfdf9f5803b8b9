import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from topgraph.errors import DataError
from topgraph.oracles import full_system, random_graph
from topgraph.sgp import (KappaSpec, KappaTensor, build_kappa_tensor, flat_permutation,
                          kappa_eval, load_kappa, materialize_sgp_dense, save_kappa)


def test_flat_grid():
    k = build_kappa_tensor(KappaSpec("flat"), [np.array([0.3, 0.1]), np.array([1.0, 0.0, -1.0])])
    np.testing.assert_array_equal(k.values, np.ones((2, 3)))


def test_tensor_grid():
    k = build_kappa_tensor(KappaSpec("tensor"), [np.array([1, 0.5]), np.array([1, 0.2])])
    np.testing.assert_allclose(k.values, [[1, 0.2], [0.5, 0.1]], rtol=1e-15)


def test_cartesian_three_way():
    k = build_kappa_tensor(KappaSpec("cartesian"), [[0.9], [0.8], [0.7]])
    assert k.values.shape == (1, 1, 1)
    assert k.values[0, 0, 0] == pytest.approx(2.4, abs=1e-15)


def test_kappa_eval_examples():
    assert kappa_eval(KappaSpec("tensor"), [0.5, 0.4]) == pytest.approx(0.2)
    assert kappa_eval(KappaSpec("cartesian"), [0.5, 0.4]) == pytest.approx(0.9)
    assert kappa_eval(KappaSpec("exp"), [0.5, 0.4]) == pytest.approx(np.exp(0.9))
    assert kappa_eval(KappaSpec("exponential"), [0.5, 0.4, 0.2]) == pytest.approx(
        np.exp(0.5 * 0.4 + 0.4 * 0.2 + 0.5 * 0.2))
    assert kappa_eval(KappaSpec("flat"), [3.0, -2.0]) == 1.0


def test_exponential_rejects_four_graphs():
    with pytest.raises(ValueError, match="J <= 3"):
        kappa_eval(KappaSpec("exponential"), [0.1, 0.2, 0.3, 0.4])


def test_unknown_variant():
    with pytest.raises(ValueError):
        KappaSpec("gaussian")


def test_nonparametric_payload_passthrough():
    payload = KappaTensor(np.array([[0.4, 0.3], [0.2, 0.1]]))
    spec = KappaSpec("nonparametric", payload)
    assert build_kappa_tensor(spec, [[1, 0], [1, 0]]) is payload
    with pytest.raises(DataError):
        build_kappa_tensor(spec, [[1, 0, 0], [1, 0]])
    with pytest.raises(ValueError):
        kappa_eval(spec, [1, 1])
    with pytest.raises(ValueError):
        KappaSpec("nonparametric")


def test_negative_values_clamped_and_counted():
    k = build_kappa_tensor(KappaSpec("tensor"), [np.array([1.0, -0.5]), np.array([1.0, 0.5])])
    assert k.clamped == 2
    np.testing.assert_allclose(k.values, [[1, 0.5], [1e-8, 1e-8]])


def test_negative_kappa_tensor_rejected():
    with pytest.raises(DataError):
        KappaTensor(np.array([0.1, -0.1]))


def test_archive_roundtrip(tmp_path):
    k = KappaTensor(np.arange(6.0).reshape(2, 3) / 15, clamped=1)
    save_kappa(tmp_path / "k.bin", k)
    back = load_kappa(tmp_path / "k.bin")
    assert np.array_equal(back.values, k.values) and back.clamped == 1


# -- dense materialization ----------------------------------------------------

@pytest.fixture
def two_graphs(rng):
    return random_graph(2, rng, density=1.0), random_graph(3, rng)


def test_tensor_is_kronecker_product(two_graphs):
    g1, g2 = two_graphs
    m = materialize_sgp_dense([full_system(g1), full_system(g2)], KappaSpec("tensor"))
    np.testing.assert_allclose(m, np.kron(g1.toarray(), g2.toarray()), atol=1e-8)


def test_cartesian_is_kronecker_sum(two_graphs):
    g1, g2 = two_graphs
    a, b = g1.toarray(), g2.toarray()
    m = materialize_sgp_dense([full_system(g1), full_system(g2)], KappaSpec("cartesian"))
    np.testing.assert_allclose(m, np.kron(a, np.eye(3)) + np.kron(np.eye(2), b), atol=1e-8)


def test_flat_is_identity(two_graphs):
    m = materialize_sgp_dense([full_system(g) for g in two_graphs], KappaSpec("flat"))
    np.testing.assert_allclose(m, np.eye(6), atol=1e-12)


def test_size_bound(rng):
    s = full_system(random_graph(65, rng, density=0.1))
    with pytest.raises(ValueError, match="dense limit"):
        materialize_sgp_dense([s, s], KappaSpec("flat"))


@pytest.mark.parametrize("variant", ["tensor", "cartesian", "exponential"])
def test_spectrum_is_kappa_multiset(rng, variant):
    systems = [full_system(random_graph(n, rng)) for n in (3, 4)]
    m = materialize_sgp_dense(systems, KappaSpec(variant))
    expected = np.sort([kappa_eval(KappaSpec(variant), [a, b])
                        for a in systems[0].lambdas for b in systems[1].lambdas])
    np.testing.assert_allclose(np.linalg.eigvalsh(m), expected, atol=1e-6)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10 ** 6), variant=st.sampled_from(["tensor", "cartesian", "exponential"]))
def test_commutativity(seed, variant):
    rng = np.random.default_rng(seed)
    dims = tuple(int(k) for k in rng.integers(1, 5, size=3))
    systems = [full_system(random_graph(n, rng)) for n in dims]
    base = materialize_sgp_dense(systems, KappaSpec(variant))
    for perm in itertools.permutations(range(3)):
        permuted = materialize_sgp_dense([systems[k] for k in perm], KappaSpec(variant))
        p = flat_permutation(dims, perm)
        np.testing.assert_allclose(permuted, base[np.ix_(p, p)], atol=1e-8)


def test_flat_permutation_two_way():
    # product vertex (i, j) of a 2x3 grid is i*3 + j; swapped it is j*2 + i
    p = flat_permutation((2, 3), (1, 0))
    assert p.tolist() == [0, 3, 1, 4, 2, 5]


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6), variant=st.sampled_from(["cartesian", "exponential", "flat"]),
       J=st.integers(1, 3))
def test_parametric_grid_nonincreasing(seed, variant, J):
    rng = np.random.default_rng(seed)
    lams = [np.sort(rng.uniform(-1, 1, size=int(rng.integers(1, 5))))[::-1] for _ in range(J)]
    if variant == "exponential" and J == 3:
        # the pairwise form is only monotone on nonnegative spectra
        lams = [np.abs(l) for l in lams]
        lams = [np.sort(l)[::-1] for l in lams]
    v = build_kappa_tensor(KappaSpec(variant), lams).values
    for a in range(J):
        assert np.all(np.diff(v, axis=a) <= 1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_tensor_grid_nonincreasing_on_nonnegative_spectra(seed):
    rng = np.random.default_rng(seed)
    lams = [np.sort(rng.uniform(0, 1, size=int(rng.integers(1, 5))))[::-1] for _ in range(2)]
    v = build_kappa_tensor(KappaSpec("tensor"), lams).values
    assert np.all(np.diff(v, axis=0) <= 1e-12) and np.all(np.diff(v, axis=1) <= 1e-12)
