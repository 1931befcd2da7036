import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import graphs, path
from oracles import fd_check, naive_forward, random_gcn_case
from linksched.gcn import (
    GcnLayer,
    GcnModel,
    ModelFormatError,
    backward,
    embed,
    forward,
    forward_crts,
    forward_local,
    identity_model,
    init_model,
    load_model,
    model_to_dict,
    save_model,
)
from linksched.graph import ConflictGraph, gen_er, normalized_laplacian


def one_layer(a, b, act="linear"):
    return GcnModel([GcnLayer([[a]], [[b]], act)])


def test_identity_path():
    g = gen_er(10, 0.3, 0)
    u = np.random.default_rng(0).random(10)
    assert np.array_equal(embed(g, u, identity_model()), u)


def test_laplacian_only_two_path():
    z = embed(path(2), [1.0, 0.0], one_layer(0.0, 1.0))
    assert np.allclose(z, [1.0, -1.0])


def test_isolated_vertex_local():
    g = ConflictGraph.empty(1)
    assert forward_local(g, [[2.0]], one_layer(3.0, 5.0))[0, 0] == pytest.approx(3 * 2 + 5 * 2)


def test_star_hand_computed():
    g = ConflictGraph.from_edges(5, [(0, k) for k in range(1, 5)])
    x = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    out = forward_local(g, x, one_layer(0.5, 2.0))[:, 0]
    # centre: d=4, leaves d=1, so weights are 1/sqrt(4) = 0.5
    centre = 0.5 * 1 + 2.0 * (1 - 0.5 * (2 + 3 + 4 + 5))
    leaves = [0.5 * x[k] + 2.0 * (x[k] - 0.5 * 1) for k in range(1, 5)]
    assert np.allclose(out, [centre] + leaves)


def test_matches_naive_dense_oracle():
    rng = np.random.default_rng(1)
    for _ in range(20):
        g, model, x0 = random_gcn_case(rng)
        assert np.max(np.abs(forward(g, x0, model)[0] - naive_forward(g, x0, model))) <= 1e-12


def test_forward_local_equals_dense():
    rng = np.random.default_rng(2)
    for _ in range(30):
        g, model, x0 = random_gcn_case(rng, depth=3, width=8)
        assert np.max(np.abs(forward(g, x0, model)[0] - forward_local(g, x0, model))) <= 1e-12


@given(graphs(max_n=10), st.integers(0, 10_000))
def test_forward_local_equals_dense_property(g, seed):
    model = init_model([2, 4, 1], seed)
    x0 = np.random.default_rng(seed).normal(size=(g.n, 2))
    if g.n == 0:
        return
    assert np.max(np.abs(forward(g, x0, model)[0] - forward_local(g, x0, model))) <= 1e-12


def test_shape_errors():
    g = gen_er(5, 0.5, 0)
    with pytest.raises(ValueError):
        forward(g, np.ones(4), identity_model())
    with pytest.raises(ValueError):
        forward(g, np.ones((5, 2)), identity_model())
    with pytest.raises(ValueError):
        forward(g, [np.nan] * 5, identity_model())


def test_backward_zero_upstream():
    g, model, x0 = random_gcn_case(np.random.default_rng(3), depth=3, width=4)
    out, tape = forward(g, x0, model)
    for g0, g1 in backward(tape, model, np.zeros_like(out)):
        assert not g0.any() and not g1.any()


def test_backward_one_layer_linear():
    g = gen_er(8, 0.4, 1)
    x0 = np.random.default_rng(1).random(8)
    model = one_layer(0.7, -0.3)
    _, tape = forward(g, x0, model)
    lx = normalized_laplacian(g) @ x0
    for v in range(8):
        e = np.zeros(8)
        e[v] = 1.0
        (g0, g1), = backward(tape, model, e)
        assert g0[0, 0] == pytest.approx(x0[v]) and g1[0, 0] == pytest.approx(lx[v])


def test_backward_tape_mismatch():
    g = gen_er(6, 0.5, 0)
    _, tape = forward(g, np.ones(6), identity_model())
    with pytest.raises(ValueError):
        backward(tape, init_model([1, 3, 1], 0), np.ones(6))
    with pytest.raises(ValueError):
        backward(tape, identity_model(), np.ones(5))


def test_backward_finite_differences():
    rng = np.random.default_rng(4)
    done = 0
    while done < 10:
        g, model, x0 = random_gcn_case(rng, depth=5, width=8)
        err = fd_check(g, model, x0, rng, coords=20)
        if err is None:
            continue
        assert err < 1e-4
        done += 1


def test_scaling_preserves_order():
    g = gen_er(30, 0.2, 0)
    u = np.random.default_rng(0).random(30)
    z1 = embed(g, u, one_layer(1.0, 0.0))
    z3 = embed(g, u, one_layer(3.0, 0.0))
    assert np.allclose(z3, 3 * z1)
    assert np.array_equal(np.argsort(-z1 * u, kind="stable"), np.argsort(-z3 * u, kind="stable"))


def test_crts_zero_params_half():
    m = init_model([1, 4, 6], 0, output_kind="crts")
    for layer in m.layers[-1:]:
        layer.theta0[:] = 0
        layer.theta1[:] = 0
    Z = forward_crts(gen_er(7, 0.4, 0), np.ones(7), m)
    assert Z.shape == (7, 3) and np.all(Z == 0.5)


@pytest.mark.parametrize("pairing", ["sigmoid", "softmax"])
def test_crts_range_and_shape(pairing):
    rng = np.random.default_rng(5)
    for b in (1, 4):
        m = init_model([1, 8, 2 * b], int(rng.integers(99)), output_kind="crts", pair_activation=pairing)
        g = gen_er(15, 0.3, 1)
        Z = forward_crts(g, rng.random(15) * 50, m)
        assert Z.shape == (15, b) and np.all((Z >= 0) & (Z <= 1))


def test_crts_wrong_kind():
    with pytest.raises(ValueError):
        forward_crts(gen_er(4, 0.5, 0), np.ones(4), identity_model())


def test_model_roundtrip(tmp_path):
    m = init_model([1] + [32] * 19 + [1], 0)
    p = tmp_path / "m.json"
    save_model(m, p)
    back = load_model(p)
    assert back.dims == m.dims and back.depth == 20
    for a, b in zip(m.parameters(), back.parameters()):
        assert np.array_equal(a, b)


def test_model_truncated_and_version(tmp_path):
    p = tmp_path / "m.json"
    text = json.dumps(model_to_dict(identity_model()))
    p.write_text(text[: len(text) // 2])
    with pytest.raises(ModelFormatError):
        load_model(p)
    doc = model_to_dict(identity_model())
    doc["version"] = 99
    p.write_text(json.dumps(doc))
    with pytest.raises(ModelFormatError, match="version"):
        load_model(p)


def test_layer_shape_chain_enforced():
    with pytest.raises(ValueError):
        GcnModel([GcnLayer(np.ones((1, 3)), np.ones((1, 3))), GcnLayer(np.ones((2, 1)), np.ones((2, 1)))])
