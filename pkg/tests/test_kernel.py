import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eckconv import kernel
from eckconv.autograd import Tape, Var
from eckconv.checks import gradcheck
from eckconv.coset import encode_pairs, gaussian_embedding
from eckconv.geom import random_se3
from eckconv.kernel import (CoefficientNet, coeff_forward, conv_backward, conv_forward, conv_forward_explicit,
                            conv_forward_implicit, counter_model, dominant_cost, measure_costs)


def conv_oracle(f, w, W):
    K, Ci = f.shape
    A, Co, _ = W.shape
    y = np.zeros(Co)
    for i in range(K):
        for o in range(Co):
            for c in range(Ci):
                y[o] += sum(w[i, j] * W[j, o, c] for j in range(A)) * f[i, c]
    return y


def instance(rng, K, A, ci, co):
    return rng.standard_normal((K, ci)), rng.standard_normal((K, A)), rng.standard_normal((A, co, ci))


# -- coefficient net ---------------------------------------------------------------

def test_coeff_zero_net_gives_zero():
    net = CoefficientNet([(np.zeros((5, 6)), np.zeros(5)), (np.zeros((3, 5)), np.zeros(3))])
    assert np.all(coeff_forward(net, np.ones((4, 6))).value == 0)


def test_coeff_identity_single_layer():
    net = CoefficientNet([(np.eye(6), np.zeros(6))])
    emb = np.random.default_rng(0).uniform(size=(3, 6))
    np.testing.assert_array_equal(coeff_forward(net, emb).value, emb)


def test_coeff_matches_dense_matrix_oracle():
    from scipy.special import erf

    rng = np.random.default_rng(1)
    net = CoefficientNet.init(12, 5, (9, 7), rng)
    emb = rng.uniform(size=(10, 12))
    h = emb
    for i, (W, b) in enumerate(net.layers):
        h = h @ W.T + b
        if i < len(net.layers) - 1:
            h = h * 0.5 * (1 + erf(h / np.sqrt(2)))
    assert np.max(np.abs(coeff_forward(net, emb).value - h)) < 1e-12


def test_coeff_default_hidden_and_params_roundtrip():
    net = CoefficientNet.init(12, 4)
    assert [W.shape for W, _ in net.layers] == [(24, 12), (24, 24), (4, 24)]
    again = CoefficientNet.from_params(net.named_params("x"), "x")
    assert again.num_params() == net.num_params()


def test_coeff_shape_mismatch():
    with pytest.raises(ValueError):
        coeff_forward(CoefficientNet.init(6, 2), np.ones((2, 5)))


# -- convolution -------------------------------------------------------------------

@pytest.mark.parametrize("fwd", [conv_forward_implicit, conv_forward_explicit])
def test_conv_identity_case(fwd):
    f = np.array([[2.0, -3.0]])
    y = fwd(f, np.ones((1, 1)), np.eye(2)[None])
    np.testing.assert_array_equal(y, f[0])


@pytest.mark.parametrize("fwd", [conv_forward_implicit, conv_forward_explicit])
def test_conv_zero_coefficients(fwd):
    rng = np.random.default_rng(2)
    f, _, W = instance(rng, 4, 3, 2, 5)
    assert np.all(fwd(f, np.zeros((4, 3)), W) == 0)


@pytest.mark.parametrize("fwd", [conv_forward_implicit, conv_forward_explicit])
def test_conv_triple_loop_oracle(fwd):
    rng = np.random.default_rng(3)
    f, w, W = instance(rng, 5, 3, 4, 2)
    assert np.max(np.abs(fwd(f, w, W) - conv_oracle(f, w, W))) < 1e-12


@pytest.mark.parametrize("fwd", [conv_forward_implicit, conv_forward_explicit])
def test_conv_empty_neighborhood(fwd):
    rng = np.random.default_rng(4)
    f, w, W = instance(rng, 3, 2, 2, 3)
    np.testing.assert_array_equal(fwd(f, w, W, mask=np.zeros(3, bool)), np.zeros(3))


def test_conv_mask_and_normalize():
    rng = np.random.default_rng(5)
    f, w, W = instance(rng, 4, 2, 3, 2)
    mask = np.array([True, False, True, True])
    for fwd in (conv_forward_implicit, conv_forward_explicit):
        y = fwd(f, w, W, mask=mask, normalize=True)
        np.testing.assert_allclose(y, conv_oracle(f[mask], w[mask], W) / 3, atol=1e-12)


def test_conv_shape_errors():
    with pytest.raises(ValueError):
        conv_forward_explicit(np.ones((3, 2)), np.ones((3, 4)), np.ones((3, 1, 2)))
    with pytest.raises(ValueError):
        conv_forward("sideways", np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1, 1)))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(1, 6), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31))
def test_orderings_agree(K, A, ci, co, seed):
    rng = np.random.default_rng(seed)
    f, w, W = instance(rng, K, A, ci, co)
    g = rng.standard_normal(co)
    grads = {}
    for ordering in ("implicit", "explicit"):
        t = Tape()
        y = conv_forward(ordering, f, w, W, t)
        grads[ordering] = (y, conv_backward(ordering, t, g))
    (yi, gi), (ye, ge) = grads["implicit"], grads["explicit"]
    assert np.max(np.abs(yi - ye)) < 1e-12
    for k in gi:
        assert np.max(np.abs(gi[k] - ge[k])) < 1e-10


def test_conv_backward_ordering_mismatch():
    t = Tape()
    conv_forward_explicit(np.ones((2, 2)), np.ones((2, 1)), np.ones((1, 2, 2)), t)
    with pytest.raises(RuntimeError):
        conv_backward("implicit", t, np.ones(2))
    with pytest.raises(RuntimeError):
        conv_backward("explicit", Tape(), np.ones(2))


@pytest.mark.parametrize("ordering", ["implicit", "explicit"])
def test_conv_gradcheck(ordering):
    rng = np.random.default_rng(6)
    f, w, W = instance(rng, 4, 3, 3, 2)

    def fn(t, feats, omegas, bases):
        y = conv_forward(ordering, feats, omegas, bases, t)
        return t.nodes[-1].output if t.enabled else y

    assert max(gradcheck(fn, dict(feats=f, omegas=w, bases=W)).values()) < 1e-6


def test_batched_eckconv_matches_single():
    rng = np.random.default_rng(7)
    M, K, A, ci, co = 3, 4, 2, 3, 5
    f = rng.standard_normal((M, K, ci))
    w = rng.standard_normal((M, K, A))
    W = rng.standard_normal((A, co, ci))
    for ordering in ("implicit", "explicit"):
        y = kernel.eckconv(Tape(enabled=False), f, w, W, ordering).value
        for m in range(M):
            np.testing.assert_allclose(y[m], conv_oracle(f[m], w[m], W), atol=1e-12)


def test_full_pipeline_invariant_per_centroid():
    rng = np.random.default_rng(8)
    x = rng.uniform(-0.3, 0.3, (10, 3))
    n = rng.standard_normal((10, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    f = rng.standard_normal((10, 4))
    net = CoefficientNet.init(3 * 8, 5, (16, 16), rng)
    W = kernel.init_bases(5, 4, 3, rng)

    def run(xx, nn_):
        emb = gaussian_embedding(encode_pairs(xx[0], nn_[0], xx, nn_, 1.0), 8, 0.05)
        return conv_forward_explicit(f, coeff_forward(net, emb).value, W)

    T = random_se3(rng, 10.0)
    assert np.max(np.abs(run(x, n) - run(T.apply_points(x), T.apply_vectors(n)))) < 1e-10


# -- counters ----------------------------------------------------------------------

def test_dominant_terms_at_reference_point():
    assert dominant_cost("implicit", 22, 32, 64, 64) == 2_883_584
    assert dominant_cost("explicit", 22, 32, 64, 64) == 135_168
    assert round(2_883_584 / 135_168, 1) == 21.3


@pytest.mark.parametrize("ordering", ["implicit", "explicit"])
@pytest.mark.parametrize("shape", [(1, 1, 1, 1), (3, 5, 2, 4), (22, 32, 64, 64)])
def test_counters_match_model_exactly(ordering, shape):
    counters, _ = kernel.run_instrumented(ordering, *shape)
    assert counters.saved_intermediate_scalars == counter_model(ordering, *shape)


def test_doubling_cout_growth():
    A, K, ci, co = 4, 8, 6, 5
    assert dominant_cost("implicit", A, K, ci, 2 * co) == 2 * dominant_cost("implicit", A, K, ci, co)
    ratio = dominant_cost("explicit", A, K, ci, 2 * co) / dominant_cost("explicit", A, K, ci, co)
    assert ratio == (K * ci + 2 * ci * co) / (K * ci + ci * co)


def test_single_basis_models_are_linear():
    assert dominant_cost("implicit", 1, 3, 4, 5) == 3 * 4 * 5
    assert dominant_cost("explicit", 1, 3, 4, 5) == 3 * 4 + 4 * 5


def test_measure_costs_monotone_and_csv(tmp_path):
    sweep = kernel.parse_sweep("A=1,2,K=2,4,cin=3,cout=2,4")
    assert len(sweep) == 8
    rows = measure_costs(sweep, repeats=1)
    assert len(rows) == 16
    for ordering in ("implicit", "explicit"):
        table = {(r["A"], r["K"], r["cin"], r["cout"]): r["saved_scalars"] for r in rows if r["ordering"] == ordering}
        for (A, K, ci, co), v in table.items():
            for bigger in ((2 * A, K, ci, co), (A, 2 * K, ci, co), (A, K, ci, 2 * co)):
                if bigger in table:
                    assert table[bigger] > v
    out = tmp_path / "c.csv"
    kernel.write_counters_csv(rows, out)
    lines = out.read_text().splitlines()
    assert lines[0] == ",".join(kernel.COUNTER_COLUMNS) and len(lines) == 17


def test_measure_costs_rejects_empty_and_parse_errors():
    with pytest.raises(ValueError):
        measure_costs([])
    with pytest.raises(ValueError):
        kernel.parse_sweep("A=1,K=2")
    with pytest.raises(ValueError):
        kernel.parse_sweep("A=1,K=2,cin=3,cout=4,Q=1")


def test_flops_are_counted():
    t = Tape()
    conv_forward_implicit(*instance(np.random.default_rng(9), 2, 2, 2, 2), t)
    assert t.flop_forward > 0 and t.flop_backward == 0
    assert isinstance(t.nodes[-1].output, Var)
