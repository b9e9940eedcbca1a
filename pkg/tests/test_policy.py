import math

import numpy as np
import pytest

from activecls import policy as pol

SMALL = pol.NetDims(d_in=9, d_h=4, d_enc=8, heads=2)


@pytest.fixture
def params():
    return pol.init_params(rng=np.random.default_rng(0))


def _obs(rng, m, d=9):
    return rng.normal(size=(m, d))


def test_shapes_and_init(params):
    d = params.dims
    assert params["sab_wq"].shape == (d.heads, d.d_h, d.d_in + 1)
    assert params["sab_wo"].shape == (d.heads, d.d_enc, d.d_h + 1)
    assert np.all(params["logstd_w"][:, -1] == -0.5)
    lim = math.sqrt(6 / (d.d_in + d.d_h))
    assert np.abs(params["sab_wq"][..., :-1]).max() <= lim
    with pytest.raises(ValueError):
        pol.PolicyParams(d, {**dict(params.items()), "value_w": np.zeros(3)})


def test_singleton_attention_is_one(params, rng):
    out = pol.forward_batch(params, _obs(rng, 1)[None], np.ones((1, 1), bool))
    np.testing.assert_array_equal(out.sab_attention, np.ones((params.dims.heads, 1, 1, 1)))
    np.testing.assert_array_equal(out.pma_attention, np.ones((params.dims.heads, 1, 1)))


def test_duplicate_targets_get_identical_latents(params, rng):
    o = _obs(rng, 3)
    o = np.vstack([o, o[1:2]])
    lat = pol.sab_forward(o, params)
    np.testing.assert_array_equal(lat[1], lat[3])


def test_identical_latents_pool_uniformly(params):
    lat = np.tile(np.linspace(0, 1, params.dims.d_enc), (5, 1))
    out = pol.forward_batch(params, np.zeros((1, 5, 9)), np.ones((1, 5), bool))
    cache = {}
    pol.pma_forward_batch(params, lat[None], np.ones((1, 5), bool), cache)
    np.testing.assert_allclose(cache["lam"], 0.2, atol=1e-15)
    assert out.mu.shape == (1, 3)


def test_sab_equivariance(params, rng):
    o = _obs(rng, 6)
    perm = rng.permutation(6)
    np.testing.assert_allclose(pol.sab_forward(o, params)[perm], pol.sab_forward(o[perm], params),
                               atol=1e-12)


def test_zero_weights_heads():
    p = pol.init_params(rng=np.random.default_rng(1))
    for n in ("mu_w", "logstd_w", "value_w"):
        p[n] = 0.0
    p.tensors["mu_w"][:, -1] = [0.1, -0.2, 0.3]
    mu, ls, v = pol.heads_forward(p, np.ones((1, p.dims.d_enc)))
    np.testing.assert_allclose(mu[0], [0.1, -0.2, 0.3])
    assert v[0] == 0.0


def test_value_linear_in_pooled(params, rng):
    e = np.abs(rng.normal(size=(1, params.dims.d_enc)))
    v1 = pol.heads_forward(params, e)[2]
    v2 = pol.heads_forward(params, 2 * e)[2]
    assert v2[0] == pytest.approx(2 * v1[0], rel=1e-14)


def test_logstd_clamp(params):
    p = params.copy()
    p["logstd_w"] = 0.0
    p.tensors["logstd_w"][:, -1] = [-9.0, 0.0, 9.0]
    _, ls, _ = pol.heads_forward(p, np.zeros((1, p.dims.d_enc)))
    np.testing.assert_array_equal(ls[0], [-5.0, 0.0, 2.0])


def test_empty_set_rejected(params):
    with pytest.raises(ValueError):
        pol.forward(params, np.zeros((0, 9)))
    with pytest.raises(ValueError):
        pol.sab_forward(np.zeros((0, 9)), params)
    with pytest.raises(ValueError):
        pol.pad_sets([np.zeros((0, 9))])


def test_padding_does_not_change_outputs(params, rng):
    sets = [_obs(rng, m) for m in (1, 4, 2)]
    X, mask = pol.pad_sets(sets)
    out = pol.forward_batch(params, X, mask)
    for i, s in enumerate(sets):
        mu, ls, v = pol.forward(params, s)
        np.testing.assert_allclose(out.mu[i], mu, atol=1e-12)
        np.testing.assert_allclose(out.value[i], v, atol=1e-12)


def test_large_set_is_finite(params, rng):
    mu, ls, v = pol.forward(params, _obs(rng, 100))
    assert np.isfinite(mu).all() and np.isfinite(ls).all() and math.isfinite(v)


def test_forward_bitwise_repeatable(params, rng):
    o = _obs(rng, 7)
    a, b = pol.forward(params, o), pol.forward(params, o)
    assert a[0].tobytes() == b[0].tobytes() and a[2] == b[2]


def _fd_check(pooling, seed):
    rng = np.random.default_rng(seed)
    p = pol.init_params(SMALL, rng)
    for _, t in p.items():
        t += 0.1 * rng.normal(size=t.shape)
    X = rng.normal(size=(2, 3, 9))
    mask = np.array([[True, True, True], [True, True, False]])
    f = pol.forward_batch(p, X, mask, pooling)
    gm, gl, gv = rng.normal(size=f.mu.shape), rng.normal(size=f.logstd.shape), rng.normal(size=2)

    def loss(q):
        o = pol.forward_batch(q, X, mask, pooling)
        return float((gm * o.mu).sum() + (gl * o.logstd).sum() + (gv * o.value).sum())

    grads = pol.backward(p, f, gm, gl, gv)
    h = 1e-5
    worst = 0.0
    for name, t in p.items():
        for i in range(t.size):
            q = p.copy()
            q.tensors[name].flat[i] += h
            up = loss(q)
            q.tensors[name].flat[i] -= 2 * h
            num = (up - loss(q)) / (2 * h)
            ana = grads.tensors[name].flat[i]
            scale = max(abs(num), abs(ana), 1e-6)
            worst = max(worst, abs(num - ana) / scale if scale > 1e-6 else abs(num - ana))
    return worst


@pytest.mark.parametrize("pooling", ["attention", "mean"])
def test_gradients_match_finite_differences(pooling):
    assert _fd_check(pooling, 3) < 1e-4


def test_value_gradient_is_pooled_latent(params, rng):
    X, mask = pol.pad_sets([_obs(rng, 3)])
    f = pol.forward_batch(params, X, mask)
    g = pol.backward(params, f, np.zeros((1, 3)), np.zeros((1, 3)), np.ones(1))
    np.testing.assert_array_equal(g["value_w"], f.pooled[0])


def test_zero_upstream_zero_gradient(params, rng):
    X, mask = pol.pad_sets([_obs(rng, 3)])
    f = pol.forward_batch(params, X, mask)
    g = pol.backward(params, f, np.zeros((1, 3)), np.zeros((1, 3)), np.zeros(1))
    assert all(np.all(t == 0) for _, t in g.items())


def test_sample_action_degenerate_and_mean():
    b = np.array([0.5, 0.5, 0.26])
    rng = np.random.default_rng(0)
    a, z, _ = pol.sample_action(np.array([0.3, -0.2, 1.0]), np.full(3, -40.0), rng, b)
    np.testing.assert_allclose(a, b * np.tanh([0.3, -0.2, 1.0]), atol=1e-12)
    ls = np.array([-0.5, 0.1, 0.3])
    expect = -np.sum(ls + 0.5 * math.log(2 * math.pi))
    assert pol.gaussian_log_prob(np.zeros(3), np.zeros(3), ls) - pol.tanh_log_det(np.zeros(3)) \
        == pytest.approx(expect, abs=1e-12)


def test_sampled_actions_inside_bounds():
    b = np.array([0.5, 0.5, 0.26])
    rng = np.random.default_rng(1)
    mu = np.zeros((100_000, 3))
    z = mu + np.exp(1.5) * rng.standard_normal(mu.shape)
    a = pol.squash(z, b)
    assert np.all(np.abs(a) <= b)


def test_tanh_log_det_stable():
    z = np.array([[0.0, 5.0, -30.0]])
    ref = np.log(1 - np.tanh(z[:, :2]) ** 2).sum()
    assert pol.tanh_log_det(z[:, :2])[0] == pytest.approx(ref, rel=1e-10)
    assert np.isfinite(pol.tanh_log_det(z)).all()


def test_entropy_closed_form(rng):
    ls = rng.normal(size=(5, 3))
    np.testing.assert_allclose(pol.gaussian_entropy(ls),
                               np.sum(ls + 0.5 * np.log(2 * math.pi * math.e), axis=1), atol=1e-12)


def test_kl_zero_for_identical_and_positive_otherwise(rng):
    mu, ls = rng.normal(size=(4, 3)), rng.normal(size=(4, 3)) * 0.3
    np.testing.assert_allclose(pol.gaussian_kl(mu, ls, mu, ls), 0.0, atol=1e-15)
    assert np.all(pol.gaussian_kl(mu, ls, mu + 0.1, ls - 0.2) > 0)


def test_checkpoint_roundtrip(tmp_path, params):
    path = tmp_path / "p.bin"
    pol.save(params, path)
    back = pol.load(path)
    for (n, a), (_, b) in zip(params.items(), back.items()):
        assert a.tobytes() == b.tobytes(), n
    raw = path.read_bytes()
    assert raw[:4] == b"ACPV"
    assert len(raw) == 24 + 8 * params.size


def test_checkpoint_rejects_corruption(params):
    data = pol.dumps(params)
    with pytest.raises(ValueError):
        pol.loads(b"XXXX" + data[4:])
    with pytest.raises(ValueError):
        pol.loads(data[:-8])
    with pytest.raises(ValueError):
        pol.loads(data + b"\0" * 8)
