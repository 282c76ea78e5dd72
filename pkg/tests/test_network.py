import numpy as np
import pytest

from sigrank import network as nn
from sigrank.gradcheck import TINY, central_difference, rel_error, tiny_problem


def test_selu_values():
    assert nn.selu(0.0) == 0.0
    assert nn.selu(1.0) == pytest.approx(1.0507009873554805)
    assert nn.selu(-1e4) == pytest.approx(-1.0507009873554805 * 1.6732632423543772, rel=1e-12)


def test_receptive_field_arithmetic():
    assert nn.receptive_field(nn.NetConfig(3)) == 54


def test_impulse_probe_receptive_field():
    cfg = nn.NetConfig(3)
    params = nn.init_params(cfg, 0, np.float64)
    # for every last-layer position, collect the input steps that move it
    L = 160
    rng = np.random.default_rng(1)
    base = rng.standard_normal((3, L))
    ref = nn.forward(params, nn.make_batch([base], dtype=np.float64), cfg, keep_activations=True).conv_outputs[-1][0]
    influence = {}
    for t in range(L):
        x = base.copy()
        x[:, t] += 1.0
        out = nn.forward(params, nn.make_batch([x], dtype=np.float64), cfg, keep_activations=True).conv_outputs[-1][0]
        for p in np.flatnonzero(np.any(out != ref, axis=1)):
            influence.setdefault(int(p), []).append(t)
    spans = [max(v) - min(v) + 1 for p, v in influence.items() if min(v) > 0 and max(v) < L - 1]
    assert spans and max(spans) <= 54


def test_padding_invariance_exact():
    cfg = nn.NetConfig(4, channels=(8, 8, 16, 16, 32, 32), embed_dim=16)
    params = nn.init_params(cfg, 2)
    x = np.random.default_rng(2).standard_normal((3, 37))
    short = nn.forward(params, nn.make_batch([x]), cfg)
    long_ = nn.forward(params, nn.make_batch([x, np.ones((3, 90))]), cfg)
    assert np.array_equal(short.pooled[0], long_.pooled[0])
    assert np.array_equal(short.embeddings[0], long_.embeddings[0])


def test_too_short_rejected():
    cfg = nn.NetConfig(2, **{k: v for k, v in TINY.items() if k != "n_classes"})
    with pytest.raises(ValueError):
        nn.forward(nn.init_params(cfg), nn.make_batch([np.zeros((3, 5))]), cfg)


def test_gradients_match_finite_differences():
    cfg, params, batch = tiny_problem(7)
    rng = np.random.default_rng(7)
    ge = rng.standard_normal((4, cfg.embed_dim))
    gl = rng.standard_normal((4, cfg.n_classes))

    def f():
        r = nn.forward(params, batch, cfg)
        return float(np.sum(ge * r.embeddings) + np.sum(gl * r.logits))

    r = nn.forward(params, batch, cfg)
    grads = nn.backward(params, r.cache, ge, gl)
    for name in ("conv1.weight", "conv4.bias", "conv6.weight", "fc_embed.weight", "fc_softmax.bias"):
        assert rel_error(grads[name], central_difference(f, params[name], 1e-4)) < 1e-4, name


def test_zero_upstream_zero_grads():
    cfg, params, batch = tiny_problem(1)
    r = nn.forward(params, batch, cfg)
    grads = nn.backward(params, r.cache, np.zeros((4, cfg.embed_dim)), np.zeros((4, cfg.n_classes)))
    assert all(not np.any(g) for g in grads.values())


def test_duplicated_item_doubles_contribution():
    cfg = nn.NetConfig(**TINY)
    params = nn.init_params(cfg, 0, np.float64)
    x = np.random.default_rng(0).standard_normal((3, 20))
    ge = np.random.default_rng(1).standard_normal((1, cfg.embed_dim))
    one = nn.forward(params, nn.make_batch([x], dtype=np.float64), cfg)
    two = nn.forward(params, nn.make_batch([x, x], dtype=np.float64), cfg)
    g1 = nn.backward(params, one.cache, ge, np.zeros((1, 3)))
    g2 = nn.backward(params, two.cache, np.vstack([ge, ge]), np.zeros((2, 3)))
    for k in g1:
        assert np.allclose(g2[k], 2 * g1[k], rtol=1e-10, atol=1e-13)


def test_sgd_examples():
    p = {"w": np.array([1.0])}
    nn.sgd_step(p, {"w": np.array([0.0])}, {}, weight_decay=0.0)
    assert p["w"][0] == 1.0
    nn.sgd_step(p, {"w": np.array([1.0])}, {}, weight_decay=0.0)
    assert p["w"][0] == pytest.approx(1 - 0.001, abs=1e-15)

    p, v = {"w": np.array([0.0])}, {}
    nn.sgd_step(p, {"w": np.array([1.0])}, v, weight_decay=0.0)
    first = -p["w"][0]
    before = p["w"][0]
    nn.sgd_step(p, {"w": np.array([1.0])}, v, weight_decay=0.0)
    assert (before - p["w"][0]) / first == pytest.approx(1.9)


def test_sgd_shape_mismatch():
    with pytest.raises(ValueError):
        nn.sgd_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, {})


def test_forward_deterministic():
    cfg = nn.NetConfig(**TINY)
    params = nn.init_params(cfg, 3)
    b = nn.make_batch([np.random.default_rng(0).standard_normal((3, 30))])
    assert np.array_equal(nn.forward(params, b, cfg).embeddings, nn.forward(params, b, cfg).embeddings)


def test_checkpoint_round_trip(tmp_path):
    cfg = nn.NetConfig(**TINY)
    params = nn.init_params(cfg, 4)
    nn.save_checkpoint(tmp_path / "a.ckpt", params, cfg, {"velocity/x": np.ones(3)}, {"step": 7})
    got, cfg2, extra, meta = nn.load_checkpoint(tmp_path / "a.ckpt", expect=cfg)
    assert cfg2 == cfg and meta == {"step": 7}
    assert all(np.array_equal(got[k], params[k]) for k in params)
    assert np.array_equal(extra["velocity/x"], np.ones(3))


def test_checkpoint_mismatch_names_tensor(tmp_path):
    cfg = nn.NetConfig(**TINY)
    nn.save_checkpoint(tmp_path / "a.ckpt", nn.init_params(cfg), cfg)
    other = nn.NetConfig(**{**TINY, "n_classes": 5})
    with pytest.raises(nn.CheckpointError, match="fc_softmax.weight"):
        nn.load_checkpoint(tmp_path / "a.ckpt", expect=other)


def test_checkpoint_truncated(tmp_path):
    cfg = nn.NetConfig(**TINY)
    nn.save_checkpoint(tmp_path / "a.ckpt", nn.init_params(cfg), cfg)
    raw = (tmp_path / "a.ckpt").read_bytes()
    (tmp_path / "b.ckpt").write_bytes(raw[:-40])
    with pytest.raises(nn.CheckpointError):
        nn.load_checkpoint(tmp_path / "b.ckpt")
