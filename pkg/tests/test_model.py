"""Encoder, projector/predictor forward-backward, historical cache, checkpoints."""

import numpy as np
import pytest

from recdcl import model
from recdcl.corpus import Batch
from recdcl.graph import build
from recdcl.model import ModelError

from conftest import make_table


@pytest.fixture
def small_setting():
    table = make_table([0, 0, 1, 1, 2, 2], [0, 1, 1, 2, 2, 3])
    graph = build(table)
    state = model.init(3, 4, dim=5, n_layers=2, seed=0)
    batch = Batch(users=np.array([0, 1, 2]), items=np.array([1, 2, 3]))
    return graph, state, batch


# ---------------------------------------------------------------------------
# init


def test_init_deterministic():
    a = model.init(3, 4, dim=6, n_layers=2, seed=5)
    b = model.init(3, 4, dim=6, n_layers=2, seed=5)
    for name in model.PARAM_NAMES:
        assert (getattr(a, name) == getattr(b, name)).all()
    c = model.init(3, 4, dim=6, n_layers=2, seed=6)
    assert (a.E0 != c.E0).any()


def test_init_xavier_bounds_and_zero_biases():
    s = model.init(10, 20, dim=8, n_layers=1, seed=0)
    lim_e = np.sqrt(6.0 / (30 + 8))
    lim_w = np.sqrt(6.0 / 16)
    assert np.abs(s.E0).max() <= lim_e
    assert np.abs(s.Wp).max() <= lim_w
    assert (s.bp == 0).all() and (s.b1 == 0).all() and (s.b2 == 0).all()


def test_init_mean_near_zero():
    # uniform(-lim, lim) has std lim/sqrt(3); check the empirical mean of a
    # large init sits within 4 standard errors of 0
    s = model.init(600, 900, dim=64, n_layers=1, seed=0)
    lim = np.sqrt(6.0 / (1500 + 64))
    n = s.E0.size
    stderr = (lim / np.sqrt(3)) / np.sqrt(n)
    assert abs(s.E0.mean()) < 4 * stderr


def test_init_validation():
    with pytest.raises(ModelError):
        model.init(3, 4, dim=1, n_layers=2)
    with pytest.raises(ModelError):
        model.init(3, 4, dim=4, n_layers=-1)
    with pytest.raises(ModelError):
        model.init(0, 4, dim=4, n_layers=1)


# ---------------------------------------------------------------------------
# embedding


def test_normalize_rows_units_and_zero_rows():
    x = np.array([[3.0, 4.0], [0.0, 0.0], [0.0, 2.0]])
    normed, norms = model.normalize_rows(x)
    assert np.allclose(normed[0], [0.6, 0.8])
    assert (normed[1] == 0).all()
    assert np.allclose(norms, [5.0, 0.0, 2.0])


def test_embed_zero_layers_is_base_table(small_setting):
    graph, _, _ = small_setting
    state = model.init(3, 4, dim=5, n_layers=0, seed=0)
    layers, e, _, _ = model.embed(state, graph)
    assert len(layers) == 1
    assert (e == state.E0).all()


def test_embed_two_node_dense_oracle():
    # one user, one item: adjacency [[0,1],[1,0]], A^2 = I, so the layer mean
    # at L=2 is (2*E0 + A@E0) / 3
    table = make_table([0], [0])
    graph = build(table)
    state = model.init(1, 1, dim=4, n_layers=2, seed=1)
    a = np.array([[0.0, 1.0], [1.0, 0.0]])
    want = (2 * state.E0 + a @ state.E0) / 3
    _, e, _, _ = model.embed(state, graph)
    assert np.allclose(e, want)


def test_embed_layer_count_and_mean(small_setting):
    graph, state, _ = small_setting
    layers, e, norms, etilde = model.embed(state, graph)
    assert len(layers) == 3
    assert np.allclose(e, (layers[0] + layers[1] + layers[2]) / 3)
    live = norms > 0
    assert np.allclose(np.linalg.norm(etilde[live], axis=1), 1.0, atol=1e-6)


def test_final_embeddings_matches_embed(small_setting):
    graph, state, _ = small_setting
    assert (model.final_embeddings(state, graph) == model.embed(state, graph)[1]).all()


# ---------------------------------------------------------------------------
# forward


def test_forward_shapes_and_standardization(small_setting):
    graph, state, batch = small_setting
    cache = model.forward(state, graph, batch)
    b, f = len(batch), state.dim
    assert cache.Zu.shape == (b, f) and cache.Pi.shape == (b, f)
    # projector output is standardized per feature over the batch
    assert np.allclose(cache.Zu.mean(axis=0), 0.0, atol=1e-9)
    sigma_u = cache.Zu.std(axis=0)
    assert np.allclose(sigma_u, 1.0, atol=1e-6)
    # normalized slices feed both branches
    assert np.allclose(np.linalg.norm(cache.EU, axis=1), 1.0, atol=1e-9)


def test_forward_identity_projector(small_setting):
    graph, _, batch = small_setting
    state = model.init(3, 4, dim=5, n_layers=2, seed=0, projector_identity=True)
    cache = model.forward(state, graph, batch)
    assert (cache.Yu == cache.EU).all()
    assert (cache.Yi == cache.EI).all()


def test_forward_rejects_bad_indices(small_setting):
    graph, state, _ = small_setting
    with pytest.raises(ModelError):
        model.forward(state, graph, Batch(users=np.array([3]), items=np.array([0])))
    with pytest.raises(ModelError):
        model.forward(state, graph, Batch(users=np.array([0]), items=np.array([4])))


def test_forward_is_pure(small_setting):
    graph, state, batch = small_setting
    before = {k: v.copy() for k, v in state.params().items()}
    model.forward(state, graph, batch)
    for k, v in state.params().items():
        assert (v == before[k]).all()


# ---------------------------------------------------------------------------
# backward


def test_backward_zero_grads_give_zero(small_setting):
    graph, state, batch = small_setting
    cache = model.forward(state, graph, batch)
    z = np.zeros_like(cache.Zu)
    grads = model.backward(state, cache, grad_Zu=z, grad_Zi=z.copy())
    for name, g in grads.items():
        assert (g == 0).all(), name


def test_backward_raw_scatter_identity():
    """With L=0 a raw-slice gradient lands directly on the E0 rows."""
    table = make_table([0, 0, 1], [0, 1, 1])
    graph = build(table)
    state = model.init(2, 2, dim=4, n_layers=0, seed=0)
    batch = Batch(users=np.array([0, 1]), items=np.array([1, 0]))
    cache = model.forward(state, graph, batch)
    g = np.arange(8, dtype=np.float64).reshape(2, 4)
    grads = model.backward(state, cache, raw_grads=[(cache.rows_u, g)])
    want = np.zeros_like(state.E0)
    want[0] = g[0]
    want[1] = g[1]
    assert (grads["E0"] == want).all()


def test_backward_duplicate_rows_accumulate():
    table = make_table([0, 0, 1], [0, 1, 1])
    graph = build(table)
    state = model.init(2, 2, dim=3, n_layers=0, seed=0)
    batch = Batch(users=np.array([0, 0]), items=np.array([0, 1]))
    cache = model.forward(state, graph, batch)
    g = np.ones((2, 3))
    grads = model.backward(state, cache, raw_grads=[(cache.rows_u, g)])
    assert (grads["E0"][0] == 2.0).all()


def test_standardize_backward_matches_fd():
    rng = np.random.default_rng(0)
    y = rng.standard_normal((5, 4))
    w = rng.standard_normal((5, 4))
    z, std = model._standardize(y)
    analytic = model._standardize_backward(w, z, std)

    def f():
        zz, _ = model._standardize(y)
        return float(np.sum(w * zz))

    h = 1e-6
    numeric = np.zeros_like(y)
    flat, nflat = y.reshape(-1), numeric.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + h
        fp = f()
        flat[j] = orig - h
        fm = f()
        flat[j] = orig
        nflat[j] = (fp - fm) / (2 * h)
    assert np.abs(analytic - numeric).max() < 1e-7


# ---------------------------------------------------------------------------
# historical cache


def test_mix_first_use_seeds_from_current(small_setting):
    graph, state, batch = small_setting
    cache = model.forward(state, graph, batch)
    hist = model.new_historical(state)
    assert not hist.initialized
    tu, ti = model.mix_historical(cache, hist, tau=0.9)
    assert hist.initialized
    # cache seeded with the current table, so any tau returns current rows
    assert np.allclose(tu, model.normalize_rows(cache.EU_raw)[0])
    assert np.allclose(ti, model.normalize_rows(cache.EI_raw)[0])


def test_mix_extremes_and_midpoint(small_setting):
    graph, state, batch = small_setting
    cache = model.forward(state, graph, batch)
    rng = np.random.default_rng(3)
    hist = model.new_historical(state)
    hist.values = rng.standard_normal(hist.values.shape)
    hist.initialized = True

    tu0, _ = model.mix_historical(cache, hist, tau=0.0)
    assert np.allclose(tu0, model.normalize_rows(cache.EU_raw)[0])
    tu1, _ = model.mix_historical(cache, hist, tau=1.0)
    assert np.allclose(tu1, model.normalize_rows(hist.values[cache.rows_u])[0])
    tu5, _ = model.mix_historical(cache, hist, tau=0.5)
    mixed = 0.5 * hist.values[cache.rows_u] + 0.5 * cache.EU_raw
    assert np.allclose(tu5, model.normalize_rows(mixed)[0])


def test_mix_rejects_bad_tau(small_setting):
    graph, state, batch = small_setting
    cache = model.forward(state, graph, batch)
    hist = model.new_historical(state)
    with pytest.raises(ModelError):
        model.mix_historical(cache, hist, tau=1.5)


def test_update_historical_locality(small_setting):
    graph, state, batch = small_setting
    cache = model.forward(state, graph, batch)
    hist = model.new_historical(state)
    hist.values[:] = 7.0
    model.update_historical(hist, cache)
    touched = set(cache.rows_u.tolist()) | set(cache.rows_i.tolist())
    for row in range(hist.values.shape[0]):
        if row in touched:
            assert not (hist.values[row] == 7.0).all()
        else:
            assert (hist.values[row] == 7.0).all()


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_roundtrip_bytes(tmp_path, small_setting):
    graph, state, batch = small_setting
    hist = model.new_historical(state)
    hist.values[:] = np.random.default_rng(0).standard_normal(hist.values.shape)
    hist.initialized = True
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    model.save_checkpoint(state, hist, p1)
    state2, hist2 = model.load_checkpoint(p1)
    model.save_checkpoint(state2, hist2, p2)
    assert p1.read_bytes() == p2.read_bytes()
    for name in model.PARAM_NAMES:
        assert (getattr(state, name) == getattr(state2, name)).all()
    assert hist2.initialized


def test_checkpoint_zero_cache_loads_uninitialized(tmp_path, small_setting):
    _, state, _ = small_setting
    hist = model.new_historical(state)
    p = tmp_path / "c.ckpt"
    model.save_checkpoint(state, hist, p)
    _, hist2 = model.load_checkpoint(p)
    assert not hist2.initialized


def test_checkpoint_rejects_corruption(tmp_path, small_setting):
    _, state, _ = small_setting
    hist = model.new_historical(state)
    p = tmp_path / "d.ckpt"
    model.save_checkpoint(state, hist, p)
    raw = p.read_bytes()

    bad_magic = tmp_path / "m.ckpt"
    bad_magic.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ModelError, match="magic"):
        model.load_checkpoint(bad_magic)

    truncated = tmp_path / "t.ckpt"
    truncated.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(ModelError, match="truncated"):
        model.load_checkpoint(truncated)

    trailing = tmp_path / "x.ckpt"
    trailing.write_bytes(raw + b"\x00")
    with pytest.raises(ModelError, match="trailing"):
        model.load_checkpoint(trailing)

    bad_version = tmp_path / "v.ckpt"
    import struct

    bad_version.write_bytes(raw[:4] + struct.pack("<q", 99) + raw[12:])
    with pytest.raises(ModelError, match="version"):
        model.load_checkpoint(bad_version)


def test_all_finite_flags_nan(small_setting):
    _, state, _ = small_setting
    assert state.all_finite()
    state.Wp[0, 0] = np.nan
    assert not state.all_finite()
