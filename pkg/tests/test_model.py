import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sscunet import model as M
from sscunet.errors import ArchitectureError, NumericalError, ParameterError
from sscunet.superpixel import Segmentation


def _model(L=66, p=3, **kw):
    rng = np.random.default_rng(5)
    E = rng.uniform(0.1, 1.0, size=(p, L))
    return M.SscuModel.create(L, p, M.TrainConfig(**kw), E), E


def _grid_segmentation(H, W, block):
    r, c = np.mgrid[0:H, 0:W]
    labels = (r // block) * ((W + block - 1) // block) + c // block
    return Segmentation.from_labels(labels)


# -- architecture ----------------------------------------------------------------------

def _stage_lengths(L):
    # independent recomputation: valid conv then floor pooling
    out = []
    for _, k in M.CONV_STAGES:
        L = L - k + 1
        out.append(L)
        L //= 2
        out.append(L)
    return out


def test_flatten_length_examples():
    assert M.scae_stage_lengths(162) == [158, 79, 76, 38, 34, 17, 14, 7]
    assert M.flatten_length(162) == 168
    assert M.flatten_length(198) == 216


@given(st.integers(66, 400))
def test_stage_lengths_match_recomputation(L):
    assert M.scae_stage_lengths(L) == _stage_lengths(L)
    assert M.flatten_length(L) == 24 * _stage_lengths(L)[-1]


def test_minimum_band_count():
    L = M.min_scae_bands()
    assert _stage_lengths(L)[-1] == 1
    assert M.scae_stage_lengths(L - 1) is None
    with pytest.raises(ArchitectureError, match=str(L)):
        M.flatten_length(L - 1)
    with pytest.raises(ArchitectureError):
        M.SscuModel.create(40, 3)


def test_parameter_shapes():
    model, _ = _model(L=162, p=4)
    shapes = [k.shape for k in model.scae.kernels]
    assert shapes == [(3, 1, 5), (6, 3, 4), (12, 6, 5), (24, 12, 4)]
    assert model.scae.fc1.shape == (100, 168)
    assert model.scae.fc2.shape == (4, 100)
    assert model.sae.W_e.shape == (4, 162)
    assert model.decoder.weight.shape == (162, 4)


def test_decoder_initialized_from_endmembers():
    model, E = _model()
    np.testing.assert_array_equal(model.decoder.weight, E.T)
    with pytest.raises(ParameterError):
        M.SscuModel.create(66, 3, None, E[:, :10])


def test_shared_decoder_identity():
    model, _ = _model()
    assert model.sae.decoder is model.scae.decoder is model.decoder
    model.sae.decoder.weight[0, 0] = 0.123
    assert model.scae.decoder.weight[0, 0] == 0.123


# -- forward passes ----------------------------------------------------------------------

def test_sae_single_pixel_center_is_pixel_abundance(rng):
    model, E = _model()
    b = M.single_group_batch(rng.uniform(size=(1, 66)))
    out = M.sae_forward(model, b, "eval")
    np.testing.assert_array_equal(out.x_center[0], out.x[0])


def test_sae_identical_pixels(rng):
    model, _ = _model()
    y = rng.uniform(size=66)
    b = M.single_group_batch(np.tile(y, (5, 1)))
    out = M.sae_forward(model, b, "eval")
    np.testing.assert_allclose(out.x, np.tile(out.x_center, (5, 1)), atol=1e-15)
    np.testing.assert_allclose(out.y_hat, out.x_center @ model.decoder.weight.T)


def test_sae_dead_encoder_gives_zero():
    model, _ = _model()
    model.sae.W_e[...] = 0.0
    model.sae.bn.beta[...] = -1.0
    b = M.single_group_batch(np.ones((3, 66)))
    out = M.sae_forward(model, b, "eval")
    assert np.all(out.x_center == 0) and np.all(out.y_hat == 0)
    value, dy, _ = M.loss_sae(model, out, b)
    assert out.skipped == 1 and value == 0.0 and np.all(dy == 0)


@settings(max_examples=20)
@given(st.integers(0, 10_000), st.sampled_from(["softmax", "relu_l1"]))
def test_scae_output_on_simplex(seed, head):
    model, E = _model(seed=seed, scae_output=head)
    rng = np.random.default_rng(seed)
    Y = rng.dirichlet(np.ones(3), size=8) @ E
    x, _ = M.scae_encode(model, Y)
    assert np.all(x >= 0)
    sums = x.sum(axis=1)
    live = sums > 0  # a ReLU head can switch off every unit
    np.testing.assert_allclose(sums[live], 1.0, atol=1e-6)


def test_scae_rejects_short_spectra():
    model, _ = _model()
    with pytest.raises(ArchitectureError):
        M.scae_encode(model, np.ones((2, 50)))


# -- losses ------------------------------------------------------------------------------------

def test_loss_sae_perfect_reconstruction_is_zero():
    model, E = _model(lam=1e-12)
    model.config.lam = 0.0
    b = M.single_group_batch(np.ones((2, 66)))
    out = M.sae_forward(model, b, "eval")
    b.y_center = out.y_hat.copy()
    value, _, _ = M.loss_sae(model, out, b)
    assert abs(value) < 1e-7


def test_sparsity_term_prefers_one_hot():
    w = np.array([1.0])
    uniform, _ = M._lhalf_term(np.full((1, 4), 0.25), w, 0.1)
    one_hot, _ = M._lhalf_term(np.eye(4)[:1], w, 0.1)
    assert uniform > one_hot


def test_loss_scae_perfect_single_pixel_is_zero():
    model, _ = _model()
    model.config.lam = 0.0
    y = np.random.default_rng(2).uniform(size=(1, 66))
    out = M.scae_forward(model, y)
    b = M.single_group_batch(out.y_hat)
    value, _, _ = M.loss_scae(model, out, b)
    assert abs(value) < 1e-7


def test_loss_scae_doubling_identical_pixels(rng):
    model, _ = _model()
    y = rng.uniform(size=66)
    vals = []
    for K in (3, 6):
        b = M.single_group_batch(np.tile(y, (K, 1)))
        vals.append(M.loss_scae(model, M.scae_forward(model, b.Y), b)[0])
    assert vals[0] == pytest.approx(vals[1], rel=1e-12)


def test_loss_col_examples():
    b = M.single_group_batch(np.ones((1, 4)))
    assert M.loss_col([[1.0, 0.0]], [[0.0, 1.0]], b)[0] == pytest.approx(2.0)
    assert M.loss_col([[0.3, 0.7]], [[0.3, 0.7]], b)[0] == 0.0
    with pytest.raises(ParameterError):
        M.loss_col(np.zeros((2, 2)), np.zeros((1, 2)), b)


@given(st.integers(0, 10_000))
def test_loss_col_symmetric_double_average(seed):
    rng = np.random.default_rng(seed)
    sizes = rng.integers(1, 5, size=3)
    groups = np.repeat(np.arange(3), sizes)
    N = len(groups)
    b = M.Batch(np.zeros((N, 2)), groups, sizes, np.zeros((3, 2)), np.arange(N))
    a, c = rng.dirichlet(np.ones(3), size=N), rng.dirichlet(np.ones(3), size=N)
    v = M.loss_col(a, c, b)[0]
    assert v == pytest.approx(M.loss_col(c, a, b)[0], rel=1e-14)
    per_pixel = ((a - c) ** 2).sum(axis=1)
    expect = np.mean([per_pixel[groups == q].mean() for q in range(3)])
    assert v == pytest.approx(expect, rel=1e-12)


def test_total_loss_composition(rng):
    model, E = _model(mu=0.7)
    sizes = np.array([2, 3])
    groups = np.repeat([0, 1], sizes)
    Y = rng.dirichlet(np.ones(3), size=5) @ E
    b = M.Batch(Y, groups, sizes, Y[[0, 2]], np.arange(5))
    terms = M.total_loss(model, b)
    sae = M.loss_sae(model, M.sae_forward(model, b, "eval"), b)[0]
    scae = M.loss_scae(model, M.scae_forward(model, Y), b)[0]
    col = M.loss_col(M.sae_forward(model, b, "eval").x, M.scae_encode(model, Y)[0], b)[0]
    assert abs(terms["total"] - (sae + scae + 0.7 * col)) < 1e-10


def test_phase_gradients_pass_finite_differences():
    from sscunet.gradcheck import run_checks
    for r in run_checks(["objective_phase_a", "objective_phase_b"]):
        assert r.passed, (r.name, r.errors)


# -- training ------------------------------------------------------------------------------------

def _tiny_problem(seed=0, H=8, W=8, L=66, p=3):
    rng = np.random.default_rng(seed)
    E = rng.uniform(0.1, 1.0, size=(p, L))
    A = rng.dirichlet(np.ones(p), size=H * W)
    return A @ E, E, _grid_segmentation(H, W, 2)


def test_training_keeps_decoder_shared_and_nonnegative():
    Y, E, seg = _tiny_problem()
    cfg = M.TrainConfig(epochs=2, batch_size=4, pixel_batch_size=8, lr_decoder=1e-2)
    model = M.SscuModel.create(66, 3, cfg, E)
    seen = []

    def check(m, epoch, batch_no, phase):
        assert np.array_equal(m.sae.decoder.weight, m.scae.decoder.weight)
        assert m.decoder.weight.min() >= 0
        seen.append(phase)

    M.train(model, Y, seg, cfg, callback=check)
    assert "A" in seen and "B" in seen


def test_training_is_deterministic():
    Y, E, seg = _tiny_problem()
    cfg = M.TrainConfig(epochs=3, batch_size=8)
    traces = []
    for _ in range(2):
        model = M.SscuModel.create(66, 3, cfg, E)
        traces.append([(e.sae, e.scae, e.col, e.total) for e in M.train(model, Y, seg, cfg)])
    assert traces[0] == traces[1]


def test_trace_total_matches_terms():
    Y, E, seg = _tiny_problem()
    cfg = M.TrainConfig(epochs=2, batch_size=16, mu=0.3)
    model = M.SscuModel.create(66, 3, cfg, E)
    for e in M.train(model, Y, seg, cfg):
        assert abs(e.total - (e.sae + e.scae + 0.3 * e.col)) < 1e-10


def test_non_finite_loss_aborts():
    Y, E, seg = _tiny_problem()
    Y = Y.copy()
    Y[0, 0] = np.nan
    cfg = M.TrainConfig(epochs=1)
    with pytest.raises(NumericalError, match="epoch 1"):
        M.train(M.SscuModel.create(66, 3, cfg, E), Y, seg, cfg)


def test_extract_results_constraints():
    Y, E, seg = _tiny_problem()
    cfg = M.TrainConfig(epochs=1)
    model = M.SscuModel.create(66, 3, cfg, E)
    M.train(model, Y, seg, cfg)
    res = M.extract_results(model, (8, 8), Y)
    assert res.abundances.shape == (8, 8, 3)
    assert np.all(res.abundances >= 0)
    np.testing.assert_allclose(res.abundances.sum(axis=2), 1.0, atol=1e-5)
    assert np.all(res.endmembers >= 0) and res.ok


def test_config_validation():
    for bad in ({"lam": 0}, {"mu": -1}, {"epochs": 0}, {"dropout": 1.0},
                {"scae_output": "sigmoid"}, {"encoder_init": "zeros"}):
        with pytest.raises(ParameterError):
            M.TrainConfig(**bad).validate()


def test_checkpoint_round_trip(tmp_path):
    model, _ = _model(seed=3)
    model.epoch = 7
    M.save_checkpoint(model, tmp_path)
    back = M.load_checkpoint(tmp_path)
    assert back.epoch == 7 and back.config == model.config
    for a, b in zip(M._groups(model).values(), M._groups(back).values()):
        for (na, va), (nb, vb) in zip(a, b):
            assert na == nb
            np.testing.assert_array_equal(va.astype(np.float32), vb)
