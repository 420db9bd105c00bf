"""Encoder, inversion loss structure, and per-image refinement."""

import numpy as np
import pytest

import blobgen.grad as g
from blobgen.config import ModelConfig
from blobgen.grad import Tensor
from blobgen.inversion import (
    Encoder, InversionResult, attribute_l2, invert, inversion_loss,
)
from blobgen.model import SceneModel

CFG = ModelConfig(k=2, d_in=6, d_style=5, d_noise=8, d_hidden=16, n_layers=2,
                  base_res=4, img_res=8, decoder_channels=(8, 4),
                  disc_channels=(4, 8), disc_feat=8)


def make_model(seed=0):
    return SceneModel.create(CFG, seed=seed)


def make_encoder(seed=0):
    return Encoder(CFG, np.random.default_rng(seed))


def test_encoder_head_matches_layout_raw_width():
    enc = make_encoder()
    assert enc.head.weight.shape[0] == CFG.d_raw


def test_encoder_decodes_through_layout_path():
    model = make_model()
    enc = make_encoder(1)
    imgs = Tensor(np.random.default_rng(2).normal(size=(3, 3, 8, 8)).astype(np.float32))
    st = enc.encode(imgs, model)
    assert st.batch == 3 and st.k == CFG.k
    assert (st.x.data >= 0).all() and (st.x.data <= 1).all()
    np.testing.assert_allclose(np.linalg.norm(st.phi.data, axis=-1), 1.0, atol=1e-5)


def test_attribute_l2_weighs_attributes_equally():
    # per-attribute averaging: a mismatch in one scalar attribute must not be
    # drowned by the high-dimensional features (unlike flat-vector L2)
    model = make_model()
    z = model.noise(np.random.default_rng(3), 2)
    with g.no_grad():
        sa = model.layout.forward(z)
        sb = model.layout.forward(z)
    assert attribute_l2(sa, sb).item() == pytest.approx(0.0, abs=1e-10)

    # hand-computed two-attribute oracle: change s by 1 in one blob of two,
    # and one phi entry by epsilon
    sc = model.layout.forward(z)
    s_new = sc.s.data.copy()
    s_new[0, 0] += 1.0
    sb2 = type(sa)(x=sa.x, s=Tensor(s_new), a=sa.a, theta=sa.theta,
                   phi=sa.phi, psi=sa.psi, phi_bg=sa.phi_bg, psi_bg=sa.psi_bg)
    got = attribute_l2(sb2, sa).item()
    # only the s term is nonzero: mean squared error over the [2, 2] s tensor
    # is 1/4, divided by 8 attributes
    assert got == pytest.approx((1.0 / 4) / 8, rel=1e-5)

    flat_a = np.concatenate([sa.s.data.reshape(-1), sa.phi.data.reshape(-1)])
    flat_b = np.concatenate([s_new.reshape(-1), sa.phi.data.reshape(-1)])
    flat_l2 = np.mean((flat_a - flat_b) ** 2)
    assert got != pytest.approx(flat_l2, rel=1e-3)  # forms genuinely differ


def test_inversion_loss_zero_at_perfect_reconstruction():
    # if E(x_fake) returns exactly beta_fake and rendering is deterministic,
    # every term vanishes
    model = make_model(4)

    class PerfectEncoder:
        def __init__(self, st):
            self.st = st

        def encode(self, images, _model):
            return self.st

    z = model.noise(np.random.default_rng(5), 2)
    with g.no_grad():
        beta = model.layout.forward(z)
        fake = model.render_tensors(beta)
    enc = PerfectEncoder(beta)
    loss = inversion_loss(model, enc, Tensor(fake.data), Tensor(fake.data), beta)
    assert loss.item() == pytest.approx(0.0, abs=1e-8)


def test_inversion_loss_beta_term_isolated():
    model = make_model(6)
    enc = make_encoder(7)
    r = np.random.default_rng(8)
    real = Tensor(r.normal(size=(2, 3, 8, 8)).astype(np.float32))
    z = model.noise(r, 2)
    with g.no_grad():
        beta = model.layout.forward(z)
        fake = model.render_tensors(beta)
    full = inversion_loss(model, enc, real, Tensor(fake.data), beta, beta_weight=10.0)
    no_beta = inversion_loss(model, enc, real, Tensor(fake.data), beta, beta_weight=0.0)
    with g.no_grad():
        st_fake = enc.encode(Tensor(fake.data), model)
    beta_term = attribute_l2(st_fake, beta).item()
    assert full.item() == pytest.approx(no_beta.item() + 10.0 * beta_term, rel=1e-5)


# ---------------------------------------------------------------------------
# refinement
# ---------------------------------------------------------------------------

def test_invert_zero_steps_returns_encoder_prediction():
    model = make_model(9)
    enc = make_encoder(10)
    img = model.render_scene(model.sample_scene(seed=11))
    res = invert(model, enc, img, refine_steps=0)
    assert isinstance(res, InversionResult)
    assert res.rmse == res.encoder_rmse
    assert len(res.rmse_trace) == 1
    reconstructed = model.render_scene(res.scene)
    rmse = float(np.sqrt(np.mean((reconstructed - img) ** 2)))
    assert rmse == pytest.approx(res.rmse, abs=1e-5)


def test_invert_never_worse_than_encoder_and_monotone_best():
    model = make_model(12)
    enc = make_encoder(13)
    img = model.render_scene(model.sample_scene(seed=14))
    res = invert(model, enc, img, refine_steps=25, lr=0.02)
    assert res.rmse <= res.encoder_rmse + 1e-9
    assert res.rmse == pytest.approx(min(res.rmse_trace), abs=1e-9)
    assert not res.diverged


def test_invert_does_not_touch_weights():
    model = make_model(15)
    enc = make_encoder(16)
    before_g = {k: t.data.copy() for k, t in model.generator_params().items()}
    before_e = {k: t.data.copy() for k, t in enc.params().items()}
    img = model.render_scene(model.sample_scene(seed=17))
    invert(model, enc, img, refine_steps=5)
    for k, t in model.generator_params().items():
        np.testing.assert_array_equal(before_g[k], t.data, err_msg=k)
    for k, t in enc.params().items():
        np.testing.assert_array_equal(before_e[k], t.data, err_msg=k)


def test_invert_refinement_improves_known_beta_image():
    # inverting an image the generator itself produced: refinement should cut
    # the pixel error well below the raw (untrained) encoder output
    model = make_model(18)
    enc = make_encoder(19)
    img = model.render_scene(model.sample_scene(seed=20))
    res = invert(model, enc, img, refine_steps=60, lr=0.03)
    assert res.rmse < res.encoder_rmse * 0.9
