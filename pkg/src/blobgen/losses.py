"""GAN losses: non-saturating logistic loss and the R1 gradient penalty."""

from __future__ import annotations

import numpy as np

from . import grad as gr
from .discriminator import Discriminator
from .grad import Tensor


def nonsat_gan_losses(d_real: Tensor, d_fake: Tensor) -> tuple[Tensor, Tensor]:
    """(loss_D, loss_G) from per-sample discriminator scores.

    loss_D = E[softplus(-d_real)] + E[softplus(d_fake)]
    loss_G = E[softplus(-d_fake)]
    """
    loss_d = gr.add(gr.tmean(gr.softplus(gr.neg(d_real))), gr.tmean(gr.softplus(d_fake)))
    loss_g = gr.tmean(gr.softplus(gr.neg(d_fake)))
    return loss_d, loss_g


def r1_penalty(disc: Discriminator, real_images, gamma: float = 100.0) -> Tensor:
    """(gamma/2) * E[ ||d D(x)/dx||^2 ] at the real images.

    The input gradient is kept on the tape, so backpropagating the returned
    scalar reaches the discriminator weights (double backward).
    """
    data = real_images.data if isinstance(real_images, Tensor) else np.asarray(real_images)
    imgs = Tensor(np.asarray(data, dtype=np.float32), requires_grad=True)
    score, _ = disc(imgs)
    (g_img,) = gr.grad(gr.tsum(score), [imgs], create_graph=True)
    batch = imgs.shape[0]
    return gr.mul(gr.tsum(gr.square(g_img)), gamma / (2.0 * batch))
