"""Adversarial training loop over procedurally generated toy scenes.

Alternating discriminator/generator steps with non-saturating loss, lazy R1
every ``r1_period`` steps (scaled by the period), blob-parameter jitter on
generated scenes only, and an exponential moving average of the generator.
"""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import grad as gr
from . import io as bio
from .blobs import SceneTensors, jitter_core
from .config import TrainConfig
from .errors import StateError
from .grad import Adam, Tensor, ema_update
from .layout import blob_dropout_tensors, style_mix_tensors
from .losses import nonsat_gan_losses, r1_penalty
from .model import SceneModel
from .toydata import ToySceneSpec

LOG_COLUMNS = ("step", "loss_D", "loss_G", "r1", "grad_norm_G", "grad_norm_D", "wall_ms")


def _grad_norm(params: dict[str, Tensor]) -> float:
    total = 0.0
    for t in params.values():
        if t.grad is not None:
            total += float((t.grad.astype(np.float64) ** 2).sum())
    return float(np.sqrt(total))


def _log_line(step: int, loss_d: float, loss_g: float, r1: float,
              gn_g: float, gn_d: float, wall_ms: float) -> str:
    return "\t".join([str(step)] + [format(v, ".6g") for v in
                                    (loss_d, loss_g, r1, gn_g, gn_d, wall_ms)])


def train(model: SceneModel, tcfg: TrainConfig | None = None,
          out_dir: str | Path | None = None,
          data_spec: ToySceneSpec | None = None,
          log_fn=None, verbose: bool = False) -> SceneModel:
    """Run the configured number of steps, mutating ``model`` in place.

    Writes ``step-0`` and periodic checkpoints plus a tab-separated training
    log under ``out_dir`` when given. Deterministic for a fixed seed and
    single-threaded execution on one platform (wall_ms excepted).
    """
    tcfg = tcfg or model.train_cfg
    model.train_cfg = tcfg
    if model.disc is None:
        raise StateError("training needs a model with a discriminator")
    spec = data_spec or ToySceneSpec(canvas=model.cfg.img_res)

    seq = np.random.SeedSequence(tcfg.seed)
    data_rng, z_rng, jit_rng, mix_rng = [np.random.default_rng(s) for s in seq.spawn(4)]

    g_params = model.generator_params()
    d_params = model.disc.params()
    opt_g = Adam(g_params, tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.adam_eps)
    opt_d = Adam(d_params, tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.adam_eps)

    out_path = Path(out_dir) if out_dir is not None else None
    log_lines: list[str] = []
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        bio.save_checkpoint(out_path / "step-0.ckpt", model)
        log_file = open(out_path / "train_log.tsv", "w", buffering=1)
        log_file.write("\t".join(LOG_COLUMNS) + "\n")
    else:
        log_file = None

    def fake_scene_tensors(batch: int, record: bool) -> SceneTensors:
        z = model.noise(z_rng, batch)
        ctx = gr.no_grad() if not record else _null()
        with ctx:
            st = model.layout.forward(z)
            if tcfg.style_mix_p > 0:
                st = style_mix_tensors(st, mix_rng, tcfg.style_mix_p)
            if tcfg.blob_dropout_p > 0:
                st = blob_dropout_tensors(st, mix_rng, tcfg.blob_dropout_p)
            x, s, theta = jitter_core(st.x, st.s, st.theta, jit_rng,
                                      tcfg.jitter_xy, tcfg.jitter_size, tcfg.jitter_angle)
            return SceneTensors(x=x, s=s, a=st.a, theta=theta, phi=st.phi, psi=st.psi,
                                phi_bg=st.phi_bg, psi_bg=st.psi_bg)

    def diagnostic_abort(step: int, what: str):
        if out_path is not None:
            model.step = step
            bio.save_checkpoint(out_path / f"diverged-step-{step}.ckpt", model)
        raise StateError(f"non-finite {what} at step {step}; diagnostic checkpoint written")

    # on few-core hosts threaded BLAS loses to sync overhead on these GEMM sizes
    limiter = threadpool_limits(limits=1)
    for step in range(model.step, tcfg.steps):
        t0 = time.perf_counter()

        # -- discriminator step ------------------------------------------------
        real_np, _ = spec.sample_batch(data_rng, tcfg.batch_size)
        with gr.no_grad():
            fake = model.render_tensors(fake_scene_tensors(tcfg.batch_size, record=False))
        d_real, _ = model.disc(Tensor(real_np))
        d_fake, _ = model.disc(Tensor(fake.data))
        loss_d, _ = nonsat_gan_losses(d_real, d_fake)
        r1_val = 0.0
        loss_d_total = loss_d
        if tcfg.r1_gamma > 0 and step % tcfg.r1_period == 0:
            r1 = r1_penalty(model.disc, real_np, tcfg.r1_gamma)
            r1_val = float(r1.data)
            # lazy regularization: scale by the period to keep effective strength
            loss_d_total = gr.add(loss_d, gr.mul(r1, float(tcfg.r1_period)))
        if not np.isfinite(loss_d_total.data).all():
            diagnostic_abort(step, "discriminator loss")
        opt_d.zero_grad()
        loss_d_total.backward()
        gn_d = _grad_norm(d_params)
        opt_d.step()

        # -- generator step ----------------------------------------------------
        st = fake_scene_tensors(tcfg.batch_size, record=True)
        fake2 = model.render_tensors(st)
        d_fake2, _ = model.disc(fake2)
        loss_g = gr.tmean(gr.softplus(gr.neg(d_fake2)))
        if not np.isfinite(loss_g.data).all():
            diagnostic_abort(step, "generator loss")
        opt_g.zero_grad()
        loss_g.backward()
        gn_g = _grad_norm(g_params)
        opt_g.step()

        model.ema_layout = ema_update(
            model.ema_layout, {k: t.data for k, t in model.layout.params().items()},
            tcfg.ema_decay)
        model.ema_decoder = ema_update(
            model.ema_decoder, {k: t.data for k, t in model.decoder.params().items()},
            tcfg.ema_decay)
        model.step = step + 1

        wall_ms = (time.perf_counter() - t0) * 1000.0
        if step % tcfg.log_every == 0:
            line = _log_line(step, float(loss_d.data), float(loss_g.data), r1_val,
                             gn_g, gn_d, wall_ms)
            log_lines.append(line)
            if log_file is not None:
                log_file.write(line + "\n")
            if log_fn is not None:
                log_fn(line)
            if verbose and step % (tcfg.log_every * 100) == 0:
                print(line, flush=True)

        if out_path is not None and (step + 1) % tcfg.checkpoint_every == 0:
            bio.save_checkpoint(out_path / f"step-{step + 1}.ckpt", model)

    model.ensure_trunc_mean()
    limiter.unregister()
    if out_path is not None:
        bio.save_checkpoint(out_path / "final.ckpt", model)
        log_file.close()
    model.extra["log_lines"] = log_lines
    return model


class _null:
    def __enter__(self):
        return self

    def __exit__(self, *a):
        return False
