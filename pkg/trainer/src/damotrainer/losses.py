"""Loss terms for the two training stages.

Conventions
-----------
- Discriminators return patch *logit* maps; ``log D`` means the mean
  log-sigmoid of the logits over the batch and the map (the expectation over
  patches), computed stably via ``logsigmoid``.
- The perceptual distance between two images is the sum over the five
  extractor taps of the mean absolute feature difference.
- Both discriminator scales are always summed.

Two families of functions are provided:

- ``*_objective`` — the stage objectives in their value form (adversarial
  value ``E[log D(real)] + E[log(1 - D(fake))]`` per scale, plus the weighted
  perceptual terms); useful for reporting and golden-testing the arithmetic.
- ``loss_dls`` / ``loss_damo`` — the training losses actually differentiated:
  non-saturating generator terms (``-log D(fake)``), and for the joint stage
  the ``log D(fake) - log D(real)`` discriminator rule of the mask-generator
  training algorithm, with every summand reported separately.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch.nn import functional as F


class FreezeContractError(RuntimeError):
    """Raised when the wafer-simulator generator is not frozen during joint training."""


@dataclass(frozen=True)
class LossWeights:
    """Weights of the three non-adversarial terms.

    ``lambda0`` scales the wafer-stage perceptual distance, ``lambda1`` the
    mask-stage perceptual distance, and ``lambda2`` the L1 consistency between
    the predicted wafer and the SRAF-free design.
    """

    lambda0: float = 100.0
    lambda1: float = 100.0
    lambda2: float = 50.0


def log_d(logits: torch.Tensor) -> torch.Tensor:
    """Mean ``log sigmoid(logits)`` == E[log D]."""
    return F.logsigmoid(logits).mean()


def log_one_minus_d(logits: torch.Tensor) -> torch.Tensor:
    """Mean ``log(1 - sigmoid(logits))`` == E[log(1 - D)]."""
    return F.logsigmoid(-logits).mean()


def perceptual(phi, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Sum over taps of the mean absolute feature difference."""
    taps_a = phi(a)
    taps_b = phi(b)
    return sum((ta - tb).abs().mean() for ta, tb in zip(taps_a, taps_b))


def adversarial_value(d1, d2, cond: torch.Tensor, real: torch.Tensor,
                      fake: torch.Tensor) -> torch.Tensor:
    """Two-scale conditional adversarial objective value.

    ``sum_k E[log D_k(cond, real)] + E[log(1 - D_k(cond, fake))]``.
    """
    total = None
    for d in (d1, d2):
        term = log_d(d(cond, real)) + log_one_minus_d(d(cond, fake))
        total = term if total is None else total + term
    return total


def dls_objective(d1, d2, phi, x: torch.Tensor, y: torch.Tensor,
                  y_hat: torch.Tensor, lambda0: float) -> torch.Tensor:
    """Wafer-simulator stage objective: adversarial value + lambda0 * perceptual."""
    return adversarial_value(d1, d2, x, y, y_hat) + lambda0 * perceptual(phi, y, y_hat)


def dmg_objective(d1, d2, phi, w: torch.Tensor, x: torch.Tensor,
                  x_hat: torch.Tensor, lambda1: float) -> torch.Tensor:
    """Mask-generator stage objective: adversarial value + lambda1 * perceptual."""
    return adversarial_value(d1, d2, w, x, x_hat) + lambda1 * perceptual(phi, x, x_hat)


def damo_objective(models: dict, phi, w: torch.Tensor, x: torch.Tensor,
                   y: torch.Tensor, w_r: torch.Tensor, x_hat: torch.Tensor,
                   y_hat: torch.Tensor,
                   weights: LossWeights = LossWeights()) -> torch.Tensor:
    """End-to-end objective: mask stage + wafer stage + lambda2 * |y_hat - w_r|."""
    return (dmg_objective(models["d_dmg1"], models["d_dmg2"], phi, w, x, x_hat,
                          weights.lambda1)
            + dls_objective(models["d_dls1"], models["d_dls2"], phi, x, y, y_hat,
                            weights.lambda0)
            + weights.lambda2 * (y_hat - w_r).abs().mean())


def _generator_adversarial(d1, d2, cond: torch.Tensor,
                           fake: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator term: ``-sum_k E[log D_k(cond, fake)]``."""
    return -(log_d(d1(cond, fake)) + log_d(d2(cond, fake)))


def loss_dls(models: dict, phi, batch: dict, lambda0: float = 100.0) -> dict:
    """Training losses for the standalone wafer-simulator stage.

    ``batch`` holds ``x`` (mask image), ``y`` (wafer image) and ``z`` (one
    noise channel); the generator consumes ``cat(x, z)``.  Returns the
    generated ``y_hat`` plus:

    - ``g_adv``      non-saturating adversarial term over both scales,
    - ``perceptual`` five-tap feature distance between ``y`` and ``y_hat``,
    - ``g_total``    ``g_adv + lambda0 * perceptual``,
    - ``d_total``    standard discriminator loss
                     ``-sum_k (E[log D_k(x, y)] + E[log(1 - D_k(x, y_hat))])``.
    """
    x, y, z = batch["x"], batch["y"], batch["z"]
    d1, d2 = models["d_dls1"], models["d_dls2"]
    y_hat = models["g_dls"](torch.cat([x, z], dim=1))
    g_adv = _generator_adversarial(d1, d2, x, y_hat)
    perc = perceptual(phi, y, y_hat)
    fake = y_hat.detach()
    d_total = -(log_d(d1(x, y)) + log_one_minus_d(d1(x, fake))
                + log_d(d2(x, y)) + log_one_minus_d(d2(x, fake)))
    return {
        "y_hat": y_hat,
        "g_adv": g_adv,
        "perceptual": perc,
        "g_total": g_adv + lambda0 * perc,
        "d_total": d_total,
    }


def check_frozen(g_dls) -> None:
    """Raise unless every wafer-simulator generator parameter is frozen."""
    bad = [n for n, p in g_dls.named_parameters() if p.requires_grad]
    if bad:
        raise FreezeContractError(
            "wafer-simulator generator must be frozen during joint training; "
            f"trainable parameters: {bad[:3]}{'...' if len(bad) > 3 else ''}")


def loss_damo(models: dict, phi, batch: dict,
              weights: LossWeights = LossWeights()) -> dict:
    """Training losses for the joint mask-generator stage.

    ``batch`` holds ``w`` (design image), ``x`` (mask image), ``y`` (wafer
    image), ``w_r`` (SRAF-free design rendered as a wafer image) and the two
    noise channels ``z0``/``z``.  The mask generator produces
    ``x_hat = G(cat(w, z0))``; the *frozen* wafer simulator produces
    ``y_hat = G_dls(cat(x_hat, z))`` — gradients flow through it into the
    mask generator, but its own parameters must be frozen (else
    ``FreezeContractError``).

    Returned summands (each a live tensor, so any one can be backpropagated
    alone):

    - ``dmg_adv``  ``-sum_k E[log D_dmg_k(w, x_hat)]``
    - ``dmg_perc`` feature distance between ``x`` and ``x_hat``
    - ``dls_adv``  ``-sum_k E[log D_dls_k(x, y_hat)]``
    - ``dls_perc`` feature distance between ``y`` and ``y_hat``
    - ``e_l1``     mean ``|y_hat - w_r|``
    - ``g_total``  ``dmg_adv + lambda1*dmg_perc + dls_adv + lambda0*dls_perc
                   + lambda2*e_l1`` (the optimized scalar; exactly the sum of
                   the weighted summands)
    - ``d_total``  ``sum_k [E log D_dmg_k(w, x_hat) - E log D_dmg_k(w, x)]
                   + sum_k [E log D_dls_k(x, y_hat) - E log D_dls_k(x, y)]``
                   with the fakes detached.
    """
    check_frozen(models["g_dls"])
    w, x, y, w_r = batch["w"], batch["x"], batch["y"], batch["w_r"]
    z0, z = batch["z0"], batch["z"]
    x_hat = models["g_dmg"](torch.cat([w, z0], dim=1))
    y_hat = models["g_dls"](torch.cat([x_hat, z], dim=1))

    dmg_adv = _generator_adversarial(models["d_dmg1"], models["d_dmg2"], w, x_hat)
    dmg_perc = perceptual(phi, x, x_hat)
    dls_adv = _generator_adversarial(models["d_dls1"], models["d_dls2"], x, y_hat)
    dls_perc = perceptual(phi, y, y_hat)
    e_l1 = (y_hat - w_r).abs().mean()
    g_total = (dmg_adv + weights.lambda1 * dmg_perc
               + dls_adv + weights.lambda0 * dls_perc
               + weights.lambda2 * e_l1)

    fx, fy = x_hat.detach(), y_hat.detach()
    d_total = None
    for d, cond, real, fake in ((models["d_dmg1"], w, x, fx),
                                (models["d_dmg2"], w, x, fx),
                                (models["d_dls1"], x, y, fy),
                                (models["d_dls2"], x, y, fy)):
        term = log_d(d(cond, fake)) - log_d(d(cond, real))
        d_total = term if d_total is None else d_total + term

    return {
        "x_hat": x_hat,
        "y_hat": y_hat,
        "dmg_adv": dmg_adv,
        "dmg_perc": dmg_perc,
        "dls_adv": dls_adv,
        "dls_perc": dls_perc,
        "e_l1": e_l1,
        "g_total": g_total,
        "d_total": d_total,
    }
