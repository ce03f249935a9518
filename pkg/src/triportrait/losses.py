"""GAN objectives with split R1 penalties, plus the fixed feature embedder
used for perceptual losses and the toy Frechet-distance proxy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .discriminator import DualDiscriminator, DualInput


@dataclass
class GanLossTerms:
    loss_g: torch.Tensor
    loss_d: torch.Tensor
    r1_image: torch.Tensor
    r1_semantic: torch.Tensor


def split_r1(disc: DualDiscriminator, real: DualInput,
             create_graph: bool = True) -> tuple[torch.Tensor, torch.Tensor]:
    """Gradient penalties of the real logit, split by input family.

    Returns (r1_image, r1_semantic): squared gradient norms w.r.t. the RGB
    inputs (I_h and resized I_l') and the semantic inputs respectively,
    averaged over the batch.
    """
    inputs = [real.image_hr.detach().requires_grad_(True),
              real.image_lr_resized.detach().requires_grad_(True),
              real.semantic_hr.detach().requires_grad_(True),
              real.semantic_lr_resized.detach().requires_grad_(True)]
    probe = DualInput(*inputs, pose=real.pose)
    logits = disc(probe)
    grads = torch.autograd.grad(logits.sum(), inputs, create_graph=create_graph)
    r1_image = sum(g.square().reshape(g.shape[0], -1).sum(dim=1) for g in grads[:2]).mean()
    r1_semantic = sum(g.square().reshape(g.shape[0], -1).sum(dim=1) for g in grads[2:]).mean()
    return r1_image, r1_semantic


def gan_losses(disc: DualDiscriminator, real: DualInput, fake: DualInput,
               with_r1: bool = True, create_graph: bool = True) -> GanLossTerms:
    """Non-saturating logistic GAN terms; R1 penalties returned unweighted."""
    fake_logits = disc(fake)
    real_logits = disc(real)
    if not torch.isfinite(fake_logits).all() or not torch.isfinite(real_logits).all():
        from .errors import TrainingFault

        raise TrainingFault("non-finite discriminator logits")
    loss_d = F.softplus(fake_logits).mean() + F.softplus(-real_logits).mean()
    loss_g = F.softplus(-fake_logits).mean()
    if with_r1:
        r1_image, r1_semantic = split_r1(disc, real, create_graph=create_graph)
    else:
        zero = torch.zeros((), dtype=loss_d.dtype)
        r1_image = r1_semantic = zero
    return GanLossTerms(loss_g, loss_d, r1_image, r1_semantic)


class FeatureEmbedder(nn.Module):
    """Small fixed-weight conv embedder (deterministic from a seed).

    Serves as the repo's perceptual feature space and as the embedding for the
    toy Frechet-distance proxy; never trained.
    """

    SEED = 20240601

    def __init__(self, dim: int = 64):
        super().__init__()
        g = torch.Generator().manual_seed(self.SEED)
        self.convs = nn.ModuleList([
            nn.Conv2d(3, 16, 5, stride=2, padding=2),
            nn.Conv2d(16, 32, 3, stride=2, padding=1),
            nn.Conv2d(32, dim, 3, stride=2, padding=1),
        ])
        with torch.no_grad():
            for conv in self.convs:
                fan_in = conv.weight[0].numel()
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=g)
                                  / (fan_in ** 0.5))
                conv.bias.zero_()
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        x = image
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
        return F.adaptive_avg_pool2d(x, 1).flatten(1)


def perceptual_distance(embedder: FeatureEmbedder, a: torch.Tensor,
                        b: torch.Tensor) -> torch.Tensor:
    return (embedder(a) - embedder(b)).square().mean()


def frechet_distance(feats_a: np.ndarray, feats_b: np.ndarray) -> float:
    """Frechet distance between Gaussians fit to two feature sets."""
    from scipy import linalg

    mu_a, mu_b = feats_a.mean(axis=0), feats_b.mean(axis=0)
    cov_a = np.cov(feats_a, rowvar=False) + np.eye(feats_a.shape[1]) * 1e-6
    cov_b = np.cov(feats_b, rowvar=False) + np.eye(feats_b.shape[1]) * 1e-6
    covmean = linalg.sqrtm(cov_a @ cov_b)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    return float(((mu_a - mu_b) ** 2).sum() + np.trace(cov_a + cov_b - 2 * covmean))


def toy_fid(embedder: FeatureEmbedder, images_a: torch.Tensor,
            images_b: torch.Tensor, batch: int = 64) -> float:
    """Frechet proxy between two image sets, computed in eval chunks."""
    feats = []
    for images in (images_a, images_b):
        chunks = [embedder(images[i:i + batch]).numpy()
                  for i in range(0, images.shape[0], batch)]
        feats.append(np.concatenate(chunks, axis=0))
    return frechet_distance(feats[0], feats[1])
