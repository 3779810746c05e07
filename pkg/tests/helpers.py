"""Shared test oracles: gradient finite differences and the quantization sweep."""

import numpy as np
import torch

from framecast.imaging import pixel_to_change, sigmoid_pixel
from framecast.model import SRVPNet, elbo_loss


def quantized_roundtrip_error(deltas: np.ndarray) -> np.ndarray:
    """Brute-force oracle: |logit(round(255*S(delta))/255) - delta| per grid point."""
    q = np.rint(sigmoid_pixel(deltas))
    return np.abs(pixel_to_change(q) - deltas)


def gradient_group_errors(net: SRVPNet, batch: torch.Tensor,
                          noise: dict[str, torch.Tensor],
                          step: float = 1e-5) -> dict[str, float]:
    """Central finite differences vs autograd, one relative error per parameter group.

    Everything must already be float64; the noise draws are held fixed so both
    routes differentiate the same deterministic function.
    """
    net.zero_grad()
    loss = elbo_loss(net, batch, noise=noise)
    loss.total.backward()

    def loss_value() -> float:
        with torch.no_grad():
            return float(elbo_loss(net, batch, noise=noise).total)

    errors: dict[str, float] = {}
    for name, p in net.named_parameters():
        analytic = p.grad.flatten().clone()
        fd = torch.empty_like(analytic)
        flat = p.data.flatten()
        for i in range(flat.numel()):
            orig = float(flat[i])
            flat[i] = orig + step
            up = loss_value()
            flat[i] = orig - step
            down = loss_value()
            flat[i] = orig
            fd[i] = (up - down) / (2 * step)
        denom = max(float(analytic.norm()), float(fd.norm()), 1e-12)
        errors[name] = float((analytic - fd).norm()) / denom
    return errors
