"""Stochastic latent residual video predictor.

Frames are encoded by a small CNN; a content vector ``w`` is pooled
permutation-invariantly from the conditioning encodings; the per-step latent
state ``y_t`` starts from a variationally inferred ``y_1`` and evolves by pure
residual updates ``y_{t+1} = y_t + f(z_{t+1})``, where the dynamics variable
``z_t`` comes from a recurrent posterior at train time and from a learned
Gaussian prior ``z_{t+1} ~ N(mu(y_t), sigma(y_t) I)`` at test time. Decoding
concatenates ``w`` with ``y_t``. Training maximizes the evidence lower bound:
Gaussian reconstruction likelihood minus KL terms, plus an L2 penalty.

All model-side tensors hold pixels scaled to [0, 1]; conversion from the
[0, 255] frame convention happens at this module's public boundary.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn

log = logging.getLogger(__name__)

LOG_STD_MIN = -7.0
LOG_STD_MAX = 7.0

CHECKPOINT_FORMAT = "framecast-checkpoint"
CHECKPOINT_VERSION = 1

ENCODER_SMALL = "small"
ENCODER_VGG_LIKE = "vgg_like"


@dataclass(frozen=True)
class ModelConfig:
    """Architecture sizes and loss weights.

    ``d_y``/``d_z`` are the latent state and dynamics dimensions, ``k`` the number
    of conditioning frames, ``horizon`` the number of predicted frames.
    ``content_frames`` defaults to ``k``. ``obs_std`` is the fixed observation
    standard deviation of the Gaussian likelihood, in [0, 1] pixel units.
    """

    d_y: int = 50
    d_z: int = 50
    k: int = 5
    horizon: int = 10
    image_size: tuple[int, int] = (64, 64)
    encoder_depth: str = ENCODER_SMALL
    content_frames: int | None = None
    kl_weight: float = 1.0
    l2_weight: float = 1e-4
    obs_std: float = 1.0
    d_w: int = 16
    enc_dim: int = 128
    hidden_dim: int = 128
    base_channels: int = 32

    def __post_init__(self):
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))
        for name in ("d_y", "d_z", "k", "horizon", "d_w", "enc_dim", "hidden_dim",
                     "base_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.kl_weight < 0 or self.l2_weight < 0:
            raise ValueError("kl_weight and l2_weight must be nonnegative")
        if self.obs_std <= 0:
            raise ValueError("obs_std must be positive")
        if self.encoder_depth not in (ENCODER_SMALL, ENCODER_VGG_LIKE):
            raise ValueError(f"unknown encoder_depth {self.encoder_depth!r}")
        h, w = self.image_size
        if h != w or h < 4:
            raise ValueError("image_size must be square and at least 4x4")
        if self.content_frames is not None and self.content_frames < 1:
            raise ValueError("content_frames must be positive")

    @property
    def n_content_frames(self) -> int:
        return self.k if self.content_frames is None else self.content_frames

    @property
    def seq_len(self) -> int:
        return self.k + self.horizon


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings: Adam with the stated defaults, fixed epoch count."""

    epochs: int = 200
    batch_size: int = 16
    learning_rate: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


class GaussianParams(NamedTuple):
    """Diagonal Gaussian as (mean, log_std); log_std is pre-clamped to [-7, 7]."""

    mean: torch.Tensor
    log_std: torch.Tensor

    @property
    def std(self) -> torch.Tensor:
        return torch.exp(self.log_std)

    def sample(self, eps: torch.Tensor) -> torch.Tensor:
        """Reparameterized draw mean + std * eps (equals mean exactly when eps=0)."""
        return self.mean + self.std * eps


def gaussian_kl(q: GaussianParams, p: GaussianParams) -> torch.Tensor:
    """KL(q || p) for diagonal Gaussians, summed over the last dimension."""
    var_q = torch.exp(2 * q.log_std)
    var_p = torch.exp(2 * p.log_std)
    return (p.log_std - q.log_std
            + (var_q + (q.mean - p.mean) ** 2) / (2 * var_p) - 0.5).sum(-1)


def _downsample_plan(size: int, base_channels: int) -> list[tuple[int, int]]:
    """(in_ch, out_ch) per stride-2 stage, halving until the map is ~4 pixels."""
    plan = []
    c_in, s = 1, size
    c = base_channels
    while s > 4 and s % 2 == 0 and len(plan) < 4:
        plan.append((c_in, c))
        c_in, c, s = c, min(c * 2, 4 * base_channels), s // 2
    return plan


class FrameEncoder(nn.Module):
    """CNN mapping one [0,1] grayscale frame to a fixed-size encoding."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        size = config.image_size[0]
        plan = _downsample_plan(size, config.base_channels)
        layers: list[nn.Module] = []
        s = size
        for c_in, c_out in plan:
            if config.encoder_depth == ENCODER_VGG_LIKE:
                layers += [nn.Conv2d(c_in, c_out, 3, 1, 1), nn.SiLU(),
                           nn.Conv2d(c_out, c_out, 3, 1, 1), nn.SiLU()]
                c_in = c_out
            layers += [nn.Conv2d(c_in, c_out, 4, 2, 1), nn.SiLU()]
            s //= 2
        self.conv = nn.Sequential(*layers)
        last_ch = plan[-1][1] if plan else 1
        self.fc = nn.Linear(last_ch * s * s, config.enc_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:  # [N,1,H,W] -> [N,enc_dim]
        return self.fc(self.conv(x).flatten(1))


class FrameDecoder(nn.Module):
    """Transposed-CNN mapping (w, y) to one [0,1] frame; final sigmoid keeps pixels bounded."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        size = config.image_size[0]
        plan = _downsample_plan(size, config.base_channels)
        chans = [c_out for _, c_out in plan][::-1]  # deepest first
        self.c0 = chans[0] if chans else config.base_channels
        self.s0 = size // (2 ** len(plan))
        self.fc = nn.Linear(config.d_w + config.d_y, self.c0 * self.s0 * self.s0)
        layers: list[nn.Module] = []
        c_in = self.c0
        for i in range(len(plan)):
            c_out = chans[i + 1] if i + 1 < len(chans) else config.base_channels
            layers += [nn.ConvTranspose2d(c_in, c_out, 4, 2, 1), nn.SiLU()]
            if config.encoder_depth == ENCODER_VGG_LIKE:
                layers += [nn.Conv2d(c_out, c_out, 3, 1, 1), nn.SiLU()]
            c_in = c_out
        layers += [nn.Conv2d(c_in, 1, 3, 1, 1)]
        self.deconv = nn.Sequential(*layers)

    def forward(self, latent: torch.Tensor) -> torch.Tensor:  # [N,d_w+d_y] -> [N,1,H,W]
        h = self.fc(latent).view(-1, self.c0, self.s0, self.s0)
        return torch.sigmoid(self.deconv(h))


def _mlp(d_in: int, d_hidden: int, d_out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(d_in, d_hidden), nn.SiLU(), nn.Linear(d_hidden, d_out))


class SRVPNet(nn.Module):
    """All trainable pieces of the latent residual predictor."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config
        self.encoder = FrameEncoder(c)
        self.decoder = FrameDecoder(c)
        self.content_phi = _mlp(c.enc_dim, c.hidden_dim, c.hidden_dim)
        self.content_rho = nn.Linear(c.hidden_dim, c.d_w)
        self.init_net = _mlp(c.k * c.enc_dim, c.hidden_dim, 2 * c.d_y)
        self.posterior_lstm = nn.LSTM(c.enc_dim, c.hidden_dim, batch_first=True)
        self.posterior_head = nn.Linear(c.hidden_dim, 2 * c.d_z)
        self.prior_mean_net = _mlp(c.d_y, c.hidden_dim, c.d_z)
        self.prior_log_std_net = _mlp(c.d_y, c.hidden_dim, c.d_z)
        self.transition_net = _mlp(c.d_z, c.hidden_dim, c.d_y)

    # -- spec operations ---------------------------------------------------

    def encode_frames(self, frames: torch.Tensor) -> torch.Tensor:
        """Encode frames [B,T,H,W] (pixels in [0,1]) to [B,T,enc_dim]."""
        if frames.dim() != 4:
            raise ValueError("expected frames of shape [batch, time, H, W]")
        b, t, h, w = frames.shape
        if (h, w) != self.config.image_size:
            raise ValueError(f"frame size {(h, w)} does not match config {self.config.image_size}")
        return self.encoder(frames.reshape(b * t, 1, h, w)).view(b, t, -1)

    def infer_content(self, encodings: torch.Tensor) -> torch.Tensor:
        """Permutation-invariant content vector from encoded frames [B,T,e]."""
        if encodings.dim() != 3 or encodings.shape[1] < 1:
            raise ValueError("need at least one encoded frame")
        return self.content_rho(self.content_phi(encodings).mean(dim=1))

    def infer_initial_state(self, encodings: torch.Tensor) -> GaussianParams:
        """Posterior over the first latent state from exactly k encoded frames."""
        if encodings.dim() != 3 or encodings.shape[1] != self.config.k:
            raise ValueError(f"initial-state inference needs exactly k={self.config.k} frames")
        mean, log_std = self.init_net(encodings.flatten(1)).chunk(2, dim=-1)
        return GaussianParams(mean, log_std.clamp(LOG_STD_MIN, LOG_STD_MAX))

    def posterior_dynamics(self, encodings: torch.Tensor) -> GaussianParams:
        """Recurrent posterior over z_2..z_T from encodings [B,T,e] in time order."""
        if encodings.dim() != 3 or encodings.shape[1] < 2:
            raise ValueError("posterior dynamics need at least 2 encoded frames")
        hidden, _ = self.posterior_lstm(encodings)
        mean, log_std = self.posterior_head(hidden[:, 1:]).chunk(2, dim=-1)
        return GaussianParams(mean, log_std.clamp(LOG_STD_MIN, LOG_STD_MAX))

    def prior_dynamics(self, y: torch.Tensor) -> GaussianParams:
        """Learned prior over the next dynamics variable given the current state."""
        if y.shape[-1] != self.config.d_y:
            raise ValueError(f"state dimension {y.shape[-1]} != d_y={self.config.d_y}")
        return GaussianParams(
            self.prior_mean_net(y),
            self.prior_log_std_net(y).clamp(LOG_STD_MIN, LOG_STD_MAX),
        )

    def transition(self, y: torch.Tensor, z_next: torch.Tensor) -> torch.Tensor:
        """Residual state update y + f(z_next); f never replaces the carried state."""
        if z_next.shape[-1] != self.config.d_z:
            raise ValueError(f"dynamics dimension {z_next.shape[-1]} != d_z={self.config.d_z}")
        return y + self.transition_net(z_next)

    def decode_latent(self, w: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        """Decode (content, state) to frames [B,H,W] with pixels in [0,1]."""
        if w.shape[-1] != self.config.d_w or y.shape[-1] != self.config.d_y:
            raise ValueError("content/state dimensions do not match config")
        out = self.decoder(torch.cat([w, y], dim=-1))
        return out.view(-1, *self.config.image_size)

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


@dataclass
class LossBreakdown:
    total: torch.Tensor
    nll: torch.Tensor
    kl_y: torch.Tensor
    kl_z: torch.Tensor
    l2: torch.Tensor

    def detach_floats(self) -> dict[str, float]:
        return {name: float(getattr(self, name).detach())
                for name in ("total", "nll", "kl_y", "kl_z", "l2")}


def draw_elbo_noise(
    config: ModelConfig,
    batch_size: int,
    generator: torch.Generator | None = None,
    dtype: torch.dtype = torch.float32,
) -> dict[str, torch.Tensor]:
    """Unit-normal draws for the reparameterized ELBO; zeros give the mean path."""
    t = config.seq_len
    return {
        "eps_y": torch.randn((batch_size, config.d_y), generator=generator, dtype=dtype),
        "eps_z": torch.randn((batch_size, t - 1, config.d_z), generator=generator, dtype=dtype),
    }


def zero_elbo_noise(config: ModelConfig, batch_size: int,
                    dtype: torch.dtype = torch.float32) -> dict[str, torch.Tensor]:
    noise = draw_elbo_noise(config, batch_size, dtype=dtype)
    return {k: torch.zeros_like(v) for k, v in noise.items()}


def elbo_loss(
    net: SRVPNet,
    batch: torch.Tensor,
    noise: dict[str, torch.Tensor] | None = None,
    generator: torch.Generator | None = None,
) -> LossBreakdown:
    """Negative ELBO of a batch of sequences [B, k+horizon, H, W] (pixels in [0,1]).

    total = NLL + kl_weight * (KL_y + sum_t KL_z) + l2_weight * ||params||^2, all
    reconstruction/KL terms averaged over the batch. The residual structure lets
    the whole latent path be computed as a prefix sum of transition outputs, so
    no per-step Python loop is needed.
    """
    cfg = net.config
    if batch.dim() != 4 or batch.shape[1] != cfg.seq_len:
        raise ValueError(f"expected sequences of k+horizon={cfg.seq_len} frames")
    b, t = batch.shape[:2]
    if noise is None:
        noise = draw_elbo_noise(cfg, b, generator=generator, dtype=batch.dtype)

    enc = net.encode_frames(batch)
    w = net.infer_content(enc[:, :cfg.n_content_frames])
    q_y = net.infer_initial_state(enc[:, :cfg.k])
    q_z = net.posterior_dynamics(enc)
    y1 = q_y.sample(noise["eps_y"])
    z = q_z.sample(noise["eps_z"])  # [B, T-1, d_z]

    residuals = net.transition_net(z.reshape(b * (t - 1), -1)).view(b, t - 1, -1)
    states = torch.cat([y1[:, None], y1[:, None] + residuals.cumsum(dim=1)], dim=1)

    prev = states[:, :-1].reshape(b * (t - 1), -1)
    prior = GaussianParams(
        net.prior_mean_net(prev).view(b, t - 1, -1),
        net.prior_log_std_net(prev).view(b, t - 1, -1).clamp(LOG_STD_MIN, LOG_STD_MAX),
    )
    standard = GaussianParams(torch.zeros_like(q_y.mean), torch.zeros_like(q_y.log_std))
    kl_y = gaussian_kl(q_y, standard).mean()
    kl_z = gaussian_kl(q_z, prior).sum(dim=1).mean()

    w_rep = w[:, None, :].expand(b, t, cfg.d_w).reshape(b * t, -1)
    decoded = net.decoder(torch.cat([w_rep, states.reshape(b * t, -1)], dim=-1))
    decoded = decoded.view(b, t, *cfg.image_size)
    obs_var = cfg.obs_std ** 2
    nll = (0.5 * (batch - decoded) ** 2 / obs_var
           + math.log(cfg.obs_std) + 0.5 * math.log(2 * math.pi)).sum(dim=(1, 2, 3)).mean()

    l2 = sum((p ** 2).sum() for p in net.parameters())
    total = nll + cfg.kl_weight * (kl_y + kl_z) + cfg.l2_weight * l2
    return LossBreakdown(total=total, nll=nll, kl_y=kl_y, kl_z=kl_z, l2=l2)


@dataclass
class TrainedModel:
    """A trained predictor plus everything needed to reproduce and reuse it."""

    net: SRVPNet
    config: ModelConfig
    train_config: TrainConfig
    seed: int
    history: list[dict[str, float]] = field(default_factory=list)
    best_epoch: int = -1

    def final_losses(self) -> dict[str, float]:
        return dict(self.history[-1]) if self.history else {}

    @torch.no_grad()
    def predict(
        self,
        conditioning: torch.Tensor,
        horizon: int | None = None,
        mode: str = "mean",
        n_samples: int = 30,
        seed: int = 0,
    ) -> torch.Tensor:
        """Predict future frames from conditioning frames [B,k,H,W] in [0,1].

        ``mode="mean"`` takes posterior/prior means everywhere (deterministic);
        ``mode="sample"`` averages the decoded frames of ``n_samples`` independent
        stochastic rollouts.
        """
        cfg = self.config
        if conditioning.dim() != 4 or conditioning.shape[1] != cfg.k:
            raise ValueError(f"conditioning must be [batch, k={cfg.k}, H, W]")
        horizon = cfg.horizon if horizon is None else int(horizon)
        if mode == "mean":
            return self._rollout(conditioning, horizon, generator=None)
        if mode != "sample":
            raise ValueError(f"unknown prediction mode {mode!r}")
        if n_samples < 1:
            raise ValueError("n_samples must be positive")
        gen = torch.Generator().manual_seed(seed)
        acc = None
        for _ in range(n_samples):
            frames = self._rollout(conditioning, horizon, generator=gen)
            acc = frames if acc is None else acc + frames
        return acc / n_samples

    def _rollout(self, conditioning: torch.Tensor, horizon: int,
                 generator: torch.Generator | None) -> torch.Tensor:
        net, cfg = self.net, self.config
        b = conditioning.shape[0]
        dtype = conditioning.dtype

        def draw(params: GaussianParams) -> torch.Tensor:
            if generator is None:
                return params.mean
            eps = torch.randn(params.mean.shape, generator=generator, dtype=dtype)
            return params.sample(eps)

        enc = net.encode_frames(conditioning)
        w = net.infer_content(enc[:, :min(cfg.n_content_frames, cfg.k)])
        y = draw(net.infer_initial_state(enc))
        q_z = net.posterior_dynamics(enc)
        for t in range(cfg.k - 1):
            z = draw(GaussianParams(q_z.mean[:, t], q_z.log_std[:, t]))
            y = net.transition(y, z)
        frames = []
        for _ in range(horizon):
            z = draw(net.prior_dynamics(y))
            y = net.transition(y, z)
            frames.append(net.decode_latent(w, y))
        return torch.stack(frames, dim=1)  # [B, horizon, H, W]

    def save(self, path: str | Path) -> None:
        payload = {
            "format": CHECKPOINT_FORMAT,
            "checkpoint_version": CHECKPOINT_VERSION,
            "model_config": asdict(self.config),
            "train_config": asdict(self.train_config),
            "seed": self.seed,
            "state_dict": self.net.state_dict(),
            "history": self.history,
            "best_epoch": self.best_epoch,
        }
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(payload, path)

    @classmethod
    def load(cls, path: str | Path) -> "TrainedModel":
        payload = torch.load(Path(path), weights_only=True)
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} file")
        config = ModelConfig(**payload["model_config"])
        net = SRVPNet(config)
        net.load_state_dict(payload["state_dict"])
        net.eval()
        return cls(
            net=net,
            config=config,
            train_config=TrainConfig(**payload["train_config"]),
            seed=payload["seed"],
            history=payload["history"],
            best_epoch=payload["best_epoch"],
        )


def train_model(
    train_seqs: np.ndarray | torch.Tensor,
    config: ModelConfig,
    train_config: TrainConfig,
    seed: int,
    val_seqs: np.ndarray | torch.Tensor | None = None,
) -> TrainedModel:
    """Fit the predictor on sequences [N, k+horizon, H, W] with pixels in [0,1].

    Adam optimization with the configured hyperparameters; every stochastic draw
    (parameter init, batch order, reparameterization noise) derives from ``seed``,
    so runs are reproducible. Validation loss (noise-free mean path) is computed
    each epoch and the best-validation parameters are retained; without a
    validation set the training loss plays that role. Zero epochs returns the
    freshly initialized model unchanged.
    """
    x_train = torch.as_tensor(train_seqs, dtype=torch.float32)
    if x_train.dim() != 4 or x_train.shape[0] == 0:
        raise ValueError("training set must be a non-empty [N, T, H, W] array")
    x_val = None if val_seqs is None else torch.as_tensor(val_seqs, dtype=torch.float32)

    torch.manual_seed(seed)
    net = SRVPNet(config)
    gen = torch.Generator().manual_seed(seed + 1)
    rng = np.random.default_rng(seed + 2)
    opt = torch.optim.Adam(
        net.parameters(),
        lr=train_config.learning_rate,
        betas=(train_config.beta1, train_config.beta2),
        eps=train_config.eps,
    )

    history: list[dict[str, float]] = []
    best_metric, best_state, best_epoch = float("inf"), None, -1
    for epoch in range(train_config.epochs):
        order = rng.permutation(len(x_train))
        sums = {"total": 0.0, "nll": 0.0, "kl_y": 0.0, "kl_z": 0.0, "l2": 0.0}
        n_batches = 0
        for start in range(0, len(order), train_config.batch_size):
            idx = order[start:start + train_config.batch_size]
            loss = elbo_loss(net, x_train[idx], generator=gen)
            if not torch.isfinite(loss.total):
                raise RuntimeError(
                    f"training diverged at epoch {epoch}: {loss.detach_floats()}")
            opt.zero_grad()
            loss.total.backward()
            opt.step()
            for name, value in loss.detach_floats().items():
                sums[name] += value
            n_batches += 1
        entry = {f"train_{k}": v / n_batches for k, v in sums.items()}
        entry["epoch"] = float(epoch)
        if x_val is not None:
            with torch.no_grad():
                val = elbo_loss(net, x_val, noise=zero_elbo_noise(config, len(x_val)))
            entry["val_total"] = float(val.total)
            metric = entry["val_total"]
        else:
            metric = entry["train_total"]
        history.append(entry)
        if metric < best_metric:
            best_metric = metric
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in net.state_dict().items()}
        if epoch % 25 == 0 or epoch == train_config.epochs - 1:
            log.info("epoch %d: train %.3f%s", epoch, entry["train_total"],
                     f" val {entry['val_total']:.3f}" if "val_total" in entry else "")

    if best_state is not None:
        net.load_state_dict(best_state)
    net.eval()
    return TrainedModel(net=net, config=config, train_config=train_config,
                        seed=seed, history=history, best_epoch=best_epoch)
