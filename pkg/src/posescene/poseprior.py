"""Variational prior over body poses (root excluded).

The encoder maps the 21 six-number joint rotations to a 32-d diagonal
Gaussian; the decoder maps a latent back to raw six-number rotations. The
loss adds a rotation-validity penalty on the raw decoded columns so samples
from the prior decode to near-orthonormal frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nncore as nn
from .config import PriorConfig
from .errors import DataError, ModelStateError, NumericError
from .kinematics import (
    BODY_JOINTS,
    Pose,
    matrix_to_axis_angle,
    rot6d_to_matrix,
)

POSE_6D_DIM = BODY_JOINTS * 6  # 126


@dataclass
class LatentGaussian:
    mean: np.ndarray  # [latent_dim]
    log_std: np.ndarray  # [latent_dim], clamped

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.mean + np.exp(self.log_std) * rng.standard_normal(self.mean.shape)


class PosePrior:
    CHECKPOINT_PREFIX = "poseprior"

    def __init__(self, cfg: PriorConfig | None = None, rng=None):
        self.cfg = cfg or PriorConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        c = self.cfg
        self.store = nn.ParamStore()
        p = self.CHECKPOINT_PREFIX
        self.enc1 = nn.Dense(self.store, f"{p}.enc1", POSE_6D_DIM, c.hidden, rng)
        self.enc2 = nn.Dense(self.store, f"{p}.enc2", c.hidden, c.hidden, rng)
        self.enc_mean = nn.Dense(self.store, f"{p}.enc_mean", c.hidden, c.latent_dim, rng)
        self.enc_logstd = nn.Dense(self.store, f"{p}.enc_logstd", c.hidden, c.latent_dim, rng)
        # start near-deterministic so reconstruction learns before the KL
        # term widens the posterior; avoids collapse onto the prior
        self.enc_logstd.b.data[:] = -3.0
        self.dec1 = nn.Dense(self.store, f"{p}.dec1", c.latent_dim, c.hidden, rng)
        self.dec2 = nn.Dense(self.store, f"{p}.dec2", c.hidden, c.hidden, rng)
        self.dec_out = nn.Dense(self.store, f"{p}.dec_out", c.hidden, POSE_6D_DIM, rng)
        self.trained = False

    # -- differentiable cores (batched) ----------------------------------

    def encode_t(self, x6d: nn.Tensor):
        h = nn.leaky_relu(self.enc1(x6d), 0.01)
        h = nn.leaky_relu(self.enc2(h), 0.01)
        mean = self.enc_mean(h)
        log_std = _soft_clamp(self.enc_logstd(h), self.cfg.log_std_min, self.cfg.log_std_max)
        return mean, log_std

    def decode_t(self, z: nn.Tensor) -> nn.Tensor:
        h = nn.leaky_relu(self.dec1(z), 0.01)
        h = nn.leaky_relu(self.dec2(h), 0.01)
        return self.dec_out(h)

    # -- public inference -------------------------------------------------

    def _require_trained(self, op: str) -> None:
        if not self.trained:
            raise ModelStateError(f"pose prior is untrained; {op} needs trained parameters")

    def encode(self, body_6d: np.ndarray) -> LatentGaussian:
        """body_6d: [21, 6] -> posterior Gaussian over the latent."""
        self._require_trained("encode")
        body_6d = np.asarray(body_6d, dtype=np.float64)
        if body_6d.shape != (BODY_JOINTS, 6):
            raise DataError(f"expected [{BODY_JOINTS}, 6] rotations, got {body_6d.shape}")
        mean, log_std = self.encode_t(nn.Tensor(body_6d.reshape(1, -1)))
        return LatentGaussian(mean.data[0].copy(), log_std.data[0].copy())

    def encode_batch(self, body_6d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        self._require_trained("encode")
        flat = np.asarray(body_6d, dtype=np.float64).reshape(-1, POSE_6D_DIM)
        mean, log_std = self.encode_t(nn.Tensor(flat))
        return mean.data.copy(), log_std.data.copy()

    def decode(self, z: np.ndarray) -> np.ndarray:
        """z: [latent_dim] -> [21, 6] raw rotations."""
        self._require_trained("decode")
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.cfg.latent_dim,):
            raise DataError(f"expected latent of dim {self.cfg.latent_dim}, got {z.shape}")
        if not np.isfinite(z).all():
            raise NumericError("latent contains non-finite values")
        out = self.decode_t(nn.Tensor(z.reshape(1, -1)))
        return out.data.reshape(BODY_JOINTS, 6).copy()

    def decode_batch(self, z: np.ndarray) -> np.ndarray:
        self._require_trained("decode")
        z = np.asarray(z, dtype=np.float64)
        out = self.decode_t(nn.Tensor(z.reshape(-1, self.cfg.latent_dim)))
        return out.data.reshape(-1, BODY_JOINTS, 6).copy()

    def regularize(self, pose: Pose) -> Pose:
        """Round-trip the body through the prior; root passes through untouched."""
        decoded = self.decode(self.encode(pose.body_rot6d()).mean)
        body = np.stack(
            [matrix_to_axis_angle(rot6d_to_matrix(r)) for r in decoded]
        )
        return Pose(body, pose.root)


def _soft_clamp(x: nn.Tensor, lo: float, hi: float) -> nn.Tensor:
    """Smooth clamp via tanh so gradients stay alive at the rails."""
    mid = (hi + lo) / 2.0
    half = (hi - lo) / 2.0
    return nn.ttanh((x - mid) * (1.0 / half)) * half + mid


def vae_loss(prior: PosePrior, batch_6d: np.ndarray,
             rng: np.random.Generator) -> tuple[nn.Tensor, dict]:
    """recon + beta*KL + lambda*rotation-validity over a [B, 21, 6] batch."""
    batch_6d = np.asarray(batch_6d, dtype=np.float64)
    if batch_6d.ndim != 3 or batch_6d.shape[0] == 0:
        raise DataError("vae_loss needs a non-empty [B, 21, 6] batch")
    B = batch_6d.shape[0]
    flat = nn.Tensor(batch_6d.reshape(B, -1))
    mean, log_std = prior.encode_t(flat)
    noise = nn.Tensor(rng.standard_normal(mean.shape))
    z = mean + nn.texp(log_std) * noise
    decoded = prior.decode_t(z)

    diff = decoded - flat
    recon = (diff * diff).mean()
    var = nn.texp(log_std * 2.0)
    kl = ((mean * mean + var - log_std * 2.0 - 1.0) * 0.5).sum(axis=1).mean()
    validity = rotation_validity_penalty(decoded.reshape((B, BODY_JOINTS, 6)))
    total = recon + prior.cfg.beta_kl * kl + prior.cfg.lambda_rot * validity
    parts = {
        "recon": float(recon.data),
        "kl": float(kl.data),
        "validity": float(validity.data),
    }
    return total, parts


def rotation_validity_penalty(r6: nn.Tensor) -> nn.Tensor:
    """Mean squared Frobenius gap ||M^T M - I||_F^2 with M = [a1, a2, a1 x a2],
    for a [B, J, 6] tensor of raw six-number rotations."""
    a1 = r6[:, :, 0:3]
    a2 = r6[:, :, 3:6]
    c = _cross(a1, a2)
    n1 = (a1 * a1).sum(axis=-1)
    n2 = (a2 * a2).sum(axis=-1)
    n3 = (c * c).sum(axis=-1)
    dot12 = (a1 * a2).sum(axis=-1)
    # a1 x a2 is orthogonal to both columns, so four terms remain
    per_joint = (
        (n1 - 1.0) ** 2.0 + (n2 - 1.0) ** 2.0 + (n3 - 1.0) ** 2.0
        + 2.0 * dot12 * dot12
    )
    return per_joint.mean()


def _cross(a: nn.Tensor, b: nn.Tensor) -> nn.Tensor:
    ax, ay, az = a[:, :, 0], a[:, :, 1], a[:, :, 2]
    bx, by, bz = b[:, :, 0], b[:, :, 1], b[:, :, 2]
    cx = ay * bz - az * by
    cy = az * bx - ax * bz
    cz = ax * by - ay * bx
    parts = [t.reshape(tuple(t.shape) + (1,)) for t in (cx, cy, cz)]
    return nn.concat(parts, axis=-1)


def save(prior: PosePrior, path) -> None:
    nn.checkpoint.save(path, prior.store)


def load(path, cfg: PriorConfig | None = None) -> PosePrior:
    prior = PosePrior(cfg)
    nn.checkpoint.load_into(prior.store, path)
    prior.trained = True
    return prior


def train_prior(records, cfg: PriorConfig, seed: int = 0,
                log_every: int = 50) -> tuple[PosePrior, list[tuple[int, float]]]:
    """Fit the prior on corpus body poses; returns the model and a loss log."""
    rng = np.random.default_rng(seed)
    prior = PosePrior(cfg, rng)
    data = np.stack([r.to_pose().body_rot6d() for r in records])
    opt = nn.Adam(prior.store, lr=cfg.lr)
    log: list[tuple[int, float]] = []
    for step in range(1, cfg.steps + 1):
        idx = rng.integers(0, len(data), size=cfg.batch)
        loss, _ = vae_loss(prior, data[idx], rng)
        if not np.isfinite(loss.data):
            raise NumericError(f"prior training diverged at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % log_every == 0 or step == 1:
            log.append((step, float(loss.data)))
    prior.trained = True
    return prior, log
