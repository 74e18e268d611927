"""Evaluation stack: Gaussian-latent Frechet distance, a contrastive
caption/pose similarity model for reranking, and a nearest-centroid
archetype classifier used as an independent oracle."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nncore as nn
from . import textenc
from .config import AlignerConfig
from .errors import ConfigError, DataError, NumericError
from .kinematics import Pose, axis_angles_to_matrices, relative_angles
from .poseprior import POSE_6D_DIM

RIDGE = 1e-6


@dataclass
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int


def fit_stats(latents: np.ndarray, ridge: float = RIDGE) -> GaussianStats:
    """Sample mean and unbiased covariance with a stabilizing ridge."""
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2 or latents.shape[0] < 2:
        raise DataError("fit_stats needs at least 2 samples of shape [N, D]")
    mean = latents.mean(axis=0)
    cov = np.cov(latents, rowvar=False, ddof=1) + ridge * np.eye(latents.shape[1])
    return GaussianStats(mean, cov, latents.shape[0])


def fpd(a: GaussianStats, b: GaussianStats) -> float:
    """||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)).

    The cross square root is taken by eigendecomposition of the symmetrized
    product Sa^(1/2) Sb Sa^(1/2); eigenvalues below -1e-8 raise, small
    negatives clamp to zero.
    """
    if a.mean.shape != b.mean.shape:
        raise DataError("dimension mismatch between Gaussian stats")
    diff = a.mean - b.mean
    sqrt_a = _psd_sqrt(a.cov)
    inner = sqrt_a @ b.cov @ sqrt_a
    inner = (inner + inner.T) / 2.0
    eig = np.linalg.eigvalsh(inner)
    if eig.min() < -1e-8:
        raise NumericError(f"cross-covariance product has eigenvalue {eig.min():.3e}")
    trace_sqrt = np.sqrt(np.clip(eig, 0.0, None)).sum()
    return float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * trace_sqrt)


def _psd_sqrt(S: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((S + S.T) / 2.0)
    if vals.min() < -1e-8:
        raise NumericError(f"covariance has eigenvalue {vals.min():.3e}")
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


# -- contrastive caption/pose aligner ------------------------------------------


class AlignerModel:
    CHECKPOINT_PREFIX = "aligner"

    def __init__(self, cfg: AlignerConfig | None = None, rng=None,
                 text_dim: int = textenc.EMBED_DIM):
        self.cfg = cfg or AlignerConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        c = self.cfg
        self.store = nn.ParamStore()
        p = self.CHECKPOINT_PREFIX
        self.pose_fc1 = nn.Dense(self.store, f"{p}.pose_fc1", POSE_6D_DIM, c.width, rng)
        self.pose_fc2 = nn.Dense(self.store, f"{p}.pose_fc2", c.width, c.out_dim, rng)
        self.text_fc1 = nn.Dense(self.store, f"{p}.text_fc1", text_dim, c.width, rng)
        self.text_fc2 = nn.Dense(self.store, f"{p}.text_fc2", c.width, c.out_dim, rng)
        self.trained = False

    def pose_tower(self, flat6d: nn.Tensor) -> nn.Tensor:
        h = nn.leaky_relu(self.pose_fc1(flat6d), 0.01)
        return _l2_normalize(self.pose_fc2(h))

    def text_tower(self, pooled: nn.Tensor) -> nn.Tensor:
        h = nn.leaky_relu(self.text_fc1(pooled), 0.01)
        return _l2_normalize(self.text_fc2(h))

    def embed_poses(self, body_6d: np.ndarray) -> np.ndarray:
        flat = np.asarray(body_6d, dtype=np.float64).reshape(-1, POSE_6D_DIM)
        return self.pose_tower(nn.Tensor(flat)).data.copy()

    def embed_captions(self, pooled: np.ndarray) -> np.ndarray:
        pooled = np.asarray(pooled, dtype=np.float64).reshape(-1, self.text_fc1.w.shape[0])
        return self.text_tower(nn.Tensor(pooled)).data.copy()


def _l2_normalize(x: nn.Tensor) -> nn.Tensor:
    return x / nn.tsqrt((x * x).sum(axis=-1, keepdims=True) + 1e-12)


def contrastive_loss(model: AlignerModel, body_6d: np.ndarray,
                     pooled: np.ndarray) -> nn.Tensor:
    """Symmetric in-batch InfoNCE between matched pose/caption pairs."""
    B = body_6d.shape[0]
    if B < 2:
        raise ConfigError("contrastive batches need at least 2 items")
    p = model.pose_tower(nn.Tensor(body_6d.reshape(B, -1)))
    t = model.text_tower(nn.Tensor(pooled))
    logits = nn.matmul(p, t.transpose((1, 0))) * (1.0 / model.cfg.temperature)
    diag = (np.arange(B), np.arange(B))
    loss_p = nn.log_softmax(logits, axis=1)[diag].mean()
    loss_t = nn.log_softmax(logits, axis=0)[diag].mean()
    return (loss_p + loss_t) * -0.5


def train_aligner(records, encoder: textenc.TextEncoder,
                  cfg: AlignerConfig | None = None, seed: int = 0,
                  log_every: int = 50) -> tuple[AlignerModel, list[tuple[int, float]]]:
    cfg = cfg or AlignerConfig()
    rng = np.random.default_rng(seed)
    model = AlignerModel(cfg, rng, text_dim=encoder.dim)
    body = np.stack([r.to_pose().body_rot6d().reshape(-1) for r in records])
    ids = np.stack([textenc.tokenize(r.caption, encoder.vocab) for r in records])
    _, pooled = encoder.embed_batch(ids)
    opt = nn.Adam(model.store, lr=cfg.lr)
    log = []
    for step in range(1, cfg.steps + 1):
        idx = rng.integers(0, len(body), size=cfg.batch)
        loss = contrastive_loss(model, body[idx], pooled[idx])
        if not np.isfinite(loss.data):
            raise NumericError(f"aligner training diverged at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % log_every == 0 or step == 1:
            log.append((step, float(loss.data)))
    model.trained = True
    return model, log


def save_aligner(model: AlignerModel, path) -> None:
    nn.checkpoint.save(path, model.store)


def load_aligner(path, cfg: AlignerConfig | None = None) -> AlignerModel:
    model = AlignerModel(cfg)
    nn.checkpoint.load_into(model.store, path)
    model.trained = True
    return model


def similarity(model: AlignerModel, encoder: textenc.TextEncoder,
               caption: str, pose: Pose) -> float:
    """Cosine between the caption and pose embeddings, in [-1, 1]."""
    p = model.embed_poses(pose.body_rot6d())[0]
    t = model.embed_captions(encoder.embed(caption).pooled)[0]
    return float(p @ t)


def rerank(model: AlignerModel, encoder: textenc.TextEncoder, caption: str,
           candidates) -> tuple[int, np.ndarray]:
    """Best candidate by similarity; ties break to the lowest index."""
    if len(candidates) < 1:
        raise DataError("rerank needs at least one candidate")
    scores = np.array(
        [similarity(model, encoder, caption, pose) for pose in candidates]
    )
    return int(np.argmax(scores)), scores


# -- nearest-centroid archetype oracle ------------------------------------------


class ArchetypeOracle:
    """Classifies a pose by mean per-joint geodesic distance to each
    archetype's base pose; ties break to the lexicographically first name."""

    def __init__(self, archetypes):
        ordered = sorted(archetypes, key=lambda a: a.name)
        self.names = [a.name for a in ordered]
        self.centroids = np.stack(
            [axis_angles_to_matrices(a.body) for a in ordered]
        )  # [A, J, 3, 3]

    def distances(self, body_aa: np.ndarray) -> np.ndarray:
        """[..., 21, 3] axis-angles -> [..., A] mean geodesic distances."""
        R = axis_angles_to_matrices(body_aa)  # [..., J, 3, 3]
        R = R[..., None, :, :, :]  # [..., 1, J, 3, 3]
        angles = relative_angles(R, self.centroids)  # [..., A, J]
        return angles.mean(axis=-1)

    def classify(self, pose: Pose) -> str:
        d = self.distances(pose.body)
        return self.names[int(np.argmin(d))]

    def classify_batch(self, body_aa: np.ndarray) -> list[str]:
        d = self.distances(body_aa)
        return [self.names[i] for i in np.argmin(d, axis=-1)]
