"""Caption-conditioned diffusion over pose states.

The state is the prior latent (32) or the raw six-number joint block (126),
concatenated with a six-number root orientation. A causal transformer reads
[caption tokens | pooled text | timestep | noised pose | noised root | two
queries] and predicts the clean pose and root at the query slots. Sampling
is ancestral with classifier-free guidance mixed in noise space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nncore as nn
from . import textenc
from .config import PoseDiffConfig
from .errors import ConfigError, DataError, ModelStateError, NumericError
from .kinematics import (
    BODY_JOINTS,
    Pose,
    matrix_to_axis_angle,
    rot6d_to_matrix,
)
from .poseprior import POSE_6D_DIM, PosePrior

MODE_LATENT = "latent"
MODE_6D = "6d"
ROOT_DIM = 6


# -- schedule ---------------------------------------------------------------


@dataclass
class DiffusionSchedule:
    """Per-timestep noise coefficients; alpha_bar is indexed 0..T with
    alpha_bar[0] = 1 (clean data)."""

    T: int
    alpha_bar: np.ndarray  # [T+1]
    beta: np.ndarray  # [T+1], beta[0] unused
    kind: str

    def sqrt_alpha_bar(self, t):
        return np.sqrt(self.alpha_bar[t])

    def sqrt_one_minus(self, t):
        return np.sqrt(1.0 - self.alpha_bar[t])


def make_schedule(T: int, kind: str = "cosine") -> DiffusionSchedule:
    if T < 2:
        raise ConfigError(f"schedule needs T >= 2, got {T}")
    if kind == "cosine":
        s = 0.008
        steps = np.arange(T + 1, dtype=np.float64) / T
        f = np.cos((steps + s) / (1.0 + s) * np.pi / 2.0) ** 2
        alpha_bar = f / f[0]
        beta = np.empty(T + 1)
        beta[0] = 0.0
        beta[1:] = 1.0 - alpha_bar[1:] / alpha_bar[:-1]
        beta = np.clip(beta, 0.0, 0.999)
        alpha_bar = np.cumprod(1.0 - beta)
        alpha_bar[0] = 1.0
    elif kind == "linear":
        beta = np.empty(T + 1)
        beta[0] = 0.0
        beta[1:] = np.linspace(1e-4, 0.02, T)
        alpha_bar = np.cumprod(1.0 - beta)
        alpha_bar[0] = 1.0
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}")
    return DiffusionSchedule(T, alpha_bar, beta, kind)


def q_sample_array(schedule: DiffusionSchedule, x0: np.ndarray, t,
                   noise: np.ndarray) -> np.ndarray:
    """Forward noising x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) noise.

    t is a scalar or an array broadcastable against x0's leading axis.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != x0.shape:
        raise DataError(f"noise shape {noise.shape} != state shape {x0.shape}")
    t = np.asarray(t)
    if (t < 1).any() or (t > schedule.T).any():
        raise DataError(f"t must lie in [1, {schedule.T}]")
    ab = schedule.alpha_bar[t]
    if x0.ndim > ab.ndim:
        ab = ab.reshape(ab.shape + (1,) * (x0.ndim - ab.ndim))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


# -- state ------------------------------------------------------------------


@dataclass
class PoseState:
    mode: str
    pose: np.ndarray  # [latent_dim] latent mode, [126] six-number mode
    root: np.ndarray  # [6]

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64)
        self.root = np.asarray(self.root, dtype=np.float64)
        if self.pose.ndim != 1 or self.root.shape != (ROOT_DIM,):
            raise DataError(
                f"state dims {self.pose.shape}/{self.root.shape} are invalid"
            )

    def vector(self) -> np.ndarray:
        return np.concatenate([self.pose, self.root])

    @classmethod
    def from_vector(cls, mode: str, v: np.ndarray, pose_width: int) -> "PoseState":
        return cls(mode, v[:pose_width], v[pose_width:])


def pose_dim(mode: str, latent_dim: int = 32) -> int:
    if mode == MODE_LATENT:
        return latent_dim
    if mode == MODE_6D:
        return POSE_6D_DIM
    raise ConfigError(f"unknown pose mode {mode!r}")


@dataclass
class GuidanceConfig:
    scale: float = 3.0
    p_drop: float = 0.1

    def __post_init__(self):
        if self.scale < 0:
            raise ConfigError(f"guidance scale must be >= 0, got {self.scale}")
        if not 0.0 <= self.p_drop <= 1.0:
            raise ConfigError(f"p_drop must be in [0, 1], got {self.p_drop}")


# -- denoiser ----------------------------------------------------------------


class PoseDenoiser:
    """Causal transformer over the fixed token layout."""

    CHECKPOINT_PREFIX = "posediff"

    def __init__(self, cfg: PoseDiffConfig, rng=None,
                 text_dim: int = textenc.EMBED_DIM,
                 l_max: int = textenc.MAX_TOKENS):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        self.text_dim = text_dim
        self.l_max = l_max
        self.pose_dim = pose_dim(cfg.mode, cfg.latent_dim)
        d = cfg.d_model
        self.seq_len = l_max + 6
        self.store = nn.ParamStore()
        p = self.CHECKPOINT_PREFIX
        self.tok_proj = nn.Dense(self.store, f"{p}.tok_proj", text_dim, d, rng)
        self.pool_proj = nn.Dense(self.store, f"{p}.pool_proj", text_dim, d, rng)
        self.time_proj = nn.Dense(self.store, f"{p}.time_proj", cfg.time_dim, d, rng)
        self.pose_in = nn.Dense(self.store, f"{p}.pose_in", self.pose_dim, d, rng)
        self.root_in = nn.Dense(self.store, f"{p}.root_in", ROOT_DIM, d, rng)
        self.query_pose = self.store.add(f"{p}.query_pose", rng.normal(0, 0.02, d))
        self.query_root = self.store.add(f"{p}.query_root", rng.normal(0, 0.02, d))
        self.pos_embed = self.store.add(
            f"{p}.pos_embed", rng.normal(0, 0.02, (self.seq_len, d))
        )
        self.blocks = [
            nn.TransformerBlock(self.store, f"{p}.block{i}", d, cfg.heads, rng)
            for i in range(cfg.layers)
        ]
        self.final_ln = nn.LayerNorm(self.store, f"{p}.final_ln", d)
        self.head_pose = nn.Dense(self.store, f"{p}.head_pose", d, self.pose_dim, rng,
                                  zero_init=True)
        self.head_root = nn.Dense(self.store, f"{p}.head_root", d, ROOT_DIM, rng,
                                  zero_init=True)
        # diffusion runs in a whitened state space; stats are frozen from the
        # training corpus and stored with the checkpoint
        D = self.pose_dim + ROOT_DIM
        self.state_mean = self.store.add(f"{p}.state_mean", np.zeros(D), trainable=False)
        self.state_std = self.store.add(f"{p}.state_std", np.ones(D), trainable=False)
        self.trained = False

    def forward(self, tok_mats: np.ndarray, pooled: np.ndarray, t: np.ndarray,
                x_p, x_r):
        """Predict the clean (pose, root) pair.

        tok_mats [B, L, text_dim] and pooled [B, text_dim] are frozen caption
        features; t [B] integer timesteps; x_p/x_r noised states (arrays or
        Tensors).
        """
        B = tok_mats.shape[0]
        t_feat = nn.sinusoidal_embed(np.asarray(t, dtype=np.float64), self.cfg.time_dim)
        pieces = [
            self.tok_proj(nn.Tensor(tok_mats)),
            self.pool_proj(nn.Tensor(pooled.reshape(B, 1, self.text_dim))),
            self.time_proj(nn.Tensor(t_feat.reshape(B, 1, self.cfg.time_dim))),
            self.pose_in(_as_tensor(x_p).reshape((B, 1, self.pose_dim))),
            self.root_in(_as_tensor(x_r).reshape((B, 1, ROOT_DIM))),
            _tile(self.query_pose, B),
            _tile(self.query_root, B),
        ]
        seq = nn.concat(pieces, axis=1) + self.pos_embed
        for block in self.blocks:
            seq = block(seq, causal=True)
        seq = self.final_ln(seq)
        pose_out = self.head_pose(seq[:, self.seq_len - 2, :])
        root_out = self.head_root(seq[:, self.seq_len - 1, :])
        return pose_out, root_out

    def predict_x0(self, tok_mats, pooled, t, x_p, x_r) -> np.ndarray:
        """Inference-only forward returning the concatenated [B, D] array."""
        pose_out, root_out = self.forward(tok_mats, pooled, t, x_p, x_r)
        return np.concatenate([pose_out.data, root_out.data], axis=1)


def _as_tensor(x):
    return x if isinstance(x, nn.Tensor) else nn.Tensor(x)


def _tile(param: nn.Tensor, B: int):
    d = param.shape[0]
    return (param.reshape((1, 1, d)) + nn.Tensor(np.zeros((B, 1, d))))


# -- model wrapper -----------------------------------------------------------


@dataclass
class PoseDiffusionModel:
    cfg: PoseDiffConfig
    denoiser: PoseDenoiser
    schedule: DiffusionSchedule
    encoder: textenc.TextEncoder

    @classmethod
    def create(cls, cfg: PoseDiffConfig, encoder: textenc.TextEncoder,
               seed: int = 0) -> "PoseDiffusionModel":
        rng = np.random.default_rng(seed)
        denoiser = PoseDenoiser(cfg, rng, text_dim=encoder.dim)
        schedule = make_schedule(cfg.timesteps, cfg.schedule)
        return cls(cfg, denoiser, schedule, encoder)

    @property
    def state_dim(self) -> int:
        return self.denoiser.pose_dim + ROOT_DIM

    def clamp_bound(self) -> float:
        return self.cfg.clamp_latent if self.cfg.mode == MODE_LATENT else self.cfg.clamp_6d


# -- training ------------------------------------------------------------------


def build_training_states(records, mode: str,
                          prior: PosePrior | None) -> np.ndarray:
    """Per-record clean state vectors [N, D] for the chosen representation."""
    roots = np.stack([r.to_pose().root_rot6d() for r in records])
    if mode == MODE_6D:
        poses = np.stack([r.to_pose().body_rot6d().reshape(-1) for r in records])
    else:
        if prior is None:
            raise ModelStateError("latent mode needs a trained pose prior")
        body = np.stack([r.to_pose().body_rot6d() for r in records])
        poses, _ = prior.encode_batch(body)
    return np.concatenate([poses, roots], axis=1)


def train_step(model: PoseDiffusionModel, opt: nn.Adam, token_ids: np.ndarray,
               states: np.ndarray, rng: np.random.Generator) -> float:
    """One optimizer step on a batch; returns the scalar loss."""
    if len(states) == 0:
        raise DataError("empty training batch")
    B = len(states)
    d_pose = model.denoiser.pose_dim
    t = rng.integers(1, model.schedule.T + 1, size=B)
    noise = rng.standard_normal(states.shape)
    x_t = q_sample_array(model.schedule, states, t, noise)
    drop = rng.random(B) < model.cfg.p_drop
    ids = token_ids.copy()
    ids[drop] = textenc.PAD_ID
    tok_mats, pooled = model.encoder.embed_batch(ids)
    pose_out, root_out = model.denoiser.forward(
        tok_mats, pooled, t, x_t[:, :d_pose], x_t[:, d_pose:]
    )
    pred = nn.concat([pose_out, root_out], axis=1)
    diff = pred - nn.Tensor(states)
    loss = (diff * diff).mean()
    if not np.isfinite(loss.data):
        raise NumericError("diffusion training loss is non-finite")
    opt.zero_grad()
    loss.backward()
    opt.step()
    return float(loss.data)


def train(records, cfg: PoseDiffConfig, encoder: textenc.TextEncoder,
          prior: PosePrior | None, seed: int = 0,
          log_every: int = 50) -> tuple[PoseDiffusionModel, list[tuple[int, float]]]:
    if not records:
        raise DataError("no training records")
    model = PoseDiffusionModel.create(cfg, encoder, seed=seed)
    raw = build_training_states(records, cfg.mode, prior)
    token_ids = np.stack([textenc.tokenize(r.caption, encoder.vocab) for r in records])
    log = train_on_states(model, token_ids, raw, seed=seed, log_every=log_every)
    return model, log


def train_on_states(model: PoseDiffusionModel, token_ids: np.ndarray,
                    raw_states: np.ndarray, seed: int = 0,
                    log_every: int = 50) -> list[tuple[int, float]]:
    """Core loop over precomputed clean states; freezes whitening stats."""
    cfg = model.cfg
    rng = np.random.default_rng(seed)
    den = model.denoiser
    den.state_mean.data = raw_states.mean(axis=0)
    den.state_std.data = np.maximum(raw_states.std(axis=0), 1e-3)
    states = (raw_states - den.state_mean.data) / den.state_std.data
    opt = nn.Adam(den.store, lr=cfg.lr)
    log: list[tuple[int, float]] = []
    for step in range(1, cfg.steps + 1):
        idx = rng.integers(0, len(states), size=cfg.batch)
        loss = train_step(model, opt, token_ids[idx], states[idx], rng)
        if step % log_every == 0 or step == 1:
            log.append((step, loss))
    den.trained = True
    return log


def save(model: PoseDiffusionModel, path) -> None:
    nn.checkpoint.save(path, model.denoiser.store)


def load(path, cfg: PoseDiffConfig, encoder: textenc.TextEncoder) -> PoseDiffusionModel:
    model = PoseDiffusionModel.create(cfg, encoder)
    nn.checkpoint.load_into(model.denoiser.store, path)
    model.denoiser.trained = True
    return model


# -- sampling --------------------------------------------------------------------


def respaced_timesteps(T: int, steps: int) -> np.ndarray:
    """Strictly decreasing timestep subsequence ending at 1."""
    if steps <= 0 or steps >= T:
        return np.arange(T, 0, -1)
    ts = np.unique(np.round(np.linspace(1, T, steps)).astype(np.int64))
    return ts[::-1]


def sample(model: PoseDiffusionModel, caption: str, guidance: GuidanceConfig,
           rng: np.random.Generator, n: int = 1,
           steps: int | None = None) -> list[PoseState]:
    """Draw n independent states by ancestral denoising from pure noise.

    At each step the clean-state estimate is formed conditionally and (when
    the scale is not exactly 1) unconditionally, converted to noise space,
    mixed as (1-s)*eps_u + s*eps_c, converted back, and clamped before the
    posterior step. rng is the only source of randomness.
    """
    den = model.denoiser
    if not den.trained:
        raise ModelStateError("pose diffusion model is untrained")
    sched = model.schedule
    cfg = model.cfg
    d_pose = den.pose_dim
    bound = model.clamp_bound()
    s = float(guidance.scale)

    cond = model.encoder.embed(caption)
    tok_c = np.broadcast_to(cond.token_matrix, (n,) + cond.token_matrix.shape).copy()
    pool_c = np.broadcast_to(cond.pooled, (n, den.text_dim)).copy()
    null = model.encoder.null_embedding()
    tok_u = np.broadcast_to(null.token_matrix, tok_c.shape).copy()
    pool_u = np.zeros_like(pool_c)

    ts = respaced_timesteps(sched.T, steps if steps is not None
                            else (cfg.sample_steps or sched.T))
    x = rng.standard_normal((n, model.state_dim))
    for i, t in enumerate(ts):
        prev = int(ts[i + 1]) if i + 1 < len(ts) else 0
        tvec = np.full(n, int(t))
        x0_c = den.predict_x0(tok_c, pool_c, tvec, x[:, :d_pose], x[:, d_pose:])
        if s == 1.0:
            x0 = x0_c
        else:
            x0_u = den.predict_x0(tok_u, pool_u, tvec, x[:, :d_pose], x[:, d_pose:])
            sq_ab = sched.sqrt_alpha_bar(int(t))
            sq_om = sched.sqrt_one_minus(int(t))
            eps_c = (x - sq_ab * x0_c) / sq_om
            eps_u = (x - sq_ab * x0_u) / sq_om
            eps = (1.0 - s) * eps_u + s * eps_c
            x0 = (x - sq_om * eps) / sq_ab
        x0 = np.clip(x0, -bound, bound)
        x = posterior_step(sched, x, x0, int(t), prev, rng)
    if not np.isfinite(x).all():
        raise NumericError("sampling produced non-finite state")
    x = x * den.state_std.data + den.state_mean.data
    return [PoseState.from_vector(cfg.mode, row, d_pose) for row in x]


def posterior_step(sched: DiffusionSchedule, x_t: np.ndarray, x0: np.ndarray,
                   t: int, prev: int, rng: np.random.Generator) -> np.ndarray:
    """One ancestral step from t to prev (prev = 0 returns the clean estimate
    deterministically); supports strided subsequences."""
    ab_t = sched.alpha_bar[t]
    ab_prev = sched.alpha_bar[prev]
    if prev == 0:
        return x0.copy()
    alpha_eff = ab_t / ab_prev
    beta_eff = 1.0 - alpha_eff
    coef_x0 = np.sqrt(ab_prev) * beta_eff / (1.0 - ab_t)
    coef_xt = np.sqrt(alpha_eff) * (1.0 - ab_prev) / (1.0 - ab_t)
    mean = coef_x0 * x0 + coef_xt * x_t
    var = beta_eff * (1.0 - ab_prev) / (1.0 - ab_t)
    return mean + np.sqrt(var) * rng.standard_normal(x_t.shape)


# -- decoding --------------------------------------------------------------------


def decode_to_pose(state: PoseState, prior: PosePrior | None = None,
                   regularize: bool = False) -> Pose:
    """Turn a sampled state into joint axis-angles.

    Latent states decode through the prior; six-number states convert
    directly with optional prior regularization. The root always converts
    directly from its own six-number block.
    """
    root = matrix_to_axis_angle(rot6d_to_matrix(state.root))
    if state.mode == MODE_LATENT:
        if prior is None:
            raise ModelStateError("decoding a latent state needs the pose prior")
        body6d = prior.decode(state.pose)
    else:
        body6d = state.pose.reshape(BODY_JOINTS, 6)
    body = np.stack([matrix_to_axis_angle(rot6d_to_matrix(r)) for r in body6d])
    pose = Pose(body, root)
    if state.mode == MODE_6D and regularize:
        if prior is None:
            raise ModelStateError("regularization needs the pose prior")
        pose = prior.regularize(pose)
    return pose
