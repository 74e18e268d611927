"""Latent outpainting around a rendered avatar.

A small convolutional autoencoder maps 64x64 RGB scenes to a 16x16 latent
grid. A noise-predicting denoiser sees the noised scene latent stacked with
the encoded conditioning avatar, its downsampled alpha, and the downsampled
neutral-gray render, and cross-attends to caption tokens plus an embedded
downsample-rate token. Synthetic scenes (procedural backgrounds composited
with avatar sprites) provide training pairs where the ground-truth crop is
known exactly. Generation ends with an alpha paste of the avatar over the
decoded image.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import nncore as nn
from . import textenc
from .config import CompositorConfig
from .errors import DataError, ModelStateError, NumericError
from .posediffusion import (
    DiffusionSchedule,
    make_schedule,
    posterior_step,
    q_sample_array,
    respaced_timesteps,
)
from .render2d import load_rgba, save_rgba

LUMA = np.array([0.299, 0.587, 0.114])


# -- resampling -------------------------------------------------------------


def augment_downsample(raster: np.ndarray, w: float, f_max: float = 8.0) -> np.ndarray:
    """Blur-by-resampling augmentation: nearest-neighbor downsample by
    f = 1 + w (f_max - 1), then bilinear upsample back. w = 0 is the
    bitwise identity. Alpha is treated like the color channels."""
    if not 0.0 <= w <= 1.0:
        raise DataError(f"downsample rate w must lie in [0, 1], got {w}")
    raster = np.asarray(raster, dtype=np.float64)
    f = 1.0 + w * (f_max - 1.0)
    if f == 1.0:
        return raster.copy()
    h, w_px = raster.shape[:2]
    small = nearest_downsample(raster, max(1, int(round(h / f))),
                               max(1, int(round(w_px / f))))
    return bilinear_upsample(small, h, w_px)


def nearest_downsample(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = img.shape[:2]
    rows = np.minimum((np.floor((np.arange(out_h) + 0.5) * h / out_h)).astype(int), h - 1)
    cols = np.minimum((np.floor((np.arange(out_w) + 0.5) * w / out_w)).astype(int), w - 1)
    return img[rows][:, cols]


def bilinear_upsample(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = img.shape[:2]
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    if img.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def average_pool(img: np.ndarray, factor: int) -> np.ndarray:
    """Box-average the two spatial axes of [..., H, W, C] by `factor`."""
    *lead, h, w, c = img.shape
    if h % factor or w % factor:
        raise DataError(f"pooling factor {factor} does not divide {h}x{w}")
    shaped = img.reshape(*lead, h // factor, factor, w // factor, factor, c)
    return shaped.mean(axis=(-2, -4))


# -- autoencoder ---------------------------------------------------------------


class SceneAutoencoder:
    CHECKPOINT_PREFIX = "compositor.ae"

    def __init__(self, cfg: CompositorConfig, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        c = cfg.ae_base
        C = cfg.latent_channels
        self.store = nn.ParamStore()
        p = self.CHECKPOINT_PREFIX
        self.e1 = _conv_params(self.store, f"{p}.e1", 3, c, rng)
        self.e2 = _conv_params(self.store, f"{p}.e2", c, 2 * c, rng)
        self.e3 = _conv_params(self.store, f"{p}.e3", 2 * c, C, rng)
        self.d1 = _conv_params(self.store, f"{p}.d1", C, 2 * c, rng)
        self.d2 = _conv_params(self.store, f"{p}.d2", 2 * c, c, rng)
        self.d3 = _conv_params(self.store, f"{p}.d3", c, 3, rng)
        self.lat_mean = self.store.add(f"{p}.lat_mean", np.zeros(C), trainable=False)
        self.lat_std = self.store.add(f"{p}.lat_std", np.ones(C), trainable=False)
        self.trained = False

    def encode_t(self, x: nn.Tensor) -> nn.Tensor:
        h = nn.leaky_relu(_conv(x, self.e1, stride=2), 0.01)
        h = nn.leaky_relu(_conv(h, self.e2, stride=2), 0.01)
        return _conv(h, self.e3, stride=1)

    def decode_t(self, z: nn.Tensor) -> nn.Tensor:
        h = nn.leaky_relu(_conv(z, self.d1, stride=1), 0.01)
        h = nn.upsample2x(h)
        h = nn.leaky_relu(_conv(h, self.d2, stride=1), 0.01)
        h = nn.upsample2x(h)
        return _conv(h, self.d3, stride=1)

    def _require_trained(self):
        if not self.trained:
            raise ModelStateError("scene autoencoder is untrained")

    def encode(self, rgb: np.ndarray) -> np.ndarray:
        """[..., 64, 64, 3] image(s) -> whitened latent [..., C, 16, 16]."""
        self._require_trained()
        x = _to_nchw(rgb)
        z = self.encode_t(nn.Tensor(x)).data
        z = (z - self.lat_mean.data[None, :, None, None]) / self.lat_std.data[None, :, None, None]
        return z if np.asarray(rgb).ndim == 4 else z[0]

    def decode(self, z: np.ndarray) -> np.ndarray:
        """Whitened latent -> [..., 64, 64, 3] image clamped to [0, 1]."""
        self._require_trained()
        z = np.asarray(z, dtype=np.float64)
        batched = z.ndim == 4
        if not batched:
            z = z[None]
        raw = z * self.lat_std.data[None, :, None, None] + self.lat_mean.data[None, :, None, None]
        x = self.decode_t(nn.Tensor(raw)).data
        img = np.clip(x.transpose(0, 2, 3, 1), 0.0, 1.0)
        return img if batched else img[0]


def _conv_params(store: nn.ParamStore, name: str, cin: int, cout: int, rng,
                 k: int = 3, zero_init: bool = False):
    fan_in = cin * k * k
    if zero_init:
        w = np.zeros((cout, cin, k, k))
    else:
        w = nn.uniform_init(rng, fan_in, (cout, cin, k, k))
    return (
        store.add(f"{name}.w", w),
        store.add(f"{name}.b", np.zeros(cout)),
    )


def _conv(x, params, stride: int = 1):
    w, b = params
    return nn.conv2d(x, w, b, stride=stride, pad=w.shape[-1] // 2)


def _to_nchw(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        img = img[None]
    return img.transpose(0, 3, 1, 2)


def train_autoencoder(scenes, cfg: CompositorConfig, seed: int = 0,
                      log_every: int = 50):
    """Fit the scene autoencoder and freeze per-channel latent statistics."""
    rng = np.random.default_rng(seed)
    ae = SceneAutoencoder(cfg, rng)
    images = np.stack([_to_nchw(s.image)[0] for s in scenes])
    opt = nn.Adam(ae.store, lr=cfg.ae_lr)
    log = []
    for step in range(1, cfg.ae_steps + 1):
        idx = rng.integers(0, len(images), size=cfg.ae_batch)
        x = nn.Tensor(images[idx])
        recon = ae.decode_t(ae.encode_t(x))
        diff = recon - x
        loss = (diff * diff).mean()
        if not np.isfinite(loss.data):
            raise NumericError(f"autoencoder diverged at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % log_every == 0 or step == 1:
            log.append((step, float(loss.data)))
    # freeze latent whitening stats over the corpus
    lats = []
    for lo in range(0, len(images), 64):
        lats.append(ae.encode_t(nn.Tensor(images[lo : lo + 64])).data)
    lat = np.concatenate(lats)
    ae.lat_mean.data = lat.mean(axis=(0, 2, 3))
    ae.lat_std.data = np.maximum(lat.std(axis=(0, 2, 3)), 1e-3)
    ae.trained = True
    return ae, log


# -- conditioning ----------------------------------------------------------------


@dataclass
class ConditioningBundle:
    z_p: np.ndarray  # [C, 16, 16] encoded (augmented) avatar RGB
    alpha_lat: np.ndarray  # [1, 16, 16]
    gray_lat: np.ndarray  # [1, 16, 16]
    w: float
    text: textenc.TextEmbedding

    def __post_init__(self):
        if not 0.0 <= self.w <= 1.0:
            raise DataError(f"downsample rate w must lie in [0, 1], got {self.w}")
        if self.z_p.shape[1:] != self.alpha_lat.shape[1:] or \
                self.z_p.shape[1:] != self.gray_lat.shape[1:]:
            raise DataError("conditioning grids disagree on spatial dims")


def gray_channel(gray_rgba: np.ndarray, factor: int) -> np.ndarray:
    """Alpha-weighted luminance of the neutral render, pooled to the latent
    grid; [1, H/f, W/f]."""
    vals = (gray_rgba[..., :3] @ LUMA) * gray_rgba[..., 3]
    return average_pool(vals[..., None], factor).transpose(2, 0, 1)


def make_bundle(ae: SceneAutoencoder, avatar_rgba: np.ndarray,
                gray_rgba: np.ndarray, w: float,
                text: textenc.TextEmbedding,
                f_max: float | None = None) -> ConditioningBundle:
    f_max = ae.cfg.f_max if f_max is None else f_max
    factor = avatar_rgba.shape[0] // ae.cfg.latent_size
    augmented = augment_downsample(avatar_rgba, w, f_max)
    z_p = ae.encode(augmented[..., :3])
    alpha = average_pool(augmented[..., 3:4], factor).transpose(2, 0, 1)
    return ConditioningBundle(z_p, alpha, gray_channel(gray_rgba, factor), w, text)


def stack_channels(z_t: np.ndarray, bundle: ConditioningBundle) -> np.ndarray:
    """[z_t | z_p | alpha | gray] along channels; [2C + 2, H, W]."""
    z_t = np.asarray(z_t, dtype=np.float64)
    if z_t.shape[1:] != bundle.z_p.shape[1:]:
        raise DataError("scene latent and conditioning grids disagree")
    return np.concatenate([z_t, bundle.z_p, bundle.alpha_lat, bundle.gray_lat], axis=0)


def assemble(z_t: np.ndarray, bundle: ConditioningBundle,
             denoiser: "SceneDenoiser") -> tuple[np.ndarray, np.ndarray]:
    """Denoiser input for one item: the channel stack and the cross-attention
    context [text tokens | pooled text | projected w token]."""
    stack = stack_channels(z_t, bundle)
    ctx = denoiser.context_tokens(
        bundle.text.token_matrix[None], bundle.text.pooled[None],
        np.array([bundle.w]),
    ).data[0]
    return stack, ctx


# -- denoiser ----------------------------------------------------------------------


class SceneDenoiser:
    CHECKPOINT_PREFIX = "compositor.den"

    def __init__(self, cfg: CompositorConfig, rng=None,
                 text_dim: int = textenc.EMBED_DIM):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        self.text_dim = text_dim
        C = cfg.latent_channels
        base = cfg.den_base
        mid = 2 * base
        self.mid = mid
        self.store = nn.ParamStore()
        p = self.CHECKPOINT_PREFIX
        in_ch = 2 * C + 2
        self.c_in = _conv_params(self.store, f"{p}.c_in", in_ch, base, rng)
        self.c_down = _conv_params(self.store, f"{p}.c_down", base, mid, rng)
        self.t1 = nn.Dense(self.store, f"{p}.t1", cfg.ctx_dim, base, rng)
        self.t2 = nn.Dense(self.store, f"{p}.t2", cfg.ctx_dim, mid, rng)
        self.t3 = nn.Dense(self.store, f"{p}.t3", cfg.ctx_dim, base, rng)
        # sinusoidal w feature -> text context width
        self.w_proj = nn.Dense(self.store, f"{p}.w_proj", cfg.ctx_dim, text_dim, rng)
        self.attn_in = nn.Dense(self.store, f"{p}.attn_in", mid, text_dim, rng)
        self.attn_out = nn.Dense(self.store, f"{p}.attn_out", text_dim, mid, rng)
        self.xblocks = [
            nn.TransformerBlock(self.store, f"{p}.xblock{i}", text_dim,
                                cfg.heads, rng)
            for i in range(2)
        ]
        self.c_up = _conv_params(self.store, f"{p}.c_up", mid, base, rng)
        self.c_out = _conv_params(self.store, f"{p}.c_out", base, C, rng, zero_init=True)
        self.trained = False

    def context_tokens(self, tok_mats: np.ndarray, pooled: np.ndarray,
                       w: np.ndarray) -> nn.Tensor:
        """[B, L_max + 2, text_dim] cross-attention context, on the tape so
        the w projection trains."""
        B = tok_mats.shape[0]
        text_part = np.concatenate([tok_mats, pooled[:, None, :]], axis=1)
        w_feat = nn.sinusoidal_embed(np.asarray(w, dtype=np.float64), self.cfg.ctx_dim)
        w_tok = self.w_proj(nn.Tensor(w_feat.reshape(B, 1, self.cfg.ctx_dim)))
        return nn.concat([nn.Tensor(text_part), w_tok], axis=1)

    def forward(self, stacks: np.ndarray, t: np.ndarray, tok_mats: np.ndarray,
                pooled: np.ndarray, w: np.ndarray) -> nn.Tensor:
        """Predict noise: stacks [B, 2C+2, 16, 16] -> [B, C, 16, 16]."""
        B = stacks.shape[0]
        ctx = self.context_tokens(tok_mats, pooled, w)
        t_feat = nn.sinusoidal_embed(np.asarray(t, dtype=np.float64), self.cfg.ctx_dim)
        tf = nn.Tensor(t_feat)
        h = nn.leaky_relu(
            _conv(nn.Tensor(stacks), self.c_in)
            + self.t1(tf).reshape((B, -1, 1, 1)), 0.01
        )
        h = nn.leaky_relu(
            _conv(h, self.c_down, stride=2) + self.t2(tf).reshape((B, -1, 1, 1)), 0.01
        )
        hh, ww = h.shape[2], h.shape[3]
        tokens = h.reshape((B, self.mid, hh * ww)).transpose((0, 2, 1))
        tokens = self.attn_in(tokens)
        for block in self.xblocks:
            tokens = block(tokens, causal=False, context=ctx)
        tokens = self.attn_out(tokens)
        h = h + tokens.transpose((0, 2, 1)).reshape((B, self.mid, hh, ww))
        h = nn.upsample2x(h)
        h = nn.leaky_relu(_conv(h, self.c_up) + self.t3(tf).reshape((B, -1, 1, 1)), 0.01)
        return _conv(h, self.c_out)


# -- model wrapper -------------------------------------------------------------------


@dataclass
class CompositorModel:
    cfg: CompositorConfig
    ae: SceneAutoencoder
    denoiser: SceneDenoiser
    schedule: DiffusionSchedule
    encoder: textenc.TextEncoder

    @classmethod
    def create(cls, cfg: CompositorConfig, ae: SceneAutoencoder,
               encoder: textenc.TextEncoder, seed: int = 0) -> "CompositorModel":
        rng = np.random.default_rng(seed)
        den = SceneDenoiser(cfg, rng, text_dim=encoder.dim)
        return cls(cfg, ae, den, make_schedule(cfg.timesteps, cfg.schedule), encoder)


def save_model(model: CompositorModel, path) -> None:
    nn.checkpoint.save_stores(path, [model.ae.store, model.denoiser.store])


def load_model(path, cfg: CompositorConfig,
               encoder: textenc.TextEncoder) -> CompositorModel:
    ae = SceneAutoencoder(cfg)
    model = CompositorModel.create(cfg, ae, encoder)
    nn.checkpoint.load_into_stores(path, [ae.store, model.denoiser.store])
    ae.trained = True
    model.denoiser.trained = True
    return model


# -- synthetic scenes ------------------------------------------------------------------

SCENE_PHRASES = (
    "on a sunny beach",
    "in a green forest",
    "under a night sky",
    "in a snowy field",
    "on a city street",
    "in a sandy desert",
    "on a mountain trail",
    "in a violet dream",
)

_SCENE_COLORS = {
    # phrase -> (sky top, sky bottom, ground, accent)
    "on a sunny beach": ((0.35, 0.62, 0.90), (0.66, 0.85, 0.95), (0.87, 0.78, 0.55), (1.0, 0.92, 0.45)),
    "in a green forest": ((0.45, 0.70, 0.55), (0.65, 0.85, 0.60), (0.25, 0.45, 0.22), (0.95, 0.95, 0.75)),
    "under a night sky": ((0.05, 0.06, 0.18), (0.12, 0.14, 0.32), (0.10, 0.10, 0.16), (0.92, 0.92, 0.80)),
    "in a snowy field": ((0.60, 0.72, 0.85), (0.82, 0.88, 0.95), (0.93, 0.95, 0.98), (0.99, 0.99, 0.92)),
    "on a city street": ((0.55, 0.60, 0.70), (0.72, 0.74, 0.80), (0.35, 0.35, 0.38), (0.95, 0.80, 0.35)),
    "in a sandy desert": ((0.55, 0.70, 0.92), (0.90, 0.80, 0.60), (0.82, 0.64, 0.38), (0.99, 0.90, 0.55)),
    "on a mountain trail": ((0.50, 0.62, 0.80), (0.72, 0.78, 0.85), (0.45, 0.40, 0.34), (0.90, 0.90, 0.95)),
    "in a violet dream": ((0.30, 0.12, 0.45), (0.55, 0.30, 0.70), (0.22, 0.10, 0.35), (0.95, 0.75, 0.95)),
}


def render_background(phrase: str, size: int, rng: np.random.Generator) -> np.ndarray:
    top, bottom, ground, accent = (np.array(c) for c in _SCENE_COLORS[phrase])
    ys = np.linspace(0.0, 1.0, size)[:, None, None]
    img = top * (1 - ys) + bottom * ys
    img = np.broadcast_to(img, (size, size, 3)).copy()
    horizon = int(size * rng.uniform(0.62, 0.78))
    shade = np.linspace(1.0, 0.82, size - horizon)[:, None, None]
    img[horizon:] = ground * shade
    cx = rng.uniform(0.15, 0.85) * size
    cy = rng.uniform(0.08, 0.30) * size
    radius = rng.uniform(0.05, 0.10) * size
    yy, xx = np.mgrid[0:size, 0:size]
    disc = np.clip(radius - np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2), 0.0, 1.0)
    img = img * (1 - disc[..., None]) + accent * disc[..., None]
    return np.clip(img, 0.0, 1.0)


@dataclass
class SyntheticScene:
    image: np.ndarray  # [64, 64, 3] composited scene
    avatar: np.ndarray  # [64, 64, 4] ground-truth sprite
    gray: np.ndarray  # [64, 64, 4] neutral render of the same pose
    caption: str


def generate_scenes(n: int, seed: int, skeleton, camera, random_styles=True):
    """Deterministic scene corpus built on the pose generator."""
    from . import datagen
    from .kinematics import forward_kinematics
    from .render2d import AvatarStyle, render_avatar, render_gray_body

    records = datagen.generate(n, seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 911]))
    scenes = []
    for rec in records:
        states = forward_kinematics(skeleton, rec.to_pose())
        bones = skeleton.joint_count - 1
        style = (AvatarStyle.random(bones, rng) if random_styles
                 else AvatarStyle.gray(bones))
        avatar = render_avatar(skeleton, states, style, camera)
        gray = render_gray_body(skeleton, states, camera,
                                style.thickness, style.joint_radius)
        phrase = SCENE_PHRASES[rng.integers(len(SCENE_PHRASES))]
        bg = render_background(phrase, camera.width, rng)
        alpha = avatar[..., 3:4]
        image = alpha * avatar[..., :3] + (1 - alpha) * bg
        scenes.append(SyntheticScene(image, avatar, gray, f"{rec.caption} {phrase}"))
    return scenes


def save_scene_corpus(dirpath, scenes) -> None:
    """scene_%06d.rgba (RGB = composite, A = avatar alpha) + caption sidecar."""
    os.makedirs(dirpath, exist_ok=True)
    for i, s in enumerate(scenes):
        rgba = np.concatenate([s.image, s.avatar[..., 3:4]], axis=-1)
        save_rgba(os.path.join(dirpath, f"scene_{i:06d}.rgba"), rgba)
        with open(os.path.join(dirpath, f"scene_{i:06d}.txt"), "w",
                  encoding="utf-8") as fh:
            fh.write(s.caption + "\n")


def load_scene_corpus(dirpath) -> list[tuple[np.ndarray, str]]:
    """Composited RGBA images and captions, in index order."""
    out = []
    i = 0
    while True:
        img_path = os.path.join(dirpath, f"scene_{i:06d}.rgba")
        txt_path = os.path.join(dirpath, f"scene_{i:06d}.txt")
        if not os.path.exists(img_path):
            break
        with open(txt_path, "r", encoding="utf-8") as fh:
            caption = fh.read().strip()
        out.append((load_rgba(img_path), caption))
        i += 1
    return out


# -- training --------------------------------------------------------------------------


def train_denoiser(scenes, ae: SceneAutoencoder, encoder: textenc.TextEncoder,
                   cfg: CompositorConfig, seed: int = 0, log_every: int = 50):
    """Noise-prediction training with per-item random downsample rates."""
    if not ae.trained:
        raise ModelStateError("train the autoencoder before the denoiser")
    rng = np.random.default_rng(seed)
    model = CompositorModel.create(cfg, ae, encoder, seed=seed)
    z0 = np.stack([ae.encode(s.image) for s in scenes])
    ids = np.stack([textenc.tokenize(s.caption, encoder.vocab) for s in scenes])
    tok_mats, pooled = encoder.embed_batch(ids)
    factor = scenes[0].avatar.shape[0] // cfg.latent_size
    gray_lat = np.stack([gray_channel(s.gray, factor) for s in scenes])
    opt = nn.Adam(model.denoiser.store, lr=cfg.lr)
    log = []
    for step in range(1, cfg.steps + 1):
        idx = rng.integers(0, len(scenes), size=cfg.batch)
        loss = train_step(model, opt, scenes, z0, gray_lat, tok_mats, pooled,
                          idx, rng)
        if step % log_every == 0 or step == 1:
            log.append((step, loss))
    model.denoiser.trained = True
    return model, log


def train_step(model: CompositorModel, opt: nn.Adam, scenes, z0: np.ndarray,
               gray_lat: np.ndarray, tok_mats: np.ndarray, pooled: np.ndarray,
               idx: np.ndarray, rng: np.random.Generator) -> float:
    if len(idx) == 0:
        raise DataError("empty compositor batch")
    cfg = model.cfg
    B = len(idx)
    factor = scenes[0].avatar.shape[0] // cfg.latent_size
    t = rng.integers(1, model.schedule.T + 1, size=B)
    noise = rng.standard_normal(z0[idx].shape)
    z_t = q_sample_array(model.schedule, z0[idx], t, noise)
    w = rng.uniform(0.0, 1.0, size=B)
    augmented = np.stack(
        [augment_downsample(scenes[i].avatar, w[r], cfg.f_max)
         for r, i in enumerate(idx)]
    )
    z_p = model.ae.encode(augmented[..., :3])
    alpha_lat = average_pool(augmented[..., 3:4], factor).transpose(0, 3, 1, 2)
    stacks = np.concatenate([z_t, z_p, alpha_lat, gray_lat[idx]], axis=1)
    eps_hat = model.denoiser.forward(stacks, t, tok_mats[idx], pooled[idx], w)
    diff = eps_hat - nn.Tensor(noise)
    loss = (diff * diff).mean()
    if not np.isfinite(loss.data):
        raise NumericError("compositor training loss is non-finite")
    opt.zero_grad()
    loss.backward()
    opt.step()
    return float(loss.data)


# -- generation ---------------------------------------------------------------------------


def generate(model: CompositorModel, bundle: ConditioningBundle,
             rng: np.random.Generator, steps: int | None = None) -> np.ndarray:
    """Ancestral latent sampling conditioned on the bundle; returns the
    decoded [64, 64, 3] image (pre paste-back), clamped to [0, 1]."""
    if not model.denoiser.trained:
        raise ModelStateError("compositor denoiser is untrained")
    sched = model.schedule
    cfg = model.cfg
    ts = respaced_timesteps(sched.T, steps if steps is not None
                            else (cfg.sample_steps or sched.T))
    z = rng.standard_normal((cfg.latent_channels, cfg.latent_size, cfg.latent_size))
    tok = bundle.text.token_matrix[None]
    pooled = bundle.text.pooled[None]
    w = np.array([bundle.w])
    for i, t in enumerate(ts):
        prev = int(ts[i + 1]) if i + 1 < len(ts) else 0
        stack = stack_channels(z, bundle)
        eps = model.denoiser.forward(stack[None], np.array([t]), tok, pooled, w).data[0]
        sq_ab = sched.sqrt_alpha_bar(int(t))
        sq_om = sched.sqrt_one_minus(int(t))
        z0_hat = np.clip((z - sq_om * eps) / sq_ab, -4.0, 4.0)
        z = posterior_step(sched, z, z0_hat, int(t), prev, rng)
    if not np.isfinite(z).all():
        raise NumericError("compositor sampling produced non-finite latents")
    return model.ae.decode(z)


def paste_back(generated: np.ndarray, avatar_rgba: np.ndarray) -> np.ndarray:
    """out = alpha * avatar + (1 - alpha) * generated, per pixel."""
    generated = np.asarray(generated, dtype=np.float64)
    avatar_rgba = np.asarray(avatar_rgba, dtype=np.float64)
    if generated.shape[:2] != avatar_rgba.shape[:2] or avatar_rgba.shape[-1] != 4:
        raise DataError(
            f"paste dims disagree: {generated.shape} vs {avatar_rgba.shape}"
        )
    alpha = avatar_rgba[..., 3:4]
    return alpha * avatar_rgba[..., :3] + (1.0 - alpha) * generated
