"""Convolutional encoder/decoder around a per-location LISTA sparse coder."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict, fields

import numpy as np

from . import autodiff as ad
from .dictionary import Dictionary, build_dct_dictionary
from .errors import ConfigError, DimensionError, NumericalError
from .metrics import hoyer_sparsity_batch
from .solvers import ListaParams, lista_batch_forward, lista_init_from_dictionary


@dataclass
class ModelConfig:
    image_size: int = 32
    channels: int = 1
    downsample_blocks: int = 1
    latent_dim: int = 16
    dict_atoms: int = 64
    lista_steps: int = 8
    alpha: float = 1.0
    base_channels: int = 16
    mid_channels: int = 32
    use_nonlocal: bool = False
    norm_groups: int = 4
    out_init_scale: float = 0.1  # shrinks the last decoder kernel at init

    def __post_init__(self):
        for f in ("image_size", "channels", "downsample_blocks", "latent_dim", "dict_atoms",
                  "lista_steps", "base_channels", "mid_channels", "norm_groups"):
            if getattr(self, f) < 1:
                raise ConfigError(f"{f} must be >= 1, got {getattr(self, f)}")
        if self.image_size % (2 ** self.downsample_blocks):
            raise ConfigError(
                f"image_size {self.image_size} not divisible by 2^{self.downsample_blocks}")
        for c in (self.base_channels, self.mid_channels):
            if c % self.norm_groups:
                raise ConfigError(f"{c} channels not divisible by norm_groups={self.norm_groups}")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.out_init_scale <= 0:
            raise ConfigError("out_init_scale must be > 0")

    @property
    def latent_size(self) -> int:
        return self.image_size // (2 ** self.downsample_blocks)

    def level_channels(self, level: int) -> int:
        return self.base_channels if level == 0 else self.mid_channels

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class LatentGrid:
    values: ad.Tensor  # h x w x n
    codes: ad.Tensor | None = None  # h x w x K


@dataclass
class LossReport:
    rec: float
    latent: float
    total: float
    sparsity_hoyer: float


# -------------------------------------------------------------- layer plan
# Each entry: (kind, name, in_channels, out_channels)


def encoder_plan(cfg: ModelConfig):
    plan = [("conv3", "enc.conv_in", cfg.channels, cfg.base_channels)]
    for i in range(cfg.downsample_blocks):
        c = cfg.level_channels(i)
        plan.append(("res", f"enc.down{i}.res", c, c))
        plan.append(("down", f"enc.down{i}.conv", c, cfg.level_channels(i + 1)))
    c = cfg.level_channels(cfg.downsample_blocks)
    plan.append(("res", "enc.mid.res1", c, c))
    if cfg.use_nonlocal:
        plan.append(("attn", "enc.mid.attn", c, c))
    plan.append(("res", "enc.mid.res2", c, c))
    plan.append(("norm", "enc.norm_out", c, c))
    plan.append(("swish", "", c, c))
    plan.append(("conv3", "enc.conv_out", c, cfg.latent_dim))
    return plan


def decoder_plan(cfg: ModelConfig):
    c = cfg.level_channels(cfg.downsample_blocks)
    plan = [("conv3", "dec.conv_in", cfg.latent_dim, c)]
    plan.append(("res", "dec.mid.res1", c, c))
    if cfg.use_nonlocal:
        plan.append(("attn", "dec.mid.attn", c, c))
    plan.append(("res", "dec.mid.res2", c, c))
    for i in reversed(range(cfg.downsample_blocks)):
        c_in = cfg.level_channels(i + 1)
        plan.append(("res", f"dec.up{i}.res", c_in, c_in))
        plan.append(("up", f"dec.up{i}.conv", c_in, cfg.level_channels(i)))
    c = cfg.base_channels
    plan.append(("norm", "dec.norm_out", c, c))
    plan.append(("swish", "", c, c))
    plan.append(("conv3", "dec.conv_out", c, cfg.channels))
    return plan


def _param_shapes(kind, name, cin, cout):
    if kind in ("conv3", "down", "up"):
        return {f"{name}.w": (cout, cin, 3, 3), f"{name}.b": (cout,)}
    if kind == "norm":
        return {f"{name}.g": (cin,), f"{name}.beta": (cin,)}
    if kind == "res":
        shapes = {}
        shapes.update(_param_shapes("norm", f"{name}.norm1", cin, cin))
        shapes.update(_param_shapes("conv3", f"{name}.conv1", cin, cout))
        shapes.update(_param_shapes("norm", f"{name}.norm2", cout, cout))
        shapes.update(_param_shapes("conv3", f"{name}.conv2", cout, cout))
        if cin != cout:
            shapes.update({f"{name}.skip.w": (cout, cin, 1, 1), f"{name}.skip.b": (cout,)})
        return shapes
    if kind == "attn":
        shapes = _param_shapes("norm", f"{name}.norm", cin, cin)
        for part in ("q", "k", "v", "proj"):
            shapes.update({f"{name}.{part}.w": (cin, cin, 1, 1), f"{name}.{part}.b": (cin,)})
        return shapes
    return {}


def weight_shapes(cfg: ModelConfig):
    shapes = {}
    for layer in encoder_plan(cfg) + decoder_plan(cfg):
        shapes.update(_param_shapes(*layer))
    return shapes


def init_weights(cfg: ModelConfig, seed: int = 0, dtype=np.float32):
    """He-style uniform fan-in init for kernels, unit gains, zero biases.

    The decoder's output kernel is scaled by ``cfg.out_init_scale`` so early
    reconstructions sit near the bias instead of swinging far outside [0, 1].
    """
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in weight_shapes(cfg).items():
        if name.endswith(".w"):
            fan_in = int(np.prod(shape[1:]))
            bound = math.sqrt(6.0 / fan_in)
            arr = rng.uniform(-bound, bound, size=shape)
            if name == "dec.conv_out.w":
                arr *= cfg.out_init_scale
        elif name.endswith(".g"):
            arr = np.ones(shape)
        else:
            arr = np.zeros(shape)
        weights[name] = ad.Tensor(arr, requires_grad=True, dtype=dtype, name=name)
    return weights


def zero_weights(cfg: ModelConfig, dtype=np.float64):
    return {name: ad.Tensor(np.zeros(shape), requires_grad=True, dtype=dtype, name=name)
            for name, shape in weight_shapes(cfg).items()}


# ------------------------------------------------------------------ layers


def _conv(w, name, x, stride=1):
    k = w[f"{name}.w"]
    pad = k.shape[-1] // 2
    y = ad.conv2d(x, k, stride=stride, pad=pad, channels_last=True)
    return ad.add(y, w[f"{name}.b"])


def _norm(w, name, x, groups):
    return ad.group_norm(x, groups, w[f"{name}.g"], w[f"{name}.beta"], channels_last=True)


def _res(w, name, x, groups):
    h = _conv(w, f"{name}.conv1", ad.swish(_norm(w, f"{name}.norm1", x, groups)))
    h = _conv(w, f"{name}.conv2", ad.swish(_norm(w, f"{name}.norm2", h, groups)))
    skip = _conv(w, f"{name}.skip", x) if f"{name}.skip.w" in w else x
    return ad.add(skip, h)


def _attn(w, name, x, groups):
    b, hh, ww, c = x.shape
    m = hh * ww
    h = _norm(w, f"{name}.norm", x, groups)
    q = ad.reshape(_conv(w, f"{name}.q", h), (b, m, c))
    k = ad.reshape(_conv(w, f"{name}.k", h), (b, m, c))
    v = ad.reshape(_conv(w, f"{name}.v", h), (b, m, c))
    scores = ad.mul(ad.bmm(q, ad.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(c))
    att = ad.softmax(scores, axis=-1)  # b x query x key
    out = _conv(w, f"{name}.proj", ad.reshape(ad.bmm(att, v), (b, hh, ww, c)))
    return ad.add(x, out)


def _run(plan, w, x, groups):
    for kind, name, _, _ in plan:
        if kind == "conv3":
            x = _conv(w, name, x)
        elif kind == "down":
            x = _conv(w, name, x, stride=2)
        elif kind == "up":
            x = _conv(w, name, ad.upsample_nearest2x(x, channels_last=True))
        elif kind == "res":
            x = _res(w, name, x, groups)
        elif kind == "attn":
            x = _attn(w, name, x, groups)
        elif kind == "norm":
            x = _norm(w, name, x, groups)
        elif kind == "swish":
            x = ad.swish(x)
    return x


def _as_tensor(x, like):
    if isinstance(x, ad.Tensor):
        return x
    return ad.Tensor(x, dtype=like.dtype)


def encode_batch(cfg: ModelConfig, weights, images, any_size: bool = False) -> ad.Tensor:
    """B x C x H x W images -> B x h x w x n latents (channels last).

    With ``any_size`` the encoder runs on any H, W divisible by the downsampling
    factor; it is fully convolutional, only the decoder is tied to image_size.
    """
    images = _as_tensor(images, weights["enc.conv_in.w"])
    want = (cfg.channels, cfg.image_size, cfg.image_size)
    if any_size:
        f = 2 ** cfg.downsample_blocks
        ok = images.ndim == 4 and images.shape[1] == cfg.channels \
            and images.shape[2] % f == 0 and images.shape[3] % f == 0
        if not ok:
            raise DimensionError(f"encoder expects B x {cfg.channels} x H x W with H, W divisible by {f}, "
                                 f"got {images.shape}")
    elif images.ndim != 4 or images.shape[1:] != want:
        raise DimensionError(f"encoder expects B x {want}, got {images.shape}")
    x = ad.transpose(images, (0, 2, 3, 1))
    return _run(encoder_plan(cfg), weights, x, cfg.norm_groups)


def decode_batch(cfg: ModelConfig, weights, latents) -> ad.Tensor:
    """B x h x w x n latents -> B x C x H x W images (unclamped)."""
    latents = _as_tensor(latents, weights["dec.conv_in.w"])
    s = cfg.latent_size
    if latents.ndim != 4 or latents.shape[1:] != (s, s, cfg.latent_dim):
        raise DimensionError(f"decoder expects B x {(s, s, cfg.latent_dim)}, got {latents.shape}")
    out = _run(decoder_plan(cfg), weights, latents, cfg.norm_groups)
    return ad.transpose(out, (0, 3, 1, 2))


def encode(cfg: ModelConfig, weights, image) -> LatentGrid:
    image = _as_tensor(image, weights["enc.conv_in.w"])
    if image.ndim != 3:
        raise DimensionError(f"encode expects C x H x W, got {image.shape}")
    z = encode_batch(cfg, weights, ad.reshape(image, (1,) + image.shape))
    return LatentGrid(values=ad.reshape(z, z.shape[1:]))


def decode(cfg: ModelConfig, weights, latents) -> ad.Tensor:
    latents = _as_tensor(latents, weights["dec.conv_in.w"])
    if latents.ndim != 3:
        raise DimensionError(f"decode expects h x w x n, got {latents.shape}")
    out = decode_batch(cfg, weights, ad.reshape(latents, (1,) + latents.shape))
    return ad.reshape(out, out.shape[1:])


def sparse_code_grid(latents: LatentGrid, params: ListaParams) -> LatentGrid:
    h, w, n = latents.values.shape
    rows = ad.reshape(latents.values, (h * w, n))
    codes = lista_batch_forward(params, rows)
    return LatentGrid(values=latents.values, codes=ad.reshape(codes, (h, w, params.K)))


def dictionary_tensor(dictionary: Dictionary, dtype) -> ad.Tensor:
    """D^T as a constant (K x n) tensor; it never receives gradient."""
    return ad.Tensor(dictionary.atoms.T, dtype=dtype)


def reconstruct_latents(codes: ad.Tensor, dictionary: Dictionary, dict_t: ad.Tensor | None = None) -> ad.Tensor:
    """E~ = Z D^T applied over the trailing axis of ``codes`` (... x K -> ... x n)."""
    if codes.shape[-1] != dictionary.K:
        raise DimensionError(f"codes trailing dim {codes.shape[-1]} != dictionary atoms {dictionary.K}")
    if dict_t is None:
        dict_t = dictionary_tensor(dictionary, codes.dtype)
    lead = codes.shape[:-1]
    flat = ad.reshape(codes, (-1, dictionary.K))
    return ad.reshape(ad.matmul(flat, dict_t), lead + (dictionary.n,))


def _finite(t: ad.Tensor, component: str):
    if not np.all(np.isfinite(t.data)):
        raise NumericalError(f"non-finite value in {component}")


def compute_losses(image, reconstruction, latents, codes, dictionary: Dictionary, alpha, h, w,
                   recon_latents=None, dict_t=None):
    """Two-level loss. All tensors carry a leading batch axis; returns (LossReport, total tensor).

    ``latents``/``codes`` are (B*h*w) x n and (B*h*w) x K rows. Squared norms are
    sums within a sample, averaged over the batch; the 1/(h*w) weight is applied
    once, to the latent term. ``total`` is accumulated in float64.
    """
    if image.shape != reconstruction.shape:
        raise DimensionError(f"image {image.shape} vs reconstruction {reconstruction.shape}")
    batch = image.shape[0]
    if latents.shape[0] != batch * h * w or codes.shape[0] != latents.shape[0]:
        raise DimensionError(f"latent rows {latents.shape[0]} / codes {codes.shape[0]} != {batch}*{h}*{w}")
    if recon_latents is None:
        recon_latents = reconstruct_latents(codes, dictionary, dict_t)
    for t, comp in ((reconstruction, "reconstruction"), (latents, "latents"), (codes, "codes")):
        _finite(t, comp)
    inv_b = 1.0 / batch
    rec = ad.mul(ad.sum_all(ad.square(ad.sub(reconstruction, image))), inv_b)
    fit = ad.sum_all(ad.square(ad.sub(latents, recon_latents)))
    l1 = ad.sum_all(ad.abs_(codes))
    latent = ad.mul(ad.add(fit, ad.mul(l1, float(alpha))), inv_b)
    total = ad.add(ad.astype(rec, np.float64), ad.mul(ad.astype(latent, np.float64), 1.0 / (h * w)))
    for t, comp in ((rec, "L_rec"), (latent, "L_latent"), (total, "total")):
        _finite(t, comp)
    report = LossReport(
        rec=float(rec.data.astype(np.float64).item()),
        latent=float(latent.data.astype(np.float64).item()),
        total=float(total.data.item()),
        sparsity_hoyer=float(hoyer_sparsity_batch(codes.data).mean()),
    )
    return report, total


# ------------------------------------------------------------------- model


@dataclass
class ForwardResult:
    latents: ad.Tensor  # (B*h*w) x n
    codes: ad.Tensor  # (B*h*w) x K
    recon_latents: ad.Tensor  # (B*h*w) x n
    reconstruction: ad.Tensor  # B x C x H x W


class SCVAE:
    """Encoder, LISTA coder, frozen dictionary and decoder bundled together."""

    def __init__(self, config: ModelConfig, weights, lista: ListaParams, dictionary: Dictionary):
        self.config = config
        self.weights = weights
        self.lista = lista
        self.dictionary = dictionary
        dtype = next(iter(weights.values())).dtype
        self.dtype = dtype
        self._dict_t = dictionary_tensor(dictionary, dtype)

    @classmethod
    def create(cls, config: ModelConfig, seed: int = 0, dtype=np.float32, dictionary=None):
        if dictionary is None:
            dictionary = build_dct_dictionary(config.latent_dim, config.dict_atoms)
        weights = init_weights(config, seed, dtype)
        lista = lista_init_from_dictionary(dictionary, config.alpha, config.lista_steps, dtype=dtype)
        return cls(config, weights, lista, dictionary)

    def parameters(self):
        params = dict(self.weights)
        params.update(self.lista.tensors())
        return params

    def zero_grad(self):
        for t in self.parameters().values():
            t.grad = None

    def to_rows(self, z):
        b, h, w, n = z.shape
        return ad.reshape(z, (b * h * w, n))

    def from_rows(self, rows, batch):
        s = self.config.latent_size
        return ad.reshape(rows, (batch, s, s, rows.shape[1]))

    def encode_codes(self, images):
        """Latent rows and their sparse codes for a batch of images."""
        images = _as_tensor(images, self.weights["enc.conv_in.w"])
        rows = self.to_rows(encode_batch(self.config, self.weights, images))
        return rows, lista_batch_forward(self.lista, rows)

    def decode_codes(self, codes, batch):
        rec_rows = reconstruct_latents(codes, self.dictionary, self._dict_t)
        return rec_rows, decode_batch(self.config, self.weights, self.from_rows(rec_rows, batch))

    def forward(self, images) -> ForwardResult:
        images = _as_tensor(images, self.weights["enc.conv_in.w"])
        rows, codes = self.encode_codes(images)
        rec_rows, out = self.decode_codes(codes, images.shape[0])
        return ForwardResult(rows, codes, rec_rows, out)

    def loss(self, images):
        images = _as_tensor(images, self.weights["enc.conv_in.w"])
        fwd = self.forward(images)
        s = self.config.latent_size
        report, total = compute_losses(images, fwd.reconstruction, fwd.latents, fwd.codes,
                                       self.dictionary, self.config.alpha, s, s,
                                       recon_latents=fwd.recon_latents)
        return report, total, fwd

    def reconstruct(self, images) -> np.ndarray:
        """Clamped [0, 1] reconstructions, no tape."""
        return np.clip(self.forward(images).reconstruction.data, 0.0, 1.0)

    def codes_grid(self, image, context: int = 0) -> np.ndarray:
        """h x w x K sparse codes of one C x H x W image.

        ``context`` > 0 mirrors that many latent cells of image around the border
        before encoding and crops them off again, so border cells see image
        content instead of zero padding.
        """
        img = np.asarray(image)
        if context < 0:
            raise ConfigError(f"context must be >= 0, got {context}")
        if context == 0:
            _, codes = self.encode_codes(img[None])
            s = self.config.latent_size
            return codes.data.reshape(s, s, -1)
        if img.ndim != 3:
            raise DimensionError(f"codes_grid expects C x H x W, got {img.shape}")
        pad = context * 2 ** self.config.downsample_blocks
        if pad >= min(img.shape[1:]):
            raise ConfigError(f"context of {pad} px needs an image larger than {img.shape[1:]}")
        big = np.pad(img, ((0, 0), (pad, pad), (pad, pad)), mode="reflect")[None]
        z = encode_batch(self.config, self.weights, _as_tensor(big, self.weights["enc.conv_in.w"]),
                         any_size=True)
        _, h, w, _ = z.shape
        codes = lista_batch_forward(self.lista, self.to_rows(z)).data.reshape(h, w, -1)
        return codes[context:h - context, context:w - context]
