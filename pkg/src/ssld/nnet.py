"""Model stack: CNN encoder, Conformer and cross-modal Conformer blocks, the
multi-track output head, Adam training with the staged LR decay, and
bit-exact checkpointing.

Everything runs on the autodiff Tensors from :mod:`ssld.autodiff`; float64 is
used for tests/gradchecks, float32 for the fast CLI path.
"""

from __future__ import annotations

import json
import zipfile
from dataclasses import asdict, dataclass

import numpy as np

from . import accddoa, audio_io
from . import autodiff as ad
from .autodiff import Tensor
from .types import N_TRACKS, EmbeddingFixture


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""


@dataclass
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    conv_kernel: int = 15
    seld_conformer_layers: int = 4
    audio_cmc_layers: int = 1
    av_cmc_layers: int = 2
    cnn_channels: tuple[int, ...] = (16, 32, 64, 64)
    n_tracks: int = N_TRACKS
    n_classes: int = 13
    ff_mult: int = 4
    clap_dim: int = 512
    visual_dim: int = 768
    audio_only: bool = False
    dtype: str = "float64"

    def __post_init__(self):
        self.cnn_channels = tuple(self.cnn_channels)
        if self.d_model % 2:
            raise ValueError(
                f"d_model must be even for the sinusoidal positions, "
                f"got {self.d_model}")
        if self.d_model % self.n_heads:
            raise ValueError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.conv_kernel % 2 == 0:
            raise ValueError(f"conv_kernel must be odd, got {self.conv_kernel}")
        if len(self.cnn_channels) != 4:
            raise ValueError("cnn_channels must list 4 block widths")
        if self.cnn_channels[-1] != self.d_model:
            raise ValueError(
                f"last CNN width {self.cnn_channels[-1]} must equal d_model "
                f"{self.d_model}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


def toy_config(**overrides) -> ModelConfig:
    return ModelConfig(**overrides)


def full_config(**overrides) -> ModelConfig:
    base = dict(d_model=512, n_heads=8, conv_kernel=51,
                cnn_channels=(64, 128, 256, 512))
    base.update(overrides)
    return ModelConfig(**base)


# ---------------------------------------------------------------------------
# module machinery

class Module:
    """Tiny module base: parameters and buffers are found reflectively
    (sorted attribute order, so naming is stable for checkpoints)."""

    training = True

    def _walk(self):
        for name in sorted(vars(self)):
            val = vars(self)[name]
            if isinstance(val, (Module, Tensor, np.ndarray)):
                yield name, val
            elif isinstance(val, (list, tuple)) and val and all(
                    isinstance(v, Module) for v in val):
                for i, v in enumerate(val):
                    yield f"{name}.{i}", v

    def parameters(self) -> list[Tensor]:
        params = []
        for _, val in self._walk():
            if isinstance(val, Tensor) and val.requires_grad:
                params.append(val)
            elif isinstance(val, Module):
                params.extend(val.parameters())
        return params

    def state_dict(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for name, val in self._walk():
            if isinstance(val, Tensor) and val.requires_grad:
                out[prefix + name] = val.data
            elif isinstance(val, np.ndarray):
                out[prefix + name] = val
            elif isinstance(val, Module):
                out.update(val.state_dict(prefix + name + "."))
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = self.state_dict()
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise ValueError(
                f"state dict mismatch: missing {missing}, unexpected {extra}")
        for name, target in own.items():
            src = state[name]
            if src.shape != target.shape:
                raise ValueError(
                    f"{name}: shape {src.shape} != expected {target.shape}")
            target[...] = src.astype(target.dtype)

    def train(self, flag: bool = True):
        self.training = flag
        for _, val in self._walk():
            if isinstance(val, Module):
                val.train(flag)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


class Linear(Module):
    def __init__(self, d_in, d_out, rng, dtype, bias=True):
        scale = 1.0 / np.sqrt(d_in)
        self.w = Tensor(rng.uniform(-scale, scale, size=(d_in, d_out))
                        .astype(dtype), requires_grad=True)
        self.b = (Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)
                  if bias else None)

    def __call__(self, x):
        return ad.linear(x, self.w, self.b)


class LayerNorm(Module):
    def __init__(self, d, dtype):
        self.gamma = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return ad.layer_norm(x, self.gamma, self.beta)


class BatchNorm(Module):
    def __init__(self, c, dtype, channel_axis=-1):
        self.gamma = Tensor(np.ones(c, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)
        self._axis = channel_axis

    def __call__(self, x):
        return ad.batch_norm(x, self.gamma, self.beta, self.running_mean,
                             self.running_var, training=self.training,
                             channel_axis=self._axis)


class Conv2d(Module):
    """3x3 (or any odd) same-padded conv without bias; BN always follows."""

    def __init__(self, c_in, c_out, rng, dtype, kernel=3):
        scale = np.sqrt(2.0 / (c_in * kernel * kernel))
        self.w = Tensor(rng.normal(0.0, scale, size=(c_out, c_in, kernel, kernel))
                        .astype(dtype), requires_grad=True)

    def __call__(self, x):
        return ad.conv2d(x, self.w)


class DepthwiseConv1d(Module):
    def __init__(self, c, kernel, rng, dtype):
        scale = 1.0 / np.sqrt(kernel)
        self.w = Tensor(rng.uniform(-scale, scale, size=(c, kernel))
                        .astype(dtype), requires_grad=True)

    def __call__(self, x):
        return ad.depthwise_conv1d(x, self.w)


class FeedForward(Module):
    """Pre-norm feed-forward: LN -> expand -> swish -> project back."""

    def __init__(self, d, mult, rng, dtype):
        self.ln = LayerNorm(d, dtype)
        self.lin1 = Linear(d, mult * d, rng, dtype)
        self.lin2 = Linear(mult * d, d, rng, dtype)

    def __call__(self, x):
        return self.lin2(ad.swish(self.lin1(self.ln(x))))


class MultiHeadAttention(Module):
    """Pre-norm multi-head attention; queries and keys/values may come from
    different streams (cross-attention). Projections carry no bias so that a
    zeroed value projection makes the whole branch an exact no-op."""

    def __init__(self, d, n_heads, rng, dtype, cross=False):
        self.n_heads = n_heads
        self.ln_q = LayerNorm(d, dtype)
        self.ln_kv = LayerNorm(d, dtype) if cross else None
        self.wq = Linear(d, d, rng, dtype, bias=False)
        self.wk = Linear(d, d, rng, dtype, bias=False)
        self.wv = Linear(d, d, rng, dtype, bias=False)
        self.wo = Linear(d, d, rng, dtype, bias=False)

    def _split(self, x):
        b, t, d = x.shape
        h = self.n_heads
        return x.reshape(b, t, h, d // h).transpose(0, 2, 1, 3)

    def __call__(self, q_in, kv_in=None):
        if kv_in is None:
            q_src = kv_src = self.ln_q(q_in)
        else:
            q_src = self.ln_q(q_in)
            kv_src = self.ln_kv(kv_in)
        q = self._split(self.wq(q_src))
        k = self._split(self.wk(kv_src))
        v = self._split(self.wv(kv_src))
        out = ad.scaled_dot_attention(q, k, v)  # (B,h,Tq,dk)
        b, h, t, dk = out.shape
        return self.wo(out.transpose(0, 2, 1, 3).reshape(b, t, h * dk))


class ConvModule(Module):
    """Conformer convolution module: pointwise+GLU, depthwise along time,
    BN, swish, pointwise."""

    def __init__(self, d, kernel, rng, dtype):
        self.ln = LayerNorm(d, dtype)
        self.pw1 = Linear(d, 2 * d, rng, dtype)
        self.dw = DepthwiseConv1d(d, kernel, rng, dtype)
        self.bn = BatchNorm(d, dtype, channel_axis=-1)
        self.pw2 = Linear(d, d, rng, dtype)

    def __call__(self, x):
        h = ad.glu(self.pw1(self.ln(x)))
        h = self.bn(self.dw(h))
        return self.pw2(ad.swish(h))


class ConformerBlock(Module):
    """Macaron block: half-FFN, self-attention, conv module, half-FFN, LN."""

    def __init__(self, d, n_heads, kernel, ff_mult, rng, dtype):
        self.ff1 = FeedForward(d, ff_mult, rng, dtype)
        self.attn = MultiHeadAttention(d, n_heads, rng, dtype)
        self.conv = ConvModule(d, kernel, rng, dtype)
        self.ff2 = FeedForward(d, ff_mult, rng, dtype)
        self.ln_out = LayerNorm(d, dtype)

    def __call__(self, x):
        x = x + 0.5 * self.ff1(x)
        x = x + self.attn(x)
        x = x + self.conv(x)
        x = x + 0.5 * self.ff2(x)
        return self.ln_out(x)


class CrossModalConformerBlock(Module):
    """Conformer block whose attention draws queries from the alpha stream
    and keys/values from a beta stream; each modality first passes its own
    half feed-forward. Only the alpha stream continues through the conv
    module and output half-FFN."""

    def __init__(self, d, n_heads, kernel, ff_mult, rng, dtype):
        self.ff_alpha = FeedForward(d, ff_mult, rng, dtype)
        self.ff_beta = FeedForward(d, ff_mult, rng, dtype)
        self.attn = MultiHeadAttention(d, n_heads, rng, dtype, cross=True)
        self.conv = ConvModule(d, kernel, rng, dtype)
        self.ff2 = FeedForward(d, ff_mult, rng, dtype)
        self.ln_out = LayerNorm(d, dtype)

    def __call__(self, alpha, beta):
        a = alpha + 0.5 * self.ff_alpha(alpha)
        b = beta + 0.5 * self.ff_beta(beta)
        a = a + self.attn(a, b)
        a = a + self.conv(a)
        a = a + 0.5 * self.ff2(a)
        return self.ln_out(a)


class CnnBlock(Module):
    """Two 3x3 convs with BN/ReLU, a residual shortcut (1x1-projected when
    the width changes), then 2x2 average pooling."""

    def __init__(self, c_in, c_out, rng, dtype):
        self.conv1 = Conv2d(c_in, c_out, rng, dtype)
        self.bn1 = BatchNorm(c_out, dtype, channel_axis=1)
        self.conv2 = Conv2d(c_out, c_out, rng, dtype)
        self.bn2 = BatchNorm(c_out, dtype, channel_axis=1)
        self.shortcut = (Conv2d(c_in, c_out, rng, dtype, kernel=1)
                         if c_in != c_out else None)

    def __call__(self, x):
        h = ad.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        s = self.shortcut(x) if self.shortcut is not None else x
        return ad.avg_pool2d(ad.relu(h + s))


class CnnEncoder(Module):
    """Four residual blocks halving time and frequency each, then a mean over
    the frequency axis: (B, 4, T, F) -> (B, T/16, d_model)."""

    def __init__(self, in_channels, channels, rng, dtype):
        widths = [in_channels, *channels]
        self.blocks = [CnnBlock(widths[i], widths[i + 1], rng, dtype)
                       for i in range(4)]

    def __call__(self, x):
        b, c, t, f = x.shape
        if t % 16 or f % 16:
            raise ValueError(
                f"time and frequency must be divisible by 16, got input {x.shape}")
        for block in self.blocks:
            x = block(x)
        return x.mean(axis=3).transpose(0, 2, 1)  # (B, T/16, d)


def sinusoidal_positions(n: int, d: int, dtype=np.float64) -> np.ndarray:
    """Standard absolute sinusoidal position table, shape (n, d)."""
    pos = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(d // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / d)
    pe = np.zeros((n, d), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe.astype(dtype)


class SeldModel(Module):
    """Full stack: CNN encoder -> Conformer stack (with sinusoidal positions
    added once at its input) -> cross-modal fusion with the audio fixture ->
    visual fusion (or plain Conformer blocks of equal depth in audio-only
    mode) -> two-layer head emitting (n_tracks, n_classes, 4) per frame."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        dt = config.np_dtype
        d = config.d_model
        self.cnn = CnnEncoder(4, config.cnn_channels, rng, dt)
        self.conformer = [
            ConformerBlock(d, config.n_heads, config.conv_kernel,
                           config.ff_mult, rng, dt)
            for _ in range(config.seld_conformer_layers)]
        self.clap_proj = Linear(config.clap_dim, d, rng, dt)
        self.audio_cmc = [
            CrossModalConformerBlock(d, config.n_heads, config.conv_kernel,
                                     config.ff_mult, rng, dt)
            for _ in range(config.audio_cmc_layers)]
        if config.audio_only:
            self.visual_proj = None
            self.av_cmc = None
            self.av_plain = [
                ConformerBlock(d, config.n_heads, config.conv_kernel,
                               config.ff_mult, rng, dt)
                for _ in range(config.av_cmc_layers)]
        else:
            self.visual_proj = Linear(config.visual_dim, d, rng, dt)
            self.av_cmc = [
                CrossModalConformerBlock(d, config.n_heads, config.conv_kernel,
                                         config.ff_mult, rng, dt)
                for _ in range(config.av_cmc_layers)]
            self.av_plain = None
        self.head1 = Linear(d, d, rng, dt)
        self.head2 = Linear(d, config.n_tracks * config.n_classes * 4, rng, dt)

    # -- forward ------------------------------------------------------------
    def forward_tensor(self, features: Tensor, clap: Tensor,
                       visual: Tensor | None = None) -> Tensor:
        """(B, 4, T, F) features -> (B, T/16, n_tracks, n_classes, 4)."""
        cfg = self.config
        x = self.cnn(features)
        b, t_out, d = x.shape
        x = x + Tensor(sinusoidal_positions(t_out, d, cfg.np_dtype))
        for block in self.conformer:
            x = block(x)
        beta_a = self.clap_proj(clap)
        for block in self.audio_cmc:
            x = block(x, beta_a)
        if cfg.audio_only:
            for block in self.av_plain:
                x = block(x)
        else:
            if visual is None:
                raise ValueError(
                    "audio-visual mode needs a visual fixture; pass one or "
                    "use an audio_only config")
            beta_v = self.visual_proj(visual)
            for block in self.av_cmc:
                x = block(x, beta_v)
        raw = self.head2(ad.swish(self.head1(x)))
        raw = raw.reshape(b, t_out, cfg.n_tracks, cfg.n_classes, 4)
        return ad.accddoa_activation(raw)

    def __call__(self, features, clap, visual=None):
        return self.forward_tensor(features, clap, visual)


def _fixture_tensor(fix, dtype, batch: int) -> Tensor:
    tokens = fix.tokens if isinstance(fix, EmbeddingFixture) else np.asarray(fix)
    if tokens.ndim == 2:
        tokens = np.broadcast_to(tokens, (batch, *tokens.shape))
    return Tensor(np.ascontiguousarray(tokens, dtype=dtype))


def model_forward(model: SeldModel, features: np.ndarray, clap,
                  visual=None) -> np.ndarray:
    """Inference on one clip: (4, T, F) features plus fixtures ->
    (T/16, n_tracks, n_classes, 4) numpy output."""
    dt = model.config.np_dtype
    feats = Tensor(np.ascontiguousarray(features, dtype=dt)[None])
    clap_t = _fixture_tensor(clap, dt, 1)
    vis_t = None if visual is None else _fixture_tensor(visual, dt, 1)
    was_training = model.training
    model.eval()
    try:
        with ad.no_grad():
            out = model.forward_tensor(feats, clap_t, vis_t)
    finally:
        model.train(was_training)
    return np.asarray(out.data[0], dtype=np.float64)


# ---------------------------------------------------------------------------
# fixtures

def make_fixture(modality_tag: str, seed: int, width: int | None = None) -> EmbeddingFixture:
    """Deterministic pseudo-random embedding fixture. clap_audio defaults to
    1x512 tokens, owlvit_visual to 577x768."""
    n_tokens = EmbeddingFixture.EXPECTED_TOKENS[modality_tag]
    if width is None:
        width = 512 if modality_tag == "clap_audio" else 768
    rng = np.random.default_rng((seed, modality_tag == "owlvit_visual"))
    tokens = rng.normal(0.0, 1.0 / np.sqrt(width), size=(n_tokens, width))
    return EmbeddingFixture(tokens=tokens, modality_tag=modality_tag,
                            d_k=width).validate()


# ---------------------------------------------------------------------------
# loss bridge

class AdpitLoss(ad.Function):
    """Batch mean of the permutation-invariant loss; backward re-uses the
    exact gradients computed alongside the forward."""

    def forward(self, pred, refs_batch, onscreen_weight=1.0):
        if pred.ndim != 5 or pred.shape[0] != len(refs_batch):
            raise ValueError(
                f"expected (B, T, n_tracks, n_classes, 4) aligned with "
                f"{len(refs_batch)} reference lists, got {pred.shape}")
        losses = []
        grads = np.empty_like(pred, dtype=np.float64)
        for i, refs in enumerate(refs_batch):
            loss_i, grads[i] = accddoa.adpit_loss(
                np.asarray(pred[i], dtype=np.float64), refs,
                onscreen_weight=onscreen_weight)
            losses.append(loss_i)
        self.grads = (grads / len(refs_batch)).astype(pred.dtype)
        return np.asarray(sum(losses) / len(losses), dtype=pred.dtype)

    def backward(self, g):
        return (g * self.grads,)


def adpit_loss_op(pred: Tensor, refs_batch, onscreen_weight: float = 1.0) -> Tensor:
    return AdpitLoss.apply(pred, refs_batch, onscreen_weight=onscreen_weight)


# ---------------------------------------------------------------------------
# optimizer / schedule

class Adam:
    def __init__(self, params: list[Tensor], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)


def lr_at_epoch(epoch: int, lr0: float) -> float:
    """Constant for the first 30 epochs, then 5% decay per epoch
    (epochs are 1-based)."""
    if epoch <= 30:
        return lr0
    return lr0 * 0.95 ** (epoch - 30)


def train_toy(model: SeldModel, dataset, epochs: int, lr0: float,
              batch_size: int = 32, onscreen_weight: float = 1.0,
              seed: int = 0, early_stop_ratio: float | None = None):
    """Adam training on a small in-memory dataset.

    ``dataset`` items are dicts with keys ``features`` (4, T, F),
    ``refs`` (per-output-frame event lists), ``clap`` and, unless the model
    is audio-only, ``visual``. Returns the per-epoch log as a list of
    ``{"epoch", "loss", "lr"}`` dicts. Raises :class:`TrainingDiverged` on a
    non-finite loss. With ``early_stop_ratio`` set, stops once the epoch loss
    drops below that fraction of the first epoch's loss.
    """
    if not dataset:
        raise ValueError("empty dataset")
    dt = model.config.np_dtype
    rng = np.random.default_rng(seed)
    opt = Adam(model.parameters())
    model.train()
    log = []
    first_loss = None
    for epoch in range(1, epochs + 1):
        lr = lr_at_epoch(epoch, lr0)
        order = rng.permutation(len(dataset))
        epoch_losses = []
        for start in range(0, len(order), batch_size):
            batch = [dataset[i] for i in order[start:start + batch_size]]
            feats = Tensor(np.ascontiguousarray(
                np.stack([item["features"] for item in batch]), dtype=dt))
            clap = Tensor(np.ascontiguousarray(
                np.stack([np.asarray(item["clap"]) for item in batch]), dtype=dt))
            visual = None
            if not model.config.audio_only:
                if any("visual" not in item for item in batch):
                    raise ValueError(
                        "audio-visual training needs a 'visual' fixture per "
                        "dataset item (or use an audio_only config)")
                visual = Tensor(np.ascontiguousarray(
                    np.stack([np.asarray(item["visual"]) for item in batch]),
                    dtype=dt))
            model.zero_grad()
            pred = model.forward_tensor(feats, clap, visual)
            loss = adpit_loss_op(pred, [item["refs"] for item in batch],
                                 onscreen_weight=onscreen_weight)
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise TrainingDiverged(
                    f"non-finite loss {loss_val} at epoch {epoch} "
                    f"(lr={lr:g}); lower lr0 or check the inputs")
            loss.backward()
            opt.step(lr)
            epoch_losses.append(loss_val)
        mean_loss = float(np.mean(epoch_losses))
        log.append({"epoch": epoch, "loss": mean_loss, "lr": lr})
        if first_loss is None:
            first_loss = mean_loss
        if early_stop_ratio is not None and mean_loss < early_stop_ratio * first_loss:
            break
    return log


# ---------------------------------------------------------------------------
# finite-difference verification

def gradcheck_suite(seed: int = 0, which: str = "all"):
    """Run finite-difference checks on every op and composite block.

    Returns a list of (name, max_relative_error) tuples; each entry should be
    <= 1e-4. ``which`` is "all" or a comma-separated subset of names.
    """
    rng = np.random.default_rng(seed)
    dt = np.float64

    def t(shape, scale=1.0, shift=0.0):
        return Tensor((rng.normal(size=shape) * scale + shift).astype(dt),
                      requires_grad=True)

    def away_from_kinks(shape):
        # keep relu/threshold inputs away from 0 so finite differences are valid
        data = rng.uniform(0.2, 1.2, size=shape) * rng.choice([-1.0, 1.0], shape)
        return Tensor(data.astype(dt), requires_grad=True)

    w_cache: dict[tuple, np.ndarray] = {}

    def probe(shape):
        if shape not in w_cache:
            w_cache[shape] = rng.normal(size=shape)
        return w_cache[shape]

    def weighted(out):
        return ad.mul(out, probe(out.shape)).sum()

    checks: dict[str, tuple] = {}

    def register(name, fn, inputs):
        checks[name] = (fn, inputs)

    register("matmul", lambda a, b: weighted(ad.matmul(a, b)),
             [t((3, 4)), t((4, 5))])
    register("add", lambda a, b: weighted(a + b), [t((3, 4)), t((4,))])
    register("mul", lambda a, b: weighted(a * b), [t((3, 4)), t((4,))])
    register("relu", lambda x: weighted(ad.relu(x)), [away_from_kinks((4, 5))])
    register("sigmoid", lambda x: weighted(ad.sigmoid(x)), [t((4, 5))])
    register("tanh", lambda x: weighted(ad.tanh(x)), [t((4, 5))])
    register("softplus", lambda x: weighted(ad.softplus(x)), [t((4, 5))])
    register("swish", lambda x: weighted(ad.swish(x)), [t((4, 5))])
    register("glu", lambda x: weighted(ad.glu(x)), [t((4, 6))])
    register("softmax", lambda x: weighted(ad.softmax(x)), [t((4, 5))])
    register("linear", lambda x, w, b: weighted(ad.linear(x, w, b)),
             [t((3, 4)), t((4, 5)), t((5,))])
    register("sum", lambda x: ad.mul(x.sum(axis=1), probe((3,))).sum(), [t((3, 4))])
    register("mean", lambda x: ad.mul(x.mean(axis=0), probe((4,))).sum(), [t((3, 4))])
    register("reshape", lambda x: weighted(x.reshape(2, 6)), [t((3, 4))])
    register("transpose", lambda x: weighted(x.transpose(1, 0)), [t((3, 4))])
    register("conv2d", lambda x, w: weighted(ad.conv2d(x, w)),
             [t((2, 3, 6, 5)), t((4, 3, 3, 3), scale=0.5)])
    register("depthwise_conv1d", lambda x, w: weighted(ad.depthwise_conv1d(x, w)),
             [t((2, 7, 4)), t((4, 3), scale=0.5)])
    register("avg_pool2d", lambda x: weighted(ad.avg_pool2d(x)),
             [t((2, 3, 4, 6))])
    register("layer_norm", lambda x, g, b: weighted(ad.layer_norm(x, g, b)),
             [t((4, 6)), t((6,), 0.2, 1.0), t((6,))])

    bn_stats = (np.zeros(3), np.ones(3))
    register("batch_norm_train",
             lambda x, g, b: weighted(ad.batch_norm(
                 x, g, b, bn_stats[0], bn_stats[1], training=True,
                 channel_axis=1)),
             [t((2, 3, 4, 5)), t((3,), 0.2, 1.0), t((3,))])
    register("batch_norm_eval",
             lambda x, g, b: weighted(ad.batch_norm(
                 x, g, b, bn_stats[0] + 0.3, bn_stats[1] + 0.5, training=False,
                 channel_axis=1)),
             [t((2, 3, 4, 5)), t((3,), 0.2, 1.0), t((3,))])
    register("scaled_dot_attention",
             lambda q, k, v: weighted(ad.scaled_dot_attention(q, k, v)),
             [t((2, 4, 6)), t((2, 5, 6)), t((2, 5, 6))])
    register("accddoa_activation",
             lambda x: weighted(ad.accddoa_activation(x)), [t((2, 3, 4))])

    # composite blocks on tiny widths; the block parameters are checked too
    mini_rng = np.random.default_rng(seed + 1)
    cnn_block = CnnBlock(2, 3, mini_rng, dt)
    register("cnn_block",
             lambda x, *ps: weighted(cnn_block(x)),
             [t((2, 2, 4, 4))] + cnn_block.parameters())
    conf = ConformerBlock(8, 2, 3, 2, mini_rng, dt)
    register("conformer_block",
             lambda x, *ps: weighted(conf(x)),
             [t((2, 6, 8))] + conf.parameters())
    cmc = CrossModalConformerBlock(8, 2, 3, 2, mini_rng, dt)
    register("cross_modal_conformer_t1",
             lambda a, b, *ps: weighted(cmc(a, b)),
             [t((1, 5, 8)), t((1, 1, 8))] + cmc.parameters())
    register("cross_modal_conformer_t577",
             lambda a, b, *ps: weighted(cmc(a, b)),
             [t((1, 4, 8)), t((1, 577, 8))] + cmc.parameters())

    from .types import EventRecord

    adpit_refs = [[EventRecord(0, 0, 0, 25.0, 1.5, True),
                   EventRecord(0, 0, 1, -40.0, 2.5, False),
                   EventRecord(0, 1, 0, 10.0, 1.0, True)],
                  [EventRecord(1, 2, 0, -5.0, 0.8, False)]]
    pred0 = rng.normal(size=(2, 3, 3, 4)) * 0.5
    pred0[..., 3] = rng.uniform(0.15, 0.85, size=(2, 3, 3))
    register("adpit_loss",
             lambda p: adpit_loss_op(
                 p.reshape(1, 2, 3, 3, 4), [adpit_refs], onscreen_weight=4.0),
             [Tensor(pred0, requires_grad=True)])

    if which != "all":
        wanted = [w.strip() for w in which.split(",") if w.strip()]
        unknown = [w for w in wanted if w not in checks]
        if unknown:
            raise ValueError(
                f"unknown ops {unknown}; available: {sorted(checks)}")
        checks = {k: checks[k] for k in wanted}

    results = []
    for name, (fn, inputs) in checks.items():
        err = ad.gradcheck(fn, inputs, rng=np.random.default_rng(seed + 17),
                           max_coords=12)
        results.append((name, err))
    return results


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(model: SeldModel, path) -> None:
    """Write config plus all parameters and buffers as a container of SSLD
    tensors; reload is bit-exact."""
    state = model.state_dict()
    manifest = {
        "format": "ssld-checkpoint",
        "version": 1,
        "config": asdict(model.config),
        "tensors": {name: {"dtype": str(arr.dtype), "shape": list(arr.shape)}
                    for name, arr in state.items()},
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        def add(name, payload):
            info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, payload)

        add("manifest.json", json.dumps(manifest, indent=1, sort_keys=True))
        for name, arr in sorted(state.items()):
            kind = "f4" if arr.dtype == np.float32 else "f8"
            add(f"tensors/{name}.ssld", audio_io.tensor_to_bytes(arr, kind))


def load_checkpoint(path) -> SeldModel:
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format") != "ssld-checkpoint":
            raise ValueError(f"{path}: not a checkpoint file")
        cfg_d = manifest["config"]
        cfg_d["cnn_channels"] = tuple(cfg_d["cnn_channels"])
        config = ModelConfig(**cfg_d)
        model = SeldModel(config, seed=0)
        state = {}
        for name, meta in manifest["tensors"].items():
            raw = zf.read(f"tensors/{name}.ssld")
            arr = audio_io.tensor_from_bytes(raw, f"{path}:{name}")
            state[name] = arr.astype(meta["dtype"])
        model.load_state_dict(state)
    return model
