"""Generator and discriminator/classifier for 512-sample clutter spectra.

Generator: 100-d latent -> 8 transposed-conv blocks -> [B, 1, 512] in (-1, 1).
Discriminator: 7 strided conv blocks (BN, LeakyReLU 0.2, dropout 0.5) -> FC to
K + 1 logits, the last one being the "generated" class. The activations of the
seven conv blocks (after LeakyReLU, before dropout) are returned as feature taps.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .nn import functional as F
from .nn.tensor import ContractError, Tensor

LATENT_DIM = 100
SIGNAL_LENGTH = 512
INIT_STD = 0.02


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 1
    stride: int = 1
    padding: int = 0
    slope: float = 0.0
    p: float = 0.0

    def __post_init__(self):
        if self.kind in ("conv1d", "deconv1d") and (self.kernel < 1 or self.stride < 1 or self.padding < 0):
            raise F.GeometryError(f"invalid conv geometry in {self}")
        if self.kind == "dropout" and not 0.0 <= self.p < 1.0:
            raise ContractError(f"dropout p must be in [0, 1): {self.p}")


def generator_specs(latent_dim: int = LATENT_DIM) -> list[LayerSpec]:
    specs = [LayerSpec("deconv1d", latent_dim, 512, 4, 1, 0)]
    ch = 512
    for _ in range(6):
        specs.append(LayerSpec("deconv1d", ch, ch // 2, 4, 2, 1))
        ch //= 2
    specs.append(LayerSpec("deconv1d", ch, 1, 4, 2, 1))
    return specs


def discriminator_specs() -> list[LayerSpec]:
    specs = []
    ch_in, ch_out = 1, 8
    for _ in range(7):
        specs.append(LayerSpec("conv1d", ch_in, ch_out, 4, 2, 1))
        ch_in, ch_out = ch_out, ch_out * 2
    return specs


# (channels, length) after each block, for shape checks
GENERATOR_SHAPES = [(512, 4), (256, 8), (128, 16), (64, 32), (32, 64), (16, 128), (8, 256), (1, 512)]
TAP_SHAPES = [(8, 256), (16, 128), (32, 64), (64, 32), (128, 16), (256, 8), (512, 4)]


class FeatureTap:
    """Activations of one discriminator block, stored channels-last.

    ``values`` is [B, length, channels] (the layout the network runs in);
    ``activations`` gives the conventional [B, channels, length] view.
    """

    __slots__ = ("layer", "values", "_bcl")

    def __init__(self, layer: int, values: Tensor):
        self.layer = layer  # 1-based
        self.values = values
        self._bcl = None

    @property
    def activations(self) -> Tensor:
        if self._bcl is None:
            self._bcl = self.values.transpose(0, 2, 1)
        return self._bcl

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int, int]:
        b, le, ch = self.values.shape
        return (b, ch, le)


class _Net:
    """Named parameter dict plus batch-norm running statistics."""

    def __init__(self, dtype):
        self.dtype = np.dtype(dtype)
        self.params: OrderedDict[str, Tensor] = OrderedDict()
        self.bn: OrderedDict[str, F.BatchNormState] = OrderedDict()

    # memory order per parameter kind so the conv kernels can reshape weights without copying
    _MEMORY_ORDER: dict[str, tuple[int, ...]] = {}

    def _place(self, name: str, value: np.ndarray) -> np.ndarray:
        arr = np.asarray(value, dtype=self.dtype)
        order = self._MEMORY_ORDER.get(name.rsplit(".", 1)[-1]) if arr.ndim == 3 else None
        if order is None:
            return np.array(arr)
        return np.ascontiguousarray(arr.transpose(order)).transpose(np.argsort(order))

    def _param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(self._place(name, value), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> OrderedDict[str, np.ndarray]:
        """Parameters followed by BN running statistics, in a stable order."""
        out = OrderedDict((k, p.data) for k, p in self.params.items())
        for k, st in self.bn.items():
            out[f"{k}.running_mean"] = st.running_mean
            out[f"{k}.running_var"] = st.running_var
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if arrays[k].shape != p.shape:
                raise ContractError(f"shape mismatch for {k}: {arrays[k].shape} vs {p.shape}")
            p.data = self._place(k, arrays[k])
        for k, st in self.bn.items():
            st.running_mean = np.array(arrays[f"{k}.running_mean"], dtype=self.dtype)
            st.running_var = np.array(arrays[f"{k}.running_var"], dtype=self.dtype)


class Generator(_Net):
    _MEMORY_ORDER = {"weight": (0, 2, 1)}  # [in, out, k] stored as [in, k, out]
    def __init__(self, latent_dim: int = LATENT_DIM, seed: int = 0, dtype=np.float32):
        if latent_dim < 1:
            raise ContractError("latent_dim must be positive")
        super().__init__(dtype)
        self.latent_dim = latent_dim
        self.specs = generator_specs(latent_dim)
        rng = np.random.default_rng(seed)
        last = len(self.specs)
        for i, s in enumerate(self.specs, start=1):
            self._param(f"g{i}.weight", rng.normal(0.0, INIT_STD, (s.in_channels, s.out_channels, s.kernel)))
            if i < last:
                self._param(f"g{i}.gamma", rng.normal(1.0, INIT_STD, s.out_channels))
                self._param(f"g{i}.beta", np.zeros(s.out_channels))
                self.bn[f"g{i}"] = F.BatchNormState(s.out_channels, self.dtype)
            else:
                self._param(f"g{i}.bias", np.zeros(s.out_channels))

    def forward(self, z: Tensor, training: bool = True, update_stats: bool = True, hidden: list | None = None) -> Tensor:
        """Map latent [B, latent_dim, 1] to signals [B, 1, 512].

        If ``hidden`` is a list, the (channels, length) of every block output
        is appended to it.
        """
        if z.ndim != 3 or z.shape[1] != self.latent_dim or z.shape[2] != 1:
            raise ContractError(f"latent must be [B, {self.latent_dim}, 1], got {z.shape}")
        h = z.reshape(z.shape[0], 1, self.latent_dim)  # channels-last
        last = len(self.specs)
        p = self.params
        for i, s in enumerate(self.specs, start=1):
            if i < last:
                h = F.deconv1d_nlc(h, p[f"g{i}.weight"], None, s.stride, s.padding)
                h = F.batchnorm_nlc(h, p[f"g{i}.gamma"], p[f"g{i}.beta"], self.bn[f"g{i}"], training, update_stats)
                h = F.relu(h)
            else:
                h = F.deconv1d_nlc(h, p[f"g{i}.weight"], p[f"g{i}.bias"], s.stride, s.padding)
                h = F.tanh(h)
            if hidden is not None:
                hidden.append((h.shape[2], h.shape[1]))
        return h.reshape(h.shape[0], 1, h.shape[1])

    __call__ = forward

    def sample_latent(self, n: int, rng: np.random.Generator) -> Tensor:
        return Tensor(rng.standard_normal((n, self.latent_dim, 1)).astype(self.dtype))


class Discriminator(_Net):
    _MEMORY_ORDER = {"weight": (2, 1, 0)}  # [out, in, k] stored as [k, in, out]
    def __init__(self, num_classes: int = 3, seed: int = 0, dtype=np.float32, slope: float = 0.2, dropout: float = 0.5):
        if num_classes < 2:
            raise ContractError("num_classes must be at least 2")
        super().__init__(dtype)
        self.num_classes = num_classes
        self.slope = slope
        self.dropout = dropout
        self.specs = discriminator_specs()
        rng = np.random.default_rng(seed)
        for i, s in enumerate(self.specs, start=1):
            self._param(f"d{i}.weight", rng.normal(0.0, INIT_STD, (s.out_channels, s.in_channels, s.kernel)))
            self._param(f"d{i}.gamma", rng.normal(1.0, INIT_STD, s.out_channels))
            self._param(f"d{i}.beta", np.zeros(s.out_channels))
            self.bn[f"d{i}"] = F.BatchNormState(s.out_channels, self.dtype)
        c_last, l_last = TAP_SHAPES[-1]
        self.flat_width = c_last * l_last
        self._param("fc.weight", rng.normal(0.0, INIT_STD, (num_classes + 1, self.flat_width)))
        self._param("fc.bias", np.zeros(num_classes + 1))

    def forward(
        self,
        x: Tensor,
        training: bool = True,
        rng: np.random.Generator | None = None,
        update_stats: bool = True,
    ) -> tuple[Tensor, list[FeatureTap]]:
        if x.ndim != 3 or x.shape[1:] != (1, SIGNAL_LENGTH):
            raise ContractError(f"discriminator input must be [B, 1, {SIGNAL_LENGTH}], got {x.shape}")
        p = self.params
        taps = []
        h = x.reshape(x.shape[0], SIGNAL_LENGTH, 1)  # channels-last
        for i, s in enumerate(self.specs, start=1):
            h = F.conv1d_nlc(h, p[f"d{i}.weight"], None, s.stride, s.padding)
            h = F.batchnorm_nlc(h, p[f"d{i}.gamma"], p[f"d{i}.beta"], self.bn[f"d{i}"], training, update_stats)
            h = F.leaky_relu(h, self.slope)
            taps.append(FeatureTap(i, h))
            h = F.dropout(h, self.dropout, training, rng)
        # flatten channel-major, i.e. as [B, C, L]
        flat = F.flatten(h.transpose(0, 2, 1))
        logits = F.linear(flat, p["fc.weight"], p["fc.bias"])
        return logits, taps

    __call__ = forward


def build_generator(latent_dim: int = LATENT_DIM, seed: int = 0, dtype=np.float32) -> Generator:
    return Generator(latent_dim, seed, dtype)


def build_discriminator(num_classes: int = 3, seed: int = 0, dtype=np.float32) -> Discriminator:
    return Discriminator(num_classes, seed, dtype)


def classify_logits(logits, num_classes: int) -> np.ndarray:
    """Argmax over the real-class logits only; ties go to the lowest index."""
    z = np.asarray(logits.data if isinstance(logits, Tensor) else logits)
    return np.argmax(z[..., :num_classes], axis=-1)


def classify(disc: Discriminator, x, batch_size: int = 256) -> np.ndarray:
    """Eval-mode class predictions for signals shaped [N, 512] or [N, 1, 512]."""
    from .nn.tensor import no_grad

    arr = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=disc.dtype)
    if arr.ndim == 2:
        arr = arr[:, None, :]
    preds = []
    with no_grad():
        for start in range(0, len(arr), batch_size):
            logits, _ = disc.forward(Tensor(arr[start : start + batch_size]), training=False)
            preds.append(classify_logits(logits, disc.num_classes))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
