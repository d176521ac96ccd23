"""Convolutional learners built on the autodiff engine."""

from collections import OrderedDict
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

# Handle imports - try relative first, then absolute
try:
    from . import autodiff as ad
    from .autodiff import Tensor
    from .exceptions import ConfigurationError, ShapeError
    from .imaging import ChannelNormalizer
    from .logger import Logger
    from .model_spec import Arch, Head, ModelSpec
    from .simgel import TactileImage
except ImportError:
    import autodiff as ad
    from autodiff import Tensor
    from exceptions import ConfigurationError, ShapeError
    from imaging import ChannelNormalizer
    from logger import Logger
    from model_spec import Arch, Head, ModelSpec
    from simgel import TactileImage

POSITION_RANGE_MM = (10.0, 50.0)
FORCE_RANGE_N = (0.0, 25.0)


class Module:
    """Holds named parameter tensors in creation order."""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()

    def param(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def adopt(self, prefix: str, child: "Module"):
        for name, t in child._params.items():
            self._params[f"{prefix}.{name}"] = t

    def parameters(self) -> "OrderedDict[str, Tensor]":
        return self._params


class Conv(Module):
    def __init__(self, rng: np.random.Generator, in_ch: int, out_ch: int, k: int, pad: int = 0):
        super().__init__()
        self.pad = pad
        fan_in = in_ch * k * k
        self.weight = self.param("weight", rng.normal(0.0, np.sqrt(2.0 / fan_in), (out_ch, in_ch, k, k)))
        self.bias = self.param("bias", np.zeros(out_ch))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, stride=1, pad=self.pad, bias=self.bias)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, in_dim: int, out_dim: int):
        super().__init__()
        self.weight = self.param("weight", rng.normal(0.0, np.sqrt(2.0 / in_dim), (in_dim, out_dim)))
        self.bias = self.param("bias", np.zeros(out_dim))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.dense(x, self.weight, self.bias)


class ResidualBlock(Module):
    """relu(x + conv(relu(conv(x)))) with an identity skip."""

    def __init__(self, rng, width: int):
        super().__init__()
        self.conv_a = Conv(rng, width, width, 3, pad=1)
        self.conv_b = Conv(rng, width, width, 3, pad=1)
        self.adopt("conv_a", self.conv_a)
        self.adopt("conv_b", self.conv_b)

    def branch(self, x: Tensor) -> Tensor:
        return self.conv_b(ad.relu(self.conv_a(x)))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.relu(ad.add(x, self.branch(x)))


class InceptionBlock(Module):
    """Parallel 1x1 / 3x3 / 5x5 / pool branches merged along channels."""

    BRANCHES = ("1x1", "3x3", "5x5", "pool")

    def __init__(self, rng, in_ch: int, width: int):
        super().__init__()
        self.b1 = Conv(rng, in_ch, width, 1)
        self.b3_reduce = Conv(rng, in_ch, width, 1)
        self.b3 = Conv(rng, width, width, 3, pad=1)
        self.b5_reduce = Conv(rng, in_ch, width, 1)
        self.b5 = Conv(rng, width, width, 5, pad=2)
        self.bp = Conv(rng, in_ch, width, 1)
        for name in ("b1", "b3_reduce", "b3", "b5_reduce", "b5", "bp"):
            self.adopt(name, getattr(self, name))
        self.out_channels = 4 * width

    def branches(self, x: Tensor) -> List[Tensor]:
        return [
            ad.relu(self.b1(x)),
            ad.relu(self.b3(ad.relu(self.b3_reduce(x)))),
            ad.relu(self.b5(ad.relu(self.b5_reduce(x)))),
            ad.relu(self.bp(ad.maxpool2d(x, 3, stride=1, pad=1))),
        ]

    def __call__(self, x: Tensor) -> Tensor:
        return ad.concat_channels(self.branches(x))


class Network(Module):
    def __init__(self, spec: ModelSpec, input_shape: Tuple[int, int, int]):
        super().__init__()
        self.spec = spec
        self.input_shape = tuple(int(d) for d in input_shape)
        self.normalizer: Union[ChannelNormalizer, None] = None

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def check_input(self, x: Tensor):
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"Network expects input (N, {self.input_shape}), got {tuple(x.shape)}")

    def load_parameters(self, values: Dict[str, np.ndarray]):
        missing = set(self._params) - set(values)
        if missing:
            raise ShapeError(f"Missing parameters: {sorted(missing)}")
        for name, t in self._params.items():
            if tuple(values[name].shape) != t.shape:
                raise ShapeError(f"Parameter {name}: shape {tuple(values[name].shape)} != {t.shape}")
            t.data = np.array(values[name], dtype=np.float64)


class PlainCnn(Network):
    """[conv3x3-relu-pool2] x stages, then a dense head."""

    def __init__(self, spec: ModelSpec, input_shape):
        super().__init__(spec, input_shape)
        rng = np.random.default_rng(spec.hyperparams["seed"])
        widths = list(spec.hyperparams["widths"])
        c, h, w = self.input_shape
        factor = 2 ** len(widths)
        if h % factor or w % factor:
            raise ConfigurationError(f"Input {h}x{w} not divisible by {factor} for {len(widths)} pool stages")
        self.convs = []
        for i, width in enumerate(widths):
            conv = Conv(rng, c, width, 3, pad=1)
            self.adopt(f"conv{i}", conv)
            self.convs.append(conv)
            c = width
        self.flat_dim = c * (h // factor) * (w // factor)
        self.head = Linear(rng, self.flat_dim, spec.n_outputs)
        self.adopt("head", self.head)

    def forward(self, x: Tensor) -> Tensor:
        self.check_input(x)
        for conv in self.convs:
            x = ad.maxpool2d(ad.relu(conv(x)), 2)
        x = ad.reshape(x, (x.shape[0], self.flat_dim))
        return self.head(x)


class MicroResNet(Network):
    STEM_POOL = 4

    def __init__(self, spec: ModelSpec, input_shape):
        super().__init__(spec, input_shape)
        rng = np.random.default_rng(spec.hyperparams["seed"])
        width = int(spec.hyperparams["widths"][0])
        self.stem = Conv(rng, self.input_shape[0], width, 3, pad=1)
        self.adopt("stem", self.stem)
        self.blocks = []
        for i in range(int(spec.hyperparams["blocks"])):
            block = ResidualBlock(rng, width)
            self.adopt(f"block{i}", block)
            self.blocks.append(block)
        self.head = Linear(rng, width, spec.n_outputs)
        self.adopt("head", self.head)

    def forward(self, x: Tensor) -> Tensor:
        self.check_input(x)
        x = ad.maxpool2d(ad.relu(self.stem(x)), self.STEM_POOL)
        for block in self.blocks:
            x = block(x)
        return self.head(ad.global_avg_pool(x))


class MicroInception(Network):
    STEM_POOL = 4

    def __init__(self, spec: ModelSpec, input_shape):
        super().__init__(spec, input_shape)
        rng = np.random.default_rng(spec.hyperparams["seed"])
        stem_width, branch_width = (int(v) for v in spec.hyperparams["widths"][:2])
        self.stem = Conv(rng, self.input_shape[0], stem_width, 3, pad=1)
        self.adopt("stem", self.stem)
        self.blocks = []
        c = stem_width
        for i in range(int(spec.hyperparams["blocks"])):
            block = InceptionBlock(rng, c, branch_width)
            self.adopt(f"block{i}", block)
            self.blocks.append(block)
            c = block.out_channels
        self.head = Linear(rng, c, spec.n_outputs)
        self.adopt("head", self.head)

    def forward(self, x: Tensor) -> Tensor:
        self.check_input(x)
        x = ad.maxpool2d(ad.relu(self.stem(x)), self.STEM_POOL)
        for block in self.blocks:
            x = block(x)
        return self.head(ad.global_avg_pool(x))


def build_network(spec: ModelSpec, input_shape: Sequence[int] = (3, 64, 64)) -> Network:
    """Instantiate a network variant with He-normal weights from the spec seed."""
    if not spec.arch.is_network:
        raise ConfigurationError(f"{spec.arch.display_name} is not a network architecture")
    if spec.arch in (Arch.CNN3, Arch.CNN5):
        net = PlainCnn(spec, input_shape)
    elif spec.arch == Arch.MICRO_RESNET:
        net = MicroResNet(spec, input_shape)
    else:
        net = MicroInception(spec, input_shape)
    Logger.get_logger(__name__).debug(
        f"Built {spec.arch.value} with {sum(t.size for t in net.parameters().values())} parameters")
    return net


def normalize_targets(position_mm, force_n) -> np.ndarray:
    lo_p, hi_p = POSITION_RANGE_MM
    lo_f, hi_f = FORCE_RANGE_N
    return np.stack([(np.asarray(position_mm, dtype=np.float64) - lo_p) / (hi_p - lo_p),
                     (np.asarray(force_n, dtype=np.float64) - lo_f) / (hi_f - lo_f)], axis=-1)


def denormalize_targets(outputs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Normalized [0, 1] outputs -> (position mm, force N)."""
    outputs = np.asarray(outputs, dtype=np.float64)
    lo_p, hi_p = POSITION_RANGE_MM
    lo_f, hi_f = FORCE_RANGE_N
    return lo_p + outputs[..., 0] * (hi_p - lo_p), lo_f + outputs[..., 1] * (hi_f - lo_f)


def to_batch(pixels: np.ndarray) -> np.ndarray:
    """HxWxC or NxHxWxC -> NCHW."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim == 3:
        pixels = pixels[None]
    return pixels.transpose(0, 3, 1, 2)


def forward_batch(net: Network, batch: np.ndarray) -> np.ndarray:
    """Inference on an NCHW batch (normalizer applied if the net carries one)."""
    if net.normalizer is not None:
        batch = net.normalizer.transform(batch)
    return net.forward(Tensor(batch)).data


def class_from_logits(logits) -> int:
    return int(np.argmax(np.asarray(logits)))


def net_predict(net: Network, img: Union[TactileImage, np.ndarray]):
    """Logits (4,) for classification, (position_mm, force_n) for regression."""
    pixels = img.pixels if isinstance(img, TactileImage) else img
    out = forward_batch(net, to_batch(pixels))[0]
    if net.spec.head == Head.CLASSIFY4:
        return out
    position, force = denormalize_targets(out)
    return float(position), float(force)
