"""
Depth-parameterized U-net for image-to-image regression of BEV stacks

Layout for depth n and base features k:

    pre        3x3 conv d -> k, ReLU
    enc i      two 3x3 conv + ReLU to k*2^i features, 2x2 max-pool   (i = 0 .. n-2)
    bottleneck two 3x3 conv + ReLU to k*2^(n-1) features
    dec i      2x2 transposed conv to k*2^i, concat skip, two 3x3 conv + ReLU   (i = n-2 .. 0)
    out        1x1 conv k -> d, then the head
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

from bevpredict.ai import layers as L
from bevpredict.models import ArchitectureRow, NetSpec
from bevpredict.utils.errors import InvalidArgumentError, ShapeError

logger = logging.getLogger(__name__)


class LayerKind(str, Enum):
    CONV3X3 = "conv3x3"
    MAXPOOL = "maxpool"
    UPCONV = "upconv"
    CONCAT = "concat"
    CONV1X1 = "conv1x1"
    HEAD = "head"


@dataclass(frozen=True)
class Layer:
    kind: LayerKind
    name: str
    in_channels: int
    out_channels: int
    level: int

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        if self.kind == LayerKind.CONV3X3:
            weight = (self.out_channels, self.in_channels, 3, 3)
        elif self.kind == LayerKind.CONV1X1:
            weight = (self.out_channels, self.in_channels, 1, 1)
        elif self.kind == LayerKind.UPCONV:
            weight = (self.in_channels, self.out_channels, 2, 2)
        else:
            return {}
        return {f"{self.name}.weight": weight, f"{self.name}.bias": (self.out_channels,)}

    def fan_in(self) -> int:
        if self.kind == LayerKind.CONV3X3:
            return self.in_channels * 9
        return self.in_channels


def build_layers(spec: NetSpec) -> List[Layer]:
    """Layer inventory of the network described by `spec`"""

    n, k = spec.depth, spec.base_features
    layers: List[Layer] = []

    def conv(name: str, cin: int, cout: int, level: int) -> None:
        layers.append(Layer(LayerKind.CONV3X3, name, cin, cout, level))

    conv("pre", spec.in_channels, k, 0)
    cin = k
    for i in range(n - 1):
        c = k * 2 ** i
        conv(f"enc{i}.conv1", cin, c, i)
        conv(f"enc{i}.conv2", c, c, i)
        layers.append(Layer(LayerKind.MAXPOOL, f"enc{i}.pool", c, c, i))
        cin = c

    c = k * 2 ** (n - 1)
    conv("bottleneck.conv1", cin, c, n - 1)
    conv("bottleneck.conv2", c, c, n - 1)
    cin = c

    for i in reversed(range(n - 1)):
        c = k * 2 ** i
        layers.append(Layer(LayerKind.UPCONV, f"dec{i}.up", cin, c, i))
        layers.append(Layer(LayerKind.CONCAT, f"dec{i}.concat", c, 2 * c, i))
        conv(f"dec{i}.conv1", 2 * c, c, i)
        conv(f"dec{i}.conv2", c, c, i)
        cin = c

    layers.append(Layer(LayerKind.CONV1X1, "out", cin, spec.out_channels, 0))
    layers.append(Layer(LayerKind.HEAD, "head", spec.out_channels, spec.out_channels, 0))
    return layers


@dataclass
class ForwardCache:
    entries: List[object] = field(default_factory=list)


@dataclass
class Network:
    """Architecture, parameter tensors (name -> array)"""

    spec: NetSpec
    layers: List[Layer]
    params: Dict[str, np.ndarray]

    def copy(self) -> "Network":
        return Network(self.spec, list(self.layers), {k: v.copy() for k, v in self.params.items()})

    def _params64(self) -> Dict[str, np.ndarray]:
        return {k: v.astype(np.float64, copy=False) for k, v in self.params.items()}

    def check_input(self, x: np.ndarray) -> None:
        if x.ndim != 3:
            raise ShapeError(f"input must be (channels, height, width), got shape {x.shape}")
        if x.shape[0] != self.spec.in_channels:
            raise ShapeError(f"input has {x.shape[0]} channels, network expects {self.spec.in_channels}")
        m = min_input_size(self.spec.depth)
        h, w = x.shape[1:]
        if h % m or w % m:
            raise ShapeError(
                f"input spatial size {h}x{w} must be a multiple of 2^{self.spec.depth} = {m} "
                f"in both dimensions"
            )

    def run(self, x: np.ndarray, cache: Optional[ForwardCache] = None) -> np.ndarray:
        """Forward pass in float64; fills `cache` for backprop when given"""

        x = np.asarray(x, dtype=np.float64)
        self.check_input(x)
        p = self._params64()
        skips: List[np.ndarray] = []
        keep = cache.entries.append if cache is not None else (lambda _: None)

        for layer in self.layers:
            if layer.kind == LayerKind.CONV3X3:
                z = L.conv3x3_forward(x, p[f"{layer.name}.weight"], p[f"{layer.name}.bias"])
                keep((x, z))
                x = L.relu_forward(z)
            elif layer.kind == LayerKind.MAXPOOL:
                skips.append(x)
                x, argmax = L.maxpool_forward(x)
                keep(argmax)
            elif layer.kind == LayerKind.UPCONV:
                keep(x)
                x = L.upconv_forward(x, p[f"{layer.name}.weight"], p[f"{layer.name}.bias"])
            elif layer.kind == LayerKind.CONCAT:
                skip = skips.pop()
                keep(skip.shape[0])
                x = L.concat_forward(skip, x)
            elif layer.kind == LayerKind.CONV1X1:
                keep(x)
                x = L.conv1x1_forward(x, p[f"{layer.name}.weight"], p[f"{layer.name}.bias"])
            elif layer.kind == LayerKind.HEAD:
                z = x
                x = L.head_forward(z, self.spec.head)
                keep((z, x))

        return x

    def backprop(self, cache: ForwardCache, dout: np.ndarray) -> Dict[str, np.ndarray]:
        """Gradients of every parameter given d(loss)/d(output)"""

        p = self._params64()
        grads: Dict[str, np.ndarray] = {}
        skip_grads: List[np.ndarray] = []

        for layer, entry in zip(reversed(self.layers), reversed(cache.entries)):
            if layer.kind == LayerKind.HEAD:
                z, out = entry
                dout = L.head_backward(dout, z, out, self.spec.head)
            elif layer.kind == LayerKind.CONV1X1:
                dout, dw, db = L.conv1x1_backward(dout, entry, p[f"{layer.name}.weight"])
                grads[f"{layer.name}.weight"], grads[f"{layer.name}.bias"] = dw, db
            elif layer.kind == LayerKind.CONCAT:
                dskip, dout = L.concat_backward(dout, entry)
                skip_grads.append(dskip)
            elif layer.kind == LayerKind.UPCONV:
                dout, dw, db = L.upconv_backward(dout, entry, p[f"{layer.name}.weight"])
                grads[f"{layer.name}.weight"], grads[f"{layer.name}.bias"] = dw, db
            elif layer.kind == LayerKind.MAXPOOL:
                dout = L.maxpool_backward(dout, entry) + skip_grads.pop()
            elif layer.kind == LayerKind.CONV3X3:
                x, z = entry
                dz = L.relu_backward(dout, z)
                dout, dw, db = L.conv3x3_backward(dz, x, p[f"{layer.name}.weight"])
                grads[f"{layer.name}.weight"], grads[f"{layer.name}.bias"] = dw, db

        return {name: grads[name] for name in self.params}


def build_network(spec: NetSpec, seed: int = 0, dtype=np.float32) -> Network:
    """
    Build the network and draw its weights

    Weights are He-normal (std = sqrt(2 / fan_in)) from a generator seeded
    with `seed`, drawn in layer order; biases start at zero.
    """

    layers = build_layers(spec)
    rng = np.random.default_rng(seed)
    params: Dict[str, np.ndarray] = {}

    for layer in layers:
        for name, shape in layer.param_shapes().items():
            if name.endswith(".weight"):
                std = np.sqrt(2.0 / layer.fan_in())
                params[name] = (rng.standard_normal(shape) * std).astype(dtype)
            else:
                params[name] = np.zeros(shape, dtype=dtype)

    net = Network(spec, layers, params)
    logger.debug(f"Built depth-{spec.depth} network with {count_params(net)} parameters")
    return net


def forward(net: Network, inputs: np.ndarray) -> np.ndarray:
    """Predicted stack (d, H, W), same spatial size as the input"""
    return net.run(inputs)


def receptive_field(n: int) -> int:
    """Largest input offset (pixels) that can reach an output pixel: 2*(3 + sum 5*2^(i-2), i=2..n)"""

    if n < 1:
        raise InvalidArgumentError(f"depth must be >= 1, got {n}")
    return 2 * (3 + sum(5 * 2 ** (i - 2) for i in range(2, n + 1)))


def min_input_size(n: int) -> int:
    if n < 1:
        raise InvalidArgumentError(f"depth must be >= 1, got {n}")
    return 2 ** n


def count_params(net: Network) -> int:
    return int(sum(p.size for p in net.params.values()))


def count_spec_params(spec: NetSpec) -> int:
    """Parameter count without allocating the tensors"""
    return int(sum(
        int(np.prod(shape))
        for layer in build_layers(spec)
        for shape in layer.param_shapes().values()
    ))


def table_row(depth: int, base_features: int = 4, channels: int = 15) -> ArchitectureRow:
    spec = NetSpec(depth=depth, base_features=base_features,
                   in_channels=channels, out_channels=channels)
    return ArchitectureRow(
        depth=depth,
        receptive_field=receptive_field(depth),
        min_input_size=min_input_size(depth),
        parameters=count_spec_params(spec),
    )


def describe_network(spec: NetSpec, height: int, width: int) -> pd.DataFrame:
    """One row per layer: name, kind, output shape and parameter count"""

    rows = []
    h, w = height, width
    for layer in build_layers(spec):
        if layer.kind == LayerKind.MAXPOOL:
            h, w = h // 2, w // 2
        elif layer.kind == LayerKind.UPCONV:
            h, w = h * 2, w * 2
        rows.append({
            "layer": layer.name,
            "kind": layer.kind.value,
            "output": f"{layer.out_channels}x{h}x{w}",
            "parameters": sum(int(np.prod(s)) for s in layer.param_shapes().values()),
        })
    return pd.DataFrame(rows)


def enumerate_base_features(
    targets: Mapping[int, int],
    k_values: Iterable[int] = range(1, 33),
    channels: int = 15
) -> pd.DataFrame:
    """
    Parameter counts for every (k, depth) against reference counts

    Args:
        targets: depth -> reference parameter count
        k_values: candidate base feature counts
        channels: stack depth d (input and output channels)

    Returns:
        DataFrame with k, depth, parameters, target and rel_error columns
    """

    rows = []
    for k in k_values:
        for depth, target in sorted(targets.items()):
            spec = NetSpec(depth=depth, base_features=k, in_channels=channels, out_channels=channels)
            params = count_spec_params(spec)
            rows.append({
                "k": k,
                "depth": depth,
                "parameters": params,
                "target": target,
                "rel_error": (params - target) / target,
            })
    return pd.DataFrame(rows)


def best_base_features(enumeration: pd.DataFrame, depth: int) -> int:
    """k whose count at `depth` is closest to the reference"""

    at_depth = enumeration[enumeration["depth"] == depth]
    best = at_depth.loc[at_depth["rel_error"].abs().idxmin()]
    return int(best["k"])
