"""Layer containers and the builders for every network the agents use.

Parameter names are ``<layer>.<tensor>`` inside a ``Sequential`` and
``<module>.<layer>.<tensor>`` inside a ``ParameterSet``; checkpoints and the optimizer
both key on these names.
"""
import copy
import logging
from collections import OrderedDict
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from models.configs import Activation, FTAConfig, ValueHeadKind
from tensor_nn import ops
from tensor_nn.layers import FTA, Conv2D, ConvTranspose2D, Flatten, Layer, Linear, ReLU, Reshape
from utils.errors import ArchitectureMismatchError, UsageError

logger = logging.getLogger(__name__)

OBS_SHAPE = (15, 15, 3)
CONV1 = dict(out_channels=32, kernel=4, stride=1, pad=1)
CONV2 = dict(out_channels=16, kernel=4, stride=2, pad=2)


class Sequential:
    def __init__(self, name: str, layers: Sequence[Layer]):
        names = [layer.name for layer in layers]
        if len(set(names)) != len(names):
            raise UsageError(f"Layer names in {name} must be unique, got {names}")
        self.name = name
        self.layers: List[Layer] = list(layers)

    def __repr__(self):
        return f'<Sequential {self.name} layers={[l.name for l in self.layers]} params={self.num_parameters}>'

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    __call__ = forward

    def backward(self, dout: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def parameters(self) -> Dict[str, np.ndarray]:
        out = OrderedDict()
        for layer in self.layers:
            for key, value in layer.params.items():
                out[f'{layer.name}.{key}'] = value
        return out

    def gradients(self) -> Dict[str, np.ndarray]:
        out = OrderedDict()
        for layer in self.layers:
            for key, value in layer.params.items():
                out[f'{layer.name}.{key}'] = layer.grads.get(key, np.zeros_like(value))
        return out

    def zero_grad(self) -> None:
        for layer in self.layers:
            layer.zero_grad()

    @property
    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))

    def state_dict(self) -> Dict[str, np.ndarray]:
        return OrderedDict((name, value.copy()) for name, value in self.parameters().items())

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(state) != set(params):
            raise ArchitectureMismatchError(
                f"{self.name}: checkpoint tensors {sorted(state)} do not match {sorted(params)}"
            )
        for name, value in state.items():
            if params[name].shape != tuple(value.shape):
                raise ArchitectureMismatchError(
                    f"{self.name}.{name}: checkpoint shape {tuple(value.shape)} != {params[name].shape}"
                )
            params[name][...] = value

    def clone(self) -> 'Sequential':
        twin = copy.deepcopy(self)
        for layer in twin.layers:
            layer.grads = {}
        return twin

    def astype(self, dtype) -> 'Sequential':
        """Cast every parameter in place (the gradient checks run in float64)"""
        for layer in self.layers:
            for key in layer.params:
                layer.params[key] = layer.params[key].astype(dtype)
            layer.grads = {}
        return self


class ParameterSet:
    """Named modules updated together by one optimizer"""

    def __init__(self, modules: Optional[Dict[str, Sequential]] = None):
        self.modules: Dict[str, Sequential] = OrderedDict(modules or {})

    def __repr__(self):
        return f'<ParameterSet {list(self.modules)}>'

    def __contains__(self, name: str) -> bool:
        return name in self.modules

    def add(self, name: str, module: Sequential) -> None:
        if name in self.modules:
            raise UsageError(f"Module {name} is already part of the parameter set")
        self.modules[name] = module

    def parameters(self) -> Dict[str, np.ndarray]:
        return OrderedDict(
            (f'{prefix}.{key}', value)
            for prefix, module in self.modules.items()
            for key, value in module.parameters().items()
        )

    def gradients(self) -> Dict[str, np.ndarray]:
        return OrderedDict(
            (f'{prefix}.{key}', value)
            for prefix, module in self.modules.items()
            for key, value in module.gradients().items()
        )

    def zero_grad(self) -> None:
        for module in self.modules.values():
            module.zero_grad()


def conv_feature_size(obs_shape: Tuple[int, int, int] = OBS_SHAPE) -> Tuple[int, int, int]:
    """Spatial output (H, W, C) of the two trunk convolutions"""
    h, w, _ = obs_shape
    for spec in (CONV1, CONV2):
        h = ops.conv_output_size(h, spec['kernel'], spec['stride'], spec['pad'])
        w = ops.conv_output_size(w, spec['kernel'], spec['stride'], spec['pad'])
    return h, w, CONV2['out_channels']


def build_trunk(activation: Activation, fta_cfg: FTAConfig, rng: np.random.Generator,
                obs_shape: Tuple[int, int, int] = OBS_SHAPE, dtype=ops.real_type) -> Sequential:
    """conv(4,s1,p1,32) - ReLU - conv(4,s2,p2,16) - ReLU - flatten - linear - activation"""
    h, w, c = conv_feature_size(obs_shape)
    width = activation.pre_activation_width
    layers: List[Layer] = [
        Conv2D('conv1', obs_shape[2], CONV1['out_channels'], CONV1['kernel'], CONV1['stride'], CONV1['pad'],
               rng, dtype),
        ReLU('relu1'),
        Conv2D('conv2', CONV1['out_channels'], CONV2['out_channels'], CONV2['kernel'], CONV2['stride'],
               CONV2['pad'], rng, dtype),
        ReLU('relu2'),
        Flatten('flatten'),
        Linear('fc', h * w * c, width, rng, dtype),
        FTA(fta_cfg, 'fta') if activation is Activation.FTA else ReLU('relu3'),
    ]
    return Sequential('trunk', layers)


def build_input_trunk(obs_shape: Tuple[int, int, int] = OBS_SHAPE) -> Sequential:
    """The observation itself, flattened, stands in for the representation"""
    return Sequential('trunk', [Flatten('flatten')])


def build_mlp(name: str, n_in: int, hidden: Iterable[int], n_out: int, rng: np.random.Generator,
              dtype=ops.real_type) -> Sequential:
    layers: List[Layer] = []
    width = n_in
    for index, size in enumerate(hidden, start=1):
        layers.append(Linear(f'fc{index}', width, size, rng, dtype))
        layers.append(ReLU(f'relu{index}'))
        width = size
    layers.append(Linear('out', width, n_out, rng, dtype))
    return Sequential(name, layers)


def build_value_head(kind: ValueHeadKind, feature_width: int, rng: np.random.Generator, hidden: int = 64,
                     n_actions: int = 4, dtype=ops.real_type) -> Sequential:
    hidden_sizes = (hidden, hidden) if kind is ValueHeadKind.NONLINEAR else ()
    return build_mlp('value', feature_width, hidden_sizes, n_actions, rng, dtype)


def build_decoder(feature_width: int, rng: np.random.Generator, obs_shape: Tuple[int, int, int] = OBS_SHAPE,
                  dtype=ops.real_type) -> Sequential:
    """Mirror of the trunk: linear to the flattened conv size, then two deconvolutions"""
    h, w, c = conv_feature_size(obs_shape)
    return Sequential('decoder', [
        Linear('fc', feature_width, h * w * c, rng, dtype),
        ReLU('relu1'),
        Reshape((h, w, c), 'reshape'),
        ConvTranspose2D('deconv1', c, CONV1['out_channels'], CONV2['kernel'], CONV2['stride'], CONV2['pad'],
                        rng, dtype),
        ReLU('relu2'),
        ConvTranspose2D('deconv2', CONV1['out_channels'], obs_shape[2], CONV1['kernel'], CONV1['stride'],
                        CONV1['pad'], rng, dtype),
    ])
