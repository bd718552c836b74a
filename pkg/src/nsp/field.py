"""The vector-valued distance network and its magnitude/direction split.

The MLP maps a point to a vector ``F``.  Its norm ``d = |F|`` is the learned
unsigned distance and ``G = F / |F|`` the learned gradient direction, so
``d >= 0`` and ``|G| = 1`` hold by construction.  ``grad_d`` is the actual
input gradient of ``d``, obtained by forward-mode tangents through the
network.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad

GUARD_EPS = 1e-12
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpConfig:
    depth: int = 4
    width: int = 128
    skip_layer: int = 2
    softplus_beta: float = 100.0
    input_dim: int = 3
    output_dim: int = 3
    output_bias: float = 0.1

    def __post_init__(self):
        if self.depth < 1 or self.width < 1:
            raise ValueError("depth and width must be positive")
        if not 0 < self.skip_layer <= self.depth:
            raise ValueError("skip_layer must satisfy 0 < skip_layer <= depth")
        if self.input_dim != 3 or self.output_dim != 3:
            raise ValueError("the field maps R^3 to R^3")

    @classmethod
    def paper(cls):
        return cls(depth=6, width=512, skip_layer=3)

    @classmethod
    def desk(cls):
        return cls()

    def layer_shapes(self):
        """``(fan_in, fan_out)`` of every affine map, output layer last.

        Hidden layer ``skip_layer`` (1-based) also receives the raw input.
        """
        shapes = []
        fan_in = self.input_dim
        for layer in range(1, self.depth + 1):
            if layer == self.skip_layer:
                fan_in += self.input_dim
            shapes.append((fan_in, self.width))
            fan_in = self.width
        shapes.append((fan_in, self.output_dim))
        return shapes

    @property
    def n_params(self):
        return sum(i * o + o for i, o in self.layer_shapes())


PROFILES = {"paper": MlpConfig.paper(), "desk": MlpConfig.desk()}


@dataclass
class Parameters:
    """Weights stored ``(fan_in, fan_out)`` so a layer is ``h @ W + b``."""

    weights: list
    biases: list

    def flat(self):
        return np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in zip(self.weights, self.biases)])

    @classmethod
    def from_flat(cls, vector, config):
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (config.n_params,):
            raise ValueError(f"expected {config.n_params} parameters, got {vector.shape}")
        weights, biases, pos = [], [], 0
        for fan_in, fan_out in config.layer_shapes():
            weights.append(vector[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out).copy())
            pos += fan_in * fan_out
            biases.append(vector[pos:pos + fan_out].copy())
            pos += fan_out
        return cls(weights, biases)

    def copy(self):
        return Parameters([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def init_params(config, seed=0):
    """He-uniform hidden layers, a small output layer and a positive output bias.

    The output bias keeps ``F`` away from zero at initialization so the
    direction ``F / |F|`` is defined from the first step.
    """
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    shapes = config.layer_shapes()
    for fan_in, fan_out in shapes[:-1]:
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    fan_in, fan_out = shapes[-1]
    bound = np.sqrt(1.0 / fan_in)
    weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
    biases.append(np.full(fan_out, config.output_bias))
    return Parameters(weights, biases)


def mlp(weights, biases, config, x):
    """Network output for ``x`` given as array, :class:`~nsp.autodiff.Var` or :class:`~nsp.autodiff.Dual`."""
    h = x
    for layer, (w, b) in enumerate(zip(weights[:-1], biases[:-1]), start=1):
        if layer == config.skip_layer:
            h = ad.concat([h, x])
        h = ad.softplus(_affine(h, w, b), config.softplus_beta)
    return _affine(h, weights[-1], biases[-1])


def _affine(h, w, b):
    if isinstance(h, ad.Dual):
        return h @ w + b
    return ad.matmul(h, w) + b


def forward(params, config, x):
    """``F`` at points ``x`` of shape ``(3,)`` or ``(n, 3)``."""
    x = np.asarray(x, dtype=np.float64)
    return mlp(params.weights, params.biases, config, x)


def mdd(F, guard_eps=GUARD_EPS):
    """Split vectors into magnitude and direction.

    Returns ``(d, G, guard_active)``; where ``|F| <= guard_eps`` the direction
    is the fallback ``(0, 0, 1)`` and ``guard_active`` is set.
    """
    if guard_eps <= 0:
        raise ValueError("guard_eps must be positive")
    F = np.asarray(F, dtype=np.float64)
    d = ad.norm(F)[..., 0]
    G = ad.normalize(F, guard_eps)
    return d, G, d <= guard_eps


@dataclass
class FieldEval:
    F: np.ndarray
    d: np.ndarray
    G: np.ndarray
    grad_d: np.ndarray
    guard_active: np.ndarray


def eval_field(params, config, x, guard_eps=GUARD_EPS):
    """Joint evaluation of ``F``, ``d``, ``G`` and the input gradient of ``d``."""
    x = np.asarray(x, dtype=np.float64)
    out = mlp(params.weights, params.biases, config, ad.Dual.seed(x))
    nd = ad.norm(out, guard_eps)
    F = out.value
    d, G, guard = mdd(F, guard_eps)
    return FieldEval(F=F, d=d, G=G, grad_d=nd.tangent[..., 0], guard_active=guard)


@dataclass
class TapedEval:
    """Taped field quantities over a batch; ``grad_d`` is ``None`` unless requested."""

    F: object
    d: object
    G: object
    grad_d: object = None


class NeuralField:
    """A trained (or initial) network viewed as a distance/ESP field."""

    def __init__(self, params, config, guard_eps=GUARD_EPS, chunk=65536):
        self.params = params
        self.config = config
        self.guard_eps = guard_eps
        self.chunk = chunk

    def _chunked(self, fn, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
        parts = [fn(x[i:i + self.chunk]) for i in range(0, len(x), self.chunk)] or [fn(x[:0])]
        return np.concatenate(parts)

    def esp(self, x):
        """The vector ``F`` (estimated shortest path) at points ``x``."""
        return self._chunked(lambda c: forward(self.params, self.config, c), x)

    def distance(self, x):
        return self._chunked(lambda c: ad.norm(forward(self.params, self.config, c))[:, 0], x)

    def evaluate(self, x):
        return eval_field(self.params, self.config, x, self.guard_eps)

    def bind(self, tape):
        return BoundNeuralField(self, tape)


class BoundNeuralField:
    """The field with its parameters registered as variables on one tape."""

    def __init__(self, field, tape):
        self.field = field
        self.tape = tape
        self.config = field.config
        self.guard_eps = field.guard_eps
        arrays = field.params.arrays()
        self.params = [tape.variable(a) for a in arrays]
        self._frozen = None

    def _weights(self, detach):
        if detach:
            if self._frozen is None:
                self._frozen = [self.tape.constant(v.value) for v in self.params]
            source = self._frozen
        else:
            source = self.params
        return source[0::2], source[1::2]

    def evaluate(self, x, derivatives=False, detach=False):
        """Taped ``F``, ``d``, ``G`` (and ``grad_d``) at ``x``.

        ``x`` may itself be a taped value.  With ``detach`` the parameters
        enter as constants: values are unchanged but carry no parameter
        sensitivity.
        """
        weights, biases = self._weights(detach)
        if derivatives:
            out = mlp(weights, biases, self.config, ad.Dual.seed(x))
            nd = ad.norm(out, self.guard_eps)
            F, d, grad_d = out.value, nd.value, nd.tangent[..., 0]
        else:
            F = mlp(weights, biases, self.config, x)
            d, grad_d = ad.norm(F, self.guard_eps), None
        G = ad.normalize(F, self.guard_eps)
        return TapedEval(F=F, d=d[..., 0], G=G, grad_d=grad_d)


def save_checkpoint(path, params, config, seed=0, epoch=0, extra=None):
    """Write an ``.npz`` checkpoint: JSON header plus the flat parameter vector."""
    header = {"format": "nsp-checkpoint", "version": CHECKPOINT_VERSION, "config": asdict(config),
              "seed": int(seed), "epoch": int(epoch), "n_params": config.n_params}
    if extra:
        header["extra"] = extra
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), params=params.flat())


def load_checkpoint(path):
    """Returns ``(params, config, header)``."""
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        flat = data["params"]
    if header.get("format") != "nsp-checkpoint":
        raise ValueError(f"{path} is not a checkpoint")
    if header["version"] > CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header['version']}")
    config = MlpConfig(**header["config"])
    return Parameters.from_flat(flat, config), config, header
