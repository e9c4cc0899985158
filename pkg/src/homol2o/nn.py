"""MLP policy mapping instance parameters to decision vectors.

The net is a "cylinder": every hidden layer shares one width. The output
layer is affine with no activation, so decision variables are unbounded
and constraint handling stays entirely in the training loss. Inputs are
standardized by per-feature mean/std stored with the model.
"""

import base64
import hashlib
import json

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError, DimensionError, NonFiniteError

CHECKPOINT_VERSION = 1

_ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh}


class PolicyNet:
    """Fully-connected policy with seeded init and an input standardizer."""

    def __init__(self, layer_dims, activation="relu", seed=0):
        if len(layer_dims) < 2:
            raise ConfigError("layer_dims needs at least input and output dims")
        hidden = layer_dims[1:-1]
        if len(set(hidden)) > 1:
            raise ConfigError(f"hidden layers must share one width, got {hidden}")
        if activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation '{activation}'")
        self.layer_dims = list(layer_dims)
        self.activation = activation
        self.x_mean = np.zeros((1, layer_dims[0]))
        self.x_std = np.ones((1, layer_dims[0]))
        self._fingerprint = None

        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            lim = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-lim, lim, size=(fan_in, fan_out))
            self.weights.append(ad.parameter(w))
            self.biases.append(ad.parameter(np.zeros((1, fan_out))))

    @property
    def dim_in(self):
        return self.layer_dims[0]

    @property
    def dim_out(self):
        return self.layer_dims[-1]

    def fit_standardizer(self, xi):
        """Store per-feature mean/std of the training inputs.

        Zero-variance features get std 1 so constant columns pass through
        as zeros instead of dividing by zero.
        """
        xi = np.asarray(xi, dtype=np.float64)
        if xi.ndim != 2 or xi.shape[1] != self.dim_in:
            raise DimensionError(f"standardizer input {xi.shape} vs dim_in {self.dim_in}")
        self.x_mean = xi.mean(axis=0, keepdims=True)
        std = xi.std(axis=0, keepdims=True)
        self.x_std = np.where(std > 1e-12, std, 1.0)

    def forward(self, xi):
        """Standardize and run the MLP; returns the decision Tensor.

        Raises NonFiniteError naming the first layer whose output is
        NaN/Inf.
        """
        xi = np.asarray(xi, dtype=np.float64)
        if xi.ndim == 1:
            xi = xi.reshape(1, -1)
        if xi.shape[1] != self.dim_in:
            raise DimensionError(f"input has {xi.shape[1]} features, net expects {self.dim_in}")
        act = _ACTIVATIONS[self.activation]
        t = ad.constant((xi - self.x_mean) / self.x_std)
        last = len(self.weights) - 1
        outputs = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            t = ad.affine(t, w, b)
            if i < last:
                t = act(t)
            outputs.append(t)
        if not np.isfinite(t.value).all():
            # walk back to name the first offending layer
            for i, layer_out in enumerate(outputs):
                if not np.isfinite(layer_out.value).all():
                    raise NonFiniteError(f"non-finite output at layer {i}")
        return t

    def predict(self, xi):
        """Forward pass as plain numpy; no graph kept."""
        return self.forward(xi).value

    def parameters(self):
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend((w, b))
        return params

    def get_weights(self):
        return [p.value.copy() for p in self.parameters()]

    def set_weights(self, arrays):
        params = self.parameters()
        if len(arrays) != len(params):
            raise DimensionError(f"expected {len(params)} arrays, got {len(arrays)}")
        for p, a in zip(params, arrays):
            if a.shape != p.value.shape:
                raise DimensionError(f"weight shape {a.shape} vs {p.value.shape}")
            p.value[...] = a

    # checkpoint io ----------------------------------------------------

    def save(self, path, problem_fingerprint=None):
        doc = {
            "format_version": CHECKPOINT_VERSION,
            "layer_dims": self.layer_dims,
            "activation": self.activation,
            "standardizer": {"mean": _encode(self.x_mean), "std": _encode(self.x_std)},
            "layers": [
                {"w": _encode(w.value), "w_shape": list(w.value.shape), "b": _encode(b.value)}
                for w, b in zip(self.weights, self.biases)
            ],
        }
        if problem_fingerprint is not None:
            doc["problem_fingerprint"] = problem_fingerprint
        with open(path, "w") as fh:
            json.dump(doc, fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("format_version") != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {doc.get('format_version')!r}")
        net = cls(doc["layer_dims"], activation=doc["activation"])
        net.x_mean = _decode(doc["standardizer"]["mean"], (1, net.dim_in))
        net.x_std = _decode(doc["standardizer"]["std"], (1, net.dim_in))
        for layer, w, b in zip(doc["layers"], net.weights, net.biases):
            shape = tuple(layer["w_shape"])
            w.value[...] = _decode(layer["w"], shape)
            b.value[...] = _decode(layer["b"], (1, shape[1]))
        net._fingerprint = doc.get("problem_fingerprint")
        return net


def _encode(arr):
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def _decode(text, shape):
    arr = np.frombuffer(base64.b64decode(text), dtype="<f8").reshape(shape)
    return arr.astype(np.float64)


def weights_hash(net):
    """sha256 over the raw weight bytes; used for warm-start continuity checks."""
    h = hashlib.sha256()
    for p in net.parameters():
        h.update(np.ascontiguousarray(p.value).tobytes())
    return h.hexdigest()
