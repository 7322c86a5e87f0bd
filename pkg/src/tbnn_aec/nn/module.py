"""Module base class: parameter declaration, binding and per-frame state."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, MissingTensorError, NumericError, ShapeMismatchError

DTYPE = np.float32


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple
    init: str = "uniform"   # uniform | zeros | ones | prelu
    fan_in: int = 1

    @property
    def size(self):
        return int(np.prod(self.shape, dtype=np.int64))


class Module:
    """A layer or a composition of layers evaluated one frame at a time.

    Subclasses declare parameters through :meth:`_own_params` and children
    through ``self.children``.  After :meth:`bind`, :meth:`step` consumes one
    frame and mutates the per-stream ``state`` created by :meth:`init_state`.
    The module itself holds only immutable weights, so a bound module can be
    shared by any number of streams.
    """

    kind = "Module"
    debug = False

    def __init__(self, name):
        self.name = name
        self.children = {}
        self._bound = False

    def add(self, key, module):
        self.children[key] = module
        return module

    def _own_params(self):
        return []

    def hparams(self):
        return {}

    def param_specs(self):
        specs = list(self._own_params())
        for child in self.children.values():
            specs.extend(child.param_specs())
        return specs

    def num_parameters(self):
        return sum(s.size for s in self.param_specs())

    def bind(self, params):
        """Attach weight arrays (a mapping of full names to arrays)."""
        specs = self.param_specs()
        missing = [s.name for s in specs if s.name not in params]
        if missing:
            raise MissingTensorError(missing)
        bad = {s.name: (s.shape, np.shape(params[s.name])) for s in specs
               if tuple(np.shape(params[s.name])) != tuple(s.shape)}
        if bad:
            raise ShapeMismatchError(bad)
        self._bind(params)
        return self

    def _bind(self, params):
        self.params = {s.name.rsplit(".", 1)[1]: np.asarray(params[s.name], dtype=DTYPE)
                       for s in self._own_params()}
        self._prepare()
        for child in self.children.values():
            child._bind(params)
        self._bound = True

    def _prepare(self):
        pass

    def init_state(self):
        return {key: child.init_state() for key, child in self.children.items()}

    def _check(self, y):
        if Module.debug and not np.all(np.isfinite(y)):
            raise NumericError(f"non-finite output in layer {self.name}")
        return y

    def describe(self):
        node = {"name": self.name, "kind": self.kind, "hparams": self.hparams(),
                "params": [{"name": s.name, "shape": list(s.shape)} for s in self._own_params()]}
        if self.children:
            node["children"] = [c.describe() for c in self.children.values()]
        return node


def check_shape(x, shape, where):
    if x.shape != tuple(shape):
        raise ContractError(f"{where}: expected input shape {tuple(shape)}, got {x.shape}")
