"""MT-KAN: one KAN per group of variables over flattened joint histories.

A group window ``[h, m]`` is flattened variable-major (all ``h`` steps of the
first member, then the second, ...), so every node of the first layer sees
the history of every variable in the group. Outputs use the same layout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import KanNetwork, predict
from .data import Normalization, flatten_variable_major, make_windows
from .errors import FormatError, InvalidInputError
from .training import TrainConfig, fit_model


@dataclass(frozen=True)
class VariableGroup:
    members: tuple
    h: int = 84
    T: int = 21

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise InvalidInputError("a variable group needs at least one member")
        if len(set(self.members)) != len(self.members):
            raise InvalidInputError(f"duplicate members in group {self.members}")
        if self.h < 1 or self.T < 1:
            raise InvalidInputError("h and T must be >= 1")

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def input_width(self) -> int:
        return self.size * self.h

    @property
    def output_width(self) -> int:
        return self.size * self.T


def flatten_window(window, group: VariableGroup) -> np.ndarray:
    w = np.asarray(window, dtype=float)
    if w.shape != (group.h, group.size):
        raise InvalidInputError(f"window shape {w.shape} != ({group.h}, {group.size})")
    return flatten_variable_major(w)


def unflatten(vector, steps: int, size: int) -> np.ndarray:
    """Inverse of the variable-major flattening, giving ``[steps, size]``."""
    v = np.asarray(vector, dtype=float)
    if v.shape[-1] != steps * size:
        raise InvalidInputError(f"vector length {v.shape[-1]} != {steps} * {size}")
    return np.swapaxes(v.reshape(v.shape[:-1] + (size, steps)), -1, -2)


def unflatten_window(vector, group: VariableGroup) -> np.ndarray:
    return unflatten(vector, group.h, group.size)


def forecast_group(net: KanNetwork, window, group: VariableGroup,
                   normalization: Normalization | None = None) -> np.ndarray:
    """Joint ``[T, m]`` forecast from a ``[h, m]`` window.

    With ``normalization`` the window is in original units and so is the
    result; without it both are taken to be standardized already (the
    network input is still scaled by the default input scale).
    """
    if net.widths[0] != group.input_width or net.widths[-1] != group.output_width:
        raise InvalidInputError(
            f"network widths {net.widths} do not fit group (in {group.input_width}, out {group.output_width})"
        )
    w = np.asarray(window, dtype=float)
    if w.shape != (group.h, group.size):
        raise InvalidInputError(f"window shape {w.shape} != ({group.h}, {group.size})")
    norm = normalization or Normalization(np.zeros(group.size), np.ones(group.size))
    if norm.n_vars != group.size:
        raise InvalidInputError(f"normalization covers {norm.n_vars} variables, group has {group.size}")
    z = (w - norm.mean) / norm.std
    out = predict(net, flatten_variable_major(z) * norm.input_scale)
    out = unflatten(out, group.T, group.size)
    return out * norm.std + norm.mean if normalization is not None else out


def partition_variables(m: int, group_size: int = 5, names=None, h: int = 84, T: int = 21) -> list[VariableGroup]:
    """Consecutive groups of ``group_size``; the last one takes the remainder."""
    if m < 1 or group_size < 1:
        raise InvalidInputError("m and group_size must be >= 1")
    names = list(range(m)) if names is None else list(names)
    if len(names) != m:
        raise InvalidInputError(f"got {len(names)} names for {m} variables")
    return [VariableGroup(tuple(names[i:i + group_size]), h, T) for i in range(0, m, group_size)]


def load_group_file(path, known=None, h: int = 84, T: int = 21) -> list[VariableGroup]:
    """Read a JSON list of lists of variable names."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, list) or not all(isinstance(g, list) and g for g in doc):
        raise FormatError(f"{path}: expected a JSON list of non-empty lists")
    groups = [VariableGroup(tuple(g), h, T) for g in doc]
    seen = [v for g in groups for v in g.members]
    if len(seen) != len(set(seen)):
        raise FormatError(f"{path}: a variable appears in more than one group")
    if known is not None:
        missing = [v for v in seen if v not in set(known)]
        if missing:
            raise FormatError(f"{path}: unknown variable(s) {missing}")
    return groups


def group_matrix(columns: dict, group: VariableGroup) -> np.ndarray:
    return np.column_stack([np.asarray(columns[name], dtype=float) for name in group.members])


def fit_group(matrix, group: VariableGroup, hidden=(5,), train_config: TrainConfig | None = None,
              interior_count: int = 5, degree: int = 3, base: bool = True,
              normalization: Normalization | None = None):
    """Train one MT-KAN on a ``[length, m]`` block; returns ``(net, log, norm)``."""
    ds = make_windows(matrix, group.h, group.T, normalization=normalization)
    widths = [group.input_width, *hidden, group.output_width]
    net, tlog = fit_model(widths, ds, train_config, interior_count, degree, base)
    return net, tlog, ds.normalization
