"""Smooth bounded activations for the feature layer.

Each activation carries the bounds (r1, r2, r3) on |f|, |f'|, |f''| used by
the band and curvature diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit


@dataclass(frozen=True)
class Activation:
    name: str
    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    # derivative expressed through the activation value, cheaper inside the
    # training loop where f(z) is already available
    df_from_f: Callable[[np.ndarray], np.ndarray]
    r1: float
    r2: float
    r3: float


SIGMOID = Activation(
    name="sigmoid",
    f=expit,
    df=lambda z: expit(z) * (1.0 - expit(z)),
    df_from_f=lambda s: s * (1.0 - s),
    r1=1.0,
    r2=0.25,
    r3=1.0 / (6.0 * np.sqrt(3.0)),
)

TANH = Activation(
    name="tanh",
    f=np.tanh,
    df=lambda z: 1.0 - np.tanh(z) ** 2,
    df_from_f=lambda t: 1.0 - t * t,
    r1=1.0,
    r2=1.0,
    r3=4.0 / (3.0 * np.sqrt(3.0)),
)

_REGISTRY = {a.name: a for a in (SIGMOID, TANH)}


def get_activation(name: str) -> Activation:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choices: {sorted(_REGISTRY)}") from None
