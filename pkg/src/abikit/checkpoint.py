"""Approximator checkpoints stored as array containers.

Entries: ``param/<name>`` per network parameter (stored in the network
dtype, float32 by default), ``m/<name>`` and ``v/<name>`` optimizer moments
(float64) and one ``metadata`` JSON entry with the approximator config, the
optimizer state, the loss history and any caller-supplied snapshot.
"""

from __future__ import annotations

import numpy as np

from . import container
from .approximators import Approximator, History, approximator_from_config
from .container import ContainerError
from .numcore import AdamW

FORMAT_VERSION = 1
METADATA = "metadata"


def save_checkpoint(path, approximator: Approximator, extra: dict | None = None) -> None:
    if not approximator.built:
        raise ValueError("cannot checkpoint an unbuilt approximator")
    opt = approximator.optimizer
    arrays = {f"param/{k}": v for k, v in approximator.state_dict().items()}
    if opt is not None:
        arrays.update({k: np.asarray(v, dtype=np.float64) for k, v in opt.state_arrays().items()})
    meta = {
        "format_version": FORMAT_VERSION,
        "approximator": approximator.config(),
        "history": {"loss": list(approximator.history.loss), "val_loss": approximator.history.val_loss},
        "optimizer": None if opt is None else {
            "learning_rate": opt.learning_rate,
            "beta1": opt.beta1,
            "beta2": opt.beta2,
            "epsilon": opt.epsilon,
            "weight_decay": opt.weight_decay,
            "step": opt.step_count,
        },
        "extra": extra or {},
    }
    arrays[METADATA] = container.json_entry(meta)
    container.write(path, arrays)


def load_checkpoint(path) -> tuple[Approximator, dict]:
    """Rebuild the approximator with its parameters, optimizer moments and history.

    Returns the approximator and the caller-supplied snapshot saved with it.
    """
    arrays = container.read(path)
    if METADATA not in arrays:
        raise ContainerError("checkpoint has no metadata entry")
    meta = container.parse_json_entry(arrays[METADATA])
    version = meta.get("format_version")
    if not isinstance(version, int) or version > FORMAT_VERSION or version < 1:
        raise ContainerError(f"unsupported checkpoint format version {version!r}")
    approx = approximator_from_config(meta["approximator"])
    approx.load_state_dict({k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")})
    opt = meta.get("optimizer")
    if opt is not None:
        step = opt.pop("step")
        approx.optimizer = AdamW(**opt)
        approx.optimizer.load_state_arrays({k: v for k, v in arrays.items() if k[:2] in ("m/", "v/")}, step)
    approx.history = History(list(meta["history"]["loss"]), meta["history"]["val_loss"])
    return approx, meta.get("extra", {})
