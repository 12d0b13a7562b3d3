import json
from pathlib import Path

import numpy as np

from .popularity import PopularityModel, fit_popularity
from .svd import SvdModel, fit_truncated_svd
from .vae import (
    LossPair,
    VaeArch,
    VaeModel,
    VaeParams,
    load_checkpoint,
    save_checkpoint,
    vae_forward,
    vae_gradients,
    vae_losses,
)


def score_users(model, inputs):
    """Full item-score matrix for a batch of input rows."""
    return model.score(inputs)


MODEL_FORMAT = "temporec-model/1"


def save_model(model, path) -> Path:
    """Write any of the three model kinds to one ``.npz`` file."""
    path = Path(path)
    if isinstance(model, VaeModel):
        return save_checkpoint(model.params, path)
    if isinstance(model, SvdModel):
        arrays = {"item_factors": model.item_factors, "singular_values": model.singular_values}
    elif isinstance(model, PopularityModel):
        arrays = {"counts": model.counts}
    else:
        raise TypeError(f"cannot save {type(model).__name__}")
    header = json.dumps({"format": MODEL_FORMAT, "kind": model.name})
    with path.open("wb") as fh:
        np.savez(fh, header=np.array(header), **arrays)
    return path


def load_model(path):
    path = Path(path)
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        arrays = {k: data[k].copy() for k in data.files if k != "header"}
    if header.get("format") == MODEL_FORMAT:
        if header["kind"] == "svd":
            return SvdModel(arrays["item_factors"], arrays["singular_values"])
        if header["kind"] == "popularity":
            return PopularityModel(arrays["counts"])
        raise ValueError(f"{path}: unknown model kind {header['kind']!r}")
    params, _ = load_checkpoint(path)
    return VaeModel(params)


__all__ = [
    "LossPair",
    "PopularityModel",
    "SvdModel",
    "VaeArch",
    "VaeModel",
    "VaeParams",
    "fit_popularity",
    "fit_truncated_svd",
    "load_checkpoint",
    "load_model",
    "save_checkpoint",
    "save_model",
    "score_users",
    "vae_forward",
    "vae_gradients",
    "vae_losses",
]
