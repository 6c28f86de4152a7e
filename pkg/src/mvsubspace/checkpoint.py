"""Model checkpoints: one JSON header line followed by a raw float64 payload.

The header lists every tensor by name and shape; the payload is those
tensors concatenated in the same order as little-endian 64-bit floats.
Layer metadata (kind, stride, activation, transposed output size) lives in
the header so the networks can be rebuilt without re-running ``init_params``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .autoencoder import AutoencoderParams, Layer
from .selfexpr import SelfExprState
from .trainer import ClusteringResult, TrainConfig

MAGIC = "mvsubspace-checkpoint"
VERSION = 1
DTYPE = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    state: SelfExprState
    dnet: List[AutoencoderParams]
    unet: List[AutoencoderParams]
    config: TrainConfig
    n_clusters: int
    epoch: int


def _net_header(net: AutoencoderParams, role: str, view: int) -> dict:
    return {
        "role": role,
        "view": view,
        "input_shape": list(net.input_shape),
        "n_encoder": net.n_encoder,
        "seed": net.seed,
        "layers": [
            {
                "kind": l.kind,
                "shape": list(l.weight.shape),
                "stride": l.stride,
                "relu": l.relu,
                "out_hw": None if l.out_hw is None else list(l.out_hw),
            }
            for l in net.layers
        ],
    }


def save_checkpoint(path: str, state: SelfExprState, dnet, unet, config: TrainConfig,
                    n_clusters: int, epoch: Optional[int] = None) -> None:
    tensors = [("Z", state.Z)]
    tensors += [(f"Z_views[{i}]", M) for i, M in enumerate(state.Z_views)]
    nets = []
    for role, group in (("dnet", dnet), ("unet", unet)):
        for i, net in enumerate(group):
            nets.append(_net_header(net, role, i))
            tensors += [(f"{role}[{i}].layers[{j}]", w) for j, w in enumerate(net.weights())]
    header = {
        "format": MAGIC,
        "version": VERSION,
        "seed": config.seed,
        "epoch": config.finetune_epochs if epoch is None else int(epoch),
        "n_clusters": int(n_clusters),
        "config": config.to_dict(),
        "networks": nets,
        "tensors": [{"name": name, "shape": list(t.shape)} for name, t in tensors],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for _, t in tensors:
            fh.write(np.ascontiguousarray(t, dtype=DTYPE).tobytes())


def save_result(path: str, result: ClusteringResult) -> None:
    save_checkpoint(path, result.state, result.dnet, result.unet, result.config, result.n_clusters)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        first = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(first.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint header ({exc})") from exc
    if header.get("format") != MAGIC:
        raise CheckpointError(f"{path}: not a model checkpoint")
    if header.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")

    sizes = [int(np.prod(t["shape"])) for t in header["tensors"]]
    if len(payload) != sum(sizes) * DTYPE.itemsize:
        raise CheckpointError(
            f"{path}: payload holds {len(payload)} bytes, header lists {sum(sizes)} float64 values"
        )
    flat = np.frombuffer(payload, dtype=DTYPE)
    tensors = {}
    offset = 0
    for t, size in zip(header["tensors"], sizes):
        tensors[t["name"]] = flat[offset:offset + size].reshape(t["shape"]).astype(np.float64)
        offset += size

    groups = {"dnet": [], "unet": []}
    for net in header["networks"]:
        role, i = net["role"], net["view"]
        layers = [
            Layer(l["kind"], tensors[f"{role}[{i}].layers[{j}]"], l["stride"], l["relu"],
                  None if l["out_hw"] is None else tuple(l["out_hw"]))
            for j, l in enumerate(net["layers"])
        ]
        groups[role].append(AutoencoderParams(tuple(net["input_shape"]), layers,
                                               net["n_encoder"], net["seed"]))
    n_views = len(groups["dnet"])
    state = SelfExprState(tensors["Z"], [tensors[f"Z_views[{i}]"] for i in range(n_views)])
    return Checkpoint(state, groups["dnet"], groups["unet"], TrainConfig.from_dict(header["config"]),
                      header["n_clusters"], header["epoch"])
