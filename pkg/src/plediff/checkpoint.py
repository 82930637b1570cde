"""Single-file checkpoint container.

Layout:  magic "PLEDIFF1" | u32 header length | canonical-JSON header |
float32 little-endian payload.  The header records the format version, a
type tag (denoiser / reward / lora), the run-config snapshot, normalizer
bounds, mapper mask and the parameter layout; the payload holds the
sections' data in declared order.  Training runs in float64, serialization
rounds to float32.
"""

import dataclasses
import json
import struct

import numpy as np

from .baselines import LowRankDelta, RewardModelParams
from .config import run_config_from_dict, run_config_to_dict
from .denoiser import DenoiserParams, build_layout
from .envdata import Normalizer
from .ple import MapperParams

MAGIC = b"PLEDIFF1"
FORMAT_VERSION = 1


@dataclasses.dataclass
class Checkpoint:
    type: str  # denoiser | reward | lora
    config: object  # RunConfig snapshot
    params: object  # DenoiserParams / RewardModelParams / dict of LowRankDelta
    mapper: MapperParams = None
    normalizer: Normalizer = None
    extra: dict = dataclasses.field(default_factory=dict)


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _sections_for(ckpt: Checkpoint):
    if ckpt.type == "denoiser":
        secs = [("params", ckpt.params.flat)]
        if ckpt.mapper is not None:
            secs += [("mapper.w", ckpt.mapper.w), ("mapper.b", ckpt.mapper.b)]
        return secs
    if ckpt.type == "reward":
        return [("params", ckpt.params.flat)]
    if ckpt.type == "lora":
        secs = []
        for name in sorted(ckpt.params):
            d = ckpt.params[name]
            secs += [(f"{name}:B", d.b), (f"{name}:A", d.a)]
        return secs
    raise ValueError(f"unknown checkpoint type {ckpt.type!r}")


def save_checkpoint(path, ckpt: Checkpoint):
    sections = _sections_for(ckpt)
    header = {
        "format_version": FORMAT_VERSION,
        "type": ckpt.type,
        "config": run_config_to_dict(ckpt.config),
        "sections": [{"name": n, "shape": list(a.shape)} for n, a in sections],
        "extra": ckpt.extra,
    }
    if ckpt.normalizer is not None:
        header["normalizer"] = {"lo": ckpt.normalizer.lo.tolist(), "hi": ckpt.normalizer.hi.tolist()}
    if ckpt.mapper is not None:
        header["mask"] = [int(v) for v in ckpt.mapper.mask]
    hbytes = _dumps(header)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        for _, arr in sections:
            fh.write(np.asarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header["format_version"] != FORMAT_VERSION:
            raise ValueError(f"unsupported format version {header['format_version']}")
        blobs = {}
        for sec in header["sections"]:
            n = int(np.prod(sec["shape"])) if sec["shape"] else 1
            data = np.frombuffer(fh.read(4 * n), dtype="<f4").astype(np.float64)
            blobs[sec["name"]] = data.reshape(sec["shape"])

    cfg = run_config_from_dict(header["config"])
    normalizer = None
    if "normalizer" in header:
        normalizer = Normalizer(
            lo=np.asarray(header["normalizer"]["lo"], dtype=float),
            hi=np.asarray(header["normalizer"]["hi"], dtype=float),
        )
    mapper = None
    if "mask" in header:
        mapper = MapperParams(
            w=blobs["mapper.w"].copy(),
            b=blobs["mapper.b"].copy(),
            mask=np.asarray(header["mask"], dtype=bool),
        )

    kind = header["type"]
    if kind == "denoiser":
        layout, total = build_layout(cfg.model)
        flat = blobs["params"].ravel()
        if flat.size != total:
            raise ValueError(f"payload has {flat.size} parameters, layout expects {total}")
        params = DenoiserParams(cfg.model, flat.copy(), layout)
    elif kind == "reward":
        params = RewardModelParams(
            in_dim=header["extra"]["in_dim"], hidden=header["extra"]["hidden"], flat=blobs["params"].ravel().copy()
        )
    elif kind == "lora":
        params = {}
        for name in {s["name"].rsplit(":", 1)[0] for s in header["sections"]}:
            params[name] = LowRankDelta(name=name, b=blobs[f"{name}:B"].copy(), a=blobs[f"{name}:A"].copy())
    else:
        raise ValueError(f"unknown checkpoint type {kind!r}")
    return Checkpoint(kind, cfg, params, mapper, normalizer, header.get("extra", {}))
