"""Binary checkpoint container.

Layout::

    b"PNETCKPT" | u32 version | u64 manifest length | UTF-8 JSON manifest | f64 payloads

All integers and floats are little-endian.  The manifest lists tensors in
payload order with their byte offsets relative to the start of the payload.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import NormStats
from .model import ModelConfig, PeriodNet

MAGIC = b"PNETCKPT"
VERSION = 1
_NORM_MEAN = "norm.mean"
_NORM_STD = "norm.std"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    stats: NormStats
    tensors: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)
    version: int = VERSION

    @classmethod
    def from_model(cls, model: PeriodNet, stats: NormStats, meta: dict | None = None) -> "Checkpoint":
        return cls(model.cfg, stats, model.state_arrays(), dict(meta or {}))

    def build_model(self) -> PeriodNet:
        model = PeriodNet(self.config)
        model.load_arrays(self.tensors)
        return model

    def manifest_text(self) -> str:
        return self._manifest()[0]

    def _entries(self) -> list[tuple[str, np.ndarray]]:
        return [(_NORM_MEAN, self.stats.mean), (_NORM_STD, self.stats.std), *self.tensors.items()]

    def _manifest(self) -> tuple[str, list[np.ndarray]]:
        directory, payloads, offset = [], [], 0
        for name, arr in self._entries():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            directory.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes})
            payloads.append(arr)
            offset += arr.nbytes
        manifest = {
            "config": self.config.to_dict(),
            "variables": list(self.stats.names),
            "meta": self.meta,
            "tensors": directory,
        }
        return json.dumps(manifest, indent=1), payloads

    def to_bytes(self) -> bytes:
        text, payloads = self._manifest()
        raw = text.encode("utf-8")
        head = MAGIC + struct.pack("<IQ", self.version, len(raw))
        return head + raw + b"".join(p.tobytes() for p in payloads)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if blob[: len(MAGIC)] != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        pos = len(MAGIC)
        version, mlen = struct.unpack_from("<IQ", blob, pos)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
        pos += struct.calcsize("<IQ")
        manifest = json.loads(blob[pos : pos + mlen].decode("utf-8"))
        base = pos + mlen
        arrays = {}
        for entry in manifest["tensors"]:
            start = base + entry["offset"]
            if start + entry["nbytes"] > len(blob):
                raise CheckpointError(f"truncated payload for {entry['name']}")
            flat = np.frombuffer(blob, dtype="<f8", count=entry["nbytes"] // 8, offset=start)
            arrays[entry["name"]] = flat.reshape(entry["shape"]).astype(np.float64)
        stats = NormStats(arrays.pop(_NORM_MEAN), arrays.pop(_NORM_STD), list(manifest["variables"]))
        cfg_dict = manifest["config"]
        if cfg_dict.get("P_list") is not None:
            cfg_dict["P_list"] = tuple(cfg_dict["P_list"])
        ckpt = cls(ModelConfig.from_dict(cfg_dict), stats, arrays, manifest.get("meta", {}), version)
        ckpt.validate()
        return ckpt

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())

    def validate(self) -> None:
        expected = {k: v.shape for k, v in PeriodNet(self.config).named_parameters().items()}
        if list(expected) != list(self.tensors):
            missing = sorted(set(expected) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(expected))
            raise CheckpointError(f"tensor directory does not match config: missing {missing}, unexpected {extra}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise CheckpointError(f"{name}: stored shape {self.tensors[name].shape}, config expects {shape}")
        if self.stats.mean.shape != (self.config.C,) or self.stats.std.shape != (self.config.C,):
            raise CheckpointError("normalization statistics do not match the variable count")
