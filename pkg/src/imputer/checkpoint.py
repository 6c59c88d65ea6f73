"""
Checkpoint files.

Layout: the magic bytes b"IMPX", the format version as a little-endian uint32,
a little-endian uint32 byte length followed by a UTF-8 JSON metadata block
(model config, optimizer settings, run extras and the tensor manifest), then
the raw little-endian float32 payload of every tensor in manifest order.
float64 models lose precision on save; they load back as float64.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Any

import numpy as np

from imputer.errors import ConfigurationError, ImputerError
from imputer.model import ModelConfig, ModelParams, expected_shapes
from imputer.optim import OptimizerState

MAGIC = b"IMPX"
FORMAT_VERSION = 1
PAYLOAD_DTYPE = np.dtype("<f4")
_HEADER = struct.Struct("<4sII")


class Checkpoint:
    class CorruptFile(ImputerError):
        exit_code = 5

    class VersionMismatch(ImputerError):
        exit_code = 6

    class ShapeMismatch(ImputerError):
        exit_code = 7

    def __init__(
        self,
        params: ModelParams,
        optimizer_state: OptimizerState | None = None,
        extra: dict[str, Any] | None = None,
    ):
        self.params = params
        self.optimizer_state = optimizer_state
        self.extra = extra or {}

    @property
    def step(self) -> int:
        return self.optimizer_state.step if self.optimizer_state else 0

    def _manifest(self) -> list[tuple[str, np.ndarray]]:
        tensors = list(self.params.items())
        if self.optimizer_state is not None:
            for slot, values in self.optimizer_state.slots.items():
                tensors.extend(
                    (f"optimizer/{slot}/{name}", value) for name, value in values.items()
                )
        return tensors

    def save(self, path: Path):
        tensors = self._manifest()
        if self.params.config.dtype != "float32":
            logging.warning(
                f"{self.__class__.__name__} - Parameters are {self.params.config.dtype}; "
                "the checkpoint stores float32"
            )
        metadata = {
            "model_config": self.params.config.to_dict(),
            "optimizer": None
            if self.optimizer_state is None
            else {"kind": self.optimizer_state.kind, "step": self.optimizer_state.step},
            "extra": self.extra,
            "tensors": [[name, list(value.shape)] for name, value in tensors],
        }
        block = json.dumps(metadata, sort_keys=True).encode("utf-8")
        with open(path, "wb") as f:
            f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, len(block)))
            f.write(block)
            for _, value in tensors:
                f.write(np.ascontiguousarray(value, dtype=PAYLOAD_DTYPE).tobytes())
        logging.info(f"Wrote checkpoint to {Path(path).name}")

    @classmethod
    def load(cls, path: Path) -> "Checkpoint":
        try:
            data = Path(path).read_bytes()
        except OSError as err:
            raise cls.CorruptFile(f"Cannot read checkpoint {path}: {err}") from None

        if len(data) < _HEADER.size:
            raise cls.CorruptFile(f"Checkpoint {path} is truncated")
        magic, version, block_length = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise cls.CorruptFile(f"{path} is not a checkpoint (bad magic {magic!r})")
        if version != FORMAT_VERSION:
            raise cls.VersionMismatch(
                f"Checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
            )
        offset = _HEADER.size
        try:
            metadata = json.loads(data[offset : offset + block_length].decode("utf-8"))
            config = ModelConfig(**metadata["model_config"])
            manifest = [(name, tuple(shape)) for name, shape in metadata["tensors"]]
        except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as err:
            raise cls.CorruptFile(f"Checkpoint metadata is unreadable: {err}") from None
        except ConfigurationError as err:
            raise cls.CorruptFile(f"Checkpoint holds an invalid model config: {err}") from None
        offset += block_length

        expected_size = sum(int(np.prod(shape)) for _, shape in manifest) * PAYLOAD_DTYPE.itemsize
        if len(data) - offset != expected_size:
            raise cls.CorruptFile(
                f"Checkpoint payload has {len(data) - offset} bytes, manifest needs {expected_size}"
            )

        tensors = {}
        for name, shape in manifest:
            size = int(np.prod(shape))
            tensors[name] = np.frombuffer(
                data, dtype=PAYLOAD_DTYPE, count=size, offset=offset
            ).reshape(shape)
            offset += size * PAYLOAD_DTYPE.itemsize

        shapes = expected_shapes(config)
        params = {}
        for name, shape in shapes.items():
            if name not in tensors:
                raise cls.ShapeMismatch(f"Checkpoint is missing parameter {name}")
            if tensors[name].shape != shape:
                raise cls.ShapeMismatch(
                    f"Parameter {name} has shape {tensors[name].shape}, config requires {shape}"
                )
            params[name] = tensors[name].astype(config.np_dtype)

        optimizer_state = None
        if metadata.get("optimizer"):
            slots: dict[str, dict[str, np.ndarray]] = {}
            for name, value in tensors.items():
                if not name.startswith("optimizer/"):
                    continue
                _, slot, param_name = name.split("/", 2)
                if param_name not in shapes or value.shape != shapes[param_name]:
                    raise cls.ShapeMismatch(f"Optimizer tensor {name} does not match the model")
                slots.setdefault(slot, {})[param_name] = value.astype(config.np_dtype)
            optimizer_state = OptimizerState(
                kind=metadata["optimizer"]["kind"],
                step=int(metadata["optimizer"]["step"]),
                slots=slots,
            )

        logging.info(f"Loaded checkpoint {Path(path).name}")
        return cls(ModelParams(config, params), optimizer_state, metadata.get("extra") or {})
