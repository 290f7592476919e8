"""
Checkpoint files: a JSON document holding the model config, every parameter
as a base64 little-endian payload with its explicit shape, training metadata
and, for resumable runs, the training state.
"""
import json
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from core.exceptions import (
    CheckpointMismatchError, CorruptCheckpointError, InvalidConfigError, UnknownVersionError,
)
from core.utils import decode_array, encode_array
from policy.model import ModelConfig, parameter_shapes, params_from_arrays

logger = logging.getLogger(__name__)

FORMAT = 'kemeny-checkpoint'
VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict
    metadata: dict = field(default_factory=dict)
    training_state: dict = None

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype


def checkpoint_document(checkpoint: Checkpoint) -> dict:
    return {
        'format': FORMAT,
        'version': VERSION,
        'config': checkpoint.config.to_dict(),
        'dtype': np.dtype(checkpoint.dtype).name,
        'parameters': {name: encode_array(param.data) for name, param in sorted(checkpoint.params.items())},
        'metadata': checkpoint.metadata,
        'training_state': checkpoint.training_state,
    }


def save_checkpoint(checkpoint: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # atomic replace
    partial = path.with_name(path.name + '.partial')
    partial.write_text(json.dumps(checkpoint_document(checkpoint), sort_keys=True, indent=1) + '\n')
    partial.replace(path)
    logger.debug('Wrote checkpoint %s', path)
    return path


def _config_from(document) -> ModelConfig:
    known = {item.name for item in fields(ModelConfig)}
    raw = document.get('config')
    if not isinstance(raw, dict) or set(raw) - known:
        raise CorruptCheckpointError('checkpoint config is missing or has unknown fields')
    try:
        return ModelConfig(**raw)
    except (InvalidConfigError, TypeError) as error:
        raise CorruptCheckpointError(f"checkpoint config is invalid: {error}") from error


def checkpoint_from_document(document, expected_config: ModelConfig = None) -> Checkpoint:
    if not isinstance(document, dict) or document.get('format') != FORMAT:
        raise CorruptCheckpointError('not a checkpoint document')
    if document.get('version') != VERSION:
        raise UnknownVersionError(f"checkpoint version {document.get('version')!r} is not supported "
                                  f"(expected {VERSION})")
    config = _config_from(document)
    if expected_config is not None and config != expected_config:
        differing = sorted(name for name, value in config.to_dict().items()
                           if expected_config.to_dict()[name] != value)
        raise CheckpointMismatchError(f"checkpoint config differs from the requested one in {', '.join(differing)}")

    expected_shapes = parameter_shapes(config)
    payload = document.get('parameters')
    if not isinstance(payload, dict):
        raise CorruptCheckpointError('checkpoint has no parameters')
    if set(payload) != set(expected_shapes):
        missing = sorted(set(expected_shapes) - set(payload))
        extra = sorted(set(payload) - set(expected_shapes))
        raise CheckpointMismatchError(f"parameter names do not match the config (missing {missing}, extra {extra})")
    arrays = {}
    for name, encoded in payload.items():
        try:
            array = decode_array(encoded)
        except (KeyError, TypeError, ValueError) as error:
            raise CorruptCheckpointError(f"parameter {name} is unreadable: {error}") from error
        if array.shape != expected_shapes[name]:
            raise CheckpointMismatchError(f"parameter {name} has shape {array.shape}, "
                                          f"config needs {expected_shapes[name]}")
        arrays[name] = array
    return Checkpoint(
        config=config,
        params=params_from_arrays(arrays),
        metadata=document.get('metadata') or {},
        training_state=document.get('training_state'),
    )


def load_checkpoint(path, expected_config: ModelConfig = None) -> Checkpoint:
    try:
        text = Path(path).read_text()
    except UnicodeDecodeError as error:
        raise CorruptCheckpointError(f"{path} is not a text document") from error
    try:
        document = json.loads(text)
    except json.JSONDecodeError as error:
        raise CorruptCheckpointError(f"{path} is truncated or corrupt: {error}") from error
    return checkpoint_from_document(document, expected_config)
