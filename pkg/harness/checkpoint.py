"""Versioned tensor container.

Layout: 8-byte magic, little-endian uint32 format version, little-endian uint64 manifest
length, the UTF-8 JSON manifest, then the raw little-endian float32 payload. The manifest
lists every tensor (name, shape, dtype, byte offset), the activation and FTA settings,
the config hash and a SHA-256 over the rest of the manifest followed by the payload.
"""
import hashlib
import json
import logging
import os
import struct
from collections import OrderedDict
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from models.configs import Activation, AgentConfig, FTAConfig, ValueHeadKind
from tensor_nn.network import Sequential, build_trunk, build_value_head
from utils.errors import ArchitectureMismatchError, CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b'REPLABCK'
FORMAT_VERSION = 1
TENSOR_DTYPE = '<f4'
_HEADER = struct.Struct('<8sIQ')
DIGEST_FIELD = 'sha256'
_ITEMSIZE = np.dtype(TENSOR_DTYPE).itemsize


def _encode_manifest(manifest: Dict[str, Any]) -> bytes:
    return json.dumps(manifest, sort_keys=True, separators=(',', ':')).encode('utf-8')


def content_digest(manifest: Dict[str, Any], payload: bytes) -> str:
    """SHA-256 of the canonical manifest (digest field excluded) followed by the payload"""
    digest = hashlib.sha256(_encode_manifest({k: v for k, v in manifest.items() if k != DIGEST_FIELD}))
    digest.update(payload)
    return digest.hexdigest()


def _tensor_layout(entries: Any, payload_size: int) -> List[Tuple[str, Tuple[int, ...], int, int]]:
    """(name, shape, offset, count) per entry; the entries must tile the payload back to back"""
    if not isinstance(entries, list):
        raise TypeError(f"'tensors' must be a list, got {type(entries).__name__}")
    layout, expected, names = [], 0, set()
    for entry in entries:
        name, offset = str(entry['name']), entry['offset']
        shape = tuple(int(n) for n in entry['shape'])
        if any(n < 0 for n in shape):
            raise ValueError(f"tensor {name} has a negative dimension {shape}")
        if name in names:
            raise ValueError(f"tensor {name} listed twice")
        count = int(np.prod(shape)) if shape else 1
        if not isinstance(offset, int) or offset != expected:
            raise ValueError(f"tensor {name} starts at byte {offset}, expected {expected}")
        if entry.get('nbytes', count * _ITEMSIZE) != count * _ITEMSIZE:
            raise ValueError(f"tensor {name} records {entry['nbytes']} bytes for shape {shape}")
        expected = offset + count * _ITEMSIZE
        if expected > payload_size:
            raise ValueError(f"tensor {name} runs past the end of the {payload_size}-byte payload")
        names.add(name)
        layout.append((name, shape, offset, count))
    if expected != payload_size:
        raise ValueError(f"tensors cover {expected} of {payload_size} payload bytes")
    return layout


def save_checkpoint(path: str, tensors: Dict[str, np.ndarray], kind: str = 'representation',
                    meta: Optional[Dict[str, Any]] = None) -> str:
    entries, chunks, offset = [], [], 0
    for name, value in tensors.items():
        data = np.ascontiguousarray(value, dtype=TENSOR_DTYPE).tobytes()
        entries.append({'name': name, 'shape': list(value.shape), 'dtype': 'float32', 'offset': offset,
                        'nbytes': len(data)})
        chunks.append(data)
        offset += len(data)
    payload = b''.join(chunks)
    manifest = {
        **(meta or {}),
        'kind': kind,
        'endianness': 'little',
        'tensors': entries,
    }
    manifest[DIGEST_FIELD] = content_digest(manifest, payload)
    blob = _encode_manifest(manifest)

    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = f'{path}.{os.getpid()}.tmp'
    with open(tmp, 'wb') as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, len(blob)))
        f.write(blob)
        f.write(payload)
    os.replace(tmp, path)
    logger.debug(f"Saved {kind} checkpoint with {len(entries)} tensors to {path}")
    return path


def load_checkpoint(path: str) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    if not os.path.exists(path):
        raise CheckpointError(f"Checkpoint not found: {path}")
    with open(path, 'rb') as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"Checkpoint {path} is truncated")
    magic, version, manifest_len = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path} has format version {version}, expected {FORMAT_VERSION}")
    start = _HEADER.size + manifest_len
    if start > len(raw):
        raise CheckpointError(f"Checkpoint {path} is truncated inside its manifest")
    try:
        manifest = json.loads(raw[_HEADER.size:start].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Checkpoint {path} has an unreadable manifest: {e}")
    if not isinstance(manifest, dict):
        raise CheckpointError(f"Checkpoint {path} manifest is not an object")
    payload = raw[start:]
    if content_digest(manifest, payload) != manifest.get(DIGEST_FIELD):
        raise CheckpointError(f"Checkpoint {path} fails its content digest")

    try:
        layout = _tensor_layout(manifest['tensors'], len(payload))
    except (KeyError, ValueError, TypeError) as e:
        raise CheckpointError(f"Checkpoint {path} has an inconsistent tensor manifest: {e}")
    tensors = OrderedDict()
    for name, shape, offset, count in layout:
        array = np.frombuffer(payload, dtype=TENSOR_DTYPE, count=count, offset=offset)
        tensors[name] = array.reshape(shape).astype(np.float32)
    return tensors, manifest


def value_head_path(path: str) -> str:
    root, ext = os.path.splitext(path)
    return f'{root}.value{ext or ".ckpt"}'


def check_architecture(manifest: Dict[str, Any], activation: str, fta: Dict[str, Any]) -> None:
    if manifest.get('activation') != activation:
        raise ArchitectureMismatchError(
            f"Checkpoint was trained with activation {manifest.get('activation')!r}, config asks for {activation!r}"
        )
    if activation == 'fta' and manifest.get('fta') != fta:
        raise ArchitectureMismatchError(f"Checkpoint FTA settings {manifest.get('fta')} differ from config {fta}")


def checkpoint_meta(agent: AgentConfig, **extra: Any) -> Dict[str, Any]:
    """Manifest fields that pin the architecture a checkpoint was trained with"""
    return {
        'activation': agent.activation.value,
        'fta': agent.fta.to_dict(),
        'value_head': agent.value_head.value,
        'value_hidden': agent.value_hidden,
        **extra,
    }


def save_representation(path: str, trunk_state: Dict[str, np.ndarray], value_state: Dict[str, np.ndarray],
                        meta: Dict[str, Any]) -> str:
    """Frozen trunk at ``path`` and the value head trained with it beside it"""
    save_checkpoint(path, trunk_state, kind='representation', meta=meta)
    save_checkpoint(value_head_path(path), value_state, kind='value_head', meta=meta)
    return path


def state_digest(tensors: Dict[str, np.ndarray]) -> str:
    digest = hashlib.sha256()
    for name in sorted(tensors):
        digest.update(name.encode('utf-8'))
        digest.update(np.ascontiguousarray(tensors[name], dtype=TENSOR_DTYPE).tobytes())
    return digest.hexdigest()


def restore_representation(path: str, rng: np.random.Generator,
                           n_actions: int = 4) -> Tuple[Sequential, Sequential, Dict[str, Any]]:
    """Rebuild (trunk, value head, manifest) from a checkpoint and its value-head sibling"""
    trunk_state, manifest = load_checkpoint(path)
    head_path = value_head_path(path)
    if not os.path.exists(head_path):
        raise CheckpointError(f"Value head checkpoint missing: {head_path}")
    value_state, _ = load_checkpoint(head_path)
    try:
        activation = Activation(manifest['activation'])
        fta = FTAConfig.from_dict(manifest['fta'])
        head_kind = ValueHeadKind(manifest.get('value_head', ValueHeadKind.NONLINEAR.value))
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"Checkpoint {path} manifest lacks a usable architecture: {e}")
    trunk = build_trunk(activation, fta, rng)
    trunk.load_state_dict(trunk_state)
    value = build_value_head(head_kind, activation.feature_width(fta.k), rng, manifest.get('value_hidden', 64),
                             n_actions)
    value.load_state_dict(value_state)
    return trunk, value, manifest
