"""
Checkpoint serialization
Сохранение и загрузка параметров сети: заголовок JSON + float64 массивы
"""

import json
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from growthcast.core.exceptions import CheckpointError, ShapeError
from growthcast.core.logging import get_logger
from growthcast.models.schemas import (
    LSTM_GATES,
    ArraySpec,
    CheckpointHeader,
    FeatureScaler,
    ModelConfig,
    NetworkParams,
)
from growthcast.services.nn import check_params
from growthcast.utils.helpers import atomic_write_bytes

logger = get_logger(__name__)

MAGIC = b"GROWTHCAST-CKPT\n"
FORMAT_VERSION = 1
SUPPORTED_VERSIONS = (1,)


def expected_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Имена и формы массивов в объявленном порядке"""
    h = config.hidden_size
    shapes: Dict[str, Tuple[int, ...]] = {}
    for k in range(config.num_layers):
        width = h + config.layer_input_size(k)
        if config.cell_kind == "lstm":
            for gate in LSTM_GATES:
                shapes[f"layer{k}.w_{gate}"] = (h, width)
            for gate in LSTM_GATES:
                shapes[f"layer{k}.b_{gate}"] = (h,)
        else:
            shapes[f"layer{k}.w_h"] = (h, width)
            shapes[f"layer{k}.b_h"] = (h,)
    shapes["head.weight"] = (config.output_len, config.head_input_size)
    shapes["head.bias"] = (config.output_len,)
    return shapes


def encode_checkpoint(
    params: NetworkParams, config: ModelConfig, seed: int, scaler: Optional[FeatureScaler] = None
) -> bytes:
    """Сериализовать параметры в байты (детерминированно)"""
    check_params(params, config)
    arrays = params.arrays()
    header = CheckpointHeader(
        format_version=FORMAT_VERSION,
        seed=seed,
        model=config,
        scaler=scaler,
        arrays=[ArraySpec(name=name, shape=list(array.shape)) for name, array in arrays.items()],
    )
    payload = b"".join(np.ascontiguousarray(array, dtype="<f8").tobytes() for array in arrays.values())
    return MAGIC + header.model_dump_json().encode("utf-8") + b"\n" + payload


def save_checkpoint(
    path: Union[str, Path],
    params: NetworkParams,
    config: ModelConfig,
    seed: int,
    scaler: Optional[FeatureScaler] = None,
) -> Path:
    path = Path(path)
    atomic_write_bytes(path, encode_checkpoint(params, config, seed, scaler))
    logger.info("checkpoint written", path=str(path), seed=seed)
    return path


def decode_checkpoint(
    data: bytes, expected: Optional[ModelConfig] = None
) -> Tuple[NetworkParams, CheckpointHeader]:
    """Разобрать чекпоинт; несовпадение форм или версии - CheckpointError"""
    if not data.startswith(MAGIC):
        raise CheckpointError("not a growthcast checkpoint (bad magic)")
    body = data[len(MAGIC):]
    newline = body.find(b"\n")
    if newline < 0:
        raise CheckpointError("checkpoint header is truncated")

    try:
        raw_header = json.loads(body[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as error:
        raise CheckpointError(f"checkpoint header is not valid JSON: {error}") from None
    version = raw_header.get("format_version") if isinstance(raw_header, dict) else None
    if version not in SUPPORTED_VERSIONS:
        raise CheckpointError(
            f"checkpoint format version {version!r} is not supported (expected one of {SUPPORTED_VERSIONS})"
        )
    try:
        header = CheckpointHeader.model_validate(raw_header)
    except ValidationError as error:
        raise CheckpointError(f"checkpoint v{version} header is invalid: {error.errors()[0]['msg']}") from None

    if expected is not None and expected.architecture() != header.model.architecture():
        raise CheckpointError(
            f"checkpoint v{version} architecture {header.model.architecture()} "
            f"does not match configuration {expected.architecture()}"
        )

    shapes = expected_shapes(header.model)
    manifest = {spec.name: tuple(spec.shape) for spec in header.arrays}
    if list(manifest) != list(shapes) or manifest != shapes:
        raise CheckpointError(f"checkpoint v{version} array manifest does not match its model configuration")

    payload = body[newline + 1:]
    needed = 8 * sum(int(np.prod(shape)) for shape in shapes.values())
    if len(payload) != needed:
        raise CheckpointError(f"checkpoint v{version} payload has {len(payload)} bytes, expected {needed}")

    arrays: Dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in shapes.items():
        count = int(np.prod(shape))
        arrays[name] = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += 8 * count

    try:
        params = NetworkParams.from_arrays(header.model.cell_kind, arrays)
        check_params(params, header.model)
    except (ValidationError, ShapeError) as error:
        raise CheckpointError(f"checkpoint v{version} parameters are inconsistent: {error}") from None
    return params, header


def load_checkpoint(
    path: Union[str, Path], expected: Optional[ModelConfig] = None
) -> Tuple[NetworkParams, CheckpointHeader]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    params, header = decode_checkpoint(path.read_bytes(), expected)
    logger.info("checkpoint loaded", path=str(path), seed=header.seed, cell=header.model.cell_kind)
    return params, header


def collect_checkpoints(paths: List[Union[str, Path]]) -> List[Path]:
    """Файлы чекпоинтов из списка путей (каталоги раскрываются в *.ckpt)"""
    found: List[Path] = []
    for entry in paths:
        entry = Path(entry)
        if entry.is_dir():
            found.extend(sorted(entry.glob("*.ckpt")))
        else:
            found.append(entry)
    return found
