"""
Форматы артефактов на диске

* бинарная матрица: MAGIC, длина заголовка (<Q), YAML-заголовок, данные
  little-endian float64 row-major;
* текстовый дамп именованных матриц с размерностями и sha256;
* YAML-манифесты и CSV-кривые.
"""
import hashlib
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Tuple, Union

import numpy as np
import yaml

from errors import ArtifactCorrupted

logger = logging.getLogger(__name__)

MAGIC = b"SAMPCMAT1\n"
PathLike = Union[str, Path]


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def array_checksum(array: np.ndarray) -> str:
    return sha256_bytes(np.ascontiguousarray(array, dtype="<f8").tobytes())


def to_plain(value: Any) -> Any:
    """Привести numpy-типы к обычным для yaml.safe_dump"""
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, Mapping):
        return {str(k): to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    return value


def dump_yaml(data: Mapping[str, Any]) -> str:
    return yaml.safe_dump(to_plain(dict(data)), sort_keys=True, allow_unicode=True)


def write_yaml(path: PathLike, data: Mapping[str, Any]) -> str:
    """Записать YAML и вернуть sha256 содержимого"""
    text = dump_yaml(data)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")
    return sha256_bytes(text.encode("utf-8"))


def read_yaml(path: PathLike) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        return yaml.safe_load(f) or {}


def write_matrix(path: PathLike, array: np.ndarray, meta: Mapping[str, Any] = None) -> str:
    """
    Записать матрицу в бинарном формате

    Args:
        path: Путь к файлу
        array: Массив (приводится к float64)
        meta: Дополнительные поля заголовка

    Returns:
        sha256 полезной нагрузки
    """
    data = np.ascontiguousarray(array, dtype="<f8")
    payload = data.tobytes()
    checksum = sha256_bytes(payload)
    header = dict(meta or {})
    header.update({"shape": list(data.shape), "dtype": "<f8", "order": "C", "sha256": checksum})
    header_bytes = dump_yaml(header).encode("utf-8")

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        f.write(payload)
    return checksum


def read_matrix(path: PathLike) -> Tuple[np.ndarray, Dict[str, Any]]:
    """Прочитать матрицу, проверив магию и контрольную сумму"""
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(MAGIC):
        raise ArtifactCorrupted(f"{path}: неизвестный формат файла")
    offset = len(MAGIC)
    (header_len,) = struct.unpack_from("<Q", raw, offset)
    offset += 8
    header = yaml.safe_load(raw[offset:offset + header_len].decode("utf-8"))
    payload = raw[offset + header_len:]
    if sha256_bytes(payload) != header.get("sha256"):
        raise ArtifactCorrupted(f"{path}: контрольная сумма не совпадает")
    shape = tuple(header["shape"])
    array = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
    return array, header


def dump_matrices_text(matrices: Mapping[str, np.ndarray], scalars: Mapping[str, float]) -> str:
    """
    Текстовый дамп: строки 'scalar name value', блоки 'matrix name rows cols'
    и строки значений (repr точно восстанавливается), в конце 'sha256 <hex>'
    """
    lines: List[str] = []
    for name in sorted(scalars):
        lines.append(f"scalar {name} {float(scalars[name])!r}")
    for name in sorted(matrices):
        m = np.atleast_2d(np.asarray(matrices[name], dtype=np.float64))
        lines.append(f"matrix {name} {m.shape[0]} {m.shape[1]}")
        for row in m:
            lines.append(" ".join(repr(float(v)) for v in row))
    body = "\n".join(lines) + "\n"
    return body + f"sha256 {sha256_bytes(body.encode('utf-8'))}\n"


def parse_matrices_text(text: str) -> Tuple[Dict[str, np.ndarray], Dict[str, float], str]:
    """Обратная операция к dump_matrices_text; возвращает и контрольную сумму"""
    lines = text.splitlines()
    if not lines or not lines[-1].startswith("sha256 "):
        raise ArtifactCorrupted("нет строки контрольной суммы")
    checksum = lines[-1].split()[1]
    body = "\n".join(lines[:-1]) + "\n"
    if sha256_bytes(body.encode("utf-8")) != checksum:
        raise ArtifactCorrupted("контрольная сумма не совпадает")

    matrices: Dict[str, np.ndarray] = {}
    scalars: Dict[str, float] = {}
    i = 0
    body_lines = lines[:-1]
    while i < len(body_lines):
        parts = body_lines[i].split()
        if parts[0] == "scalar":
            scalars[parts[1]] = float(parts[2])
            i += 1
        elif parts[0] == "matrix":
            name, rows, cols = parts[1], int(parts[2]), int(parts[3])
            values = [[float(v) for v in body_lines[i + 1 + r].split()] for r in range(rows)]
            matrices[name] = np.array(values, dtype=np.float64).reshape(rows, cols)
            i += 1 + rows
        else:
            raise ArtifactCorrupted(f"неожиданная строка: {body_lines[i]}")
    return matrices, scalars, checksum


def write_curves_csv(path: PathLike, columns: Mapping[str, Iterable[float]]) -> None:
    """CSV с заголовком, одна серия на столбец (короткие серии дополняются пустыми)"""
    names = list(columns)
    series = [list(columns[n]) for n in names]
    length = max((len(s) for s in series), default=0)
    rows = [",".join(names)]
    for i in range(length):
        rows.append(",".join(repr(float(s[i])) if i < len(s) else "" for s in series))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")
