"""
文件存储基类模块

原子写入（临时文件 + 重命名）、git 风格内容哈希，以及基于 JSON 文件的仓库基类
"""
from __future__ import annotations

import hashlib
import os
import tempfile
from pathlib import Path
from typing import Generic, Optional, Type, TypeVar

from pydantic import BaseModel

ModelType = TypeVar("ModelType", bound=BaseModel)


def atomic_write_bytes(path: Path | str, data: bytes) -> Path:
    """写入同目录临时文件后 os.replace，读者不会看到半个文件"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path: Path | str, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def git_blob_sha1(data: bytes) -> str:
    """与 git hash-object 相同的 blob 哈希"""
    header = f"blob {len(data)}\0".encode("utf-8")
    return hashlib.sha1(header + data).hexdigest()


def file_sha1(path: Path | str) -> str:
    return git_blob_sha1(Path(path).read_bytes())


class JsonRepository(Generic[ModelType]):
    """
    JSON 文件仓库基类

    一个仓库管理根目录下按名字存放的 pydantic 模型文件
    """

    def __init__(self, model: Type[ModelType], root: Path | str):
        self.model = model
        self.root = Path(root)

    def path(self, name: str) -> Path:
        return self.root / name

    def exists(self, name: str) -> bool:
        return self.path(name).exists()

    def get(self, name: str) -> Optional[ModelType]:
        """读取并校验；文件不存在返回 None"""
        path = self.path(name)
        if not path.exists():
            return None
        return self.model.model_validate_json(path.read_text(encoding="utf-8"))

    def save(self, name: str, obj: ModelType) -> Path:
        """原子写入"""
        return atomic_write_text(self.path(name), obj.model_dump_json(indent=2) + "\n")

    def delete(self, name: str) -> bool:
        path = self.path(name)
        if not path.exists():
            return False
        path.unlink()
        return True
