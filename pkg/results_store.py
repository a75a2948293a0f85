import asyncio
import csv
import hashlib
import io
import json
import logging
import os
import time
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import aiofiles

from errors import ConfigurationError

logger = logging.getLogger(__name__)

Artifact = Union[str, Tuple[Sequence[str], Iterable[Sequence]], List[dict], dict]


def render_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    """CSV text with floats written by repr, so equal numbers always give equal bytes"""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    return buffer.getvalue()


def render_jsonl(records: Iterable[dict]) -> str:
    return "".join(json.dumps(record, sort_keys=True, default=_json_default) + "\n" for record in records)


def _json_default(value):
    if hasattr(value, "tolist"):
        return value.tolist()
    if hasattr(value, "value"):
        return value.value
    return str(value)


def checksum(text: str) -> str:
    return hashlib.md5(text.encode("utf-8")).hexdigest()


class ResultsStore:
    """Per-run output directory; every artifact gets a ``.meta`` sidecar with timestamp and md5"""

    def __init__(self, output_dir: str):
        self.output_dir = output_dir
        try:
            os.makedirs(self.output_dir, exist_ok=True)
        except OSError as e:
            raise ConfigurationError(f"Cannot create output directory {output_dir!r}: {e}")
        self.written: List[str] = []
        self.checksums: Dict[str, str] = {}

    def _path(self, filename: str) -> str:
        return os.path.join(self.output_dir, filename)

    def _meta_path(self, filename: str) -> str:
        return os.path.join(self.output_dir, f"{filename}.meta")

    async def save_text(self, filename: str, text: str) -> str:
        path = self._path(filename)
        try:
            async with aiofiles.open(path, "w", encoding="utf-8", newline="") as f:
                await f.write(text)
            metadata = {"timestamp": time.time(), "checksum": checksum(text), "bytes": len(text.encode("utf-8"))}
            async with aiofiles.open(self._meta_path(filename), "w") as f:
                await f.write(json.dumps(metadata, indent=2))
        except OSError as e:
            raise ConfigurationError(f"Cannot write {path}: {e}")
        self.written.append(path)
        self.checksums[filename] = metadata["checksum"]
        logger.debug(f"💾 Saved {path}")
        return path

    async def save_table(self, filename: str, header: Sequence[str], rows: Iterable[Sequence]) -> str:
        return await self.save_text(filename, render_csv(header, rows))

    async def save_jsonl(self, filename: str, records: Iterable[dict]) -> str:
        return await self.save_text(filename, render_jsonl(records))

    async def save_json(self, filename: str, data: dict) -> str:
        return await self.save_text(filename, json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")

    async def load_text(self, filename: str) -> Optional[str]:
        """Artifact contents, or None when missing or when the checksum in its sidecar disagrees"""
        path = self._path(filename)
        if not os.path.exists(path):
            return None
        async with aiofiles.open(path, "r", encoding="utf-8", newline="") as f:
            text = await f.read()
        meta_path = self._meta_path(filename)
        if os.path.exists(meta_path):
            async with aiofiles.open(meta_path, "r") as f:
                metadata = json.loads(await f.read())
            if metadata.get("checksum") != checksum(text):
                logger.warning(f"⚠️ Checksum mismatch for {path}")
                return None
        return text

    async def save(self, filename: str, content: Artifact) -> str:
        """Text as is, a (header, rows) pair as CSV, a list of dicts as JSON lines, a dict as one JSON document"""
        if isinstance(content, str):
            return await self.save_text(filename, content)
        if isinstance(content, tuple):
            return await self.save_table(filename, *content)
        if isinstance(content, list):
            return await self.save_jsonl(filename, content)
        if isinstance(content, dict):
            return await self.save_json(filename, content)
        raise ConfigurationError(f"Cannot write {type(content).__name__} to {filename}")

    def write_all(self, artifacts: Dict[str, Artifact]) -> List[str]:
        """Write {filename: content} concurrently and return the paths in the given order"""
        async def _write():
            return await asyncio.gather(*(self.save(name, content) for name, content in artifacts.items()))
        return list(asyncio.run(_write()))

    def read(self, filename: str) -> Optional[str]:
        return asyncio.run(self.load_text(filename))
