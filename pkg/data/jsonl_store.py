"""JSONL reading and writing for news records (gzip when the path ends in ``.gz``)."""

import gzip
import hashlib
import io
import json
import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Iterable, Iterator, List, TextIO, Union

from pydantic import ValidationError

from models.data_schemas import NewsRecord
from utils.errors import DataError, MalformedLineError, MissingKeyError

logger = logging.getLogger(__name__)

REQUIRED_KEYS = ("id", "text", "image", "label")
IMAGE_KEYS = ("height", "width", "values")

PathLike = Union[str, Path]


@contextmanager
def _open_text(path: Path, mode: str) -> Iterator[TextIO]:
    if path.suffix == ".gz":
        raw = open(path, mode + "b")
        # mtime=0 keeps repeated writes byte-identical
        compressed = gzip.GzipFile(filename="", mode=mode + "b", fileobj=raw, mtime=0)
        handle = io.TextIOWrapper(compressed, encoding="utf-8", newline="\n")
        try:
            yield handle
        finally:
            handle.close()
            raw.close()
    else:
        with open(path, mode, encoding="utf-8", newline="\n") as handle:
            yield handle


def write_jsonl(records: Iterable[NewsRecord], path: PathLike) -> int:
    """Write one JSON object per line.

    Args:
        records: Records to write
        path: Destination; ``.gz`` selects gzip compression

    Returns:
        Number of records written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with _open_text(path, "w") as handle:
        for record in records:
            handle.write(json.dumps(record.to_json_dict(), separators=(",", ":")))
            handle.write("\n")
            count += 1
    logger.debug(f"wrote {count} records to {path}")
    return count


def _parse_line(path: str, line_number: int, line: str) -> NewsRecord:
    try:
        row = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedLineError(path, line_number, f"invalid JSON ({exc.msg})") from exc
    if not isinstance(row, dict):
        raise MalformedLineError(path, line_number, "expected a JSON object")
    for key in REQUIRED_KEYS:
        if key not in row:
            raise MissingKeyError(path, line_number, key)

    image = row["image"]
    if not isinstance(image, dict):
        raise MalformedLineError(path, line_number, "image must be an object with height, width and values")
    for key in IMAGE_KEYS:
        if key not in image:
            raise MissingKeyError(path, line_number, f"image.{key}")
    height, width, values = image["height"], image["width"], image["values"]
    if not isinstance(values, list) or not isinstance(height, int) or not isinstance(width, int) \
            or height <= 0 or width <= 0 or len(values) != height * width:
        raise MalformedLineError(path, line_number, f"image values do not match {height}x{width}")

    try:
        grid = [values[i * width:(i + 1) * width] for i in range(height)]
        return NewsRecord(
            id=row["id"],
            text=row["text"],
            image=grid,
            label=row["label"],
            consistency=row.get("consistency"),
        )
    except (ValidationError, ValueError, TypeError) as exc:
        reason = exc.errors()[0]["msg"] if isinstance(exc, ValidationError) else str(exc)
        raise MalformedLineError(path, line_number, reason) from exc


def read_jsonl(path: PathLike) -> List[NewsRecord]:
    """Read records written by ``write_jsonl``; blank lines are skipped.

    Raises:
        DataError: The file is missing or holds duplicate ids
        MalformedLineError: A line is not a valid record (carries its number)
        MissingKeyError: A required key is absent (names the key)
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"data file not found: {path}")
    records: List[NewsRecord] = []
    seen = set()
    with _open_text(path, "r") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            record = _parse_line(str(path), line_number, line)
            if record.id in seen:
                raise MalformedLineError(str(path), line_number, f"duplicate id '{record.id}'")
            seen.add(record.id)
            records.append(record)
    logger.debug(f"read {len(records)} records from {path}")
    return records


def file_sha256(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
