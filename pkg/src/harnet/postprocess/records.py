"""Detection interchange file: ``image_id,class_id,score,x1,y1,x2,y2`` per line.

Reals are written with ``repr`` (shortest round-tripping form), so reading
a file and writing it back reproduces it byte for byte.
"""

from __future__ import annotations

from pathlib import Path

from ..errors import FormatError, IoError
from ..structures import Detection


def format_detections(dets: dict) -> str:
    """Records grouped by image in the mapping's order."""
    lines = []
    for image_id in dets:
        for d in dets[image_id]:
            lines.append(",".join([str(int(image_id)), str(d.class_id), repr(d.score)] + [repr(v) for v in d.box]))
    return "".join(line + "\n" for line in lines)


def parse_detections(text: str) -> dict:
    out = {}
    offset = 0
    for lineno, line in enumerate(text.splitlines(keepends=True), 1):
        fields = line.rstrip("\n").split(",")
        try:
            if len(fields) != 7:
                raise ValueError(f"expected 7 fields, got {len(fields)}")
            image_id, class_id = int(fields[0]), int(fields[1])
            score, *box = (float(v) for v in fields[2:])
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}", offset) from None
        out.setdefault(image_id, []).append(Detection(box, score, class_id))
        offset += len(line.encode("utf-8"))
    return out


def write_detections(path, dets: dict) -> None:
    try:
        Path(path).write_text(format_detections(dets))
    except OSError as exc:
        raise IoError(f"cannot write detections to {path}: {exc}") from None


def read_detections(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read detections from {path}: {exc}") from None
    return parse_detections(text)
