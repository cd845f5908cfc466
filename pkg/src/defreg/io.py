"""File formats: binary PGM (P5), raw float32 + JSON sidecar, pair manifests.

* Intensity images: 8- or 16-bit PGM (quantized), or lossless raw
  little-endian float32 with a ``{"width","height","spacing"}`` sidecar.
* Label maps: PGM with the integer codes stored verbatim.
* Fields and control grids: raw float32 with a ``kind`` tag in the sidecar.

A ``foo.raw`` payload always pairs with a ``foo.json`` sidecar.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .bspline import ControlGrid, DisplacementField
from .errors import DomainError
from .image import Image2D, LabelMap

__all__ = [
    "write_pgm", "read_pgm", "write_label_pgm", "read_label_pgm",
    "write_raw_image", "read_raw_image", "write_field", "read_field",
    "write_grid", "read_grid", "write_manifest", "read_manifest",
]


# ---------------------------------------------------------------------------
# PGM (P5)


def _write_p5(path, array_uint: np.ndarray, maxval: int):
    h, w = array_uint.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    if maxval < 256:
        payload = array_uint.astype(np.uint8).tobytes()
    else:
        payload = array_uint.astype(">u2").tobytes()  # 16-bit PGM is big-endian
    Path(path).write_bytes(header + payload)


def _read_p5(path):
    blob = Path(path).read_bytes()
    # header: magic, width, height, maxval separated by whitespace/comments
    pos = 0
    fields = []
    while len(fields) < 4:
        m = re.match(rb"(\s*(#[^\n]*\n)?)*([^\s#]+)", blob[pos:])
        if not m:
            raise DomainError(f"{path}: truncated PGM header")
        fields.append(m.group(3))
        pos += m.end()
    if fields[0] != b"P5":
        raise DomainError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    pos += 1  # single whitespace byte after maxval
    if maxval < 256:
        data = np.frombuffer(blob, dtype=np.uint8, count=w * h, offset=pos)
    else:
        data = np.frombuffer(blob, dtype=">u2", count=w * h, offset=pos)
    return data.reshape(h, w).astype(np.int64), maxval


def write_pgm(path, img: Image2D, maxval: int = 255):
    """Quantize a [0,1] intensity image to an 8- or 16-bit PGM."""
    if maxval not in (255, 65535):
        raise DomainError("maxval must be 255 or 65535")
    q = np.rint(np.clip(img.data, 0.0, 1.0) * maxval).astype(np.int64)
    _write_p5(path, q, maxval)


def read_pgm(path, spacing: float = 1.0) -> Image2D:
    data, maxval = _read_p5(path)
    return Image2D(data.astype(np.float64) / maxval, spacing=spacing)


def write_label_pgm(path, lab: LabelMap):
    maxval = 255 if lab.num_classes <= 256 else 65535
    _write_p5(path, lab.labels.astype(np.int64), maxval)


def read_label_pgm(path, num_classes: int | None = None) -> LabelMap:
    data, _ = _read_p5(path)
    if num_classes is None:
        num_classes = int(data.max()) + 1
    return LabelMap(data, num_classes=num_classes)


# ---------------------------------------------------------------------------
# raw float32 + JSON sidecar


def _sidecar_path(raw_path) -> Path:
    return Path(raw_path).with_suffix(".json")


def _write_raw(raw_path, array: np.ndarray, sidecar: dict):
    Path(raw_path).write_bytes(array.astype("<f4").tobytes())
    _sidecar_path(raw_path).write_text(json.dumps(sidecar, sort_keys=True) + "\n")


def _read_raw(raw_path):
    sidecar = json.loads(_sidecar_path(raw_path).read_text())
    data = np.frombuffer(Path(raw_path).read_bytes(), dtype="<f4").astype(np.float64)
    return data, sidecar


def write_raw_image(raw_path, img: Image2D):
    _write_raw(raw_path, img.data,
               {"width": img.width, "height": img.height, "spacing": img.spacing})


def read_raw_image(raw_path) -> Image2D:
    data, sc = _read_raw(raw_path)
    return Image2D(data.reshape(sc["height"], sc["width"]), spacing=sc.get("spacing", 1.0))


def write_field(raw_path, fld: DisplacementField):
    _write_raw(raw_path, fld.u,
               {"kind": "field", "width": fld.width, "height": fld.height,
                "spacing_px": fld.spacing})


def read_field(raw_path) -> DisplacementField:
    data, sc = _read_raw(raw_path)
    if sc.get("kind") != "field":
        raise DomainError(f"{raw_path}: sidecar kind is not 'field'")
    return DisplacementField(data.reshape(sc["height"], sc["width"], 2),
                             spacing=sc.get("spacing_px", 1.0))


def write_grid(raw_path, grid: ControlGrid):
    _write_raw(raw_path, grid.coeffs,
               {"kind": "grid", "cols": grid.cols, "rows": grid.rows,
                "spacing_px": grid.spacing_px})


def read_grid(raw_path) -> ControlGrid:
    data, sc = _read_raw(raw_path)
    if sc.get("kind") != "grid":
        raise DomainError(f"{raw_path}: sidecar kind is not 'grid'")
    return ControlGrid(sc["spacing_px"], data.reshape(sc["rows"], sc["cols"], 2))


# ---------------------------------------------------------------------------
# manifests


def write_manifest(path, entries: list):
    """Entries are dicts with fixed/moving image and label paths (+ optional gt field)."""
    Path(path).write_text(json.dumps(entries, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> list:
    entries = json.loads(Path(path).read_text())
    if not isinstance(entries, list):
        raise DomainError(f"{path}: manifest must be a JSON array")
    base = Path(path).parent
    for e in entries:
        for key, val in list(e.items()):
            if key.endswith(("image", "labels", "field")) and val is not None:
                p = Path(val)
                if not p.is_absolute():
                    p = base / p
                if not p.exists():
                    raise DomainError(f"manifest entry references missing file {p}")
                e[key] = str(p)
    return entries
