"""Domain types for table structure work, plus the JSON interchange format.

A table arrives as a set of cells (bounding box + transcribed text) together
with a rendered grayscale image. Structure labels live on two objects:
associations (unordered cell pairs labelled horizontal / vertical / none) and
per-cell functional types (header / attribute / data). Everything here is
immutable after construction and safe to share between workers.
"""

from __future__ import annotations

import base64
import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np


class CellType(enum.IntEnum):
    HEADER = 0
    ATTRIBUTE = 1
    DATA = 2


class AssocLabel(enum.IntEnum):
    HORIZONTAL = 0
    VERTICAL = 1
    NONE = 2


_CELL_TYPE_NAMES = {CellType.HEADER: "header", CellType.ATTRIBUTE: "attribute", CellType.DATA: "data"}
_CELL_TYPE_FROM_NAME = {v: k for k, v in _CELL_TYPE_NAMES.items()}
_LABEL_NAMES = {AssocLabel.HORIZONTAL: "h", AssocLabel.VERTICAL: "v", AssocLabel.NONE: "none"}
_LABEL_FROM_NAME = {v: k for k, v in _LABEL_NAMES.items()}


class TableJsonError(ValueError):
    """Malformed table JSON. `path` points into the offending document node."""

    def __init__(self, path, message):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}")


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in table-local pixels, origin top-left, y down."""

    x1: float
    y1: float
    x2: float
    y2: float

    @property
    def width(self):
        return self.x2 - self.x1

    @property
    def height(self):
        return self.y2 - self.y1

    @property
    def center(self):
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)


@dataclass(frozen=True)
class Cell:
    """One table cell.

    `grid` is the ground-truth (row_start, row_end, col_start, col_end) span,
    present only on annotated/synthetic tables, never required at inference.
    Empty-text cells carry no cell_type: they are excluded from cell type
    classification but still participate in structure recognition.
    """

    id: int
    bbox: BBox
    text: str = ""
    grid: tuple[int, int, int, int] | None = None
    cell_type: CellType | None = None


@dataclass(frozen=True)
class Association:
    """Unordered cell pair, stored canonically with the smaller id first."""

    cell_i: int
    cell_j: int
    label: AssocLabel | None = None

    def __post_init__(self):
        if self.cell_i >= self.cell_j:
            raise ValueError(f"association ({self.cell_i},{self.cell_j}) not canonical; need cell_i < cell_j")

    @property
    def key(self):
        return (self.cell_i, self.cell_j)


@dataclass(frozen=True, eq=False)
class Table:
    """A table: cells plus the rendered grayscale raster (values in [0,1])."""

    id: str
    width: int
    height: int
    image: np.ndarray  # float32 (height, width), treated as read-only
    cells: tuple[Cell, ...]
    associations: tuple[Association, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(self.cells))
        object.__setattr__(self, "associations", tuple(self.associations))
        img = np.asarray(self.image, dtype=np.float32)
        img.setflags(write=False)
        object.__setattr__(self, "image", img)

    def cell_by_id(self, cell_id):
        for c in self.cells:
            if c.id == cell_id:
                return c
        raise KeyError(f"no cell with id {cell_id}")

    def __eq__(self, other):
        if not isinstance(other, Table):
            return NotImplemented
        return (
            self.id == other.id
            and self.width == other.width
            and self.height == other.height
            and self.cells == other.cells
            and self.associations == other.associations
            and np.array_equal(self.image, other.image)
        )


def _finite(*vals):
    return all(isinstance(v, (int, float)) and math.isfinite(v) for v in vals)


def validate_table(table):
    """Check every type invariant; returns a list of violation strings.

    Never raises: an empty list means the table is well-formed.
    """
    issues = []
    if table.width <= 0 or table.height <= 0:
        issues.append(f"table {table.id}: nonpositive dimensions {table.width}x{table.height}")
    if table.image.shape != (table.height, table.width):
        issues.append(
            f"table {table.id}: image shape {table.image.shape} != (height, width) = "
            f"({table.height}, {table.width})"
        )
    if table.image.size and (float(table.image.min()) < 0.0 or float(table.image.max()) > 1.0):
        issues.append(f"table {table.id}: image values outside [0,1]")

    seen_ids = set()
    seen_grids = {}
    for cell in table.cells:
        if cell.id in seen_ids:
            issues.append(f"duplicate id {cell.id}")
        seen_ids.add(cell.id)
        b = cell.bbox
        if not _finite(b.x1, b.x2, b.y1, b.y2):
            issues.append(f"cell {cell.id}: non-finite bbox")
            continue
        if min(b.x1, b.x2, b.y1, b.y2) < 0:
            issues.append(f"cell {cell.id}: negative bbox coordinate")
        if not (b.x1 < b.x2 and b.y1 < b.y2):
            issues.append(f"cell {cell.id}: degenerate bbox")
        if b.x1 < 0 or b.y1 < 0 or b.x2 > table.width or b.y2 > table.height:
            issues.append(f"cell {cell.id}: bbox outside table bounds")
        if cell.grid is not None:
            r1, r2, c1, c2 = cell.grid
            if not (r1 <= r2 and c1 <= c2):
                issues.append(f"cell {cell.id}: inverted grid span {cell.grid}")
            elif min(r1, c1) < 0:
                issues.append(f"cell {cell.id}: negative grid span {cell.grid}")
            else:
                if cell.grid in seen_grids:
                    issues.append(f"cell {cell.id}: grid span identical to cell {seen_grids[cell.grid]}")
                seen_grids[cell.grid] = cell.id
        if cell.text == "" and cell.cell_type is not None:
            issues.append(f"cell {cell.id}: empty-text cell carries a cell_type")

    pair_keys = set()
    for a in table.associations:
        if a.cell_i not in seen_ids or a.cell_j not in seen_ids:
            issues.append(f"association ({a.cell_i},{a.cell_j}): unknown cell id")
        if a.key in pair_keys:
            issues.append(f"association ({a.cell_i},{a.cell_j}): duplicate pair")
        pair_keys.add(a.key)
    return issues


# ---------------------------------------------------------------------------
# JSON interchange
#
# {"id": str, "width": int, "height": int,
#  "image": {"encoding": "base64-gray8" | "file", "data": str},
#  "cells": [{"id": int, "bbox": [x1,y1,x2,y2], "text": str,
#             "grid": [r1,r2,c1,c2] | null,
#             "type": "header" | "attribute" | "data" | null}],
#  "associations": [{"i": int, "j": int, "label": "h" | "v" | "none" | null}]}
#
# Gray8 pixel v maps to v/255 in [0,1].
# ---------------------------------------------------------------------------


def _expect(doc, key, types, path):
    if not isinstance(doc, dict):
        raise TableJsonError(path, f"expected object, got {type(doc).__name__}")
    if key not in doc:
        raise TableJsonError(f"{path}.{key}" if path else key, "missing field")
    val = doc[key]
    if not isinstance(val, types) or isinstance(val, bool):
        want = types[0].__name__ if isinstance(types, tuple) else types.__name__
        raise TableJsonError(f"{path}.{key}" if path else key, f"expected {want}, got {type(val).__name__}")
    return val


def image_to_gray8(image):
    """Quantize a [0,1] raster back to gray8 bytes (row-major)."""
    return np.rint(np.asarray(image, dtype=np.float64) * 255.0).astype(np.uint8).tobytes()


def gray8_to_image(buf, height, width):
    arr = np.frombuffer(buf, dtype=np.uint8)
    return (arr.astype(np.float32) / 255.0).reshape(height, width)


def read_table_json(data, base_dir=None):
    """Parse table JSON bytes (or str) into a Table.

    `base_dir` resolves image references when the encoding is "file".
    Raises TableJsonError with a path into the document on any violation.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as e:
        raise TableJsonError("$", f"malformed JSON: {e}") from None

    tid = _expect(doc, "id", str, "")
    width = _expect(doc, "width", int, "")
    height = _expect(doc, "height", int, "")

    img_doc = _expect(doc, "image", dict, "")
    encoding = _expect(img_doc, "encoding", str, "image")
    payload = _expect(img_doc, "data", str, "image")
    if encoding == "base64-gray8":
        try:
            raw = base64.b64decode(payload, validate=True)
        except Exception:
            raise TableJsonError("image.data", "invalid base64") from None
    elif encoding == "file":
        if base_dir is None:
            raise TableJsonError("image.encoding", "file reference given but no base_dir to resolve it")
        import pathlib

        ref = pathlib.Path(base_dir) / payload
        if not ref.exists():
            raise TableJsonError("image.data", f"referenced file not found: {ref}")
        raw = ref.read_bytes()
    else:
        raise TableJsonError("image.encoding", f"unknown encoding {encoding!r}")
    if len(raw) != width * height:
        raise TableJsonError(
            "image.data", f"got {len(raw)} pixels, expected width*height = {width * height}"
        )
    image = gray8_to_image(raw, height, width)

    cells = []
    cell_docs = _expect(doc, "cells", list, "")
    for idx, cd in enumerate(cell_docs):
        path = f"cells[{idx}]"
        cid = _expect(cd, "id", int, path)
        bbox = _expect(cd, "bbox", list, path)
        if len(bbox) != 4 or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in bbox):
            raise TableJsonError(f"{path}.bbox", "expected [x1,y1,x2,y2] numbers")
        text = _expect(cd, "text", str, path)
        grid = cd.get("grid")
        if grid is not None:
            if not (isinstance(grid, list) and len(grid) == 4 and all(isinstance(v, int) for v in grid)):
                raise TableJsonError(f"{path}.grid", "expected [r1,r2,c1,c2] integers or null")
            grid = tuple(grid)
        tname = cd.get("type")
        if tname is not None and tname not in _CELL_TYPE_FROM_NAME:
            raise TableJsonError(f"{path}.type", f"unknown cell type {tname!r}")
        cells.append(
            Cell(
                id=cid,
                bbox=BBox(float(bbox[0]), float(bbox[1]), float(bbox[2]), float(bbox[3])),
                text=text,
                grid=grid,
                cell_type=None if tname is None else _CELL_TYPE_FROM_NAME[tname],
            )
        )

    assocs = []
    for idx, ad in enumerate(doc.get("associations", [])):
        path = f"associations[{idx}]"
        i = _expect(ad, "i", int, path)
        j = _expect(ad, "j", int, path)
        if i >= j:
            raise TableJsonError(path, f"pair ({i},{j}) not canonical (need i < j)")
        lname = ad.get("label")
        if lname is not None and lname not in _LABEL_FROM_NAME:
            raise TableJsonError(f"{path}.label", f"unknown label {lname!r}")
        assocs.append(Association(i, j, None if lname is None else _LABEL_FROM_NAME[lname]))

    return Table(id=tid, width=width, height=height, image=image, cells=tuple(cells), associations=tuple(assocs))


def write_table_json(table):
    """Serialize a Table to UTF-8 JSON bytes (image inline as base64 gray8)."""
    doc = {
        "id": table.id,
        "width": table.width,
        "height": table.height,
        "image": {
            "encoding": "base64-gray8",
            "data": base64.b64encode(image_to_gray8(table.image)).decode("ascii"),
        },
        "cells": [
            {
                "id": c.id,
                "bbox": [c.bbox.x1, c.bbox.y1, c.bbox.x2, c.bbox.y2],
                "text": c.text,
                "grid": None if c.grid is None else list(c.grid),
                "type": None if c.cell_type is None else _CELL_TYPE_NAMES[c.cell_type],
            }
            for c in table.cells
        ],
        "associations": [
            {"i": a.cell_i, "j": a.cell_j, "label": None if a.label is None else _LABEL_NAMES[a.label]}
            for a in table.associations
        ],
    }
    return json.dumps(doc, indent=1, sort_keys=False).encode("utf-8")
