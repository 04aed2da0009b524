"""MetaImage volume files (``.mha`` with inline data, ``.mhd`` + ``.raw``).

Only the keys needed for 3-D scalar float volumes are understood.  Data are
stored x-fastest, which is numpy's Fortran order for ``(nx, ny, nz)`` arrays.
Maps are written as absolute physical positions, one scalar file per
component with ``_x``, ``_y``, ``_z`` inserted before the extension.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from densmatch.errors import ParseError, SizeMismatch, UnsupportedElementType
from densmatch.grid import GridGeometry, ScalarGrid, VectorGrid

ELEMENT_TYPES = {"MET_FLOAT": np.dtype("float32"), "MET_DOUBLE": np.dtype("float64")}
SUFFIXES = ("_x", "_y", "_z")
_TRUE = {"true", "1", "yes"}


@dataclass(frozen=True)
class VolumeHeader:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]
    element_type: str = "MET_DOUBLE"
    msb: bool = False
    data_file: str = "LOCAL"

    def __post_init__(self):
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise ParseError(f"DimSize must be three positive integers, got {self.dims}")
        if len(self.spacing) != 3 or any(not s > 0 for s in self.spacing):
            raise ParseError(f"ElementSpacing must be three positive numbers, got {self.spacing}")
        if self.element_type not in ELEMENT_TYPES:
            raise UnsupportedElementType(f"element type {self.element_type!r} is not supported")

    @property
    def dtype(self) -> np.dtype:
        return ELEMENT_TYPES[self.element_type].newbyteorder(">" if self.msb else "<")

    @property
    def nbytes(self) -> int:
        return int(np.prod(self.dims)) * self.dtype.itemsize

    @classmethod
    def from_geometry(cls, geom: GridGeometry, element_type="MET_DOUBLE", msb=False, data_file="LOCAL"):
        return cls(geom.dims, geom.spacing, geom.origin, element_type, msb, data_file)

    def geometry(self) -> GridGeometry:
        return GridGeometry(self.dims, self.spacing, self.origin)

    def to_text(self) -> str:
        fmt = lambda xs: " ".join(repr(float(x)) for x in xs)
        lines = [
            "ObjectType = Image",
            "NDims = 3",
            "BinaryData = True",
            f"BinaryDataByteOrderMSB = {self.msb}",
            "CompressedData = False",
            f"Offset = {fmt(self.origin)}",
            f"ElementSpacing = {fmt(self.spacing)}",
            f"DimSize = {' '.join(str(int(d)) for d in self.dims)}",
            f"ElementType = {self.element_type}",
            f"ElementDataFile = {self.data_file}",
        ]
        return "\n".join(lines) + "\n"


def _numbers(key, text, kind, path):
    try:
        vals = tuple(kind(x) for x in text.split())
    except ValueError:
        raise ParseError(f"{path}: bad value for {key}: {text!r}") from None
    if len(vals) != 3:
        raise ParseError(f"{path}: {key} needs 3 values, got {len(vals)}")
    return vals


def read_header(path) -> tuple[VolumeHeader, int]:
    """Parse a MetaImage header.

    Returns
    -------
    header : VolumeHeader
    offset : int
        Byte offset of the data block when it is stored inline (``LOCAL``).
    """
    path = Path(path)
    keys = {}
    offset = 0
    with open(path, "rb") as fh:
        while True:
            raw = fh.readline()
            if not raw:
                break
            offset += len(raw)
            try:
                line = raw.decode("ascii").strip()
            except UnicodeDecodeError:
                raise ParseError(f"{path}: non-text bytes before ElementDataFile") from None
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ParseError(f"{path}: expected 'key = value', got {line!r}")
            keys[key.strip()] = value.strip()
            if key.strip() == "ElementDataFile":
                break

    for k in ("NDims", "DimSize", "ElementType", "ElementDataFile"):
        if k not in keys:
            raise ParseError(f"{path}: missing header key {k}")
    if keys.get("ObjectType", "Image") != "Image":
        raise ParseError(f"{path}: ObjectType {keys['ObjectType']!r} is not Image")
    if keys["NDims"] != "3":
        raise ParseError(f"{path}: NDims must be 3, got {keys['NDims']}")
    if keys.get("CompressedData", "False").lower() in _TRUE:
        raise ParseError(f"{path}: compressed data is not supported")
    if keys.get("ElementNumberOfChannels", "1") != "1":
        raise UnsupportedElementType(f"{path}: only single-channel volumes are supported")

    dims = _numbers("DimSize", keys["DimSize"], int, path)
    spacing = _numbers("ElementSpacing", keys.get("ElementSpacing", "1 1 1"), float, path)
    origin_key = next((k for k in ("Offset", "Origin", "Position") if k in keys), None)
    origin = _numbers(origin_key, keys[origin_key], float, path) if origin_key else (0.0, 0.0, 0.0)
    msb_text = keys.get("BinaryDataByteOrderMSB", keys.get("ElementByteOrderMSB", "False"))
    header = VolumeHeader(
        dims, spacing, origin, keys["ElementType"], msb_text.lower() in _TRUE, keys["ElementDataFile"]
    )
    return header, offset


def read_volume(path) -> ScalarGrid:
    """Read a 3-D float MetaImage volume into a float64 :class:`ScalarGrid`."""
    path = Path(path)
    header, offset = read_header(path)
    if header.data_file == "LOCAL":
        data_path, start = path, offset
    else:
        data_path, start = path.parent / header.data_file, 0
    with open(data_path, "rb") as fh:
        fh.seek(start)
        raw = fh.read()
    if len(raw) != header.nbytes:
        raise SizeMismatch(
            f"{data_path}: expected {header.nbytes} bytes of data for DimSize "
            f"{' '.join(map(str, header.dims))}, found {len(raw)}"
        )
    values = np.frombuffer(raw, dtype=header.dtype).astype(np.float64)
    return ScalarGrid(header.geometry(), values.reshape(header.dims, order="F"))


def write_volume(g: ScalarGrid | VectorGrid, path, element_type: str = "MET_DOUBLE", msb: bool = False):
    """Write ``g`` as MetaImage; ``.mhd`` paths get a sibling ``.raw`` file.

    A :class:`VectorGrid` is written as three scalar volumes whose names carry
    ``_x``, ``_y``, ``_z`` before the extension.  Returns the list of header
    paths written.
    """
    if isinstance(g, VectorGrid):
        return [write_volume(g.component(a), p, element_type, msb)[0] for a, p in enumerate(vector_paths(path))]
    path = Path(path)
    ext = path.suffix.lower()
    if ext not in (".mha", ".mhd"):
        raise ValueError(f"{path}: extension must be .mha or .mhd")
    data_file = "LOCAL" if ext == ".mha" else path.with_suffix(".raw").name
    header = VolumeHeader.from_geometry(g.geometry, element_type, msb, data_file)
    data = np.asarray(g.values, dtype=header.dtype).tobytes(order="F")
    with open(path, "wb") as fh:
        fh.write(header.to_text().encode("ascii"))
        if data_file == "LOCAL":
            fh.write(data)
    if data_file != "LOCAL":
        with open(path.parent / data_file, "wb") as fh:
            fh.write(data)
    return [path]


def vector_paths(path) -> list[Path]:
    """``map.mha`` -> ``map_x.mha``, ``map_y.mha``, ``map_z.mha``."""
    path = Path(path)
    return [path.with_name(path.stem + s + path.suffix) for s in SUFFIXES]


def read_vector(path) -> VectorGrid:
    """Read the three component files written for a :class:`VectorGrid`.

    ``path`` is the unsuffixed name, as passed to :func:`write_volume`.
    """
    comps = [read_volume(p) for p in vector_paths(path)]
    geom = comps[0].geometry
    for c in comps[1:]:
        if not geom.matches(c.geometry):
            raise ParseError(f"{path}: vector components have different geometries")
    return VectorGrid(geom, np.stack([c.values for c in comps]))

