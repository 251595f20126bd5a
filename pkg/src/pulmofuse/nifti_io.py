"""NIfTI-1 single-file reader and writer.

Only the ``n+1`` single-file flavour is handled, plain or gzip-wrapped.
Voxel arrays are exposed indexed ``[x, y, z]`` (Fortran order in memory,
matching the x-fastest on-disk layout).
"""

from __future__ import annotations

import gzip
import os
import struct
import tempfile
import warnings
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import BinaryIO, Iterator, Union

import numpy as np

from .errors import (
    BadMagic,
    GzipCorrupt,
    InconsistentHeader,
    InvalidHeader,
    InvalidLabels,
    Nifti2Unsupported,
    PairFormUnsupported,
    TruncatedData,
    UnsupportedDatatype,
    UnsupportedDimensions,
)

HEADER_SIZE = 348
NIFTI2_HEADER_SIZE = 540
DEFAULT_VOX_OFFSET = 352
GZIP_MAGIC = b"\x1f\x8b"
MAGIC_SINGLE = b"n+1\x00"
MAGIC_PAIR = b"ni1\x00"

# sizeof_hdr .. magic, no padding
_HEADER_FMT = "i10s18sihcB8h3fhhhh8f3fhBB4f2i80s24shh6f4f4f4f16s4s"

# datatype code -> (numpy kind, bitpix)
DATATYPES = {
    2: ("u1", 8),
    4: ("i2", 16),
    8: ("i4", 32),
    16: ("f4", 32),
    64: ("f8", 64),
}
# in-memory element kinds and the code each is written with
ELEMENT_KINDS = {"uint8": 2, "int16": 4, "float32": 16}

Source = Union[bytes, bytearray, memoryview, str, os.PathLike, BinaryIO]


@dataclass(frozen=True)
class Volume:
    """A 3D voxel grid with spacing (mm/voxel) and a 4x4 orientation affine.

    ``data`` is indexed ``[x, y, z]`` and is made read-only on construction.
    """

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    affine: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise UnsupportedDimensions(f"volume must be 3D, got shape {data.shape}")
        if data.dtype.name not in ELEMENT_KINDS:
            raise UnsupportedDatatype(f"unsupported element kind {data.dtype}")
        if not data.dtype.isnative:
            data = data.astype(data.dtype.newbyteorder("="))
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or not all(s > 0 and np.isfinite(s) for s in spacing):
            raise InconsistentHeader(f"spacing must be 3 positive reals, got {self.spacing}")
        if self.affine is None:
            affine = np.diag([*spacing, 1.0])
        else:
            affine = np.array(self.affine, dtype=np.float64)
            if affine.shape != (4, 4):
                raise InconsistentHeader(f"affine must be 4x4, got {affine.shape}")
        data = data.view()
        data.flags.writeable = False
        affine.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "affine", affine)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def element_kind(self) -> str:
        return self.data.dtype.name

    def with_data(self, data: np.ndarray) -> "Volume":
        """Same geometry, new voxels (shape must match)."""
        data = np.asarray(data)
        if data.shape != self.shape:
            raise InconsistentHeader(f"shape {data.shape} != {self.shape}")
        return Volume(data, self.spacing, self.affine)


@dataclass(frozen=True)
class NiftiHeader:
    sizeof_hdr: int = HEADER_SIZE
    dim: tuple = (3, 1, 1, 1, 1, 1, 1, 1)
    datatype_code: int = 16
    bitpix: int = 32
    pixdim: tuple = (1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    vox_offset: float = float(DEFAULT_VOX_OFFSET)
    scl_slope: float = 1.0
    scl_inter: float = 0.0
    qform_code: int = 0
    sform_code: int = 1
    quatern: tuple = (0.0, 0.0, 0.0)
    qoffset: tuple = (0.0, 0.0, 0.0)
    srow_x: tuple = (1.0, 0.0, 0.0, 0.0)
    srow_y: tuple = (0.0, 1.0, 0.0, 0.0)
    srow_z: tuple = (0.0, 0.0, 1.0, 0.0)
    xyzt_units: int = 2  # mm
    dim_info: int = 0
    intent_code: int = 0
    descrip: bytes = b""
    magic: bytes = MAGIC_SINGLE
    byteorder: str = "<"

    @property
    def shape(self) -> tuple:
        return tuple(int(d) for d in self.dim[1:4])

    @property
    def spacing(self) -> tuple:
        return tuple(float(abs(p)) for p in self.pixdim[1:4])

    def volume_spacing(self) -> tuple:
        """Spacing with zero pixdim entries replaced by 1 mm."""
        return tuple(s if s > 0 else 1.0 for s in self.spacing)

    def affine(self) -> np.ndarray:
        """Orientation affine from the sform rows, else a pixdim scaling."""
        if self.sform_code > 0:
            return np.array([self.srow_x, self.srow_y, self.srow_z, (0.0, 0.0, 0.0, 1.0)])
        return np.diag([*self.volume_spacing(), 1.0])

    def items(self):
        """(key, value) pairs in header order, for ``info`` dumps."""
        return [
            ("sizeof_hdr", self.sizeof_hdr),
            ("byteorder", "little" if self.byteorder == "<" else "big"),
            ("magic", self.magic.rstrip(b"\x00").decode("latin-1")),
            ("dim", ",".join(str(d) for d in self.dim)),
            ("datatype_code", self.datatype_code),
            ("bitpix", self.bitpix),
            ("pixdim", ",".join(_fmt(p) for p in self.pixdim)),
            ("vox_offset", _fmt(self.vox_offset)),
            ("scl_slope", _fmt(self.scl_slope)),
            ("scl_inter", _fmt(self.scl_inter)),
            ("qform_code", self.qform_code),
            ("sform_code", self.sform_code),
            ("quatern", ",".join(_fmt(q) for q in self.quatern)),
            ("qoffset", ",".join(_fmt(q) for q in self.qoffset)),
            ("srow_x", ",".join(_fmt(v) for v in self.srow_x)),
            ("srow_y", ",".join(_fmt(v) for v in self.srow_y)),
            ("srow_z", ",".join(_fmt(v) for v in self.srow_z)),
            ("xyzt_units", self.xyzt_units),
            ("descrip", self.descrip.rstrip(b"\x00").decode("latin-1")),
        ]

    def to_bytes(self) -> bytes:
        return struct.pack(
            self.byteorder + _HEADER_FMT,
            self.sizeof_hdr,
            b"",
            b"",
            0,
            0,
            b"r",
            self.dim_info,
            *self.dim,
            0.0,
            0.0,
            0.0,
            self.intent_code,
            self.datatype_code,
            self.bitpix,
            0,
            *self.pixdim,
            self.vox_offset,
            self.scl_slope,
            self.scl_inter,
            0,
            0,
            self.xyzt_units,
            0.0,
            0.0,
            0.0,
            0.0,
            0,
            0,
            self.descrip[:80],
            b"",
            self.qform_code,
            self.sform_code,
            *self.quatern,
            *self.qoffset,
            *self.srow_x,
            *self.srow_y,
            *self.srow_z,
            b"",
            self.magic,
        )


def _fmt(x: float) -> str:
    return f"{float(x):.9g}"


def parse_header(raw: bytes) -> NiftiHeader:
    """Decode and validate a 348-byte header, detecting byte order."""
    if len(raw) < 4:
        raise TruncatedData("file shorter than a NIfTI header")
    (le,) = struct.unpack("<i", raw[:4])
    (be,) = struct.unpack(">i", raw[:4])
    if le == HEADER_SIZE:
        order = "<"
    elif be == HEADER_SIZE:
        order = ">"
    elif NIFTI2_HEADER_SIZE in (le, be):
        raise Nifti2Unsupported("NIfTI-2 files are not supported")
    else:
        raise BadMagic(f"sizeof_hdr is {le} (expected 348): not a NIfTI-1 file")
    if len(raw) < HEADER_SIZE:
        raise TruncatedData(f"header truncated at {len(raw)} bytes")
    f = struct.unpack(order + _HEADER_FMT, raw[:HEADER_SIZE])
    magic = f[-1]
    if magic == MAGIC_PAIR:
        raise PairFormUnsupported("header/image pair (ni1) files are not supported")
    if magic != MAGIC_SINGLE:
        raise BadMagic(f"bad magic {magic!r}")

    dim = tuple(f[7:15])
    hdr = NiftiHeader(
        sizeof_hdr=f[0],
        dim_info=f[6],
        dim=dim,
        intent_code=f[18],
        datatype_code=f[19],
        bitpix=f[20],
        pixdim=tuple(float(p) for p in f[22:30]),
        vox_offset=float(f[30]),
        scl_slope=float(f[31]),
        scl_inter=float(f[32]),
        xyzt_units=f[35],
        descrip=f[42].rstrip(b"\x00"),
        qform_code=f[44],
        sform_code=f[45],
        quatern=tuple(float(q) for q in f[46:49]),
        qoffset=tuple(float(q) for q in f[49:52]),
        srow_x=tuple(float(v) for v in f[52:56]),
        srow_y=tuple(float(v) for v in f[56:60]),
        srow_z=tuple(float(v) for v in f[60:64]),
        magic=magic,
        byteorder=order,
    )

    if not 3 <= dim[0] <= 4:
        raise UnsupportedDimensions(f"dim[0]={dim[0]}; only 3D volumes are supported")
    if any(d < 1 for d in dim[1 : dim[0] + 1]):
        raise InvalidHeader(f"non-positive extent in dim={dim}")
    if dim[0] == 4 and dim[4] != 1:
        raise UnsupportedDimensions(f"4D volume with {dim[4]} frames is not supported")
    if hdr.datatype_code not in DATATYPES:
        raise UnsupportedDatatype(f"datatype code {hdr.datatype_code} is not supported")
    if DATATYPES[hdr.datatype_code][1] != hdr.bitpix:
        raise InvalidHeader(
            f"bitpix {hdr.bitpix} inconsistent with datatype code {hdr.datatype_code}"
        )
    if hdr.vox_offset < HEADER_SIZE:
        raise InvalidHeader(f"vox_offset {hdr.vox_offset} inside the header")
    return hdr


def _decode_voxels(hdr: NiftiHeader, buf, offset: int, n_slices: int) -> np.ndarray:
    """Decode ``n_slices`` z-slices from ``buf`` starting at byte ``offset``."""
    kind, bitpix = DATATYPES[hdr.datatype_code]
    nx, ny, _ = hdr.shape
    count = nx * ny * n_slices
    need = count * (bitpix // 8)
    if len(buf) - offset < need:
        raise TruncatedData(
            f"voxel data truncated: need {need} bytes, have {max(len(buf) - offset, 0)}"
        )
    raw = np.frombuffer(buf, dtype=np.dtype(hdr.byteorder + kind), count=count, offset=offset)
    arr = raw.reshape((nx, ny, n_slices), order="F")
    return _to_element_kind(hdr, arr)


def _to_element_kind(hdr: NiftiHeader, arr: np.ndarray) -> np.ndarray:
    slope, inter = hdr.scl_slope, hdr.scl_inter
    scaled = np.isfinite(slope) and slope != 0 and (slope, inter) != (1.0, 0.0)
    if scaled:
        out = arr.astype(np.float64) * slope + inter
        return out.astype(np.float32, order="F")
    if arr.dtype.kind == "f" and arr.dtype.itemsize == 8:
        warnings.warn("float64 voxels down-converted to float32", stacklevel=3)
        return arr.astype(np.float32, order="F")
    if arr.dtype.kind == "i" and arr.dtype.itemsize == 4:
        if arr.size and np.abs(arr).max() > 2**24:
            warnings.warn("int32 voxels beyond 2**24 lose precision as float32", stacklevel=3)
        return arr.astype(np.float32, order="F")
    return arr.astype(arr.dtype.newbyteorder("="), order="F")


def _read_all(source: Source) -> bytes:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return bytes(source)
    if isinstance(source, (str, os.PathLike)):
        return Path(source).read_bytes()
    return source.read()


def _gunzip(data: bytes) -> bytes:
    try:
        return gzip.decompress(data)
    except (OSError, EOFError, zlib.error) as exc:
        raise GzipCorrupt(f"corrupt gzip stream: {exc}") from exc


def read_nifti(source: Source) -> tuple[NiftiHeader, Volume]:
    """Decode a NIfTI-1 file from bytes, a path, or a binary file object.

    gzip framing is detected from the leading bytes, not the file name.
    Voxels are rescaled with ``scl_slope``/``scl_inter`` (to float32) unless
    the scaling is absent or the identity.
    """
    data = _read_all(source)
    if data[:2] == GZIP_MAGIC:
        data = _gunzip(data)
    hdr = parse_header(data)
    arr = _decode_voxels(hdr, data, int(hdr.vox_offset), hdr.shape[2])
    return hdr, Volume(arr, hdr.volume_spacing(), hdr.affine())


def load(path) -> Volume:
    return read_nifti(path)[1]


def header_from_geometry(shape, spacing, affine, element_kind: str,
                         base: NiftiHeader | None = None) -> NiftiHeader:
    """A writable header for the given grid geometry and element kind."""
    base = base or NiftiHeader()
    code = ELEMENT_KINDS[element_kind]
    nx, ny, nz = (int(n) for n in shape)
    pixdim = (base.pixdim[0] or 1.0, *spacing, *base.pixdim[4:])
    aff = np.asarray(affine, dtype=np.float64)
    return replace(
        base,
        dim=(3, nx, ny, nz, 1, 1, 1, 1),
        datatype_code=code,
        bitpix=DATATYPES[code][1],
        pixdim=tuple(float(p) for p in pixdim),
        vox_offset=float(DEFAULT_VOX_OFFSET),
        scl_slope=1.0,
        scl_inter=0.0,
        sform_code=base.sform_code or 1,
        srow_x=tuple(float(v) for v in aff[0]),
        srow_y=tuple(float(v) for v in aff[1]),
        srow_z=tuple(float(v) for v in aff[2]),
        magic=MAGIC_SINGLE,
    )


def header_for(volume: Volume, base: NiftiHeader | None = None) -> NiftiHeader:
    """A header template consistent with ``volume``.

    Non-geometric fields (qform, units, description, byte order) come from
    ``base`` when given.
    """
    return header_from_geometry(volume.shape, volume.spacing, volume.affine,
                                volume.element_kind, base)


def _check_template(template: NiftiHeader, volume: Volume) -> None:
    if volume.element_kind not in ELEMENT_KINDS:
        raise InconsistentHeader(f"cannot write element kind {volume.element_kind}")
    if template.shape != volume.shape:
        raise InconsistentHeader(f"header dims {template.shape} != volume shape {volume.shape}")
    if not np.allclose(template.spacing, volume.spacing, rtol=0, atol=1e-6):
        raise InconsistentHeader(
            f"header pixdim {template.spacing} != volume spacing {volume.spacing}"
        )


def write_nifti(header_template: NiftiHeader, volume: Volume, gzip_output: bool = False) -> bytes:
    """Encode ``volume`` as a single-file NIfTI-1 byte string.

    The template supplies byte order, qform and descriptive fields; geometry,
    datatype and the sform rows are taken from the volume. Intensity scaling
    is always stored as slope 1, intercept 0.
    """
    _check_template(header_template, volume)
    hdr = header_for(volume, header_template)
    body = _encode_voxels(hdr, volume.data)
    out = hdr.to_bytes() + b"\x00" * (DEFAULT_VOX_OFFSET - HEADER_SIZE) + body
    if gzip_output:
        out = gzip.compress(out, compresslevel=6, mtime=0)
    return out


def _encode_voxels(hdr: NiftiHeader, arr: np.ndarray) -> bytes:
    kind, _ = DATATYPES[hdr.datatype_code]
    return np.asarray(arr).astype(np.dtype(hdr.byteorder + kind)).tobytes(order="F")


def is_gzip_path(path) -> bool:
    return str(path).endswith(".gz")


def atomic_write(path, payload: bytes) -> None:
    """Write via a temp file in the destination directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(volume: Volume, path, header: NiftiHeader | None = None) -> None:
    """Write ``volume`` to ``path``; gzip when the name ends in ``.gz``."""
    template = header_for(volume, header)
    atomic_write(path, write_nifti(template, volume, gzip_output=is_gzip_path(path)))


def validate_labels(volume: Volume) -> Volume:
    """Check a label volume holds only {0, 1} and normalise it to uint8."""
    data = volume.data
    bad = (data != 0) & (data != 1)
    if bad.any():
        values = np.unique(data[bad])[:5]
        raise InvalidLabels(f"label volume has values outside {{0, 1}}: {values.tolist()}")
    return volume.with_data(data.astype(np.uint8, order="F"))


# -- streaming ------------------------------------------------------------


def _open_stream(path) -> BinaryIO:
    fh = open(path, "rb")
    lead = fh.read(2)
    fh.seek(0)
    if lead == GZIP_MAGIC:
        return gzip.GzipFile(fileobj=fh, mode="rb")
    return fh


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    try:
        chunk = fh.read(n)
    except (OSError, EOFError, zlib.error) as exc:
        raise GzipCorrupt(f"corrupt gzip stream: {exc}") from exc
    return chunk


def read_header(path) -> NiftiHeader:
    with _open_stream(path) as fh:
        return parse_header(_read_exact(fh, HEADER_SIZE))


def iter_slabs(path, depth: int) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(z0, voxels[:, :, z0:z0+depth])`` by streaming the file.

    Peak memory is one slab, regardless of volume size or compression.
    """
    with _open_stream(path) as fh:
        hdr = parse_header(_read_exact(fh, HEADER_SIZE))
        _read_exact(fh, int(hdr.vox_offset) - HEADER_SIZE)
        nx, ny, nz = hdr.shape
        slice_bytes = nx * ny * DATATYPES[hdr.datatype_code][1] // 8
        for z0 in range(0, nz, depth):
            n = min(depth, nz - z0)
            buf = _read_exact(fh, n * slice_bytes)
            yield z0, _decode_voxels(hdr, buf, 0, n)


class SlabWriter:
    """Write a NIfTI file z-slab by z-slab, committing atomically on close.

    Slabs must arrive in increasing z order and cover the volume exactly.
    """

    def __init__(self, path, header: NiftiHeader):
        self.path = Path(path)
        self.header = replace(header, scl_slope=1.0, scl_inter=0.0,
                              vox_offset=float(DEFAULT_VOX_OFFSET), magic=MAGIC_SINGLE)
        self._z = 0
        fd, self._tmp = tempfile.mkstemp(dir=self.path.parent or ".",
                                         prefix=f".{self.path.name}.", suffix=".tmp")
        raw = os.fdopen(fd, "wb")
        self._raw = raw
        self._fh: BinaryIO = (
            gzip.GzipFile(fileobj=raw, mode="wb", compresslevel=6, mtime=0, filename="")
            if is_gzip_path(self.path) else raw
        )
        self._fh.write(self.header.to_bytes() + b"\x00" * (DEFAULT_VOX_OFFSET - HEADER_SIZE))

    def write(self, slab: np.ndarray) -> None:
        nx, ny, _ = self.header.shape
        if slab.shape[:2] != (nx, ny):
            raise InconsistentHeader(f"slab shape {slab.shape} does not match {(nx, ny)}")
        self._fh.write(_encode_voxels(self.header, slab))
        self._z += slab.shape[2]

    def close(self) -> None:
        try:
            if self._z != self.header.shape[2]:
                raise InconsistentHeader(f"wrote {self._z} of {self.header.shape[2]} slices")
            if self._fh is not self._raw:
                self._fh.close()
            self._raw.close()
            os.replace(self._tmp, self.path)
        except BaseException:
            self.abort()
            raise

    def abort(self) -> None:
        for fh in (self._fh, self._raw):
            try:
                fh.close()
            except Exception:
                pass
        if os.path.exists(self._tmp):
            os.unlink(self._tmp)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()
        else:
            self.abort()
        return False


def dumps_header(hdr: NiftiHeader) -> str:
    return "".join(f"{k}={v}\n" for k, v in hdr.items())


__all__ = [
    "Volume",
    "NiftiHeader",
    "read_nifti",
    "write_nifti",
    "parse_header",
    "header_for",
    "load",
    "save",
    "validate_labels",
    "iter_slabs",
    "read_header",
    "SlabWriter",
    "dumps_header",
    "atomic_write",
]
