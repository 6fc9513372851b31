"""On-disk formats: VOL3 volumes, TT3F tensor trains, XYZ/PLY clouds.

Both binary containers are little-endian with a 4-byte magic, a u16
format version, fixed-size headers, float32 row-major payload data and a
trailing CRC32 over everything between the magic and the checksum.
Reads verify magic, version and CRC; writes of a loaded file reproduce
it bit for bit.
"""

from __future__ import annotations

import csv
import re
import struct
import zlib
from pathlib import Path

import numpy as np

from .geometry import Pose, exp_se3, pose_error
from .registration import RegistrationResult
from .tensor_train import TensorTrain3
from .validation import as_points
from .volume import DenseVolume

__all__ = [
    "FileFormatError",
    "format_pose",
    "parse_pose",
    "read_points",
    "read_tensor_train",
    "read_volume",
    "write_points",
    "write_tensor_train",
    "write_trace_csv",
    "write_volume",
]

MAGIC_VOL3 = b"VOL3"
MAGIC_TT3F = b"TT3F"
FORMAT_VERSION = 1

# Fixed header sizes (magic + version + shape fields), before payload data.
VOL3_HEADER_BYTES = 4 + 2 + 12 + 24 + 24
TT3F_HEADER_BYTES = 4 + 2 + 12 + 8
CRC_BYTES = 4


class FileFormatError(ValueError):
    """Malformed, truncated or checksum-failing container file."""


def _f32_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def _finish(path: Path, magic: bytes, payload: bytes) -> None:
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    path.write_bytes(magic + payload + struct.pack("<I", crc))


def _open_payload(path: Path, magic: bytes) -> bytes:
    blob = path.read_bytes()
    if len(blob) < len(magic) + CRC_BYTES:
        raise FileFormatError(f"{path}: truncated file")
    if blob[:4] != magic:
        raise FileFormatError(
            f"{path}: bad magic {blob[:4]!r}, expected {magic!r}"
        )
    payload, (crc,) = blob[4:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise FileFormatError(f"{path}: CRC mismatch")
    return payload


def write_volume(path, vol: DenseVolume) -> None:
    payload = struct.pack("<H", FORMAT_VERSION)
    payload += struct.pack("<3I", *vol.dims)
    payload += struct.pack("<3d", *vol.origin)
    payload += struct.pack("<3d", *vol.spacing)
    payload += _f32_bytes(vol.values)
    _finish(Path(path), MAGIC_VOL3, payload)


def read_volume(path) -> DenseVolume:
    payload = _open_payload(Path(path), MAGIC_VOL3)
    try:
        (version,) = struct.unpack_from("<H", payload, 0)
        if version != FORMAT_VERSION:
            raise FileFormatError(f"{path}: unsupported VOL3 version {version}")
        dims = struct.unpack_from("<3I", payload, 2)
        origin = struct.unpack_from("<3d", payload, 14)
        spacing = struct.unpack_from("<3d", payload, 38)
        count = dims[0] * dims[1] * dims[2]
        values = np.frombuffer(payload, dtype="<f4", count=count, offset=62)
    except struct.error as exc:
        raise FileFormatError(f"{path}: truncated VOL3 header") from exc
    if values.size != count:
        raise FileFormatError(f"{path}: truncated VOL3 payload")
    return DenseVolume(
        values=values.astype(np.float64).reshape(dims), origin=origin, spacing=spacing
    )


def write_tensor_train(path, tt: TensorTrain3) -> None:
    payload = struct.pack("<H", FORMAT_VERSION)
    payload += struct.pack("<3I", *tt.dims)
    payload += struct.pack("<2I", *tt.ranks)
    payload += _f32_bytes(tt.core1) + _f32_bytes(tt.core2) + _f32_bytes(tt.core3)
    _finish(Path(path), MAGIC_TT3F, payload)


def read_tensor_train(path) -> TensorTrain3:
    payload = _open_payload(Path(path), MAGIC_TT3F)
    try:
        (version,) = struct.unpack_from("<H", payload, 0)
        if version != FORMAT_VERSION:
            raise FileFormatError(f"{path}: unsupported TT3F version {version}")
        n1, n2, n3 = struct.unpack_from("<3I", payload, 2)
        r1, r2 = struct.unpack_from("<2I", payload, 14)
    except struct.error as exc:
        raise FileFormatError(f"{path}: truncated TT3F header") from exc
    sizes = (n1 * r1, r1 * n2 * r2, r2 * n3)
    data = np.frombuffer(payload, dtype="<f4", offset=22)
    if data.size != sum(sizes):
        raise FileFormatError(
            f"{path}: core payload has {data.size} floats, expected {sum(sizes)}"
        )
    c1, c2, c3 = np.split(data.astype(np.float64), np.cumsum(sizes)[:2])
    return TensorTrain3(
        c1.reshape(n1, r1), c2.reshape(r1, n2, r2), c3.reshape(r2, n3)
    )


# ---------------------------------------------------------------------------
# Point clouds
# ---------------------------------------------------------------------------

_PLY_SCALARS = {
    "char": "i1",
    "int8": "i1",
    "uchar": "u1",
    "uint8": "u1",
    "short": "i2",
    "int16": "i2",
    "ushort": "u2",
    "uint16": "u2",
    "int": "i4",
    "int32": "i4",
    "uint": "u4",
    "uint32": "u4",
    "float": "f4",
    "float32": "f4",
    "double": "f8",
    "float64": "f8",
}


def read_points(path) -> np.ndarray:
    """Load an (n, 3) cloud from ASCII XYZ or binary little-endian PLY."""
    path = Path(path)
    if path.suffix.lower() == ".ply":
        return _read_ply(path)
    return _read_xyz(path)


def write_points(path, points) -> None:
    """Write an (n, 3) cloud; format chosen by extension (.ply or text XYZ)."""
    path = Path(path)
    pts = as_points(points)
    if path.suffix.lower() == ".ply":
        _write_ply(path, pts)
    else:
        with path.open("w") as f:
            for x, y, z in pts:
                f.write(f"{x:.10g} {y:.10g} {z:.10g}\n")


def _read_xyz(path: Path) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 3:
            raise FileFormatError(f"{path}:{lineno}: expected 'x y z', got {line!r}")
        try:
            rows.append([float(parts[0]), float(parts[1]), float(parts[2])])
        except ValueError as exc:
            raise FileFormatError(f"{path}:{lineno}: non-numeric coordinate") from exc
    if not rows:
        raise FileFormatError(f"{path}: no points found")
    return np.asarray(rows, dtype=np.float64)


def _write_ply(path: Path, pts: np.ndarray) -> None:
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {len(pts)}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "end_header\n"
    )
    path.write_bytes(header.encode("ascii") + _f32_bytes(pts))


def _read_ply(path: Path) -> np.ndarray:
    blob = path.read_bytes()
    end = blob.find(b"end_header\n")
    if not blob.startswith(b"ply") or end < 0:
        raise FileFormatError(f"{path}: not a PLY file")
    header = blob[: end + len(b"end_header\n")]
    body = blob[len(header):]

    elements: list[tuple[str, int, list[tuple[str, str]]]] = []
    for raw in header.decode("ascii", errors="replace").splitlines():
        parts = raw.split()
        if not parts:
            continue
        if parts[0] == "format":
            if parts[1] != "binary_little_endian":
                raise FileFormatError(
                    f"{path}: only binary_little_endian PLY is supported, got {parts[1]}"
                )
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property" and elements:
            if parts[1] == "list":
                elements[-1][2].append(("list", parts[-1]))
            else:
                elements[-1][2].append((parts[1], parts[2]))

    offset = 0
    for name, count, props in elements:
        if any(t == "list" for t, _ in props):
            raise FileFormatError(
                f"{path}: element {name!r} has list properties before vertex data"
            )
        fields = []
        for i, (ptype, pname) in enumerate(props):
            code = _PLY_SCALARS.get(ptype)
            if code is None:
                raise FileFormatError(f"{path}: unsupported property type {ptype!r}")
            fields.append((f"f{i}_{pname}", "<" + code))
        dtype = np.dtype(fields)
        if name != "vertex":
            offset += count * dtype.itemsize  # skip, unknown properties and all
            continue
        names = {pname: f"f{i}_{pname}" for i, (_, pname) in enumerate(props)}
        missing = [c for c in ("x", "y", "z") if c not in names]
        if missing:
            raise FileFormatError(f"{path}: vertex element lacks {missing} properties")
        rows = np.frombuffer(body, dtype=dtype, count=count, offset=offset)
        if rows.size != count:
            raise FileFormatError(f"{path}: truncated vertex data")
        return np.column_stack(
            [rows[names["x"]], rows[names["y"]], rows[names["z"]]]
        ).astype(np.float64)
    raise FileFormatError(f"{path}: no vertex element")


# ---------------------------------------------------------------------------
# Pose text form and iteration traces
# ---------------------------------------------------------------------------


def format_pose(pose: Pose) -> str:
    """12 numbers at 12 decimal digits: rotation rows, then translation."""
    nums = np.concatenate([pose.rotation.ravel(), pose.translation])
    return " ".join(f"{x:.12f}" for x in nums)


def parse_pose(text: str) -> Pose:
    """Parse '12 numbers' (row-major rotation + translation) or a 6-number
    twist (rotation part first) that is exponentiated; separators are
    commas and/or whitespace."""
    tokens = [t for t in re.split(r"[,\s]+", text.strip()) if t]
    try:
        nums = np.array([float(t) for t in tokens])
    except ValueError as exc:
        raise ValueError(f"non-numeric pose component in {text!r}") from exc
    if nums.size == 12:
        return Pose(nums[:9].reshape(3, 3), nums[9:])
    if nums.size == 6:
        return exp_se3(nums)
    raise ValueError(f"pose needs 12 or 6 numbers, got {nums.size}")


def write_trace_csv(path, result: RegistrationResult, ground_truth: Pose | None = None) -> None:
    """Per-iteration solver trace; error columns appear only with ground truth."""
    with Path(path).open("w", newline="") as f:
        writer = csv.writer(f)
        header = ["iter", "cost", "step_norm", "active_points"]
        if ground_truth is not None:
            header += ["rot_err", "trans_err"]
        writer.writerow(header)
        for i, rec in enumerate(result.trace):
            row = [i, f"{rec.cost:.17g}", f"{rec.step_norm:.17g}", rec.active]
            if ground_truth is not None:
                rot_err, trans_err = pose_error(rec.pose, ground_truth)
                row += [f"{rot_err:.17g}", f"{trans_err:.17g}"]
            writer.writerow(row)
