"""Video files: the VGT container and P6 PPM frame sequences.

VGT layout: ``b"VGT1"``, four little-endian uint32 extents ``F, C, H, W``,
then ``F*C*H*W`` little-endian float32 values in row-major, frame-major
order. Values survive a round trip exactly when they are float32-representable.
"""

from pathlib import Path
import re
import struct

import numpy as np

MAGIC = b"VGT1"
_HEADER = struct.Struct("<4I")


def write_video(path, v):
    v = np.asarray(v)
    if v.ndim != 4:
        raise ValueError("video must be F x C x H x W")
    if not np.all(np.isfinite(v)):
        raise ValueError("refusing to write non-finite video data")
    data = np.ascontiguousarray(v, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(*v.shape))
        fh.write(data.tobytes())


def read_video(path):
    """Read a VGT file into a float64 array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a VGT file")
    if len(blob) < 4 + _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    dims = _HEADER.unpack_from(blob, 4)
    count = int(np.prod(dims))
    body = blob[4 + _HEADER.size:]
    if len(body) != 4 * count:
        raise ValueError(f"{path}: expected {count} floats, found {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").reshape(dims).astype(np.float64)


_PPM_NAME = re.compile(r"frame_(\d{4})\.ppm$")
_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def _read_ppm(path):
    blob = Path(path).read_bytes()
    pos = 0
    tokens = []
    while len(tokens) < 4:
        m = _TOKEN.match(blob, pos)
        if m is None:
            raise ValueError(f"{path}: malformed PPM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P6":
        raise ValueError(f"{path}: only binary P6 PPM is supported")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported")
    pixels = np.frombuffer(blob[pos + 1:pos + 1 + 3 * width * height], dtype=np.uint8)
    if pixels.size != 3 * width * height:
        raise ValueError(f"{path}: truncated pixel data")
    return pixels.reshape(height, width, 3).transpose(2, 0, 1) / 255.0


def read_ppm_frames(directory):
    """Load ``frame_0000.ppm``, ``frame_0001.ppm``, ... as an F x 3 x H x W video."""
    paths = sorted(p for p in Path(directory).iterdir() if _PPM_NAME.search(p.name))
    if not paths:
        raise ValueError(f"{directory}: no frame_NNNN.ppm files")
    for i, p in enumerate(paths):
        if int(_PPM_NAME.search(p.name).group(1)) != i:
            raise ValueError(f"{directory}: frame indices are not contiguous from 0")
    frames = [_read_ppm(p) for p in paths]
    if len({f.shape for f in frames}) != 1:
        raise ValueError(f"{directory}: frames differ in size")
    return np.stack(frames)


def write_ppm_frames(directory, v):
    """Write a 3-channel video as P6 frames, rounding to 8 bits."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 4 or v.shape[1] != 3:
        raise ValueError("PPM export needs an F x 3 x H x W video")
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(v):
        pixels = np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)
        header = f"P6\n{frame.shape[2]} {frame.shape[1]}\n255\n".encode()
        (out / f"frame_{i:04d}.ppm").write_bytes(header + pixels.transpose(1, 2, 0).tobytes())


def load_video(path):
    """VGT file or a directory of PPM frames."""
    path = Path(path)
    if path.is_dir():
        return read_ppm_frames(path)
    return read_video(path)
