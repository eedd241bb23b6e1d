"""Binary PPM (P6) and PGM (P5) readers and writers.

8-bit only, maxval 255. Frames round-trip bit-exactly; masks are strict
{0,255} files mapped to {0,1} arrays.
"""

import numpy as np

from .errors import FormatError


def _read_header(buf, path, magic):
    if buf[:2] != magic:
        raise FormatError(f"{path}: expected {magic.decode()} file, got {buf[:2]!r}")
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(buf):
            raise FormatError(f"{path}: truncated header")
        ch = buf[pos : pos + 1]
        if ch == b"#":
            nl = buf.find(b"\n", pos)
            if nl < 0:
                raise FormatError(f"{path}: unterminated comment")
            pos = nl + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(buf) and not buf[end : end + 1].isspace():
                end += 1
            token = buf[pos:end]
            if not token.isdigit():
                raise FormatError(f"{path}: malformed header token {token!r}")
            fields.append(int(token))
            pos = end
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise FormatError(f"{path}: missing whitespace after maxval")
    pos += 1
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 supported, got {maxval}")
    if width < 1 or height < 1:
        raise FormatError(f"{path}: bad dimensions {width}x{height}")
    return width, height, pos


def read_ppm(path):
    """8-bit RGB image as a (h, w, 3) uint8 array."""
    with open(path, "rb") as fh:
        buf = fh.read()
    width, height, pos = _read_header(buf, path, b"P6")
    need = width * height * 3
    payload = buf[pos : pos + need]
    if len(payload) != need:
        raise FormatError(f"{path}: truncated payload ({len(payload)} of {need} bytes)")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)


def write_ppm(path, pixels):
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.dtype != np.uint8:
        raise FormatError(f"write_ppm needs (h,w,3) uint8, got {pixels.shape} {pixels.dtype}")
    h, w, _ = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(pixels).tobytes())


def read_pgm(path):
    """8-bit grayscale image as a (h, w) uint8 array."""
    with open(path, "rb") as fh:
        buf = fh.read()
    width, height, pos = _read_header(buf, path, b"P5")
    need = width * height
    payload = buf[pos : pos + need]
    if len(payload) != need:
        raise FormatError(f"{path}: truncated payload ({len(payload)} of {need} bytes)")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width)


def write_pgm(path, pixels):
    pixels = np.asarray(pixels)
    if pixels.ndim != 2 or pixels.dtype != np.uint8:
        raise FormatError(f"write_pgm needs (h,w) uint8, got {pixels.shape} {pixels.dtype}")
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(pixels).tobytes())


def read_image(path):
    """Frame as float32 (h, w, 3) normalized to [0,1]."""
    return read_ppm(path).astype(np.float32) / 255.0


def write_image(path, image):
    """Write a float [0,1] (or uint8) frame as binary PPM."""
    image = np.asarray(image)
    if image.dtype != np.uint8:
        image = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    write_ppm(path, image)


def read_mask(path):
    """Binary mask as uint8 {0,1}; the file must contain only {0,255}."""
    raw = read_pgm(path)
    bad = np.setdiff1d(np.unique(raw), [0, 255])
    if bad.size:
        raise FormatError(f"{path}: mask values must be 0 or 255, found {bad.tolist()}")
    return (raw == 255).astype(np.uint8)


def write_mask(path, mask):
    mask = np.asarray(mask)
    values = np.unique(mask)
    if not np.isin(values, [0, 1]).all():
        raise FormatError(f"write_mask needs {{0,1}} values, found {values.tolist()}")
    write_pgm(path, (mask * 255).astype(np.uint8))
