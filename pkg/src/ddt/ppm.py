"""Binary PPM (P6, maxval 255) reading and writing."""
import numpy as np

from .errors import FormatError


def quantize(image):
    """Float image in [0, 1] -> uint8 via round(255 * v)."""
    return np.rint(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_ppm(image) -> bytes:
    pixels = quantize(image)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise FormatError(f"PPM needs an (H, W, 3) image, got shape {pixels.shape}")
    h, w, _ = pixels.shape
    return b"P6\n%d %d\n255\n" % (w, h) + pixels.tobytes()


def _header_tokens(data):
    """Yield (token, end_offset) for the four header fields, skipping comments."""
    pos = 0
    n = len(data)
    for _ in range(4):
        while pos < n:
            ch = data[pos:pos + 1]
            if ch == b"#":
                while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PPM header")
        yield data[start:pos], pos


def decode_ppm(data: bytes) -> np.ndarray:
    """Parse P6 bytes into a float (H, W, 3) image with values k / 255."""
    tokens = list(_header_tokens(data))
    magic = tokens[0][0]
    if magic != b"P6":
        raise FormatError(f"bad PPM magic {magic!r}")
    try:
        w, h, maxval = (int(t) for t, _ in tokens[1:])
    except ValueError:
        raise FormatError("non-numeric PPM header field") from None
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}")
    if w < 1 or h < 1:
        raise FormatError(f"bad PPM size {w}x{h}")
    end = tokens[-1][1]
    # exactly one whitespace byte separates the header from the raster
    if end >= len(data) or not data[end:end + 1].isspace():
        raise FormatError("truncated PPM header")
    raster = data[end + 1:]
    need = w * h * 3
    if len(raster) < need:
        raise FormatError(f"truncated PPM raster: {len(raster)} of {need} bytes")
    pixels = np.frombuffer(raster[:need], dtype=np.uint8).reshape(h, w, 3)
    return pixels.astype(np.float64) / 255.0


def write_ppm(path, image):
    with open(path, "wb") as fh:
        fh.write(encode_ppm(image))


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_ppm(fh.read())
