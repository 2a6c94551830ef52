"""Binary netpbm codec: P6 (RGB images) and P5 (grayscale masks), maxval 255."""

from dataclasses import dataclass

import numpy as np

from .errors import (CodecMagicError, CodecMaxvalError, CodecTruncatedError,
                     ShapeError)


@dataclass
class ImageBuffer:
    width: int
    height: int
    channels: int  # 1 or 3
    samples: np.ndarray  # uint8, shape (height, width, channels)

    def to_tensor_data(self):
        """[0,255] -> [0,1] float64 array in C x H x W layout."""
        arr = self.samples.astype(np.float64) / 255.0
        return arr.transpose(2, 0, 1)


def _parse_header(blob):
    if len(blob) < 2:
        raise CodecTruncatedError("file too short for a netpbm header")
    magic = blob[:2]
    if magic not in (b"P5", b"P6"):
        raise CodecMagicError("bad netpbm magic %r (want P5 or P6)" % magic)
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(blob):
            raise CodecTruncatedError("header ended before width/height/maxval")
        ch = blob[pos:pos + 1]
        if ch == b"#":
            while pos < len(blob) and blob[pos:pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        elif ch.isdigit():
            start = pos
            while pos < len(blob) and blob[pos:pos + 1].isdigit():
                pos += 1
            fields.append(int(blob[start:pos]))
        else:
            raise CodecMagicError("unexpected byte %r in netpbm header" % ch)
    if pos >= len(blob) or not blob[pos:pos + 1].isspace():
        raise CodecTruncatedError("missing whitespace after maxval")
    pos += 1
    width, height, maxval = fields
    if maxval != 255:
        raise CodecMaxvalError("unsupported maxval %d (only 255)" % maxval)
    return magic, width, height, pos


def decode(blob):
    """Decode P6 or P5 bytes into an ImageBuffer."""
    magic, width, height, pos = _parse_header(blob)
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    payload = blob[pos:pos + need]
    if len(payload) < need:
        raise CodecTruncatedError("payload has %d bytes, need %d" % (len(payload), need))
    samples = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels).copy()
    return ImageBuffer(width=width, height=height, channels=channels, samples=samples)


def decode_ppm(blob):
    buf = decode(blob)
    if buf.channels != 3:
        raise CodecMagicError("expected a P6 color image, got P5")
    return buf


def decode_pgm(blob):
    buf = decode(blob)
    if buf.channels != 1:
        raise CodecMagicError("expected a P5 grayscale image, got P6")
    return buf


def encode_ppm(buf):
    if buf.channels != 3:
        raise ShapeError("encode_ppm needs 3 channels, got %d" % buf.channels)
    header = b"P6\n%d %d\n255\n" % (buf.width, buf.height)
    return header + np.ascontiguousarray(buf.samples, dtype=np.uint8).tobytes()


def encode_pgm(buf):
    if buf.channels != 1:
        raise ShapeError("encode_pgm needs 1 channel, got %d" % buf.channels)
    header = b"P5\n%d %d\n255\n" % (buf.width, buf.height)
    return header + np.ascontiguousarray(buf.samples, dtype=np.uint8).tobytes()


def mask_to_pgm(mask_hw):
    """Binary H x W array -> P5 bytes with foreground 255, background 0."""
    samples = (np.asarray(mask_hw) != 0).astype(np.uint8) * 255
    h, w = samples.shape
    return encode_pgm(ImageBuffer(width=w, height=h, channels=1,
                                  samples=samples[:, :, None]))


def image_from_unit_array(chw):
    """[0,1] C x H x W float array -> ImageBuffer via floor(p*255 + 0.5)."""
    arr = np.asarray(chw)
    q = np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    c, h, w = q.shape
    return ImageBuffer(width=w, height=h, channels=c, samples=q.transpose(1, 2, 0))
