"""Minimal RIFF/WAVE reader and writer.

Supports PCM16, PCM24 and IEEE float32 with 1..64 channels, including the
WAVE_FORMAT_EXTENSIBLE wrapper.  Integer PCM is normalised by 2**(bits-1),
so a PCM16 sample of 32767 reads as 32767/32768.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from .audio import MultichannelRecording, Waveform
from .errors import DataError, FileFormatError

PCM = 1
IEEE_FLOAT = 3
EXTENSIBLE = 0xFFFE
MAX_CHANNELS = 64


def _fail(path, field, offset, msg):
    raise FileFormatError(path, field, offset, msg)


def read_wav(path) -> MultichannelRecording:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 12:
        _fail(path, "RIFF header", 0, "file too short for a RIFF header")
    if raw[0:4] != b"RIFF":
        _fail(path, "ChunkID", 0, f"expected b'RIFF', got {raw[0:4]!r}")
    if raw[8:12] != b"WAVE":
        _fail(path, "Format", 8, f"expected b'WAVE', got {raw[8:12]!r}")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos : pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = pos + 8
        if body + size > len(raw):
            _fail(path, f"{cid.decode('latin-1')} chunk size", pos + 4,
                  f"chunk declares {size} bytes but only {len(raw) - body} remain (truncated file)")
        if cid == b"fmt ":
            if size < 16:
                _fail(path, "fmt chunk size", pos + 4, f"fmt chunk too small ({size} bytes)")
            fmt = (body, struct.unpack_from("<HHIIHH", raw, body), size)
        elif cid == b"data":
            data = (body, size)
        pos = body + size + (size & 1)
    if fmt is None:
        _fail(path, "fmt chunk", 12, "no fmt chunk found")
    if data is None:
        _fail(path, "data chunk", 12, "no data chunk found")

    fbody, (tag, channels, rate, _, block_align, bits), fsize = fmt
    if tag == EXTENSIBLE:
        if fsize < 40:
            _fail(path, "cbSize", fbody + 16, "extensible fmt chunk shorter than 40 bytes")
        (tag,) = struct.unpack_from("<H", raw, fbody + 24)
    if not 1 <= channels <= MAX_CHANNELS:
        _fail(path, "NumChannels", fbody + 2, f"unsupported channel count {channels}")
    if rate == 0:
        _fail(path, "SampleRate", fbody + 4, "sample rate is zero")
    if (tag, bits) not in ((PCM, 16), (PCM, 24), (IEEE_FLOAT, 32)):
        _fail(path, "AudioFormat", fbody, f"unsupported codec (format tag {tag}, {bits} bits)")
    width = bits // 8
    if block_align != width * channels:
        _fail(path, "BlockAlign", fbody + 12, f"block align {block_align} != {width}*{channels}")

    dbody, dsize = data
    if dsize % block_align:
        _fail(path, "data chunk size", dbody - 4, f"{dsize} bytes is not a whole number of frames")
    buf = raw[dbody : dbody + dsize]
    if tag == IEEE_FLOAT:
        x = np.frombuffer(buf, dtype="<f4").astype(np.float64)
    elif bits == 16:
        x = np.frombuffer(buf, dtype="<i2").astype(np.float64) / 32768.0
    else:
        b = np.frombuffer(buf, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        x = v.astype(np.float64) / float(1 << 23)
    x = x.reshape(-1, channels).T
    if not np.all(np.isfinite(x)):
        _fail(path, "data", dbody, "non-finite float samples")
    ids = tuple(str(i) for i in range(channels))
    return MultichannelRecording(x, int(rate), ids)


def write_wav(path, audio: Union[Waveform, MultichannelRecording], subtype: str = "float32") -> None:
    """Write float32 (bit-exact round trip) or PCM16 (clipped to [-1, 1))."""
    if isinstance(audio, Waveform):
        x, rate = audio.samples[None, :], audio.sample_rate
    else:
        x, rate = audio.data, audio.sample_rate
    channels = x.shape[0]
    if not 1 <= channels <= MAX_CHANNELS:
        raise DataError(f"cannot write {channels} channels")
    inter = np.ascontiguousarray(x.T)
    if subtype == "float32":
        tag, bits = IEEE_FLOAT, 32
        payload = inter.astype("<f4").tobytes()
    elif subtype == "pcm16":
        tag, bits = PCM, 16
        payload = np.clip(np.round(inter * 32768.0), -32768, 32767).astype("<i2").tobytes()
    else:
        raise ValueError(f"unsupported subtype {subtype!r}")
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
