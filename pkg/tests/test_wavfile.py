import struct

import numpy as np
import pytest

from dasrfront.audio import MultichannelRecording, Waveform
from dasrfront.errors import FileFormatError
from dasrfront.wavfile import read_wav, write_wav


def _pcm_file(path, samples, bits=16, channels=1, extensible=False, rate=16000):
    width = bits // 8
    if bits == 16:
        payload = np.asarray(samples, "<i2").tobytes()
    else:
        v = np.asarray(samples, np.int64) & 0xFFFFFF
        payload = b"".join(int(s).to_bytes(3, "little") for s in v)
    block = width * channels
    if extensible:
        guid = struct.pack("<H", 1) + b"\x00\x00\x00\x00\x10\x00\x80\x00\x00\xaa\x00\x38\x9b\x71"
        fmt = struct.pack("<HHIIHHHHI", 0xFFFE, channels, rate, rate * block, block, bits, 22, bits, 0) + guid
    else:
        fmt = struct.pack("<HHIIHH", 1, channels, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(payload)) + payload
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


def test_float32_round_trip_bit_exact(tmp_path, rng):
    x = rng.uniform(-1, 1, (3, 1001)).astype(np.float32).astype(np.float64)
    write_wav(tmp_path / "a.wav", MultichannelRecording(x, 48000))
    rec = read_wav(tmp_path / "a.wav")
    assert rec.sample_rate == 48000
    np.testing.assert_array_equal(rec.data, x)


def test_pcm16_full_scale(tmp_path):
    _pcm_file(tmp_path / "p.wav", [32767, -32768, 0, 1])
    rec = read_wav(tmp_path / "p.wav")
    np.testing.assert_array_equal(rec.data[0], [32767 / 32768, -1.0, 0.0, 1 / 32768])


def test_pcm24_and_extensible(tmp_path):
    vals = [(1 << 23) - 1, -(1 << 23), 5, -5, 0, 100]
    _pcm_file(tmp_path / "p.wav", vals, bits=24, channels=2, extensible=True)
    rec = read_wav(tmp_path / "p.wav")
    assert rec.n_channels == 2
    np.testing.assert_array_equal(rec.data.T.ravel(), np.array(vals) / float(1 << 23))


def test_pcm16_write_read(tmp_path):
    x = np.array([0.5, -0.25, 0.0, -1.0])
    write_wav(tmp_path / "p.wav", Waveform(x, 8000), subtype="pcm16")
    np.testing.assert_array_equal(read_wav(tmp_path / "p.wav").data[0], x)


def test_truncated_file_names_field(tmp_path, rng):
    write_wav(tmp_path / "a.wav", Waveform(rng.uniform(-1, 1, 500), 16000))
    raw = (tmp_path / "a.wav").read_bytes()
    (tmp_path / "t.wav").write_bytes(raw[:-100])
    with pytest.raises(FileFormatError) as exc:
        read_wav(tmp_path / "t.wav")
    assert exc.value.field == "data chunk size"
    assert exc.value.offset == 40


@pytest.mark.parametrize(
    "mutate, field",
    [
        (lambda b: b"RIFX" + b[4:], "ChunkID"),
        (lambda b: b[:8] + b"WAVX" + b[12:], "Format"),
        (lambda b: b[:20] + struct.pack("<H", 2) + b[22:], "AudioFormat"),
        (lambda b: b[:22] + struct.pack("<H", 0) + b[24:], "NumChannels"),
        (lambda b: b[:6], "RIFF header"),
    ],
)
def test_malformed_headers(tmp_path, mutate, field):
    write_wav(tmp_path / "a.wav", Waveform(np.zeros(10), 16000))
    (tmp_path / "m.wav").write_bytes(mutate((tmp_path / "a.wav").read_bytes()))
    with pytest.raises(FileFormatError) as exc:
        read_wav(tmp_path / "m.wav")
    assert exc.value.field == field
