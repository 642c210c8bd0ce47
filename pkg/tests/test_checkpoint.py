import json
import struct

import numpy as np
import pytest

from signembed.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from signembed.errors import FormatError, TruncatedFileError, ValidationError
from signembed.text import Vocabulary
from signembed.train import validation_loss


def split_file(data):
    hlen = struct.unpack_from("<I", data, 6)[0]
    return json.loads(data[10 : 10 + hlen]), data[10 + hlen :]


def rebuild(header, blob):
    h = json.dumps(header, sort_keys=True).encode()
    return b"SCKP" + struct.pack("<HI", 1, len(h)) + h + blob


def test_round_trip_is_byte_identical(tiny_run, tmp_path):
    ckpt = tiny_run[0]
    save_checkpoint(ckpt, tmp_path / "a.sckp")
    back = load_checkpoint(tmp_path / "a.sckp")
    save_checkpoint(back, tmp_path / "b.sckp")
    assert (tmp_path / "a.sckp").read_bytes() == (tmp_path / "b.sckp").read_bytes()
    assert back.config == ckpt.config and back.vocab == ckpt.vocab and back.pipeline == ckpt.pipeline
    assert all(np.array_equal(back.params[k], ckpt.params[k]) for k in ckpt.params)


def test_header_layout(tiny_run):
    data = encode_checkpoint(tiny_run[0])
    assert data[:4] == b"SCKP" and struct.unpack_from("<H", data, 4)[0] == 1
    header, blob = split_file(data)
    assert {"config", "vocab", "vocab_hash", "pipeline", "epoch", "valid_loss", "params"} <= set(header)
    assert len(blob) == 4 * sum(int(np.prod(m["shape"])) for m in header["params"])


def test_selection_loss_is_reproduced(tiny_run, tiny_data, tmp_path):
    ckpt = tiny_run[0]
    save_checkpoint(ckpt, tmp_path / "c.sckp")
    loaded = load_checkpoint(tmp_path / "c.sckp")
    assert abs(validation_loss(loaded, tiny_data) - ckpt.valid_loss) < 1e-5


def test_corrupt_files(tiny_run):
    data = encode_checkpoint(tiny_run[0])
    with pytest.raises(FormatError):
        decode_checkpoint(b"XXXX" + data[4:])
    with pytest.raises(TruncatedFileError):
        decode_checkpoint(data[:-4])
    with pytest.raises(TruncatedFileError):
        decode_checkpoint(data[:14])
    with pytest.raises(FormatError):
        decode_checkpoint(data + b"\0\0\0\0")
    bad_version = data[:4] + struct.pack("<H", 9) + data[6:]
    with pytest.raises(FormatError):
        decode_checkpoint(bad_version)


def test_vocab_hash_checks(tiny_run):
    data = encode_checkpoint(tiny_run[0])
    header, blob = split_file(data)
    header["vocab"] = header["vocab"][:-1] + ["tampered"]
    with pytest.raises(FormatError):
        decode_checkpoint(rebuild(header, blob))
    other = Vocabulary(tiny_run[0].vocab.tokens + ["extra"])
    with pytest.raises(ValidationError):
        decode_checkpoint(data, other)
    assert decode_checkpoint(data, tiny_run[0].vocab).epoch == tiny_run[0].epoch
