import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from asmlp import checkpoint
from asmlp.checkpoint import CheckpointError

arrays = hnp.arrays(st.sampled_from([np.float32, np.float64]), hnp.array_shapes(min_dims=0, max_dims=3, max_side=4),
                    elements=st.floats(allow_nan=True, allow_infinity=True, width=32))
names = st.text(st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=12)


@given(st.dictionaries(names, arrays, max_size=5))
def test_round_trip_is_bit_exact(tensors):
    out, version = checkpoint.decode(checkpoint.encode(tensors))
    assert version == checkpoint.VERSION and list(out) == list(tensors)
    for k, v in tensors.items():
        assert out[k].dtype == v.dtype and out[k].shape == v.shape
        assert out[k].tobytes() == np.ascontiguousarray(v).tobytes()


def test_file_round_trip(tmp_path, rng):
    t = {"w": rng.standard_normal((3, 4)), "b": rng.standard_normal(4).astype(np.float32)}
    checkpoint.save(tmp_path / "c.ckpt", t)
    out, _ = checkpoint.load(tmp_path / "c.ckpt")
    assert all(out[k].tobytes() == t[k].tobytes() for k in t)
    assert not (tmp_path / "c.ckpt.tmp").exists()


def test_every_flipped_byte_is_detected(rng):
    blob = bytearray(checkpoint.encode({"x": rng.standard_normal(5)}))
    for pos in range(len(blob)):
        bad = bytearray(blob)
        bad[pos] ^= 0x10
        with pytest.raises(CheckpointError):
            checkpoint.decode(bytes(bad))


def test_truncation_is_detected(rng):
    blob = checkpoint.encode({"x": rng.standard_normal(5)})
    for n in (0, 4, len(blob) // 2, len(blob) - 1):
        with pytest.raises(CheckpointError):
            checkpoint.decode(blob[:n])


def test_unsupported_dtype_rejected():
    with pytest.raises(CheckpointError):
        checkpoint.encode({"i": np.arange(3)})
