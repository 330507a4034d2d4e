"""Wire format byte-exactness and random-stream determinism."""

import struct

import numpy as np
import pytest

from mostats import serialize
from mostats.errors import ContractError
from mostats.rng import Rng, episode_rng


class TestTensorFormat:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    @pytest.mark.parametrize("shape", [(3,), (2, 4), (2, 3, 4), ()])
    def test_round_trip(self, dtype, shape):
        arr = Rng(1).normal(size=shape).astype(dtype)
        back = serialize.tensor_from_bytes(serialize.tensor_to_bytes(arr))
        assert back.dtype == arr.dtype
        assert back.shape == arr.shape
        assert back.tobytes() == arr.tobytes()

    def test_header_layout(self):
        arr = np.arange(6, dtype=np.float64).reshape(2, 3)
        buf = serialize.tensor_to_bytes(arr)
        assert buf[:4] == b"MOST"
        assert buf[4] == 1                      # f64 tag
        assert buf[5] == 2                      # rank
        assert struct.unpack_from("<QQ", buf, 6) == (2, 3)
        payload = np.frombuffer(buf[6 + 16:], dtype="<f8")
        np.testing.assert_array_equal(payload.reshape(2, 3), arr)

    def test_f32_tag_is_zero(self):
        assert serialize.tensor_to_bytes(np.zeros(1, dtype=np.float32))[4] == 0

    def test_trailing_bytes_rejected(self):
        buf = serialize.tensor_to_bytes(np.ones(2)) + b"x"
        with pytest.raises(ContractError):
            serialize.tensor_from_bytes(buf)

    def test_bad_magic_rejected(self):
        buf = bytearray(serialize.tensor_to_bytes(np.ones(2)))
        buf[0] = ord("X")
        with pytest.raises(ContractError):
            serialize.tensor_from_bytes(bytes(buf))

    def test_int_arrays_rejected(self):
        with pytest.raises(ContractError):
            serialize.tensor_to_bytes(np.ones(3, dtype=np.int64))

    def test_multi_tensor_stream(self):
        a = Rng(2).normal(size=(2, 2))
        b = Rng(3).normal(size=4).astype(np.float32)
        buf = serialize.tensor_to_bytes(a) + serialize.tensor_to_bytes(b)
        got_a, off = serialize.read_tensor(buf, 0)
        got_b, off = serialize.read_tensor(buf, off)
        assert off == len(buf)
        np.testing.assert_array_equal(got_a, a)
        np.testing.assert_array_equal(got_b, b)


class TestRng:
    def test_same_seed_same_stream(self):
        a, b = Rng(123), Rng(123)
        np.testing.assert_array_equal(a.normal(size=50), b.normal(size=50))
        np.testing.assert_array_equal(a.permutation(20), b.permutation(20))

    def test_different_seeds_differ(self):
        assert not np.array_equal(Rng(1).normal(size=20), Rng(2).normal(size=20))

    def test_derive_is_stable_and_independent(self):
        base = Rng(7)
        c1 = base.derive("epoch0")
        c2 = Rng(7).derive("epoch0")
        assert c1.seed == c2.seed
        assert base.derive("epoch0").seed != base.derive("epoch1").seed

    def test_derive_ignores_parent_consumption(self):
        a = Rng(9)
        a.normal(size=100)
        assert a.derive("x").seed == Rng(9).derive("x").seed

    def test_episode_rng_xor(self):
        assert episode_rng(5, 3).seed == 5 ^ 3
        np.testing.assert_array_equal(episode_rng(5, 3).normal(size=4),
                                      Rng(6).normal(size=4))
