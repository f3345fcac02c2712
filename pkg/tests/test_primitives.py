import itertools
import threading

import pytest
from hypothesis import given, settings, strategies as st

from qsmn.crypto import (
    AeadEnvelope,
    AeadError,
    CryptoError,
    KeyReuseError,
    OtsError,
    OtsKeyPair,
    OtsKeyPool,
    OtsSignature,
    PoolExhausted,
    SymmetricKey,
    aead_open,
    aead_seal,
    classical_stub_keypair,
    classical_stub_shared,
    hybrid_combine,
    kdf,
    ots_sign,
    ots_verify,
)
from qsmn.crypto.primitives import expand, frame, unframe

KEY = SymmetricKey(bytes(range(32)))
NONCE = bytes(12)


class TestKdf:
    def test_domain_separation(self):
        assert kdf("a", [b"x"]) != kdf("b", [b"x"])

    def test_framing(self):
        assert kdf("a", [b"x", b"y"]) != kdf("a", [b"xy"])
        assert kdf("a", [b"", b"xy"]) != kdf("a", [b"xy"])

    def test_deterministic(self):
        assert kdf("a", [b"x"]) == kdf("a", [b"x"])

    def test_empty_label_rejected(self):
        with pytest.raises(ValueError):
            kdf("", [b"x"])

    def test_published_vector(self, golden):
        label_line, digest = golden("kdf_vector.txt").splitlines()
        assert kdf("qsmn-test-vector", [b"alpha", b"beta"]).value.hex() == digest

    def test_no_collisions_over_small_lists(self):
        alphabet = [b"", b"a", b"b", b"ab", b"\x00"]
        lists = [list(c) for r in range(4) for c in itertools.product(alphabet, repeat=r)]
        outputs = {kdf("probe", x).value for x in lists}
        assert len(outputs) == len(lists)


@given(st.lists(st.binary(max_size=20), max_size=6))
def test_frame_round_trip(items):
    assert unframe(frame(items)) == items


def test_expand_label_separation():
    assert expand(b"s", "a", 16) != expand(b"s", "b", 16)
    assert expand(b"s", "a", 64)[:16] == expand(b"s", "a", 16)


class TestAead:
    def test_round_trip(self):
        env = aead_seal(KEY, NONCE, b"aad", b"hello")
        assert aead_open(KEY, env, b"aad") == b"hello"

    def test_altered_aad(self):
        env = aead_seal(KEY, NONCE, b"aad", b"hello")
        with pytest.raises(AeadError):
            aead_open(KEY, env, b"aae")

    def test_altered_tag(self):
        env = aead_seal(KEY, NONCE, b"aad", b"hello")
        bad = AeadEnvelope(env.nonce, env.ciphertext, bytes([env.tag[0] ^ 1]) + env.tag[1:], env.aad_digest)
        with pytest.raises(AeadError):
            aead_open(KEY, bad, b"aad")

    def test_every_single_bit_flip_fails(self):
        env = aead_seal(KEY, NONCE, b"aad", b"payload!")
        fields = ["nonce", "ciphertext", "tag", "aad_digest"]
        for name in fields:
            raw = getattr(env, name)
            for bit in range(len(raw) * 8):
                flipped = bytearray(raw)
                flipped[bit // 8] ^= 1 << (bit % 8)
                bad = AeadEnvelope(**{**env.__dict__, name: bytes(flipped)})
                with pytest.raises(AeadError):
                    aead_open(KEY, bad, b"aad")

    def test_envelope_serialization(self):
        env = aead_seal(KEY, NONCE, b"aad", b"x" * 40)
        assert AeadEnvelope.from_bytes(env.to_bytes()) == env

    def test_bad_nonce_length(self):
        with pytest.raises(CryptoError):
            aead_seal(KEY, b"short", b"", b"x")


class TestHybrid:
    a = bytes([1] * 32)
    b = bytes([2] * 32)

    def test_ordered(self):
        assert hybrid_combine(self.a, self.b) != hybrid_combine(self.b, self.a)

    def test_not_single_input(self):
        for b in (self.b, self.a, bytes(32)):
            assert hybrid_combine(self.a, b) != kdf("hybrid", [self.a])

    def test_deterministic(self):
        assert hybrid_combine(self.a, self.b) == hybrid_combine(self.a, self.b)

    def test_wrong_lengths(self):
        with pytest.raises(CryptoError):
            hybrid_combine(b"x", self.b)

    def test_stub_dh_agrees(self):
        a_priv, a_pub = classical_stub_keypair(b"alice")
        b_priv, b_pub = classical_stub_keypair(b"bob")
        assert classical_stub_shared(a_priv, b_pub) == classical_stub_shared(b_priv, a_pub)


class TestOts:
    def test_round_trip(self):
        key = OtsKeyPair.generate(b"k")
        sig = ots_sign(key, b"message")
        assert ots_verify(key.public, b"message", sig)

    def test_message_bit_flip(self):
        key = OtsKeyPair.generate(b"k")
        msg = b"message"
        sig = ots_sign(key, msg)
        for bit in range(len(msg) * 8):
            other = bytearray(msg)
            other[bit // 8] ^= 1 << (bit % 8)
            assert not ots_verify(key.public, bytes(other), sig)

    def test_reuse_is_error(self):
        key = OtsKeyPair.generate(b"k")
        ots_sign(key, b"one")
        with pytest.raises(KeyReuseError):
            ots_sign(key, b"two")

    def test_concurrent_signers_get_one_signature(self):
        key = OtsKeyPair.generate(b"k")
        results = []

        def attempt(i):
            try:
                results.append(ots_sign(key, bytes([i])))
            except KeyReuseError:
                pass

        threads = [threading.Thread(target=attempt, args=(i,)) for i in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(results) == 1

    def test_signature_length_mismatch(self):
        key = OtsKeyPair.generate(b"k")
        sig = ots_sign(key, b"m")
        with pytest.raises(OtsError):
            ots_verify(key.public, b"m", OtsSignature(sig.preimages[:-1]))
        with pytest.raises(OtsError):
            OtsSignature.from_bytes(sig.to_bytes()[:-1])

    def test_public_commits_to_512_hashes(self):
        key = OtsKeyPair.generate(b"k")
        assert sum(len(row) for row in key.public.hashes) == 512

    def test_pool_and_anchor(self):
        pool = OtsKeyPool(b"pool", 3)
        idx, key = pool.take()
        assert idx == 0 and pool.anchor.admits(0, key.public)
        assert not pool.anchor.admits(1, key.public)
        pool.take()
        pool.take()
        with pytest.raises(PoolExhausted):
            pool.take()
        assert len(pool.anchor.commitment) == 32


@settings(max_examples=30, deadline=None)
@given(st.binary(min_size=1, max_size=64), st.binary(min_size=1, max_size=64))
def test_ots_unforgeability_smoke(m, m2):
    key = OtsKeyPair.generate(m + b"|seed")
    sig = ots_sign(key, m)
    assert ots_verify(key.public, m2, sig) == (m2 == m)
