import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from qsmn import _kernels_py, kernels
from qsmn.crypto import (
    LWE_256,
    TOY_4,
    KemCiphertext,
    KemError,
    KemKeyPair,
    KemPublicKey,
    LweParameters,
    ParamsMismatch,
    kem_decapsulate,
    kem_encapsulate,
    kem_keygen,
)
from qsmn.crypto.lwe import (
    cbd,
    compress,
    decompress,
    expand_public_matrix,
    lwe_decrypt,
    lwe_encrypt,
)

TOY_SEED = bytes(range(32))

# Computed once with tests/oracles.py and checked by hand (row 0: 1*-1 + 5*-1 + 0 = -6 = 11 mod 17).
TOY_MATRIX = [[1, 5, 8, 3], [14, 1, 5, 8], [9, 14, 1, 5], [12, 9, 14, 1]]
TOY_S = (-1, -1, 0, 0)
TOY_E = (0, -1, 0, 1)
TOY_B = (11, 1, 11, 14)
TOY_CT_U = (13, 9, 12, 16)
TOY_CT_V = (8, 11, 6, 14)


def seed(i: int) -> bytes:
    return i.to_bytes(32, "little")


def test_keygen_deterministic():
    assert kem_keygen(LWE_256, seed(7)) == kem_keygen(LWE_256, seed(7))


def test_keygen_rejects_bad_seed_length():
    with pytest.raises(KemError):
        kem_keygen(LWE_256, b"short")


def test_zero_noise_gives_exact_product():
    assert not cbd(b"\xff" * 64, 0, 16).any()
    params = LweParameters("toy-eta0", n=4, q=17, eta=0, msg_bits=4)
    kp = kem_keygen(params, TOY_SEED)
    a = expand_public_matrix(params, kp.public_key.rho)
    s = np.array(kp.secret_key.s)
    assert tuple((a @ s) % params.q) == kp.public_key.b


def test_toy_keypair_matches_hand_matrix_arithmetic():
    kp = kem_keygen(TOY_4, TOY_SEED)
    assert expand_public_matrix(TOY_4, kp.public_key.rho).tolist() == TOY_MATRIX
    assert kp.secret_key.s == TOY_S
    assert kp.public_key.b == TOY_B
    by_hand = [(sum(TOY_MATRIX[i][j] * TOY_S[j] for j in range(4)) + TOY_E[i]) % 17 for i in range(4)]
    assert tuple(by_hand) == TOY_B


def test_toy_ciphertext_frozen_vector():
    kp = kem_keygen(TOY_4, TOY_SEED)
    ct = lwe_encrypt(kp.public_key, np.array([1, 0, 1, 1]), bytes(32))
    assert (ct.u, ct.v) == (TOY_CT_U, TOY_CT_V)


@pytest.mark.parametrize("i", range(25))
def test_toy_encryption_matches_bruteforce_oracle(i):
    rng = np.random.default_rng(i)
    key_seed = rng.bytes(32)
    coins = rng.bytes(32)
    msg = rng.integers(0, 2, 4)
    kp = kem_keygen(TOY_4, key_seed)
    rho, s, _, b = oracles.keygen(key_seed, 4, 17, 1)
    assert kp.public_key.b == tuple(b) and kp.secret_key.s == tuple(s)
    ct = lwe_encrypt(kp.public_key, msg, coins)
    u, v = oracles.encrypt(rho, b, list(msg), coins, 4, 17, 1, 4)
    assert list(ct.u) == u and list(ct.v) == v


def test_shipped_keypair_matches_oracle():
    kp = kem_keygen(LWE_256, seed(3))
    _, s, _, b = oracles.keygen(seed(3), 256, 3329, 2)
    assert kp.public_key.b == tuple(b)
    assert kp.secret_key.s == tuple(s)
    assert all(-2 <= c <= 2 for c in kp.secret_key.s)
    assert len(kp.public_key.b) == 256


@pytest.mark.parametrize("d,q", [(4, 3329), (1, 3329), (4, 17), (10, 3329)])
def test_compress_is_nearest_code(d, q):
    xs = np.arange(q)
    got = compress(xs, d, q)
    assert [oracles.nearest_code(int(x), d, q) for x in xs] == got.tolist()


def test_decompress_error_bound():
    q, d = 3329, 4
    xs = np.arange(q)
    err = (decompress(compress(xs, d, q), d, q) - xs) % q
    err = np.minimum(err, q - err)
    assert err.max() <= (q + (1 << d)) // (1 << (d + 1))


def test_round_trip_and_seed_separation():
    kp = kem_keygen(LWE_256, seed(1))
    ct1, ss1 = kem_encapsulate(kp.public_key, seed(10))
    ct2, ss2 = kem_encapsulate(kp.public_key, seed(11))
    assert kem_decapsulate(kp.secret_key, ct1) == ss1
    assert kem_decapsulate(kp.secret_key, ct2) == ss2
    assert ct1 != ct2 and ss1 != ss2


def test_lwe_decrypt_recovers_message():
    kp = kem_keygen(LWE_256, seed(2))
    msg = np.random.default_rng(0).integers(0, 2, 256)
    ct = lwe_encrypt(kp.public_key, msg, seed(99))
    assert (lwe_decrypt(kp.secret_key, ct) == msg).all()


@pytest.mark.parametrize("index", [0, 17, 255])
def test_tampered_ciphertext_is_implicitly_rejected(index):
    kp = kem_keygen(LWE_256, seed(4))
    ct, ss = kem_encapsulate(kp.public_key, seed(5))
    u = list(ct.u)
    u[index] = (u[index] + LWE_256.q // 2) % LWE_256.q
    bad = KemCiphertext(ct.params_id, tuple(u), ct.v)
    out = kem_decapsulate(kp.secret_key, bad)
    assert out != ss
    assert kem_decapsulate(kp.secret_key, bad) == out


def test_params_mismatch_raises():
    kp = kem_keygen(LWE_256, seed(4))
    toy = kem_keygen(TOY_4, seed(4))
    ct, _ = kem_encapsulate(toy.public_key, seed(5))
    with pytest.raises(ParamsMismatch):
        kem_decapsulate(kp.secret_key, ct)


def test_encapsulate_rejects_non_key():
    with pytest.raises(KemError):
        kem_encapsulate(b"not a key", seed(0))


@pytest.mark.parametrize("params", [LWE_256, TOY_4])
def test_serialization_round_trip(params):
    kp = kem_keygen(params, seed(8))
    assert KemKeyPair.from_bytes(kp.to_bytes()) == kp
    assert KemPublicKey.from_bytes(kp.public_key.to_bytes()) == kp.public_key
    ct, _ = kem_encapsulate(kp.public_key, seed(9))
    assert KemCiphertext.from_bytes(ct.to_bytes()) == ct
    assert len(kp.public_key.to_bytes()) == 4 + 32 + 2 * params.n
    assert len(ct.to_bytes()) == 4 + 4 * params.n


def test_unknown_params_id_rejected():
    kp = kem_keygen(TOY_4, seed(8))
    raw = bytearray(kp.public_key.to_bytes())
    raw[0] ^= 0xFF
    with pytest.raises(KemError):
        KemPublicKey.from_bytes(bytes(raw))


@pytest.mark.parametrize("name", ["toy_pk", "toy_ct", "lwe256_pk", "lwe256_ct"])
def test_golden_serialization_vectors(golden, name):
    params = TOY_4 if name.startswith("toy") else LWE_256
    kp = kem_keygen(params, TOY_SEED)
    ct, ss = kem_encapsulate(kp.public_key, bytes(32))
    data = kp.public_key.to_bytes() if name.endswith("pk") else ct.to_bytes()
    assert golden(f"kem_{name}.hex") == data.hex()
    if name.endswith("ct"):
        assert golden(f"kem_{name.split('_')[0]}_ss.hex") == ss.value.hex()


@settings(max_examples=25, deadline=None)
@given(st.binary(min_size=32, max_size=32), st.binary(min_size=32, max_size=32))
def test_kem_correctness_property(key_seed, enc_seed):
    kp = kem_keygen(LWE_256, key_seed)
    ct, ss = kem_encapsulate(kp.public_key, enc_seed)
    assert kem_decapsulate(kp.secret_key, ct) == ss


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 300), st.sampled_from([17, 97, 3329]), st.integers(0, 2**32))
def test_kernel_backends_agree(n, q, s):
    rng = np.random.default_rng(s)
    a = rng.integers(-q, q, n)
    b = rng.integers(-3, 4, n)
    expected = oracles.ring_mul([int(x) for x in a], [int(x) for x in b], q) if n <= 40 else None
    fast = kernels.negacyclic_mul(a, b, q)
    slow = _kernels_py.negacyclic_mul(a, b, q)
    assert fast.tolist() == slow.tolist()
    if expected is not None:
        assert fast.tolist() == expected
