"""Oracle-driven tests for the homomorphic encryption layer.

The independent oracles here are deliberately primitive: direct modular
exponentiation, exhaustive enumeration of Z_15, and full-key decryption.
Expected values asserted below were computed with those oracles first.
"""

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from secfed import phe
from secfed.rng import Stream


class FixedRng:
    """Stub RNG returning a constant, to pin the encryption randomness r."""

    def __init__(self, value):
        self.value = value

    def randrange(self, *args):
        return self.value


def exhaustive_decrypt_table(pk, sk):
    """Independent decryption oracle: map every c in Z_{n^2} we can produce."""
    n = int(pk.n)
    table = {}
    for m in range(n):
        for r in range(1, n):
            if math.gcd(r, n) != 1:
                continue
            c = (pow(1 + n, m, n * n) * pow(r, n, n * n)) % (n * n)
            table[c] = m
    return table


# ---------------------------------------------------------------------------
# keygen


def test_keygen_roundtrip_16bit():
    pk, sk = phe.keygen(16, Stream(7))
    rng = Stream(8)
    for _ in range(100):
        m = rng.randrange(int(pk.n))
        assert phe.decrypt(sk, pk, phe.encrypt(pk, m, rng)) == m


def test_hand_keypair_3_5():
    pk, sk = phe.keypair_from_primes(3, 5)
    assert pk.n == 15
    assert sk.lam == 4  # lcm(2, 4)
    table = exhaustive_decrypt_table(pk, sk)
    for c, m in table.items():
        assert phe.decrypt(sk, pk, phe.Ciphertext(c=c, pk_digest=pk.digest)) == m


def test_keygen_rejects_unknown_bits():
    with pytest.raises(phe.DomainError):
        phe.keygen(100, Stream(1))


def test_keygen_deterministic():
    pk1, sk1 = phe.keygen(128, Stream(42))
    pk2, sk2 = phe.keygen(128, Stream(42))
    assert pk1.n == pk2.n and sk1.lam == sk2.lam and sk1.mu == sk2.mu


def test_keygen_distinct_primes_and_sizes(key512):
    pk, _ = key512
    assert int(pk.n).bit_length() >= 511


def test_keypair_from_primes_validation():
    with pytest.raises(phe.DomainError):
        phe.keypair_from_primes(5, 5)
    with pytest.raises(phe.DomainError):
        phe.keypair_from_primes(4, 7)


# ---------------------------------------------------------------------------
# encrypt / decrypt


def test_encrypt_fixed_r_against_modexp_oracle(tiny_keypair):
    pk, _ = tiny_keypair
    # m=0, r=2: c = 2^15 mod 225, straight from the modular exponentiation oracle.
    ct = phe.encrypt(pk, 0, FixedRng(2))
    assert ct.c == pow(2, 15, 225) == 143


def test_encrypt_m2_r4_decrypts(tiny_keypair):
    pk, sk = tiny_keypair
    ct = phe.encrypt(pk, 2, FixedRng(4))
    table = exhaustive_decrypt_table(pk, sk)
    assert table[int(ct.c)] == 2
    assert phe.decrypt(sk, pk, ct) == 2


def test_encrypt_zero_roundtrip(tiny_keypair):
    pk, sk = tiny_keypair
    rng = Stream(3)
    for _ in range(10):
        assert phe.decrypt(sk, pk, phe.encrypt(pk, 0, rng)) == 0


def test_encrypt_out_of_range(tiny_keypair):
    pk, _ = tiny_keypair
    for m in (-1, 15, 200):
        with pytest.raises(phe.DomainError):
            phe.encrypt(pk, m, Stream(0))


def test_roundtrip_exhaustive_all_units(tiny_keypair):
    pk, sk = tiny_keypair
    n = int(pk.n)
    for m in range(n):
        for r in range(1, n):
            if math.gcd(r, n) != 1:
                continue
            ct = phe.encrypt(pk, m, FixedRng(r))
            assert phe.decrypt(sk, pk, ct) == m


def test_decrypt_rejects_foreign_key(tiny_keypair, key128):
    pk_t, sk_t = tiny_keypair
    pk, _ = key128
    ct = phe.encrypt(pk, 5, Stream(1))
    with pytest.raises(phe.KeyMismatchError):
        phe.decrypt(sk_t, pk_t, ct)


def test_probabilistic_encryption(key512):
    pk, _ = key512
    rng = Stream(55)
    seen = {int(phe.encrypt(pk, 123, rng).c) for _ in range(100)}
    assert len(seen) == 100


# ---------------------------------------------------------------------------
# homomorphic operations


def test_add_exhaustive(tiny_keypair):
    pk, sk = tiny_keypair
    rng = Stream(10)
    for a in range(15):
        for b in range(15):
            s = phe.add_ciphertexts(pk, phe.encrypt(pk, a, rng), phe.encrypt(pk, b, rng))
            assert phe.decrypt(sk, pk, s) == (a + b) % 15


def test_add_identity_and_wrap(tiny_keypair):
    pk, sk = tiny_keypair
    rng = Stream(11)
    for m in range(15):
        s = phe.add_ciphertexts(pk, phe.encrypt(pk, m, rng), phe.encrypt(pk, 0, rng))
        assert phe.decrypt(sk, pk, s) == m
    wrap = phe.add_ciphertexts(pk, phe.encrypt(pk, 14, rng), phe.encrypt(pk, 2, rng))
    assert phe.decrypt(sk, pk, wrap) == 1


def test_scalar_mul_laws(tiny_keypair):
    pk, sk = tiny_keypair
    rng = Stream(12)
    for m in range(15):
        for k in range(15):
            ct = phe.scalar_mul(pk, phe.encrypt(pk, m, rng), k)
            assert phe.decrypt(sk, pk, ct) == (k * m) % 15


def test_scalar_mul_identity_and_negation(tiny_keypair):
    pk, sk = tiny_keypair
    rng = Stream(13)
    ct = phe.encrypt(pk, 4, rng)
    assert phe.decrypt(sk, pk, phe.scalar_mul(pk, ct, 1)) == 4
    assert phe.decrypt(sk, pk, phe.scalar_mul(pk, ct, 3)) == 12
    for m in range(15):
        e = phe.encrypt(pk, m, rng)
        neg = phe.scalar_mul(pk, e, 14)  # k = n - 1
        assert phe.decrypt(sk, pk, phe.add_ciphertexts(pk, e, neg)) == 0


def test_ops_reject_key_mismatch(tiny_keypair, key128):
    pk_t, _ = tiny_keypair
    pk, _ = key128
    ct_t = phe.encrypt(pk_t, 1, Stream(1))
    ct = phe.encrypt(pk, 1, Stream(2))
    with pytest.raises(phe.KeyMismatchError):
        phe.add_ciphertexts(pk, ct_t, ct)
    with pytest.raises(phe.KeyMismatchError):
        phe.scalar_mul(pk, ct_t, 2)


# ---------------------------------------------------------------------------
# key splitting and partial decryption


def full_pipeline(pk, shares, ct):
    partials = [phe.partial_decrypt(shares.share(i), pk, ct) for i in range(1, shares.n_shares + 1)]
    return phe.combine_partials(pk, partials, ct)


def test_split_two_shares_exhaustive(tiny_keypair):
    pk, sk = tiny_keypair
    shares = phe.split_key(sk, pk, 2, Stream(20))
    rng = Stream(21)
    for m in range(15):
        ct = phe.encrypt(pk, m, rng)
        assert full_pipeline(pk, shares, ct) == phe.decrypt(sk, pk, ct) == m


def test_split_decrypts_seven(tiny_keypair):
    pk, sk = tiny_keypair
    shares = phe.split_key(sk, pk, 2, Stream(22))
    ct = phe.encrypt(pk, 7, Stream(23))
    assert full_pipeline(pk, shares, ct) == 7


def test_split_rejects_single_share(tiny_keypair):
    pk, sk = tiny_keypair
    with pytest.raises(phe.DomainError):
        phe.split_key(sk, pk, 1, Stream(24))


def test_strict_subset_flagged(key128):
    pk, sk = key128
    shares = phe.split_key(sk, pk, 3, Stream(25))
    ct = phe.encrypt(pk, 99, Stream(26))
    partials = [phe.partial_decrypt(shares.share(i), pk, ct) for i in (1, 2, 3)]
    with pytest.raises(phe.ShareError):
        phe.combine_partials(pk, partials[:1], ct)
    with pytest.raises(phe.ShareError):
        phe.combine_partials(pk, partials[:2], ct)


def test_duplicate_indices_flagged(key128):
    pk, sk = key128
    shares = phe.split_key(sk, pk, 2, Stream(27))
    ct = phe.encrypt(pk, 5, Stream(28))
    p1 = phe.partial_decrypt(shares.share(1), pk, ct)
    with pytest.raises(phe.ShareError):
        phe.combine_partials(pk, [p1, p1], ct)


def test_foreign_share_rejected(tiny_keypair, key128):
    pk_t, sk_t = tiny_keypair
    pk, _ = key128
    shares_t = phe.split_key(sk_t, pk_t, 2, Stream(29))
    ct = phe.encrypt(pk, 5, Stream(30))
    with pytest.raises(phe.KeyMismatchError):
        phe.partial_decrypt(shares_t.share(1), pk, ct)


def test_mixed_share_sets_flagged(key128):
    pk, sk = key128
    set_a = phe.split_key(sk, pk, 2, Stream(31))
    set_b = phe.split_key(sk, pk, 2, Stream(32))
    ct = phe.encrypt(pk, 77, Stream(33))
    pa = phe.partial_decrypt(set_a.share(1), pk, ct)
    pb = phe.partial_decrypt(set_b.share(2), pk, ct)
    with pytest.raises(phe.ShareError):
        phe.combine_partials(pk, [pa, pb], ct)


@pytest.mark.parametrize("n_shares", [2, 3, 5])
def test_partials_match_full_decryption(key128, n_shares):
    pk, sk = key128
    shares = phe.split_key(sk, pk, n_shares, Stream(34, n_shares))
    rng = Stream(35, n_shares)
    for _ in range(200):
        ct = phe.encrypt(pk, rng.randrange(int(pk.n)), rng)
        assert full_pipeline(pk, shares, ct) == phe.decrypt(sk, pk, ct)


def test_combined_zero(tiny_keypair):
    pk, sk = tiny_keypair
    shares = phe.split_key(sk, pk, 3, Stream(36))
    ct = phe.encrypt(pk, 0, Stream(37))
    assert full_pipeline(pk, shares, ct) == 0


# ---------------------------------------------------------------------------
# fixed-point codec


def test_codec_zero(key128):
    pk, _ = key128
    codec = phe.FixedPointCodec.for_key(pk)
    assert codec.encode(0.0) == 0
    assert codec.decode(0) == 0.0


def test_codec_negative_exact(key128):
    pk, _ = key128
    codec = phe.FixedPointCodec.for_key(pk)
    m = codec.encode(-1.5)
    assert m == int(pk.n) - 3 * 2**23
    assert codec.decode(m) == -1.5


def test_codec_rounding_bound(key128):
    pk, _ = key128
    codec = phe.FixedPointCodec.for_key(pk)
    assert abs(codec.decode(codec.encode(0.1)) - 0.1) <= 2**-24


def test_codec_overflow(key128):
    pk, _ = key128
    codec = phe.FixedPointCodec.for_key(pk)
    too_big = float(codec.half_range // codec.scale * 4)
    with pytest.raises(phe.DomainError):
        codec.encode(too_big)
    with pytest.raises(phe.DomainError):
        codec.encode(float("nan"))


@given(st.integers(min_value=-(2**40), max_value=2**40))
@settings(max_examples=200, deadline=None)
def test_codec_roundtrip_grid(z):
    codec = phe.FixedPointCodec(modulus=(1 << 128) + 1, scale=1 << 24)
    x = z / codec.scale
    assert codec.decode(codec.encode(x)) == x


@given(
    st.integers(min_value=-(2**30), max_value=2**30),
    st.integers(min_value=-(2**30), max_value=2**30),
)
@settings(max_examples=100, deadline=None)
def test_codec_preserves_order(a, b):
    codec = phe.FixedPointCodec(modulus=(1 << 128) + 1, scale=1 << 24)
    xa, xb = a / codec.scale, b / codec.scale
    assert (codec.decode(codec.encode(xa)) <= codec.decode(codec.encode(xb))) == (xa <= xb)


# ---------------------------------------------------------------------------
# serialization


def test_serialization_roundtrips(key128):
    pk, sk = key128
    assert phe.PhePublicKey.from_dict(pk.to_dict()) == pk
    sk2 = phe.PhePrivateKey.from_dict(sk.to_dict(), n=int(pk.n))
    assert sk2 == sk
    shares = phe.split_key(sk, pk, 3, Stream(40))
    assert phe.PheKeyShares.from_dict(shares.to_dict()) == shares
    ct = phe.encrypt(pk, 9, Stream(41))
    assert phe.Ciphertext.from_dict(ct.to_dict()) == ct


def test_pk_digest_is_canonical_sha(key128):
    pk, _ = key128
    import hashlib
    import json

    blob = json.dumps(
        {"g": format(int(pk.g), "x"), "n": format(int(pk.n), "x")},
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    assert pk.digest == hashlib.sha256(blob).hexdigest()[:16]


def test_random_unit_is_unit(key128):
    pk, _ = key128
    rng = Stream(50)
    for _ in range(20):
        assert math.gcd(int(phe.random_unit(pk.n, rng)), int(pk.n)) == 1


def test_rng_stream_reproducible():
    a, b = Stream(9, "x", 1), Stream(9, "x", 1)
    assert [a.random() for _ in range(5)] == [b.random() for _ in range(5)]
    assert Stream(9, "x", 1).seed_value != Stream(9, "x", 2).seed_value


def test_single_rng_not_required_for_distinct_ops(key128):
    # distinct handles produce independent but individually reproducible results
    pk, _ = key128
    c1 = phe.encrypt(pk, 4, Stream(60, "a"))
    c2 = phe.encrypt(pk, 4, Stream(60, "a"))
    c3 = phe.encrypt(pk, 4, Stream(60, "b"))
    assert c1 == c2 and c1 != c3
