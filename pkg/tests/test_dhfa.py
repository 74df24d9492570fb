"""Protocol tests for distributed encrypted averaging.

The governing oracle is plaintext federated averaging over the decoded
client vectors; every end-to-end assertion compares the decrypted protocol
output against it. Small-modulus tests use raw integers (mod-n oracle);
fixed-point runs use 256-bit keys here and 512-bit in the acceptance suite.
"""

from fractions import Fraction

import numpy as np
import pytest

from secfed import dhfa, flcore, phe
from secfed.dhfa import DhfaGroup, MaskVector
from secfed.rng import Stream


def make_group(n_clients, n_ecs, bits, seed, scale=1 << 24):
    rng = Stream(seed, "group")
    keypairs = [phe.keygen(bits, rng.child("key", i)) for i in range(n_clients)]
    group = DhfaGroup.create(keypairs, n_ecs, rng.child("split"), scale=scale)
    return group, [sk for _, sk in keypairs]


def encrypt_ints(group, vectors, seed):
    rng = Stream(seed, "enc")
    return [
        [phe.encrypt(group.client_keys[i], int(v) % int(group.client_keys[i].n), rng)
         for v in vec]
        for i, vec in enumerate(vectors)
    ]


def encode_and_encrypt(group, float_vectors, seed):
    rng = Stream(seed, "encode")
    enc = []
    for i, vec in enumerate(float_vectors):
        pk = group.client_keys[i]
        codec = phe.FixedPointCodec.for_key(pk, group.scale)
        enc.append([phe.encrypt(pk, codec.encode(float(x)), rng) for x in vec])
    return enc


def decrypt_outputs(group, sks, outputs):
    decoded = []
    for i, vec in enumerate(outputs):
        pk = group.client_keys[i]
        codec = phe.FixedPointCodec.for_key(pk, group.scale)
        decoded.append([codec.decode(phe.decrypt(sks[i], pk, ct)) for ct in vec])
    return decoded


# ---------------------------------------------------------------------------
# masking stage


def test_zero_mask_preserves_plaintext():
    group, sks = make_group(2, 2, 128, seed=400, scale=1)
    plain = [[5, 9, 13], [2, 0, 7]]
    enc = encrypt_ints(group, plain, seed=401)
    updates, _ = dhfa.client_mask(group, enc, Stream(402),
                                  masks=MaskVector.zeros(2, 3))
    for i, update in enumerate(updates):
        got = [phe.decrypt(sks[i], group.client_keys[i], ct) for ct in update.masked_ct]
        assert got == plain[i]


def test_masked_values_small_modulus_mod_oracle():
    pk_a, sk_a = phe.keypair_from_primes(3, 5)
    pk_b, sk_b = phe.keypair_from_primes(5, 7)
    group = DhfaGroup.create([(pk_a, sk_a), (pk_b, sk_b)], 2, Stream(403), scale=1)
    plain = [[4, 11], [20, 3]]
    enc = encrypt_ints(group, plain, seed=404)
    updates, masks = dhfa.client_mask(group, enc, Stream(405))
    for i, (update, sk) in enumerate(zip(updates, (sk_a, sk_b))):
        n = int(group.client_keys[i].n)
        for w, ct in enumerate(update.masked_ct):
            assert phe.decrypt(sk, group.client_keys[i], ct) == (plain[i][w] + masks.rows[i][w]) % n


def test_masked_update_shapes():
    group, _ = make_group(2, 2, 128, seed=406, scale=1)
    enc = encrypt_ints(group, [[1, 2, 3], [4, 5, 6]], seed=407)
    updates, _ = dhfa.client_mask(group, enc, Stream(408))
    assert len(updates) == 2
    assert all(len(u.masked_ct) == 3 and len(u.enc_mask) == 3 for u in updates)


def test_client_mask_rejects_wrong_key():
    group, _ = make_group(2, 2, 128, seed=409, scale=1)
    enc = encrypt_ints(group, [[1], [2]], seed=410)
    swapped = [enc[1], enc[0]]
    with pytest.raises(phe.KeyMismatchError):
        dhfa.client_mask(group, swapped, Stream(411))


def test_client_mask_rejects_ragged_vectors():
    group, _ = make_group(2, 2, 128, seed=412, scale=1)
    enc = encrypt_ints(group, [[1, 2], [3, 4]], seed=413)
    with pytest.raises(phe.DomainError):
        dhfa.client_mask(group, [enc[0], enc[1][:1]], Stream(414))


def test_generated_masks_divisible():
    group, _ = make_group(3, 2, 128, seed=415, scale=64)
    masks = dhfa.generate_masks(group, width=5, rng=Stream(416))
    divisor = 3 * 64
    assert masks.divisor == divisor
    for w in range(5):
        assert masks.column_sum(w) % divisor == 0
        assert masks.mask_average(w) * 3 == masks.column_sum(w)


# ---------------------------------------------------------------------------
# partial decryption round


def test_partial_round_recovers_masked_values():
    group, sks = make_group(2, 3, 128, seed=420, scale=1)
    plain = [[10, 200], [30, 4000]]
    enc = encrypt_ints(group, plain, seed=421)
    updates, masks = dhfa.client_mask(group, enc, Stream(422))
    masked_plain = dhfa.ec_partial_round(group, updates)
    for i in range(2):
        n = int(group.client_keys[i].n)
        for w in range(2):
            assert masked_plain[i][w] == (plain[i][w] + masks.rows[i][w]) % n


def test_partial_round_offline_ec_fails():
    group, _ = make_group(2, 3, 128, seed=423, scale=1)
    enc = encrypt_ints(group, [[1, 2], [3, 4]], seed=424)
    updates, _ = dhfa.client_mask(group, enc, Stream(425))
    with pytest.raises(dhfa.IncompleteDecryptionError):
        dhfa.ec_partial_round(group, updates, offline_ecs=frozenset({1}))


def test_transcript_never_reveals_raw_params():
    group, _ = make_group(2, 2, 256, seed=426)
    raw = [[0.5, -0.25, 1.0], [0.125, 2.0, -1.5]]
    encoded = {
        phe.FixedPointCodec.for_key(group.client_keys[i], group.scale).encode(x)
        for i, vec in enumerate(raw) for x in vec
    }
    enc = encode_and_encrypt(group, raw, seed=427)
    result = dhfa.run_dhfa(group, enc, Stream(428))
    revealed = {value for _, value in result.transcript.revealed_values()}
    assert revealed.isdisjoint(encoded)


# ---------------------------------------------------------------------------
# averaging and rounding


def test_finisher_average_scalar_case():
    group, _ = make_group(2, 2, 128, seed=430, scale=1)
    assert dhfa.finisher_average(group, [[5], [7]]) == [6]


def test_div_round_half_even_exhaustive():
    for den in range(1, 10):
        for num in range(-60, 200):
            expected = round(Fraction(num, den))  # Python round is half-even
            assert dhfa.div_round_half_even(num, den) == expected
            assert abs(Fraction(num, den) - expected) <= Fraction(1, 2)


def test_finisher_average_rejects_missing_client():
    group, _ = make_group(3, 2, 128, seed=431, scale=1)
    with pytest.raises(phe.DomainError):
        dhfa.finisher_average(group, [[1], [2]])


# ---------------------------------------------------------------------------
# full pipeline


def test_identical_params_decode_exactly():
    group, sks = make_group(3, 2, 256, seed=440)
    p = [0.75, -0.5, 0.125, 3.0]
    enc = encode_and_encrypt(group, [p, p, p], seed=441)
    result = dhfa.run_dhfa(group, enc, Stream(442))
    decoded = decrypt_outputs(group, sks, result.outputs)
    for vec in decoded:
        assert vec == p


def test_single_client_identity():
    group, sks = make_group(1, 2, 256, seed=443)
    p = [1.25, -2.0]
    enc = encode_and_encrypt(group, [p], seed=444)
    result = dhfa.run_dhfa(group, enc, Stream(445))
    assert decrypt_outputs(group, sks, result.outputs)[0] == p


@pytest.mark.parametrize("n_clients,n_ecs,width", [(2, 2, 3), (3, 3, 5), (3, 2, 9)])
def test_matches_plaintext_fedavg(n_clients, n_ecs, width):
    group, sks = make_group(n_clients, n_ecs, 256, seed=450 + n_clients + n_ecs)
    rng = Stream(451, n_clients, n_ecs, width)
    vectors = [[rng.uniform(-4, 4) for _ in range(width)] for _ in range(n_clients)]
    codecs = [phe.FixedPointCodec.for_key(pk, group.scale) for pk in group.client_keys]
    quantized = [
        [codecs[i].decode(codecs[i].encode(x)) for x in vec]
        for i, vec in enumerate(vectors)
    ]
    oracle = flcore.plaintext_fedavg(quantized)
    enc = encode_and_encrypt(group, vectors, seed=452)
    result = dhfa.run_dhfa(group, enc, Stream(453))
    decoded = decrypt_outputs(group, sks, result.outputs)
    tolerance = 1.0 / group.scale
    for vec in decoded:
        assert np.allclose(vec, oracle, atol=tolerance, rtol=0)


def test_per_client_key_isolation():
    group, sks = make_group(2, 2, 256, seed=460)
    enc = encode_and_encrypt(group, [[0.5], [0.25]], seed=461)
    result = dhfa.run_dhfa(group, enc, Stream(462))
    with pytest.raises(phe.KeyMismatchError):
        phe.decrypt(sks[1], group.client_keys[1], result.outputs[0][0])


def test_run_deterministic_for_fixed_seed():
    group, _ = make_group(2, 3, 256, seed=463)
    enc = encode_and_encrypt(group, [[0.5, 1.0], [0.25, -1.0]], seed=464)
    a = dhfa.run_dhfa(group, enc, Stream(465))
    b = dhfa.run_dhfa(group, enc, Stream(465))
    assert a.transcript.digest_chain() == b.transcript.digest_chain()
    assert a.finisher == b.finisher
    c = dhfa.run_dhfa(group, enc, Stream(466))
    assert c.transcript.digest_chain() != a.transcript.digest_chain()


def test_finisher_selection_covers_all_ecs():
    group, _ = make_group(1, 5, 128, seed=467, scale=1)
    seen = {dhfa.choose_finisher(group, Stream(468, i)) for i in range(1000)}
    assert seen == set(range(5))


def test_abort_is_stage_tagged_and_atomic():
    group, _ = make_group(2, 3, 256, seed=470)
    enc = encode_and_encrypt(group, [[0.5], [0.25]], seed=471)

    with pytest.raises(dhfa.DhfaAbort) as excinfo:
        dhfa.run_dhfa(group, [enc[1], enc[0]], Stream(472))
    assert excinfo.value.stage == "mask"

    with pytest.raises(dhfa.DhfaAbort) as excinfo:
        dhfa.run_dhfa(group, enc, Stream(473), offline_ecs=frozenset({0}))
    assert excinfo.value.stage == "partial_decrypt"


def test_transcript_jsonl_shape():
    group, _ = make_group(2, 2, 256, seed=474)
    enc = encode_and_encrypt(group, [[0.5], [0.25]], seed=475)
    result = dhfa.run_dhfa(group, enc, Stream(476))
    lines = result.transcript.dump_jsonl().splitlines()
    assert len(lines) == len(result.transcript.events)
    import json

    first = json.loads(lines[0])
    assert set(first) >= {"seq", "party", "step", "digest"}


def test_group_validation():
    rng = Stream(480)
    keypairs = [phe.keygen(128, rng.child(i)) for i in range(2)]
    with pytest.raises(phe.DomainError):
        DhfaGroup.create(keypairs, 1, rng)
    group = DhfaGroup.create(keypairs, 2, rng)
    with pytest.raises(phe.KeyMismatchError):
        DhfaGroup(n_ecs=2, client_keys=(keypairs[0][0], keypairs[1][0]),
                  share_sets=(group.share_sets[1], group.share_sets[0]))
