"""Distributed homomorphic-encrypted federated averaging.

One client-coordinator holds the round's encrypted parameter vectors, one
per participating detector, each under that detector's own public key whose
decryption exponent is split across N edge devices. The flow:

1. The coordinator adds an encrypted random mask to every vector and ships
   the masked ciphertexts to the edge devices.
2. All N edge devices apply their key shares; combining the partials yields
   the *masked* plaintext vectors (p_i + R_i) -- never a raw p_i.
3. A per-execution randomly chosen finisher averages the masked plaintexts.
   Mask columns are generated to sum to 0 mod (N_c * scale), so the mask
   part of the division is exact; the parameter part uses half-even
   rounding and is off by at most one fixed-point unit.
4. The finisher re-encrypts the masked average under every client key and
   homomorphically subtracts the client-supplied encrypted mask average,
   leaving each client an encryption of the federated average it alone can
   decrypt.

Every step is logged to an append-only transcript recording which party saw
which value; audit tests check no edge device ever observed a raw
parameter.
"""

import hashlib
import json
import random
from dataclasses import dataclass, field

from . import phe
from .phe import Ciphertext, DomainError, KeyMismatchError
from .rng import Stream

# Masks are sampled above any legal fixed-point magnitude so that masked
# plaintexts stay strictly positive and never wrap the modulus.
MASK_LOW = 1 << 53
MASK_SPAN = 1 << 64
BIG_MODULUS_BITS = 80

CLIENT = "client"


class DhfaError(Exception):
    """Base class for protocol failures."""


class IncompleteDecryptionError(DhfaError):
    """An edge device was offline; N-of-N decryption cannot complete."""


class DhfaAbort(DhfaError):
    """A stage failed; no outputs were delivered to any client."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} aborted: {cause}")
        self.stage = stage
        self.cause = cause


def ec_name(index: int) -> str:
    return f"ec-{index}"


@dataclass(frozen=True)
class DhfaGroup:
    """Static protocol configuration for one region's detector group."""

    n_ecs: int
    client_keys: tuple      # public key per client, index-aligned
    share_sets: tuple       # PheKeyShares per client key, split n_ecs ways
    scale: int = 1 << 24

    def __post_init__(self):
        object.__setattr__(self, "client_keys", tuple(self.client_keys))
        object.__setattr__(self, "share_sets", tuple(self.share_sets))
        if self.n_ecs < 2:
            raise DomainError("need at least two edge devices")
        if len(self.client_keys) != len(self.share_sets) or not self.client_keys:
            raise DomainError("one share set per client key required")
        for pk, shares in zip(self.client_keys, self.share_sets):
            if shares.pk_digest != pk.digest:
                raise KeyMismatchError("share set does not match its client key")
            if shares.n_shares != self.n_ecs:
                raise DomainError("share set size must equal n_ecs")
        if self.scale < 1:
            raise DomainError("scale must be positive")

    @property
    def n_clients(self) -> int:
        return len(self.client_keys)

    @classmethod
    def create(cls, keypairs, n_ecs: int, rng: random.Random,
               scale: int = 1 << 24) -> "DhfaGroup":
        """Split every client's private key across the edge devices."""
        pks, share_sets = [], []
        for i, (pk, sk) in enumerate(keypairs):
            pks.append(pk)
            share_sets.append(phe.split_key(sk, pk, n_ecs, rng))
        return cls(n_ecs=n_ecs, client_keys=tuple(pks),
                   share_sets=tuple(share_sets), scale=scale)


@dataclass(frozen=True)
class MaskVector:
    """Per-client, per-weight random masks; column sums divisible by divisor."""

    rows: tuple  # rows[client][weight]
    divisor: int

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(tuple(int(r) for r in row) for row in self.rows))

    @property
    def width(self) -> int:
        return len(self.rows[0]) if self.rows else 0

    def column_sum(self, w: int) -> int:
        return sum(row[w] for row in self.rows)

    def mask_average(self, w: int) -> int:
        return self.column_sum(w) // len(self.rows)

    @classmethod
    def zeros(cls, n_clients: int, width: int) -> "MaskVector":
        return cls(rows=tuple((0,) * width for _ in range(n_clients)), divisor=1)


def generate_masks(group: DhfaGroup, width: int, rng: random.Random) -> MaskVector:
    """Sample masks and adjust the last client's row so each column sum is
    divisible by n_clients * scale, making the mask average exact."""
    divisor = group.n_clients * group.scale
    n_min = min(int(pk.n) for pk in group.client_keys)
    if n_min.bit_length() > BIG_MODULUS_BITS:
        low, high = MASK_LOW, MASK_LOW + MASK_SPAN
    else:
        if n_min <= 4 * divisor:
            raise DomainError("modulus too small for mask divisibility adjustment")
        low, high = 1, n_min
    rows = [[rng.randrange(low, high) for _ in range(width)]
            for _ in range(group.n_clients)]
    for w in range(width):
        remainder = sum(row[w] for row in rows) % divisor
        adjusted = rows[-1][w] - remainder
        if adjusted < low:
            adjusted += divisor
        rows[-1][w] = adjusted
    return MaskVector(rows=tuple(tuple(row) for row in rows), divisor=divisor)


@dataclass(frozen=True)
class MaskedUpdate:
    """One client's parameter vector with the mask folded in homomorphically."""

    client_index: int
    masked_ct: tuple   # Ciphertext per weight, sent to the edge devices
    enc_mask: tuple    # E_pk_i(R_i) per weight, retained client-side


# ---------------------------------------------------------------------------
# transcript


def _digest(values) -> str:
    h = hashlib.sha256()
    for v in values:
        h.update(str(int(v)).encode("ascii"))
        h.update(b",")
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class TranscriptEvent:
    seq: int
    party: str
    step: str
    digest: str
    revealed: tuple | None = None

    def to_dict(self) -> dict:
        d = {"seq": self.seq, "party": self.party, "step": self.step, "digest": self.digest}
        if self.revealed is not None:
            d["revealed"] = [int(v) for v in self.revealed]
        return d


@dataclass
class DhfaTranscript:
    """Append-only event log: who saw what, in order, with RNG provenance."""

    seed_label: str
    events: list = field(default_factory=list)

    def log(self, party: str, step: str, values, revealed=None) -> None:
        self.events.append(TranscriptEvent(
            seq=len(self.events), party=party, step=step,
            digest=_digest(values),
            revealed=tuple(int(v) for v in revealed) if revealed is not None else None,
        ))

    def revealed_values(self):
        for event in self.events:
            if event.revealed is not None:
                for value in event.revealed:
                    yield event.party, value

    def digest_chain(self) -> str:
        return _digest(int(e.digest, 16) for e in self.events)

    def dump_jsonl(self) -> str:
        return "\n".join(json.dumps(e.to_dict(), sort_keys=True) for e in self.events)


# ---------------------------------------------------------------------------
# protocol stages


def client_mask(group: DhfaGroup, enc_params, rng: random.Random,
                masks: MaskVector | None = None,
                transcript: DhfaTranscript | None = None):
    """Stage 1: fold encrypted masks into every client's encrypted vector."""
    enc_params = [tuple(vec) for vec in enc_params]
    if len(enc_params) != group.n_clients:
        raise DomainError(f"expected {group.n_clients} vectors, got {len(enc_params)}")
    width = len(enc_params[0])
    if width == 0 or any(len(vec) != width for vec in enc_params):
        raise DomainError("client vectors must share one nonzero length")
    for i, vec in enumerate(enc_params):
        pk = group.client_keys[i]
        for ct in vec:
            if ct.pk_digest != pk.digest:
                raise KeyMismatchError(f"client {i} vector not under its own key")
    if masks is None:
        masks = generate_masks(group, width, rng)
    if len(masks.rows) != group.n_clients or masks.width != width:
        raise DomainError("mask dimensions disagree with inputs")
    updates = []
    for i, vec in enumerate(enc_params):
        pk = group.client_keys[i]
        enc_mask = tuple(
            phe.encrypt(pk, int(masks.rows[i][w]) % int(pk.n), rng) for w in range(width)
        )
        masked = tuple(
            phe.add_ciphertexts(pk, vec[w], enc_mask[w]) for w in range(width)
        )
        updates.append(MaskedUpdate(client_index=i, masked_ct=masked, enc_mask=enc_mask))
        if transcript is not None:
            transcript.log(CLIENT, "mask", [ct.c for ct in masked])
    return updates, masks


def ec_partial_round(group: DhfaGroup, masked_updates,
                     transcript: DhfaTranscript | None = None,
                     offline_ecs: frozenset = frozenset()):
    """Stage 2: every edge device applies its share; combination yields the
    masked plaintext vectors, visible to the edge devices only."""
    online = [j for j in range(group.n_ecs) if j not in offline_ecs]
    masked_plain = []
    for update in masked_updates:
        pk = group.client_keys[update.client_index]
        shares = group.share_sets[update.client_index]
        partial_rows = []  # one row per online EC, covering every weight
        for j in online:
            key_share = shares.share(j + 1)
            row = [phe.partial_decrypt(key_share, pk, ct) for ct in update.masked_ct]
            partial_rows.append(row)
            if transcript is not None:
                transcript.log(ec_name(j), "partial_decrypt", [pd.value for pd in row])
        column = []
        for w, ct in enumerate(update.masked_ct):
            try:
                column.append(phe.combine_partials(pk, [row[w] for row in partial_rows], ct))
            except phe.ShareError as exc:
                raise IncompleteDecryptionError(str(exc)) from exc
        masked_plain.append(column)
        if transcript is not None:
            transcript.log("ec-quorum", "masked_plaintext", column, revealed=column)
    return masked_plain


def div_round_half_even(numerator: int, denominator: int) -> int:
    """Integer division with banker's rounding on the .5 boundary."""
    if denominator <= 0:
        raise DomainError("denominator must be positive")
    q, r = divmod(numerator, denominator)
    double = 2 * r
    if double > denominator or (double == denominator and q % 2 == 1):
        q += 1
    return q


def finisher_average(group: DhfaGroup, masked_plaintexts,
                     transcript: DhfaTranscript | None = None,
                     finisher: int = 0):
    """Stage 3: elementwise (sum of masked values) / N_c at the finisher."""
    if len(masked_plaintexts) != group.n_clients:
        raise DomainError(
            f"have {len(masked_plaintexts)} masked vectors, need {group.n_clients}")
    width = len(masked_plaintexts[0])
    if any(len(col) != width for col in masked_plaintexts):
        raise DomainError("masked vectors must share one length")
    averaged = [
        div_round_half_even(sum(vec[w] for vec in masked_plaintexts), group.n_clients)
        for w in range(width)
    ]
    if transcript is not None:
        transcript.log(ec_name(finisher), "masked_average", averaged, revealed=averaged)
    return averaged


def client_encrypt_mask_average(group: DhfaGroup, masks: MaskVector,
                                rng: random.Random,
                                transcript: DhfaTranscript | None = None):
    """The coordinator, who generated the masks, encrypts their exact average
    under every client key so the finisher can unmask without learning it."""
    width = masks.width
    averages = [masks.mask_average(w) for w in range(width)]
    out = []
    for i, pk in enumerate(group.client_keys):
        vec = tuple(phe.encrypt(pk, int(a) % int(pk.n), rng) for a in averages)
        out.append(vec)
        if transcript is not None:
            transcript.log(CLIENT, "mask_average_ciphertext", [ct.c for ct in vec])
    return out


def finisher_reencrypt_and_unmask(group: DhfaGroup, masked_avg, enc_mask_avgs,
                                  rng: random.Random,
                                  transcript: DhfaTranscript | None = None,
                                  finisher: int = 0):
    """Stage 4: encrypt the masked average under each client key and subtract
    the encrypted mask average (addition of its negation)."""
    if len(enc_mask_avgs) != group.n_clients:
        raise DomainError("need one encrypted mask-average vector per client")
    outputs = []
    for i, pk in enumerate(group.client_keys):
        mask_vec = enc_mask_avgs[i]
        if len(mask_vec) != len(masked_avg):
            raise DomainError("mask-average vector length mismatch")
        out_vec = []
        for w, value in enumerate(masked_avg):
            if mask_vec[w].pk_digest != pk.digest:
                raise KeyMismatchError(f"mask average for client {i} under wrong key")
            enc_avg = phe.encrypt(pk, int(value) % int(pk.n), rng)
            neg_mask = phe.scalar_mul(pk, mask_vec[w], -1)
            out_vec.append(phe.add_ciphertexts(pk, enc_avg, neg_mask))
        outputs.append(tuple(out_vec))
        if transcript is not None:
            transcript.log(ec_name(finisher), "unmasked_output", [ct.c for ct in out_vec])
    return outputs


def choose_finisher(group: DhfaGroup, rng: random.Random) -> int:
    return rng.randrange(group.n_ecs)


@dataclass(frozen=True)
class DhfaResult:
    outputs: tuple  # per client, tuple of Ciphertext under that client's key
    transcript: DhfaTranscript
    finisher: int


def run_dhfa(group: DhfaGroup, enc_params, rng: random.Random,
             masks: MaskVector | None = None,
             offline_ecs: frozenset = frozenset()) -> DhfaResult:
    """Full protocol run. Any stage failure aborts with a stage-tagged error
    and delivers nothing; outputs only exist when every stage succeeded."""
    if isinstance(rng, Stream):
        seed_label = f"stream:{rng.seed_value}"
    else:
        seed_label = "external-rng"
    transcript = DhfaTranscript(seed_label=seed_label)
    finisher = choose_finisher(group, rng)
    transcript.log("coordinator", "finisher_selected", [finisher], revealed=[finisher])

    def stage(name, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except Exception as exc:
            raise DhfaAbort(name, exc) from exc

    updates, masks = stage("mask", client_mask, group, enc_params, rng,
                           masks=masks, transcript=transcript)
    masked_plain = stage("partial_decrypt", ec_partial_round, group, updates,
                         transcript=transcript, offline_ecs=offline_ecs)
    averaged = stage("average", finisher_average, group, masked_plain,
                     transcript=transcript, finisher=finisher)
    enc_mask_avgs = stage("mask_average", client_encrypt_mask_average, group,
                          masks, rng, transcript=transcript)
    outputs = stage("unmask", finisher_reencrypt_and_unmask, group, averaged,
                    enc_mask_avgs, rng, transcript=transcript, finisher=finisher)
    return DhfaResult(outputs=tuple(outputs), transcript=transcript, finisher=finisher)
