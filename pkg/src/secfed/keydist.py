"""Two-party derivation of edge-device key material from secret coordinates.

The key authority (KAC) and a roadside node (REN) each hold a private planar
point. Without revealing either point they agree on the line through both:
the sign of its slope comes from a single blinded exchange, the exact slope
from a multi-round blinded exchange whose per-axis blinding products cancel.
The agreed line then binds each edge device's additive half-shares of the
split decryption key.

All exchanged values are ciphertexts under the KAC's key; only the KAC ever
decrypts, and what it decrypts is blinded. Transcripts are append-only and
serializable for audit.
"""

import hashlib
import json
import random
from dataclasses import dataclass, field
from fractions import Fraction

from gmpy2 import gcd, mpz

from . import phe
from .phe import Ciphertext, DomainError, PheKeyShares, PhePrivateKey, PhePublicKey

PROTOCOL_VERSION = 1

DEFAULT_ROUNDS = 3
DEFAULT_FACTOR_MAX = 1 << 16
DEFAULT_COORD_BOUND = 1 << 48

KAC = "KAC"
REN = "REN"

STEP_COORDINATES = "coordinates"
STEP_BLIND_ROUND = "blind_round"
STEP_BLINDING_CHECK = "blinding_check"


class KeydistError(Exception):
    """Base class for key-distribution protocol failures."""


class DegenerateGeometryError(KeydistError):
    """The two points share an x (or, for the sign protocol, a y) coordinate."""


class ProtocolAbortError(KeydistError):
    """Blinding products disagree; the transcript cannot yield the slope."""


class UnregisteredEcError(KeydistError):
    """Partial keys requested for an edge device that was never registered."""


@dataclass(frozen=True)
class SysPara:
    """Public system parameters shared by every protocol participant."""

    security_param: int
    pk_kac: PhePublicKey
    pk_ren: PhePublicKey
    protocol_version: int = PROTOCOL_VERSION


def setup(security_param: int, rng: random.Random):
    """Generate independent KAC and REN key pairs.

    Returns (SysPara, kac_master_key, ren_master_key); each party keeps its
    own master key, the SysPara is public.
    """
    pk_kac, mk_kac = phe.keygen(security_param, rng)
    while True:
        pk_ren, mk_ren = phe.keygen(security_param, rng)
        if pk_ren.n != pk_kac.n:
            break
    return SysPara(security_param, pk_kac, pk_ren), mk_kac, mk_ren


@dataclass(frozen=True)
class SecretCoordinate:
    """A party's private point; never serialized in plaintext."""

    x: int
    y: int

    def __post_init__(self):
        if self.x <= 0 or self.y <= 0:
            raise DomainError("coordinate components must be positive")
        if self.x == self.y:
            raise DomainError("coordinate components must differ")

    def __iter__(self):
        return iter((self.x, self.y))


def _as_point(coord) -> tuple[int, int]:
    x, y = coord
    return int(x), int(y)


def _check_range(pk: PhePublicKey, value: int) -> None:
    if value < 0 or 4 * value >= pk.n:
        raise DomainError(f"coordinate component {value} outside [0, n/4)")


@dataclass(frozen=True)
class EncryptedCoordinate:
    cx: Ciphertext
    cy: Ciphertext


def encrypt_coordinate(pk: PhePublicKey, coord, rng: random.Random) -> EncryptedCoordinate:
    """Component-wise encryption of a point under pk."""
    x, y = _as_point(coord)
    _check_range(pk, x)
    _check_range(pk, y)
    return EncryptedCoordinate(cx=phe.encrypt(pk, x, rng), cy=phe.encrypt(pk, y, rng))


@dataclass(frozen=True)
class BlindingFactors:
    """Per-axis positive blinding factors, one pair per protocol round."""

    k_x: tuple
    k_y: tuple

    def __post_init__(self):
        object.__setattr__(self, "k_x", tuple(int(k) for k in self.k_x))
        object.__setattr__(self, "k_y", tuple(int(k) for k in self.k_y))
        if len(self.k_x) != len(self.k_y) or not self.k_x:
            raise DomainError("need one blinding pair per round")
        if any(k <= 0 for k in self.k_x + self.k_y):
            raise DomainError("blinding factors must be positive")

    @property
    def rounds(self) -> int:
        return len(self.k_x)

    def product_x(self) -> int:
        out = 1
        for k in self.k_x:
            out *= k
        return out

    def product_y(self) -> int:
        out = 1
        for k in self.k_y:
            out *= k
        return out

    def check_coprime(self, n) -> None:
        if any(gcd(mpz(k), mpz(n)) != 1 for k in self.k_x + self.k_y):
            raise DomainError("blinding factors must be coprime to n")

    @classmethod
    def for_sign(cls, pk: PhePublicKey, rng: random.Random,
                 factor_max: int = DEFAULT_FACTOR_MAX) -> "BlindingFactors":
        """One round, k_x != k_y so the decrypted pair hides the magnitude ratio."""
        budget = _factor_budget(pk, rounds=1, factor_max=factor_max)
        kx = _draw_factor(pk, rng, budget)
        while True:
            ky = _draw_factor(pk, rng, budget)
            if ky != kx:
                return cls(k_x=(kx,), k_y=(ky,))

    @classmethod
    def for_slope(cls, pk: PhePublicKey, rounds: int, rng: random.Random,
                  factor_max: int = DEFAULT_FACTOR_MAX) -> "BlindingFactors":
        """Distinct factors, y-list rotated so the per-axis products cancel.

        For rounds >= 2 the rotation keeps every per-round pair unequal; at
        rounds == 1 product equality forces k_x1 == k_y1.
        """
        if rounds < 1:
            raise DomainError("rounds must be >= 1")
        budget = _factor_budget(pk, rounds, factor_max)
        factors = []
        while len(factors) < rounds:
            k = _draw_factor(pk, rng, budget)
            if k not in factors:
                factors.append(k)
        return cls(k_x=tuple(factors), k_y=tuple(factors[1:] + factors[:1]))


def _factor_budget(pk: PhePublicKey, rounds: int, factor_max: int) -> int:
    # Keep coord_bound * (product of factors) below n/2 so signed lifts are
    # unambiguous: per-round budget is the rounds-th root of the headroom.
    coord_bound = min(int(pk.n) // 4, DEFAULT_COORD_BOUND)
    headroom = int(pk.n) // 2 // max(coord_bound, 1)
    budget = factor_max
    while budget > 2 and budget**rounds > headroom:
        budget //= 2
    if budget**rounds > headroom:
        raise DomainError("modulus too small for blinded protocol at these bounds")
    return budget


def _draw_factor(pk: PhePublicKey, rng: random.Random, budget: int) -> int:
    while True:
        k = rng.randrange(2, max(budget, 3))
        if gcd(mpz(k), pk.n) == 1:
            return k


def sample_coordinate(pk: PhePublicKey, rng: random.Random,
                      bound: int | None = None) -> SecretCoordinate:
    """Draw a private point inside the no-wraparound window."""
    bound = bound if bound is not None else min(int(pk.n) // 4, DEFAULT_COORD_BOUND)
    if bound < 3:
        raise DomainError("coordinate bound too small")
    x = rng.randrange(1, bound)
    while True:
        y = rng.randrange(1, bound)
        if y != x:
            return SecretCoordinate(x, y)


def blind_negate_coordinate(pk: PhePublicKey, coord, blinding: BlindingFactors,
                            rng: random.Random, round_index: int = 0) -> EncryptedCoordinate:
    """Encrypt (-k_x * x, -k_y * y): the counterpart of scaling the peer's
    ciphertext by the same factor, so their homomorphic sum encodes k * delta."""
    x, y = _as_point(coord)
    _check_range(pk, x)
    _check_range(pk, y)
    blinding.check_coprime(pk.n)
    kx, ky = blinding.k_x[round_index], blinding.k_y[round_index]
    cx = phe.encrypt(pk, int((-kx * x) % pk.n), rng)
    cy = phe.encrypt(pk, int((-ky * y) % pk.n), rng)
    return EncryptedCoordinate(cx=cx, cy=cy)


# ---------------------------------------------------------------------------
# transcripts


@dataclass(frozen=True)
class Message:
    session_id: str
    step: str
    sender: str
    payload: tuple  # ciphertext values as integers

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "step": self.step,
            "sender": self.sender,
            "payload": [format(int(v), "x") for v in self.payload],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Message":
        return cls(
            session_id=d["session_id"],
            step=d["step"],
            sender=d["sender"],
            payload=tuple(int(v, 16) for v in d["payload"]),
        )


@dataclass
class Transcript:
    """Append-only record of every message exchanged in one session."""

    session_id: str
    messages: list = field(default_factory=list)

    def append(self, step: str, sender: str, payload) -> Message:
        msg = Message(self.session_id, step, sender, tuple(int(v) for v in payload))
        self.messages.append(msg)
        return msg

    def by_step(self, step: str) -> list:
        return [m for m in self.messages if m.step == step]

    def dump_jsonl(self) -> str:
        return "\n".join(json.dumps(m.to_dict(), sort_keys=True) for m in self.messages)

    @classmethod
    def load_jsonl(cls, text: str) -> "Transcript":
        messages = [Message.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]
        if not messages:
            raise DomainError("empty transcript")
        t = cls(session_id=messages[0].session_id)
        t.messages = messages
        return t


def audit_transcript(transcript: Transcript, pk: PhePublicKey, secrets) -> list[str]:
    """Structural privacy audit: every payload entry must be a well-formed
    ciphertext and must not literally equal any known secret."""
    findings = []
    secret_set = {int(s) for s in secrets}
    for i, msg in enumerate(transcript.messages):
        for v in msg.payload:
            if not 1 <= v < pk.n_sq or gcd(mpz(v), pk.n) != 1:
                findings.append(f"message {i} ({msg.step}): value is not a valid ciphertext")
            if v in secret_set:
                findings.append(f"message {i} ({msg.step}): payload equals a party secret")
    return findings


# ---------------------------------------------------------------------------
# sign and slope protocols


def _delta_pair(pk, enc_kac: EncryptedCoordinate, coord_ren, blinding, rng,
                round_index=0) -> tuple[Ciphertext, Ciphertext]:
    kx, ky = blinding.k_x[round_index], blinding.k_y[round_index]
    neg = blind_negate_coordinate(pk, coord_ren, blinding, rng, round_index)
    dx = phe.add_ciphertexts(pk, phe.scalar_mul(pk, enc_kac.cx, kx), neg.cx)
    dy = phe.add_ciphertexts(pk, phe.scalar_mul(pk, enc_kac.cy, ky), neg.cy)
    return dx, dy


def run_sign_exchange(pk: PhePublicKey, coord_kac, coord_ren, rng: random.Random,
                      session_id: str = "sign", blinding: BlindingFactors | None = None) -> Transcript:
    """KAC sends encrypted coordinates; REN answers with one blinded difference pair."""
    transcript = Transcript(session_id)
    enc_kac = encrypt_coordinate(pk, coord_kac, rng)
    transcript.append(STEP_COORDINATES, KAC, (enc_kac.cx.c, enc_kac.cy.c))
    blinding = blinding or BlindingFactors.for_sign(pk, rng)
    dx, dy = _delta_pair(pk, enc_kac, coord_ren, blinding, rng)
    transcript.append(STEP_BLIND_ROUND, REN, (dx.c, dy.c))
    return transcript


def _signed_lift(value: int, pk: PhePublicKey) -> int:
    v = mpz(value) % pk.n
    return int(v if v <= pk.n // 2 else v - pk.n)


def slope_sign(transcript: Transcript, pk: PhePublicKey, sk: PhePrivateKey) -> int:
    """+1 or -1 for the hidden slope, from the blinded difference pair.

    Positive blinding preserves each difference's sign, so the sign of the
    product k_x*dx * k_y*dy equals the sign of dy/dx.
    """
    rounds = transcript.by_step(STEP_BLIND_ROUND)
    if not rounds:
        raise DomainError("transcript has no blinded rounds")
    cx, cy = rounds[-1].payload
    vx = _signed_lift(phe.decrypt(sk, pk, Ciphertext(c=cx, pk_digest=pk.digest)), pk)
    vy = _signed_lift(phe.decrypt(sk, pk, Ciphertext(c=cy, pk_digest=pk.digest)), pk)
    if vx == 0 or vy == 0:
        raise DegenerateGeometryError("coordinates share an axis value; slope sign undefined")
    return 1 if (vx > 0) == (vy > 0) else -1


def run_slope_exchange(pk: PhePublicKey, coord_kac, coord_ren, rng: random.Random,
                       rounds: int = DEFAULT_ROUNDS, session_id: str = "slope",
                       blinding: BlindingFactors | None = None) -> Transcript:
    """Multi-round cumulative blinding of one encrypted difference pair.

    Round 1 forms E(k_x1*dx), E(k_y1*dy); each later round scales the running
    pair by that round's factors. REN closes with E(prod(k_x) - prod(k_y)) so
    the decryptor can verify the blinding cancels without learning either
    product.
    """
    blinding = blinding or BlindingFactors.for_slope(pk, rounds, rng)
    if blinding.rounds != rounds:
        raise DomainError("blinding rounds disagree with requested rounds")
    blinding.check_coprime(pk.n)
    transcript = Transcript(session_id)
    enc_kac = encrypt_coordinate(pk, coord_kac, rng)
    transcript.append(STEP_COORDINATES, KAC, (enc_kac.cx.c, enc_kac.cy.c))
    dx, dy = _delta_pair(pk, enc_kac, coord_ren, blinding, rng)
    transcript.append(STEP_BLIND_ROUND, REN, (dx.c, dy.c))
    for j in range(1, rounds):
        dx = phe.scalar_mul(pk, dx, blinding.k_x[j])
        dy = phe.scalar_mul(pk, dy, blinding.k_y[j])
        transcript.append(STEP_BLIND_ROUND, REN, (dx.c, dy.c))
    check = phe.encrypt(
        pk, int((blinding.product_x() - blinding.product_y()) % pk.n), rng
    )
    transcript.append(STEP_BLINDING_CHECK, REN, (check.c,))
    return transcript


@dataclass(frozen=True)
class SlopeResult:
    sign: int
    k: Fraction

    def __post_init__(self):
        if self.k.denominator == 0:  # Fraction already forbids this; belt and braces
            raise DomainError("slope denominator zero")

    @property
    def num(self) -> int:
        return self.k.numerator

    @property
    def den(self) -> int:
        return self.k.denominator


def compute_slope(transcript: Transcript, pk: PhePublicKey, sk: PhePrivateKey) -> SlopeResult:
    """Exact slope dy/dx as a reduced rational, from the final blinded pair."""
    checks = transcript.by_step(STEP_BLINDING_CHECK)
    if not checks:
        raise ProtocolAbortError("transcript lacks the blinding-cancellation check")
    diff = phe.decrypt(sk, pk, Ciphertext(c=checks[-1].payload[0], pk_digest=pk.digest))
    if diff != 0:
        raise ProtocolAbortError("blinding products differ; aborting")
    rounds = transcript.by_step(STEP_BLIND_ROUND)
    if not rounds:
        raise DomainError("transcript has no blinded rounds")
    cx, cy = rounds[-1].payload
    vx = _signed_lift(phe.decrypt(sk, pk, Ciphertext(c=cx, pk_digest=pk.digest)), pk)
    vy = _signed_lift(phe.decrypt(sk, pk, Ciphertext(c=cy, pk_digest=pk.digest)), pk)
    if vx == 0:
        raise DegenerateGeometryError("vertical line: dx = 0")
    k = Fraction(vy, vx)
    return SlopeResult(sign=1 if k >= 0 else -1, k=k)


@dataclass(frozen=True)
class LineEquation:
    """y = K(x - x0) + y0; equality is extensional on (slope, intercept)."""

    k: Fraction
    anchor: tuple

    @property
    def intercept(self) -> Fraction:
        x0, y0 = self.anchor
        return Fraction(y0) - self.k * Fraction(x0)

    def y_at(self, x) -> Fraction:
        return self.k * Fraction(x) + self.intercept

    def __eq__(self, other):
        if not isinstance(other, LineEquation):
            return NotImplemented
        return self.k == other.k and self.intercept == other.intercept

    def __hash__(self):
        return hash((self.k, self.intercept))


def derive_line(slope, coord) -> LineEquation:
    """Anchor the agreed slope at the caller's own point."""
    k = slope.k if isinstance(slope, SlopeResult) else Fraction(slope)
    x, y = _as_point(coord)
    return LineEquation(k=k, anchor=(x, y))


# ---------------------------------------------------------------------------
# partial key issuance


@dataclass(frozen=True)
class PartialPrivateKey:
    """Two additive halves of one edge device's entry in the share set."""

    ec_id: str
    sk_ec_kac: int
    sk_ec_ren: int
    combined: phe.KeyShare


def _line_secret_digest(line: LineEquation, ec_id: str) -> int:
    h = hashlib.sha256()
    intercept = line.intercept
    for part in (line.k.numerator, line.k.denominator,
                 intercept.numerator, intercept.denominator, ec_id):
        h.update(str(part).encode("utf-8"))
        h.update(b"|")
    return int.from_bytes(h.digest(), "big")


class EcKeyIssuer:
    """Issues line-bound partial keys for registered edge devices.

    Registration order assigns share indices 1..N within the master share
    set; issuing is deterministic in (line, ec_id).
    """

    def __init__(self, line: LineEquation, master_shares: PheKeyShares):
        self.line = line
        self.master_shares = master_shares
        self._registry: dict[str, int] = {}

    def register(self, ec_id: str) -> int:
        if ec_id in self._registry:
            return self._registry[ec_id]
        if len(self._registry) >= self.master_shares.n_shares:
            raise DomainError("all share slots already registered")
        index = len(self._registry) + 1
        self._registry[ec_id] = index
        return index

    def issue(self, ec_id: str) -> PartialPrivateKey:
        if ec_id not in self._registry:
            raise UnregisteredEcError(f"edge device {ec_id!r} not registered")
        index = self._registry[ec_id]
        share = self.master_shares.share(index)
        modulus = self.master_shares.modulus
        kac_half = _line_secret_digest(self.line, ec_id) % modulus
        ren_half = (share.value - kac_half) % modulus
        return PartialPrivateKey(
            ec_id=ec_id, sk_ec_kac=int(kac_half), sk_ec_ren=int(ren_half), combined=share
        )


def reconstruct_share(partial: PartialPrivateKey, shares: PheKeyShares) -> phe.KeyShare:
    """Rebuild the usable key share from the two halves an EC received."""
    value = (mpz(partial.sk_ec_kac) + mpz(partial.sk_ec_ren)) % shares.modulus
    return phe.KeyShare(
        index=partial.combined.index,
        n_shares=shares.n_shares,
        value=value,
        theta=shares.theta,
        pk_digest=shares.pk_digest,
    )
