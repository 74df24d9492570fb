"""Additively homomorphic encryption with N-of-N split decryption.

Paillier-style scheme over Z_{n^2} with the generator fixed to n+1, plus:

* additive splitting of a decryption exponent into N shares, so that a set
  of edge devices can only decrypt by combining all of their partial
  decryptions;
* a signed fixed-point codec mapping real-valued model weights into Z_n
  (two's-complement style: negatives occupy the upper half of the range).

All values are immutable after construction and every operation is a pure
function of its inputs plus an explicit RNG handle.
"""

import hashlib
import json
import math
import random
from dataclasses import dataclass, field

from gmpy2 import gcd, invert, is_prime, lcm, mpz, powmod

ALLOWED_KEY_BITS = (16, 128, 256, 512, 1024, 2048)

# Signed fixed-point values the pipeline moves through DHFA stay far below
# this bound; masks are sampled above it so masked plaintexts never wrap.
VALUE_BOUND = 1 << 52


class PheError(Exception):
    """Base class for encryption-layer failures."""


class KeygenError(PheError):
    """Prime search exhausted its attempt budget."""


class DomainError(PheError, ValueError):
    """Input outside the operation's legal domain."""


class KeyMismatchError(PheError):
    """Value was produced under a different key than the one supplied."""


class ShareError(PheError):
    """Partial-decryption set is incomplete, duplicated, or malformed."""


def _hex(x) -> str:
    return format(int(x), "x")


def _canonical_json(obj: dict) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("ascii")


@dataclass(frozen=True)
class PhePublicKey:
    n: int
    g: int
    n_sq: int = field(default=0)
    digest: str = field(default="")

    def __post_init__(self):
        n = mpz(self.n)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "g", mpz(self.g))
        object.__setattr__(self, "n_sq", n * n)
        object.__setattr__(self, "digest", pk_digest(n, self.g))
        if self.g != n + 1:
            raise DomainError("generator must be n + 1")
        if n < 15:
            raise DomainError("modulus too small")

    def to_dict(self) -> dict:
        return {"n": _hex(self.n), "g": _hex(self.g)}

    @classmethod
    def from_dict(cls, d: dict) -> "PhePublicKey":
        return cls(n=int(d["n"], 16), g=int(d["g"], 16))


def pk_digest(n, g) -> str:
    """First 16 hex chars of SHA-256 over the canonical public-key JSON."""
    blob = _canonical_json({"n": _hex(n), "g": _hex(g)})
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class PhePrivateKey:
    lam: int
    mu: int
    n: int  # carried for decryption; not part of the canonical serialization

    def __post_init__(self):
        object.__setattr__(self, "lam", mpz(self.lam))
        object.__setattr__(self, "mu", mpz(self.mu))
        object.__setattr__(self, "n", mpz(self.n))

    def to_dict(self) -> dict:
        return {"lambda": _hex(self.lam), "mu": _hex(self.mu)}

    @classmethod
    def from_dict(cls, d: dict, n: int) -> "PhePrivateKey":
        return cls(lam=int(d["lambda"], 16), mu=int(d["mu"], 16), n=n)


@dataclass(frozen=True)
class KeyShare:
    """One additive share of the split decryption exponent."""

    index: int  # 1-based
    n_shares: int
    value: int
    theta: int
    pk_digest: str

    def __post_init__(self):
        object.__setattr__(self, "value", mpz(self.value))
        object.__setattr__(self, "theta", mpz(self.theta))


@dataclass(frozen=True)
class PheKeyShares:
    """Complete N-of-N share set; sums to the decryption exponent mod `modulus`."""

    shares: tuple
    theta: int
    modulus: int  # n * lambda, the share arithmetic domain
    pk_digest: str

    def __post_init__(self):
        object.__setattr__(self, "shares", tuple(mpz(s) for s in self.shares))
        object.__setattr__(self, "theta", mpz(self.theta))
        object.__setattr__(self, "modulus", mpz(self.modulus))

    @property
    def n_shares(self) -> int:
        return len(self.shares)

    def share(self, index: int) -> KeyShare:
        """1-based accessor returning an individually held share."""
        if not 1 <= index <= self.n_shares:
            raise DomainError(f"share index {index} out of range")
        return KeyShare(
            index=index,
            n_shares=self.n_shares,
            value=self.shares[index - 1],
            theta=self.theta,
            pk_digest=self.pk_digest,
        )

    def to_dict(self) -> dict:
        return {
            "shares": [_hex(s) for s in self.shares],
            "theta": _hex(self.theta),
            "modulus": _hex(self.modulus),
            "pk_digest": self.pk_digest,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PheKeyShares":
        return cls(
            shares=tuple(int(s, 16) for s in d["shares"]),
            theta=int(d["theta"], 16),
            modulus=int(d["modulus"], 16),
            pk_digest=d["pk_digest"],
        )


@dataclass(frozen=True)
class Ciphertext:
    c: int
    pk_digest: str

    def __post_init__(self):
        object.__setattr__(self, "c", mpz(self.c))

    def to_dict(self) -> dict:
        return {"c": _hex(self.c), "pk_digest": self.pk_digest}

    @classmethod
    def from_dict(cls, d: dict) -> "Ciphertext":
        return cls(c=int(d["c"], 16), pk_digest=d["pk_digest"])


@dataclass(frozen=True)
class PartialDecryption:
    index: int
    n_shares: int
    value: int
    theta: int
    pk_digest: str

    def __post_init__(self):
        object.__setattr__(self, "value", mpz(self.value))
        object.__setattr__(self, "theta", mpz(self.theta))


def _random_prime(bits: int, rng: random.Random, max_attempts: int = 100_000) -> mpz:
    for _ in range(max_attempts):
        candidate = mpz(rng.getrandbits(bits) | (1 << (bits - 1)) | 1)
        if is_prime(candidate):
            return candidate
    raise KeygenError(f"no {bits}-bit prime found in {max_attempts} attempts")


def keypair_from_primes(p: int, q: int) -> tuple[PhePublicKey, PhePrivateKey]:
    """Build a keypair from explicit primes (small ones are test-only)."""
    p, q = mpz(p), mpz(q)
    if p == q:
        raise DomainError("p and q must be distinct")
    if not (is_prime(p) and is_prime(q)):
        raise DomainError("p and q must be prime")
    n = p * q
    if gcd(n, (p - 1) * (q - 1)) != 1:
        raise DomainError("n shares a factor with (p-1)(q-1)")
    g = n + 1
    lam = lcm(p - 1, q - 1)
    n_sq = n * n
    # L(g^lam mod n^2) with g = n+1 equals lam mod n; computed per definition.
    u = powmod(g, lam, n_sq)
    mu = invert((u - 1) // n, n)
    return PhePublicKey(n=n, g=g), PhePrivateKey(lam=lam, mu=mu, n=n)


def keygen(bits: int, rng: random.Random) -> tuple[PhePublicKey, PhePrivateKey]:
    """Generate a keypair with an n of the requested bit length.

    16-bit keys exist so tests can run exhaustive oracles over the full
    plaintext space; 512 bits and up are the production sizes.
    """
    if bits not in ALLOWED_KEY_BITS:
        raise DomainError(f"key bits must be one of {ALLOWED_KEY_BITS}")
    half = bits // 2
    while True:
        p = _random_prime(half, rng)
        q = _random_prime(half, rng)
        if p != q:
            return keypair_from_primes(p, q)


def _require_ct(pk: PhePublicKey, ct: Ciphertext) -> None:
    if ct.pk_digest != pk.digest:
        raise KeyMismatchError("ciphertext was produced under a different key")
    if not 1 <= ct.c < pk.n_sq:
        raise DomainError("ciphertext out of range")


def random_unit(n, rng: random.Random) -> mpz:
    """Uniform element of the multiplicative group of Z_n."""
    n = mpz(n)
    while True:
        r = mpz(rng.randrange(1, int(n)))
        if gcd(r, n) == 1:
            return r


def encrypt(pk: PhePublicKey, m: int, rng: random.Random) -> Ciphertext:
    """Encrypt m in [0, n) as (1+n)^m * r^n mod n^2 with a fresh unit r."""
    m = mpz(m)
    if not 0 <= m < pk.n:
        raise DomainError(f"plaintext {m} outside [0, n)")
    r = random_unit(pk.n, rng)
    c = (1 + m * pk.n) % pk.n_sq * powmod(r, pk.n, pk.n_sq) % pk.n_sq
    return Ciphertext(c=c, pk_digest=pk.digest)


def decrypt(sk: PhePrivateKey, pk: PhePublicKey, ct: Ciphertext) -> int:
    """Recover the plaintext: L(c^lambda mod n^2) * mu mod n."""
    if sk.n != pk.n:
        raise KeyMismatchError("private key does not match public key")
    _require_ct(pk, ct)
    u = powmod(ct.c, sk.lam, pk.n_sq)
    return int((u - 1) // pk.n * sk.mu % pk.n)


def add_ciphertexts(pk: PhePublicKey, ct1: Ciphertext, ct2: Ciphertext) -> Ciphertext:
    """Plaintext addition mod n, realized as ciphertext multiplication mod n^2."""
    _require_ct(pk, ct1)
    _require_ct(pk, ct2)
    return Ciphertext(c=ct1.c * ct2.c % pk.n_sq, pk_digest=pk.digest)


def scalar_mul(pk: PhePublicKey, ct: Ciphertext, k: int) -> Ciphertext:
    """Plaintext multiplication by the integer k (reduced mod n)."""
    _require_ct(pk, ct)
    k = mpz(k) % pk.n
    return Ciphertext(c=powmod(ct.c, k, pk.n_sq), pk_digest=pk.digest)


def split_key(
    sk: PhePrivateKey, pk: PhePublicKey, n_shares: int, rng: random.Random
) -> PheKeyShares:
    """Split decryption into N additive shares of an exponent d.

    d is chosen with d = 0 (mod lambda) and d = theta (mod n) for a public
    unit theta, so the product of all partials c^{s_i} mod n^2 collapses to
    1 + m*theta*n; applying L and theta^{-1} recovers m. Any strict subset
    leaves a residue that fails the combined-value well-formedness check.
    """
    if n_shares < 2:
        raise DomainError("n_shares must be at least 2")
    if sk.n != pk.n:
        raise KeyMismatchError("private key does not match public key")
    modulus = pk.n * sk.lam
    theta = random_unit(pk.n, rng)
    # CRT: d = theta * lam * (lam^{-1} mod n), reduced mod n*lam.
    d = theta * sk.lam * invert(sk.lam, pk.n) % modulus
    shares = [mpz(rng.randrange(int(modulus))) for _ in range(n_shares - 1)]
    shares.append((d - sum(shares)) % modulus)
    return PheKeyShares(
        shares=tuple(shares), theta=theta, modulus=modulus, pk_digest=pk.digest
    )


def partial_decrypt(share: KeyShare, pk: PhePublicKey, ct: Ciphertext) -> PartialDecryption:
    """One party's contribution c^{s_i} mod n^2; meaningless on its own."""
    if share.pk_digest != pk.digest:
        raise KeyMismatchError("share belongs to a different key")
    _require_ct(pk, ct)
    return PartialDecryption(
        index=share.index,
        n_shares=share.n_shares,
        value=powmod(ct.c, share.value, pk.n_sq),
        theta=share.theta,
        pk_digest=pk.digest,
    )


def combine_partials(pk: PhePublicKey, partials: list, ct: Ciphertext) -> int:
    """Multiply all N partials and apply L; rejects incomplete or mixed sets."""
    _require_ct(pk, ct)
    if not partials:
        raise ShareError("no partial decryptions supplied")
    for pd in partials:
        if pd.pk_digest != pk.digest:
            raise KeyMismatchError("partial decryption under a different key")
    n_shares = partials[0].n_shares
    theta = partials[0].theta
    if any(pd.n_shares != n_shares or pd.theta != theta for pd in partials):
        raise ShareError("partials come from different share sets")
    indices = [pd.index for pd in partials]
    if len(set(indices)) != len(indices):
        raise ShareError("duplicate share indices")
    if len(indices) < n_shares:
        raise ShareError(f"incomplete share set: {len(indices)} of {n_shares}")
    if any(not 1 <= i <= n_shares for i in indices):
        raise ShareError("share index out of range")
    combined = mpz(1)
    for pd in partials:
        combined = combined * pd.value % pk.n_sq
    if combined % pk.n != 1:
        raise ShareError("combined value malformed; shares do not form a full set")
    return int((combined - 1) // pk.n * invert(theta, pk.n) % pk.n)


@dataclass(frozen=True)
class FixedPointCodec:
    """Signed real <-> Z_n mapping: z = round(x * scale), negatives as n - |z|."""

    modulus: int
    scale: int = 1 << 24

    def __post_init__(self):
        object.__setattr__(self, "modulus", mpz(self.modulus))
        if self.scale <= 0:
            raise DomainError("scale must be positive")

    @property
    def half_range(self):
        return self.modulus // 2

    @classmethod
    def for_key(cls, pk: PhePublicKey, scale: int = 1 << 24) -> "FixedPointCodec":
        return cls(modulus=pk.n, scale=scale)

    def encode(self, x: float) -> int:
        if not math.isfinite(x):
            raise DomainError("cannot encode non-finite value")
        z = round(x * self.scale)
        if abs(z) > self.half_range:
            raise DomainError(f"value {x} overflows fixed-point range")
        return int(z % self.modulus)

    def decode(self, m: int) -> float:
        m = mpz(m) % self.modulus
        z = m if m <= self.half_range else m - self.modulus
        return float(z) / self.scale

    def encode_vector(self, xs) -> list[int]:
        return [self.encode(float(x)) for x in xs]

    def decode_vector(self, ms) -> list[float]:
        return [self.decode(m) for m in ms]
