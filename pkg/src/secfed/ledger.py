"""Deterministic in-process simulation of a two-tier permissioned ledger.

Regional bottom-layer chains store encrypted local model updates; one
top-layer chain stores the per-round aggregated records. The commit flow is
proposal -> per-peer endorsement -> deterministic ordering -> hash-linked
block, with a pluggable endorsement threshold and batch policy. Time is
integer ticks supplied by the caller; nothing here reads a wall clock.

Signatures are keyed hashes with per-identity secret keys derived from one
seed. That is simulation grade by design: it gives bind/verify/tamper-detect
semantics behind a two-method surface a real scheme could replace.
"""

import base64
import hashlib
import hmac as hmac_mod
import json
from dataclasses import dataclass, field, replace

GENESIS_HASH = "0" * 64

TOP_LAYER = "top"
BOTTOM_LAYER = "bottom"

GLOBAL_DETECTOR_ID = "DHFA"


class LedgerError(Exception):
    """Invalid ledger operation (duplicate commits, bad queries)."""


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("ascii")


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class SigningAuthority:
    """Per-identity keyed-hash signatures, all derived from one seed."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def _key(self, identity: str) -> bytes:
        return hashlib.sha256(f"{self.seed}/{identity}".encode()).digest()

    def sign(self, identity: str, payload: bytes) -> str:
        return hmac_mod.new(self._key(identity), payload, hashlib.sha256).hexdigest()

    def verify(self, identity: str, payload: bytes, signature: str) -> bool:
        return hmac_mod.compare_digest(self.sign(identity, payload), signature)


@dataclass(frozen=True)
class ModelUpdate:
    """Ledger record binding an encrypted parameter payload to its origin."""

    federated_id: str
    location_id: str
    detector_id: str
    round_number: int
    model_parameters: bytes

    def __post_init__(self):
        if self.round_number < 1:
            raise LedgerError("round_number must be >= 1")
        if not (self.federated_id and self.location_id and self.detector_id):
            raise LedgerError("identifier fields must be nonempty")
        if not isinstance(self.model_parameters, bytes):
            raise LedgerError("model_parameters must be bytes")

    @property
    def uniqueness_key(self):
        return (self.federated_id, self.detector_id, self.round_number)

    def to_dict(self) -> dict:
        return {
            "federated_id": self.federated_id,
            "location_id": self.location_id,
            "detector_id": self.detector_id,
            "round_number": self.round_number,
            "model_parameters": base64.b64encode(self.model_parameters).decode("ascii"),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelUpdate":
        return cls(
            federated_id=d["federated_id"],
            location_id=d["location_id"],
            detector_id=d["detector_id"],
            round_number=int(d["round_number"]),
            model_parameters=base64.b64decode(d["model_parameters"]),
        )


@dataclass(frozen=True)
class TransactionProposal:
    client_id: str
    payload: ModelUpdate
    nonce: int

    def digest(self) -> str:
        return _sha(_canonical({
            "client_id": self.client_id,
            "nonce": self.nonce,
            "payload": self.payload.to_dict(),
        }))

    def to_dict(self) -> dict:
        return {"client_id": self.client_id, "nonce": self.nonce,
                "payload": self.payload.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "TransactionProposal":
        return cls(client_id=d["client_id"], payload=ModelUpdate.from_dict(d["payload"]),
                   nonce=int(d["nonce"]))


@dataclass(frozen=True)
class Endorsement:
    peer_id: str
    signature: str

    def to_dict(self) -> dict:
        return {"peer_id": self.peer_id, "signature": self.signature}

    @classmethod
    def from_dict(cls, d: dict) -> "Endorsement":
        return cls(peer_id=d["peer_id"], signature=d["signature"])


@dataclass(frozen=True)
class EndorsedTransaction:
    proposal: TransactionProposal
    endorsements: tuple
    client_signature: str
    arrival: int = 0  # orderer intake tick; first ordering key

    def digest(self) -> str:
        return _sha(_canonical(self.to_dict()))

    def to_dict(self) -> dict:
        return {
            "proposal": self.proposal.to_dict(),
            "endorsements": [e.to_dict() for e in sorted(self.endorsements, key=lambda e: e.peer_id)],
            "client_signature": self.client_signature,
            "arrival": self.arrival,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EndorsedTransaction":
        return cls(
            proposal=TransactionProposal.from_dict(d["proposal"]),
            endorsements=tuple(Endorsement.from_dict(e) for e in d["endorsements"]),
            client_signature=d["client_signature"],
            arrival=int(d.get("arrival", 0)),
        )


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: str
    tx_list: tuple
    block_hash: str

    @staticmethod
    def compute_hash(height: int, prev_hash: str, tx_list) -> str:
        return _sha(_canonical({
            "height": height,
            "prev_hash": prev_hash,
            "tx_digests": [tx.digest() for tx in tx_list],
        }))

    @classmethod
    def build(cls, height: int, prev_hash: str, tx_list) -> "Block":
        tx_list = tuple(tx_list)
        return cls(height=height, prev_hash=prev_hash, tx_list=tx_list,
                   block_hash=cls.compute_hash(height, prev_hash, tx_list))

    def to_dict(self) -> dict:
        return {
            "height": self.height,
            "prev_hash": self.prev_hash,
            "tx_list": [tx.to_dict() for tx in self.tx_list],
            "block_hash": self.block_hash,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Block":
        return cls(
            height=int(d["height"]),
            prev_hash=d["prev_hash"],
            tx_list=tuple(EndorsedTransaction.from_dict(t) for t in d["tx_list"]),
            block_hash=d["block_hash"],
        )


@dataclass(frozen=True)
class BatchPolicy:
    max_batch_size: int = 64
    batch_timeout_ticks: int = 1


@dataclass(frozen=True)
class RoundTimeout:
    """Tick budget after which a round closes with whatever arrived."""

    timeout_ticks: int
    fired: bool = False

    def expired(self, elapsed_ticks: int) -> "RoundTimeout":
        return replace(self, fired=elapsed_ticks >= self.timeout_ticks)


@dataclass
class Chain:
    """One serialized ledger state machine (a bottom layer region or the top)."""

    layer: str
    region_id: str | None
    peers: tuple
    orderers: tuple
    endorsement_threshold: int
    authority: SigningAuthority
    blocks: list = field(default_factory=list)

    def __post_init__(self):
        self.peers = tuple(self.peers)
        self.orderers = tuple(self.orderers)
        if self.layer not in (TOP_LAYER, BOTTOM_LAYER):
            raise LedgerError("layer must be 'top' or 'bottom'")
        if not self.peers or not self.orderers:
            raise LedgerError("need at least one peer and one orderer")
        if not 1 <= self.endorsement_threshold <= len(self.peers):
            raise LedgerError("endorsement threshold out of range")
        self._keys_in_flight: set = set()

    @property
    def height(self) -> int:
        return len(self.blocks)

    def tip_hash(self) -> str:
        return self.blocks[-1].block_hash if self.blocks else GENESIS_HASH

    def committed_keys(self) -> set:
        keys = set()
        for block in self.blocks:
            for tx in block.tx_list:
                keys.add(tx.proposal.payload.uniqueness_key)
        return keys

    def iter_updates(self):
        for block in self.blocks:
            for tx in block.tx_list:
                yield tx.proposal.payload


def majority_threshold(n_peers: int) -> int:
    return n_peers // 2 + 1


def make_chain(layer: str, region_id, n_peers: int, n_orderers: int,
               authority: SigningAuthority,
               endorsement_threshold: int | None = None) -> Chain:
    prefix = region_id if region_id else "top"
    peers = tuple(f"{prefix}-peer-{i}" for i in range(n_peers))
    orderers = tuple(f"{prefix}-orderer-{i}" for i in range(n_orderers))
    return Chain(
        layer=layer, region_id=region_id, peers=peers, orderers=orderers,
        endorsement_threshold=(endorsement_threshold if endorsement_threshold is not None
                               else majority_threshold(n_peers)),
        authority=authority,
    )


# ---------------------------------------------------------------------------
# transaction flow


def _peer_validate(chain: Chain, proposal: TransactionProposal) -> str | None:
    update = proposal.payload
    if not update.model_parameters:
        return "empty payload"
    key = update.uniqueness_key
    if key in chain._keys_in_flight or key in chain.committed_keys():
        return "duplicate (federation, detector, round)"
    if chain.layer == BOTTOM_LAYER and chain.region_id and update.location_id != chain.region_id:
        return "update addressed to a different region"
    return None


def submit_proposal(chain: Chain, client_id: str, update: ModelUpdate,
                    nonce: int = 0) -> list:
    """Each peer validates and signs; rejections simply yield no endorsement."""
    proposal = TransactionProposal(client_id=client_id, payload=update, nonce=nonce)
    rejection = _peer_validate(chain, proposal)
    if rejection is not None:
        return []
    digest = proposal.digest().encode("ascii")
    endorsements = [
        Endorsement(peer_id=peer, signature=chain.authority.sign(peer, digest))
        for peer in chain.peers
    ]
    chain._keys_in_flight.add(update.uniqueness_key)
    return endorsements


def package_endorsed(chain: Chain, client_id: str, update: ModelUpdate,
                     endorsements, nonce: int = 0, arrival: int = 0) -> EndorsedTransaction:
    """Client packages its endorsements and signs the bundle."""
    proposal = TransactionProposal(client_id=client_id, payload=update, nonce=nonce)
    bundle = _canonical({
        "proposal": proposal.to_dict(),
        "endorsements": [e.to_dict() for e in sorted(endorsements, key=lambda e: e.peer_id)],
    })
    return EndorsedTransaction(
        proposal=proposal,
        endorsements=tuple(endorsements),
        client_signature=chain.authority.sign(client_id, bundle),
        arrival=arrival,
    )


def _verify_tx(chain: Chain, tx: EndorsedTransaction) -> str | None:
    digest = tx.proposal.digest().encode("ascii")
    valid = [e for e in tx.endorsements
             if e.peer_id in chain.peers and chain.authority.verify(e.peer_id, digest, e.signature)]
    if len({e.peer_id for e in valid}) < chain.endorsement_threshold:
        return "under-endorsed"
    bundle = _canonical({
        "proposal": tx.proposal.to_dict(),
        "endorsements": [e.to_dict() for e in sorted(tx.endorsements, key=lambda e: e.peer_id)],
    })
    if not chain.authority.verify(tx.proposal.client_id, bundle, tx.client_signature):
        return "client signature invalid"
    return None


@dataclass(frozen=True)
class CommitResult:
    block: Block | None
    excluded: tuple  # (tx, reason) pairs


def order_and_commit(chain: Chain, endorsed_txs, policy: BatchPolicy | None = None) -> CommitResult:
    """Deterministically order valid transactions and append one block.

    Ordering is by arrival tick, ties broken by client id. Under-endorsed or
    tampered transactions are excluded and reported; an empty effective
    batch emits no block.
    """
    policy = policy or BatchPolicy()
    accepted, excluded, seen_keys = [], [], set()
    ordered = sorted(endorsed_txs, key=lambda tx: (tx.arrival, tx.proposal.client_id))
    for tx in ordered:
        if len(accepted) >= policy.max_batch_size:
            excluded.append((tx, "batch full"))
            continue
        reason = _verify_tx(chain, tx)
        if reason is None:
            key = tx.proposal.payload.uniqueness_key
            if key in seen_keys or key in chain.committed_keys():
                reason = "duplicate (federation, detector, round)"
            else:
                seen_keys.add(key)
        if reason is not None:
            excluded.append((tx, reason))
            continue
        accepted.append(tx)
    if not accepted:
        return CommitResult(block=None, excluded=tuple(excluded))
    block = Block.build(height=chain.height, prev_hash=chain.tip_hash(), tx_list=accepted)
    chain.blocks.append(block)
    for tx in accepted:
        chain._keys_in_flight.discard(tx.proposal.payload.uniqueness_key)
    return CommitResult(block=block, excluded=tuple(excluded))


@dataclass(frozen=True)
class RoundRead:
    updates: tuple
    found: bool
    complete: bool | None  # None when no expected count was given


def read_round_updates(chain: Chain, federated_id: str, round_number: int,
                       expected_count: int | None = None) -> RoundRead:
    """All committed updates for (federation, round), in commit order."""
    if round_number < 1:
        raise LedgerError("round_number must be >= 1")
    updates = tuple(
        u for u in chain.iter_updates()
        if u.federated_id == federated_id and u.round_number == round_number
    )
    found = any(u.federated_id == federated_id for u in chain.iter_updates())
    complete = None if expected_count is None else len(updates) >= expected_count
    return RoundRead(updates=updates, found=found, complete=complete)


def verify_chain(chain: Chain) -> tuple[bool, str | None]:
    """Recompute every link, hash, signature, and uniqueness constraint."""
    prev_hash = GENESIS_HASH
    seen_keys = set()
    for expected_height, block in enumerate(chain.blocks):
        where = f"height {expected_height}"
        if block.height != expected_height:
            return False, f"{where}: height out of sequence"
        if block.prev_hash != prev_hash:
            return False, f"{where}: broken parent link"
        if Block.compute_hash(block.height, block.prev_hash, block.tx_list) != block.block_hash:
            return False, f"{where}: block hash mismatch"
        for tx in block.tx_list:
            reason = _verify_tx(chain, tx)
            if reason is not None:
                return False, f"{where}: {reason}"
            key = tx.proposal.payload.uniqueness_key
            if key in seen_keys:
                return False, f"{where}: duplicate update {key}"
            seen_keys.add(key)
        prev_hash = block.block_hash
    return True, None


def commit_global(top_chain: Chain, region_id: str, federated_id: str,
                  round_number: int, output_digest: str, payload_refs,
                  nonce: int = 0, arrival: int = 0) -> Block:
    """Record one region's aggregated round on the top layer.

    The payload carries the aggregate digest plus references to the
    bottom-layer entries it averaged. Committing the same (federation,
    round) twice is rejected.
    """
    record = {
        "output_digest": output_digest,
        "source_round": round_number,
        "payload_refs": list(payload_refs),
    }
    update = ModelUpdate(
        federated_id=federated_id,
        location_id=region_id,
        detector_id=GLOBAL_DETECTOR_ID,
        round_number=round_number,
        model_parameters=_canonical(record),
    )
    client_id = f"dhfa-{region_id}"
    endorsements = submit_proposal(top_chain, client_id, update, nonce=nonce)
    if not endorsements:
        raise LedgerError(f"duplicate global commit for round {round_number}")
    tx = package_endorsed(top_chain, client_id, update, endorsements,
                          nonce=nonce, arrival=arrival)
    result = order_and_commit(top_chain, [tx])
    if result.block is None:
        raise LedgerError("global commit excluded by ordering")
    return result.block


# ---------------------------------------------------------------------------
# dumps and replay


def dump_chain(chain: Chain) -> str:
    """JSON-lines: one header line, then one block per line."""
    header = {
        "type": "chain",
        "layer": chain.layer,
        "region_id": chain.region_id,
        "peers": list(chain.peers),
        "orderers": list(chain.orderers),
        "endorsement_threshold": chain.endorsement_threshold,
        "authority_seed": chain.authority.seed,
    }
    lines = [json.dumps(header, sort_keys=True)]
    lines.extend(json.dumps(b.to_dict(), sort_keys=True) for b in chain.blocks)
    return "\n".join(lines) + "\n"


def replay_chain(text: str) -> Chain:
    """Rebuild a chain from a dump; callers re-verify with verify_chain."""
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise LedgerError("empty chain dump")
    header = json.loads(lines[0])
    if header.get("type") != "chain":
        raise LedgerError("missing chain header")
    chain = Chain(
        layer=header["layer"],
        region_id=header["region_id"],
        peers=tuple(header["peers"]),
        orderers=tuple(header["orderers"]),
        endorsement_threshold=int(header["endorsement_threshold"]),
        authority=SigningAuthority(int(header["authority_seed"])),
    )
    chain.blocks = [Block.from_dict(json.loads(line)) for line in lines[1:]]
    return chain
