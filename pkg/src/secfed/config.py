"""Simulation configuration: parsing, validation, canonical round-tripping.

A config is a JSON document; every run is fully determined by (config,
seed), so the seed is mandatory and the whole config is embedded in the run
manifest.
"""

import json
from dataclasses import dataclass, field

from .phe import ALLOWED_KEY_BITS
from .synth import SyntheticTrafficSpec


class ConfigError(ValueError):
    """Configuration file is malformed or violates a constraint."""


@dataclass(frozen=True)
class RegionConfig:
    region_id: str
    detector_ids: tuple
    max_data_size: int = 24
    input_shape: int = 12
    epochs: int = 5
    learning_rate: float = 0.01
    hidden_units: int = 5
    flow_ceiling: float = 1200.0

    def __post_init__(self):
        object.__setattr__(self, "detector_ids", tuple(self.detector_ids))
        if not self.region_id:
            raise ConfigError("region_id must be nonempty")
        if len(self.detector_ids) < 1:
            raise ConfigError("each region needs at least one detector")
        if len(set(self.detector_ids)) != len(self.detector_ids):
            raise ConfigError("detector ids must be unique")
        if self.input_shape < 1 or self.max_data_size < self.input_shape + 1:
            raise ConfigError("max_data_size must exceed input_shape")
        if self.epochs < 1 or self.learning_rate <= 0 or self.hidden_units < 1:
            raise ConfigError("bad training hyperparameters")
        if self.flow_ceiling <= 0:
            raise ConfigError("flow_ceiling must be positive")


@dataclass(frozen=True)
class DhfaSettings:
    n_ecs: int = 3
    key_bits: int = 512
    scale: int = 1 << 24

    def __post_init__(self):
        if self.n_ecs < 2:
            raise ConfigError("n_ecs must be >= 2")
        if self.key_bits not in ALLOWED_KEY_BITS:
            raise ConfigError(f"key_bits must be one of {ALLOWED_KEY_BITS}")
        if self.scale < 1:
            raise ConfigError("scale must be positive")


@dataclass(frozen=True)
class LedgerSettings:
    peers: int = 4
    orderers: int = 2
    endorsement_threshold: int | None = None  # default: majority
    max_batch_size: int = 64
    round_timeout_ticks: int = 64

    def __post_init__(self):
        if self.peers < 1 or self.orderers < 1:
            raise ConfigError("need at least one peer and orderer")
        if self.endorsement_threshold is not None and not (
            1 <= self.endorsement_threshold <= self.peers
        ):
            raise ConfigError("endorsement_threshold out of range")
        if self.max_batch_size < 1 or self.round_timeout_ticks < 1:
            raise ConfigError("bad batch policy")


@dataclass(frozen=True)
class DataSource:
    kind: str = "synthetic"
    synthetic: SyntheticTrafficSpec = field(default_factory=SyntheticTrafficSpec)
    csv_path: str | None = None

    def __post_init__(self):
        if self.kind not in ("synthetic", "csv"):
            raise ConfigError("data_source.kind must be 'synthetic' or 'csv'")
        if self.kind == "csv" and not self.csv_path:
            raise ConfigError("csv data source needs csv_path")


@dataclass(frozen=True)
class SimulationConfig:
    regions: tuple
    rounds: int
    seed: int
    dhfa: DhfaSettings = field(default_factory=DhfaSettings)
    ledger: LedgerSettings = field(default_factory=LedgerSettings)
    data_source: DataSource = field(default_factory=DataSource)
    # detectors muted for specific rounds, exercising the timeout path:
    # {round_number: [detector_id, ...]}
    mute: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        if not self.regions:
            raise ConfigError("need at least one region")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.seed is None:
            raise ConfigError("seed is mandatory for reproducibility")
        object.__setattr__(
            self, "mute",
            {int(k): tuple(v) for k, v in dict(self.mute).items()},
        )
        all_detectors = [d for r in self.regions for d in r.detector_ids]
        if len(set(all_detectors)) != len(all_detectors):
            raise ConfigError("detector ids must be unique across regions")

    def muted(self, round_number: int):
        return set(self.mute.get(round_number, ()))

    def to_dict(self) -> dict:
        return {
            "regions": [
                {
                    "region_id": r.region_id,
                    "detector_ids": list(r.detector_ids),
                    "max_data_size": r.max_data_size,
                    "input_shape": r.input_shape,
                    "epochs": r.epochs,
                    "learning_rate": r.learning_rate,
                    "hidden_units": r.hidden_units,
                    "flow_ceiling": r.flow_ceiling,
                }
                for r in self.regions
            ],
            "rounds": self.rounds,
            "seed": self.seed,
            "dhfa": {
                "n_ecs": self.dhfa.n_ecs,
                "key_bits": self.dhfa.key_bits,
                "scale": self.dhfa.scale,
            },
            "ledger": {
                "peers": self.ledger.peers,
                "orderers": self.ledger.orderers,
                "endorsement_threshold": self.ledger.endorsement_threshold,
                "max_batch_size": self.ledger.max_batch_size,
                "round_timeout_ticks": self.ledger.round_timeout_ticks,
            },
            "data_source": {
                "kind": self.data_source.kind,
                "synthetic": self.data_source.synthetic.to_dict(),
                "csv_path": self.data_source.csv_path,
            },
            "mute": {str(k): list(v) for k, v in self.mute.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationConfig":
        try:
            regions = tuple(RegionConfig(**r) for r in d["regions"])
            dhfa_d = d.get("dhfa", {})
            ledger_d = d.get("ledger", {})
            source_d = dict(d.get("data_source", {}))
            if "synthetic" in source_d:
                source_d["synthetic"] = SyntheticTrafficSpec.from_dict(source_d["synthetic"])
            return cls(
                regions=regions,
                rounds=int(d["rounds"]),
                seed=int(d["seed"]),
                dhfa=DhfaSettings(**dhfa_d),
                ledger=LedgerSettings(**ledger_d),
                data_source=DataSource(**source_d),
                mute=d.get("mute", {}),
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc

    @classmethod
    def default_desk_scale(cls, seed: int = 1) -> "SimulationConfig":
        """Lightweight profile: 3 detectors, h=5 two-layer model, 10 rounds."""
        return cls(
            regions=(RegionConfig(
                region_id="region-1",
                detector_ids=("det-0", "det-1", "det-2"),
            ),),
            rounds=10,
            seed=seed,
            data_source=DataSource(synthetic=SyntheticTrafficSpec(
                magnitude_offsets=(0.0, 60.0, -40.0),
                phase_offsets=(0.0, 6.0, 12.0),
            )),
        )


def load_config(path: str) -> SimulationConfig:
    try:
        with open(path) as handle:
            data = json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return SimulationConfig.from_dict(data)
