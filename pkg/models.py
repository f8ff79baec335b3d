"""
Data models for sybilscope: directory documents, analysis results and specs
"""
import logging
from datetime import datetime
from enum import Enum
from ipaddress import IPv4Address, IPv4Network
from pathlib import Path
from typing import Annotated, Dict, FrozenSet, Iterable, List, Optional, Set, Tuple

from pydantic import BaseModel, ConfigDict, Field, StringConstraints, field_validator, model_validator

logger = logging.getLogger(__name__)

Fingerprint = Annotated[str, StringConstraints(pattern=r'^[0-9A-F]{40}$')]
Nickname = Annotated[str, StringConstraints(pattern=r'^[A-Za-z0-9]{1,19}$')]
Port = Annotated[int, Field(ge=0, le=65535)]


def fingerprint_from_bytes(digest: bytes) -> str:
    """Render a 20-byte identity digest as 40 uppercase hex characters"""
    if len(digest) != 20:
        raise ValueError(f"identity digest must be 20 bytes, got {len(digest)}")
    return digest.hex().upper()


def fingerprint_to_bytes(fingerprint: str) -> bytes:
    return bytes.fromhex(fingerprint)


class Flag(str, Enum):
    """Relay flags assigned by the directory authorities"""
    AUTHORITY = "Authority"
    BAD_EXIT = "BadExit"
    EXIT = "Exit"
    FAST = "Fast"
    GUARD = "Guard"
    HSDIR = "HSDir"
    NAMED = "Named"
    RUNNING = "Running"
    STABLE = "Stable"
    UNNAMED = "Unnamed"
    V2DIR = "V2Dir"
    VALID = "Valid"

    @classmethod
    def parse(cls, token: str) -> Optional["Flag"]:
        try:
            return cls(token)
        except ValueError:
            return None


class FlagSet(BaseModel):
    """Flags of one router status; unknown tokens are kept verbatim"""
    model_config = ConfigDict(frozen=True)

    flags: FrozenSet[Flag] = frozenset()
    unknown: Tuple[str, ...] = ()

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> "FlagSet":
        known, unknown = set(), []
        for token in tokens:
            flag = Flag.parse(token)
            if flag is None:
                unknown.append(token)
            else:
                known.add(flag)
        return cls(flags=frozenset(known), unknown=tuple(unknown))

    def has(self, flag: Flag) -> bool:
        return flag in self.flags

    def tokens(self) -> List[str]:
        """Known flags in directory-protocol order, then unknown tokens as parsed"""
        return sorted(flag.value for flag in self.flags) + list(self.unknown)


class RouterStatus(BaseModel):
    """One relay's entry in a consensus"""
    model_config = ConfigDict(frozen=True)

    nickname: Nickname
    fingerprint: Fingerprint
    descriptor_digest: Fingerprint
    published: datetime
    address: IPv4Address
    or_port: int = Field(..., gt=0, le=65535)
    dir_port: Port = 0
    flags: FlagSet = FlagSet()
    version: Optional[str] = None
    bandwidth: Optional[int] = Field(default=None, ge=0)
    exit_policy_summary: Optional[str] = None


class Consensus(BaseModel):
    """One hourly network snapshot; statuses iterate in ascending fingerprint order"""
    model_config = ConfigDict(frozen=True)

    valid_after: datetime
    statuses: Dict[Fingerprint, RouterStatus] = Field(default_factory=dict)

    @field_validator('statuses')
    @classmethod
    def _sorted_and_keyed(cls, statuses: Dict[str, RouterStatus]) -> Dict[str, RouterStatus]:
        for key, status in statuses.items():
            if key != status.fingerprint:
                raise ValueError(f"status keyed as {key} carries fingerprint {status.fingerprint}")
        return dict(sorted(statuses.items()))

    @classmethod
    def from_statuses(cls, valid_after: datetime, statuses: Iterable[RouterStatus]) -> "Consensus":
        """Build a consensus, keeping the first status of any duplicated fingerprint"""
        keyed: Dict[str, RouterStatus] = {}
        for status in statuses:
            if status.fingerprint in keyed:
                logger.warning("duplicate fingerprint %s in consensus %s; keeping the first",
                               status.fingerprint, valid_after.isoformat())
                continue
            keyed[status.fingerprint] = status
        return cls.model_construct(valid_after=valid_after, statuses=dict(sorted(keyed.items())))

    def relays(self) -> List[RouterStatus]:
        return list(self.statuses.values())

    def fingerprints(self, flag: Optional[Flag] = None) -> FrozenSet[str]:
        if flag is None:
            return frozenset(self.statuses)
        return frozenset(fp for fp, status in self.statuses.items() if status.flags.has(flag))

    def restrict(self, flag: Flag) -> "Consensus":
        return Consensus.model_construct(
            valid_after=self.valid_after,
            statuses={fp: s for fp, s in self.statuses.items() if s.flags.has(flag)},
        )

    def get(self, fingerprint: str) -> Optional[RouterStatus]:
        return self.statuses.get(fingerprint)

    def __len__(self) -> int:
        return len(self.statuses)

    def __contains__(self, fingerprint: object) -> bool:
        return fingerprint in self.statuses


class RouterDescriptor(BaseModel):
    """A relay's self-published server descriptor (self-reported, may be spoofed)"""
    model_config = ConfigDict(frozen=True)

    nickname: Nickname
    address: IPv4Address
    or_port: int = Field(..., gt=0, le=65535)
    dir_port: Port = 0
    platform: str = ""
    published: datetime
    fingerprint: Fingerprint
    uptime_seconds: int = Field(default=0, ge=0)
    bandwidth_avg: int = Field(default=0, ge=0)
    bandwidth_burst: int = Field(default=0, ge=0)
    bandwidth_observed: int = Field(default=0, ge=0)
    contact: Optional[str] = None
    family: Tuple[str, ...] = ()
    exit_policy: Tuple[str, ...] = ()


def _bare_version(version: Optional[str]) -> Optional[str]:
    if version is None:
        return None
    return version[4:] if version.startswith("Tor ") else version


class FilterSpec(BaseModel):
    """Conjunction of optional relay matchers; an empty spec matches everything"""
    model_config = ConfigDict(frozen=True)

    nickname: Optional[str] = None
    nickname_substring: bool = False
    flag: Optional[Flag] = None
    or_port: Optional[int] = None
    dir_port: Optional[int] = None
    address_prefix: Optional[str] = None
    version: Optional[str] = None

    def is_empty(self) -> bool:
        return all(value is None for value in (
            self.nickname, self.flag, self.or_port, self.dir_port, self.address_prefix, self.version))

    def matches(self, status: RouterStatus) -> bool:
        if self.nickname is not None:
            if self.nickname_substring:
                if self.nickname not in status.nickname:
                    return False
            elif status.nickname != self.nickname:
                return False
        if self.flag is not None and not status.flags.has(self.flag):
            return False
        if self.or_port is not None and status.or_port != self.or_port:
            return False
        if self.dir_port is not None and status.dir_port != self.dir_port:
            return False
        if self.address_prefix is not None:
            if '/' in self.address_prefix:
                if status.address not in IPv4Network(self.address_prefix, strict=False):
                    return False
            elif not str(status.address).startswith(self.address_prefix):
                return False
        if self.version is not None and _bare_version(status.version) != _bare_version(self.version):
            return False
        return True


class ChurnPoint(BaseModel):
    """Join and leave fractions between two adjacent consensuses; None marks an undefined ratio"""
    model_config = ConfigDict(frozen=True)

    timestamp: datetime
    alpha_new: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    alpha_left: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    flag: Optional[Flag] = None

    @property
    def undefined(self) -> bool:
        return self.alpha_new is None or self.alpha_left is None


class ChurnSeries(BaseModel):
    """Time-ordered churn points of one flag plus the gaps skipped between them"""
    flag: Optional[Flag] = None
    points: List[ChurnPoint] = Field(default_factory=list)
    gaps: List[Tuple[datetime, datetime]] = Field(default_factory=list)

    @model_validator(mode='after')
    def _strictly_increasing(self) -> "ChurnSeries":
        for before, after in zip(self.points, self.points[1:]):
            if after.timestamp <= before.timestamp:
                raise ValueError(f"churn points out of order at {after.timestamp.isoformat()}")
        return self


class ChurnAlert(BaseModel):
    model_config = ConfigDict(frozen=True)

    timestamp: datetime
    direction: str
    value: float
    flag: Optional[Flag] = None


class FingerprintHistory(BaseModel):
    """Fingerprints observed so far and the per-consensus count of new ones"""
    seen: Set[str] = Field(default_factory=set)
    new_counts: List[Tuple[datetime, int]] = Field(default_factory=list)


class FingerprintRecord(BaseModel):
    """All fingerprints seen at one IPv4 address, in first-seen order"""
    model_config = ConfigDict(frozen=True)

    address: IPv4Address
    fingerprints: Tuple[Fingerprint, ...] = Field(..., min_length=1)
    first_seen: datetime
    last_seen: datetime
    transitions: int = Field(default=0, ge=0)

    @model_validator(mode='after')
    def _ordered_times(self) -> "FingerprintRecord":
        if self.first_seen > self.last_seen:
            raise ValueError("first_seen after last_seen")
        return self

    @property
    def count(self) -> int:
        return len(self.fingerprints)


class NeighborEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    fingerprint: Fingerprint
    nickname: str
    distance: int = Field(..., ge=0)
    relay_string: str


class NeighborRanking(BaseModel):
    """Relays nearest to a seed, ascending by (distance, fingerprint)"""
    model_config = ConfigDict(frozen=True)

    seed: Fingerprint
    seed_string: str
    entries: List[NeighborEntry] = Field(default_factory=list)

    def fingerprints(self) -> List[str]:
        return [entry.fingerprint for entry in self.entries]


DEFAULT_FLAG_PROBABILITIES = {
    Flag.RUNNING: 1.0,
    Flag.VALID: 1.0,
    Flag.FAST: 0.9,
    Flag.V2DIR: 0.8,
    Flag.STABLE: 0.7,
    Flag.HSDIR: 0.45,
    Flag.GUARD: 0.3,
    Flag.EXIT: 0.15,
}


class BaselineSpec(BaseModel):
    """Benign background network of a synthetic stream"""
    model_config = ConfigDict(frozen=True)

    relay_count: int = Field(..., ge=1)
    hourly_join_rate: float = Field(default=0.0, ge=0.0, le=1.0)
    hourly_leave_rate: float = Field(default=0.0, ge=0.0, le=1.0)
    flag_assignment_probabilities: Dict[Flag, float] = Field(default_factory=lambda: dict(DEFAULT_FLAG_PROBABILITIES))
    duration_hours: int = Field(..., ge=1)
    start: datetime = datetime(2015, 10, 1)
    rng_seed: int = 0

    @field_validator('flag_assignment_probabilities')
    @classmethod
    def _probabilities(cls, probabilities: Dict[Flag, float]) -> Dict[Flag, float]:
        for flag, p in probabilities.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability for {flag.value} outside [0, 1]: {p}")
        return probabilities


class UptimePattern(str, Enum):
    CONSTANT = "constant"
    DIURNAL = "diurnal"
    STEP = "step"


class Similarity(str, Enum):
    CLONE = "clone"
    TEMPLATED = "templated"
    DIVERSIFIED = "diversified"


class SybilSpec(BaseModel):
    """One injected Sybil group; times are hour offsets from the stream start"""
    model_config = ConfigDict(frozen=True)

    name: str = "sybil"
    group_size: int = Field(..., ge=2)
    join_time: int = Field(..., ge=0)
    leave_time: Optional[int] = None
    uptime_pattern: UptimePattern = UptimePattern.CONSTANT
    on_hours: int = Field(default=9, ge=1)
    off_hours: int = Field(default=15, ge=0)
    step_hours: int = Field(default=1, ge=1)
    similarity: Similarity = Similarity.TEMPLATED
    nickname_prefix: Optional[str] = None
    fingerprint_churn: Optional[int] = Field(default=None, ge=1)


class Module(str, Enum):
    CHURN = "churn"
    UPTIME = "uptime"
    FINGERPRINTS = "fingerprints"
    NEIGHBORS = "neighbors"
    SYNTH = "synth"


class RunConfig(BaseModel):
    """Everything one CLI invocation needs"""
    inputs: List[Path] = Field(default_factory=list)
    date_from: Optional[datetime] = None
    date_to: Optional[datetime] = None
    filter: FilterSpec = FilterSpec()
    modules: List[Module] = Field(..., min_length=1)
    output_dir: Path

    threshold: float = Field(default=0.012, gt=0.0)
    windows: List[int] = Field(default_factory=lambda: [1, 4, 8, 16])
    sweep_thresholds: List[float] = Field(default_factory=list)
    new_fingerprint_threshold: int = Field(default=50, ge=1)
    flags: List[Optional[Flag]] = Field(default_factory=lambda: [None])
    top_n: int = Field(default=20, ge=1)
    neighbor_top_n: int = Field(default=10, ge=1)
    seed: Optional[str] = None
    accuracy: Optional[str] = None
    image_width: int = Field(default=3000, ge=1)
    synth_spec: Optional[Path] = None
    plot: bool = False
    workers: int = Field(default=8, ge=1)

    @model_validator(mode='after')
    def _consistent(self) -> "RunConfig":
        if any(w < 1 for w in self.windows) or not self.windows:
            raise ValueError("windows must be non-empty and >= 1")
        if self.date_from and self.date_to and self.date_from > self.date_to:
            raise ValueError("--from is after --to")
        if Module.SYNTH in self.modules:
            if self.synth_spec is None:
                raise ValueError("synth needs --spec")
        elif not self.inputs:
            raise ValueError("at least one --input is required")
        if Module.NEIGHBORS in self.modules and self.seed is None and self.accuracy is None:
            raise ValueError("neighbors needs --seed or --accuracy")
        return self
