"""
Fingerprint tracking per IPv4 address, ranking of the most frequent
changers, and the cost model for brute-forcing key prefixes.
"""
import logging
import os
from dataclasses import dataclass, field
from datetime import datetime
from ipaddress import IPv4Address
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import pandas as pd

from document_storage import iso
from errors import DomainError
from models import Consensus, FingerprintRecord

logger = logging.getLogger(__name__)

# Onion addresses carry 16 Base32 digits of 5 bits each
MAX_PREFIX_DIGITS = 16
BITS_PER_DIGIT = 5


@dataclass
class _Accumulator:
    fingerprints: Dict[str, None] = field(default_factory=dict)
    first_seen: Optional[datetime] = None
    last_seen: Optional[datetime] = None
    last_set: FrozenSet[str] = frozenset()
    transitions: int = 0


def track(consensuses: Iterable[Consensus]) -> Dict[IPv4Address, FingerprintRecord]:
    """Map each address to every fingerprint it was seen with, in first-seen order"""
    state: Dict[IPv4Address, _Accumulator] = {}
    previous_time = None
    for consensus in consensuses:
        if previous_time is not None and consensus.valid_after <= previous_time:
            raise ValueError(f"consensus stream not strictly increasing at {consensus.valid_after.isoformat()}")
        previous_time = consensus.valid_after

        observed: Dict[IPv4Address, set] = {}
        for status in consensus.statuses.values():
            observed.setdefault(status.address, set()).add(status.fingerprint)

        for address, fingerprints in observed.items():
            entry = state.get(address)
            if entry is None:
                entry = state[address] = _Accumulator(first_seen=consensus.valid_after)
            current = frozenset(fingerprints)
            if entry.last_set and current != entry.last_set:
                entry.transitions += 1
            entry.last_set = current
            entry.last_seen = consensus.valid_after
            for fingerprint in sorted(fingerprints):
                entry.fingerprints.setdefault(fingerprint, None)

    records = {
        address: FingerprintRecord(
            address=address,
            fingerprints=tuple(entry.fingerprints),
            first_seen=entry.first_seen,
            last_seen=entry.last_seen,
            transitions=entry.transitions,
        )
        for address, entry in state.items()
    }
    logger.info("tracked %d addresses", len(records))
    return records


def _as_records(records: Union[Mapping[IPv4Address, FingerprintRecord], Iterable[FingerprintRecord]]) -> List[FingerprintRecord]:
    if isinstance(records, Mapping):
        return list(records.values())
    return list(records)


def rank(records) -> List[FingerprintRecord]:
    """All records ordered by (-distinct fingerprints, address)"""
    return sorted(_as_records(records), key=lambda record: (-record.count, record.address))


def top_changers(records, n: int) -> List[FingerprintRecord]:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return rank(records)[:n]


def prefix_collision_cost(digits: int, hash_rate: Optional[float] = None) -> Tuple[int, Optional[float]]:
    """
    Expected hash operations to match an n-digit Base32 prefix, 2^(5n-1),
    and the wall-clock seconds at the given hashes per second.
    """
    if isinstance(digits, bool) or not isinstance(digits, int) or not 1 <= digits <= MAX_PREFIX_DIGITS:
        raise DomainError(f"prefix length must be an integer in 1..{MAX_PREFIX_DIGITS}, got {digits!r}")
    operations = 2 ** (BITS_PER_DIGIT * digits - 1)
    if hash_rate is None:
        return operations, None
    if hash_rate <= 0:
        raise DomainError(f"hash rate must be positive, got {hash_rate}")
    return operations, operations / hash_rate


def shared_prefix(record: FingerprintRecord) -> str:
    """Longest common hex prefix of a record's fingerprints"""
    return os.path.commonprefix(list(record.fingerprints))


def records_frame(records: Sequence[FingerprintRecord]) -> pd.DataFrame:
    rows = [{
        "address": str(record.address),
        "distinct_fingerprints": record.count,
        "transitions": record.transitions,
        "first_seen": iso(record.first_seen),
        "last_seen": iso(record.last_seen),
        "fingerprints": ";".join(record.fingerprints),
    } for record in records]
    return pd.DataFrame(rows, columns=["address", "distinct_fingerprints", "transitions",
                                       "first_seen", "last_seen", "fingerprints"])


def format_table(records: Sequence[FingerprintRecord]) -> str:
    """Plain-text top-n table for the terminal"""
    lines = [f"{'rank':>4}  {'address':<15}  {'distinct':>8}  {'transitions':>11}  shared prefix"]
    for position, record in enumerate(records, 1):
        prefix = shared_prefix(record) if record.count > 1 else ""
        lines.append(f"{position:>4}  {str(record.address):<15}  {record.count:>8}  {record.transitions:>11}  {prefix}")
    return "\n".join(lines)
