"""
Synthetic consensus streams with a benign baseline and injected Sybil groups.

Baseline relays join and leave independently every hour (Bernoulli trials at
the configured rates; a relay that leaves never returns). Each Sybil group
follows its uptime pattern and similarity template, and every fingerprint it
uses is recorded in the ground-truth ledger.
"""
import logging
import string
from dataclasses import dataclass, field
from datetime import timedelta
from ipaddress import IPv4Address
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError

from document_storage import DocumentStorage
from errors import SpecError
from models import (BaselineSpec, Consensus, Flag, FlagSet, RouterDescriptor, RouterStatus,
                    Similarity, SybilSpec, UptimePattern)
from settings.settings_loader import load_yaml_mapping

logger = logging.getLogger(__name__)

HOUR = timedelta(hours=1)
SECONDS_PER_DAY = 86400
ADDRESS_LOW = int(IPv4Address("11.0.0.0"))
ADDRESS_HIGH = int(IPv4Address("223.255.255.0"))
NICKNAME_ALPHABET = string.ascii_letters + string.digits
MAX_NICKNAME = 19

VERSIONS = ["Tor 0.2.4.27", "Tor 0.2.5.12", "Tor 0.2.6.10", "Tor 0.2.7.3-rc"]
OR_PORTS = [9001, 443, 9002, 8080, 8443, 9090]
DIR_PORTS = [0, 9030, 80, 9031]
OPERATING_SYSTEMS = ["Linux", "FreeBSD", "Windows 8", "OpenBSD"]
EXIT_SUMMARY = "accept 20-23,43,53,79-81,443,6667"
NON_EXIT_SUMMARY = "reject 1-65535"
NON_EXIT_POLICY = ("reject *:*",)
EXIT_POLICY = ("accept *:80", "accept *:443", "reject *:*")


@dataclass
class SyntheticStream:
    """A generated stream plus everything needed to score detectors against it"""
    consensuses: List[Consensus] = field(default_factory=list)
    descriptors: Dict[str, RouterDescriptor] = field(default_factory=dict)
    ledger: Dict[str, List[str]] = field(default_factory=dict)
    address_fingerprints: Dict[IPv4Address, List[str]] = field(default_factory=dict)

    def ledger_frame(self) -> pd.DataFrame:
        rows = [{"group_id": name, "fingerprint": fp} for name, fps in self.ledger.items() for fp in fps]
        return pd.DataFrame(rows, columns=["group_id", "fingerprint"])

    def group_at(self, name: str, hour: int) -> List[str]:
        """Members of a group listed in the consensus of the given hour"""
        consensus = self.consensuses[hour]
        return [fp for fp in self.ledger[name] if fp in consensus]


@dataclass
class _Template:
    nickname: str
    or_port: int
    dir_port: int
    version: str
    bandwidth: int
    flags: FlagSet
    contact: Optional[str]
    platform: str
    uptime_seconds: int


class _Identities:
    """Collision-free fingerprints, digests and addresses from one seeded generator"""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.fingerprints: Set[str] = set()
        self.addresses: Set[int] = set()

    def fingerprint(self) -> str:
        while True:
            candidate = self.rng.bytes(20).hex().upper()
            if candidate not in self.fingerprints:
                self.fingerprints.add(candidate)
                return candidate

    def digest(self) -> str:
        return self.rng.bytes(20).hex().upper()

    def addresses_block(self, size: int) -> List[IPv4Address]:
        """size adjacent, unused addresses"""
        while True:
            base = int(self.rng.integers(ADDRESS_LOW, ADDRESS_HIGH - size))
            block = range(base, base + size)
            if not any(a in self.addresses for a in block):
                self.addresses.update(block)
                return [IPv4Address(a) for a in block]

    def address(self) -> IPv4Address:
        return self.addresses_block(1)[0]

    def nickname(self) -> str:
        length = int(self.rng.integers(6, 17))
        return "".join(NICKNAME_ALPHABET[i] for i in self.rng.integers(0, len(NICKNAME_ALPHABET), length))

    def contact(self) -> Optional[str]:
        if self.rng.random() < 0.4:
            return None
        return f"{self.nickname().lower()} at {self.nickname().lower()} dot org"


def _draw_flags(rng: np.random.Generator, probabilities: Dict[Flag, float]) -> FlagSet:
    flags = [flag for flag, p in sorted(probabilities.items(), key=lambda item: item[0].value) if rng.random() < p]
    return FlagSet(flags=frozenset(flags))


def _draw_template(identities: _Identities, baseline: BaselineSpec, nickname: Optional[str] = None) -> _Template:
    rng = identities.rng
    version = VERSIONS[int(rng.integers(len(VERSIONS)))]
    return _Template(
        nickname=nickname or identities.nickname(),
        or_port=OR_PORTS[int(rng.integers(len(OR_PORTS)))],
        dir_port=DIR_PORTS[int(rng.integers(len(DIR_PORTS)))],
        version=version,
        bandwidth=int(rng.integers(20, 20000)),
        flags=_draw_flags(rng, baseline.flag_assignment_probabilities),
        contact=identities.contact(),
        platform=f"{version} on {OPERATING_SYSTEMS[int(rng.integers(len(OPERATING_SYSTEMS)))]}",
        uptime_seconds=int(rng.integers(0, 60 * SECONDS_PER_DAY)),
    )


class _Generator:
    def __init__(self, baseline: BaselineSpec):
        self.baseline = baseline
        self.rng = np.random.default_rng(baseline.rng_seed)
        self.identities = _Identities(self.rng)
        self.stream = SyntheticStream()

    def time_of(self, hour: int):
        return self.baseline.start + hour * HOUR

    def relay(self, template: _Template, address: IPv4Address, hour: int,
              family: Tuple[str, ...] = (), fingerprint: Optional[str] = None) -> RouterStatus:
        fingerprint = fingerprint or self.identities.fingerprint()
        published = self.time_of(hour) - HOUR
        exit_relay = template.flags.has(Flag.EXIT)
        status = RouterStatus(
            nickname=template.nickname,
            fingerprint=fingerprint,
            descriptor_digest=self.identities.digest(),
            published=published,
            address=address,
            or_port=template.or_port,
            dir_port=template.dir_port,
            flags=template.flags,
            version=template.version,
            bandwidth=template.bandwidth,
            exit_policy_summary=EXIT_SUMMARY if exit_relay else NON_EXIT_SUMMARY,
        )
        self.stream.descriptors[fingerprint] = RouterDescriptor(
            nickname=template.nickname,
            address=address,
            or_port=template.or_port,
            dir_port=template.dir_port,
            platform=template.platform,
            published=published,
            fingerprint=fingerprint,
            uptime_seconds=template.uptime_seconds,
            bandwidth_avg=template.bandwidth * 1024,
            bandwidth_burst=template.bandwidth * 2048,
            bandwidth_observed=template.bandwidth * 1024,
            contact=template.contact,
            family=family,
            exit_policy=EXIT_POLICY if exit_relay else NON_EXIT_POLICY,
        )
        self.stream.address_fingerprints.setdefault(address, []).append(fingerprint)
        return status

    def baseline_relay(self, hour: int) -> RouterStatus:
        return self.relay(_draw_template(self.identities, self.baseline), self.identities.address(), hour)

    def baseline_schedule(self) -> List[List[RouterStatus]]:
        """Online baseline relays for every hour"""
        spec = self.baseline
        active = [self.baseline_relay(0) for _ in range(spec.relay_count)]
        hours = [list(active)]
        for hour in range(1, spec.duration_hours):
            joining = int(self.rng.binomial(len(active), spec.hourly_join_rate)) if active else 0
            staying = self.rng.random(len(active)) >= spec.hourly_leave_rate
            active = [status for status, stays in zip(active, staying) if stays]
            active.extend(self.baseline_relay(hour) for _ in range(joining))
            hours.append(list(active))
        return hours


def _prefix(spec: SybilSpec, digits: int) -> str:
    prefix = spec.nickname_prefix or "".join(ch for ch in spec.name if ch.isalnum()) or "Sybil"
    if len(prefix) + digits > MAX_NICKNAME:
        raise SpecError(f"group {spec.name}: nickname prefix {prefix!r} too long for {digits}-digit counter")
    return prefix


def _online(spec: SybilSpec, member: int, hour: int, end: int) -> bool:
    start = spec.join_time + (member * spec.step_hours if spec.uptime_pattern == UptimePattern.STEP else 0)
    if not start <= hour < end:
        return False
    if spec.uptime_pattern == UptimePattern.DIURNAL:
        return (hour - spec.join_time) % (spec.on_hours + spec.off_hours) < spec.on_hours
    return True


def _validate(baseline: BaselineSpec, sybils: Sequence[SybilSpec]) -> None:
    names = [spec.name for spec in sybils]
    if len(set(names)) != len(names):
        raise SpecError(f"duplicate Sybil group names: {names}")
    for spec in sybils:
        if spec.join_time >= baseline.duration_hours:
            raise SpecError(f"group {spec.name} joins at hour {spec.join_time}, "
                            f"after the {baseline.duration_hours}-hour stream ends")
        if spec.leave_time is not None and spec.leave_time <= spec.join_time:
            raise SpecError(f"group {spec.name} leaves at hour {spec.leave_time}, not after joining at {spec.join_time}")
        if spec.nickname_prefix is not None and not (spec.nickname_prefix.isascii() and spec.nickname_prefix.isalnum()):
            raise SpecError(f"group {spec.name}: nickname prefix {spec.nickname_prefix!r} must be ASCII letters and digits")
        if spec.fingerprint_churn:
            _check_fingerprint_churn(spec, baseline.duration_hours)


def _check_fingerprint_churn(spec: SybilSpec, duration: int) -> None:
    """Every member must be online in each of its fingerprint segments"""
    end = min(spec.leave_time if spec.leave_time is not None else duration, duration)
    changes = spec.fingerprint_churn
    for member in range(spec.group_size):
        start = spec.join_time + (member * spec.step_hours if spec.uptime_pattern == UptimePattern.STEP else 0)
        span = max(end - start, 1)
        segments = {min(changes - 1, (hour - start) * changes // span)
                    for hour in range(spec.join_time, end) if _online(spec, member, hour, end)}
        if len(segments) < changes:
            raise SpecError(f"group {spec.name}: member {member} is online in {len(segments)} of "
                            f"{changes} fingerprint segments; lower fingerprint_churn or lengthen its stay")


def _inject(generator: _Generator, spec: SybilSpec, hours: List[List[RouterStatus]]) -> None:
    """Add one Sybil group's statuses to every hour it is online"""
    identities = generator.identities
    duration = generator.baseline.duration_hours
    end = min(spec.leave_time if spec.leave_time is not None else duration, duration)
    size = spec.group_size
    digits = max(3, len(str(size - 1)))

    if spec.similarity == Similarity.DIVERSIFIED:
        templates = [_draw_template(identities, generator.baseline) for _ in range(size)]
        addresses = [identities.address() for _ in range(size)]
    else:
        shared = _draw_template(identities, generator.baseline,
                                nickname=_prefix(spec, 0 if spec.similarity == Similarity.CLONE else digits))
        templates = []
        for member in range(size):
            template = _Template(**vars(shared))
            if spec.similarity == Similarity.TEMPLATED:
                template.nickname = f"{shared.nickname}{member:0{digits}d}"
            templates.append(template)
        addresses = identities.addresses_block(size)

    changes = spec.fingerprint_churn or 1
    # fingerprints are drawn up front so templated family lines can name them
    identities_by_member = [[identities.fingerprint() for _ in range(changes)] for _ in range(size)]
    family_of = [()] * size
    if spec.similarity == Similarity.TEMPLATED:
        first = [fps[0] for fps in identities_by_member]
        family_of = [tuple(f"${fp}" for i, fp in enumerate(first) if i != member) for member in range(size)]

    used: List[str] = []
    cache: Dict[Tuple[int, int], RouterStatus] = {}
    for member in range(size):
        start = spec.join_time + (member * spec.step_hours if spec.uptime_pattern == UptimePattern.STEP else 0)
        span = max(end - start, 1)
        for hour in range(spec.join_time, end):
            if not _online(spec, member, hour, end):
                continue
            segment = min(changes - 1, (hour - start) * changes // span)
            status = cache.get((member, segment))
            if status is None:
                status = generator.relay(templates[member], addresses[member], hour,
                                         family=family_of[member],
                                         fingerprint=identities_by_member[member][segment])
                cache[(member, segment)] = status
                used.append(status.fingerprint)
            hours[hour].append(status)
    generator.stream.ledger[spec.name] = used
    logger.info("injected group %s: %d relays, %d fingerprints, hours %d-%d",
                spec.name, size, len(used), spec.join_time, end)


def generate(baseline: BaselineSpec, sybils: Sequence[SybilSpec] = ()) -> SyntheticStream:
    """Deterministic stream for the given specs; identical seeds give identical streams"""
    _validate(baseline, sybils)
    generator = _Generator(baseline)
    hours = generator.baseline_schedule()
    for spec in sybils:
        _inject(generator, spec, hours)
    generator.stream.consensuses = [Consensus.from_statuses(generator.time_of(hour), statuses)
                                    for hour, statuses in enumerate(hours)]
    logger.info("generated %d consensuses, %d distinct relays",
                len(hours), len(generator.stream.descriptors))
    return generator.stream


def write_stream(stream: SyntheticStream, out_dir: Path) -> List[Path]:
    """CollecTor-named consensus files, descriptors/ and ground_truth.csv"""
    storage = DocumentStorage(out_dir)
    paths = [storage.save_consensus(consensus) for consensus in stream.consensuses]
    paths.extend(storage.save_descriptor(descriptor) for _, descriptor in sorted(stream.descriptors.items()))
    paths.append(storage.save_frame(stream.ledger_frame(), "ground_truth.csv"))
    return paths


def load_spec(path: Path) -> Tuple[BaselineSpec, List[SybilSpec]]:
    """
    Read a flat key-value YAML spec:

        baseline.relay_count: 3000
        baseline.flag_assignment_probabilities.Guard: 0.3
        sybil.ec2.group_size: 88
    """
    try:
        entries = load_yaml_mapping(str(path))
    except (OSError, ValueError) as exc:
        raise SpecError(f"cannot read spec {path}: {exc}") from exc

    baseline: Dict = {}
    groups: Dict[str, Dict] = {}
    for key, value in entries.items():
        parts = str(key).split(".")
        if parts[0] == "baseline" and len(parts) == 2:
            baseline[parts[1]] = value
        elif parts[0] == "baseline" and len(parts) == 3 and parts[1] == "flag_assignment_probabilities":
            baseline.setdefault(parts[1], {})[parts[2]] = value
        elif parts[0] == "sybil" and len(parts) == 3:
            groups.setdefault(parts[1], {"name": parts[1]})[parts[2]] = value
        else:
            raise SpecError(f"{path}: unrecognized key {key!r}")

    try:
        return BaselineSpec(**baseline), [SybilSpec(**fields) for fields in groups.values()]
    except ValidationError as exc:
        error = exc.errors()[0]
        location = ".".join(str(part) for part in error["loc"])
        raise SpecError(f"{path}: {location}: {error['msg']}") from None
