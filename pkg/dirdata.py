"""
Directory document parsing, serialization and relay filtering.

Supported grammar is the subset of the Tor directory protocol that the
analyses need. Consensus documents:

    valid-after YYYY-MM-DD HH:MM:SS
    r <nickname> <identity> <digest> <YYYY-MM-DD> <HH:MM:SS> <ip> <orport> <dirport>
    s <flag> ...
    v <version>
    w Bandwidth=<int> ...
    p <accept|reject> <portlist>

Server descriptors:

    router <nick> <ip> <orport> 0 <dirport>
    platform / published / fingerprint / uptime / bandwidth / contact / family
    accept|reject <rule>

Signature and key blocks are skipped without verification, "opt" prefixes are
tolerated, "@type" annotations and unknown keywords are ignored.
"""
import base64
import binascii
import logging
from datetime import datetime
from ipaddress import AddressValueError, IPv4Address
from typing import Dict, Iterable, Iterator, List, Optional, Tuple, Union

from pydantic import ValidationError

from errors import MalformedDocument
from models import (
    Consensus, FilterSpec, FlagSet, RouterDescriptor, RouterStatus, fingerprint_from_bytes, fingerprint_to_bytes,
)

logger = logging.getLogger(__name__)

TIMESTAMP_FORMAT = "%Y-%m-%d %H:%M:%S"
R_LINE_FIELDS = 8
ROUTER_LINE_FIELDS = 5


def parse_timestamp(text: str, line: int = 0) -> datetime:
    try:
        return datetime.strptime(text, TIMESTAMP_FORMAT)
    except ValueError:
        raise MalformedDocument(f"bad timestamp {text!r}", line) from None


def format_timestamp(moment: datetime) -> str:
    return moment.strftime(TIMESTAMP_FORMAT)


def decode_digest(token: str, line: int, what: str = "identity") -> str:
    """Unpadded base64 of a 20-byte digest -> 40 uppercase hex chars"""
    try:
        raw = base64.b64decode(token + "=" * (-len(token) % 4), validate=True)
        return fingerprint_from_bytes(raw)
    except (binascii.Error, ValueError):
        raise MalformedDocument(f"unparseable base64 {what} {token!r}", line) from None


def encode_digest(fingerprint: str) -> str:
    return base64.b64encode(fingerprint_to_bytes(fingerprint)).decode("ascii").rstrip("=")


def _as_text(document: Union[bytes, str]) -> str:
    if isinstance(document, bytes):
        return document.decode("utf-8", errors="replace")
    return document


def _content_lines(text: str, first_line: int = 1) -> Iterator[Tuple[int, str]]:
    """Yield (line number, line) pairs outside of BEGIN/END blocks"""
    in_block = False
    for number, raw in enumerate(text.splitlines(), start=first_line):
        line = raw.rstrip()
        if in_block:
            if line.startswith("-----END"):
                in_block = False
            continue
        if line.startswith("-----BEGIN"):
            in_block = True
            continue
        if not line or line.startswith("@"):
            continue
        if line.startswith("opt "):
            line = line[4:]
        yield number, line


def _parse_int(token: str, line: int, what: str) -> int:
    try:
        value = int(token)
    except ValueError:
        raise MalformedDocument(f"non-numeric {what} {token!r}", line) from None
    if value < 0:
        raise MalformedDocument(f"negative {what} {value}", line)
    return value


def _parse_address(token: str, line: int) -> IPv4Address:
    try:
        return IPv4Address(token)
    except AddressValueError:
        raise MalformedDocument(f"bad IPv4 address {token!r}", line) from None


class _PendingStatus:
    """Fields of one r-entry while its trailing s/v/w/p lines are read"""

    def __init__(self, line: int, fields: Dict):
        self.line = line
        self.fields = fields

    def build(self) -> RouterStatus:
        try:
            return RouterStatus(**self.fields)
        except ValidationError as exc:
            raise MalformedDocument(f"invalid router status: {exc.errors()[0]['msg']}", self.line) from None


def _parse_r_line(tokens: List[str], line: int) -> Dict:
    if len(tokens) != R_LINE_FIELDS:
        raise MalformedDocument(f"'r' line has {len(tokens)} fields, expected {R_LINE_FIELDS}", line)
    nickname, identity, digest, day, clock, address, or_port, dir_port = tokens
    return {
        "nickname": nickname,
        "fingerprint": decode_digest(identity, line, "identity"),
        "descriptor_digest": decode_digest(digest, line, "descriptor digest"),
        "published": parse_timestamp(f"{day} {clock}", line),
        "address": _parse_address(address, line),
        "or_port": _parse_int(or_port, line, "orport"),
        "dir_port": _parse_int(dir_port, line, "dirport"),
    }


def parse_consensus(document: Union[bytes, str]) -> Consensus:
    """Parse a network-status consensus into a Consensus"""
    text = _as_text(document)
    valid_after: Optional[datetime] = None
    statuses: Dict[str, RouterStatus] = {}
    pending: Optional[_PendingStatus] = None
    last_line = 0

    def flush():
        status = pending.build()
        if status.fingerprint in statuses:
            logger.warning("line %d: duplicate fingerprint %s; keeping the first", pending.line, status.fingerprint)
        else:
            statuses[status.fingerprint] = status

    for number, line in _content_lines(text):
        last_line = number
        keyword, _, rest = line.partition(" ")
        if keyword == "valid-after":
            if valid_after is not None:
                raise MalformedDocument("repeated valid-after", number)
            valid_after = parse_timestamp(rest.strip(), number)
        elif keyword == "r":
            if pending is not None:
                flush()
            pending = _PendingStatus(number, _parse_r_line(rest.split(), number))
        elif keyword in ("s", "v", "w", "p"):
            if pending is None:
                raise MalformedDocument(f"'{keyword}' line before any 'r' line", number)
            if keyword == "s":
                pending.fields["flags"] = FlagSet.from_tokens(rest.split())
            elif keyword == "v":
                pending.fields["version"] = rest.strip()
            elif keyword == "w":
                for item in rest.split():
                    key, _, value = item.partition("=")
                    if key == "Bandwidth":
                        pending.fields["bandwidth"] = _parse_int(value, number, "bandwidth")
            else:
                action = rest.split(" ", 1)[0]
                if action not in ("accept", "reject"):
                    raise MalformedDocument(f"bad exit policy summary {rest!r}", number)
                pending.fields["exit_policy_summary"] = rest.strip()
        elif keyword == "directory-footer":
            if pending is not None:
                flush()
                pending = None

    if pending is not None:
        flush()
    if valid_after is None:
        raise MalformedDocument("missing valid-after", max(last_line, 1))
    return Consensus.model_construct(valid_after=valid_after, statuses=dict(sorted(statuses.items())))


def serialize_consensus(consensus: Consensus) -> str:
    """Render a Consensus in the supported grammar subset"""
    lines = [
        "network-status-version 3",
        "vote-status consensus",
        f"valid-after {format_timestamp(consensus.valid_after)}",
    ]
    for status in consensus.relays():
        lines.append(" ".join([
            "r", status.nickname, encode_digest(status.fingerprint), encode_digest(status.descriptor_digest),
            format_timestamp(status.published), str(status.address), str(status.or_port), str(status.dir_port),
        ]))
        lines.append(" ".join(["s"] + status.flags.tokens()))
        if status.version is not None:
            lines.append(f"v {status.version}")
        if status.bandwidth is not None:
            lines.append(f"w Bandwidth={status.bandwidth}")
        if status.exit_policy_summary is not None:
            lines.append(f"p {status.exit_policy_summary}")
    lines.append("directory-footer")
    return "\n".join(lines) + "\n"


def _parse_fingerprint_groups(rest: str, line: int) -> str:
    groups = rest.split()
    joined = "".join(groups).upper()
    if len(groups) != 10 or any(len(g) != 4 for g in groups) or len(joined) != 40:
        raise MalformedDocument(f"bad fingerprint line {rest!r}", line)
    try:
        bytes.fromhex(joined)
    except ValueError:
        raise MalformedDocument(f"non-hex fingerprint {rest!r}", line) from None
    return joined


def parse_descriptor(document: Union[bytes, str], first_line: int = 1) -> RouterDescriptor:
    """Parse a single server descriptor into a RouterDescriptor"""
    text = _as_text(document)
    fields: Dict = {}
    family: List[str] = []
    exit_policy: List[str] = []
    router_line = first_line
    last_line = first_line

    for number, line in _content_lines(text, first_line):
        last_line = number
        keyword, _, rest = line.partition(" ")
        if keyword == "router":
            if "nickname" in fields:
                raise MalformedDocument("second 'router' line in one descriptor", number)
            tokens = rest.split()
            if len(tokens) != ROUTER_LINE_FIELDS:
                raise MalformedDocument(f"'router' line has {len(tokens)} fields, expected {ROUTER_LINE_FIELDS}", number)
            router_line = number
            fields["nickname"] = tokens[0]
            fields["address"] = _parse_address(tokens[1], number)
            fields["or_port"] = _parse_int(tokens[2], number, "orport")
            fields["dir_port"] = _parse_int(tokens[4], number, "dirport")
        elif keyword == "platform":
            fields["platform"] = rest
        elif keyword == "published":
            fields["published"] = parse_timestamp(rest.strip(), number)
        elif keyword == "fingerprint":
            fields["fingerprint"] = _parse_fingerprint_groups(rest, number)
        elif keyword == "uptime":
            fields["uptime_seconds"] = _parse_int(rest.strip(), number, "uptime")
        elif keyword == "bandwidth":
            values = rest.split()
            if len(values) != 3:
                raise MalformedDocument(f"'bandwidth' line has {len(values)} values, expected 3", number)
            fields["bandwidth_avg"], fields["bandwidth_burst"], fields["bandwidth_observed"] = (
                _parse_int(v, number, "bandwidth") for v in values)
        elif keyword == "contact":
            fields["contact"] = rest
        elif keyword == "family":
            family.extend(rest.split())
        elif keyword in ("accept", "reject"):
            exit_policy.append(line)

    for required in ("nickname", "published", "fingerprint"):
        if required not in fields:
            keyword = "router" if required == "nickname" else required
            raise MalformedDocument(f"missing '{keyword}' line", last_line)
    try:
        return RouterDescriptor(**fields, family=tuple(family), exit_policy=tuple(exit_policy))
    except ValidationError as exc:
        raise MalformedDocument(f"invalid descriptor: {exc.errors()[0]['msg']}", router_line) from None


def parse_descriptors(document: Union[bytes, str]) -> List[RouterDescriptor]:
    """Parse a file holding one or more concatenated server descriptors"""
    lines = _as_text(document).splitlines()
    starts = [i for i, line in enumerate(lines) if line.startswith("router ") or line.startswith("opt router ")]
    if not starts:
        raise MalformedDocument("missing 'router' line", max(len(lines), 1))
    bounds = zip(starts, starts[1:] + [len(lines)])
    return [parse_descriptor("\n".join(lines[start:end]), first_line=start + 1) for start, end in bounds]


def serialize_descriptor(descriptor: RouterDescriptor) -> str:
    """Render a RouterDescriptor in the supported grammar subset"""
    fp = descriptor.fingerprint
    lines = [f"router {descriptor.nickname} {descriptor.address} {descriptor.or_port} 0 {descriptor.dir_port}"]
    if descriptor.platform:
        lines.append(f"platform {descriptor.platform}")
    lines.append(f"published {format_timestamp(descriptor.published)}")
    lines.append("fingerprint " + " ".join(fp[i:i + 4] for i in range(0, 40, 4)))
    lines.append(f"uptime {descriptor.uptime_seconds}")
    lines.append(f"bandwidth {descriptor.bandwidth_avg} {descriptor.bandwidth_burst} {descriptor.bandwidth_observed}")
    if descriptor.contact is not None:
        lines.append(f"contact {descriptor.contact}")
    if descriptor.family:
        lines.append("family " + " ".join(descriptor.family))
    lines.extend(descriptor.exit_policy)
    lines.append("router-signature")
    return "\n".join(lines) + "\n"


def document_kind(document: Union[bytes, str]) -> Optional[str]:
    """'consensus', 'descriptor' or None, judged by the first keyword line"""
    head = _as_text(document[:4096] if isinstance(document, bytes) else document[:4096])
    for _, line in _content_lines(head):
        keyword = line.split(" ", 1)[0]
        if keyword in ("network-status-version", "valid-after"):
            return "consensus"
        if keyword == "router":
            return "descriptor"
        return None
    return None


def filter_consensus(consensus: Consensus, predicate: FilterSpec) -> Consensus:
    """Keep exactly the statuses satisfying every matcher of the predicate"""
    if predicate.is_empty():
        return consensus
    return Consensus.model_construct(
        valid_after=consensus.valid_after,
        statuses={fp: s for fp, s in consensus.statuses.items() if predicate.matches(s)},
    )


def select_range(consensuses: Iterable[Consensus], start: Optional[datetime] = None,
                 end: Optional[datetime] = None) -> List[Consensus]:
    """Consensuses whose valid-after lies within the inclusive bounds"""
    return [c for c in consensuses
            if (start is None or c.valid_after >= start) and (end is None or c.valid_after <= end)]


def latest_descriptors(descriptors: Iterable[RouterDescriptor]) -> Dict[str, RouterDescriptor]:
    """Fingerprint -> most recently published descriptor"""
    lookup: Dict[str, RouterDescriptor] = {}
    for descriptor in descriptors:
        known = lookup.get(descriptor.fingerprint)
        if known is None or descriptor.published > known.published:
            lookup[descriptor.fingerprint] = descriptor
    return lookup
