"""
Nearest-neighbor search over relay configurations.

Every relay is serialized into one canonical string and compared with the
seed's string by Levenshtein distance; the closest relays are the likeliest
members of the seed's group.
"""
import logging
from collections import defaultdict, deque
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Set, Tuple, Union

import numpy as np
import pandas as pd
from rapidfuzz import process
from rapidfuzz.distance import Levenshtein

from dirdata import latest_descriptors
from errors import GroupMemberMissing, SeedNotFound
from models import Consensus, NeighborEntry, NeighborRanking, RouterDescriptor, RouterStatus

logger = logging.getLogger(__name__)

SEPARATOR = "|"
SECONDS_PER_DAY = 86400

Ranker = Callable[[str, int], Sequence[str]]
Groups = Union[Mapping[str, Iterable[str]], Sequence[Iterable[str]]]


def levenshtein(s1: str, s2: str) -> int:
    """Unit-cost edit distance (insert, delete, substitute)"""
    return Levenshtein.distance(s1, s2)


def serialize_relay(status: RouterStatus, descriptor: Optional[RouterDescriptor] = None) -> str:
    """
    nickname|address|or_port|dir_port|version|bandwidth|flags|exit_policy|platform|contact|uptime_days

    Missing values, a zero dir port and a zero uptime become empty segments,
    so a status without descriptor and one with an empty descriptor serialize
    identically.
    """
    platform = contact = uptime = ""
    if descriptor is not None:
        platform = descriptor.platform
        contact = descriptor.contact or ""
        uptime = str(descriptor.uptime_seconds // SECONDS_PER_DAY) if descriptor.uptime_seconds else ""
    segments = [
        status.nickname,
        str(status.address),
        str(status.or_port),
        str(status.dir_port) if status.dir_port else "",
        status.version or "",
        "" if status.bandwidth is None else str(status.bandwidth),
        ",".join(sorted(status.flags.tokens())),
        status.exit_policy_summary or "",
        platform,
        contact,
        uptime,
    ]
    return SEPARATOR.join(segments)


def resolve_seed(consensus: Consensus, seed: str) -> str:
    """Accept a fingerprint (any case, optional '$') or a nickname"""
    candidate = seed.lstrip("$").upper()
    if candidate in consensus:
        return candidate
    matches = [status.fingerprint for status in consensus.relays() if status.nickname == seed]
    if not matches:
        raise SeedNotFound(f"relay {seed} not in consensus {consensus.valid_after.isoformat()}")
    if len(matches) > 1:
        logger.warning("nickname %s names %d relays; using %s", seed, len(matches), matches[0])
    return matches[0]


class NeighborIndex:
    """Serialized relays of one consensus, queried repeatedly by seed"""

    def __init__(self, consensus: Consensus, descriptors: Optional[Mapping[str, RouterDescriptor]] = None,
                 workers: int = 1):
        descriptors = descriptors or {}
        self.consensus = consensus
        self.workers = workers
        self.statuses = sorted(consensus.relays(), key=lambda status: status.fingerprint)
        self.position = {status.fingerprint: index for index, status in enumerate(self.statuses)}
        self.strings = [serialize_relay(status, descriptors.get(status.fingerprint)) for status in self.statuses]

    def distances(self, seed: str) -> np.ndarray:
        if seed not in self.position:
            raise SeedNotFound(f"relay {seed} not in consensus {self.consensus.valid_after.isoformat()}")
        seed_string = self.strings[self.position[seed]]
        return process.cdist([seed_string], self.strings, scorer=Levenshtein.distance,
                             dtype=np.int32, workers=self.workers)[0]

    def nearest(self, seed: str, n: int) -> NeighborRanking:
        if n < 1:
            raise ValueError(f"n must be >= 1, got {n}")
        distances = self.distances(seed)
        seed_index = self.position[seed]
        # statuses are in fingerprint order, so a stable sort on distance
        # yields the (distance, fingerprint) order
        order = [i for i in np.argsort(distances, kind="stable") if i != seed_index][:n]
        entries = [NeighborEntry(
            fingerprint=self.statuses[i].fingerprint,
            nickname=self.statuses[i].nickname,
            distance=int(distances[i]),
            relay_string=self.strings[i],
        ) for i in order]
        return NeighborRanking(seed=seed, seed_string=self.strings[seed_index], entries=entries)

    def ranker(self) -> Ranker:
        return lambda seed, n: self.nearest(seed, n).fingerprints()


def nearest(seed: str, consensus: Consensus, descriptors: Optional[Mapping[str, RouterDescriptor]] = None,
            n: int = 10, workers: int = 1) -> NeighborRanking:
    """Top-n relays closest to the seed, ordered by (distance, fingerprint)"""
    if seed not in consensus:
        raise SeedNotFound(f"relay {seed} not in consensus {consensus.valid_after.isoformat()}")
    ranking = NeighborIndex(consensus, descriptors, workers).nearest(seed, n)
    logger.info("ranked %d neighbors of %s", len(ranking.entries), seed)
    return ranking


def _named_groups(groups: Groups) -> List[Tuple[str, List[str]]]:
    if isinstance(groups, Mapping):
        items = list(groups.items())
    else:
        items = [(str(index), members) for index, members in enumerate(groups)]
    return [(str(name), sorted(set(members))) for name, members in items]


def _member_accuracy(ranking_fn: Ranker, groups: Groups, consensus: Consensus) -> Iterable[Tuple[str, str, float]]:
    named = _named_groups(groups)
    for name, members in named:
        if len(members) < 2:
            raise ValueError(f"group {name} has fewer than two members")
        missing = [fp for fp in members if fp not in consensus]
        if missing:
            raise GroupMemberMissing(f"group {name}: {len(missing)} members not in consensus, e.g. {missing[0]}")
    for name, members in named:
        size = len(members)
        for member in members:
            relatives = set(members) - {member}
            returned = set(ranking_fn(member, size - 1))
            yield name, member, len(returned & relatives) / (size - 1)


def accuracy(ranking_fn: Ranker, groups: Groups, consensus: Consensus) -> List[float]:
    """For each member, the fraction of its n-1 nearest neighbors that are relatives"""
    return [value for _, _, value in _member_accuracy(ranking_fn, groups, consensus)]


def accuracy_frame(ranking_fn: Ranker, groups: Groups, consensus: Consensus) -> pd.DataFrame:
    rows = [{"group_id": name, "fingerprint": member, "accuracy": value}
            for name, member, value in _member_accuracy(ranking_fn, groups, consensus)]
    frame = pd.DataFrame(rows, columns=["group_id", "fingerprint", "accuracy"])
    if not frame.empty:
        logger.info("accuracy over %d searches: mean %.3f, %.1f%% perfect", len(frame),
                    frame["accuracy"].mean(), 100 * (frame["accuracy"] == 1.0).mean())
    return frame


def _declared(descriptor: RouterDescriptor, by_nickname: Dict[str, List[str]]) -> Set[str]:
    declared = set()
    for entry in descriptor.family:
        if entry.startswith("$"):
            # $FINGERPRINT, optionally followed by =nickname or ~nickname
            declared.add(entry[1:41].upper())
        else:
            declared.update(by_nickname.get(entry, ()))
    declared.discard(descriptor.fingerprint)
    return declared


def mutual_families(descriptors: Union[Mapping[str, RouterDescriptor], Iterable[RouterDescriptor]]) -> List[FrozenSet[str]]:
    """Connected components (size >= 2) of relays declaring each other in family lines"""
    if not isinstance(descriptors, Mapping):
        descriptors = latest_descriptors(descriptors)
    by_nickname: Dict[str, List[str]] = defaultdict(list)
    for fingerprint, descriptor in sorted(descriptors.items()):
        by_nickname[descriptor.nickname].append(fingerprint)
    declared = {fp: _declared(d, by_nickname) for fp, d in descriptors.items()}

    edges: Dict[str, Set[str]] = defaultdict(set)
    for fingerprint, targets in declared.items():
        for target in targets:
            if fingerprint in declared.get(target, ()):
                edges[fingerprint].add(target)

    families, visited = [], set()
    for start in sorted(edges):
        if start in visited:
            continue
        component, queue = set(), deque([start])
        while queue:
            node = queue.popleft()
            if node in component:
                continue
            component.add(node)
            queue.extend(edges[node] - component)
        visited |= component
        if len(component) >= 2:
            families.append(frozenset(component))
    logger.info("found %d mutually declared families", len(families))
    return families


def ranking_frame(ranking: NeighborRanking) -> pd.DataFrame:
    rows = [{
        "rank": position,
        "fingerprint": entry.fingerprint,
        "nickname": entry.nickname,
        "distance": entry.distance,
        "relay_string": entry.relay_string,
    } for position, entry in enumerate(ranking.entries, 1)]
    return pd.DataFrame(rows, columns=["rank", "fingerprint", "nickname", "distance", "relay_string"])


def format_ranking(ranking: NeighborRanking) -> str:
    lines = [f"seed {ranking.seed}: {ranking.seed_string}",
             f"{'rank':>4}  {'distance':>8}  {'fingerprint':<40}  nickname"]
    for position, entry in enumerate(ranking.entries, 1):
        lines.append(f"{position:>4}  {entry.distance:>8}  {entry.fingerprint:<40}  {entry.nickname}")
    return "\n".join(lines)
