#!/usr/bin/env python3
"""
Document Storage System
Reads directory documents from files, directories and CollecTor tarballs,
and writes documents and analysis artifacts to an output directory
"""

import logging
import os
import tarfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import islice
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import pandas as pd

from dirdata import document_kind, parse_consensus, parse_descriptors, serialize_consensus, serialize_descriptor
from errors import MalformedDocument, NoInput
from models import Consensus, RouterDescriptor

logger = logging.getLogger(__name__)

TAR_SUFFIXES = ('.tar', '.tar.gz', '.tgz', '.tar.bz2', '.tar.xz')


@dataclass
class LoadedArchive:
    """Everything parsed from a set of input paths"""
    consensuses: List[Consensus] = field(default_factory=list)
    descriptors: List[RouterDescriptor] = field(default_factory=list)
    read: int = 0
    skipped: int = 0


def iter_sources(paths: Sequence[Path]) -> Iterator[Tuple[str, bytes]]:
    """Yield (name, raw bytes) for every document below the given paths"""
    for path in paths:
        path = Path(path)
        if path.is_dir():
            for child in sorted(p for p in path.rglob('*') if p.is_file()):
                yield from _iter_file(child)
        elif path.is_file():
            yield from _iter_file(path)
        else:
            logger.warning("input %s does not exist; skipping", path)


def _iter_file(path: Path) -> Iterator[Tuple[str, Optional[bytes]]]:
    """Members are yielded as they are read; an unreadable tail yields (path, None)"""
    try:
        if path.name.endswith(TAR_SUFFIXES) and tarfile.is_tarfile(path):
            with tarfile.open(path, 'r:*') as archive:
                for member in archive:
                    if not member.isfile():
                        continue
                    handle = archive.extractfile(member)
                    if handle is not None:
                        yield f"{path}:{member.name}", handle.read()
        else:
            yield str(path), path.read_bytes()
    except (OSError, EOFError, tarfile.TarError) as exc:
        logger.warning("%s: unreadable (%s); skipping the rest of it", path, exc)
        yield str(path), None


def _parse_source(source: Tuple[str, Optional[bytes]]) -> Tuple[str, Optional[str], list]:
    name, raw = source
    if raw is None:
        return name, 'unreadable', []
    kind = document_kind(raw)
    try:
        if kind == 'consensus':
            return name, kind, [parse_consensus(raw)]
        if kind == 'descriptor':
            return name, kind, parse_descriptors(raw)
    except MalformedDocument as exc:
        logger.warning("%s; skipping", exc.with_source(name))
        return name, 'malformed', []
    logger.warning("%s: not a consensus or server descriptor; skipping", name)
    return name, None, []


def _batches(items: Iterable, size: int) -> Iterator[list]:
    iterator = iter(items)
    while True:
        batch = list(islice(iterator, size))
        if not batch:
            return
        yield batch


def load_documents(paths: Sequence[Path], workers: int = 8) -> LoadedArchive:
    """Parse every document concurrently; corrupt ones are logged and counted"""
    loaded = LoadedArchive()
    by_time: Dict = {}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for batch in _batches(iter_sources(paths), workers * 4):
            for name, kind, documents in pool.map(_parse_source, batch):
                loaded.read += 1
                if not documents:
                    loaded.skipped += 1
                elif kind == 'consensus':
                    consensus = documents[0]
                    if consensus.valid_after in by_time:
                        logger.warning("%s: second consensus for %s; keeping the first",
                                       name, consensus.valid_after.isoformat())
                        continue
                    by_time[consensus.valid_after] = consensus
                else:
                    loaded.descriptors.extend(documents)
    loaded.consensuses = [by_time[t] for t in sorted(by_time)]
    if loaded.read == 0 or (not loaded.consensuses and not loaded.descriptors):
        raise NoInput(f"no readable consensus or descriptor in {', '.join(map(str, paths)) or 'no inputs'}")
    logger.info("read %d documents: %d consensuses, %d descriptors, %d skipped",
                loaded.read, len(loaded.consensuses), len(loaded.descriptors), loaded.skipped)
    return loaded


def consensus_filename(consensus: Consensus) -> str:
    """CollecTor naming, e.g. 2015-10-01-00-00-00-consensus"""
    return consensus.valid_after.strftime('%Y-%m-%d-%H-%M-%S') + '-consensus'


class DocumentStorage:
    """Writes documents and artifacts below one output directory"""

    def __init__(self, base_dir: str = "output"):
        self.base_dir = Path(base_dir)
        os.makedirs(self.base_dir, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.base_dir / name

    def save_consensus(self, consensus: Consensus, subdir: str = "consensuses") -> Path:
        target = self.base_dir / subdir
        target.mkdir(parents=True, exist_ok=True)
        path = target / consensus_filename(consensus)
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(serialize_consensus(consensus))
        return path

    def save_descriptor(self, descriptor: RouterDescriptor, subdir: str = "descriptors") -> Path:
        target = self.base_dir / subdir
        target.mkdir(parents=True, exist_ok=True)
        path = target / descriptor.fingerprint
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(serialize_descriptor(descriptor))
        return path

    def save_frame(self, frame: pd.DataFrame, name: str) -> Path:
        """Header-first, comma-separated, UTF-8, newline-terminated CSV"""
        path = self.base_dir / name
        frame.to_csv(path, index=False, lineterminator='\n', encoding='utf-8')
        logger.info("wrote %s (%d rows)", path, len(frame))
        return path

    def save_bytes(self, payload: bytes, name: str) -> Path:
        path = self.base_dir / name
        path.write_bytes(payload)
        logger.info("wrote %s (%d bytes)", path, len(payload))
        return path


def iso(moment) -> str:
    """ISO-8601 rendering used in every CSV"""
    return moment.strftime('%Y-%m-%dT%H:%M:%S')

