"""Shared builders for relays, consensuses and descriptors"""
from datetime import datetime, timedelta
from ipaddress import IPv4Address

import pytest

from models import Consensus, FlagSet, RouterDescriptor, RouterStatus

START = datetime(2015, 10, 1)


def fp(index: int) -> str:
    return f"{index:040X}"


def status(index: int, nickname: str = None, address: str = None, flags=("Running", "Valid"), **fields) -> RouterStatus:
    return RouterStatus(
        nickname=nickname or f"relay{index}",
        fingerprint=fp(index),
        descriptor_digest=fp(index + 10 ** 6),
        published=fields.pop("published", START - timedelta(hours=1)),
        address=IPv4Address(address or f"10.0.{index // 256 % 256}.{index % 256}"),
        or_port=fields.pop("or_port", 9001),
        flags=FlagSet.from_tokens(flags),
        **fields,
    )


def consensus(hour: int, indices, **status_fields) -> Consensus:
    return Consensus(
        valid_after=START + timedelta(hours=hour),
        statuses={fp(i): status(i, **status_fields) for i in indices},
    )


def descriptor(index: int, **fields) -> RouterDescriptor:
    base = dict(
        nickname=f"relay{index}",
        address=IPv4Address(f"10.0.{index // 256 % 256}.{index % 256}"),
        or_port=9001,
        published=START,
        fingerprint=fp(index),
    )
    base.update(fields)
    return RouterDescriptor(**base)


@pytest.fixture
def make_status():
    return status


@pytest.fixture
def make_consensus():
    return consensus


@pytest.fixture
def make_descriptor():
    return descriptor


@pytest.fixture
def fingerprint():
    return fp


@pytest.fixture
def start():
    return START
