#!/usr/bin/env python3
"""
Canonical encoding shared by every chain in a simulation.

Parameters and return data are a length word followed by big-endian 32-byte
words. Envelope payloads are packed item by item: integers as one word, byte
strings as a length word followed by the data padded to a word boundary.
"""

from dataclasses import dataclass
from typing import List, Sequence, Union

from eth_utils import keccak

WORD_SIZE = 32
WORD_MAX = (1 << 256) - 1


def word(value: int) -> bytes:
    if value < 0 or value > WORD_MAX:
        raise ValueError(f"value does not fit into a word: {value}")
    return value.to_bytes(WORD_SIZE, "big")


def from_word(data: bytes) -> int:
    assert len(data) == WORD_SIZE, f"{len(data)=}"
    return int.from_bytes(data, "big")


def digest(data: bytes) -> bytes:
    return keccak(data)


@dataclass(frozen=True, order=True)
class ChainId:
    value: bytes

    def __post_init__(self) -> None:
        if len(self.value) != 32:
            raise ValueError(f"chain id must be 32 bytes, got {len(self.value)}")
        if self.value == bytes(32):
            raise ValueError("chain id must be nonzero")

    @classmethod
    def from_name(cls, name: str) -> "ChainId":
        return cls(keccak(text=name))

    @classmethod
    def from_hex(cls, s: str) -> "ChainId":
        return cls(bytes.fromhex(s[2:] if s.startswith("0x") else s))

    def as_word(self) -> int:
        return from_word(self.value)

    def short(self) -> str:
        return self.value.hex()[:8]

    def __str__(self) -> str:
        return "0x" + self.value.hex()


@dataclass(frozen=True, order=True)
class Address:
    value: bytes

    def __post_init__(self) -> None:
        if len(self.value) != 20:
            raise ValueError(f"address must be 20 bytes, got {len(self.value)}")

    @classmethod
    def from_int(cls, n: int) -> "Address":
        return cls(n.to_bytes(20, "big"))

    @classmethod
    def from_hex(cls, s: str) -> "Address":
        raw = s[2:] if s.startswith("0x") else s
        return cls(bytes.fromhex(raw.rjust(40, "0")))

    @classmethod
    def from_word(cls, n: int) -> "Address":
        if n >> 160:
            raise ValueError(f"word is not an address: 0x{n:x}")
        return cls.from_int(n)

    def as_word(self) -> int:
        return int.from_bytes(self.value, "big")

    def is_zero(self) -> bool:
        return self.value == bytes(20)

    def __str__(self) -> str:
        return "0x" + self.value.hex()


ZERO_ADDRESS = Address(bytes(20))


@dataclass(frozen=True, order=True)
class Selector:
    value: bytes

    def __post_init__(self) -> None:
        if len(self.value) != 4:
            raise ValueError(f"selector must be 4 bytes, got {len(self.value)}")

    @classmethod
    def of(cls, signature: str) -> "Selector":
        """
        First four bytes of keccak-256 over the function signature string,
        e.g. `Selector.of("getValue()")`
        """
        return cls(keccak(text=signature)[:4])

    @classmethod
    def from_word(cls, n: int) -> "Selector":
        if n >> 32:
            raise ValueError(f"word is not a selector: 0x{n:x}")
        return cls(n.to_bytes(4, "big"))

    def as_word(self) -> int:
        return int.from_bytes(self.value, "big")

    def is_zero(self) -> bool:
        return self.value == bytes(4)

    def __str__(self) -> str:
        return "0x" + self.value.hex()


EMPTY_SELECTOR = Selector(bytes(4))


def encode_words(values: Sequence[int]) -> bytes:
    return word(len(values)) + b"".join(word(v) for v in values)


def decode_words(data: bytes) -> List[int]:
    if len(data) < WORD_SIZE or len(data) % WORD_SIZE != 0:
        raise ValueError(f"malformed word list of {len(data)} bytes")
    count = from_word(data[:WORD_SIZE])
    if (count + 1) * WORD_SIZE != len(data):
        raise ValueError(f"length word {count} does not match {len(data)} bytes")
    return [
        from_word(data[i : i + WORD_SIZE])
        for i in range(WORD_SIZE, len(data), WORD_SIZE)
    ]


def encode_bool(value: bool) -> bytes:
    return encode_words([1 if value else 0])


def decode_bool(data: bytes) -> bool:
    words = decode_words(data)
    if len(words) != 1 or words[0] not in (0, 1):
        raise ValueError("not an encoded boolean")
    return words[0] == 1


Item = Union[int, bytes]


def pack(*items: Item) -> bytes:
    out = bytearray()
    for item in items:
        if isinstance(item, bytes):
            out += word(len(item))
            padding = (-len(item)) % WORD_SIZE
            out += item + bytes(padding)
        else:
            out += word(item)
    return bytes(out)


class Unpacker:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.offset = 0

    def _take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise ValueError("truncated payload")
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def read_int(self) -> int:
        return from_word(self._take(WORD_SIZE))

    def read_bytes(self) -> bytes:
        length = self.read_int()
        padded = length + (-length) % WORD_SIZE
        return self._take(padded)[:length]

    def done(self) -> None:
        if self.offset != len(self.data):
            raise ValueError(f"{len(self.data) - self.offset} trailing bytes")
