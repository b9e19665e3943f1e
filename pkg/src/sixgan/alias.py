"""Aliased-prefix detector: scores addresses and filters candidate sets.

An aliased region answers every probe, so hitting one proves nothing.
The detector wraps the prefix trie with the reward strength lambda used
during training and offers a post-hoc filter for candidate sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .addr import AliasTrie, NybblePrefix, NybbleSeq, alias_match, load_alias_file


@dataclass
class AliasDetector:
    trie: AliasTrie = field(default_factory=AliasTrie)
    lam: float = 10.0

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")

    @classmethod
    def from_file(cls, path: str, lam: float = 10.0) -> "AliasDetector":
        return cls(trie=AliasTrie(load_alias_file(path)), lam=lam)

    @classmethod
    def from_prefixes(cls, prefixes: list[NybblePrefix], lam: float = 10.0) -> "AliasDetector":
        return cls(trie=AliasTrie(prefixes), lam=lam)


def alias_score(det: AliasDetector, seq: NybbleSeq) -> float:
    """lambda when the address falls under a known aliased prefix, else 0."""
    return det.lam if alias_match(det.trie, seq) is not None else 0.0


def filter_aliased(det: AliasDetector, addresses: list[NybbleSeq]) -> tuple[list[NybbleSeq], list[NybbleSeq]]:
    """Partition addresses into (kept, removed) by aliased-prefix match."""
    kept: list[NybbleSeq] = []
    removed: list[NybbleSeq] = []
    for seq in addresses:
        (removed if alias_match(det.trie, seq) is not None else kept).append(seq)
    return kept, removed
