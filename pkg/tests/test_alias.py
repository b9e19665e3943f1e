"""Aliased-prefix detector: scoring and candidate filtering."""

import pytest

from sixgan.addr import NybbleSeq, parse_address, parse_prefix
from sixgan.alias import AliasDetector, alias_score, filter_aliased


def det(*prefixes, lam=10.0):
    return AliasDetector.from_prefixes([parse_prefix(p) for p in prefixes], lam=lam)


class TestDetector:
    def test_empty_detector_scores_zero(self):
        empty = AliasDetector()
        assert alias_score(empty, parse_address("2001:db8::1")) == 0.0

    def test_match_scores_lambda(self):
        d = det("2001:db8:f::/48", lam=10.0)
        assert alias_score(d, parse_address("2001:db8:f::1234")) == 10.0
        assert alias_score(d, parse_address("2001:db8:e::1234")) == 0.0

    def test_custom_lambda(self):
        d = det("2001:db8::/32", lam=2.5)
        assert alias_score(d, parse_address("2001:db8::1")) == 2.5

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            AliasDetector(lam=-1.0)
        with pytest.raises(ValueError):
            det("2001:db8::/32", lam=-0.5)

    def test_near_miss_scores_zero(self):
        # shares all but the last prefix nybble
        d = det("2001:db8:aa00::/56")
        assert alias_score(d, parse_address("2001:db8:aa01::1")) == 0.0
        assert alias_score(d, parse_address("2001:db8:aa00::1")) == 10.0

    def test_from_file(self, tmp_path):
        path = tmp_path / "aliased.txt"
        path.write_text("# aliased regions\n2001:db8:f::/48\n\n2001:db8:e::/48\n")
        d = AliasDetector.from_file(str(path), lam=3.0)
        assert alias_score(d, parse_address("2001:db8:e::9")) == 3.0


class TestFilter:
    def test_partition_and_order(self):
        d = det("2001:db8:f::/48")
        inside = [parse_address("2001:db8:f::1"), parse_address("2001:db8:f::2")]
        outside = [parse_address("2001:db8:a::1"), parse_address("2001:db8:b::1")]
        mixed = [outside[0], inside[0], outside[1], inside[1]]
        kept, removed = filter_aliased(d, mixed)
        assert kept == outside
        assert removed == inside

    def test_idempotent(self):
        d = det("2001:db8:f::/48")
        addrs = [parse_address("2001:db8:f::1"), parse_address("2001:db8:a::1")]
        kept, _ = filter_aliased(d, addrs)
        again, removed = filter_aliased(d, kept)
        assert again == kept
        assert removed == []

    def test_empty_input(self):
        kept, removed = filter_aliased(det("2001:db8::/32"), [])
        assert kept == [] and removed == []

    def test_empty_detector_keeps_everything(self):
        addrs = [parse_address("2001:db8:f::1"), parse_address("::1")]
        kept, removed = filter_aliased(AliasDetector(), addrs)
        assert kept == addrs and removed == []
