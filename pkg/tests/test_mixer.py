import json
import math
import random
from collections import Counter

import pytest

from vlprep.errors import InsufficientDataError, InvalidConfigError
from vlprep.mixer import (
    DomainSource,
    GeneralSource,
    MixManifest,
    load_manifest,
    manifest_from_dict,
    mix,
    parse_ratio,
    repeat_dataset,
)
from vlprep.schema import Envelope


def envelopes(prefix: str, count: int) -> list[Envelope]:
    return [
        Envelope(
            id=f"{prefix}-{i}",
            task="vqa",
            payload={"images": [], "turns": [["user", "q"], ["assistant", "a"]]},
        )
        for i in range(count)
    ]


def pool_loader(pools: dict[str, list[Envelope]]):
    return lambda path: list(pools[path])


def manifest(domain=100, general=(("gen", 1000, 1.0),), r=0.25, seed=7, repeat=1, allow=False):
    pools = {"dom": envelopes("d", domain)}
    sources = []
    for name, size, weight in general:
        pools[name] = envelopes(name, size)
        sources.append(GeneralSource(name, name, weight))
    m = MixManifest(
        domain_sources=(DomainSource("dom", "dom", repeat),),
        general_sources=tuple(sources),
        ratio_r=r,
        seed=seed,
        allow_replacement=allow,
    )
    return m, pool_loader(pools)


class TestParseRatio:
    def test_colon_form(self):
        assert parse_ratio("1:4") == 0.25
        assert parse_ratio("2:1") == 2.0
        assert parse_ratio("1:1") == 1.0

    def test_decimal_form(self):
        assert parse_ratio("0.25") == 0.25
        assert parse_ratio(0.5) == 0.5
        assert parse_ratio(2) == 2.0

    def test_invalid(self):
        for bad in ("x", "1:0", "-1", -0.5, "1:-2"):
            with pytest.raises(InvalidConfigError):
                parse_ratio(bad)


class TestRepeatDataset:
    def test_identity_at_one(self):
        recs = envelopes("a", 3)
        out = repeat_dataset(recs, 1)
        assert out == recs
        assert all("repeat_index" not in r.meta for r in out)

    def test_three_records_twice(self):
        recs = envelopes("a", 3)
        out = repeat_dataset(recs, 2)
        assert len(out) == 6
        assert Counter(r.id for r in out) == {"a-0": 2, "a-1": 2, "a-2": 2}
        # pass-by-pass interleaving
        assert [r.id for r in out] == ["a-0", "a-1", "a-2", "a-0", "a-1", "a-2"]
        assert [r.meta["repeat_index"] for r in out] == ["0", "0", "0", "1", "1", "1"]

    def test_empty_stream(self):
        assert repeat_dataset([], 5) == []

    def test_k_must_be_positive(self):
        with pytest.raises(InvalidConfigError):
            repeat_dataset(envelopes("a", 1), 0)


class TestQuotaAllocation:
    def test_weights_three_one(self):
        m, loader = manifest(domain=32, general=(("g1", 100, 3.0), ("g2", 100, 1.0)), r=0.25)
        _, report = mix(m, loader)
        by_id = {s.source_id: s for s in report.sources}
        assert by_id["g1"].emitted == 6
        assert by_id["g2"].emitted == 2

    def test_largest_remainder_rounding(self):
        # quota 5 split 1:1:1 -> shares 1.67 each -> 2,2,1 by remainder then order
        m, loader = manifest(
            domain=5, general=(("g1", 10, 1.0), ("g2", 10, 1.0), ("g3", 10, 1.0)), r=1.0
        )
        _, report = mix(m, loader)
        emitted = [s.emitted for s in report.sources if s.kind == "general"]
        assert emitted == [2, 2, 1]
        assert sum(emitted) == 5

    def test_zero_weight_source_gets_nothing(self):
        m, loader = manifest(domain=10, general=(("g1", 50, 1.0), ("g2", 50, 0.0)), r=1.0)
        _, report = mix(m, loader)
        by_id = {s.source_id: s for s in report.sources}
        assert by_id["g1"].emitted == 10
        assert by_id["g2"].emitted == 0


class TestMix:
    def test_ratio_arithmetic_exact(self):
        for r in (0.0, 0.25, 0.5, 1.0, 2.0):
            for domain in (10, 100, 317):
                m, loader = manifest(domain=domain, r=r)
                stream, report = mix(m, loader)
                expected = math.floor(r * domain + 0.5)
                assert report.requested_general == expected
                assert report.general_total == expected
                assert report.domain_total == domain
                assert len(stream) == domain + expected

    def test_round_half_away_from_zero(self):
        # 0.25 * 10 = 2.5 rounds to 3, not banker's 2
        m, loader = manifest(domain=10, r=0.25)
        _, report = mix(m, loader)
        assert report.general_total == 3

    def test_r_zero_is_shuffled_domain(self):
        m, loader = manifest(domain=50, r=0.0)
        stream, report = mix(m, loader)
        assert report.general_total == 0
        assert sorted(r.id for r in stream) == sorted(f"d-{i}" for i in range(50))
        assert [r.id for r in stream] != [f"d-{i}" for i in range(50)]  # shuffled

    def test_repeat_flows_into_domain_count(self):
        m, loader = manifest(domain=10, r=1.0, repeat=3)
        stream, report = mix(m, loader)
        assert report.domain_total == 30
        assert report.general_total == 30
        counts = Counter(r.id for r in stream if r.id.startswith("d-"))
        assert all(v == 3 for v in counts.values())

    def test_byte_identical_across_runs(self):
        m, loader = manifest(domain=100, r=0.5, seed=99)
        a, report_a = mix(m, loader)
        b, report_b = mix(m, loader)
        assert [r.id for r in a] == [r.id for r in b]
        assert report_a == report_b

    def test_seed_changes_stream(self):
        m1, loader = manifest(domain=100, r=0.5, seed=1)
        m2, _ = manifest(domain=100, r=0.5, seed=2)
        a, _ = mix(m1, loader)
        b, _ = mix(m2, loader)
        assert [r.id for r in a] != [r.id for r in b]

    def test_no_duplicates_without_replacement(self):
        m, loader = manifest(domain=100, general=(("gen", 200, 1.0),), r=1.5)
        stream, _ = mix(m, loader)
        general_ids = [r.id for r in stream if r.id.startswith("gen")]
        assert len(general_ids) == len(set(general_ids)) == 150

    def test_insufficient_pool_names_source(self):
        m, loader = manifest(domain=100, general=(("tiny", 10, 1.0),), r=1.0)
        with pytest.raises(InsufficientDataError) as err:
            mix(m, loader)
        assert "tiny" in str(err.value)

    def test_replacement_mode_cycles_pool(self):
        m, loader = manifest(domain=100, general=(("tiny", 10, 1.0),), r=1.0, allow=True)
        stream, report = mix(m, loader)
        assert report.general_total == 100
        counts = Counter(r.id for r in stream if r.id.startswith("tiny"))
        assert all(v >= 10 for v in counts.values())  # 10 full cycles

    def test_realized_ratio_within_one_record(self):
        rng = random.Random(5)
        for _ in range(50):
            domain = rng.randint(1, 400)
            r = rng.choice([0, 0.1, 0.25, 0.5, 1.0, 1.7])
            m, loader = manifest(domain=domain, general=(("gen", 1000, 1.0),), r=r)
            _, report = mix(m, loader)
            assert abs(report.realized_ratio * domain - r * domain) <= 0.5 + 1e-9

    def test_report_names_generator_and_counting(self):
        m, loader = manifest()
        _, report = mix(m, loader)
        assert report.generator == "mt19937-fisher-yates/1"
        assert report.counting == "records"

    def test_shuffle_uniformity_smoke(self):
        # First-position source-type frequency across seeds within 3 sigma.
        domain, r = 30, 1.0
        trials = 400
        general_first = 0
        for seed in range(trials):
            m, loader = manifest(domain=domain, general=(("gen", 100, 1.0),), r=r, seed=seed)
            stream, _ = mix(m, loader)
            if stream[0].id.startswith("gen"):
                general_first += 1
        p = 0.5
        sigma = math.sqrt(trials * p * (1 - p))
        assert abs(general_first - trials * p) <= 3 * sigma


class TestManifestValidation:
    def test_ratio_requires_weighted_general(self):
        with pytest.raises(InvalidConfigError):
            MixManifest(
                domain_sources=(DomainSource("d", "d"),),
                general_sources=(),
                ratio_r=0.5,
                seed=0,
            )
        with pytest.raises(InvalidConfigError):
            MixManifest(
                domain_sources=(DomainSource("d", "d"),),
                general_sources=(GeneralSource("g", "g", 0.0),),
                ratio_r=0.5,
                seed=0,
            )

    def test_negative_ratio(self):
        with pytest.raises(InvalidConfigError):
            MixManifest(
                domain_sources=(DomainSource("d", "d"),),
                general_sources=(),
                ratio_r=-0.1,
                seed=0,
            )

    def test_duplicate_source_ids(self):
        with pytest.raises(InvalidConfigError):
            MixManifest(
                domain_sources=(DomainSource("x", "a"), DomainSource("x", "b")),
                general_sources=(),
                ratio_r=0.0,
                seed=0,
            )

    def test_repeat_below_one(self):
        with pytest.raises(InvalidConfigError):
            DomainSource("d", "d", repeat=0)

    def test_negative_weight(self):
        with pytest.raises(InvalidConfigError):
            GeneralSource("g", "g", weight=-1.0)


class TestManifestParsing:
    def test_from_dict_ratio_forms(self):
        base = {
            "seed": 3,
            "domain_sources": [{"id": "d", "path": "dom.jsonl"}],
            "general_sources": [{"id": "g", "path": "gen.jsonl", "weight": 2.0}],
        }
        assert manifest_from_dict({**base, "ratio": "1:4"}).ratio_r == 0.25
        assert manifest_from_dict({**base, "ratio": 0.5}).ratio_r == 0.5

    def test_unknown_keys_rejected(self):
        with pytest.raises(InvalidConfigError):
            manifest_from_dict({"seed": 1, "ratio": 0, "domain_sources": [], "typo": 1})
        with pytest.raises(InvalidConfigError):
            manifest_from_dict(
                {
                    "seed": 1,
                    "ratio": 0,
                    "domain_sources": [{"id": "d", "path": "p", "weight": 1}],
                }
            )

    def test_load_manifest_file(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(
            json.dumps(
                {
                    "seed": 11,
                    "ratio": "1:4",
                    "domain_sources": [{"id": "d", "path": "dom.jsonl", "repeat": 2}],
                    "general_sources": [{"id": "g", "path": "gen.jsonl"}],
                }
            )
        )
        m = load_manifest(path)
        assert m.seed == 11 and m.ratio_r == 0.25
        assert m.domain_sources[0].repeat == 2
