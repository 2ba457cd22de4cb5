"""Deterministic training-mixture construction.

A mixture is domain records (each source optionally repeated) plus
``round(r * D)`` general records drawn without replacement across weighted
general sources, all shuffled by a seeded generator.  Everything downstream
of the manifest is a pure function of (manifest, source bytes): same seed,
same stream, byte for byte.

Counting is per record, not per token; MixReport says so explicitly.
"""

from __future__ import annotations

import dataclasses
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .errors import InsufficientDataError, InvalidConfigError, RecordIOError
from .schema import Envelope, read_envelopes
from .seeding import GENERATOR_NAME, derive_seed


@dataclass(frozen=True)
class DomainSource:
    source_id: str
    path: str
    repeat: int = 1

    def __post_init__(self) -> None:
        if not self.source_id:
            raise InvalidConfigError("domain source id must be non-empty")
        if self.repeat < 1:
            raise InvalidConfigError(f"repeat must be >= 1, got {self.repeat} for {self.source_id!r}")


@dataclass(frozen=True)
class GeneralSource:
    source_id: str
    path: str
    weight: float = 1.0

    def __post_init__(self) -> None:
        if not self.source_id:
            raise InvalidConfigError("general source id must be non-empty")
        if self.weight < 0:
            raise InvalidConfigError(f"weight must be >= 0, got {self.weight} for {self.source_id!r}")


@dataclass(frozen=True)
class MixManifest:
    domain_sources: tuple[DomainSource, ...]
    general_sources: tuple[GeneralSource, ...]
    ratio_r: float
    seed: int
    allow_replacement: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "domain_sources", tuple(self.domain_sources))
        object.__setattr__(self, "general_sources", tuple(self.general_sources))
        if self.ratio_r < 0:
            raise InvalidConfigError(f"ratio_r must be >= 0, got {self.ratio_r}")
        if not self.domain_sources:
            raise InvalidConfigError("at least one domain source is required")
        ids = [s.source_id for s in self.domain_sources] + [s.source_id for s in self.general_sources]
        if len(set(ids)) != len(ids):
            raise InvalidConfigError("source ids must be unique across the manifest")
        if self.ratio_r > 0:
            if not self.general_sources:
                raise InvalidConfigError("ratio_r > 0 requires at least one general source")
            if sum(s.weight for s in self.general_sources) <= 0:
                raise InvalidConfigError("general source weights must sum > 0 when ratio_r > 0")


@dataclass(frozen=True)
class SourceStat:
    source_id: str
    kind: str  # "domain" or "general"
    available: int
    requested: int
    emitted: int


@dataclass(frozen=True)
class MixReport:
    sources: tuple[SourceStat, ...]
    domain_total: int
    general_total: int
    requested_general: int
    ratio_r: float
    realized_ratio: float
    seed: int
    generator: str = GENERATOR_NAME
    counting: str = "records"

    def to_dict(self) -> dict:
        return {
            "sources": [dataclasses.asdict(s) for s in self.sources],
            "domain_total": self.domain_total,
            "general_total": self.general_total,
            "requested_general": self.requested_general,
            "ratio_r": self.ratio_r,
            "realized_ratio": self.realized_ratio,
            "seed": self.seed,
            "generator": self.generator,
            "counting": self.counting,
        }


def parse_ratio(text: str | float | int) -> float:
    """Accept a general:domain ratio as "a:b" or a plain decimal."""
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        value = float(text)
        if value < 0:
            raise InvalidConfigError(f"ratio must be >= 0, got {value}")
        return value
    raw = str(text).strip()
    try:
        if ":" in raw:
            general, domain = raw.split(":")
            numerator, denominator = float(general), float(domain)
            if denominator <= 0:
                raise InvalidConfigError(f"ratio {raw!r} has non-positive domain part")
            value = numerator / denominator
        else:
            value = float(raw)
    except ValueError:
        raise InvalidConfigError(f"cannot parse ratio {raw!r}") from None
    if value < 0:
        raise InvalidConfigError(f"ratio must be >= 0, got {value}")
    return value


def _source_from_dict(entry: dict, kind: str) -> DomainSource | GeneralSource:
    allowed = {"id", "path", "repeat"} if kind == "domain" else {"id", "path", "weight"}
    unknown = set(entry) - allowed
    if unknown:
        raise InvalidConfigError(f"unknown {kind} source keys: {sorted(unknown)}")
    for key in ("id", "path"):
        if key not in entry:
            raise InvalidConfigError(f"{kind} source missing {key!r}")
    if kind == "domain":
        return DomainSource(entry["id"], entry["path"], int(entry.get("repeat", 1)))
    return GeneralSource(entry["id"], entry["path"], float(entry.get("weight", 1.0)))


def manifest_from_dict(obj: dict) -> MixManifest:
    allowed = {"domain_sources", "general_sources", "ratio", "seed", "allow_replacement"}
    unknown = set(obj) - allowed
    if unknown:
        raise InvalidConfigError(f"unknown manifest keys: {sorted(unknown)}")
    for key in ("domain_sources", "ratio", "seed"):
        if key not in obj:
            raise InvalidConfigError(f"manifest missing {key!r}")
    return MixManifest(
        domain_sources=tuple(_source_from_dict(e, "domain") for e in obj["domain_sources"]),
        general_sources=tuple(_source_from_dict(e, "general") for e in obj.get("general_sources", [])),
        ratio_r=parse_ratio(obj["ratio"]),
        seed=int(obj["seed"]),
        allow_replacement=bool(obj.get("allow_replacement", False)),
    )


def load_manifest(path: str | Path) -> MixManifest:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise RecordIOError(f"cannot read manifest {path}: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidConfigError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise InvalidConfigError(f"manifest {path} must be a JSON object")
    return manifest_from_dict(obj)


def _round_half_away(value: float) -> int:
    if value >= 0:
        return math.floor(value + 0.5)
    return -math.floor(-value + 0.5)


def repeat_dataset(records: Sequence[Envelope], k: int) -> list[Envelope]:
    """Emit every record k times, pass by pass (a, b, c, a, b, c).

    With k > 1 each copy carries a ``repeat_index`` meta tag ("0".."k-1");
    k = 1 is the identity and leaves records untagged.
    """
    if k < 1:
        raise InvalidConfigError(f"repeat count must be >= 1, got {k}")
    if k == 1:
        return list(records)
    out: list[Envelope] = []
    for pass_index in range(k):
        for rec in records:
            out.append(dataclasses.replace(rec, meta={**rec.meta, "repeat_index": str(pass_index)}))
    return out


def _largest_remainder_quotas(total: int, weights: Sequence[float]) -> list[int]:
    """Split ``total`` proportionally to ``weights``; remainders break ties by order."""
    weight_sum = sum(weights)
    shares = [total * w / weight_sum for w in weights]
    quotas = [math.floor(s) for s in shares]
    leftover = total - sum(quotas)
    # Stable sort: equal remainders are served in manifest order.
    by_remainder = sorted(range(len(weights)), key=lambda i: shares[i] - quotas[i], reverse=True)
    for i in by_remainder[:leftover]:
        quotas[i] += 1
    return quotas


def _draw(pool: Sequence[Envelope], quota: int, rng: random.Random, source: GeneralSource,
          allow_replacement: bool) -> list[Envelope]:
    if quota <= len(pool):
        return rng.sample(list(pool), quota)
    if not allow_replacement:
        raise InsufficientDataError(
            f"needs {quota} records but only {len(pool)} available",
            source_id=source.source_id,
        )
    # Replacement mode: whole-pool passes, then a sampled remainder.
    out: list[Envelope] = []
    for _ in range(quota // len(pool)):
        out.extend(pool)
    out.extend(rng.sample(list(pool), quota % len(pool)))
    return out


Loader = Callable[[str], list[Envelope]]


def mix(manifest: MixManifest, loader: Loader = read_envelopes) -> tuple[list[Envelope], MixReport]:
    """Build the shuffled mixture stream and its report.

    Domain records are all emitted (repeated per source); the general quota
    round(r * D) is split across general sources by weight with
    largest-remainder correction, then sampled per source without
    replacement (replacement only if the manifest allows it).  Per-source
    sampling and the final shuffle use seeds derived from the manifest seed,
    so the stream depends only on manifest + source contents.
    """
    stats: list[SourceStat] = []
    stream: list[Envelope] = []
    for src in manifest.domain_sources:
        pool = loader(src.path)
        emitted = repeat_dataset(pool, src.repeat)
        stream.extend(emitted)
        stats.append(SourceStat(src.source_id, "domain", len(pool), len(pool) * src.repeat, len(emitted)))
    domain_total = len(stream)

    requested_general = _round_half_away(manifest.ratio_r * domain_total)
    general_total = 0
    if requested_general > 0:
        weighted = [s for s in manifest.general_sources if s.weight > 0]
        zero_weighted = [s for s in manifest.general_sources if s.weight == 0]
        quotas = _largest_remainder_quotas(requested_general, [s.weight for s in weighted])
        quota_by_id = {s.source_id: q for s, q in zip(weighted, quotas)}
        quota_by_id.update({s.source_id: 0 for s in zero_weighted})
        for src in manifest.general_sources:
            pool = loader(src.path)
            quota = quota_by_id[src.source_id]
            rng = random.Random(derive_seed(manifest.seed, "sample", src.source_id))
            chosen = _draw(pool, quota, rng, src, manifest.allow_replacement) if quota else []
            stream.extend(chosen)
            general_total += len(chosen)
            stats.append(SourceStat(src.source_id, "general", len(pool), quota, len(chosen)))
    else:
        for src in manifest.general_sources:
            pool = loader(src.path)
            stats.append(SourceStat(src.source_id, "general", len(pool), 0, 0))

    random.Random(derive_seed(manifest.seed, "shuffle")).shuffle(stream)
    report = MixReport(
        sources=tuple(stats),
        domain_total=domain_total,
        general_total=general_total,
        requested_general=requested_general,
        ratio_r=manifest.ratio_r,
        realized_ratio=general_total / domain_total if domain_total else 0.0,
        seed=manifest.seed,
    )
    return stream, report
