"""Sample manifests: TSV parsing, split suites, and protocol validation.

A manifest is a UTF-8 TSV file with one record per line::

    path<TAB>category<TAB>split-tag

Blank lines and lines starting with ``#`` are skipped. Split tags are free
strings; ``train``/``test`` name the two halves of a single split, and
``<name>/train`` / ``<name>/test`` group records into named split pairs.
"""

import enum
from dataclasses import dataclass
from pathlib import Path

from .errors import ManifestError


@dataclass(frozen=True)
class SampleRecord:
    """One manifest line; ``line`` is the 1-based source line number."""

    path: str
    category: str
    split: str
    line: int


@dataclass(frozen=True)
class SampleManifest:
    """Parsed manifest with a deterministic category index.

    Categories are indexed lexicographically, so the index depends only on
    the set of category names, not on record order.
    """

    records: tuple
    source: str = "<memory>"

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if not self.records:
            raise ManifestError(f"{self.source}: manifest has no records")
        seen = {}
        for rec in self.records:
            key = (rec.path, rec.split)
            if key in seen:
                raise ManifestError(
                    f"{self.source}:{rec.line}: duplicate path {rec.path!r} in "
                    f"split {rec.split!r} (first seen on line {seen[key]})"
                )
            seen[key] = rec.line

    @property
    def categories(self) -> tuple:
        return tuple(sorted({r.category for r in self.records}))

    def category_index(self) -> dict:
        return {name: k for k, name in enumerate(self.categories)}

    @property
    def split_tags(self) -> tuple:
        return tuple(sorted({r.split for r in self.records}))

    def subset(self, split: str) -> tuple:
        """Records carrying one split tag, in file order."""
        return tuple(r for r in self.records if r.split == split)


def parse_manifest(path) -> SampleManifest:
    """Parse a TSV manifest file, reporting errors with line numbers."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise ManifestError(f"{path}: not valid UTF-8: {exc}") from exc

    records = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = raw.split("\t")
        if len(fields) != 3:
            raise ManifestError(
                f"{path}:{lineno}: expected 3 tab-separated fields "
                f"(path, category, split), got {len(fields)}"
            )
        sample, category, split = (f.strip() for f in fields)
        if not sample or not category or not split:
            raise ManifestError(f"{path}:{lineno}: empty field")
        records.append(SampleRecord(sample, category, split, lineno))
    if not records:
        raise ManifestError(f"{path}: manifest has no records")
    return SampleManifest(tuple(records), source=str(path))


@dataclass(frozen=True)
class SplitPair:
    """One named train/test partition."""

    name: str
    train: tuple
    test: tuple

    def __post_init__(self):
        overlap = {r.path for r in self.train} & {r.path for r in self.test}
        if overlap:
            sample = sorted(overlap)[0]
            raise ManifestError(
                f"split pair {self.name!r}: train and test share "
                f"{len(overlap)} path(s), e.g. {sample!r}"
            )


@dataclass(frozen=True)
class SplitSuite:
    """Named train/test pairs plus the suite-wide category index."""

    pairs: tuple
    categories: tuple

    def __post_init__(self):
        if not self.pairs:
            raise ManifestError("split suite has no train/test pairs")

    def category_index(self) -> dict:
        return {name: k for k, name in enumerate(self.categories)}

    @classmethod
    def from_manifest(cls, manifest: SampleManifest) -> "SplitSuite":
        """Group split tags into pairs.

        ``train``/``test`` form the pair named ``default``; ``X/train`` and
        ``X/test`` form the pair named ``X``. Any other tag is an error.
        """
        halves = {}
        for tag in manifest.split_tags:
            if tag in ("train", "test"):
                pair, role = "default", tag
            elif tag.endswith("/train") or tag.endswith("/test"):
                pair, _, role = tag.rpartition("/")
            else:
                raise ManifestError(
                    f"split tag {tag!r} is neither train/test nor "
                    f"<name>/train|test"
                )
            halves.setdefault(pair, {})[role] = manifest.subset(tag)
        pairs = []
        for name in sorted(halves):
            roles = halves[name]
            missing = {"train", "test"} - set(roles)
            if missing:
                raise ManifestError(
                    f"split pair {name!r} is missing its {missing.pop()} half"
                )
            pairs.append(SplitPair(name, roles["train"], roles["test"]))
        return cls(tuple(pairs), manifest.categories)


class Protocol(enum.Enum):
    """Per-category count conventions the suite can be checked against."""

    MIT67 = "mit67"
    SUN397 = "sun397"
    FREE = "free"


#: (category count, train per category, test per category, pair count)
_PROTOCOL_SHAPES = {
    Protocol.MIT67: (67, 80, 20, 1),
    Protocol.SUN397: (397, 50, 50, 10),
}


@dataclass(frozen=True)
class ProtocolReport:
    """Validation outcome; ``violations`` is empty for a conforming suite."""

    protocol: Protocol
    violations: tuple
    total_slots: int

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_protocol(subject, protocol: Protocol) -> ProtocolReport:
    """Check a manifest or suite against a split protocol.

    Violations are reported, not raised, so a partially-built manifest can
    still be inspected. ``total_slots`` counts every (record, pair) slot.
    """
    suite = subject
    if isinstance(subject, SampleManifest):
        suite = SplitSuite.from_manifest(subject)

    total = sum(len(p.train) + len(p.test) for p in suite.pairs)
    if protocol is Protocol.FREE:
        return ProtocolReport(protocol, (), total)

    want_cats, want_train, want_test, want_pairs = _PROTOCOL_SHAPES[protocol]
    violations = []
    if len(suite.pairs) != want_pairs:
        violations.append(
            f"expected {want_pairs} split pair(s), found {len(suite.pairs)}"
        )
    if len(suite.categories) != want_cats:
        violations.append(
            f"expected {want_cats} categories, found {len(suite.categories)}"
        )
    for pair in suite.pairs:
        for role, records, want in (
            ("train", pair.train, want_train),
            ("test", pair.test, want_test),
        ):
            counts = {}
            for rec in records:
                counts[rec.category] = counts.get(rec.category, 0) + 1
            for category in suite.categories:
                got = counts.get(category, 0)
                if got != want:
                    violations.append(
                        f"pair {pair.name!r} {role}: category {category!r} "
                        f"has {got} images, expected {want}"
                    )
    return ProtocolReport(protocol, tuple(violations), total)
