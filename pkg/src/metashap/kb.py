"""Meta-knowledge base of evaluated pipelines.

On disk a KB is a bundle directory::

    records.jsonl        one {"dataset_id", "algorithm_id", "config", "performance"} per line
    meta_features.csv    "# schema=..." line, header row, one row per dataset (first column dataset_id)
    spaces.json          algorithm_id -> ordered list of parameter specs
    manifest.json        optional {"schema_version", "metric"}
"""

from __future__ import annotations

import csv
import json
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Sequence, Tuple, Union

from metashap.errors import LoadError, ValidationError
from metashap.metafeatures import SCHEMA, SCHEMA_VERSION, MetaFeatureVector
from metashap.space import HyperparameterSpace

KB_SCHEMA_VERSION = "kb/v1"
RECORDS_FILE = "records.jsonl"
META_FILE = "meta_features.csv"
SPACES_FILE = "spaces.json"
MANIFEST_FILE = "manifest.json"

PathLike = Union[str, os.PathLike]


@dataclass(frozen=True)
class KBRecord:
    dataset_id: str
    algorithm_id: str
    config: Mapping[str, Any]
    performance: float

    def __post_init__(self) -> None:
        perf = float(self.performance)
        if not 0.0 <= perf <= 1.0:
            raise ValidationError(f"performance {perf} outside [0, 1]")
        object.__setattr__(self, "performance", perf)
        object.__setattr__(self, "config", dict(self.config))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "dataset_id": self.dataset_id,
            "algorithm_id": self.algorithm_id,
            "config": dict(self.config),
            "performance": self.performance,
        }


@dataclass(frozen=True)
class KnowledgeBase:
    records: Tuple[KBRecord, ...] = ()
    meta_registry: Mapping[str, MetaFeatureVector] = field(default_factory=dict)
    spaces: Mapping[str, HyperparameterSpace] = field(default_factory=dict)
    metric: str = "accuracy"

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        for line, rec in enumerate(self.records, start=1):
            _check_record(rec, self.meta_registry, self.spaces, f"record {line}")

    @property
    def size(self) -> int:
        return len(self.records)

    def counts_by_dataset(self, algorithm_id: str = None) -> Dict[str, int]:
        return dict(
            Counter(r.dataset_id for r in self.records if algorithm_id is None or r.algorithm_id == algorithm_id)
        )


def _check_record(
    rec: KBRecord,
    registry: Mapping[str, MetaFeatureVector],
    spaces: Mapping[str, HyperparameterSpace],
    where: str,
) -> None:
    if rec.dataset_id not in registry:
        raise ValidationError(f"{where}: unknown dataset_id {rec.dataset_id!r}")
    if rec.algorithm_id not in spaces:
        raise ValidationError(f"{where}: unknown algorithm_id {rec.algorithm_id!r}")
    try:
        spaces[rec.algorithm_id].validate_config(rec.config)
    except ValidationError as exc:
        raise ValidationError(f"{where}: {exc}") from None


def query(kb: KnowledgeBase, algorithm_id: str, dataset_ids: Iterable[str]) -> List[KBRecord]:
    """Records for ``algorithm_id`` whose dataset is in ``dataset_ids``, in stored order."""
    if algorithm_id not in kb.spaces:
        raise ValidationError(f"unknown algorithm_id {algorithm_id!r}")
    wanted = set(dataset_ids)
    return [r for r in kb.records if r.algorithm_id == algorithm_id and r.dataset_id in wanted]


# ----------------------------------------------------------------------- io


def _read_registry(path: Path) -> Dict[str, MetaFeatureVector]:
    registry: Dict[str, MetaFeatureVector] = {}
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row and not row[0].startswith("#")]
    if not rows:
        return registry
    header = rows[0]
    if tuple(header[1:]) != SCHEMA:
        raise ValidationError(f"{path.name}: header does not match meta-feature schema {SCHEMA_VERSION}")
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValidationError(f"{path.name} row {lineno}: expected {len(header)} cells, got {len(row)}")
        try:
            registry[row[0]] = MetaFeatureVector(tuple(float(v) for v in row[1:]))
        except ValueError as exc:
            raise ValidationError(f"{path.name} row {lineno}: {exc}") from None
    return registry


def write_registry(path: PathLike, registry: Mapping[str, MetaFeatureVector]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={SCHEMA_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("dataset_id",) + SCHEMA)
        for did in sorted(registry):
            w.writerow([did] + [repr(v) for v in registry[did].values])


def load_kb(path: PathLike) -> KnowledgeBase:
    """Load and validate a KB bundle directory."""
    root = Path(path)
    for name in (RECORDS_FILE, META_FILE, SPACES_FILE):
        if not (root / name).is_file():
            raise LoadError(f"KB bundle {root}: missing {name}")
    with open(root / SPACES_FILE) as fh:
        try:
            raw_spaces = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{SPACES_FILE}: {exc}") from None
    spaces = {alg: HyperparameterSpace.from_list(items) for alg, items in raw_spaces.items()}
    registry = _read_registry(root / META_FILE)
    metric = "accuracy"
    if (root / MANIFEST_FILE).is_file():
        with open(root / MANIFEST_FILE) as fh:
            metric = json.load(fh).get("metric", metric)

    records: List[KBRecord] = []
    with open(root / RECORDS_FILE) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{RECORDS_FILE} line {lineno}"
            try:
                d = json.loads(line)
                rec = KBRecord(str(d["dataset_id"]), str(d["algorithm_id"]), d["config"], d["performance"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValidationError(f"{where}: malformed record ({exc})") from None
            except ValidationError as exc:
                raise ValidationError(f"{where}: {exc}") from None
            _check_record(rec, registry, spaces, where)
            records.append(rec)
    return KnowledgeBase(tuple(records), registry, spaces, metric)


def save_kb(kb: KnowledgeBase, path: PathLike) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / RECORDS_FILE, "w") as fh:
        for rec in kb.records:
            fh.write(json.dumps(rec.to_dict()) + "\n")
    write_registry(root / META_FILE, kb.meta_registry)
    with open(root / SPACES_FILE, "w") as fh:
        json.dump({alg: sp.to_list() for alg, sp in kb.spaces.items()}, fh, indent=2)
        fh.write("\n")
    with open(root / MANIFEST_FILE, "w") as fh:
        json.dump({"schema_version": KB_SCHEMA_VERSION, "metric": kb.metric}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def append_records(path: PathLike, records: Sequence[KBRecord]) -> int:
    """Validate ``records`` against the bundle at ``path`` and append them. Returns the new size."""
    kb = load_kb(path)
    for i, rec in enumerate(records, start=1):
        _check_record(rec, kb.meta_registry, kb.spaces, f"new record {i}")
    with open(Path(path) / RECORDS_FILE, "a") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict()) + "\n")
    return kb.size + len(records)


def add_meta_features(path: PathLike, dataset_id: str, vector: MetaFeatureVector) -> None:
    root = Path(path)
    registry = _read_registry(root / META_FILE) if (root / META_FILE).is_file() else {}
    registry[dataset_id] = vector
    write_registry(root / META_FILE, registry)
