"""Entity-typing dataset loading, vocabularies, class rewriting, neighbor indexing.

File formats (UTF-8, tab-separated, no header):

* ``train_triples.txt`` -- one ``head<TAB>relation<TAB>tail`` per line
* ``{train,valid,test}_tuples.txt`` -- one ``entity<TAB>type`` per line
* ``classmap.tsv`` (optional) -- one ``type<TAB>class`` per line, overriding
  the class-extraction rule

The relation table is laid out as ``[dataset relations | inverse relations |
has_type | class relations]`` so class-relation ids never collide with
dataset relation ids and inverse ids are computable by offset.
"""

from __future__ import annotations

import hashlib
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np

__all__ = [
    "DatasetError",
    "ParseError",
    "LabelTable",
    "Vocabularies",
    "Triple",
    "TypeAssertion",
    "ClassMap",
    "NeighborIndex",
    "KnowledgeGraph",
    "LoadOptions",
    "class_label_for",
    "extract_classes",
    "build_kg",
    "load_dataset",
    "build_neighbor_index",
    "sample_neighbors",
    "drop_neighbors",
    "positive_label_row",
]

SPLITS = ("train", "valid", "test")

HAS_TYPE_LABEL = "has_type"
INVERSE_PREFIX = "inverse:"
CLASS_REL_PREFIX = "class:"


class DatasetError(Exception):
    """Dataset files missing, inconsistent, or referencing unknown labels."""


class ParseError(DatasetError):
    """Malformed line in a dataset file; message carries file and line number."""


class LabelTable:
    """Bijective label <-> dense-id table."""

    def __init__(self, labels: Sequence[str]):
        self._labels = tuple(labels)
        self._ids = {lab: i for i, lab in enumerate(self._labels)}
        if len(self._ids) != len(self._labels):
            raise DatasetError("duplicate labels in table")

    def id_of(self, label: str) -> int:
        return self._ids[label]

    def label_of(self, idx: int) -> str:
        return self._labels[idx]

    def __contains__(self, label: str) -> bool:
        return label in self._ids

    def __len__(self) -> int:
        return len(self._labels)

    @property
    def labels(self) -> tuple[str, ...]:
        return self._labels

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for lab in self._labels:
            h.update(lab.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()


@dataclass(frozen=True)
class Vocabularies:
    """Entity/relation/type/class tables plus the relation-table layout."""

    entities: LabelTable
    relations: LabelTable
    types: LabelTable
    classes: LabelTable
    num_dataset_relations: int

    @property
    def has_type_id(self) -> int:
        return 2 * self.num_dataset_relations

    @property
    def class_relation_offset(self) -> int:
        return 2 * self.num_dataset_relations + 1

    def inverse_of(self, rel: int) -> int:
        r = self.num_dataset_relations
        if rel >= 2 * r:
            raise ValueError(f"relation {rel} has no inverse")
        return rel + r if rel < r else rel - r

    def class_relation_id(self, class_id: int) -> int:
        return self.class_relation_offset + class_id

    def fingerprints(self) -> dict[str, str]:
        return {
            "entities": self.entities.fingerprint(),
            "relations": self.relations.fingerprint(),
            "types": self.types.fingerprint(),
            "classes": self.classes.fingerprint(),
        }


@dataclass(frozen=True)
class Triple:
    head: int
    rel: int
    tail: int


@dataclass(frozen=True)
class TypeAssertion:
    entity: int
    type: int
    split: str


@dataclass(frozen=True)
class ClassMap:
    """Total type -> class assignment and each class's membership relation."""

    class_labels: tuple[str, ...]
    type_to_class: tuple[int, ...]
    relation_offset: int | None = None

    @property
    def num_classes(self) -> int:
        return len(self.class_labels)

    def class_of(self, type_id: int) -> int:
        return self.type_to_class[type_id]

    def class_relation(self, class_id: int) -> int:
        if self.relation_offset is None:
            raise ValueError("class relations not registered in a vocabulary yet")
        return self.relation_offset + class_id

    def relation_for_type(self, type_id: int) -> int:
        return self.class_relation(self.type_to_class[type_id])


@dataclass(frozen=True)
class NeighborIndex:
    """Per-entity neighbor lists.

    ``relational[e]`` holds ``(relation_id, entity_id)`` pairs, including
    synthesized inverse edges when they were enabled at build time.
    ``typeclass[e]`` holds ``(class_relation_id, type_id)`` pairs derived from
    train-split assertions only, so valid/test labels never leak in.
    """

    relational: tuple[tuple[tuple[int, int], ...], ...]
    typeclass: tuple[tuple[tuple[int, int], ...], ...]

    @property
    def num_relational_entries(self) -> int:
        return sum(len(lst) for lst in self.relational)


@dataclass(frozen=True)
class LoadOptions:
    include_inverse: bool = True
    class_rule: str = "first-path-segment"
    class_depth: int = 1
    unknown_entities: Literal["reject", "add"] = "reject"


@dataclass(frozen=True)
class KnowledgeGraph:
    vocab: Vocabularies
    triples: tuple[Triple, ...]
    assertions: tuple[TypeAssertion, ...]
    classmap: ClassMap
    neighbors: NeighborIndex
    include_inverse: bool
    types_by_entity: dict[str, dict[int, tuple[int, ...]]] = field(repr=False, default_factory=dict)

    @property
    def num_entities(self) -> int:
        return len(self.vocab.entities)

    @property
    def num_types(self) -> int:
        return len(self.vocab.types)

    def assertions_in(self, split: str) -> list[TypeAssertion]:
        return [a for a in self.assertions if a.split == split]

    def entities_in(self, split: str) -> list[int]:
        return sorted(self.types_by_entity.get(split, {}))

    def types_of(self, e: int, splits: Iterable[str]) -> set[int]:
        out: set[int] = set()
        for split in splits:
            out.update(self.types_by_entity.get(split, {}).get(e, ()))
        return out

    def stats(self) -> dict[str, int]:
        counts = {s: sum(1 for a in self.assertions if a.split == s) for s in SPLITS}
        return {
            "entities": len(self.vocab.entities),
            "relations": self.vocab.num_dataset_relations,
            "types": len(self.vocab.types),
            "clusters": self.classmap.num_classes,
            "train_triples": len(self.triples),
            "train_tuples": counts["train"],
            "valid_tuples": counts["valid"],
            "test_tuples": counts["test"],
        }


# ---------------------------------------------------------------------------
# class extraction


def class_label_for(type_label: str, rule: str = "first-path-segment", depth: int = 1) -> str:
    """Class label of one type label under the given rule."""
    if not type_label:
        raise ParseError("empty type label")
    if rule == "whole-label":
        return type_label
    if rule == "first-path-segment":
        depth = 1
    elif rule != "custom-prefix-depth":
        raise ValueError(f"unknown class rule: {rule!r}")
    segments = [s for s in type_label.split("/") if s]
    if not segments:
        raise ParseError(f"type label has no path segments: {type_label!r}")
    return "/".join(segments[: max(1, depth)])


def extract_classes(type_labels: Sequence[str], rule: str = "first-path-segment", depth: int = 1) -> ClassMap:
    """Assign every type to a class; one class relation slot per class.

    The class-relation ids become concrete once the map is embedded in a
    ``Vocabularies`` (see ``build_kg``), which fills ``relation_offset``.
    """
    per_type = [class_label_for(lab, rule, depth) for lab in type_labels]
    class_labels = tuple(sorted(set(per_type)))
    ids = {lab: i for i, lab in enumerate(class_labels)}
    return ClassMap(class_labels=class_labels, type_to_class=tuple(ids[c] for c in per_type))


# ---------------------------------------------------------------------------
# construction


def _relation_table(dataset_relations: Sequence[str], class_labels: Sequence[str]) -> LabelTable:
    labels = list(dataset_relations)
    labels += [INVERSE_PREFIX + r for r in dataset_relations]
    labels.append(HAS_TYPE_LABEL)
    labels += [CLASS_REL_PREFIX + c for c in class_labels]
    return LabelTable(labels)


def _index_from_entries(
    num_entities: int,
    relational_entries: Iterable[tuple[int, int, int]],
    typeclass_entries: Iterable[tuple[int, int, int]],
) -> NeighborIndex:
    rel: list[list[tuple[int, int]]] = [[] for _ in range(num_entities)]
    tc: list[list[tuple[int, int]]] = [[] for _ in range(num_entities)]
    for e, r, f in relational_entries:
        rel[e].append((r, f))
    for e, r, t in typeclass_entries:
        tc[e].append((r, t))
    return NeighborIndex(
        relational=tuple(tuple(lst) for lst in rel),
        typeclass=tuple(tuple(lst) for lst in tc),
    )


def _relational_entries(vocab: Vocabularies, triples: Sequence[Triple], include_inverse: bool):
    for t in triples:
        yield (t.head, t.rel, t.tail)
    if include_inverse:
        for t in triples:
            yield (t.tail, vocab.inverse_of(t.rel), t.head)


def _typeclass_entries(classmap: ClassMap, assertions: Sequence[TypeAssertion]):
    for a in assertions:
        if a.split == "train":
            yield (a.entity, classmap.relation_for_type(a.type), a.type)


def build_neighbor_index(kg: "KnowledgeGraph", include_inverse: bool) -> NeighborIndex:
    """Rebuild the neighbor index from the graph's triples and train assertions."""
    return _index_from_entries(
        kg.num_entities,
        _relational_entries(kg.vocab, kg.triples, include_inverse),
        _typeclass_entries(kg.classmap, kg.assertions),
    )


def _split_lookup(num_types: int, assertions: Sequence[TypeAssertion]) -> dict[str, dict[int, tuple[int, ...]]]:
    by_split: dict[str, dict[int, list[int]]] = {s: defaultdict(list) for s in SPLITS}
    for a in assertions:
        by_split[a.split][a.entity].append(a.type)
    return {s: {e: tuple(ts) for e, ts in sorted(d.items())} for s, d in by_split.items()}


def build_kg(
    entity_labels: Sequence[str],
    relation_labels: Sequence[str],
    type_labels: Sequence[str],
    triples: Sequence[tuple[str, str, str]],
    tuples_by_split: dict[str, Sequence[tuple[str, str]]],
    options: LoadOptions = LoadOptions(),
    classmap_override: dict[str, str] | None = None,
) -> KnowledgeGraph:
    """Assemble a fully indexed graph from label-level components."""
    entities = LabelTable(sorted(set(entity_labels)))
    dataset_rels = sorted(set(relation_labels))
    types = LabelTable(sorted(set(type_labels)))

    if classmap_override is not None:
        missing = [t for t in types.labels if t not in classmap_override]
        if missing:
            raise DatasetError(f"classmap override misses {len(missing)} types, e.g. {missing[0]!r}")
        per_type = [classmap_override[t] for t in types.labels]
        class_labels = tuple(sorted(set(per_type)))
        ids = {lab: i for i, lab in enumerate(class_labels)}
        cm = ClassMap(class_labels=class_labels, type_to_class=tuple(ids[c] for c in per_type))
    else:
        cm = extract_classes(types.labels, options.class_rule, options.class_depth)

    relations = _relation_table(dataset_rels, cm.class_labels)
    vocab = Vocabularies(
        entities=entities,
        relations=relations,
        types=types,
        classes=LabelTable(cm.class_labels),
        num_dataset_relations=len(dataset_rels),
    )
    cm = ClassMap(cm.class_labels, cm.type_to_class, relation_offset=vocab.class_relation_offset)

    resolved_triples = tuple(
        Triple(entities.id_of(h), relations.id_of(r), entities.id_of(t)) for h, r, t in triples
    )

    assertions: list[TypeAssertion] = []
    for split in SPLITS:
        seen: set[tuple[int, int]] = set()
        for e_lab, t_lab in tuples_by_split.get(split, ()):
            pair = (entities.id_of(e_lab), types.id_of(t_lab))
            if pair in seen:
                continue
            seen.add(pair)
            assertions.append(TypeAssertion(pair[0], pair[1], split))
    assertions_t = tuple(assertions)

    neighbors = _index_from_entries(
        len(entities),
        _relational_entries(vocab, resolved_triples, options.include_inverse),
        _typeclass_entries(cm, assertions_t),
    )
    return KnowledgeGraph(
        vocab=vocab,
        triples=resolved_triples,
        assertions=assertions_t,
        classmap=cm,
        neighbors=neighbors,
        include_inverse=options.include_inverse,
        types_by_entity=_split_lookup(len(types), assertions_t),
    )


# ---------------------------------------------------------------------------
# file loading


def _read_tsv(path: Path, num_fields: int) -> list[tuple[str, ...]]:
    rows: list[tuple[str, ...]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            fields = tuple(line.split("\t"))
            if len(fields) != num_fields or any(not f for f in fields):
                raise ParseError(f"{path}:{lineno}: expected {num_fields} non-empty tab-separated fields")
            rows.append(fields)
    return rows


def load_dataset(directory: str | Path, options: LoadOptions = LoadOptions()) -> KnowledgeGraph:
    """Load a dataset directory into a fully indexed ``KnowledgeGraph``."""
    directory = Path(directory)
    triples_path = directory / "train_triples.txt"
    if not triples_path.is_file():
        raise DatasetError(f"missing train triples file: {triples_path}")
    tuple_paths = {s: directory / f"{s}_tuples.txt" for s in SPLITS}
    for split, path in tuple_paths.items():
        if not path.is_file():
            raise DatasetError(f"missing {split} assertion file: {path}")

    triples = _read_tsv(triples_path, 3)
    tuples_by_split = {s: _read_tsv(p, 2) for s, p in tuple_paths.items()}

    known = {h for h, _, _ in triples} | {t for _, _, t in triples}
    known |= {e for e, _ in tuples_by_split["train"]}
    extra: list[str] = []
    for split in ("valid", "test"):
        unknown = sorted({e for e, _ in tuples_by_split[split] if e not in known})
        if unknown:
            if options.unknown_entities == "reject":
                raise DatasetError(
                    f"{len(unknown)} unknown entities in {split} assertions, e.g. {unknown[0]!r}"
                )
            extra += unknown
            known |= set(unknown)

    type_labels = {t for rows in tuples_by_split.values() for _, t in rows}
    relation_labels = {r for _, r, _ in triples}

    override = None
    classmap_path = directory / "classmap.tsv"
    if classmap_path.is_file():
        override = {t: c for t, c in _read_tsv(classmap_path, 2)}

    return build_kg(
        entity_labels=sorted(known),
        relation_labels=sorted(relation_labels),
        type_labels=sorted(type_labels),
        triples=triples,
        tuples_by_split=tuples_by_split,
        options=options,
        classmap_override=override,
    )


# ---------------------------------------------------------------------------
# sampling / dropping / labels


def sample_neighbors(
    kg: KnowledgeGraph,
    e: int,
    k_type: int,
    k_rel: int,
    rng: np.random.Generator,
) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    """Uniform sample without replacement from each neighbor list of ``e``.

    Everything is returned when fewer neighbors than requested exist;
    deterministic under a fixed generator state.
    """
    if k_type < 0 or k_rel < 0:
        raise ValueError("sample sizes must be >= 0")

    def pick(pairs: tuple[tuple[int, int], ...], k: int) -> list[tuple[int, int]]:
        if len(pairs) <= k:
            return list(pairs)
        idx = rng.choice(len(pairs), size=k, replace=False)
        return [pairs[i] for i in idx]

    return pick(kg.neighbors.typeclass[e], k_type), pick(kg.neighbors.relational[e], k_rel)


def drop_neighbors(
    kg: KnowledgeGraph,
    rate: float,
    mode: Literal["relational-neighbors", "relation-types"],
    rng: np.random.Generator,
) -> KnowledgeGraph:
    """Sparsify the relational structure; type assertions are never touched.

    ``relational-neighbors`` removes ``floor(rate * N)`` directed neighbor
    entries uniformly (the index becomes the authority; ``triples`` keeps the
    raw file contents). ``relation-types`` removes ``floor(rate * |R|)``
    dataset relation labels together with all their triples.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"drop rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return kg

    if mode == "relational-neighbors":
        entries = [(e, r, f) for e, pairs in enumerate(kg.neighbors.relational) for r, f in pairs]
        n_drop = int(rate * len(entries))
        dropped = set(rng.choice(len(entries), size=n_drop, replace=False)) if n_drop else set()
        kept = [ent for i, ent in enumerate(entries) if i not in dropped]
        neighbors = _index_from_entries(
            kg.num_entities, kept, _typeclass_entries(kg.classmap, kg.assertions)
        )
        triples = kg.triples
    elif mode == "relation-types":
        r = kg.vocab.num_dataset_relations
        n_drop = int(rate * r)
        dropped_rels = set(rng.choice(r, size=n_drop, replace=False)) if n_drop else set()
        triples = tuple(t for t in kg.triples if t.rel not in dropped_rels)
        neighbors = _index_from_entries(
            kg.num_entities,
            _relational_entries(kg.vocab, triples, kg.include_inverse),
            _typeclass_entries(kg.classmap, kg.assertions),
        )
    else:
        raise ValueError(f"unknown drop mode: {mode!r}")

    return KnowledgeGraph(
        vocab=kg.vocab,
        triples=triples,
        assertions=kg.assertions,
        classmap=kg.classmap,
        neighbors=neighbors,
        include_inverse=kg.include_inverse,
        types_by_entity=kg.types_by_entity,
    )


def positive_label_row(kg: KnowledgeGraph, e: int, splits: Iterable[str] = ("train",)) -> np.ndarray:
    """0/1 row over all types: bit k set iff (e, k) is asserted in any given split."""
    row = np.zeros(kg.num_types, dtype=np.int8)
    for t in kg.types_of(e, splits):
        row[t] = 1
    return row
