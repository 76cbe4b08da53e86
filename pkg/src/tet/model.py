"""Token sequences, the local/global/context encoding passes, and type scores.

Sequence shapes (token level):

* type-class local:   [CLS, r_class, type]            one row per neighbor
* relational local:   [CLS, r, tail]                  one row per neighbor
* global:             [CLS, r_c1, c1, ..., r_m, f_m]  one long row
* relation enhance:   [r, r_c1, c1, ..., r_cl, cl]    starts with the relation
* context:            [CLS, entity, local cls outputs...]

All score paths share one linear head: score = W @ relu(vec) + b over the
type inventory.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import KnowledgeGraph
from .optim import ParameterStore
from .transformer import EncoderConfig, EncoderParams, cls_of, encode, init_encoder_params

__all__ = [
    "ModelConfig",
    "TokenVocabulary",
    "SequenceBatch",
    "ScoreSet",
    "build_local_sequences",
    "build_global_sequence",
    "build_enhancement_sequence",
    "TetModel",
]


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 100
    num_layers: int = 3
    num_heads: int = 4
    ffn_dim: int = 480
    dropout: float = 0.2
    activation: str = "relu"
    use_local: bool = True
    use_global: bool = True
    use_context: bool = True
    use_class: bool = True
    rse_mode: str = "off"  # off | avg | max | min
    rse_type_cap: int = 3

    def __post_init__(self):
        if self.rse_mode not in ("off", "avg", "max", "min"):
            raise ValueError(f"unknown rse mode: {self.rse_mode!r}")
        if not (self.use_local or self.use_global or self.use_context):
            raise ValueError("at least one of local/global/context must be enabled")


class TokenVocabulary:
    """Unified token-id space: [CLS], [PAD], then entities, relations, types."""

    CLS = 0
    PAD = 1

    def __init__(self, num_entities: int, num_relations: int, num_types: int):
        self.num_entities = num_entities
        self.num_relations = num_relations
        self.num_types = num_types
        self.entity_offset = 2
        self.relation_offset = 2 + num_entities
        self.type_offset = 2 + num_entities + num_relations
        self.size = 2 + num_entities + num_relations + num_types

    def entity_token(self, e: int) -> int:
        return self.entity_offset + e

    def relation_token(self, r: int) -> int:
        return self.relation_offset + r

    def type_token(self, t: int) -> int:
        return self.type_offset + t

    def kind_of(self, token: int) -> str:
        if token == self.CLS:
            return "cls"
        if token == self.PAD:
            return "pad"
        if token < self.relation_offset:
            return "entity"
        if token < self.type_offset:
            return "relation"
        if token < self.size:
            return "type"
        raise ValueError(f"token id {token} out of range")


@dataclass(frozen=True)
class SequenceBatch:
    token_ids: np.ndarray  # (batch, seq) int64
    positions: np.ndarray  # (batch, seq) int64
    mask: np.ndarray  # (batch, seq) bool
    kind: str

    @staticmethod
    def from_rows(rows: list[list[int]], kind: str, pad_id: int = TokenVocabulary.PAD) -> "SequenceBatch":
        if not rows:
            return SequenceBatch(
                token_ids=np.zeros((0, 0), dtype=np.int64),
                positions=np.zeros((0, 0), dtype=np.int64),
                mask=np.zeros((0, 0), dtype=bool),
                kind=kind,
            )
        width = max(len(r) for r in rows)
        ids = np.full((len(rows), width), pad_id, dtype=np.int64)
        pos = np.zeros((len(rows), width), dtype=np.int64)
        mask = np.zeros((len(rows), width), dtype=bool)
        for i, row in enumerate(rows):
            ids[i, : len(row)] = row
            pos[i, : len(row)] = np.arange(len(row))
            mask[i, : len(row)] = True
        return SequenceBatch(token_ids=ids, positions=pos, mask=mask, kind=kind)

    @property
    def batch_size(self) -> int:
        return self.token_ids.shape[0]


@dataclass
class ScoreSet:
    """Per-source type-score vectors stacked as rows of shape (sources, types)."""

    sources: Tensor
    labels: tuple[str, ...]

    @property
    def source_count(self) -> int:
        return len(self.labels)


def _pair_tokens(tokens: TokenVocabulary, rel: int, tail_token: int, use_class: bool, has_type_rel: int) -> list[int]:
    r = rel if use_class else has_type_rel
    return [tokens.relation_token(r), tail_token]


def build_local_sequences(
    tokens: TokenVocabulary,
    typeclass_pairs: list[tuple[int, int]],
    relational_pairs: list[tuple[int, int]],
    *,
    use_class: bool = True,
    has_type_rel: int = 0,
) -> tuple[SequenceBatch, SequenceBatch]:
    """One 3-token row per neighbor; class relations rewritten to has_type
    when class rewriting is off."""
    tc_rows = [
        [tokens.CLS] + _pair_tokens(tokens, r, tokens.type_token(t), use_class, has_type_rel)
        for r, t in typeclass_pairs
    ]
    rel_rows = [
        [tokens.CLS, tokens.relation_token(r), tokens.entity_token(f)] for r, f in relational_pairs
    ]
    return (
        SequenceBatch.from_rows(tc_rows, "typeclass-local"),
        SequenceBatch.from_rows(rel_rows, "relational-local"),
    )


def build_global_sequence(
    tokens: TokenVocabulary,
    typeclass_pairs: list[tuple[int, int]],
    relational_pairs: list[tuple[int, int]],
    *,
    use_class: bool = True,
    has_type_rel: int = 0,
    fallback_entity: int | None = None,
) -> SequenceBatch:
    """Single row [CLS, tc pairs..., relational pairs...]; an entity with no
    neighbors at all falls back to [CLS, entity]."""
    row = [tokens.CLS]
    for r, t in typeclass_pairs:
        row += _pair_tokens(tokens, r, tokens.type_token(t), use_class, has_type_rel)
    for r, f in relational_pairs:
        row += [tokens.relation_token(r), tokens.entity_token(f)]
    if len(row) == 1:
        if fallback_entity is None:
            raise ValueError("global sequence needs neighbors or a fallback entity")
        row.append(tokens.entity_token(fallback_entity))
    return SequenceBatch.from_rows([row], "global")


def build_enhancement_sequence(
    tokens: TokenVocabulary,
    rel: int,
    typeclass_pairs: list[tuple[int, int]],
    *,
    use_class: bool = True,
    has_type_rel: int = 0,
) -> SequenceBatch:
    """Row [r, r_c1, c1, ...]; starts with the relation token, no [CLS]."""
    row = [tokens.relation_token(rel)]
    for r, t in typeclass_pairs:
        row += _pair_tokens(tokens, r, tokens.type_token(t), use_class, has_type_rel)
    return SequenceBatch.from_rows([row], "relation-enhancement")


_POS_TABLE = {
    "typeclass-local": "pos_typeclass_local",
    "relational-local": "pos_relational_local",
    "global": "pos_global",
    "relation-enhancement": "pos_rse",
    "context": "pos_context",
}


class TetModel:
    """Parameter container plus the full neighbor-to-scores forward pass."""

    def __init__(
        self,
        kg: KnowledgeGraph,
        cfg: ModelConfig,
        *,
        dtype=np.float32,
        seed: int = 0,
    ):
        self.cfg = cfg
        self.num_types = kg.num_types
        self.tokens = TokenVocabulary(
            num_entities=kg.num_entities,
            num_relations=len(kg.vocab.relations),
            num_types=kg.num_types,
        )
        max_tc = max((len(p) for p in kg.neighbors.typeclass), default=0)
        max_rel = max((len(p) for p in kg.neighbors.relational), default=0)
        self.max_global_len = max(2, 1 + 2 * (max_tc + max_rel))
        self.max_context_len = 2 + max_tc + max_rel
        self.max_rse_len = 1 + 2 * cfg.rse_type_cap
        self.encoder_cfg = EncoderConfig(
            num_layers=cfg.num_layers,
            num_heads=cfg.num_heads,
            model_dim=cfg.dim,
            ffn_dim=cfg.ffn_dim,
            dropout=cfg.dropout,
            max_seq_len=max(3, self.max_global_len, self.max_context_len, self.max_rse_len),
            activation=cfg.activation,
        )

        rng = np.random.default_rng(seed)
        store = ParameterStore(dtype)
        d = cfg.dim
        store.add("word_emb", rng.normal(0.0, 0.02, size=(self.tokens.size, d)))
        store.add("pos_typeclass_local", rng.normal(0.0, 0.02, size=(3, d)))
        store.add("pos_relational_local", rng.normal(0.0, 0.02, size=(3, d)))
        store.add("pos_global", rng.normal(0.0, 0.02, size=(self.max_global_len, d)))
        if cfg.use_context:
            store.add("pos_context", rng.normal(0.0, 0.02, size=(self.max_context_len, d)))
        if cfg.rse_mode != "off":
            store.add("pos_rse", rng.normal(0.0, 0.02, size=(self.max_rse_len, d)))

        self.encoders: dict[str, EncoderParams] = {}
        if cfg.use_local or cfg.use_context:
            self.encoders["local"] = init_encoder_params(store, "enc_local", self.encoder_cfg, rng)
        if cfg.use_global:
            self.encoders["global"] = init_encoder_params(store, "enc_global", self.encoder_cfg, rng)
        if cfg.use_context:
            self.encoders["context"] = init_encoder_params(store, "enc_context", self.encoder_cfg, rng)
        if cfg.rse_mode != "off":
            self.encoders["rse"] = init_encoder_params(store, "enc_rse", self.encoder_cfg, rng)

        bound = np.sqrt(6.0 / (kg.num_types + d))
        store.add("head_w", rng.uniform(-bound, bound, size=(kg.num_types, d)))
        store.add("head_b", np.zeros(kg.num_types))
        self.store = store

    # -- embedding helpers -------------------------------------------------

    def embed(self, batch: SequenceBatch) -> Tensor:
        word = ad.embedding(self.store["word_emb"], batch.token_ids)
        pos = ad.embedding(self.store[_POS_TABLE[batch.kind]], batch.positions)
        return ad.add(word, pos)

    def _word_vec(self, token: int) -> Tensor:
        return ad.getitem(self.store["word_emb"], token)

    def _positions(self, kind: str, length: int) -> Tensor:
        return ad.getitem(self.store[_POS_TABLE[kind]], slice(0, length))

    # -- score head --------------------------------------------------------

    def head_scores(self, vecs: Tensor) -> Tensor:
        """(k, d) cls rows -> (k, L) scores: W @ relu(row) + b per row."""
        w_t = ad.transpose(self.store["head_w"], (1, 0))
        return ad.add(ad.matmul(ad.relu(vecs), w_t), self.store["head_b"])

    def local_scores(self, local_cls: Tensor) -> Tensor:
        """Score matrix in column layout (L, n+m); type-class columns first."""
        return ad.transpose(self.head_scores(local_cls), (1, 0))

    def global_score(self, g_cls: Tensor) -> Tensor:
        """(1, d) global cls -> (L,) score vector."""
        return ad.reshape(self.head_scores(g_cls), (self.num_types,))

    def context_score(self, c_cls: Tensor) -> Tensor:
        """(1, d) context cls -> (L,) score vector."""
        return ad.reshape(self.head_scores(c_cls), (self.num_types,))

    # -- relation semantic enhancement --------------------------------------

    def enhance_relation(
        self,
        kg: KnowledgeGraph,
        rel: int,
        tail: int,
        *,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """Replacement vector for ``rel``'s word embedding inside one
        relational sequence, aggregated over the encoded typed-neighbor
        sequence of ``tail``; plain embedding when ``tail`` has no typed
        neighbors."""
        vec = self._enhanced_vec(kg, rel, tail, training, rng)
        return vec if vec is not None else self._word_vec(self.tokens.relation_token(rel))

    def _enhanced_vec(self, kg, rel, tail, training, rng) -> Tensor | None:
        if self.cfg.rse_mode == "off":
            return None
        pairs = list(kg.neighbors.typeclass[tail][: self.cfg.rse_type_cap])
        if not pairs:
            return None
        batch = build_enhancement_sequence(
            self.tokens, rel, pairs, use_class=self.cfg.use_class, has_type_rel=kg.vocab.has_type_id
        )
        out = encode(
            self.embed(batch), batch.mask, self.encoder_cfg, self.encoders["rse"],
            training=training, rng=rng,
        )
        # relation output plus the type-token outputs: rows 0, 2, 4, ...
        picked = ad.getitem(out, (0, slice(0, None, 2)))
        if self.cfg.rse_mode == "avg":
            return ad.mean(picked, axis=0)
        if self.cfg.rse_mode == "max":
            return ad.reduce_max(picked, axis=0)
        return ad.reduce_min(picked, axis=0)

    # -- forward -----------------------------------------------------------

    def _embed_relational_rows(self, kg, relational_pairs, enhanced, kind: str):
        """(m, 3, d) inputs for relational-local rows, honoring enhancement."""
        cls_vec = self._word_vec(self.tokens.CLS)
        rows = []
        for (r, f), enh in zip(relational_pairs, enhanced):
            rel_vec = enh if enh is not None else self._word_vec(self.tokens.relation_token(r))
            rows.append(ad.stack([cls_vec, rel_vec, self._word_vec(self.tokens.entity_token(f))]))
        return ad.add(ad.stack(rows), self._positions(kind, 3))

    def _embed_global_row(self, kg, typeclass_pairs, relational_pairs, enhanced, entity):
        row_vecs = [self._word_vec(self.tokens.CLS)]
        for r, t in typeclass_pairs:
            rel = r if self.cfg.use_class else kg.vocab.has_type_id
            row_vecs.append(self._word_vec(self.tokens.relation_token(rel)))
            row_vecs.append(self._word_vec(self.tokens.type_token(t)))
        for (r, f), enh in zip(relational_pairs, enhanced):
            row_vecs.append(enh if enh is not None else self._word_vec(self.tokens.relation_token(r)))
            row_vecs.append(self._word_vec(self.tokens.entity_token(f)))
        if len(row_vecs) == 1:
            row_vecs.append(self._word_vec(self.tokens.entity_token(entity)))
        seq = ad.stack(row_vecs)
        seq = ad.add(seq, self._positions("global", len(row_vecs)))
        return ad.reshape(seq, (1, len(row_vecs), self.cfg.dim))

    def forward_entity(
        self,
        kg: KnowledgeGraph,
        entity: int,
        neighbors: tuple[list[tuple[int, int]], list[tuple[int, int]]],
        *,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> ScoreSet | None:
        """Score one entity from its (sampled or full) neighbors.

        Returns ``None`` when the enabled modules produce no sources (a
        neighborless entity with local-only configuration).
        """
        cfg = self.cfg
        tc_pairs, rel_pairs = neighbors
        n, m = len(tc_pairs), len(rel_pairs)
        has_type_rel = kg.vocab.has_type_id

        enhanced: list[Tensor | None] = [None] * m
        if cfg.rse_mode != "off":
            enhanced = [self._enhanced_vec(kg, r, f, training, rng) for r, f in rel_pairs]
        any_enhanced = any(v is not None for v in enhanced)

        local_cls = None
        if (cfg.use_local or cfg.use_context) and n + m > 0:
            tc_batch, rel_batch = build_local_sequences(
                self.tokens, tc_pairs, rel_pairs, use_class=cfg.use_class, has_type_rel=has_type_rel
            )
            parts = []
            if n:
                parts.append(self.embed(tc_batch))
            if m:
                if any_enhanced:
                    parts.append(self._embed_relational_rows(kg, rel_pairs, enhanced, "relational-local"))
                else:
                    parts.append(self.embed(rel_batch))
            inputs = parts[0] if len(parts) == 1 else ad.concat(parts, axis=0)
            mask = np.ones((n + m, 3), dtype=bool)
            out = encode(inputs, mask, self.encoder_cfg, self.encoders["local"], training=training, rng=rng)
            local_cls = cls_of(out)

        source_blocks: list[Tensor] = []
        labels: list[str] = []

        if cfg.use_local and local_cls is not None:
            source_blocks.append(self.head_scores(local_cls))
            labels += [f"typeclass[{i}]" for i in range(n)]
            labels += [f"relational[{i}]" for i in range(m)]

        if cfg.use_global:
            if any_enhanced:
                g_inputs = self._embed_global_row(kg, tc_pairs, rel_pairs, enhanced, entity)
                g_mask = np.ones((1, g_inputs.shape[1]), dtype=bool)
            else:
                g_batch = build_global_sequence(
                    self.tokens, tc_pairs, rel_pairs,
                    use_class=cfg.use_class, has_type_rel=has_type_rel, fallback_entity=entity,
                )
                g_inputs = self.embed(g_batch)
                g_mask = g_batch.mask
            g_out = encode(g_inputs, g_mask, self.encoder_cfg, self.encoders["global"], training=training, rng=rng)
            source_blocks.append(self.head_scores(cls_of(g_out)))
            labels.append("global")

        if cfg.use_context:
            pieces = [
                ad.reshape(self._word_vec(self.tokens.CLS), (1, cfg.dim)),
                ad.reshape(self._word_vec(self.tokens.entity_token(entity)), (1, cfg.dim)),
            ]
            if local_cls is not None:
                pieces.append(local_cls)
            seq = ad.concat(pieces, axis=0)
            length = seq.shape[0]
            seq = ad.add(seq, self._positions("context", length))
            c_inputs = ad.reshape(seq, (1, length, cfg.dim))
            c_mask = np.ones((1, length), dtype=bool)
            c_out = encode(c_inputs, c_mask, self.encoder_cfg, self.encoders["context"], training=training, rng=rng)
            source_blocks.append(self.head_scores(cls_of(c_out)))
            labels.append("context")

        if not source_blocks:
            return None
        sources = source_blocks[0] if len(source_blocks) == 1 else ad.concat(source_blocks, axis=0)
        return ScoreSet(sources=sources, labels=tuple(labels))

    def all_neighbors(self, kg: KnowledgeGraph, entity: int):
        return list(kg.neighbors.typeclass[entity]), list(kg.neighbors.relational[entity])
