"""Question representation stack.

A question is tokenised, contextualised by a small transformer, pooled from
its boundary-marker positions through an FFN, merged with reformulation
embeddings via an order-invariant fusion transformer, and threaded through a
conversation-level recurrence whose hidden vector is the per-turn query
embedding consumed by the topic selector and the policy.

The teacher and the student instantiate this identical structure; the teacher
is frozen once pretrained and the student is regressed onto its outputs.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .data import CLS, SEP, Question
from .errors import ContractError
from .numerics import autograd as ag
from .numerics.layers import (
    Embedding,
    FeedForward,
    LstmCell,
    ParameterSet,
    TransformerLayer,
)


@dataclass
class EncoderConfig:
    token_dim: int = 128
    query_dim: int = 200
    max_len: int = 64
    context_layers: int = 2
    fusion_layers: int = 1
    n_heads: int = 4
    ffn_mult: int = 2


def derive_seed(master_seed: int, role: str) -> int:
    """Stable per-role sub-seed so module init order cannot couple stages."""
    return (int(master_seed) * 1_000_003 + zlib.crc32(role.encode())) % (2**63)


@dataclass
class ConversationEncoderState:
    hidden: ag.Tensor
    cell: ag.Tensor
    turn_index: int = 0
    consumed: bool = False


class QuestionEncoder:
    """Context encoding, reformulation fusion and history recurrence."""

    def __init__(self, ps: ParameterSet, prefix: str, vocab_size: int,
                 config: EncoderConfig):
        self.config = config
        self.vocab_size = vocab_size
        self.tokens = Embedding(ps, f"{prefix}/tokens", vocab_size, config.token_dim)
        self.positions = Embedding(ps, f"{prefix}/positions", config.max_len,
                                   config.token_dim)
        self.context = [
            TransformerLayer(ps, f"{prefix}/context{i}", config.token_dim,
                             config.n_heads, config.ffn_mult * config.token_dim)
            for i in range(config.context_layers)
        ]
        self.pool = FeedForward(ps, f"{prefix}/pool", 2 * config.token_dim,
                                config.query_dim, config.query_dim)
        # No positional table here: fusion is order-invariant over
        # reformulations, with the original question pinned at position 0.
        self.fusion = [
            TransformerLayer(ps, f"{prefix}/fusion{i}", config.query_dim,
                             config.n_heads, config.ffn_mult * config.query_dim)
            for i in range(config.fusion_layers)
        ]
        self.history = LstmCell(ps, f"{prefix}/history", config.query_dim,
                                config.query_dim)

    def encode_context(self, question: Question) -> ag.Tensor:
        """Per-sentence embedding from the CLS/SEP positions of the context stack."""
        ids = list(question.token_ids)
        if not ids or ids[0] != CLS or ids[-1] != SEP:
            raise ContractError("question must be tokenised with CLS/SEP markers")
        if max(ids) >= self.vocab_size:
            raise ContractError(
                f"token id {max(ids)} outside vocabulary of size {self.vocab_size}")
        if len(ids) > self.config.max_len:
            raise ContractError(
                f"question length {len(ids)} exceeds max_len {self.config.max_len}")
        seq = ag.add(self.tokens.lookup(ids),
                     self.positions.lookup(range(len(ids))))
        for layer in self.context:
            seq = layer(seq)
        pooled = ag.concat([ag.row(seq, 0), ag.row(seq, len(ids) - 1)])
        return self.pool(pooled)

    def fuse(self, question_vec: ag.Tensor,
             reformulation_vecs: list[ag.Tensor]) -> ag.Tensor:
        """Merge the question with N >= 0 reformulation embeddings; take slot 0."""
        seq = ag.stack_rows([question_vec, *reformulation_vecs])
        for layer in self.fusion:
            seq = layer(seq)
        return ag.row(seq, 0)

    def start_conversation(self) -> ConversationEncoderState:
        hidden, cell = self.history.zero_state()
        return ConversationEncoderState(hidden=hidden, cell=cell)

    def history_step(self, fused: ag.Tensor, state: ConversationEncoderState
                     ) -> tuple[ag.Tensor, ConversationEncoderState]:
        """Advance the conversation recurrence; returns the query embedding."""
        if state.consumed:
            raise ContractError(
                f"encoder state for turn {state.turn_index} already consumed")
        hidden, cell = self.history(fused, state.hidden, state.cell)
        state.consumed = True
        new_state = ConversationEncoderState(
            hidden=hidden, cell=cell, turn_index=state.turn_index + 1)
        return hidden, new_state

    def encode_turn(self, question: Question, reformulations: list[Question],
                    state: ConversationEncoderState
                    ) -> tuple[ag.Tensor, ConversationEncoderState]:
        question_vec = self.encode_context(question)
        ref_vecs = [self.encode_context(q) for q in reformulations]
        fused = self.fuse(question_vec, ref_vecs)
        return self.history_step(fused, state)


def build_encoder(master_seed: int, role: str, vocab_size: int,
                  config: EncoderConfig) -> tuple[ParameterSet, QuestionEncoder]:
    ps = ParameterSet(seed=derive_seed(master_seed, role))
    encoder = QuestionEncoder(ps, f"encoder/{role}", vocab_size, config)
    return ps, encoder


def distill_loss(teacher_outputs: list[np.ndarray],
                 student_outputs: list[ag.Tensor]) -> ag.Tensor:
    """Sum over turns of squared Euclidean distance to the detached teacher."""
    if len(teacher_outputs) != len(student_outputs):
        raise ContractError(
            f"turn count mismatch: {len(teacher_outputs)} teacher vs"
            f" {len(student_outputs)} student outputs")
    total = ag.constant(0.0)
    for teacher_vec, student_vec in zip(teacher_outputs, student_outputs):
        total = ag.add(total, ag.squared_distance(
            student_vec, ag.constant(np.asarray(teacher_vec))))
    return total


def encode_conversation(encoder: QuestionEncoder, turns,
                        use_human_refs: bool, max_refs: int | None = None
                        ) -> list[ag.Tensor]:
    """Query embeddings for every turn of one conversation, in order."""
    state = encoder.start_conversation()
    outputs: list[ag.Tensor] = []
    for turn in turns:
        refs = turn.human_reformulations if use_human_refs \
            else turn.generated_reformulations
        if max_refs is not None:
            refs = refs[:max_refs]
        vec, state = encoder.encode_turn(turn.question, refs, state)
        outputs.append(vec)
    return outputs
