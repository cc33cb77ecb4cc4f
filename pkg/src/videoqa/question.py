"""Question (and answer-option) encoding into per-word sequence features.

Pipeline: word embedding + char-CNN output, concatenated, through a two-layer
highway network, then a Bi-LSTM whose per-step hidden states are stacked from
both directions. Multiple-choice options run through the exact same encoder.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .layers import (
    BiLstm,
    Conv2d,
    EmbeddingTable,
    HighwayNetwork,
    bilstm_forward,
    char_cnn,
    embedding_lookup,
    highway_forward,
)
from .tensor import ContractError, Tensor, concat_last

log = logging.getLogger(__name__)

PAD_ID = 0
UNK_ID = 1


@dataclass
class TokenizedText:
    """Fixed-width token ids: word ids [k], char ids [k, c], true length."""

    word_ids: np.ndarray
    char_ids: np.ndarray
    length: int


def tokenize(text: str, vocab, max_words: int = 32, max_chars: int = 16) -> TokenizedText:
    """Lowercase whitespace tokenization into padded id arrays.

    Unknown words map to the unk row; words longer than max_chars are
    truncated, questions longer than max_words truncated with a warning.
    """
    words = text.lower().split()
    if not words:
        raise ContractError("cannot tokenize empty text")
    if len(words) > max_words:
        log.warning("question truncated from %d to %d tokens", len(words), max_words)
        words = words[:max_words]
    word_ids = np.zeros(max_words, dtype=np.int64)
    char_ids = np.zeros((max_words, max_chars), dtype=np.int64)
    for i, w in enumerate(words):
        word_ids[i] = vocab.word_id(w)
        for j, ch in enumerate(w[:max_chars]):
            char_ids[i, j] = vocab.char_id(ch)
    return TokenizedText(word_ids=word_ids, char_ids=char_ids, length=len(words))


def from_ids(ids, vocab, max_words: int = 32, max_chars: int = 16) -> TokenizedText:
    """Build TokenizedText from stored word ids, reconstructing char ids."""
    ids = list(ids)
    if not ids:
        raise ContractError("empty id sequence")
    if len(ids) > max_words:
        ids = ids[:max_words]
    word_ids = np.zeros(max_words, dtype=np.int64)
    char_ids = np.zeros((max_words, max_chars), dtype=np.int64)
    for i, wid in enumerate(ids):
        word_ids[i] = wid
        for j, ch in enumerate(vocab.token(wid)[:max_chars]):
            char_ids[i, j] = vocab.char_id(ch)
    return TokenizedText(word_ids=word_ids, char_ids=char_ids, length=len(ids))


@dataclass
class QuestionFeatures:
    """Sequence feature [k, 2h] with rows past `length` exactly zero."""

    features: Tensor
    mask: np.ndarray  # bool [k]
    length: int


def embed_question(text: TokenizedText, word_table: EmbeddingTable,
                   char_table: EmbeddingTable, cnn: Conv2d,
                   highway: HighwayNetwork) -> Tensor:
    """Word embedding and char-CNN vector per word, concatenated, then the
    two-layer highway network. Output [k, d_w + d_char]."""
    k = text.word_ids.shape[0]
    words = embedding_lookup(word_table, text.word_ids[:k])
    chars = embedding_lookup(char_table, text.char_ids)  # [k, c, d_c]
    char_vecs = char_cnn(cnn, chars)                     # [k, d_char]
    return highway_forward(highway, concat_last([words, char_vecs]))


def encode_question(emb: Tensor, rnn: BiLstm, length: int) -> QuestionFeatures:
    """Bi-LSTM over the embedded words; masked rows are zero vectors."""
    if length < 1:
        raise ContractError("question length must be at least 1")
    k = emb.data.shape[0]
    if length > k:
        raise ContractError(f"length {length} exceeds padded width {k}")
    feats = bilstm_forward(rnn, emb, length)
    mask = np.arange(k) < length
    return QuestionFeatures(features=feats, mask=mask, length=length)


def load_pretrained_embeddings(path, vocab, table: EmbeddingTable) -> int:
    """Fill matching vocab rows from a text file: token then 300 floats per line.

    Returns the number of rows loaded. Unmatched vocab rows keep their
    random initialization.
    """
    dim = table.rows.data.shape[1]
    loaded = 0
    with open(path) as f:
        for line in f:
            fields = line.rstrip("\n").split(" ")
            if len(fields) != dim + 1:
                continue
            wid = vocab.word_id(fields[0])
            if wid == UNK_ID or wid == PAD_ID:
                continue
            table.rows.data[wid] = [float(v) for v in fields[1:]]
            loaded += 1
    return loaded
