"""Full network assembly: parameters, per-sample forward, checkpointing.

One Model owns every trainable tensor, keyed by module path, and runs the
whole pipeline for one sample: encode the question (and options), build
location-aware node features, run the relation module, fuse with the global
frame context, interact with the question, and score through the task head.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass

import numpy as np

from . import fusion, graph, question
from .config import Config, load_config
from .data import FeaturePack, Vocabulary
from .layers import BiLstm, Conv1d, Conv2d, EmbeddingTable, HighwayNetwork, LinearLayer, Mlp, linear_forward
from .question import QuestionFeatures, TokenizedText, tokenize
from .rng import Rng
from .tensor import ContractError, Tensor, load_params, save_params


@dataclass
class Sample:
    """One QA instance in model vocabulary space."""

    text: TokenizedText
    frames: np.ndarray   # [N, d_f]
    objects: np.ndarray  # [N, K, d_r]
    boxes: np.ndarray    # [N, K, 4]
    options: list | None
    label: int
    task: str


class Model:
    def __init__(self, cfg: Config, vocab: Vocabulary, d_frame: int, d_object: int,
                 frame_w: float, frame_h: float, answer_size: int = 0, num_options: int = 0):
        cfg.validate()
        if cfg.task == "open_ended" and answer_size < 2:
            raise ContractError("open ended task needs an answer set of size >= 2")
        if cfg.task == "multiple_choice" and num_options < 2:
            raise ContractError("multiple choice needs at least 2 options")
        self.cfg = cfg
        self.vocab = vocab
        self.d_frame = d_frame
        self.d_object = d_object
        self.frame_w = frame_w
        self.frame_h = frame_h
        self.answer_size = answer_size
        self.num_options = num_options

        d_v = cfg.d_o + cfg.d_s_loc + cfg.d_p
        self.d_v = d_v
        rng = Rng(cfg.seed)

        self.word_emb = EmbeddingTable.create(rng, len(vocab), cfg.word_dim,
                                              trainable=cfg.train_word_embeddings)
        self.char_emb = EmbeddingTable.create(rng, vocab.char_count(), cfg.d_c)
        self.char_cnn = Conv2d.create(rng, cfg.d_c, cfg.d_char, 1, cfg.char_kernel)
        d_e = cfg.word_dim + cfg.d_char
        self.highway = HighwayNetwork.create(rng, d_e, depth=2)
        self.q_rnn = BiLstm.create(rng, d_e, cfg.hidden)

        self.obj_proj = LinearLayer.create(rng, d_object, cfg.d_o)
        self.spatial_mlp = Mlp.create(rng, 4, cfg.d_s_loc, cfg.d_s_loc, activation="relu")
        if cfg.relation == "gcn":
            self.relation = graph.GcnParams.create(
                rng, d_v, cfg.gcn_layers, shared_projections=cfg.share_adjacency_projections)
        elif cfg.relation == "fc":
            self.relation = graph.FcRelation.create(rng, d_v, cfg.gcn_layers)
        elif cfg.relation == "lstm":
            self.relation = graph.LstmRelation.create(rng, d_v, cfg.gcn_layers)
        else:
            self.relation = None

        self.frame_proj = LinearLayer.create(rng, d_frame, cfg.d_g)
        self.frame_conv = Conv1d.create(rng, cfg.d_g, cfg.d_g, cfg.frame_kernel)
        self.fuse_mlp = Mlp.create(rng, d_v + cfg.d_g, cfg.d_s, cfg.d_s, activation="elu")

        self.v_proj = LinearLayer.create(rng, cfg.d_s, cfg.d_s)
        self.q_proj = LinearLayer.create(rng, 2 * cfg.hidden, cfg.d_s)
        blocks = 5 if cfg.task == "multiple_choice" else 3
        self.out_rnn = BiLstm.create(rng, blocks * cfg.d_s, cfg.d_s // 2)
        d_out = cfg.d_s
        if cfg.task == "multiple_choice":
            self.head = LinearLayer.create(rng, d_out, 1)
        elif cfg.task == "open_ended":
            self.head = LinearLayer.create(rng, d_out, answer_size)
        else:
            self.head = LinearLayer.create(rng, d_out, 1)

        if cfg.pretrained_embeddings:
            question.load_pretrained_embeddings(cfg.pretrained_embeddings, vocab, self.word_emb)
        self._temporal_cache = {}

    # -- parameters ---------------------------------------------------------

    def parameters(self) -> dict:
        out = {}
        out.update(self.word_emb.params("word_emb"))
        out.update(self.char_emb.params("char_emb"))
        out.update(self.char_cnn.params("char_cnn"))
        out.update(self.highway.params("highway"))
        out.update(self.q_rnn.params("q_rnn"))
        out.update(self.obj_proj.params("obj_proj"))
        out.update(self.spatial_mlp.params("spatial_mlp"))
        if self.relation is not None:
            out.update(self.relation.params(f"relation_{self.cfg.relation}"))
        out.update(self.frame_proj.params("frame_proj"))
        out.update(self.frame_conv.params("frame_conv"))
        out.update(self.fuse_mlp.params("fuse_mlp"))
        out.update(self.v_proj.params("v_proj"))
        out.update(self.q_proj.params("q_proj"))
        out.update(self.out_rnn.params("out_rnn"))
        out.update(self.head.params("head"))
        return out

    def trainable_parameters(self) -> dict:
        return {k: p for k, p in self.parameters().items() if p.requires_grad}

    # -- forward ------------------------------------------------------------

    def encode_text(self, text: TokenizedText) -> QuestionFeatures:
        return self.encode_texts([text])[0]

    def encode_texts(self, texts: list) -> list:
        """Shared-encoder pass over several texts at once (question + options).

        Embedding, char-CNN, and highway run on the stacked word rows; the
        Bi-LSTM runs batched with per-text lengths. Output features are
        trimmed to each text's true length (mask all-true).
        """
        from .layers import bilstm_forward_batch, char_cnn, embedding_lookup, highway_forward
        from .tensor import concat_last, reshape, slice_rows

        bsz = len(texts)
        kmax = max(t.length for t in texts)
        c = texts[0].char_ids.shape[1]
        word_ids = np.zeros((bsz, kmax), dtype=np.int64)
        char_ids = np.zeros((bsz, kmax, c), dtype=np.int64)
        lengths = []
        for i, t in enumerate(texts):
            length = t.length
            word_ids[i, :length] = t.word_ids[:length]
            char_ids[i, :length] = t.char_ids[:length]
            lengths.append(length)
        words = embedding_lookup(self.word_emb, word_ids.reshape(-1))
        chars = embedding_lookup(self.char_emb, char_ids.reshape(bsz * kmax, c))
        char_vecs = char_cnn(self.char_cnn, chars)
        emb = highway_forward(self.highway, concat_last([words, char_vecs]))
        seq = bilstm_forward_batch(self.q_rnn, reshape(emb, (bsz, kmax, emb.data.shape[1])),
                                   lengths)
        h2 = 2 * self.cfg.hidden
        out = []
        for i, length in enumerate(lengths):
            row = reshape(slice_rows(seq, i, i + 1), (kmax, h2))
            feats = slice_rows(row, 0, length) if length < kmax else row
            out.append(QuestionFeatures(features=feats,
                                        mask=np.ones(length, dtype=bool), length=length))
        return out

    def visual_features(self, sample: Sample, collect_adjacency: list | None = None) -> Tensor:
        cfg = self.cfg
        n, k, _ = sample.objects.shape
        t = n * k
        raw = Tensor(sample.objects.reshape(t, self.d_object))
        boxes = sample.boxes.reshape(t, 4)
        if cfg.normalize_boxes:
            boxes = graph.normalize_boxes(boxes, self.frame_w, self.frame_h)

        projected = fusion.project_objects(raw, self.obj_proj)
        spatial = graph.encode_spatial_batch(boxes, self.spatial_mlp)
        temporal = self._temporal_cache.get((n, k))
        if temporal is None:
            temporal = graph.temporal_matrix(np.repeat(np.arange(n), k), cfg.d_p)
            self._temporal_cache[(n, k)] = temporal
        x0 = graph.build_node_features(projected, spatial, temporal,
                                       use_spatial=cfg.use_spatial_loc,
                                       use_temporal=cfg.use_temporal_loc)
        if cfg.use_objects:
            f_r = graph.relation_forward(cfg.relation, x0, self.relation,
                                         cfg.gcn_layers, collect_adjacency)
        else:
            f_r = Tensor(np.zeros((t, self.d_v)))
        g = fusion.global_context(Tensor(sample.frames), self.frame_conv, self.frame_proj, k)
        return fusion.fuse_visual(f_r, g, self.fuse_mlp)

    def forward(self, sample: Sample):
        """Full pipeline for one sample; returns (loss Tensor, prediction)."""
        if sample.task != self.cfg.task:
            raise ContractError(f"model task {self.cfg.task} but sample task {sample.task}")
        texts = [sample.text] + (list(sample.options) if sample.options else [])
        encoded = self.encode_texts(texts)
        qf = encoded[0]
        f_q = linear_forward(self.q_proj, qf.features)
        f_v = linear_forward(self.v_proj, self.visual_features(sample))
        qmask = qf.mask[: qf.length]

        if self.cfg.task == "multiple_choice":
            answers = []
            for af in encoded[1:]:
                f_a = linear_forward(self.q_proj, af.features)
                answers.append((f_a, af.mask[: af.length]))
            fused = fusion.vq_interact(f_v, f_q, qmask, self.out_rnn, answers)
            scores = fusion.mc_score(fused, self.head)
            loss = fusion.mc_loss(scores, sample.label)
            return loss, int(np.argmax(scores.data))

        fused = fusion.vq_interact(f_v, f_q, qmask, self.out_rnn)
        if self.cfg.task == "open_ended":
            scores = fusion.open_ended_scores(fused, self.head)
            loss = fusion.open_ended_loss(scores, sample.label)
            return loss, int(np.argmax(scores.data))

        x = fusion.count_value(fused, self.head)
        loss = fusion.count_loss(x, sample.label)
        return loss, fusion.count_postprocess(x.item())

    def adjacency_for(self, sample: Sample) -> list:
        """A^(p) matrices for this sample's video (gcn relation only)."""
        if self.cfg.relation != "gcn" or not self.cfg.use_objects:
            raise ContractError("adjacency export needs the gcn relation with objects enabled")
        collected: list = []
        self.visual_features(sample, collect_adjacency=collected)
        return collected

    # -- checkpoint ---------------------------------------------------------

    def save(self, path) -> None:
        """Atomic checkpoint directory: config, vocab, manifest + f64 blob."""
        parent = os.path.dirname(os.path.abspath(path)) or "."
        os.makedirs(parent, exist_ok=True)
        tmp = tempfile.mkdtemp(prefix=".ckpt-", dir=parent)
        try:
            with open(os.path.join(tmp, "config.txt"), "w") as f:
                f.write(self.cfg.to_text())
            with open(os.path.join(tmp, "vocab.txt"), "w") as f:
                for tok in self.vocab.tokens:
                    f.write(f"token {tok}\n")
                for ch in self.vocab.chars:
                    f.write(f"char {ch}\n")
            with open(os.path.join(tmp, "meta.txt"), "w") as f:
                f.write(f"frame_feature_dim={self.d_frame}\n")
                f.write(f"object_feature_dim={self.d_object}\n")
                f.write(f"frame_width={self.frame_w:.17g}\n")
                f.write(f"frame_height={self.frame_h:.17g}\n")
                f.write(f"answer_size={self.answer_size}\n")
                f.write(f"num_options={self.num_options}\n")
            save_params(self.parameters(),
                        os.path.join(tmp, "manifest.txt"), os.path.join(tmp, "params.bin"))
            if os.path.isdir(path):
                import shutil
                shutil.rmtree(path)
            os.replace(tmp, path)
        finally:
            if os.path.isdir(tmp):
                import shutil
                shutil.rmtree(tmp)

    @staticmethod
    def load(path) -> "Model":
        cfg = load_config(os.path.join(path, "config.txt"))
        tokens, chars = [], []
        with open(os.path.join(path, "vocab.txt")) as f:
            for line in f:
                kind, _, val = line.rstrip("\n").partition(" ")
                if kind == "token":
                    tokens.append(val)
                elif kind == "char":
                    chars.append(val)
        vocab = Vocabulary(tokens=tokens, chars="".join(chars))
        meta = {}
        with open(os.path.join(path, "meta.txt")) as f:
            for line in f:
                key, _, val = line.rstrip("\n").partition("=")
                meta[key] = val
        model = Model(cfg, vocab,
                      d_frame=int(meta["frame_feature_dim"]),
                      d_object=int(meta["object_feature_dim"]),
                      frame_w=float(meta["frame_width"]),
                      frame_h=float(meta["frame_height"]),
                      answer_size=int(meta["answer_size"]),
                      num_options=int(meta["num_options"]))
        stored = load_params(os.path.join(path, "manifest.txt"), os.path.join(path, "params.bin"))
        params = model.parameters()
        if set(stored) != set(params):
            raise ContractError("checkpoint parameter names do not match the model")
        for name, arr in stored.items():
            if params[name].data.shape != arr.shape:
                raise ContractError(f"checkpoint shape mismatch for '{name}'")
            params[name].data[...] = arr
        return model


def make_sample(sample_tuple, pack_vocab: Vocabulary, model_vocab: Vocabulary,
                cfg: Config) -> Sample:
    """Translate one pad_batch-style tuple into model vocabulary space.

    Pack ids decode to tokens through the pack's own vocabulary and re-encode
    against the model's, so a checkpoint evaluates correctly on any pack that
    speaks the same token language.
    """
    q_ids, frames, objects, boxes, options, label, task = sample_tuple
    qtext = " ".join(pack_vocab.token(int(w)) for w in q_ids)
    text = tokenize(qtext, model_vocab, cfg.max_question_len, cfg.char_len)
    opts = None
    if options is not None:
        opts = [
            tokenize(" ".join(pack_vocab.token(int(w)) for w in o),
                     model_vocab, cfg.max_question_len, cfg.char_len)
            for o in options
        ]
    return Sample(text=text, frames=frames, objects=objects, boxes=boxes,
                  options=opts, label=int(label), task=task)


def model_for_pack(cfg: Config, pack: FeaturePack) -> Model:
    """Build a model sized for a pack, validating task/geometry agreement."""
    if cfg.task != pack.task:
        raise ContractError(f"config task '{cfg.task}' but pack task '{pack.task}'")
    if cfg.objects_per_frame != pack.k_objects:
        raise ContractError(
            f"config objects_per_frame {cfg.objects_per_frame} but pack has {pack.k_objects}"
        )
    return Model(cfg, pack.vocabulary(), d_frame=pack.d_frame, d_object=pack.d_object,
                 frame_w=pack.frame_w, frame_h=pack.frame_h,
                 answer_size=len(pack.answer_set), num_options=pack.num_options)
