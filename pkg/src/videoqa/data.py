"""Feature packs, vocabulary, and batch padding.

A pack is a directory:
  manifest.txt  line-oriented key=value: dataset, task, geometry, dims,
                the token vocabulary in id order, and (open ended) the
                answer set
  tensors.bin   per video, in order: frame features [N, d_f], object
                features [N, K, d_r], boxes [N, K, 4]; all little-endian
                float64
  qa.txt        one QA per line: video id, task, question token ids, then
                '|'-separated option id lists plus the correct index
                (multiple choice) or the label (open ended / count)
  latent.txt    synthetic packs only: the generative record the oracle
                replays (written by the generator, read back for audits)

All integers in text files are decimal ASCII.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np


class PackFormatError(ValueError):
    """Raised with a message naming the offending record."""


TASK_NAMES = ("multiple_choice", "open_ended", "count")


# ---------------------------------------------------------------------------
# vocabulary


@dataclass
class Vocabulary:
    """Token ids: 0 pad, 1 unk, content tokens from 2 in deterministic order."""

    tokens: list            # content tokens, id = index + 2
    _ids: dict = field(default_factory=dict)
    chars: str = ""
    _char_ids: dict = field(default_factory=dict)

    def __post_init__(self):
        self._ids = {t: i + 2 for i, t in enumerate(self.tokens)}
        if not self.chars:
            self.chars = "".join(sorted({c for t in self.tokens for c in t}))
        self._char_ids = {c: i + 2 for i, c in enumerate(self.chars)}

    def __len__(self):
        return len(self.tokens) + 2

    def word_id(self, token: str) -> int:
        return self._ids.get(token, 1)

    def token(self, wid: int) -> str:
        if wid in (0, 1):
            return ""
        return self.tokens[wid - 2]

    def char_id(self, ch: str) -> int:
        return self._char_ids.get(ch, 1)

    def char_count(self) -> int:
        return len(self.chars) + 2


def build_vocab(questions, min_count: int = 1) -> Vocabulary:
    """Deterministic vocabulary: count desc, then token asc; ids from 2.

    Accepts strings (whitespace tokenized, lowercased) or token lists.
    """
    counts = {}
    n = 0
    for q in questions:
        toks = q.lower().split() if isinstance(q, str) else [t.lower() for t in q]
        for t in toks:
            counts[t] = counts.get(t, 0) + 1
            n += 1
    if n == 0:
        raise PackFormatError("cannot build a vocabulary from an empty corpus")
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(tokens=kept)


# ---------------------------------------------------------------------------
# pack structures


@dataclass
class VideoFeatures:
    frames: np.ndarray    # [N, d_f]
    objects: np.ndarray   # [N, K, d_r]
    boxes: np.ndarray     # [N, K, 4], pixel (x, y, w, h)


@dataclass
class QaItem:
    video: int
    task: str
    question: list               # word ids
    options: list | None = None  # multiple choice: list of id lists
    label: int = 0               # option index / answer-set index / count


@dataclass
class FeaturePack:
    dataset: str
    task: str
    n_frames: int
    k_objects: int
    d_frame: int
    d_object: int
    frame_w: float
    frame_h: float
    videos: list
    qa: list
    vocab_tokens: list
    answer_set: list = field(default_factory=list)
    num_options: int = 0

    def vocabulary(self) -> Vocabulary:
        return Vocabulary(tokens=list(self.vocab_tokens))

    def validate(self) -> None:
        if self.task not in TASK_NAMES:
            raise PackFormatError(f"unknown task type '{self.task}'")
        for i, v in enumerate(self.videos):
            if v.frames.shape != (self.n_frames, self.d_frame):
                raise PackFormatError(f"video {i}: frame record shape {v.frames.shape}")
            if v.objects.shape != (self.n_frames, self.k_objects, self.d_object):
                raise PackFormatError(f"video {i}: object record shape {v.objects.shape}")
            if v.boxes.shape != (self.n_frames, self.k_objects, 4):
                raise PackFormatError(f"video {i}: box record shape {v.boxes.shape}")
        n_vocab = len(self.vocab_tokens) + 2
        for i, qa in enumerate(self.qa):
            if qa.video < 0 or qa.video >= len(self.videos):
                raise PackFormatError(f"qa {i}: video id {qa.video} out of range")
            if any(w < 0 or w >= n_vocab for w in qa.question):
                raise PackFormatError(f"qa {i}: word id out of vocabulary")
            if self.task == "multiple_choice":
                if not qa.options or len(qa.options) != self.num_options:
                    raise PackFormatError(f"qa {i}: expected {self.num_options} options")
                if not (0 <= qa.label < len(qa.options)):
                    raise PackFormatError(f"qa {i}: correct index {qa.label} out of range")
            elif self.task == "open_ended":
                if not (0 <= qa.label < len(self.answer_set)):
                    raise PackFormatError(f"qa {i}: label {qa.label} outside answer set")
            else:
                if not (0 <= qa.label <= 10):
                    raise PackFormatError(f"qa {i}: count label {qa.label} outside 0..10")


# ---------------------------------------------------------------------------
# pack serialization


def write_pack(pack: FeaturePack, path, latent_text: str | None = None) -> None:
    pack.validate()
    os.makedirs(path, exist_ok=True)
    lines = [
        f"dataset={pack.dataset}",
        f"task={pack.task}",
        f"num_videos={len(pack.videos)}",
        f"frames={pack.n_frames}",
        f"objects_per_frame={pack.k_objects}",
        f"frame_feature_dim={pack.d_frame}",
        f"object_feature_dim={pack.d_object}",
        f"frame_width={pack.frame_w:.17g}",
        f"frame_height={pack.frame_h:.17g}",
        f"num_options={pack.num_options}",
        "vocab=" + " ".join(pack.vocab_tokens),
        "answer_set=" + " ".join(pack.answer_set),
    ]
    with open(os.path.join(path, "manifest.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")
    with open(os.path.join(path, "tensors.bin"), "wb") as f:
        for v in pack.videos:
            f.write(np.ascontiguousarray(v.frames, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(v.objects, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(v.boxes, dtype="<f8").tobytes())
    with open(os.path.join(path, "qa.txt"), "w") as f:
        for qa in pack.qa:
            fields = [" ".join(str(w) for w in qa.question)]
            if qa.task == "multiple_choice":
                fields.extend(" ".join(str(w) for w in opt) for opt in qa.options)
            fields.append(str(qa.label))
            f.write(f"{qa.video} {qa.task} " + " | ".join(fields) + "\n")
    if latent_text is not None:
        with open(os.path.join(path, "latent.txt"), "w") as f:
            f.write(latent_text)


def _manifest_get(manifest: dict, key: str, path: str) -> str:
    if key not in manifest:
        raise PackFormatError(f"{path}: manifest missing '{key}'")
    return manifest[key]


def read_pack(path) -> FeaturePack:
    mpath = os.path.join(path, "manifest.txt")
    if not os.path.exists(mpath):
        raise PackFormatError(f"{path}: no manifest.txt")
    manifest = {}
    with open(mpath) as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            key, _, val = line.partition("=")
            manifest[key] = val
    task = _manifest_get(manifest, "task", path)
    if task not in TASK_NAMES:
        raise PackFormatError(f"{path}: unknown task type '{task}'")
    num_videos = int(_manifest_get(manifest, "num_videos", path))
    n = int(_manifest_get(manifest, "frames", path))
    k = int(_manifest_get(manifest, "objects_per_frame", path))
    d_f = int(_manifest_get(manifest, "frame_feature_dim", path))
    d_r = int(_manifest_get(manifest, "object_feature_dim", path))
    vocab_tokens = manifest.get("vocab", "").split()
    answer_set = manifest.get("answer_set", "").split()

    with open(os.path.join(path, "tensors.bin"), "rb") as f:
        blob = f.read()
    offset = 0
    videos = []

    def take(count, record):
        nonlocal offset
        nbytes = count * 8
        if offset + nbytes > len(blob):
            raise PackFormatError(f"tensors.bin truncated in {record}")
        arr = np.frombuffer(blob[offset : offset + nbytes], dtype="<f8").astype(np.float64)
        offset += nbytes
        return arr

    for i in range(num_videos):
        frames = take(n * d_f, f"video {i} frame features").reshape(n, d_f)
        objects = take(n * k * d_r, f"video {i} object features").reshape(n, k, d_r)
        boxes = take(n * k * 4, f"video {i} boxes").reshape(n, k, 4)
        videos.append(VideoFeatures(frames=frames, objects=objects, boxes=boxes))
    if offset != len(blob):
        raise PackFormatError(
            f"tensors.bin has {len(blob) - offset} trailing bytes beyond declared extents"
        )

    qa = []
    with open(os.path.join(path, "qa.txt")) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            head, _, rest = line.partition(" ")
            qtask, _, rest = rest.partition(" ")
            if qtask not in TASK_NAMES:
                raise PackFormatError(f"qa.txt line {lineno}: unknown task type '{qtask}'")
            fields = [p.strip() for p in rest.split("|")]
            question = [int(w) for w in fields[0].split()]
            if qtask == "multiple_choice":
                options = [[int(w) for w in p.split()] for p in fields[1:-1]]
                qa.append(QaItem(int(head), qtask, question, options, int(fields[-1])))
            else:
                qa.append(QaItem(int(head), qtask, question, None, int(fields[-1])))

    pack = FeaturePack(
        dataset=manifest.get("dataset", ""),
        task=task,
        n_frames=n,
        k_objects=k,
        d_frame=d_f,
        d_object=d_r,
        frame_w=float(_manifest_get(manifest, "frame_width", path)),
        frame_h=float(_manifest_get(manifest, "frame_height", path)),
        videos=videos,
        qa=qa,
        vocab_tokens=vocab_tokens,
        answer_set=answer_set,
        num_options=int(manifest.get("num_options", "0")),
    )
    pack.validate()
    return pack


def packs_equal(a: FeaturePack, b: FeaturePack) -> bool:
    """Bitwise equality of two packs (round-trip checks)."""
    if (a.dataset, a.task, a.n_frames, a.k_objects, a.d_frame, a.d_object,
        a.frame_w, a.frame_h, a.vocab_tokens, a.answer_set, a.num_options) != (
        b.dataset, b.task, b.n_frames, b.k_objects, b.d_frame, b.d_object,
        b.frame_w, b.frame_h, b.vocab_tokens, b.answer_set, b.num_options):
        return False
    if len(a.videos) != len(b.videos) or len(a.qa) != len(b.qa):
        return False
    for va, vb in zip(a.videos, b.videos):
        if not (va.frames.tobytes() == vb.frames.tobytes()
                and va.objects.tobytes() == vb.objects.tobytes()
                and va.boxes.tobytes() == vb.boxes.tobytes()):
            return False
    for qa_a, qa_b in zip(a.qa, b.qa):
        if (qa_a.video, qa_a.task, qa_a.question, qa_a.options, qa_a.label) != (
                qa_b.video, qa_b.task, qa_b.question, qa_b.options, qa_b.label):
            return False
    return True


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    """Padded question/video arrays plus validity masks.

    question_ids [B, kmax], question_mask [B, kmax] bool, frames
    [B, Nmax, d_f], frame_mask [B, Nmax] bool, objects/boxes padded the same
    way. Samples are recovered by slicing at the masks.
    """

    question_ids: np.ndarray
    question_mask: np.ndarray
    frames: np.ndarray
    frame_mask: np.ndarray
    objects: np.ndarray
    boxes: np.ndarray
    options: list
    labels: np.ndarray
    tasks: list

    def __len__(self):
        return self.question_ids.shape[0]

    def sample_view(self, i: int):
        """Valid (unpadded) regions for sample i, bitwise equal to the input."""
        klen = int(self.question_mask[i].sum())
        nlen = int(self.frame_mask[i].sum())
        return (
            self.question_ids[i, :klen],
            self.frames[i, :nlen],
            self.objects[i, :nlen],
            self.boxes[i, :nlen],
            self.options[i],
            int(self.labels[i]),
            self.tasks[i],
        )


def pad_batch(samples) -> Batch:
    """samples: list of (question_ids, frames, objects, boxes, options, label, task).

    Questions pad to the batch max length, videos to the batch max frame
    count with zero frames/objects; masks flag the valid region.
    """
    if not samples:
        raise PackFormatError("pad_batch of an empty sample list")
    d_f = samples[0][1].shape[1]
    d_r = samples[0][2].shape[2]
    k = samples[0][2].shape[1]
    for s in samples:
        if s[1].shape[1] != d_f or s[2].shape[2] != d_r or s[2].shape[1] != k:
            raise PackFormatError(
                f"pad_batch: feature widths differ ({s[1].shape}, {s[2].shape})"
            )
    bsz = len(samples)
    kmax = max(len(s[0]) for s in samples)
    nmax = max(s[1].shape[0] for s in samples)
    q = np.zeros((bsz, kmax), dtype=np.int64)
    qm = np.zeros((bsz, kmax), dtype=bool)
    fr = np.zeros((bsz, nmax, d_f))
    fm = np.zeros((bsz, nmax), dtype=bool)
    ob = np.zeros((bsz, nmax, k, d_r))
    bx = np.zeros((bsz, nmax, k, 4))
    # padded boxes get unit extent so normalization never divides by zero
    bx[:, :, :, 2:] = 1.0
    options, labels, tasks = [], [], []
    for i, (qi, frames, objects, boxes, opts, label, task) in enumerate(samples):
        q[i, : len(qi)] = qi
        qm[i, : len(qi)] = True
        n = frames.shape[0]
        fr[i, :n] = frames
        fm[i, :n] = True
        ob[i, :n] = objects
        bx[i, :n] = boxes
        options.append(opts)
        labels.append(label)
        tasks.append(task)
    return Batch(q, qm, fr, fm, ob, bx, options, np.asarray(labels), tasks)


def pack_samples(pack: FeaturePack):
    """Flatten a pack into pad_batch-ready sample tuples, one per QA item."""
    out = []
    for qa in pack.qa:
        v = pack.videos[qa.video]
        out.append((
            np.asarray(qa.question, dtype=np.int64),
            v.frames,
            v.objects,
            v.boxes,
            qa.options,
            qa.label,
            qa.task,
        ))
    return out
