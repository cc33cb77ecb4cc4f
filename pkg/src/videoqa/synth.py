"""Synthetic temporal-reasoning tasks with a brute-force answer oracle.

Each video holds K persistent objects. An object has a class (prototype unit
vector), a fixed base box size, and a piecewise-linear center trajectory:
one waypoint per frame, chosen from a jittered anchor grid so that only the
*scheduled* pair is ever within the interaction threshold. An interaction
event of class pair (i, j) exists in frame n exactly when the two centers
are within the threshold there — the oracle recomputes this from geometry
and never looks at the noisy features.

Scheduled contacts also swell the participants' boxes (contact_growth), a
location-channel cue that keeps the tasks learnable at desk scale; labels
still come only from the center-distance scan.

Task families:
  order   multiple choice. Three objects, three pairwise meetings at three
          distinct frames. The question anchors on the *middle* meeting
          ("what happens before/after <ev>"), so exactly one present event
          sits on the queried side. Options: that answer, the present event
          on the other side, and two events whose classes never appear.
  action  open ended. One pair meets once; "what event occurs".
  count   "how many times <ev>": the pair stays in contact for a contiguous
          block of frames; the label is the number of contact frames.

Frame features are pure noise on purpose: the global-context-only baseline
has nothing to learn from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .data import FeaturePack, QaItem, VideoFeatures, Vocabulary
from .rng import Rng


class SpecError(ValueError):
    pass


TEMPLATE_WORDS = ["what", "happens", "before", "after", "event", "occurs",
                  "how", "many", "times"]

# anchor grid in canvas fractions; pairwise separation >= 0.35 of the short side
_ANCHORS = [(0.15, 0.15), (0.85, 0.85), (0.15, 0.85), (0.85, 0.15), (0.5, 0.5),
            (0.5, 0.15), (0.15, 0.5), (0.85, 0.5), (0.5, 0.85)]


def pair_token(i: int, j: int) -> str:
    a, b = (i, j) if i < j else (j, i)
    return f"ev{a}x{b}"


def parse_pair_token(tok: str):
    if not tok.startswith("ev") or "x" not in tok:
        return None
    a, _, b = tok[2:].partition("x")
    try:
        return int(a), int(b)
    except ValueError:
        return None


def all_pair_tokens(num_classes: int) -> list:
    return [pair_token(i, j) for i in range(num_classes) for j in range(i + 1, num_classes)]


def fixed_vocabulary(num_classes: int) -> Vocabulary:
    """Closed template vocabulary, identical for every pack of a task family."""
    return Vocabulary(tokens=TEMPLATE_WORDS + all_pair_tokens(num_classes))


@dataclass
class SyntheticSpec:
    seed: int = 0
    task: str = "order"            # order | action | count
    videos: int = 100
    frames: int = 10
    objects: int = 3               # K
    num_classes: int = 8
    feature_dim: int = 16          # object feature width d_r
    frame_feature_dim: int = 16    # frame feature width d_f
    sigma: float = 0.05
    threshold: float = 12.0
    frame_w: float = 100.0
    frame_h: float = 100.0
    num_options: int = 4
    contact_growth: float = 1.75

    def validate(self) -> None:
        if self.task not in ("order", "action", "count"):
            raise SpecError(f"unknown task family '{self.task}'")
        if self.objects < 2:
            raise SpecError("interaction tasks need at least 2 objects per frame")
        if self.task == "order" and self.objects < 3:
            raise SpecError("the order task needs at least 3 objects per frame")
        if self.objects > len(_ANCHORS):
            raise SpecError(f"at most {len(_ANCHORS)} objects supported")
        if self.num_classes > self.feature_dim:
            raise SpecError("prototypes are basis vectors: num_classes <= feature_dim")
        if self.task == "order" and self.num_classes < 5:
            raise SpecError("order task needs >= 5 classes (3 present + absent options)")
        if self.num_classes < 2:
            raise SpecError("need at least 2 classes")
        # prototypes are distinct basis vectors, pairwise distance sqrt(2)
        if self.sigma > 0 and math.sqrt(2.0) <= 4.0 * self.sigma:
            raise SpecError(f"sigma {self.sigma} too large: prototype distance must exceed 4*sigma")
        if self.task == "order" and self.frames < 4:
            raise SpecError("order task needs at least 4 frames")
        if self.frames < 2:
            raise SpecError("need at least 2 frames")
        if self.num_options < 2:
            raise SpecError("multiple choice needs at least 2 options")
        if self.objects > self.num_classes and self.num_classes < 3:
            raise SpecError("filler slots need at least 3 classes")
        if self.task == "order" and self.num_options > 2 + self._absent_pool_size():
            raise SpecError("not enough absent class pairs for the option count")
        if self.threshold <= 0:
            raise SpecError("threshold must be positive")

    def _absent_pool_size(self) -> int:
        # order videos show 3 event classes plus distinct filler classes
        present = 3 + min(max(self.objects - 3, 0), self.num_classes - 3)
        absent = self.num_classes - present
        return absent * present + absent * (absent - 1) // 2

    def prototypes(self) -> np.ndarray:
        out = np.zeros((self.num_classes, self.feature_dim))
        for c in range(self.num_classes):
            out[c, c] = 1.0
        return out

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name}={getattr(self, f.name)}")
        return "\n".join(lines) + "\n"


def parse_spec(text: str) -> SyntheticSpec:
    spec = SyntheticSpec()
    kinds = {f.name: type(getattr(spec, f.name)) for f in fields(spec)}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, eq, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not eq or key not in kinds:
            raise SpecError(f"line {lineno}: unknown spec key '{key}'")
        kind = kinds[key]
        if kind is str:
            setattr(spec, key, raw)
        elif kind is int:
            setattr(spec, key, int(raw))
        else:
            setattr(spec, key, float(raw) if raw != "inf" else math.inf)
    spec.validate()
    return spec


def load_spec(path) -> SyntheticSpec:
    with open(path) as f:
        return parse_spec(f.read())


# ---------------------------------------------------------------------------
# latent generative records


@dataclass
class LatentVideo:
    classes: list       # per slot
    boxes: np.ndarray   # [N, K, 4] top-left (x, y, w, h), same values as tensors.bin


@dataclass
class LatentRecord:
    threshold: float
    videos: list


def latent_to_text(rec: LatentRecord) -> str:
    lines = [f"threshold {rec.threshold:.17g}", f"videos {len(rec.videos)}"]
    for vi, v in enumerate(rec.videos):
        lines.append(f"video {vi} classes " + " ".join(str(c) for c in v.classes))
        n, k, _ = v.boxes.shape
        for f in range(n):
            for s in range(k):
                x, y, w, h = v.boxes[f, s]
                lines.append(f"box {vi} {f} {s} {x:.17g} {y:.17g} {w:.17g} {h:.17g}")
    return "\n".join(lines) + "\n"


def parse_latent(text: str) -> LatentRecord:
    threshold = None
    classes = {}
    boxes = {}
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "threshold":
            threshold = float(parts[1])
        elif parts[0] == "video":
            classes[int(parts[1])] = [int(c) for c in parts[3:]]
        elif parts[0] == "box":
            vi, f, s = int(parts[1]), int(parts[2]), int(parts[3])
            boxes.setdefault(vi, {})[(f, s)] = [float(v) for v in parts[4:8]]
    videos = []
    for vi in sorted(classes):
        k = len(classes[vi])
        n = 1 + max(f for (f, _s) in boxes[vi])
        arr = np.zeros((n, k, 4))
        for (f, s), vals in boxes[vi].items():
            arr[f, s] = vals
        videos.append(LatentVideo(classes=classes[vi], boxes=arr))
    return LatentRecord(threshold=threshold, videos=videos)


# ---------------------------------------------------------------------------
# the oracle: exhaustive scan over the latent record


def scan_events(video: LatentVideo, threshold: float) -> dict:
    """pair (i, j) with i < j -> sorted list of frames where their centers
    are within the threshold. Same-class pairs are not events."""
    n, k, _ = video.boxes.shape
    centers = video.boxes[:, :, :2] + video.boxes[:, :, 2:] / 2.0
    events = {}
    for f in range(n):
        for s1 in range(k):
            for s2 in range(s1 + 1, k):
                c1, c2 = video.classes[s1], video.classes[s2]
                if c1 == c2:
                    continue
                d = centers[f, s1] - centers[f, s2]
                if math.hypot(d[0], d[1]) <= threshold:
                    pair = (min(c1, c2), max(c1, c2))
                    frames = events.setdefault(pair, [])
                    if not frames or frames[-1] != f:
                        frames.append(f)
    return events


def oracle_answer(video: LatentVideo, threshold: float, question_tokens: list):
    """Brute-force label from the latent record.

    order  -> the pair token of the unique event on the queried side of the
              anchor (by first occurrence), or None to reject
    action -> the pair token of the unique event, or None
    count  -> number of event frames clamped to 10, or None if the pair
              never interacts (templates must reference present events)
    """
    events = scan_events(video, threshold)
    first = {pair: frames[0] for pair, frames in events.items()}
    if question_tokens[:2] == ["what", "happens"]:
        direction = question_tokens[2]
        anchor = parse_pair_token(question_tokens[3])
        if anchor is None or anchor not in first:
            return None
        t0 = first[anchor]
        if direction == "before":
            side = [p for p, t in first.items() if t < t0]
        else:
            side = [p for p, t in first.items() if t > t0]
        if len(side) != 1:
            return None
        return pair_token(*side[0])
    if question_tokens == ["what", "event", "occurs"]:
        if len(events) != 1:
            return None
        return pair_token(*next(iter(events)))
    if question_tokens[:3] == ["how", "many", "times"]:
        pair = parse_pair_token(question_tokens[3])
        if pair is None or pair not in events:
            return None
        return min(len(events[pair]), 10)
    return None


# ---------------------------------------------------------------------------
# generation


def _jittered(rng: Rng, anchor, spec: SyntheticSpec, spread: float):
    ax = anchor[0] * spec.frame_w + rng.uniform(-spread, spread)
    ay = anchor[1] * spec.frame_h + rng.uniform(-spread, spread)
    return ax, ay


def _place_video(rng: Rng, spec: SyntheticSpec, contacts: dict):
    """Waypoints for one video. contacts: frame -> (slot_a, slot_b) pair in
    contact there. Returns boxes [N, K, 4] top-left with contact growth."""
    n, k = spec.frames, spec.objects
    base = np.array([[rng.uniform(8.0, 13.0), rng.uniform(8.0, 13.0)] for _ in range(k)])
    boxes = np.zeros((n, k, 4))
    for f in range(n):
        anchors = list(_ANCHORS)
        rng.shuffle(anchors)
        centers = np.zeros((k, 2))
        grow = np.ones(k)
        pair = contacts.get(f)
        if pair is None:
            for s in range(k):
                centers[s] = _jittered(rng, anchors[s], spec, 2.0)
        else:
            a, b = pair
            meet = _jittered(rng, anchors[0], spec, 2.0)
            # participants straddle the meeting point, far enough inside the
            # threshold that edge clamping of grown boxes cannot push them out
            r = spec.threshold * 0.3 if math.isfinite(spec.threshold) else 3.0
            ang = rng.uniform(0.0, 2.0 * math.pi)
            offset = np.array([math.cos(ang), math.sin(ang)]) * r
            centers[a] = meet + offset
            centers[b] = meet - offset
            grow[a] = grow[b] = spec.contact_growth
            rest = [s for s in range(k) if s not in (a, b)]
            for i, s in enumerate(rest):
                centers[s] = _jittered(rng, anchors[1 + i], spec, 2.0)
        for s in range(k):
            w, h = base[s] * grow[s]
            boxes[f, s, 0] = min(max(centers[s, 0] - w / 2.0, 0.0), spec.frame_w - w)
            boxes[f, s, 1] = min(max(centers[s, 1] - h / 2.0, 0.0), spec.frame_h - h)
            boxes[f, s, 2] = w
            boxes[f, s, 3] = h
    return boxes


def _absent_pairs(rng: Rng, spec: SyntheticSpec, present_classes, count: int):
    pool = []
    present = set(present_classes)
    for i in range(spec.num_classes):
        for j in range(i + 1, spec.num_classes):
            if i not in present or j not in present:
                pool.append((i, j))
    return rng.sample(pool, count)


def _video_order(rng: Rng, spec: SyntheticSpec):
    """One order-task video: classes, contacts, question tokens, option tokens.

    The anchor meeting always lands on the middle frame, with exactly one
    meeting in each half; "before/after <anchor>" then has a unique answer
    and temporal location carries the discriminating signal.
    """
    classes = rng.sample(range(spec.num_classes), 3)
    filler_pool = [c for c in range(spec.num_classes) if c not in classes]
    rng.shuffle(filler_pool)
    all_classes = classes + [filler_pool[i % len(filler_pool)] for i in range(spec.objects - 3)]

    slot_pairs = [(0, 1), (0, 2), (1, 2)]
    mid = spec.frames // 2
    frames = [rng.randint(mid), mid, mid + 1 + rng.randint(spec.frames - mid - 1)]
    rng.shuffle(slot_pairs)
    contacts = {f: p for f, p in zip(frames, slot_pairs)}

    def tok(slots):
        return pair_token(all_classes[slots[0]], all_classes[slots[1]])

    ordered = [contacts[f] for f in frames]
    direction = "before" if rng.random() < 0.5 else "after"
    anchor = ordered[1]
    answer = ordered[0] if direction == "before" else ordered[2]
    other = ordered[2] if direction == "before" else ordered[0]

    question = ["what", "happens", direction, tok(anchor)]
    present_cls = set(all_classes)
    absent = _absent_pairs(rng, spec, present_cls, spec.num_options - 2)
    options = [tok(answer), tok(other)] + [pair_token(i, j) for i, j in absent]
    rng.shuffle(options)
    return all_classes, contacts, question, options


def _video_action(rng: Rng, spec: SyntheticSpec):
    classes = rng.sample(range(spec.num_classes), min(spec.objects, spec.num_classes))
    while len(classes) < spec.objects:
        classes.append(rng.choice([c for c in range(spec.num_classes) if c not in classes[:2]]))
    contacts = {rng.randint(spec.frames): (0, 1)}
    question = ["what", "event", "occurs"]
    return classes, contacts, question, None


def _video_count(rng: Rng, spec: SyntheticSpec):
    """Contact runs from frame 0 for `count` frames, so the label reads off
    the last contact frame's temporal stamp."""
    classes = rng.sample(range(spec.num_classes), min(spec.objects, spec.num_classes))
    while len(classes) < spec.objects:
        classes.append(rng.choice([c for c in range(spec.num_classes) if c not in classes[:2]]))
    max_count = min(9, spec.frames - 1)
    count = 1 + rng.randint(max_count)
    contacts = {f: (0, 1) for f in range(count)}
    question = ["how", "many", "times", pair_token(classes[0], classes[1])]
    return classes, contacts, question, None


def generate_synthetic(spec: SyntheticSpec, count: int | None = None):
    """Build a FeaturePack plus its latent record text; fully seed-determined.

    Labels are produced exclusively by oracle_answer over the latent record;
    a video whose question the oracle rejects is regenerated.
    """
    spec.validate()
    n_videos = spec.videos if count is None else count
    rng = Rng(spec.seed)
    protos = spec.prototypes()
    vocab = fixed_vocabulary(spec.num_classes)
    answer_set = all_pair_tokens(spec.num_classes)
    answer_index = {t: i for i, t in enumerate(answer_set)}

    builders = {"order": _video_order, "action": _video_action, "count": _video_count}
    build = builders[spec.task]

    videos, qa, latents = [], [], []
    for _ in range(n_videos):
        for _attempt in range(64):
            classes, contacts, question, options = build(rng, spec)
            boxes = _place_video(rng, spec, contacts)
            latent = LatentVideo(classes=classes, boxes=boxes)
            label_tok = oracle_answer(latent, spec.threshold, question)
            if label_tok is None:
                continue
            if spec.task == "order":
                if label_tok not in options:
                    continue
                label = options.index(label_tok)
            elif spec.task == "action":
                label = answer_index[label_tok]
            else:
                label = label_tok
            break
        else:
            raise SpecError("could not realize a video satisfying the oracle; spec infeasible")

        feats = np.zeros((spec.frames, spec.objects, spec.feature_dim))
        for f in range(spec.frames):
            for s in range(spec.objects):
                feats[f, s] = protos[classes[s]]
                if spec.sigma > 0:
                    feats[f, s] += rng.normal(0.0, spec.sigma, (spec.feature_dim,))
        frame_feats = rng.normal(0.0, 1.0, (spec.frames, spec.frame_feature_dim))

        vid = len(videos)
        videos.append(VideoFeatures(frames=frame_feats, objects=feats, boxes=boxes))
        latents.append(latent)
        q_ids = [vocab.word_id(t) for t in question]
        if spec.task == "order":
            opt_ids = [[vocab.word_id(t)] for t in options]
            qa.append(QaItem(vid, "multiple_choice", q_ids, opt_ids, label))
        elif spec.task == "action":
            qa.append(QaItem(vid, "open_ended", q_ids, None, label))
        else:
            qa.append(QaItem(vid, "count", q_ids, None, label))

    task_name = {"order": "multiple_choice", "action": "open_ended", "count": "count"}[spec.task]
    pack = FeaturePack(
        dataset=f"synthetic-{spec.task}",
        task=task_name,
        n_frames=spec.frames,
        k_objects=spec.objects,
        d_frame=spec.frame_feature_dim,
        d_object=spec.feature_dim,
        frame_w=spec.frame_w,
        frame_h=spec.frame_h,
        videos=videos,
        qa=qa,
        vocab_tokens=list(vocab.tokens),
        answer_set=answer_set if spec.task == "action" else [],
        num_options=spec.num_options if spec.task == "order" else 0,
    )
    latent_text = latent_to_text(LatentRecord(threshold=spec.threshold, videos=latents))
    return pack, latent_text


def audit_pack_labels(pack: FeaturePack, latent_text: str) -> int:
    """Re-run the oracle on the stored latent record and count label mismatches."""
    rec = parse_latent(latent_text)
    vocab = pack.vocabulary()
    mismatches = 0
    for qa in pack.qa:
        tokens = [vocab.token(w) for w in qa.question]
        got = oracle_answer(rec.videos[qa.video], rec.threshold, tokens)
        if qa.task == "multiple_choice":
            expect = vocab.token(qa.options[qa.label][0])
        elif qa.task == "open_ended":
            expect = pack.answer_set[qa.label]
        else:
            expect = qa.label
        if got != expect:
            mismatches += 1
    return mismatches
