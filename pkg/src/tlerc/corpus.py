"""Conversation corpora: JSONL format, vocabulary, splits, subsampling,
emotion-lexicon profiling and the planted-dynamics synthetic generator.

A corpus file holds one conversation per line:

    {"id": "c1", "utterances": [{"speaker": "A", "tokens": ["hi"],
                                 "label": "joy", "targets": {"valence": 0.3}}, ...]}

``label`` and ``targets`` are optional per utterance. Speakers must be
"A" or "B" (dyadic corpora only).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, FormatError

PAD_ID = 0
UNK_ID = 1
BOS_ID = 2
EOS_ID = 3
SPECIALS = ("<pad>", "<unk>", "<bos>", "<eos>")

EMOTION_TAGS = (
    "fear", "trust", "anger", "sadness", "anticipation",
    "joy", "surprise", "disgust", "positive", "negative",
)


@dataclass
class Utterance:
    speaker: str
    tokens: list[str]
    label: str | None = None
    targets: dict[str, float] | None = None


@dataclass
class Conversation:
    id: str
    utterances: list[Utterance]

    def __len__(self):
        return len(self.utterances)


class Corpus:
    """Immutable-after-load list of conversations."""

    def __init__(self, conversations: list[Conversation]):
        self.conversations = list(conversations)

    def __len__(self):
        return len(self.conversations)

    def __iter__(self):
        return iter(self.conversations)

    def __getitem__(self, i):
        return self.conversations[i]

    @property
    def n_dialogues(self) -> int:
        return len(self.conversations)

    @property
    def n_utterances(self) -> int:
        return sum(len(c) for c in self.conversations)

    def labels(self) -> list[str]:
        """Sorted distinct utterance labels present in the corpus."""
        seen = {u.label for c in self for u in c.utterances if u.label is not None}
        return sorted(seen)


def _parse_conversation(obj, line_no: int) -> Conversation:
    if not isinstance(obj, dict) or "id" not in obj or "utterances" not in obj:
        raise FormatError(f"line {line_no}: conversation needs 'id' and 'utterances'")
    utts = []
    speakers = set()
    for j, u in enumerate(obj["utterances"]):
        if not isinstance(u, dict) or "speaker" not in u or "tokens" not in u:
            raise FormatError(f"line {line_no}: utterance {j} needs 'speaker' and 'tokens'")
        speaker = u["speaker"]
        speakers.add(speaker)
        if speaker not in ("A", "B"):
            raise FormatError(
                f"line {line_no}: dyadic violation, speaker {speaker!r} not in {{A, B}}"
            )
        tokens = u["tokens"]
        if not isinstance(tokens, list) or not tokens or not all(isinstance(t, str) for t in tokens):
            raise FormatError(f"line {line_no}: utterance {j} tokens must be non-empty strings")
        targets = u.get("targets")
        if targets is not None:
            targets = {str(k): float(v) for k, v in targets.items()}
        utts.append(Utterance(speaker=speaker, tokens=list(tokens),
                              label=u.get("label"), targets=targets))
    if not utts:
        raise FormatError(f"line {line_no}: conversation has no utterances")
    return Conversation(id=str(obj["id"]), utterances=utts)


def load_corpus(path) -> Corpus:
    conversations = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"line {line_no}: invalid JSON ({e.msg})") from None
            conversations.append(_parse_conversation(obj, line_no))
    return Corpus(conversations)


def save_corpus(corpus: Corpus, path):
    with open(path, "w", encoding="utf-8") as fh:
        for conv in corpus:
            utts = []
            for u in conv.utterances:
                rec = {"speaker": u.speaker, "tokens": u.tokens}
                if u.label is not None:
                    rec["label"] = u.label
                if u.targets is not None:
                    rec["targets"] = {k: u.targets[k] for k in sorted(u.targets)}
                utts.append(rec)
            fh.write(json.dumps({"id": conv.id, "utterances": utts}, sort_keys=True))
            fh.write("\n")


# ---------------------------------------------------------------------------
# vocabulary


class Vocabulary:
    """Token ids with reserved PAD/UNK/BOS/EOS slots."""

    def __init__(self, token_to_id: dict[str, int], min_freq: int):
        self.token_to_id = dict(token_to_id)
        self.min_freq = min_freq
        self.id_to_token = {i: t for t, i in self.token_to_id.items()}

    def __len__(self):
        return len(self.token_to_id)

    @property
    def size(self) -> int:
        return len(self.token_to_id)

    def encode(self, tokens: list[str]) -> list[int]:
        get = self.token_to_id.get
        return [get(t, UNK_ID) for t in tokens]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.id_to_token.get(i, SPECIALS[UNK_ID]) for i in ids]

    def regular_tokens(self) -> list[str]:
        return [t for t, i in sorted(self.token_to_id.items(), key=lambda kv: kv[1])
                if i >= len(SPECIALS)]

    def to_dict(self) -> dict[str, int]:
        return dict(self.token_to_id)

    @classmethod
    def from_dict(cls, token_to_id: dict[str, int], min_freq: int = 1) -> "Vocabulary":
        return cls({str(t): int(i) for t, i in token_to_id.items()}, min_freq)


def build_vocab(corpus: Corpus, min_freq: int = 5) -> Vocabulary:
    """Tokens at or above ``min_freq``, ids by (frequency desc, token asc)."""
    if len(corpus) == 0:
        raise ContractError("build_vocab needs a non-empty corpus")
    counts: dict[str, int] = {}
    for conv in corpus:
        for u in conv.utterances:
            for tok in u.tokens:
                counts[tok] = counts.get(tok, 0) + 1
    kept = sorted(
        (t for t, c in counts.items() if c >= min_freq),
        key=lambda t: (-counts[t], t),
    )
    mapping = {tok: i for i, tok in enumerate(SPECIALS)}
    for offset, tok in enumerate(kept):
        mapping[tok] = len(SPECIALS) + offset
    return Vocabulary(mapping, min_freq)


# ---------------------------------------------------------------------------
# splits and subsampling


def make_splits(corpus: Corpus, val_fraction: float = 0.2, seed: int = 0):
    """Random dialogue-level (train, val) split; |val| = round(f * #D)."""
    n = len(corpus)
    if n < 2:
        raise ContractError(f"make_splits needs at least 2 dialogues, got {n}")
    n_val = int(round(val_fraction * n))
    if n_val < 1 or n_val >= n:
        raise ContractError(
            f"val_fraction {val_fraction} leaves an empty side for {n} dialogues"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    val_idx = set(int(i) for i in order[:n_val])
    train = [c for i, c in enumerate(corpus) if i not in val_idx]
    val = [c for i, c in enumerate(corpus) if i in val_idx]
    return Corpus(train), Corpus(val)


def _label_counts(conversations) -> dict[str, int]:
    counts: dict[str, int] = {}
    for conv in conversations:
        for u in conv.utterances:
            if u.label is not None:
                counts[u.label] = counts.get(u.label, 0) + 1
    return counts


def _l1_distance(counts: dict[str, int], reference: dict[str, float]) -> float:
    total = sum(counts.values())
    if total == 0:
        return sum(reference.values())
    return sum(abs(counts.get(lab, 0) / total - frac) for lab, frac in reference.items())


def subsample_training(train: Corpus, fraction: float, seed: int = 0) -> Corpus:
    """Greedy stratified subset of whole dialogues.

    Repeatedly adds the dialogue whose inclusion keeps the subset's
    utterance-label proportions closest (L1) to the full corpus, until at
    least ``fraction`` of the dialogues are selected. The seed only breaks
    ties by randomizing candidate order.
    """
    if not 0.0 < fraction <= 1.0:
        raise ContractError(f"fraction must lie in (0, 1], got {fraction}")
    n = len(train)
    if fraction == 1.0:
        return Corpus(list(train.conversations))
    target_n = max(1, int(np.ceil(fraction * n)))

    full = _label_counts(train)
    full_total = sum(full.values())
    reference = {lab: c / full_total for lab, c in full.items()} if full_total else {}

    rng = np.random.default_rng(seed)
    candidate_order = [int(i) for i in rng.permutation(n)]
    chosen: list[int] = []
    running: dict[str, int] = {}
    remaining = list(candidate_order)
    while len(chosen) < target_n:
        best_i = None
        best_d = None
        for i in remaining:
            trial = dict(running)
            for lab, c in _label_counts([train[i]]).items():
                trial[lab] = trial.get(lab, 0) + c
            d = _l1_distance(trial, reference)
            if best_d is None or d < best_d:
                best_d = d
                best_i = i
        remaining.remove(best_i)
        chosen.append(best_i)
        for lab, c in _label_counts([train[best_i]]).items():
            running[lab] = running.get(lab, 0) + c
    chosen.sort()
    return Corpus([train[i] for i in chosen])


# ---------------------------------------------------------------------------
# emotion lexicon profiling


class EmotionLexicon:
    def __init__(self, entries: dict[str, set[str]]):
        for tok, tags in entries.items():
            bad = tags - set(EMOTION_TAGS)
            if bad:
                raise FormatError(f"lexicon entry {tok!r} has unknown tags {sorted(bad)}")
        self.entries = {t: set(tags) for t, tags in entries.items()}

    def __contains__(self, token):
        return token in self.entries

    def __len__(self):
        return len(self.entries)

    def tags(self, token: str) -> set[str]:
        return self.entries.get(token, set())


def load_lexicon(path) -> EmotionLexicon:
    """Tab-separated token<TAB>emotion pairs, one per line."""
    entries: dict[str, set[str]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"lexicon line {line_no}: expected token<TAB>emotion")
            entries.setdefault(parts[0], set()).add(parts[1])
    return EmotionLexicon(entries)


def load_lemma_map(path) -> dict[str, str]:
    lemmas: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"lemma line {line_no}: expected token<TAB>lemma")
            lemmas[parts[0]] = parts[1]
    return lemmas


_STRIP_SUFFIXES = ("ing", "ed", "es", "s")


def _lemma_candidates(token: str, lemma_map: dict[str, str] | None):
    if lemma_map and token in lemma_map:
        yield lemma_map[token]
    for suf in _STRIP_SUFFIXES:
        if token.endswith(suf) and len(token) > len(suf) + 2:
            yield token[: -len(suf)]
    yield token


def lexicon_profile(vocab: Vocabulary, lexicon: EmotionLexicon,
                    lemma_map: dict[str, str] | None = None):
    """Count emotion-tag hits across the vocabulary.

    Returns (per-emotion counts, matched token count). Each vocabulary
    token is reduced to a lemma by table lookup, then a conservative
    suffix strip, then identity; the first candidate found in the lexicon
    wins.
    """
    counts = {tag: 0 for tag in EMOTION_TAGS}
    matched = 0
    for token in vocab.regular_tokens():
        hit = None
        for cand in _lemma_candidates(token, lemma_map):
            if cand in lexicon:
                hit = cand
                break
        if hit is None:
            continue
        matched += 1
        for tag in lexicon.tags(hit):
            counts[tag] += 1
    return counts, matched


# ---------------------------------------------------------------------------
# synthetic planted-dynamics corpus


@dataclass
class SynthConfig:
    n_conversations: int
    turns: int
    vocab_size: int
    n_emotions: int
    inertia_prob: float
    mirror_prob: float
    seed: int
    min_tokens: int = 3
    max_tokens: int = 6
    signal_strength: float = 0.8
    token_subrange: tuple[float, float] = (0.0, 1.0)
    id_prefix: str = "synth"

    @classmethod
    def from_dict(cls, obj: dict) -> "SynthConfig":
        known = {f: obj[f] for f in cls.__dataclass_fields__ if f in obj}
        if "token_subrange" in known:
            known["token_subrange"] = tuple(known["token_subrange"])
        return cls(**known)


def generate_synthetic(config: SynthConfig) -> Corpus:
    """Two-speaker hidden-emotion Markov corpus.

    Each speaker's next emotion keeps their own previous emotion with
    probability ``inertia_prob``, copies the other speaker's last emotion
    with probability ``mirror_prob``, and is resampled uniformly
    otherwise. Utterance tokens come from the active emotion's vocabulary
    block with probability ``signal_strength``, else uniformly, so the
    text carries the label signal and the turn sequence carries the
    transition signal. ``token_subrange`` restricts signal draws to a
    relative slice of each block, which lets two corpora over the same
    vocabulary overlap only partially (a desk-scale domain shift).
    """
    if config.inertia_prob + config.mirror_prob > 1.0 + 1e-12:
        raise ContractError("inertia_prob + mirror_prob must not exceed 1")
    if config.n_emotions < 2:
        raise ContractError("need at least 2 emotions")
    if config.vocab_size < config.n_emotions:
        raise ContractError("vocab_size must be at least n_emotions")
    if config.min_tokens < 1 or config.max_tokens < config.min_tokens:
        raise ContractError("bad utterance length bounds")
    lo, hi = config.token_subrange
    if not 0.0 <= lo < hi <= 1.0:
        raise ContractError(f"bad token_subrange {config.token_subrange}")

    rng = np.random.default_rng(config.seed)
    k = config.n_emotions
    width = max(2, len(str(config.vocab_size - 1)))
    words = [f"w{i:0{width}d}" for i in range(config.vocab_size)]
    blocks = np.array_split(np.arange(config.vocab_size), k)
    blocks = [b[int(np.floor(lo * len(b))):max(int(np.ceil(hi * len(b))),
                                               int(np.floor(lo * len(b))) + 1)]
              for b in blocks]

    conversations = []
    for ci in range(config.n_conversations):
        last: dict[str, int | None] = {"A": None, "B": None}
        utts = []
        prev_speaker = None
        for t in range(config.turns):
            speaker = "A" if t % 2 == 0 else "B"
            own = last[speaker]
            other = last[prev_speaker] if prev_speaker else None
            u = rng.random()
            if u < config.inertia_prob:
                emo = own if own is not None else int(rng.integers(k))
            elif u < config.inertia_prob + config.mirror_prob:
                emo = other if other is not None else int(rng.integers(k))
            else:
                emo = int(rng.integers(k))
            last[speaker] = emo
            prev_speaker = speaker

            n_tok = int(rng.integers(config.min_tokens, config.max_tokens + 1))
            tokens = []
            for _ in range(n_tok):
                if rng.random() < config.signal_strength:
                    tokens.append(words[int(rng.choice(blocks[emo]))])
                else:
                    tokens.append(words[int(rng.integers(config.vocab_size))])
            utts.append(Utterance(speaker=speaker, tokens=tokens, label=f"e{emo}"))
        conversations.append(Conversation(id=f"{config.id_prefix}-{config.seed}-{ci:05d}",
                                          utterances=utts))
    return Corpus(conversations)


def truncate_conversation(conv: Conversation, max_tokens: int = 30,
                          max_turns: int = 10) -> Conversation:
    """Desk-scale cap on unroll lengths; returns a trimmed copy."""
    utts = [Utterance(u.speaker, u.tokens[:max_tokens], u.label, u.targets)
            for u in conv.utterances[:max_turns]]
    return Conversation(id=conv.id, utterances=utts)
