"""Corpus ingestion: novels, entity lexicons, passages and comments.

Chapters are tokenized character-by-character by default (CJK-safe);
whitespace-word mode is available for Latin-script fixtures. Filtering and
merging rules operate on token spans within a chapter.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

PAD, BOS, EOS, UNK, MASK, CLS = 0, 1, 2, 3, 4, 5
SPECIALS = ["<pad>", "<bos>", "<eos>", "<unk>", "<mask>", "<cls>"]


class CorpusParseError(ValueError):
    """Malformed input file; message carries the file and line locus."""


class ReferenceError_(ValueError):
    """Dangling entity id, out-of-range chapter index, or duplicate alias."""


def tokenize(text: str, mode: str = "char") -> list[str]:
    """Character tokens by default; `mode='word'` splits on whitespace."""
    if mode == "word":
        return text.split()
    return [ch for ch in text if not ch.isspace()]


@dataclass
class Chapter:
    index: int                       # 1-based ordinal after clustering
    text: str                        # raw text, paragraph separators intact
    tokens: list[str]
    paragraphs: list[tuple[int, int]]  # token spans of paragraphs
    source_indices: list[int] = field(default_factory=list)


@dataclass
class Novel:
    id: str
    title: str
    chapters: list[Chapter]

    @property
    def num_chapters(self) -> int:
        return len(self.chapters)


@dataclass
class LexiconEntry:
    entity_id: int
    name: str
    aliases: list[str]
    kind: str


@dataclass
class EntityLexicon:
    entries: list[LexiconEntry]

    @property
    def num_entities(self) -> int:
        return len(self.entries)

    def alias_map(self, mode: str = "char") -> dict[tuple[str, ...], int]:
        out: dict[tuple[str, ...], int] = {}
        for e in self.entries:
            for alias in [e.name] + e.aliases:
                key = tuple(tokenize(alias, mode))
                if key in out and out[key] != e.entity_id:
                    raise ReferenceError_(
                        f"alias {alias!r} maps to entities {out[key]} and {e.entity_id}")
                out[key] = e.entity_id
        return out


@dataclass
class Mention:
    entity_id: int
    chapter_index: int
    span: tuple[int, int]            # token [start, end)


@dataclass
class Comment:
    text: list[str]
    upvotes: int


@dataclass
class Passage:
    id: str
    chapter_index: int
    span: tuple[int, int]
    text: list[str]
    entity_ids: set[int] = field(default_factory=set)
    comments: list[Comment] = field(default_factory=list)


@dataclass
class Vocabulary:
    token_to_id: dict[str, int]
    id_to_token: list[str]

    def __len__(self):
        return len(self.id_to_token)

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.token_to_id.get(t, UNK) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self.id_to_token[i] for i in ids
                if i not in (PAD, BOS, EOS)]

    def content_hash(self) -> str:
        import hashlib
        return hashlib.sha256("\x00".join(self.id_to_token).encode()).hexdigest()[:16]


def _split_paragraphs(text: str) -> list[str]:
    parts = re.split(r"\n\s*\n", text)
    return [p for p in parts if p.strip()]


def _make_chapter(index: int, text: str, mode: str,
                  source_indices: list[int] | None = None,
                  fallback_window: int = 100) -> Chapter:
    paras = _split_paragraphs(text)
    tokens: list[str] = []
    spans: list[tuple[int, int]] = []
    for p in paras:
        ptoks = tokenize(p, mode)
        if ptoks:
            spans.append((len(tokens), len(tokens) + len(ptoks)))
            tokens.extend(ptoks)
    if len(spans) <= 1 and len(tokens) > fallback_window:
        # no separators in source: fall back to fixed token windows
        spans = [(s, min(s + fallback_window, len(tokens)))
                 for s in range(0, len(tokens), fallback_window)]
    return Chapter(index=index, text=text, tokens=tokens, paragraphs=spans,
                   source_indices=source_indices or [index])


def load_corpus(novel_path, lexicon_path, passages_path,
                mode: str = "char") -> tuple[Novel, EntityLexicon, list[Passage]]:
    """Load and cross-validate the three input files."""
    novel = load_novel(novel_path, mode)
    lexicon = load_lexicon(lexicon_path)
    lexicon.alias_map(mode)  # raises on duplicate aliases
    passages = load_passages(passages_path, novel, mode)
    return novel, lexicon, passages


def load_novel(path, mode: str = "char") -> Novel:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CorpusParseError(f"{path}:{e.lineno}: {e.msg}") from e
    try:
        chapters = sorted(raw["chapters"], key=lambda c: c["index"])
        built = [_make_chapter(i + 1, c["text"], mode, [c["index"]])
                 for i, c in enumerate(chapters)]
        novel = Novel(id=str(raw["id"]), title=raw.get("title", ""), chapters=built)
    except (KeyError, TypeError) as e:
        raise CorpusParseError(f"{path}: missing field {e}") from e
    for ch in novel.chapters:
        if not ch.tokens:
            raise CorpusParseError(f"{path}: chapter {ch.index} is empty")
    return novel


def load_lexicon(path) -> EntityLexicon:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CorpusParseError(f"{path}:{e.lineno}: {e.msg}") from e
    entries = []
    for ent in raw.get("entities", []):
        try:
            entries.append(LexiconEntry(entity_id=int(ent["id"]), name=ent["name"],
                                        aliases=list(ent.get("aliases", [])),
                                        kind=ent.get("kind", "person")))
        except (KeyError, TypeError) as e:
            raise CorpusParseError(f"{path}: malformed entity entry: {e}") from e
    entries.sort(key=lambda e: e.entity_id)
    ids = [e.entity_id for e in entries]
    if ids != list(range(len(ids))):
        raise ReferenceError_(f"{path}: entity ids must be dense 0..n-1, got {ids}")
    for e in entries:
        if any(not a for a in e.aliases):
            raise ReferenceError_(f"{path}: entity {e.entity_id} has an empty alias")
    return EntityLexicon(entries)


def load_passages(path, novel: Novel, mode: str = "char") -> list[Passage]:
    path = Path(path)
    passages = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusParseError(f"{path}:{lineno}: {e.msg}") from e
            ch_idx = int(raw["chapter"])
            if not 1 <= ch_idx <= novel.num_chapters:
                raise ReferenceError_(
                    f"{path}:{lineno}: chapter {ch_idx} out of range 1..{novel.num_chapters}")
            chapter = novel.chapters[ch_idx - 1]
            start, end = int(raw["start"]), int(raw["end"])
            if not (0 <= start < end <= len(chapter.tokens)):
                raise ReferenceError_(
                    f"{path}:{lineno}: span [{start},{end}) outside chapter "
                    f"{ch_idx} of {len(chapter.tokens)} tokens")
            comments = [Comment(text=tokenize(c["text"], mode), upvotes=int(c["upvotes"]))
                        for c in raw.get("comments", [])]
            for c in comments:
                if not c.text:
                    raise CorpusParseError(f"{path}:{lineno}: empty comment text")
                if c.upvotes < 0:
                    raise CorpusParseError(f"{path}:{lineno}: negative upvotes")
            passages.append(Passage(id=raw.get("id", f"p{lineno}"), chapter_index=ch_idx,
                                    span=(start, end), text=chapter.tokens[start:end],
                                    comments=comments))
    return passages


def cluster_chapters(novel: Novel, min_chapter_tokens: int = 1000,
                     mode: str = "char") -> Novel:
    """Greedy left-to-right merge of short chapters.

    Consecutive chapters are merged until each group reaches the minimum
    token count; a short trailing group is absorbed backward into the
    previous one. Indices are renumbered 1..T; source_indices record the
    original ordinals.
    """
    groups: list[list[Chapter]] = []
    current: list[Chapter] = []
    count = 0
    for ch in novel.chapters:
        current.append(ch)
        count += len(ch.tokens)
        if count >= min_chapter_tokens:
            groups.append(current)
            current, count = [], 0
    if current:
        if groups:
            groups[-1].extend(current)
        else:
            groups.append(current)
    merged = []
    for i, grp in enumerate(groups):
        text = "\n\n".join(ch.text for ch in grp)
        src = [s for ch in grp for s in ch.source_indices]
        merged.append(_make_chapter(i + 1, text, mode, src))
    return Novel(id=novel.id, title=novel.title, chapters=merged)


def remap_passages(passages: list[Passage], original: Novel,
                   clustered: Novel) -> list[Passage]:
    """Translate passage coordinates from original chapters to clustered ones."""
    # original ordinal -> (new chapter index, token offset)
    where: dict[int, tuple[int, int]] = {}
    for ch in clustered.chapters:
        offset = 0
        for src in ch.source_indices:
            where[src] = (ch.index, offset)
            offset += len(original.chapters[src - 1].tokens)
    out = []
    for p in passages:
        src = original.chapters[p.chapter_index - 1].source_indices[0]
        new_idx, offset = where[src]
        chapter = clustered.chapters[new_idx - 1]
        start, end = p.span[0] + offset, p.span[1] + offset
        out.append(Passage(id=p.id, chapter_index=new_idx, span=(start, end),
                           text=chapter.tokens[start:end],
                           entity_ids=set(p.entity_ids), comments=p.comments))
    return out


def match_mentions(novel: Novel, lexicon: EntityLexicon,
                   mode: str = "char") -> list[Mention]:
    """Leftmost-longest non-overlapping alias matches per chapter."""
    amap = lexicon.alias_map(mode)
    if not amap:
        return []
    by_len = sorted({len(k) for k in amap}, reverse=True)
    mentions = []
    for ch in novel.chapters:
        toks = ch.tokens
        i = 0
        n = len(toks)
        while i < n:
            hit = None
            for L in by_len:
                if i + L <= n:
                    key = tuple(toks[i:i + L])
                    if key in amap:
                        hit = (amap[key], L)
                        break
            if hit:
                eid, L = hit
                mentions.append(Mention(entity_id=eid, chapter_index=ch.index,
                                        span=(i, i + L)))
                i += L
            else:
                i += 1
    return mentions


def attach_entities(passages: list[Passage], mentions: list[Mention]) -> list[Passage]:
    """Fill passage.entity_ids from mentions overlapping the passage span."""
    by_chapter: dict[int, list[Mention]] = {}
    for m in mentions:
        by_chapter.setdefault(m.chapter_index, []).append(m)
    for p in passages:
        s, e = p.span
        p.entity_ids = {m.entity_id for m in by_chapter.get(p.chapter_index, [])
                        if m.span[0] < e and m.span[1] > s}
    return passages


def overlap_rate(a: tuple[int, int], b: tuple[int, int]) -> float:
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]))
    shorter = min(a[1] - a[0], b[1] - b[0])
    return inter / shorter if shorter else 0.0


def merge_passages(passages: list[Passage],
                   overlap_threshold: float = 0.5) -> list[Passage]:
    """Merge same-chapter passages whose span overlap exceeds the threshold.

    Merging is transitive: the loop re-checks after every merge, so the
    output has no same-chapter pair above the threshold. The merged span
    is the union; comments and entity sets are concatenated/united.
    """
    pool = sorted(passages, key=lambda p: (p.chapter_index, p.span))
    changed = True
    while changed:
        changed = False
        for i in range(len(pool)):
            for j in range(i + 1, len(pool)):
                a, b = pool[i], pool[j]
                if a.chapter_index != b.chapter_index:
                    continue
                if overlap_rate(a.span, b.span) > overlap_threshold:
                    span = (min(a.span[0], b.span[0]), max(a.span[1], b.span[1]))
                    pool[i] = Passage(id=a.id, chapter_index=a.chapter_index,
                                      span=span, text=[],
                                      entity_ids=a.entity_ids | b.entity_ids,
                                      comments=a.comments + b.comments)
                    del pool[j]
                    changed = True
                    break
            if changed:
                break
    return sorted(pool, key=lambda p: (p.chapter_index, p.span))


def refresh_passage_text(passages: list[Passage], novel: Novel) -> list[Passage]:
    for p in passages:
        p.text = novel.chapters[p.chapter_index - 1].tokens[p.span[0]:p.span[1]]
    return passages


def filter_passages(passages: list[Passage]) -> list[Passage]:
    """Keep passages with >=1 entity and >=3 comments; drop the bottom 20%
    of each passage's comments by upvotes (floor rounding)."""
    kept = []
    for p in passages:
        if not p.entity_ids or len(p.comments) < 3:
            continue
        ranked = sorted(p.comments, key=lambda c: -c.upvotes)
        n_drop = int(0.2 * len(ranked))
        p.comments = ranked[:len(ranked) - n_drop] if n_drop else ranked
        kept.append(p)
    return kept


def build_vocab(token_streams, min_freq: int = 1) -> Vocabulary:
    """Frequency-then-lexicographic id assignment after the special tokens."""
    freq = Counter()
    for stream in token_streams:
        freq.update(stream)
    toks = [t for t, c in freq.items() if c >= min_freq]
    toks.sort(key=lambda t: (-freq[t], t))
    id_to_token = SPECIALS + toks
    return Vocabulary(token_to_id={t: i for i, t in enumerate(id_to_token)},
                      id_to_token=id_to_token)
