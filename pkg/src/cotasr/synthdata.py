"""Synthetic annotated utterances with pseudo-acoustic features.

Every character (space included) has a fixed random prototype vector; an
utterance renders as each character's prototype held for 2-5 frames plus
Gaussian noise.  Homophone pairs are two entity spellings from different
domains that share one acoustic spelling, so only the domain (cue words in
the utterance, or a supplied context) tells them apart.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .ctc import min_frames
from .errors import ConfigError
from .numerics import Rng
from .vocab import DEFAULT_VOCAB, Vocabulary

D_FEAT = 16
MIN_DURATION = 2
MAX_DURATION = 5
PROTOTYPE_SEED = 7
FORMAT_VERSION = 1

GENERIC_WORDS = [
    "the", "i", "need", "my", "please", "about", "for", "a", "to", "and", "with",
    "check", "call", "today", "some", "new", "is", "it", "we", "can", "you", "more",
]

DOMAINS = {
    "pharmacy": {
        "cues": ["dose", "refill", "pills", "tablet", "prescription", "pharmacist"],
        "entities": ["aspirin", "zyrtec", "lipitor", "xanax", "ibuprofen", "prozac"],
    },
    "banking": {
        "cues": ["loan", "account", "deposit", "transfer", "balance", "credit"],
        "entities": ["visa", "paypal", "bit warden", "mastercard", "venmo", "chase"],
    },
    "gaming": {
        "cues": ["level", "console", "player", "quest", "boss", "controller"],
        "entities": ["minecraft", "zelda", "fortnite", "halo", "tetris", "dark souls"],
    },
    "nutrition": {
        "cues": ["calories", "protein", "diet", "meal", "vitamins", "snack"],
        "entities": ["quinoa", "kale", "spirulina", "avocado", "oatmeal", "tofu"],
    },
    "surgery": {
        "cues": ["incision", "anesthesia", "surgeon", "operation", "recovery", "clinic"],
        "entities": ["scalpel", "stent", "suture", "bypass", "catheter", "laparoscopy"],
    },
    "wellness": {
        "cues": ["stress", "sleep", "relax", "breathing", "massage", "mindful"],
        "entities": ["yoga", "pilates", "reiki", "tai chi", "meditation", "sauna"],
    },
}

# (spelling a, domain a, spelling b, domain b); both render as spelling a.
HOMOPHONE_PAIRS = [
    ("zantac", "pharmacy", "zantak", "gaming"),
    ("kora", "banking", "cora", "wellness"),
    ("lumen", "banking", "lumin", "surgery"),
    ("rexal", "pharmacy", "rexel", "surgery"),
    ("nutra", "nutrition", "nutro", "gaming"),
    ("zenith", "wellness", "zenyth", "nutrition"),
]


@dataclass
class Lexicon:
    common: list[str]
    domains: dict[str, dict[str, list[str]]]
    homophones: list[tuple[str, str, str, str]]

    @classmethod
    def default(cls) -> "Lexicon":
        return cls(
            list(GENERIC_WORDS),
            {k: {"cues": list(v["cues"]), "entities": list(v["entities"])} for k, v in DOMAINS.items()},
            list(HOMOPHONE_PAIRS),
        )

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "Lexicon":
        data = json.loads(Path(path).read_text())
        return cls(data["common"], data["domains"], [tuple(p) for p in data.get("homophones", [])])

    def to_dict(self) -> dict:
        return {"common": self.common, "domains": self.domains, "homophones": [list(p) for p in self.homophones]}

    def validate(self, vocab: Vocabulary = DEFAULT_VOCAB) -> None:
        if not self.domains or not self.common:
            raise ConfigError("lexicon needs common words and at least one domain")
        for words in self.all_words():
            vocab.check(words)
        for a, da, b, db in self.homophones:
            if a == b or len(a) != len(b):
                raise ConfigError(f"homophone pair {a!r}/{b!r} must be distinct equal-length spellings")
            if da not in self.domains or db not in self.domains:
                raise ConfigError(f"homophone pair {a!r}/{b!r} names an unknown domain")

    def all_words(self) -> list[str]:
        out = list(self.common)
        for d in self.domains.values():
            out += d["cues"] + d["entities"]
        for a, _, b, _ in self.homophones:
            out += [a, b]
        return out

    def entity_strings(self) -> set[str]:
        out = {e for d in self.domains.values() for e in d["entities"]}
        for a, _, b, _ in self.homophones:
            out |= {a, b}
        return out

    def acoustic_spelling(self) -> dict[str, str]:
        """Maps the b-member of each homophone pair to the spelling it is rendered with."""
        return {b: a for a, _, b, _ in self.homophones}

    def homophone_members(self, domain: str) -> list[tuple[str, str]]:
        """(entity for this domain, its homophone partner)."""
        out = []
        for a, da, b, db in self.homophones:
            if da == domain:
                out.append((a, b))
            if db == domain:
                out.append((b, a))
        return out

    def flat_words(self) -> list[str]:
        """Single words usable for context corruption."""
        return sorted({w for phrase in self.all_words() for w in phrase.split()})


@dataclass
class CorpusConfig:
    n_utterances: int = 2000
    seed: int = 1
    min_words: int = 3
    max_words: int = 8
    entity_rate: float = 0.9
    homophone_fraction: float = 0.3
    cue_rate: float = 0.75
    noise_sigma: float = 0.1
    ctc_stride: int = 2


@dataclass
class AnnotatedUtterance:
    id: str
    words: list[str]
    entities: list[tuple[int, int, str]]  # [start, end) word indices + entity string
    domain: str
    context: str
    features: np.ndarray
    homophone: bool = False

    @property
    def transcript(self) -> str:
        return " ".join(self.words)

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]


def prototypes(vocab: Vocabulary = DEFAULT_VOCAB, d_feat: int = D_FEAT) -> dict[str, np.ndarray]:
    table = Rng(PROTOTYPE_SEED).normal((len(vocab.characters), d_feat))
    return {c: table[i] for i, c in enumerate(vocab.characters)}


_PROTOTYPES = prototypes()


def acoustic_text(words: list[str], lexicon: Lexicon | None = None) -> str:
    spell = (lexicon or Lexicon.default()).acoustic_spelling()
    return " ".join(spell.get(w, w) for w in words)


def render_speech(
    transcript: str,
    seed: int,
    noise_sigma: float,
    lexicon: Lexicon | None = None,
    durations: list[int] | None = None,
    ctc_stride: int | None = None,
) -> np.ndarray:
    """Render ``transcript`` into a (frames, 16) feature matrix.

    Homophone b-members are rendered with their partner's spelling.
    ``ctc_stride`` redraws durations until a stride-``S`` encoder yields at
    least as many frames as CTC needs for the transcript.
    """
    DEFAULT_VOCAB.check(transcript)
    text = acoustic_text(transcript.split(" "), lexicon) if transcript else ""
    rng = Rng(seed)
    if durations is None:
        needed = min_frames(list(transcript))
        for _ in range(100):
            durations = [int(d) for d in rng.integers(MIN_DURATION, MAX_DURATION + 1, len(text))]
            if ctc_stride is None or math.ceil(sum(durations) / ctc_stride) >= needed:
                break
        else:
            durations = [MAX_DURATION] * len(text)
    elif len(durations) != len(text):
        raise ValueError("one duration per character required")
    blocks = [np.repeat(_PROTOTYPES[c][None, :], d, axis=0) for c, d in zip(text, durations)]
    feats = np.concatenate(blocks, axis=0) if blocks else np.zeros((0, D_FEAT))
    if noise_sigma > 0:
        feats = feats + rng.normal(feats.shape, scale=noise_sigma)
    return feats


def synth_context(domain: str, entities: list[str]) -> str:
    """Rule-based context block: names the domain and every entity, never the transcript."""
    if not entities:
        return f"{domain} talk"
    return f"{domain} talk on {', '.join(entities)}"


def _sample_utterance(i: int, cfg: CorpusConfig, lex: Lexicon, rng: Rng) -> AnnotatedUtterance:
    domain = rng.choice(sorted(lex.domains))
    dom = lex.domains[domain]
    n_words = int(rng.integers(cfg.min_words, cfg.max_words + 1))
    homophone = bool(lex.homophone_members(domain)) and rng.random() < cfg.homophone_fraction
    units: list[tuple[str, bool]] = []
    if homophone:
        units.append((rng.choice(lex.homophone_members(domain))[0], True))
    elif rng.random() < cfg.entity_rate:
        units.append((rng.choice(dom["entities"]), True))
        if n_words >= 5 and rng.random() < 0.2:
            second = rng.choice(dom["entities"])
            if second != units[0][0]:
                units.append((second, True))
    if rng.random() < cfg.cue_rate:
        n_cues = min(1 + int(rng.random() < 0.4), len(dom["cues"]))
        for j in rng.permutation(len(dom["cues"]))[:n_cues]:
            units.append((dom["cues"][j], False))
    # filler words are drawn without replacement so an utterance rarely repeats itself
    used = sum(len(u.split()) for u, _ in units)
    fillers = rng.permutation(len(lex.common))
    for k in range(max(n_words - used, 0)):
        units.append((lex.common[fillers[k % len(fillers)]], False))
    order = rng.permutation(len(units))
    words: list[str] = []
    spans: list[tuple[int, int, str]] = []
    for j in order:
        text, is_entity = units[j]
        parts = text.split()
        if is_entity:
            spans.append((len(words), len(words) + len(parts), text))
        words += parts
    entities = [s[2] for s in spans]
    transcript = " ".join(words)
    feats = render_speech(transcript, rng.child(1).seed, cfg.noise_sigma, lex, ctc_stride=cfg.ctc_stride)
    return AnnotatedUtterance(f"utt{i:06d}", words, spans, domain, synth_context(domain, entities), feats, homophone)


def synth_corpus(seed: int, n_utterances: int, config: CorpusConfig | None = None,
                 lexicon: Lexicon | None = None) -> list[AnnotatedUtterance]:
    cfg = config or CorpusConfig()
    if n_utterances < 1:
        raise ConfigError("n_utterances must be >= 1")
    lex = lexicon or Lexicon.default()
    lex.validate()
    root = Rng(seed)
    return [_sample_utterance(i, cfg, lex, root.child(i)) for i in range(n_utterances)]


def corrupt_words(words: list[str], error_rate: float, rng: Rng, pool: list[str]) -> tuple[list[str], int]:
    """Independently corrupt each word with probability ``error_rate``.

    The operation is drawn uniformly from insert (a random word before it),
    delete, and substitute (a different random word).
    """
    if not 0.0 <= error_rate <= 1.0:
        raise ValueError("error_rate must lie in [0, 1]")
    out: list[str] = []
    touched = 0
    for w in words:
        if rng.random() >= error_rate:
            out.append(w)
            continue
        touched += 1
        op = int(rng.integers(0, 3))
        if op == 0:
            out += [rng.choice(pool), w]
        elif op == 2:
            sub = rng.choice(pool)
            while sub == w and len(pool) > 1:
                sub = rng.choice(pool)
            out.append(sub)
    return out, touched


def corrupt_context(context: str, error_rate: float, seed: int, lexicon: Lexicon | None = None) -> str:
    pool = (lexicon or Lexicon.default()).flat_words()
    words, _ = corrupt_words(context.split(), error_rate, Rng(seed), pool)
    return " ".join(words)


# --- corpus files -----------------------------------------------------------

def utterance_to_record(u: AnnotatedUtterance) -> dict:
    feats = np.ascontiguousarray(u.features, dtype="<f8")
    return {
        "id": u.id,
        "domain": u.domain,
        "transcript": u.transcript,
        "entities": [[s, e, t] for s, e, t in u.entities],
        "context": u.context,
        "homophone": u.homophone,
        "features": {"rows": feats.shape[0], "cols": feats.shape[1], "hex": feats.tobytes().hex()},
    }


def record_to_utterance(rec: dict) -> AnnotatedUtterance:
    f = rec["features"]
    feats = np.frombuffer(bytes.fromhex(f["hex"]), dtype="<f8").reshape(f["rows"], f["cols"]).astype(np.float64)
    words = rec["transcript"].split(" ") if rec["transcript"] else []
    return AnnotatedUtterance(
        rec["id"], words, [(int(s), int(e), t) for s, e, t in rec["entities"]],
        rec["domain"], rec["context"], feats, bool(rec.get("homophone", False)),
    )


def write_corpus(directory: str | os.PathLike, corpus: list[AnnotatedUtterance], manifest: dict) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "records.jsonl", "w") as fh:
        for u in corpus:
            fh.write(json.dumps(utterance_to_record(u), sort_keys=True) + "\n")
    meta = {"format_version": FORMAT_VERSION, "n_utterances": len(corpus), **manifest}
    (d / "manifest.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_corpus(directory: str | os.PathLike) -> list[AnnotatedUtterance]:
    d = Path(directory)
    path = d / "records.jsonl" if d.is_dir() else d
    with open(path) as fh:
        return [record_to_utterance(json.loads(line)) for line in fh if line.strip()]


def config_dict(cfg: CorpusConfig) -> dict:
    return asdict(cfg)
