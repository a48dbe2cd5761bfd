"""Synthetic speech-like corpora.

Every character of the word list gets a random prototype feature vector,
and so does silence.  An utterance is a word sequence drawn from a sparse
random bigram grammar; each character lasts a few frames, words are
separated by short silences, and Gaussian noise is added to every frame.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .ctc import read_matrix, write_matrix
from .errors import ConfigError, DataError

SILENCE = "<sil>"


@dataclass
class SynthSpec:
    words: list[str]
    n_utts: int = 200
    min_words: int = 2
    max_words: int = 5
    feat_dim: int = 16
    noise: float = 0.2
    min_dur: int = 2
    max_dur: int = 4
    max_silence: int = 3
    successors: int = 5
    seed: int = 0

    def __post_init__(self):
        if not self.words:
            raise ConfigError("synthetic spec needs at least one word")
        if len(set(self.words)) != len(self.words):
            raise ConfigError("duplicate words in synthetic spec")
        if not 1 <= self.min_words <= self.max_words:
            raise ConfigError("need 1 <= min_words <= max_words")
        if not 1 <= self.min_dur <= self.max_dur:
            raise ConfigError("need 1 <= min_dur <= max_dur")
        if self.noise < 0:
            raise ConfigError("noise must be non-negative")


@dataclass
class Utterance:
    utt_id: str
    features: np.ndarray
    words: list[str]
    frame_units: np.ndarray  # index into SynthCorpus.units per frame; 0 is silence


@dataclass
class SynthCorpus:
    units: list[str]
    prototypes: np.ndarray
    noise: float
    utterances: list[Utterance] = field(default_factory=list)

    @property
    def feat_dim(self) -> int:
        return self.prototypes.shape[1]

    def transcripts(self) -> list[list[str]]:
        return [u.words for u in self.utterances]

    def word_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for u in self.utterances:
            for w in u.words:
                counts[w] = counts.get(w, 0) + 1
        return counts

    def save(self, directory) -> None:
        os.makedirs(os.path.join(directory, "feats"), exist_ok=True)
        meta = {"units": self.units, "noise": self.noise, "prototypes": self.prototypes.tolist()}
        with open(os.path.join(directory, "meta.json"), "w", encoding="utf-8") as f:
            json.dump(meta, f)
        with open(os.path.join(directory, "text"), "w", encoding="utf-8") as text, \
                open(os.path.join(directory, "alignment"), "w", encoding="utf-8") as ali:
            for u in self.utterances:
                write_matrix(os.path.join(directory, "feats", f"{u.utt_id}.feat"), u.features)
                text.write(" ".join([u.utt_id, *u.words]) + "\n")
                ali.write(" ".join([u.utt_id, *map(str, u.frame_units.tolist())]) + "\n")

    @classmethod
    def load(cls, directory) -> SynthCorpus:
        try:
            with open(os.path.join(directory, "meta.json"), encoding="utf-8") as f:
                meta = json.load(f)
            texts = _read_table(os.path.join(directory, "text"))
            alis = _read_table(os.path.join(directory, "alignment"))
        except FileNotFoundError as e:
            raise DataError(f"corpus directory {directory}: {e.strerror}: {e.filename}") from None
        corpus = cls(meta["units"], np.array(meta["prototypes"]), meta["noise"])
        for utt_id, words in texts:
            feats = read_matrix(os.path.join(directory, "feats", f"{utt_id}.feat"))
            units = np.array([int(x) for x in dict(alis).get(utt_id, [])], dtype=np.int64)
            corpus.utterances.append(Utterance(utt_id, feats, words, units))
        return corpus


def _read_table(path) -> list[tuple[str, list[str]]]:
    with open(path, encoding="utf-8") as f:
        rows = [line.split() for line in f if line.strip()]
    return [(r[0], r[1:]) for r in rows]


def synth_generate(spec: SynthSpec) -> SynthCorpus:
    """Deterministic for a given spec (the seed is part of it)."""
    rng = np.random.default_rng(spec.seed)
    chars = sorted({c for w in spec.words for c in w})
    units = [SILENCE] + chars
    unit_of = {c: i + 1 for i, c in enumerate(chars)}
    prototypes = rng.normal(size=(len(units), spec.feat_dim))

    words = list(spec.words)
    n_succ = min(spec.successors, len(words))
    grammar = [rng.choice(len(words), size=n_succ, replace=False) for _ in words]

    corpus = SynthCorpus(units, prototypes, spec.noise)
    width = len(str(spec.n_utts))
    for n in range(spec.n_utts):
        length = int(rng.integers(spec.min_words, spec.max_words + 1))
        seq = [int(rng.integers(len(words)))]
        while len(seq) < length:
            seq.append(int(rng.choice(grammar[seq[-1]])))
        frame_units: list[int] = []
        frame_units += [0] * int(rng.integers(1, spec.max_silence + 1))
        for i, wid in enumerate(seq):
            if i:
                frame_units += [0] * int(rng.integers(0, spec.max_silence + 1))
            for c in words[wid]:
                frame_units += [unit_of[c]] * int(rng.integers(spec.min_dur, spec.max_dur + 1))
        frame_units += [0] * int(rng.integers(1, spec.max_silence + 1))
        fu = np.array(frame_units, dtype=np.int64)
        feats = prototypes[fu] + spec.noise * rng.normal(size=(len(fu), spec.feat_dim))
        corpus.utterances.append(Utterance(f"utt{n:0{width}d}", feats, [words[w] for w in seq], fu))
    return corpus


def spec_from_dict(d: dict) -> SynthSpec:
    known = set(SynthSpec.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown synth options: {sorted(unknown)}")
    return SynthSpec(**d)


def spec_to_dict(spec: SynthSpec) -> dict:
    return asdict(spec)
