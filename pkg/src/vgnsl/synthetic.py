"""Desk-scale stand-in for an image-caption corpus.

A small PCFG emits caption-like noun phrases ("a dog sitting on a red bench")
with binary gold trees, universal POS tags, a ground-truth concreteness value
for every word, and a synthetic scene vector per caption in which only the
caption's nouns are visible.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .core_types import (Caption, Corpus, parse_ptb, read_captions, read_treebank,
                         write_captions, write_treebank)

CONCRETE_NOUNS = {
    "elephant": 1.00, "giraffe": 0.99, "dog": 0.97, "cat": 0.97, "horse": 0.96,
    "pizza": 0.95, "bus": 0.95, "train": 0.94, "bench": 0.93, "man": 0.92,
    "woman": 0.92, "bird": 0.91, "boat": 0.90, "kite": 0.90, "plate": 0.89,
    "table": 0.88, "tree": 0.87, "street": 0.85, "beach": 0.84, "field": 0.82,
}
ABSTRACT_NOUNS = {
    "spot": 0.30, "chart": 0.28, "view": 0.25, "side": 0.24, "area": 0.22,
    "kind": 0.15, "moment": 0.12, "idea": 0.10,
}
ADJECTIVES = {
    "red": 0.45, "white": 0.45, "green": 0.42, "big": 0.38, "small": 0.36,
    "large": 0.35, "young": 0.32, "old": 0.30,
}
ADVERBS = {"very": 0.05, "really": 0.04}
TRANSITIVE = {"riding": 0.28, "holding": 0.27, "eating": 0.26, "carrying": 0.25, "watching": 0.22}
INTRANSITIVE = {"sitting": 0.22, "standing": 0.21, "walking": 0.20, "parked": 0.20, "looking": 0.15}
PREPOSITIONS = {"on": 0.05, "in": 0.03, "near": 0.04, "with": 0.02, "under": 0.05, "at": 0.01}
DETERMINERS = {"a": 0.0, "the": 0.0}

NOUNS = {**CONCRETE_NOUNS, **ABSTRACT_NOUNS}
CONCRETENESS = {**NOUNS, **ADJECTIVES, **ADVERBS, **TRANSITIVE, **INTRANSITIVE,
                **PREPOSITIONS, **DETERMINERS}
SCENE_NOISE_DIMS = 8
SCENE_NOISE = 0.05


@dataclass
class SyntheticBundle:
    corpus: Corpus
    scenes: np.ndarray  # (n_captions, feature_dim)
    concreteness: dict
    scene_vocab: list  # word visible in each scene dimension, None for noise dims

    @property
    def concrete_nouns(self) -> set:
        return set(CONCRETE_NOUNS)


class _Grammar:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def pick(self, table: dict) -> str:
        words = list(table)
        return words[int(self.rng.integers(len(words)))]

    def coin(self, p: float) -> bool:
        return bool(self.rng.random() < p)

    def noun(self) -> str:
        table = CONCRETE_NOUNS if self.coin(0.75) else ABSTRACT_NOUNS
        return f"(NOUN {self.pick(table)})"

    def nominal(self, n_adj: int = 0) -> str:
        r = self.rng.random()
        if n_adj < 2 and r < 0.30:
            return f"(NOM (ADJ {self.pick(ADJECTIVES)}) {self.nominal(n_adj + 1)})"
        if n_adj < 2 and r < 0.38:
            adjp = f"(ADJP (ADV {self.pick(ADVERBS)}) (ADJ {self.pick(ADJECTIVES)}))"
            return f"(NOM {adjp} {self.nominal(n_adj + 1)})"
        return self.noun()

    def np(self, depth: int = 0) -> str:
        base = f"(NP (DET {self.pick(DETERMINERS)}) {self.nominal()})"
        if depth < 1 and self.coin(0.15):
            return f"(NP {base} {self.pp(depth + 1)})"
        return base

    def pp(self, depth: int = 0) -> str:
        return f"(PP (ADP {self.pick(PREPOSITIONS)}) {self.np(depth)})"

    def vp(self, depth: int = 0) -> str:
        r = self.rng.random()
        if r < 0.45:
            return f"(VP (VERB {self.pick(TRANSITIVE)}) {self.np(depth + 1)})"
        if r < 0.85:
            return f"(VP (VERB {self.pick(INTRANSITIVE)}) {self.pp(depth + 1)})"
        return f"(VP (VERB {self.pick(INTRANSITIVE)}))"

    def caption(self) -> str:
        if self.coin(0.8):
            return f"(NP {self.np()} {self.vp()})"
        return self.np()


def scene_features(words, rng: np.random.Generator) -> np.ndarray:
    nouns = list(NOUNS)
    feats = rng.normal(0.0, SCENE_NOISE, size=len(nouns) + SCENE_NOISE_DIMS)
    for w in words:
        if w in NOUNS:
            feats[nouns.index(w)] += NOUNS[w]
    return feats


def gen_synthetic_corpus(grammar_seed: int, size: int) -> SyntheticBundle:
    if size < 1:
        raise ValueError("size must be >= 1")
    rng = np.random.default_rng(grammar_seed)
    grammar = _Grammar(rng)
    captions, gold, scenes = [], [], []
    for _ in range(size):
        tree = parse_ptb(grammar.caption())
        captions.append(Caption.from_words(tree.words, tree.tags))
        gold.append(tree)
        scenes.append(scene_features(tree.words, rng))
    return SyntheticBundle(Corpus(captions, gold), np.array(scenes), dict(CONCRETENESS),
                           list(NOUNS) + [None] * SCENE_NOISE_DIMS)


# ---------------------------------------------------------------------------
# Bundle files

CAPTIONS_FILE = "captions.txt"
GOLD_FILE = "gold.txt"
SCENES_FILE = "scenes.txt"
CONCRETENESS_FILE = "concreteness.tsv"


def write_scenes(path, scenes: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row in scenes:
            f.write(" ".join(repr(float(x)) for x in row) + "\n")


def read_scenes(path) -> np.ndarray:
    with open(path, encoding="utf-8") as f:
        rows = [[float(x) for x in line.split()] for line in f if line.strip()]
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise ValueError(f"{path}: scene vectors have differing widths {sorted(widths)}")
    return np.array(rows)


def write_norms(path, table: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for w, v in table.items():
            f.write(f"{w}\t{v!r}\n")


def read_norms(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as f:
        for k, line in enumerate(f, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}: line {k}: expected 'token<TAB>score'")
            out[parts[0]] = float(parts[1])
    if not out:
        raise ValueError(f"{path}: no norms found")
    return out


def write_bundle(bundle: SyntheticBundle, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"captions": out / CAPTIONS_FILE, "gold": out / GOLD_FILE,
             "scenes": out / SCENES_FILE, "concreteness": out / CONCRETENESS_FILE}
    write_captions(paths["captions"], bundle.corpus.captions)
    write_treebank(paths["gold"], bundle.corpus.gold)
    write_scenes(paths["scenes"], bundle.scenes)
    write_norms(paths["concreteness"], bundle.concreteness)
    return paths


def read_bundle(path) -> SyntheticBundle:
    """Read a bundle directory, or a bare caption file with optional
    neighbours (gold/scenes/concreteness are picked up when present)."""
    path = Path(path)
    base = path if path.is_dir() else path.parent
    captions = path / CAPTIONS_FILE if path.is_dir() else path
    corpus = read_captions(captions)
    gold_path = base / GOLD_FILE
    if gold_path.exists():
        corpus = Corpus(corpus.captions, read_treebank(gold_path))
    scenes_path = base / SCENES_FILE
    scenes = read_scenes(scenes_path) if scenes_path.exists() else None
    if scenes is not None and len(scenes) != len(corpus):
        raise ValueError(f"{scenes_path}: {len(scenes)} scenes for {len(corpus)} captions")
    norms_path = base / CONCRETENESS_FILE
    norms = read_norms(norms_path) if norms_path.exists() else None
    return SyntheticBundle(corpus, scenes, norms, [])
