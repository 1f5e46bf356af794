"""Corpus loading, vocabulary, batching and a synthetic text generator."""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyFile, InvalidSpec, MalformedLine

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"


class Vocab:
    """Token <-> id map; ids 0 and 1 are PAD and UNK, the rest follow first occurrence."""

    def __init__(self, tokens=()):
        self.itos = [PAD_TOKEN, UNK_TOKEN]
        self.stoi = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
        for tok in tokens:
            self.add(tok)

    def add(self, tok):
        if tok not in self.stoi:
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)
        return self.stoi[tok]

    def encode(self, tokens):
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids):
        return [self.itos[i] for i in ids if i != PAD]

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos


@dataclass
class Dataset:
    token_ids: np.ndarray  # [N, max_len] int64, PAD-padded
    labels: np.ndarray  # [N] int64
    n_classes: int
    vocab: Vocab
    label_names: list = field(default_factory=list)

    @property
    def max_len(self):
        return self.token_ids.shape[1]

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        return Dataset(self.token_ids[idx], self.labels[idx], self.n_classes, self.vocab, list(self.label_names))

    def __eq__(self, other):
        return (
            isinstance(other, Dataset)
            and self.n_classes == other.n_classes
            and self.vocab == other.vocab
            and self.label_names == other.label_names
            and np.array_equal(self.token_ids, other.token_ids)
            and np.array_equal(self.labels, other.labels)
        )


def _pad(seqs, max_len):
    out = np.full((len(seqs), max_len), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        s = s[:max_len]
        out[i, : len(s)] = s
    return out


def load_tsv(path, *, vocab=None, max_len=None, header=False, label_names=None, n_classes=None):
    """Read ``label<TAB>text`` lines.

    Passing an existing ``vocab`` freezes it (unseen tokens become UNK);
    otherwise one is built from the file. Integer labels are used as-is,
    anything else is mapped through ``label_names`` or first occurrence.
    """
    rows = []
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if header and lines:
        lines = lines[1:]
    for no, line in enumerate(lines, start=2 if header else 1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise MalformedLine(no, "expected label<TAB>text")
        label, text = line.split("\t", 1)
        tokens = text.split()
        if not label.strip() or not tokens:
            raise MalformedLine(no, "empty label or text")
        rows.append((label.strip(), tokens))
    if not rows:
        raise EmptyFile(f"{path}: no examples")

    frozen = vocab is not None
    vocab = vocab if frozen else Vocab()
    if not frozen:
        for _, toks in rows:
            for t in toks:
                vocab.add(t)

    raw = [lab for lab, _ in rows]
    if label_names:
        names = list(label_names)
        lookup = {n: i for i, n in enumerate(names)}
        try:
            labels = [lookup[lab] for lab in raw]
        except KeyError as exc:
            raise MalformedLine(raw.index(exc.args[0]) + 1, f"unknown label {exc.args[0]!r}") from None
    elif all(_is_int(lab) for lab in raw):
        names = []
        labels = [int(lab) for lab in raw]
        if min(labels) < 0:
            raise MalformedLine(labels.index(min(labels)) + 1, "negative label")
    else:
        names = list(dict.fromkeys(raw))
        lookup = {n: i for i, n in enumerate(names)}
        labels = [lookup[lab] for lab in raw]

    k = n_classes or (len(names) if names else max(labels) + 1)
    seqs = [vocab.encode(toks) for _, toks in rows]
    max_len = max_len or max(len(s) for s in seqs)
    return Dataset(_pad(seqs, max_len), np.array(labels, dtype=np.int64), k, vocab, names)


def _is_int(s):
    try:
        int(s)
    except ValueError:
        return False
    return True


def write_tsv(dataset, path):
    with open(path, "w", encoding="utf-8") as fh:
        for ids, lab in zip(dataset.token_ids, dataset.labels):
            label = dataset.label_names[lab] if dataset.label_names else str(int(lab))
            fh.write(f"{label}\t{' '.join(dataset.vocab.decode(ids))}\n")


# ---------------------------------------------------------------- batching


@dataclass
class Batch:
    token_ids: np.ndarray
    labels: np.ndarray
    index: np.ndarray

    def __len__(self):
        return len(self.labels)


def batch_iter(dataset, batch_size, shuffle_seed=None):
    """Partition the dataset into batches; the last one may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = len(dataset)
    order = np.arange(n) if shuffle_seed is None else np.random.default_rng(shuffle_seed).permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        yield Batch(dataset.token_ids[idx], dataset.labels[idx], idx)


def epoch_seed(run_seed, epoch):
    """Shuffle seed derived from (run seed, epoch) without storing permutations."""
    return int(np.random.SeedSequence([int(run_seed), int(epoch)]).generate_state(1)[0])


# ---------------------------------------------------------------- synthetic data


@dataclass
class SyntheticSpec:
    """Class-conditional token distributions over ``vocab_size`` content words.

    Every class owns ``signal_tokens`` words. A token of class ``c`` is drawn
    from ``c``'s own words with probability ``signal_mass``, from the other
    classes' words with probability ``leak_mass``, and from the shared pool
    otherwise. Observed labels are flipped to a random other class with
    probability ``noise_rate``.
    """

    n_classes: int = 2
    vocab_size: int = 200
    tokens_per_example: int = 16
    n_examples: int = 1000
    signal_tokens: int = 20
    signal_mass: float = 0.4
    leak_mass: float = 0.1
    noise_rate: float = 0.05
    seed: int = 0

    def validate(self):
        if self.n_classes < 2:
            raise InvalidSpec("need at least two classes")
        if self.tokens_per_example < 1 or self.n_examples < 1:
            raise InvalidSpec("tokens_per_example and n_examples must be positive")
        if self.signal_tokens < 1 or self.signal_tokens * self.n_classes > self.vocab_size:
            raise InvalidSpec("class signal words do not fit in the vocabulary")
        shared = self.vocab_size - self.signal_tokens * self.n_classes
        if not (0 <= self.signal_mass <= 1 and 0 <= self.leak_mass <= 1):
            raise InvalidSpec("masses must lie in [0, 1]")
        rest = 1.0 - self.signal_mass - self.leak_mass
        if rest < -1e-12 or (rest > 1e-12 and shared == 0):
            raise InvalidSpec("signal and leak mass must sum to 1 when there is no shared pool")
        if not 0 <= self.noise_rate < 0.5:
            raise InvalidSpec("noise_rate must lie in [0, 0.5)")

    @property
    def shared_tokens(self):
        return self.vocab_size - self.signal_tokens * self.n_classes

    def group_probs(self):
        """``[class, group]`` probability of drawing from each signal group, then the shared pool."""
        C = self.n_classes
        out = np.zeros((C, C + 1))
        for c in range(C):
            out[c, :C] = self.leak_mass / (C - 1)
            out[c, c] = self.signal_mass
            out[c, C] = max(0.0, 1.0 - self.signal_mass - self.leak_mass)
        return out

    def token_distributions(self):
        """``[class, vocab_size]`` class-conditional word distributions."""
        C, S = self.n_classes, self.signal_tokens
        gp = self.group_probs()
        dist = np.zeros((C, self.vocab_size))
        for c in range(C):
            for k in range(C):
                dist[c, k * S : (k + 1) * S] = gp[c, k] / S
            if self.shared_tokens:
                dist[c, C * S :] = gp[c, C] / self.shared_tokens
        return dist


def word(i):
    return f"w{i:04d}"


def generate_synthetic(spec):
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    dist = spec.token_distributions()
    true = rng.integers(0, spec.n_classes, size=spec.n_examples)
    words = np.empty((spec.n_examples, spec.tokens_per_example), dtype=np.int64)
    cdf = np.cumsum(dist, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(words.shape)
    for c in range(spec.n_classes):
        rows = true == c
        words[rows] = np.searchsorted(cdf[c], u[rows], side="right")
    flip = rng.random(spec.n_examples) < spec.noise_rate
    shift = rng.integers(1, spec.n_classes, size=spec.n_examples)
    labels = np.where(flip, (true + shift) % spec.n_classes, true)

    vocab = Vocab(word(w) for w in words.reshape(-1))
    seqs = [vocab.encode(word(w) for w in row) for row in words]
    return Dataset(_pad(seqs, spec.tokens_per_example), labels.astype(np.int64), spec.n_classes, vocab)


def group_counts(dataset, spec):
    """Per-example counts of words from each signal group and the shared pool."""
    C, S = spec.n_classes, spec.signal_tokens
    counts = np.zeros((len(dataset), C + 1), dtype=np.int64)
    for i, row in enumerate(dataset.token_ids):
        for tok in dataset.vocab.decode(row):
            w = int(tok[1:])
            counts[i, min(w // S, C)] += 1
    return counts


def bayes_predict(counts, spec):
    """Bayes-optimal class from group counts (within-group uniformity cancels)."""
    gp = spec.group_probs()
    logp = np.log(np.where(gp > 0, gp, 1.0))
    score = (counts[:, None, :] * logp[None, :, :]).sum(axis=2)
    impossible = ((counts[:, None, :] > 0) & (gp[None, :, :] == 0)).any(axis=2)
    return np.argmax(np.where(impossible, -np.inf, score), axis=1)


def bayes_accuracy(spec):
    """Exact Bayes accuracy against noisy labels by enumerating group-count vectors."""
    spec.validate()
    C, T = spec.n_classes, spec.tokens_per_example
    gp = spec.group_probs()
    rho = spec.noise_rate
    acc = 0.0
    for counts in _compositions(T, C + 1):
        coef = math.factorial(T) / math.prod(math.factorial(n) for n in counts)
        lik = np.array([coef * math.prod(gp[c, g] ** n for g, n in enumerate(counts)) for c in range(C)]) / C
        px = lik.sum()
        if px == 0:
            continue
        post = lik / px
        noisy = (1 - rho) * post + rho / (C - 1) * (1 - post)
        acc += px * noisy.max()
    return acc


def _compositions(total, parts):
    for cuts in itertools.combinations(range(total + parts - 1), parts - 1):
        prev, out = -1, []
        for c in cuts:
            out.append(c - prev - 1)
            prev = c
        out.append(total + parts - 2 - prev)
        yield tuple(out)
