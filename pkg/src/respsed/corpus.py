"""Audio/label ingestion, clip truncation, participant-disjoint splits and a
synthetic corpus generator for desk-scale runs."""

from __future__ import annotations

import csv
import hashlib
import math
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.signal.windows import tukey

SAMPLE_RATE = 4000
CLIP_SECONDS = 15.0
CLIP_SAMPLES = 60000
KINDS = ("I", "E", "C")
DOMAINS = ("lung", "tracheal")


class CorpusError(ValueError):
    """Raised for malformed audio, label files or invalid corpus operations."""


@dataclass(frozen=True, eq=False)
class Recording:
    samples: np.ndarray
    sample_rate: int
    participant_id: str
    domain_tag: str = "lung"

    def __post_init__(self):
        if self.sample_rate != SAMPLE_RATE:
            raise CorpusError(f"sample rate {self.sample_rate} Hz, expected {SAMPLE_RATE}")
        if len(self.samples) == 0:
            raise CorpusError("recording has no samples")
        if self.domain_tag not in DOMAINS:
            raise CorpusError(f"unknown domain tag {self.domain_tag!r}")
        samples = np.asarray(self.samples)
        if samples.min() < -32768 or samples.max() > 32767:
            raise CorpusError("amplitudes outside the 16-bit range")
        samples = samples.astype(np.int16)
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)


@dataclass(frozen=True, eq=False)
class Clip:
    samples: np.ndarray
    participant_id: str
    domain_tag: str
    clip_index: int
    clip_id: str = ""

    def __post_init__(self):
        if len(self.samples) != CLIP_SAMPLES:
            raise CorpusError(f"clip must hold {CLIP_SAMPLES} samples, got {len(self.samples)}")
        samples = np.asarray(self.samples, dtype=np.int16)
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        if not self.clip_id:
            object.__setattr__(self, "clip_id", f"{self.participant_id}_c{self.clip_index:03d}")


@dataclass(frozen=True)
class LabelEvent:
    kind: str
    start_s: float
    end_s: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CorpusError(f"unknown kind {self.kind!r}")
        start_s, end_s = float(self.start_s), float(self.end_s)
        if not (math.isfinite(start_s) and math.isfinite(end_s)):
            raise CorpusError("non-finite label time")
        if start_s >= end_s:
            raise CorpusError(f"start >= end ({start_s} >= {end_s})")
        if start_s < 0.0 or end_s > CLIP_SECONDS:
            raise CorpusError(f"time outside [0, {CLIP_SECONDS}] s: {start_s}..{end_s}")
        object.__setattr__(self, "start_s", start_s)
        object.__setattr__(self, "end_s", end_s)

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s


def event_key(ev) -> tuple[float, float, str]:
    return (ev.start_s, ev.end_s, ev.kind)


@dataclass(frozen=True, eq=False)
class Corpus:
    """Immutable collection of (clip, labels) pairs."""

    clips: tuple[tuple[Clip, tuple[LabelEvent, ...]], ...]
    name: str = "corpus"

    def __post_init__(self):
        normalized = []
        seen = set()
        for clip, labels in self.clips:
            if clip.clip_id in seen:
                raise CorpusError(f"duplicate clip id {clip.clip_id!r}")
            seen.add(clip.clip_id)
            normalized.append((clip, tuple(sorted(labels, key=event_key))))
        object.__setattr__(self, "clips", tuple(normalized))

    def __len__(self):
        return len(self.clips)

    @property
    def ids(self) -> list[str]:
        return [c.clip_id for c, _ in self.clips]

    def get(self, clip_id: str) -> tuple[Clip, tuple[LabelEvent, ...]]:
        for clip, labels in self.clips:
            if clip.clip_id == clip_id:
                return clip, labels
        raise KeyError(clip_id)

    def participant_of(self) -> dict[str, str]:
        return {c.clip_id: c.participant_id for c, _ in self.clips}

    def participants(self) -> list[str]:
        return sorted({c.participant_id for c, _ in self.clips})

    def subset(self, clip_ids: Iterable[str], name: str | None = None) -> Corpus:
        wanted = set(clip_ids)
        return Corpus(tuple(e for e in self.clips if e[0].clip_id in wanted), name or self.name)

    def labels(self, kind: str | None = None) -> list[LabelEvent]:
        return [ev for _, labels in self.clips for ev in labels if kind is None or ev.kind == kind]


# --------------------------------------------------------------------------
# WAV and label files


def load_recording(path: str | Path, participant_id: str | None = None,
                   domain_tag: str = "lung") -> Recording:
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as w:
            channels = w.getnchannels()
            width = w.getsampwidth()
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as exc:
        raise CorpusError(f"malformed WAV {path}: {exc}") from exc
    if channels != 1:
        raise CorpusError(f"channel count {channels}, expected mono")
    if rate != SAMPLE_RATE:
        raise CorpusError(f"sample rate {rate} Hz, expected {SAMPLE_RATE} (resampling is not supported)")
    if width != 2:
        raise CorpusError(f"bit depth {8 * width}, expected 16")
    if len(raw) % 2:
        raise CorpusError(f"malformed WAV {path}: odd data length")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.int16)
    return Recording(samples, rate, participant_id or path.stem, domain_tag)


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE,
              channels: int = 1) -> None:
    data = np.asarray(samples, dtype="<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(data.tobytes())


def truncate_to_clips(rec: Recording, recording_id: str | None = None) -> list[Clip]:
    """Cut a recording into non-overlapping 15 s clips, dropping the remainder."""
    n = len(rec.samples) // CLIP_SAMPLES
    prefix = recording_id or rec.participant_id
    return [
        Clip(rec.samples[i * CLIP_SAMPLES:(i + 1) * CLIP_SAMPLES], rec.participant_id,
             rec.domain_tag, i, f"{prefix}_c{i:03d}")
        for i in range(n)
    ]


def _parse_label_lines(lines: Iterable[str], source: str) -> list[tuple[str, float, float]]:
    rows = []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise CorpusError(f"{source}:{lineno}: expected '<kind> <start_s> <end_s>'")
        kind, start, end = parts
        try:
            rows.append((kind, float(start), float(end)))
        except ValueError as exc:
            raise CorpusError(f"{source}:{lineno}: bad time value") from exc
    return rows


def parse_labels(path: str | Path) -> list[LabelEvent]:
    path = Path(path)
    rows = _parse_label_lines(path.read_text(encoding="utf-8").splitlines(), str(path))
    events = []
    for kind, start, end in rows:
        try:
            events.append(LabelEvent(kind, start, end))
        except CorpusError as exc:
            raise CorpusError(f"{path}: {exc}") from exc
    return sorted(events, key=event_key)


def parse_recording_labels(path: str | Path) -> list[tuple[str, float, float]]:
    """Labels in recording time (no 15 s bound), used when ingesting long recordings."""
    path = Path(path)
    rows = _parse_label_lines(path.read_text(encoding="utf-8").splitlines(), str(path))
    for kind, start, end in rows:
        if kind not in KINDS:
            raise CorpusError(f"{path}: unknown kind {kind!r}")
        if start >= end or start < 0:
            raise CorpusError(f"{path}: start >= end or negative time ({start}, {end})")
    return sorted(rows, key=lambda r: (r[1], r[2], r[0]))


def labels_for_clip(rows: Sequence[tuple[str, float, float]], clip_index: int) -> list[LabelEvent]:
    """Clip recording-time labels to one clip window and shift them to clip time."""
    lo = clip_index * CLIP_SECONDS
    hi = lo + CLIP_SECONDS
    events = []
    for kind, start, end in rows:
        s, e = max(start, lo) - lo, min(end, hi) - lo
        if e > s:
            events.append(LabelEvent(kind, s, e))
    return sorted(events, key=event_key)


def serialize_labels(events: Iterable) -> str:
    return "".join(f"{ev.kind} {float(ev.start_s)!r} {float(ev.end_s)!r}\n"
                   for ev in sorted(events, key=event_key))


def write_labels(path: str | Path, events: Iterable) -> None:
    Path(path).write_text(serialize_labels(events), encoding="utf-8")


# --------------------------------------------------------------------------
# Splits and folds


@dataclass(frozen=True)
class SplitSpec:
    train: tuple[str, ...]
    test: tuple[str, ...]
    participant_of: Mapping[str, str] = field(default_factory=dict, compare=False)

    @property
    def achieved_fraction(self) -> float:
        return len(self.test) / (len(self.train) + len(self.test))


@dataclass(frozen=True)
class FoldPair:
    repeat: int
    fold: int
    train: tuple[str, ...]
    validation: tuple[str, ...]

    @property
    def name(self) -> str:
        return f"r{self.repeat}f{self.fold}"


def split_by_participant(corpus: Corpus, test_fraction: float = 0.2, seed: int = 0) -> SplitSpec:
    """Greedy whole-participant packing of shuffled participants into the test side.

    Participants are added until the test side holds at least
    ``test_fraction`` of all clips; the last participant always stays on the
    training side.
    """
    if not 0.0 < test_fraction < 1.0:
        raise CorpusError("test_fraction must lie in (0, 1)")
    owner = corpus.participant_of()
    people = corpus.participants()
    if len(people) < 2:
        raise CorpusError("need at least 2 participants for a participant-disjoint split")
    counts = {p: 0 for p in people}
    for pid in owner.values():
        counts[pid] += 1
    order = [people[i] for i in np.random.default_rng(seed).permutation(len(people))]
    target = test_fraction * len(owner)
    test_people: set[str] = set()
    n_test = 0
    for pid in order[:-1]:
        if n_test >= target:
            break
        test_people.add(pid)
        n_test += counts[pid]
    ids = corpus.ids
    return SplitSpec(
        train=tuple(i for i in ids if owner[i] not in test_people),
        test=tuple(i for i in ids if owner[i] in test_people),
        participant_of=owner,
    )


def make_folds(split: SplitSpec, k: int = 5, repeats: int = 3, seed: int = 0) -> list[FoldPair]:
    """Participant-grouped k-fold assignments over the training side, ``repeats`` times.

    Each repeat shuffles the participants, seeds every fold with one of them,
    then deals the rest to whichever fold currently holds the fewest clips.
    """
    if k < 2:
        raise CorpusError("k must be >= 2")
    if repeats < 1:
        raise CorpusError("repeats must be >= 1")
    owner = split.participant_of
    by_person: dict[str, list[str]] = {}
    for cid in split.train:
        by_person.setdefault(owner[cid], []).append(cid)
    people = sorted(by_person)
    if len(people) < k:
        raise CorpusError(f"fewer participants ({len(people)}) than folds ({k})")
    rng = np.random.default_rng(seed)
    pairs = []
    for r in range(repeats):
        order = [people[i] for i in rng.permutation(len(people))]
        folds: list[list[str]] = [[] for _ in range(k)]
        sizes = [0] * k
        # every fold gets one participant before sizes are balanced
        for j, pid in enumerate(order):
            f = j if j < k else min(range(k), key=lambda i: (sizes[i], i))
            folds[f].append(pid)
            sizes[f] += len(by_person[pid])
        for f in range(k):
            val_people = set(folds[f])
            pairs.append(FoldPair(
                repeat=r, fold=f,
                train=tuple(c for c in split.train if owner[c] not in val_people),
                validation=tuple(c for c in split.train if owner[c] in val_people),
            ))
    return pairs


def write_split_manifest(path: str | Path, split: SplitSpec, folds: Sequence[FoldPair] = ()) -> None:
    lines = ["[train]", *split.train, "[test]", *split.test, "[participants]"]
    lines += [f"{cid} {split.participant_of[cid]}" for cid in (*split.train, *split.test)]
    for fp in folds:
        lines.append(f"[validation {fp.repeat} {fp.fold}]")
        lines.extend(fp.validation)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_split_manifest(path: str | Path) -> tuple[SplitSpec, list[FoldPair]]:
    sections: dict[str, list[str]] = {}
    current = None
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections[current] = []
        elif current is None:
            raise CorpusError(f"{path}: entry outside a section")
        else:
            sections[current].append(line)
    owner = dict(line.split(maxsplit=1) for line in sections.get("participants", []))
    split = SplitSpec(tuple(sections.get("train", [])), tuple(sections.get("test", [])), owner)
    folds = []
    for name, ids in sections.items():
        if name.startswith("validation "):
            _, r, f = name.split()
            val = set(ids)
            folds.append(FoldPair(int(r), int(f), tuple(c for c in split.train if c not in val),
                                  tuple(c for c in split.train if c in val)))
    return split, folds


# --------------------------------------------------------------------------
# Corpus bundles on disk


def save_corpus(corpus: Corpus, directory: str | Path) -> None:
    directory = Path(directory)
    (directory / "clips").mkdir(parents=True, exist_ok=True)
    (directory / "name.txt").write_text(corpus.name + "\n", encoding="utf-8")
    with open(directory / "index.tsv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(["clip_id", "participant_id", "domain_tag", "clip_index"])
        for clip, labels in corpus.clips:
            writer.writerow([clip.clip_id, clip.participant_id, clip.domain_tag, clip.clip_index])
            write_wav(directory / "clips" / f"{clip.clip_id}.wav", clip.samples)
            write_labels(directory / "clips" / f"{clip.clip_id}.txt", labels)


def load_corpus(directory: str | Path, name: str | None = None) -> Corpus:
    directory = Path(directory)
    index = directory / "index.tsv"
    if not index.exists():
        raise CorpusError(f"{directory} is not a corpus bundle (missing index.tsv)")
    entries = []
    with open(index, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh, delimiter="\t"):
            cid = row["clip_id"]
            rec = load_recording(directory / "clips" / f"{cid}.wav", row["participant_id"],
                                 row["domain_tag"])
            clip = Clip(rec.samples, rec.participant_id, rec.domain_tag,
                        int(row["clip_index"]), cid)
            label_path = directory / "clips" / f"{cid}.txt"
            labels = parse_labels(label_path) if label_path.exists() else []
            entries.append((clip, tuple(labels)))
    if name is None:
        name_file = directory / "name.txt"
        name = name_file.read_text(encoding="utf-8").strip() if name_file.exists() else directory.name
    return Corpus(tuple(entries), name)


def corpus_digest(corpus: Corpus) -> str:
    h = hashlib.sha256()
    for clip, labels in corpus.clips:
        h.update(f"{clip.clip_id}|{clip.participant_id}|{clip.domain_tag}|".encode())
        h.update(clip.samples.astype("<i2").tobytes())
        h.update(serialize_labels(labels).encode())
    return h.hexdigest()


# --------------------------------------------------------------------------
# Synthetic corpora


@dataclass(frozen=True)
class SynthConfig:
    n_participants: int = 6
    clips_per_participant: int = 3
    breath_rate_bpm: tuple[float, float] = (12.0, 20.0)
    cas_probability: float = 0.3
    noise_level: float = 0.05
    tracheal_fraction: float = 0.0
    inhale_band: tuple[float, float] = (280.0, 470.0)
    exhale_band: tuple[float, float] = (560.0, 950.0)
    cas_band: tuple[float, float] = (300.0, 800.0)
    participant_prefix: str = "P"

    def validate(self) -> None:
        if self.n_participants < 1 or self.clips_per_participant < 1:
            raise CorpusError("participant and clip counts must be >= 1")
        lo, hi = self.breath_rate_bpm
        if not 0 < lo <= hi or hi > 60:
            raise CorpusError("breath_rate_bpm must satisfy 0 < lo <= hi <= 60")
        if not 0.0 <= self.cas_probability <= 1.0:
            raise CorpusError("cas_probability must lie in [0, 1]")
        if self.noise_level < 0:
            raise CorpusError("noise_level must be >= 0")
        if not 0.0 <= self.tracheal_fraction <= 1.0:
            raise CorpusError("tracheal_fraction must lie in [0, 1]")
        for name in ("inhale_band", "exhale_band", "cas_band"):
            b_lo, b_hi = getattr(self, name)
            if not 0 < b_lo < b_hi < SAMPLE_RATE / 2:
                raise CorpusError(f"{name} must satisfy 0 < lo < hi < {SAMPLE_RATE // 2}")


LUNG_LIKE = SynthConfig(participant_prefix="L", cas_probability=0.5)
TRACHEAL_LIKE = SynthConfig(
    participant_prefix="T", tracheal_fraction=1.0, cas_probability=0.5,
    inhale_band=(1050.0, 1350.0), exhale_band=(1500.0, 1850.0), cas_band=(900.0, 1500.0),
)

_AMPLITUDE = 6000.0


def _band_noise(rng: np.random.Generator, n: int, band: tuple[float, float]) -> np.ndarray:
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / SAMPLE_RATE)
    spectrum[(freqs < band[0]) | (freqs > band[1])] = 0.0
    x = np.fft.irfft(spectrum, n)
    rms = np.sqrt(np.mean(x ** 2))
    return x / rms if rms > 0 else x


def _place(signal: np.ndarray, start: int, burst: np.ndarray) -> None:
    signal[start:start + len(burst)] += burst * tukey(len(burst), 0.3)


def _synth_clip(rng: np.random.Generator, cfg: SynthConfig) -> tuple[np.ndarray, list[LabelEvent]]:
    signal = cfg.noise_level * rng.standard_normal(CLIP_SAMPLES)
    labels = []
    rate = rng.uniform(*cfg.breath_rate_bpm)
    n_breaths = max(1, round(rate * CLIP_SECONDS / 60.0))
    cycle = CLIP_SAMPLES / n_breaths
    for b in range(n_breaths):
        t0 = b * cycle
        i_start = int(t0 + rng.uniform(0.02, 0.08) * cycle)
        i_len = int(rng.uniform(0.30, 0.38) * cycle)
        e_start = i_start + i_len + int(rng.uniform(0.03, 0.08) * cycle)
        e_len = int(rng.uniform(0.30, 0.38) * cycle)
        _place(signal, i_start, rng.uniform(0.6, 1.0) * _band_noise(rng, i_len, cfg.inhale_band))
        _place(signal, e_start, rng.uniform(0.4, 0.8) * _band_noise(rng, e_len, cfg.exhale_band))
        labels.append(LabelEvent("I", i_start / SAMPLE_RATE, (i_start + i_len) / SAMPLE_RATE))
        labels.append(LabelEvent("E", e_start / SAMPLE_RATE, (e_start + e_len) / SAMPLE_RATE))
    if rng.random() < cfg.cas_probability:
        c_len = int(rng.uniform(0.3, 1.2) * SAMPLE_RATE)
        c_start = int(rng.uniform(0, CLIP_SAMPLES - c_len))
        f0, f1 = rng.uniform(*cfg.cas_band, size=2)
        t = np.arange(c_len) / SAMPLE_RATE
        dur = c_len / SAMPLE_RATE
        phase = 2 * np.pi * (f0 * t + 0.5 * (f1 - f0) * t ** 2 / dur)
        _place(signal, c_start, rng.uniform(0.5, 0.9) * np.sin(phase))
        labels.append(LabelEvent("C", c_start / SAMPLE_RATE, (c_start + c_len) / SAMPLE_RATE))
    samples = np.clip(np.round(signal * _AMPLITUDE), -32768, 32767).astype(np.int16)
    return samples, sorted(labels, key=event_key)


def synth_corpus(cfg: SynthConfig = SynthConfig(), seed: int = 0, name: str | None = None) -> Corpus:
    """Generate a labeled corpus of band-limited breath bursts and tonal CAS chirps."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    n_tracheal = round(cfg.tracheal_fraction * cfg.n_participants)
    entries = []
    for p in range(cfg.n_participants):
        pid = f"{cfg.participant_prefix}{p:03d}"
        domain = "tracheal" if p < n_tracheal else "lung"
        for k in range(cfg.clips_per_participant):
            samples, labels = _synth_clip(rng, cfg)
            entries.append((Clip(samples, pid, domain, k), tuple(labels)))
    return Corpus(tuple(entries), name or f"synth-{cfg.participant_prefix}-{seed}")
