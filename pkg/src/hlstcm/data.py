"""Datasets: tracklet file IO and a coupled multi-agent sequence generator.

The generator simulates p point agents in the plane whose pairwise
coupling is fixed by the class label:

    approach     acceleration +0.15 * (centroid - position)
    retreat      acceleration -0.15 * (centroid - position)
    orbit        acceleration  0.15 * perp(centroid - position)
    independent  no coupling; white-noise accelerations (sigma 0.5)

Shared integrator constants: step size 1; velocity damping 0.85 per step;
speed capped at 3.0; initial positions uniform in a 10 x 10 box, rejected
until all pairwise distances are >= 4.0; initial speeds uniform in
[0.5, 1.5] with uniform headings. Every sample is then rotated by a random
angle and translated uniformly within [-5, 5]^2, so absolute geometry
carries no class signal; only the relative dynamics do. Features are a
fixed seeded linear map of each agent's scaled (position, velocity) into
d_x dimensions (positions scaled by 0.1, velocities by 0.5) plus Gaussian
noise. The same map is used for every sample of a run; train and test
samples draw from disjoint seed streams.
"""

import math
from dataclasses import dataclass, fields

import numpy as np

from .model import Sample

CLASS_NAMES = ("approach", "retreat", "orbit", "independent")

_GAIN = 0.15
_COUPLED_JITTER_SIGMA = 0.3
_INDEP_ACC_SIGMA = 0.7
_DAMPING = 0.85
_SPEED_CAP = 2.5
_BOX = 10.0
_MIN_SEPARATION = 4.0
_POS_SCALE = 0.1
_VEL_SCALE = 1.0
_TRANSLATION = 5.0
_FORMAT_VERSION = 1


class DataFormatError(ValueError):
    """Malformed tracklet file."""


@dataclass
class Dataset:
    samples: list
    class_names: list
    p: int
    T: int
    d_x: int

    @property
    def k(self):
        return len(self.class_names)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)


@dataclass
class SynthConfig:
    p: int = 3
    T: int = 10
    d_x: int = 16
    noise_sigma: float = 0.1
    seed: int = 0
    n_train: int = 200
    n_test: int = 100

    def __post_init__(self):
        if self.p < 2:
            raise ValueError(f"need at least 2 agents, got p={self.p}")
        if self.d_x < 4:
            raise ValueError(f"need d_x >= 4 to embed (position, velocity), got {self.d_x}")
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        k = len(CLASS_NAMES)
        for name in ("n_train", "n_test"):
            n = getattr(self, name)
            if n < k or n % k:
                raise ValueError(f"{name}={n} must be a positive multiple of k={k}")

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _seed_streams(cfg):
    root = np.random.SeedSequence(cfg.seed)
    return root.spawn(3)  # feature map, train stream, test stream


def synth_feature_map(cfg):
    """The run's fixed (d_x, 4) latent-to-feature embedding."""
    map_ss, _, _ = _seed_streams(cfg)
    return np.random.default_rng(map_ss).normal(0.0, 0.5, size=(cfg.d_x, 4))


def _initial_positions(rng, p):
    for _ in range(10000):
        pos = rng.uniform(0.0, _BOX, size=(p, 2))
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.sqrt((diff ** 2).sum(-1))
        if dist[np.triu_indices(p, 1)].min() >= _MIN_SEPARATION:
            return pos
    raise RuntimeError(
        f"could not place {p} agents pairwise {_MIN_SEPARATION} apart in a {_BOX} box"
    )


def simulate_latents(rng, class_idx, p, T):
    """Latent trajectories before rotation/translation: (pos, vel), each (T, p, 2)."""
    pos = np.empty((T, p, 2))
    vel = np.empty((T, p, 2))
    pos[0] = _initial_positions(rng, p)
    speed = rng.uniform(0.5, 1.5, size=p)
    heading = rng.uniform(0.0, 2.0 * np.pi, size=p)
    vel[0] = speed[:, None] * np.stack([np.cos(heading), np.sin(heading)], axis=1)
    name = CLASS_NAMES[class_idx]
    for t in range(1, T):
        offset = pos[t - 1].mean(axis=0) - pos[t - 1]
        if name == "approach":
            acc = _GAIN * offset
        elif name == "retreat":
            acc = -_GAIN * offset
        elif name == "orbit":
            acc = _GAIN * np.stack([-offset[:, 1], offset[:, 0]], axis=1)
        else:
            acc = rng.normal(0.0, _INDEP_ACC_SIGMA, size=(p, 2))
        v = _DAMPING * vel[t - 1] + acc
        speed_now = np.sqrt((v ** 2).sum(-1))
        over = speed_now > _SPEED_CAP
        if over.any():
            v[over] *= (_SPEED_CAP / speed_now[over])[:, None]
        vel[t] = v
        pos[t] = pos[t - 1] + v
    return pos, vel


def _make_sample(rng, embed, cfg, class_idx, sample_id):
    pos, vel = simulate_latents(rng, class_idx, cfg.p, cfg.T)
    theta = rng.uniform(0.0, 2.0 * np.pi)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    shift = rng.uniform(-_TRANSLATION, _TRANSLATION, size=2)
    pos = pos @ rot.T + shift
    vel = vel @ rot.T
    lat = np.concatenate([pos * _POS_SCALE, vel * _VEL_SCALE], axis=2)  # (T, p, 4)
    feats = lat @ embed.T  # (T, p, d_x)
    if cfg.noise_sigma > 0:
        feats = feats + rng.normal(0.0, cfg.noise_sigma, size=feats.shape)
    return Sample(feats.transpose(1, 0, 2), class_idx, id=sample_id)


def _generate_split(stream, embed, cfg, n, prefix):
    k = len(CLASS_NAMES)
    samples = []
    for i, child in enumerate(stream.spawn(n)):
        rng = np.random.default_rng(child)
        samples.append(_make_sample(rng, embed, cfg, i % k, f"{prefix}-{i:04d}"))
    return Dataset(samples, list(CLASS_NAMES), cfg.p, cfg.T, cfg.d_x)


def generate_synthetic(cfg):
    """Seeded (train, test) datasets with exactly n/k samples per class."""
    map_ss, train_ss, test_ss = _seed_streams(cfg)
    embed = np.random.default_rng(map_ss).normal(0.0, 0.5, size=(cfg.d_x, 4))
    train = _generate_split(train_ss, embed, cfg, cfg.n_train, "train")
    test = _generate_split(test_ss, embed, cfg, cfg.n_test, "test")
    return train, test


def save_tracklets(dataset, path):
    """One header line, then one sample per line in full round-trip precision.

    Grammar (whitespace-separated):
        tracklets <version> <k> <p> <T> <d_x> <class names...>
        <id> <label name> <p*T*d_x float values, slot-major then time>
    """
    with open(path, "w", encoding="utf-8") as fh:
        head = ["tracklets", str(_FORMAT_VERSION), str(dataset.k), str(dataset.p),
                str(dataset.T), str(dataset.d_x)] + list(dataset.class_names)
        fh.write(" ".join(head) + "\n")
        for s in dataset.samples:
            vals = " ".join(repr(float(v)) for v in s.features.reshape(-1))
            fh.write(f"{s.id} {dataset.class_names[s.label]} {vals}\n")


def load_tracklets(path):
    """Parse a tracklet file; malformed input raises DataFormatError with
    the offending line number."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) < 6 or header[0] != "tracklets":
            raise DataFormatError("line 1: expected 'tracklets <version> <k> <p> <T> <d_x> <classes...>'")
        try:
            version, k, p, T, d_x = (int(tok) for tok in header[1:6])
        except ValueError as exc:
            raise DataFormatError(f"line 1: non-integer header field ({exc})") from None
        if version != _FORMAT_VERSION:
            raise DataFormatError(f"line 1: unsupported tracklet format version {version}")
        names = header[6:]
        if len(names) != k or k < 1:
            raise DataFormatError(f"line 1: header declares k={k} but lists {len(names)} class names")
        label_index = {name: i for i, name in enumerate(names)}
        n_vals = p * T * d_x
        samples = []
        for ln, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            toks = line.split()
            if len(toks) < 2:
                raise DataFormatError(f"line {ln}: expected '<id> <label> <values...>'")
            sid, label_name = toks[0], toks[1]
            if label_name not in label_index:
                raise DataFormatError(
                    f"line {ln}: sample {sid!r} has unknown label {label_name!r} "
                    f"(classes: {', '.join(names)})"
                )
            if len(toks) - 2 != n_vals:
                raise DataFormatError(
                    f"line {ln}: sample {sid!r} carries {len(toks) - 2} values, "
                    f"expected p*T*d_x = {n_vals}"
                )
            try:
                vals = np.array([float(tok) for tok in toks[2:]])
            except ValueError as exc:
                raise DataFormatError(f"line {ln}: sample {sid!r}: {exc}") from None
            samples.append(Sample(vals.reshape(p, T, d_x), label_index[label_name], id=sid))
    return Dataset(samples, names, p, T, d_x)


def split_dataset(dataset, fraction, seed=0):
    """Seeded stratified split into (first, second); disjoint, union = input.

    Per-class quotas follow the largest-remainder rule so the first part
    holds round(fraction * n) samples overall.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    by_class = {}
    for i, s in enumerate(dataset.samples):
        by_class.setdefault(s.label, []).append(i)
    for label, idx in sorted(by_class.items()):
        if len(idx) < 2:
            raise ValueError(
                f"class {dataset.class_names[label]!r} has {len(idx)} sample(s); need >= 2 to split"
            )
    n = len(dataset.samples)
    target = int(round(fraction * n + 1e-9))
    labels = sorted(by_class)
    floors = {lb: int(math.floor(fraction * len(by_class[lb]) + 1e-9)) for lb in labels}
    remainders = {lb: fraction * len(by_class[lb]) - floors[lb] for lb in labels}
    leftover = target - sum(floors.values())
    take = dict(floors)
    for lb in sorted(labels, key=lambda lb: (-remainders[lb], lb))[:max(0, leftover)]:
        take[lb] += 1
    rng = np.random.default_rng(seed)
    first_idx = []
    second_idx = []
    for lb in labels:
        order = np.array(by_class[lb])[rng.permutation(len(by_class[lb]))]
        first_idx += list(order[:take[lb]])
        second_idx += list(order[take[lb]:])
    first_idx.sort()
    second_idx.sort()

    def pick(indices):
        return Dataset([dataset.samples[i] for i in indices], list(dataset.class_names),
                       dataset.p, dataset.T, dataset.d_x)

    return pick(first_idx), pick(second_idx)
