"""Conditional GAN crash-count model.

The generator maps a normalised 8-feature site vector and one N(0, 1)
noise value to a nonnegative crash count; the discriminator scores
(features, count) pairs as real or generated.  Repeated generator draws
for a site give the sample mean and variance used by the CGAN-EB weight.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import neural
from .data import FEATURES, FeatureScaler, SiteRecord, SiteTable, fit_scaler, normalize, normalize_table
from .neural import AdamState, DenseLayer, Network

N_FEATURES = len(FEATURES)
DEFAULT_M = 500
SAMPLE_CHUNK_ROWS = 50_000


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 100
    lr_g: float = 0.001
    lr_d: float = 0.001
    decay_g: float = 0.001
    decay_d: float = 0.0
    noise_dim: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.noise_dim < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and noise_dim >= 1 required")
        if self.lr_g <= 0 or self.lr_d <= 0 or self.decay_g < 0 or self.decay_d < 0:
            raise ValueError("learning rates must be > 0 and decays >= 0")


@dataclass
class TrainingLog:
    real_loss: list[float] = field(default_factory=list)
    fake_loss: list[float] = field(default_factory=list)
    gen_loss: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.real_loss)

    def append(self, real, fake, gen):
        self.real_loss.append(real)
        self.fake_loss.append(fake)
        self.gen_loss.append(gen)

    def tail_means(self, k: int = 100) -> tuple[float, float, float]:
        return (float(np.mean(self.real_loss[-k:])), float(np.mean(self.fake_loss[-k:])),
                float(np.mean(self.gen_loss[-k:])))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "real_loss", "fake_loss", "gen_loss"])
            for i, row in enumerate(zip(self.real_loss, self.fake_loss, self.gen_loss), start=1):
                w.writerow([i, *(repr(float(v)) for v in row)])


def build_generator(rng: np.random.Generator, noise_dim: int = 1) -> Network:
    return Network(
        [[DenseLayer.init(N_FEATURES, 100, "elu", rng)],
         [DenseLayer.init(noise_dim, 100, "elu", rng)]],
        [DenseLayer.init(200, 40, "elu", rng),
         DenseLayer.init(40, 40, "elu", rng),
         DenseLayer.init(40, 40, "elu", rng),
         DenseLayer.init(40, 1, "relu", rng)])


def build_discriminator(rng: np.random.Generator) -> Network:
    return Network(
        [[DenseLayer.init(N_FEATURES, 100, "elu", rng)],
         [DenseLayer.init(1, 100, "elu", rng)]],
        [DenseLayer.init(200, 40, "elu", rng),
         DenseLayer.init(40, 40, "elu", rng),
         DenseLayer.init(40, 1, "sigmoid", rng)])


@dataclass
class CganModel:
    generator: Network
    discriminator: Network
    scaler: FeatureScaler
    config: TrainConfig
    log: TrainingLog = field(default_factory=TrainingLog)
    period: str = "P1"

    def to_dict(self) -> dict:
        final = None
        if len(self.log):
            final = {"real_loss": self.log.real_loss[-1], "fake_loss": self.log.fake_loss[-1],
                     "gen_loss": self.log.gen_loss[-1]}
        return {
            "kind": "cgan",
            "period": self.period,
            "config": asdict(self.config),
            "scaler": self.scaler.to_dict(),
            "final_losses": final,
            "epochs_trained": len(self.log),
            "generator": self.generator.to_dict(),
            "discriminator": self.discriminator.to_dict(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":")) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> CganModel:
        if d.get("kind") != "cgan":
            raise ValueError("not a CGAN model document")
        return cls(Network.from_dict(d["generator"]), Network.from_dict(d["discriminator"]),
                   FeatureScaler.from_dict(d["scaler"]), TrainConfig(**d["config"]),
                   TrainingLog(), d.get("period", "P1"))

    @classmethod
    def load(cls, path: str | Path) -> CganModel:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def identity_scaler() -> FeatureScaler:
    """Scaler for feature arrays that are already in [0, 1]."""
    return FeatureScaler((0.0,) * N_FEATURES, (1.0,) * N_FEATURES)


def train_arrays(features: np.ndarray, y: np.ndarray, config: TrainConfig = TrainConfig(),
                 scaler: FeatureScaler | None = None, period: str = "P1",
                 progress=None) -> CganModel:
    """Adversarial training on normalised features and raw crash counts.

    Per batch: one noise draw, one discriminator step on real + generated
    pairs, then one generator step with the non-saturating loss
    BCE(D(X, G(X, z)), 1).  The last partial batch of each epoch is dropped.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    n, bs = x.shape[0], config.batch_size
    if x.shape != (n, N_FEATURES) or y.shape[0] != n:
        raise ValueError(f"features must be (n, {N_FEATURES}) with one count per row")
    if config.epochs and n < bs:
        raise ValueError(f"need at least batch_size={bs} records, got {n}")
    s_init_g, s_init_d, s_shuffle, s_noise = np.random.SeedSequence(config.seed).spawn(4)
    gen = build_generator(np.random.default_rng(s_init_g), config.noise_dim)
    disc = build_discriminator(np.random.default_rng(s_init_d))
    shuffle_rng = np.random.default_rng(s_shuffle)
    noise_rng = np.random.default_rng(s_noise)
    opt_g = AdamState(lr=config.lr_g, decay=config.decay_g)
    opt_d = AdamState(lr=config.lr_d, decay=config.decay_d)
    log = TrainingLog()
    n_batches = n // bs

    for epoch in range(config.epochs):
        opt_g.epoch = opt_d.epoch = epoch
        order = shuffle_rng.permutation(n)
        sums = np.zeros(3)
        for b in range(n_batches):
            idx = order[b * bs:(b + 1) * bs]
            xb, yb = x[idx], y[idx]
            z = noise_rng.standard_normal((bs, config.noise_dim))
            y_fake, g_cache = neural.forward(gen, [xb, z])

            # discriminator: real and generated halves in one pass
            d_out, d_cache = neural.forward(disc, [np.vstack([xb, xb]), np.vstack([yb, y_fake])])
            real_loss, g_real = neural.bce_loss(d_out[:bs], 1.0)
            fake_loss, g_fake = neural.bce_loss(d_out[bs:], 0.0)
            d_grads, _ = neural.backward(disc, d_cache, np.vstack([g_real, g_fake]), need_inputs=False)
            neural.apply_adam(disc, d_grads, opt_d)

            # generator: gradient flows through the updated discriminator's count input
            d_gen, dg_cache = neural.forward(disc, [xb, y_fake])
            gen_loss, g_gen = neural.bce_loss(d_gen, 1.0)
            _, (_, g_y) = neural.backward(disc, dg_cache, g_gen, need_params=False)
            g_grads, _ = neural.backward(gen, g_cache, g_y, need_inputs=False)
            neural.apply_adam(gen, g_grads, opt_g)
            sums += (real_loss, fake_loss, gen_loss)
        means = sums / max(n_batches, 1)
        if not np.all(np.isfinite(means)):
            raise TrainingError(f"non-finite loss at epoch {epoch + 1}")
        log.append(*means.tolist())
        if progress is not None:
            progress(epoch + 1, log)

    return CganModel(gen, disc, scaler or identity_scaler(), config, log, period)


def train(table: SiteTable, period: str = "P1", config: TrainConfig = TrainConfig(),
          progress=None) -> CganModel:
    """Fit the scaler and train on one period's features and crash counts."""
    table.check_period(period)
    scaler = fit_scaler(table, period)
    x = normalize_table(scaler, table, period)
    return train_arrays(x, table.counts(period), config, scaler, period, progress)


def _site_noise(seed: int, index: int, m: int, noise_dim: int) -> np.ndarray:
    return np.random.default_rng([seed, index]).standard_normal((m, noise_dim))


def sample_features(model: CganModel, features: np.ndarray, m: int = DEFAULT_M, seed: int = 0,
                    indices=None) -> np.ndarray:
    """``m`` generator draws per row of normalised ``features`` -> array (n, m).

    Row ``i`` uses its own noise stream derived from ``(seed, indices[i])``,
    so results do not depend on how sites are grouped (up to last-bit
    rounding in the batched matrix products).
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    n = x.shape[0]
    indices = range(n) if indices is None else indices
    nd = model.config.noise_dim
    out = np.empty((n, m))
    per_chunk = max(1, SAMPLE_CHUNK_ROWS // m)
    idx = list(indices)
    for start in range(0, n, per_chunk):
        stop = min(n, start + per_chunk)
        xs = np.repeat(x[start:stop], m, axis=0)
        zs = np.vstack([_site_noise(seed, idx[i], m, nd) for i in range(start, stop)])
        out[start:stop] = neural.predict(model.generator, [xs, zs]).reshape(stop - start, m)
    return out


def sample(model: CganModel, record: SiteRecord, m: int = DEFAULT_M, seed: int = 0,
           period: str | None = None, index: int = 0) -> np.ndarray:
    """``m`` generated crash counts (continuous, >= 0) for one site."""
    x = normalize(model.scaler, record, period or model.period)
    return sample_features(model, x[None, :], m, seed, [index])[0]


def mean_var(samples: np.ndarray) -> tuple[float, float]:
    s = np.asarray(samples, dtype=np.float64)
    if s.shape[-1] < 2:
        raise ValueError("need at least 2 samples for a variance")
    return float(s.mean()), float(s.var(ddof=1))


def predict_mean_var(model: CganModel, record: SiteRecord, m: int = DEFAULT_M, seed: int = 0,
                     period: str | None = None, index: int = 0) -> tuple[float, float]:
    if m < 2:
        raise ValueError("m must be >= 2")
    return mean_var(sample(model, record, m, seed, period, index))


def predict_table(model: CganModel, table: SiteTable, period: str, m: int = DEFAULT_M,
                  seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Per-site sample mean and unbiased sample variance of ``m`` draws."""
    if m < 2:
        raise ValueError("m must be >= 2")
    if not len(table):
        return np.zeros(0), np.zeros(0)
    draws = sample_features(model, normalize_table(model.scaler, table, period), m, seed)
    return draws.mean(axis=1), draws.var(axis=1, ddof=1)


def rounded(samples: np.ndarray) -> np.ndarray:
    """Integer crash counts for reporting; estimates use the continuous draws."""
    return np.rint(samples).astype(int)


__all__ = [
    "CganModel", "DEFAULT_M", "TrainConfig", "TrainingError", "TrainingLog", "build_discriminator",
    "build_generator", "identity_scaler", "mean_var", "predict_mean_var", "predict_table",
    "rounded", "sample", "sample_features", "train", "train_arrays",
]
