"""Seeded non-i.i.d. benchmark data.

Every sample belongs to an environment (a latent variable). Invariant
features carry the same class signal everywhere; spurious features carry a
stronger signal whose sign flips per environment; noise features carry no
class signal but are shifted by a per-environment offset, which is what makes
the environments visible to clustering.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from nireg.data import LabeledDataset, subset
from nireg.errors import ConfigError, DataError


@dataclass(frozen=True)
class GeneratorConfig:
    n_per_env: int = 500
    n_envs: int = 4
    d_inv: int = 4
    d_sp: int = 4
    d_noise: int = 8
    mu_inv: float = 1.0
    mu_sp: float = 2.0
    spurious_signs: tuple[int, ...] = (1, 1, 1, -1)
    env_offset: float = 8.0
    noise_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "spurious_signs", tuple(int(s) for s in self.spurious_signs))
        for name in ("n_per_env", "n_envs", "d_inv", "d_sp"):
            if getattr(self, name) < 1:
                raise ConfigError(f"generator: {name} must be >= 1")
        if self.d_noise < 0:
            raise ConfigError("generator: d_noise must be >= 0")
        for name in ("mu_inv", "mu_sp", "env_offset", "noise_sd"):
            if getattr(self, name) < 0:
                raise ConfigError(f"generator: {name} must be >= 0")
        if len(self.spurious_signs) != self.n_envs:
            raise ConfigError("generator: spurious_signs must have one entry per environment")
        if any(s not in (-1, 1) for s in self.spurious_signs):
            raise ConfigError("generator: spurious_signs entries must be +1 or -1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["spurious_signs"] = list(self.spurious_signs)
        return d

    @property
    def n_features(self) -> int:
        return self.d_inv + self.d_sp + self.d_noise


PRESETS = {
    "acceptance": GeneratorConfig(),
    "iid": GeneratorConfig(n_envs=1, spurious_signs=(1,), mu_sp=0.0, env_offset=0.0),
}


def preset(name: str, **overrides) -> GeneratorConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    unknown = sorted(set(overrides) - set(base.to_dict()))
    if unknown:
        raise ConfigError(f"unknown generator option(s): {', '.join(unknown)}")
    return replace(base, **overrides)


@dataclass(frozen=True)
class SyntheticDataset:
    dataset: LabeledDataset
    env_labels: np.ndarray
    config: GeneratorConfig | None = field(default=None, compare=False)

    def __post_init__(self):
        env = np.asarray(self.env_labels, dtype=np.int64)
        if env.shape != (self.dataset.n,):
            raise DataError("env_labels not aligned with dataset rows")
        env.flags.writeable = False
        object.__setattr__(self, "env_labels", env)


def _env_offsets(cfg: GeneratorConfig, rng) -> np.ndarray:
    if cfg.d_noise == 0:
        return np.zeros((cfg.n_envs, 0))
    if cfg.d_noise >= cfg.n_envs:
        # orthogonal directions: every pair of environments is env_offset * sqrt(2) apart
        q, _ = np.linalg.qr(rng.standard_normal((cfg.d_noise, cfg.n_envs)))
        dirs = q.T
    else:
        dirs = rng.standard_normal((cfg.n_envs, cfg.d_noise))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return cfg.env_offset * dirs


def generate(config: GeneratorConfig) -> SyntheticDataset:
    cfg = config
    root = np.random.SeedSequence(cfg.seed)
    offset_ss, *env_ss = root.spawn(cfg.n_envs + 1)
    offsets = _env_offsets(cfg, np.random.default_rng(offset_ss))
    xs, ys = [], []
    for e in range(cfg.n_envs):
        rng = np.random.default_rng(env_ss[e])
        n = cfg.n_per_env
        y = rng.integers(0, 2, size=n)
        sgn = (2 * y - 1)[:, None].astype(np.float64)
        inv = sgn * cfg.mu_inv + cfg.noise_sd * rng.standard_normal((n, cfg.d_inv))
        sp = sgn * cfg.mu_sp * cfg.spurious_signs[e] + cfg.noise_sd * rng.standard_normal((n, cfg.d_sp))
        noise = offsets[e] + cfg.noise_sd * rng.standard_normal((n, cfg.d_noise))
        xs.append(np.hstack([inv, sp, noise]))
        ys.append(y)
    names = (
        [f"inv_{j}" for j in range(cfg.d_inv)]
        + [f"sp_{j}" for j in range(cfg.d_sp)]
        + [f"noise_{j}" for j in range(cfg.d_noise)]
    )
    ds = LabeledDataset(features=np.vstack(xs), labels=np.concatenate(ys), feature_names=tuple(names))
    env = np.repeat(np.arange(cfg.n_envs), cfg.n_per_env)
    return SyntheticDataset(dataset=ds, env_labels=env, config=cfg)


def feature_slices(cfg: GeneratorConfig) -> dict[str, slice]:
    a, b = cfg.d_inv, cfg.d_inv + cfg.d_sp
    return {"inv": slice(0, a), "sp": slice(a, b), "noise": slice(b, cfg.n_features)}


def split_envs(synth: SyntheticDataset, holdout_env: int) -> tuple[SyntheticDataset, SyntheticDataset]:
    env = synth.env_labels
    n_envs = int(env.max()) + 1
    if not 0 <= holdout_env < n_envs:
        raise DataError(f"holdout_env {holdout_env} out of range for {n_envs} environments")
    te = np.flatnonzero(env == holdout_env)
    tr = np.flatnonzero(env != holdout_env)
    if tr.size == 0:
        raise DataError("no training environments left")
    return (
        SyntheticDataset(subset(synth.dataset, tr), env[tr], synth.config),
        SyntheticDataset(subset(synth.dataset, te), env[te], synth.config),
    )


def ood_protocol(config: GeneratorConfig, holdout_env: int) -> tuple[SyntheticDataset, SyntheticDataset]:
    """Train on all environments but ``holdout_env``; test on that one."""
    if not 0 <= holdout_env < config.n_envs:
        raise DataError(f"holdout_env {holdout_env} out of range for {config.n_envs} environments")
    others = [s for e, s in enumerate(config.spurious_signs) if e != holdout_env]
    if others and all(s == config.spurious_signs[holdout_env] for s in others):
        raise DataError("holdout environment's spurious sign matches every training environment")
    return split_envs(generate(config), holdout_env)


def write_envs_csv(synth: SyntheticDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "env"])
        for sid, e in zip(synth.dataset.sample_ids, synth.env_labels):
            w.writerow([sid, int(e)])
