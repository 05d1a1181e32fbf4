"""On-disk formats: checkpoints (JSON), demos and metrics (CSV), config files.

Floats are written with ``repr`` so every value round-trips exactly, and
documents are emitted in a fixed key order so save -> load -> save is
byte-identical.
"""
from __future__ import annotations

import configparser
import csv
import io
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .discriminator import RegWeights, RewardMoE
from .envs import EnvSpec
from .nn import MlpSpec
from .policy import GatingNet, OptionPolicy
from .rl import GaeConfig, PpoConfig, TrpoConfig, ValueFn

FORMAT_VERSION = 1


class FormatError(ValueError):
    """A file does not match the expected format."""


class ConfigError(ValueError):
    """Invalid or unreadable configuration."""


# ------------------------------------------------------------------ config

@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 150
    batch_timesteps: int = 5000
    disc_updates_per_iter: int = 3
    disc_minibatch: int = 512
    disc_learning_rate: float = 1e-3
    optimizer: str = "trpo"
    n_options: int = 1
    hidden: tuple = (64, 64)
    activation: str = "tanh"
    init_log_std: float = 0.0
    reg: RegWeights = field(default_factory=RegWeights)
    gae: GaeConfig = field(default_factory=GaeConfig)
    trpo: TrpoConfig = field(default_factory=TrpoConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    value_iters: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("train.iterations must be >= 1")
        if self.batch_timesteps < 1:
            raise ConfigError("train.batch_timesteps must be >= 1")
        if self.n_options < 1:
            raise ConfigError("options.n must be >= 1")
        if self.optimizer not in ("trpo", "ppo"):
            raise ConfigError(f"train.optimizer must be 'trpo' or 'ppo', got {self.optimizer!r}")
        if self.disc_updates_per_iter < 0 or self.disc_minibatch < 1:
            raise ConfigError("invalid discriminator update settings")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["hidden"] = tuple(d.get("hidden", (64, 64)))
        for key, typ in (("reg", RegWeights), ("gae", GaeConfig), ("trpo", TrpoConfig), ("ppo", PpoConfig)):
            if isinstance(d.get(key), dict):
                d[key] = typ(**d[key])
        return cls(**d)


# config-file key -> (section, field) ; section None means TrainConfig itself
_KEYS = {
    "env.name": ("env", "name"),
    "env.gravity_mult": ("env", "gravity_mult"),
    "env.horizon": ("env", "horizon"),
    "env.dt": ("env", "dt"),
    "train.iterations": (None, "iterations"),
    "train.batch_timesteps": (None, "batch_timesteps"),
    "train.optimizer": (None, "optimizer"),
    "train.disc_updates": (None, "disc_updates_per_iter"),
    "train.disc_minibatch": (None, "disc_minibatch"),
    "train.disc_lr": (None, "disc_learning_rate"),
    "train.init_log_std": (None, "init_log_std"),
    "train.value_iters": (None, "value_iters"),
    "net.hidden": (None, "hidden"),
    "net.activation": (None, "activation"),
    "options.n": (None, "n_options"),
    "reg.lambda_b": ("reg", "lambda_b"),
    "reg.lambda_e": ("reg", "lambda_e"),
    "reg.lambda_v": ("reg", "lambda_v"),
    "reg.lambda_mi": ("reg", "lambda_mi"),
    "reg.tau": ("reg", "tau"),
    "gae.gamma": ("gae", "gamma"),
    "gae.lam": ("gae", "lam"),
    "trpo.kl_max": ("trpo", "kl_max"),
    "trpo.cg_iters": ("trpo", "cg_iters"),
    "trpo.cg_damping": ("trpo", "cg_damping"),
    "ppo.clip_eps": ("ppo", "clip_eps"),
    "ppo.epochs": ("ppo", "epochs"),
    "ppo.learning_rate": ("ppo", "learning_rate"),
    "seeds.base": (None, "seed"),
}


def _coerce(template, raw: str, key: str):
    try:
        if isinstance(template, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(template, int):
            return int(raw)
        if isinstance(template, float):
            return float(raw)
        if isinstance(template, tuple):
            return tuple(int(x) for x in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_config_text(text: str) -> dict:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    return dict(parser["config"])


def build_config(values: dict, base_env: EnvSpec | None = None,
                 base_train: TrainConfig | None = None) -> tuple[EnvSpec, TrainConfig]:
    """Apply flat ``section.key`` values on top of defaults."""
    env = asdict(base_env or EnvSpec())
    train = base_train or TrainConfig()
    top = {f.name: getattr(train, f.name) for f in fields(train)}
    nested = {k: asdict(top[k]) for k in ("reg", "gae", "trpo", "ppo")}
    for key, raw in values.items():
        if key not in _KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        section, name = _KEYS[key]
        if section == "env":
            env[name] = _coerce(env[name], str(raw), key)
        elif section is None:
            top[name] = _coerce(top[name], str(raw), key)
        else:
            nested[section][name] = _coerce(nested[section][name], str(raw), key)
    try:
        env_spec = EnvSpec(**env)
        top.update(reg=RegWeights(**nested["reg"]), gae=GaeConfig(**nested["gae"]),
                   trpo=TrpoConfig(**nested["trpo"]), ppo=PpoConfig(**nested["ppo"]))
        return env_spec, TrainConfig(**top)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> tuple[EnvSpec, TrainConfig]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return build_config(parse_config_text(path.read_text()))


# -------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    policy: OptionPolicy
    value: ValueFn
    gating: GatingNet | None = None
    reward: RewardMoE | None = None
    env: EnvSpec = field(default_factory=EnvSpec)
    config: dict = field(default_factory=dict)
    seed: int = 0
    format_version: int = FORMAT_VERSION


def _arr(a) -> dict:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": [float(x) for x in a.ravel()]}


def _unarr(d, what) -> np.ndarray:
    try:
        shape = tuple(int(n) for n in d["shape"])
        data = np.array(d["data"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed array for {what}: {exc}") from None
    if data.size != int(np.prod(shape)):
        raise FormatError(f"{what}: {data.size} values do not fill shape {shape}")
    return data.reshape(shape)


def _spec(s: MlpSpec) -> dict:
    return {"layer_sizes": list(s.layer_sizes), "hidden_activation": s.hidden_activation,
            "output_activation": s.output_activation}


def _unspec(d) -> MlpSpec:
    return MlpSpec(tuple(d["layer_sizes"]), d["hidden_activation"], d["output_activation"])


def _net(spec, params, what):
    params = _unarr(params, what)
    if params.shape != (spec.n_params,):
        raise FormatError(f"{what}: expected {spec.n_params} parameters, found {params.shape}")
    return params


def checkpoint_to_text(ck: Checkpoint) -> str:
    doc = {
        "format_version": ck.format_version,
        "env": asdict(ck.env),
        "seed": int(ck.seed),
        "config": ck.config,
        "policy": {"spec": _spec(ck.policy.spec), "params": _arr(ck.policy.params),
                   "log_std": _arr(ck.policy.log_std)},
        "value": {"spec": _spec(ck.value.spec), "params": _arr(ck.value.params),
                  "mix_fraction": ck.value.mix_fraction},
        "gating": None if ck.gating is None else {"spec": _spec(ck.gating.spec), "params": _arr(ck.gating.params)},
        "reward": None if ck.reward is None else {"spec": _spec(ck.reward.spec), "params": _arr(ck.reward.params)},
    }
    return json.dumps(doc, indent=1) + "\n"


def checkpoint_from_text(text: str) -> Checkpoint:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"checkpoint is truncated or not valid JSON: {exc}") from None
    if doc.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {doc.get('format_version')!r}")
    try:
        p = doc["policy"]
        pspec = _unspec(p["spec"])
        policy = OptionPolicy(pspec, _net(pspec, p["params"], "policy"), _unarr(p["log_std"], "log_std"))
        v = doc["value"]
        vspec = _unspec(v["spec"])
        value = ValueFn(vspec, _net(vspec, v["params"], "value"), float(v["mix_fraction"]))
        gating = reward = None
        if doc["gating"] is not None:
            gspec = _unspec(doc["gating"]["spec"])
            gating = GatingNet(gspec, _net(gspec, doc["gating"]["params"], "gating"))
        if doc["reward"] is not None:
            rspec = _unspec(doc["reward"]["spec"])
            reward = RewardMoE(rspec, _net(rspec, doc["reward"]["params"], "reward"))
        env = EnvSpec(**doc["env"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"checkpoint is missing a field: {exc}") from None
    except ValueError as exc:
        raise FormatError(str(exc)) from None
    dims = {policy.obs_dim, value.spec.in_dim, env.obs_dim}
    dims |= {n.spec.in_dim for n in (gating, reward) if n is not None}
    if len(dims) != 1 or policy.act_dim != env.act_dim:
        raise FormatError("checkpoint networks disagree on observation/action dimensions")
    if gating is not None and gating.n_options != policy.n_options:
        raise FormatError("gating width does not match the number of policy options")
    return Checkpoint(policy, value, gating, reward, env, doc["config"], int(doc["seed"]), doc["format_version"])


def save_checkpoint(ck: Checkpoint, path) -> None:
    Path(path).write_text(checkpoint_to_text(ck))


def load_checkpoint(path) -> Checkpoint:
    return checkpoint_from_text(Path(path).read_text())


# -------------------------------------------------------------------- demos

@dataclass
class DemoSet:
    """Expert demonstrations as state sequences only, grouped by source label."""
    groups: list = field(default_factory=list)     # [(label, [states (T+1, d), ...]), ...]
    obs_dim: int = 0

    def __post_init__(self):
        for label, episodes in self.groups:
            for ep in episodes:
                if ep.ndim != 2 or ep.shape[1] != self.obs_dim:
                    raise ValueError(f"episode in group {label!r} has shape {ep.shape}, "
                                     f"expected (T, {self.obs_dim})")

    @property
    def labels(self) -> list:
        return [g for g, _ in self.groups]

    @property
    def n_episodes(self) -> int:
        return sum(len(eps) for _, eps in self.groups)

    def all_states(self) -> np.ndarray:
        return np.concatenate([ep for _, eps in self.groups for ep in eps])

    def merged(self, other: "DemoSet") -> "DemoSet":
        if self.groups and other.groups and self.obs_dim != other.obs_dim:
            raise ValueError("cannot merge demos with different observation sizes")
        return DemoSet(self.groups + other.groups, other.obs_dim if not self.groups else self.obs_dim)


def demos_to_text(demos: DemoSet) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group", "episode", "t"] + [f"s{i}" for i in range(demos.obs_dim)])
    for label, episodes in demos.groups:
        for e, ep in enumerate(episodes):
            for t, row in enumerate(ep):
                w.writerow([label, e, t] + [repr(float(x)) for x in row])
    return buf.getvalue()


def demos_from_text(text: str) -> DemoSet:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][:3] != ["group", "episode", "t"]:
        raise FormatError("demo file must start with header group,episode,t,s0..")
    d = len(rows[0]) - 3
    if d < 1 or rows[0][3:] != [f"s{i}" for i in range(d)]:
        raise FormatError("demo header must list state columns s0..s{d-1}")
    groups: dict = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != d + 3:
            raise FormatError(f"row {lineno}: expected {d + 3} columns, found {len(row)}")
        try:
            label, e, t = row[0], int(row[1]), int(row[2])
            values = [float(x) for x in row[3:]]
        except ValueError:
            raise FormatError(f"row {lineno}: non-numeric field") from None
        eps = groups.setdefault(label, {})
        ep = eps.setdefault(e, [])
        if t != len(ep):
            raise FormatError(f"row {lineno}: time index {t} out of sequence")
        ep.append(values)
    return DemoSet([(label, [np.array(eps[k]) for k in sorted(eps)]) for label, eps in groups.items()], d)


def save_demos(demos: DemoSet, path) -> None:
    Path(path).write_text(demos_to_text(demos))


def load_demos(path) -> DemoSet:
    return demos_from_text(Path(path).read_text())


# ------------------------------------------------------------------ metrics

@dataclass
class MetricsRow:
    iteration: int
    mean_true_return: float
    return_stderr: float
    disc_loss: float
    reg_b: float
    reg_e: float
    reg_v: float
    reg_mi: float
    specialization_frac_0p1: float
    mean_gate: list

    def __post_init__(self):
        if abs(sum(self.mean_gate) - 1.0) > 1e-6:
            raise ValueError(f"mean gate entries must sum to 1, got {self.mean_gate}")

    def cells(self) -> list:
        scalars = [self.mean_true_return, self.return_stderr, self.disc_loss, self.reg_b,
                   self.reg_e, self.reg_v, self.reg_mi, self.specialization_frac_0p1]
        return [str(int(self.iteration))] + [repr(float(x)) for x in scalars] + \
               [repr(float(g)) for g in self.mean_gate]


METRIC_COLUMNS = ["iteration", "mean_true_return", "return_stderr", "disc_loss", "reg_b", "reg_e",
                  "reg_v", "reg_mi", "specialization_frac_0p1"]


def metrics_header(n_options: int) -> str:
    return ",".join(METRIC_COLUMNS + [f"mean_gate_{i}" for i in range(n_options)]) + "\n"


def metrics_to_text(rows) -> str:
    if not rows:
        return ""
    return metrics_header(len(rows[0].mean_gate)) + "".join(",".join(r.cells()) + "\n" for r in rows)


def append_metrics(path, row: MetricsRow) -> None:
    """Append one row (writing the header first for a new file) in a single write."""
    path = Path(path)
    line = ",".join(row.cells()) + "\n"
    if not path.exists() or path.stat().st_size == 0:
        line = metrics_header(len(row.mean_gate)) + line
    with open(path, "a") as fh:
        fh.write(line)
        fh.flush()
        os.fsync(fh.fileno())


def load_metrics(path) -> list:
    text = Path(path).read_text()
    lines = text.split("\n")
    if len(lines) < 1 or not lines[0].startswith("iteration,"):
        raise FormatError("metrics file lacks a header")
    header = lines[0].split(",")
    n_gate = len(header) - len(METRIC_COLUMNS)
    rows = []
    # the last element is '' for a complete file, or a torn line from a killed writer
    for lineno, line in enumerate(lines[1:-1], start=2):
        cells = line.split(",")
        if len(cells) != len(header):
            raise FormatError(f"row {lineno}: expected {len(header)} columns, found {len(cells)}")
        vals = [float(c) for c in cells[1:]]
        rows.append(MetricsRow(int(cells[0]), *vals[:8], mean_gate=vals[8:8 + n_gate]))
    return rows
