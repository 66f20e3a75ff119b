"""Experiment configuration files.

The format is INI: each ``[section]`` holds ``key = value`` pairs and every
setting is addressed by its dotted name ``section.key``. Values are parsed as
JSON when possible (numbers, booleans, lists) and kept as strings otherwise.
Unknown sections or keys are errors.

A ``[sweep]`` section maps dotted names to lists; the run is repeated for
every combination::

    [experiment]
    method = abris
    problem = gaussian-match

    [sweep]
    abris.window = [10, 20, 30, 40, 50]
    abris.batch_size = [4, 8]
"""

import configparser
import copy
import hashlib
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

from abris.errors import ConfigError

METHODS = ("abris", "bbvi-plain", "mh", "smc")
PROBLEMS = ("gaussian-match", "poisson")

DEFAULTS = {
    "experiment": {
        "method": "abris",
        "problem": "gaussian-match",
        "seed": 0,
        "replications": 1,
        "parallel": 1,
        "out_dir": "results",
    },
    "problem": {
        "dim": 4,
        "variance": 0.1,
        "n_kkl": 20,
        "length_scale": 0.3,
        "scaled_basis": True,
        "noise_seed": 1000,
        "mesh_n": 10,
    },
    "abris": {
        "batch_size": 8,
        "window": 10,
        "n_periodic": 50,
        "alpha_sc": None,
        "max_iterations": 150000,
        "max_model_calls": 1000000,
        "use_ess_criterion": True,
        "use_score_criterion": True,
        "baseline": True,
        "family": "meanfield",
        "n_components": 4,
    },
    "optimizer": {
        "learning_rate": None,
        "lr_rule": "constant",
        "lr_factor": 0.9,
        "lr_interval": 1000,
        "natural_gradient": True,
        "eta_tilde": 1e-2,
        "i_b": 50,
        "eta_bound": 1e-6,
        "clip_threshold": 1e6,
        "alpha_reg": None,
    },
    "convergence": {
        "rule": None,
        "tol": 1e-3,
    },
    "mh": {
        "n_steps": 10000,
        "i_tune": 100,
        "initial_scale": 0.1,
        "burn_in": 0.5,
    },
    "smc": {
        "n_particles": 100,
        "n_rejuvenation": 10,
        "ess_threshold": 0.5,
    },
    "evaluation": {
        "interval": 250,
        "n_draws": 10000,
        "threshold": 0.10,
    },
}


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        low = text.strip().lower()
        if low in ("none", "null", ""):
            return None
        if low in ("true", "false"):
            return low == "true"
        return text.strip()


@dataclass
class ExperimentConfig:
    """Validated flat settings plus sweep lists.

    Attributes:
        values (dict): ``"section.key" -> value`` for every known setting.
        sweep (dict): ``"section.key" -> list`` of values to expand.
    """

    values: dict
    sweep: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def section(self, name):
        prefix = name + "."
        return {k[len(prefix) :]: v for k, v in self.values.items() if k.startswith(prefix)}

    @property
    def method(self):
        return self.values["experiment.method"]

    @property
    def problem(self):
        return self.values["experiment.problem"]

    def with_overrides(self, overrides):
        values = dict(self.values)
        for key, value in overrides.items():
            if key not in values:
                raise ConfigError(f"unknown setting {key!r}")
            values[key] = value
        cfg = ExperimentConfig(values, dict(self.sweep))
        cfg.validate()
        return cfg

    def expand(self):
        """One config per point of the sweep grid (just ``self`` without a sweep)."""
        if not self.sweep:
            return [self]
        keys = sorted(self.sweep)
        out = []
        for combo in itertools.product(*(self.sweep[k] for k in keys)):
            cfg = ExperimentConfig(dict(self.values))
            cfg.values.update(zip(keys, combo))
            cfg.validate()
            out.append(cfg)
        return out

    def content_hash(self):
        blob = json.dumps({"values": self.values, "sweep": self.sweep}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    def to_dict(self):
        return {"values": copy.deepcopy(self.values), "sweep": copy.deepcopy(self.sweep)}

    def validate(self):
        v = self.values
        if v["experiment.method"] not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {v['experiment.method']!r}")
        if v["experiment.problem"] not in PROBLEMS:
            raise ConfigError(f"problem must be one of {PROBLEMS}, got {v['experiment.problem']!r}")
        positive = [
            "experiment.replications",
            "experiment.parallel",
            "problem.dim",
            "problem.n_kkl",
            "abris.batch_size",
            "abris.n_periodic",
            "abris.max_iterations",
            "abris.max_model_calls",
            "mh.n_steps",
            "mh.i_tune",
            "smc.n_particles",
            "evaluation.interval",
            "evaluation.n_draws",
        ]
        for key in positive:
            if not isinstance(v[key], int) or isinstance(v[key], bool) or v[key] < 1:
                raise ConfigError(f"{key} must be a positive integer, got {v[key]!r}")
        if not isinstance(v["abris.window"], int) or v["abris.window"] < 0:
            raise ConfigError("abris.window must be a non-negative integer")
        if v["abris.alpha_sc"] is not None and not v["abris.alpha_sc"] > 0:
            raise ConfigError("abris.alpha_sc must be positive")
        if v["abris.family"] not in ("meanfield", "gmm"):
            raise ConfigError("abris.family must be 'meanfield' or 'gmm'")
        if v["convergence.rule"] not in (None, "relative-parameter-error", "budget-only"):
            raise ConfigError(f"unknown convergence rule {v['convergence.rule']!r}")
        if v["convergence.rule"] == "relative-parameter-error" and v["experiment.problem"] != "gaussian-match":
            raise ConfigError("relative-parameter-error needs a known optimum (gaussian-match only)")
        if v["optimizer.lr_rule"] not in ("constant", "step"):
            raise ConfigError("optimizer.lr_rule must be 'constant' or 'step'")
        if not 0.0 < v["smc.ess_threshold"] <= 1.0:
            raise ConfigError("smc.ess_threshold must lie in (0, 1]")
        if not 0.0 <= v["mh.burn_in"] < 1.0:
            raise ConfigError("mh.burn_in must lie in [0, 1)")
        return self


def default_config():
    values = {f"{s}.{k}": copy.deepcopy(d) for s, keys in DEFAULTS.items() for k, d in keys.items()}
    return ExperimentConfig(values).validate()


def parse_config(text):
    """Parse configuration text into a validated :class:`ExperimentConfig`."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"malformed config: {err}") from err
    cfg = default_config()
    sweep = {}
    for section in parser.sections():
        if section == "sweep":
            for key, raw in parser.items(section):
                if key not in cfg.values:
                    raise ConfigError(f"unknown sweep setting {key!r}")
                values = _parse_value(raw)
                if not isinstance(values, list) or not values:
                    raise ConfigError(f"sweep setting {key!r} needs a non-empty list")
                sweep[key] = values
            continue
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            dotted = f"{section}.{key}"
            if dotted not in cfg.values:
                raise ConfigError(f"unknown setting {dotted!r}")
            cfg.values[dotted] = _parse_value(raw)
    cfg.sweep = sweep
    return cfg.validate()


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    return parse_config(text)
