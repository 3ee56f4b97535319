"""Adaptive vision transformer: Python front end over the native core."""

import csv
import io
import json

from . import _core
from ._core import ArtifactError, ConfigError, DataError, NumericError

__all__ = [
    "ArtifactError",
    "ConfigError",
    "DataError",
    "Model",
    "NumericError",
    "gumbel_softmax_binary",
    "normalize_config",
    "policy_flops",
    "static_flops",
    "synthetic_splits",
    "train",
    "welch_t_test",
]


def normalize_config(config):
    """Validated config dict with every default filled in."""
    return json.loads(_core.normalize_config(json.dumps(config)))


def static_flops(config):
    return json.loads(_core.static_flops(json.dumps(config)))


def policy_flops(config, policy, head_mode="full", charge_decisions=True):
    """policy: list of {"patches", "heads", "blocks"} dicts, one per block."""
    return json.loads(_core.policy_flops(json.dumps(config), json.dumps(policy), head_mode, charge_decisions))


def synthetic_splits(config):
    """(train, test) dicts of numpy arrays: images [n, S, S, 1], labels, difficulty."""
    return _core.synthetic_splits(json.dumps(config))


def gumbel_softmax_binary(p, tau, g_keep, g_drop):
    return _core.gumbel_softmax_binary(p, tau, g_keep, g_drop)


def welch_t_test(a, b):
    return _core.welch_t_test(list(a), list(b))


def train(config, mode="adaptive", overwrite=False):
    """Runs one training job into config["output_dir"]; returns its metrics row."""
    text = _core.train(json.dumps(config), mode, overwrite)
    return next(csv.DictReader(io.StringIO(text)))


class Model:
    def __init__(self, native):
        self._native = native

    @classmethod
    def load(cls, path):
        return cls(_core.Model.load(str(path)))

    @property
    def config(self):
        return json.loads(self._native.config)

    @property
    def adaptive(self):
        return self._native.adaptive

    def predict(self, images, source="learned", head_mode="full"):
        """(logits [B, classes], per-sample policies)."""
        logits, policies = self._native.predict(images, source, head_mode)
        return logits, json.loads(policies)
