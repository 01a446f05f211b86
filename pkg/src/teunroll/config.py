"""Experiment configuration: an INI document with sections [data], [mask],
[model], [unroll], [train] and [eval].

Every key has a documented default (see SCHEMA); unknown sections or keys
are rejected with their full key path.  Relative paths resolve against the
directory containing the config file, and the fully resolved document can
be echoed back out so a run is reproducible from its own artifacts.
"""

from __future__ import annotations

import configparser
import os

ALGORITHM_CHOICES = ("vsqp", "admm", "alg1", "vsqp_te", "admm_te", "vamp")
PROX_CHOICES = ("identity", "soft_threshold", "tikhonov", "resnet", "unet")
SHARING_CHOICES = ("shared", "unshared", "time_embedded")
MASK_CHOICES = ("equispaced", "random")


class ConfigError(ValueError):
    pass


def _choice(options):
    def parse(raw, key):
        if raw not in options:
            raise ConfigError(f"{key}: {raw!r} is not one of {options}")
        return raw

    return parse


def _typed(cast, kind):
    def parse(raw, key):
        try:
            return cast(raw)
        except ValueError:
            raise ConfigError(f"{key}: {raw!r} is not a valid {kind}") from None

    return parse


def _path(raw, key):
    return raw  # resolved later against the config directory


_INT = _typed(int, "integer")
_FLOAT = _typed(float, "real number")

# (parser, default, is_path)
SCHEMA = {
    "data": {
        "dir": (_path, ".", True),
        "index": (_INT, "0", False),
        "noise_sigma": (_FLOAT, "0.01", False),
        "noise_seed": (_INT, "0", False),
    },
    "mask": {
        "kind": (_choice(MASK_CHOICES), "equispaced", False),
        "accel": (_INT, "4", False),
        "acs": (_INT, "4", False),
        "seed": (_INT, "0", False),
    },
    "model": {
        "prox": (_choice(PROX_CHOICES), "tikhonov", False),
        "theta": (_FLOAT, "0.05", False),
        "gamma": (_FLOAT, "1.0", False),
        "blocks": (_INT, "3", False),
        "channels": (_INT, "16", False),
        "base_channels": (_INT, "16", False),
        "res_blocks": (_INT, "1", False),
        "net_seed": (_INT, "0", False),
        "checkpoint": (_path, "", True),
    },
    "unroll": {
        "algorithm": (_choice(ALGORITHM_CHOICES), "alg1", False),
        "t": (_INT, "5", False),
        "cg_iters": (_INT, "15", False),
        "sharing": (_choice(SHARING_CHOICES), "time_embedded", False),
        "mu": (_FLOAT, "-1", False),  # -1 = per-algorithm default
        "rho": (_FLOAT, "0.1", False),
        "lam": (_FLOAT, "0.1", False),
        "damping": (_FLOAT, "0.9", False),
        "max_iters": (_INT, "20", False),
        "trace_probes": (_INT, "32", False),
        "mu_floor": (_FLOAT, "1e-8", False),
        "out": (_path, "runs/recon", True),
    },
    "train": {
        "epochs": (_INT, "10", False),
        "lr": (_FLOAT, "5e-4", False),
        "seed": (_INT, "0", False),
        "out": (_path, "runs/train", True),
    },
    "eval": {
        "out": (_path, "runs/eval", True),
        "crop": (_INT, "0", False),
    },
}


def default_mu(algorithm):
    return 5e-2 if algorithm == "vsqp" else 1.5e-2


def load_config(path):
    """Parse and validate an experiment config file.

    Returns a {section: {key: value}} dict with every default resolved and
    all paths made absolute relative to the config file's directory.
    """
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    base = os.path.dirname(os.path.abspath(path))

    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key in parser[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")

    out = {}
    for section, keys in SCHEMA.items():
        out[section] = {}
        for key, (parse, default, is_path) in keys.items():
            raw = parser.get(section, key, fallback=default)
            value = parse(raw, f"{section}.{key}")
            if is_path and value:
                value = os.path.normpath(os.path.join(base, value))
            out[section][key] = value
    if out["unroll"]["mu"] <= 0:
        out["unroll"]["mu"] = default_mu(out["unroll"]["algorithm"])
    return out


def echo_config(config, path):
    """Write the fully resolved config so the run can be reproduced from it."""
    parser = configparser.ConfigParser()
    for section, keys in config.items():
        parser[section] = {}
        for key, value in keys.items():
            parser[section][key] = repr(value) if isinstance(value, float) else str(value)
    with open(path, "w") as fh:
        parser.write(fh)
