import os
import zlib

import numpy as np
import yaml

DEFAULT_CONFIG_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), "config.yaml")


def read_yaml(path):
    """Reads a YAML file into a dict."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"❌ Config file not found at: {path}")

    with open(path, "r", encoding="utf-8") as file:
        return yaml.safe_load(file) or {}


def deep_merge(base, override):
    """Returns ``base`` updated recursively with ``override``; neither input is mutated."""
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(path=None):
    """Loads the default config.yaml, with the user's file (if any) merged over it."""
    config = read_yaml(DEFAULT_CONFIG_PATH)
    if path is not None:
        config = deep_merge(config, read_yaml(path))
    return config


def derive_seed(seed, *labels):
    """Stable child seed for a named sub-task, so reruns and reordering agree."""
    entropy = [int(seed)] + [zlib.crc32(str(label).encode("utf-8")) for label in labels]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def make_rng(seed, *labels):
    return np.random.default_rng(derive_seed(seed, *labels) if labels else seed)
