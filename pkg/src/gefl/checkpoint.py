"""Plain-text checkpoints: ``# key = json`` header lines, then one float per line."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .genmodels import GenerativeModel, build_generative
from .nn import Network, parse_layers

MAGIC = "# gefl-checkpoint 1"


def _write(path, header: dict, flat: np.ndarray) -> None:
    lines = [MAGIC] + [f"# {k} = {json.dumps(v)}" for k, v in header.items()]
    lines += [repr(float(v)) for v in flat]
    Path(path).write_text("\n".join(lines) + "\n")


def _read(path) -> tuple[dict, np.ndarray]:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != MAGIC:
        raise ConfigError(f"{path}: not a gefl checkpoint")
    header, values = {}, []
    for n, line in enumerate(text[1:], start=2):
        if line.startswith("#"):
            key, sep, value = line[1:].partition("=")
            if not sep:
                raise ConfigError(f"{path}:{n}: malformed header line")
            header[key.strip()] = json.loads(value)
        elif line.strip():
            values.append(float(line))
    return header, np.array(values)


def save_generative(path, model: GenerativeModel) -> None:
    _write(path, {"kind": "generative", **model.header()}, model.get_flat())


def load_generative(path) -> GenerativeModel:
    header, flat = _read(path)
    if header.pop("kind", None) != "generative":
        raise ConfigError(f"{path}: not a generative-model checkpoint")
    family = header.pop("family")
    num_classes, sample_dim = header.pop("num_classes"), header.pop("sample_dim")
    if header.get("value_range") is not None:
        header["value_range"] = tuple(header["value_range"])
    header["hidden"] = tuple(header["hidden"])
    model = build_generative(family, num_classes, sample_dim, **header)
    model.set_flat(flat)
    return model


def save_network(path, net: Network) -> None:
    _write(path, {"kind": "network", "layers": net.describe(), "dim": net.in_dim},
           net.flatten_params())


def load_network(path) -> Network:
    header, flat = _read(path)
    if header.get("kind") != "network":
        raise ConfigError(f"{path}: not a network checkpoint")
    net = Network(parse_layers(header["layers"]), dim=header.get("dim"))
    net.unflatten_params(flat)
    return net
