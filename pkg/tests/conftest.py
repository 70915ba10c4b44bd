"""Shared fixtures: the 2-2-2 reference network, random model builders."""

import json

import numpy as np
import pytest

from pacmodel import ClassifierModel, DenseLayer, InProcessOracle, load_model

# Tiny 2-2-2 ReLU network used throughout: hidden weights [[3,-10],[5,-4]]
# with biases (-9,-10), output weights [[3,1],[9,7]] with biases (14,-10).
# Hand-checked values: f(0,0) = (14,-10), f(1,-1) = (26,26).
REFNET = {
    "input_dim": 2,
    "layers": [
        {"type": "dense", "weights": [[3, -10], [5, -4]], "bias": [-9, -10], "activation": "relu"},
        {"type": "dense", "weights": [[3, 1], [9, 7]], "bias": [14, -10], "activation": "identity"},
    ],
}


@pytest.fixture(scope="session")
def refnet_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("models") / "refnet.json"
    path.write_text(json.dumps(REFNET))
    return path


@pytest.fixture(scope="session")
def refnet_model(refnet_file):
    return load_model(refnet_file)


@pytest.fixture()
def refnet_oracle(refnet_model):
    return InProcessOracle(refnet_model)


def make_affine_model(weights, bias) -> ClassifierModel:
    """Single identity layer, so every score difference is exactly affine."""
    weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    bias = np.asarray(bias, dtype=np.float64)
    return ClassifierModel(
        input_dim=weights.shape[1],
        output_dim=weights.shape[0],
        layers=(DenseLayer(weights=weights, bias=bias, activation="identity"),),
    )


def affine_truth(weights, bias, label):
    """Exact score-difference coefficients (intercept first) for rivals of
    ``label``, ascending."""
    weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    bias = np.asarray(bias, dtype=np.float64)
    rows = []
    for i in range(weights.shape[0]):
        if i == label - 1:
            continue
        rows.append(
            np.concatenate([[bias[i] - bias[label - 1]], weights[i] - weights[label - 1]])
        )
    return np.vstack(rows)


def make_random_mlp(seed, dims, weight_scale=1.0, bias_scale=0.3) -> ClassifierModel:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 2024])))
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        activation = "identity" if i == len(dims) - 2 else "relu"
        layers.append(
            DenseLayer(
                weights=rng.normal(0.0, weight_scale / np.sqrt(fan_in), (fan_out, fan_in)),
                bias=rng.normal(0.0, bias_scale, fan_out),
                activation=activation,
            )
        )
    return ClassifierModel(input_dim=dims[0], output_dim=dims[-1], layers=tuple(layers))
