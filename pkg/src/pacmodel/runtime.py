"""Black-box classifier access: in-process dense networks and external oracles.

The rest of the package only talks to classifiers through the oracle
interface (``forward``/``forward_batch`` plus dimensions and a query
counter), so anything that can answer score queries can be analysed.
Labels are 1-based everywhere in the public API.
"""

from __future__ import annotations

import json
import shlex
import subprocess
import threading
from dataclasses import dataclass

import numpy as np

from .errors import ModelFormatError, OracleProtocolError

__all__ = [
    "DenseLayer",
    "ClassifierModel",
    "InProcessOracle",
    "ExternalOracle",
    "load_model",
    "forward",
    "classify",
    "score_difference",
    "score_difference_batch",
    "untargeted_score_difference",
    "untargeted_score_difference_batch",
    "rival_labels",
]

_ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class DenseLayer:
    """One dense layer: y = act(W x + b), with W of shape (rows, cols)."""

    weights: np.ndarray
    bias: np.ndarray
    activation: str

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))
        object.__setattr__(self, "bias", np.asarray(self.bias, dtype=np.float64))
        if self.weights.ndim != 2:
            raise ModelFormatError("layer weights must be a 2-D matrix")
        if self.bias.ndim != 1 or self.bias.size != self.weights.shape[0]:
            raise ModelFormatError(
                f"bias length {self.bias.size} does not match weight rows {self.weights.shape[0]}"
            )
        if self.activation not in _ACTIVATIONS:
            raise ModelFormatError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ModelFormatError("layer contains non-finite weights or biases")

    @property
    def rows(self) -> int:
        return self.weights.shape[0]

    @property
    def cols(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class ClassifierModel:
    """A dense feed-forward classifier evaluated as a pure function.

    Layers must chain: the first layer consumes ``input_dim`` values, each
    layer feeds the next, and the last produces ``output_dim`` scores.
    Instances are immutable and safe for concurrent evaluation.
    """

    input_dim: int
    output_dim: int
    layers: tuple[DenseLayer, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ModelFormatError("model needs at least one layer")
        if self.input_dim < 1 or self.output_dim < 1:
            raise ModelFormatError("input_dim and output_dim must be positive")
        expected = self.input_dim
        for i, layer in enumerate(self.layers):
            if layer.cols != expected:
                raise ModelFormatError(
                    f"layers[{i}]: expected {expected} input columns, got {layer.cols}"
                )
            expected = layer.rows
        if expected != self.output_dim:
            raise ModelFormatError(
                f"last layer produces {expected} outputs, declared output_dim is {self.output_dim}"
            )

    def forward_batch(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != self.input_dim:
            raise ValueError(f"expected batch of shape (k, {self.input_dim}), got {points.shape}")
        if not np.all(np.isfinite(points)):
            raise ValueError("classifier inputs must be finite")
        h = points
        for layer in self.layers:
            h = h @ layer.weights.T + layer.bias
            if layer.activation == "relu":
                np.maximum(h, 0.0, out=h)
        return h


def load_model(path) -> ClassifierModel:
    """Load a dense classifier from the JSON model format.

    Schema: {"input_dim": int, "layers": [{"type": "dense",
    "weights": [[...row-major...]], "bias": [...],
    "activation": "relu"|"identity"}]}.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ModelFormatError(f"cannot read model file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc

    if not isinstance(raw, dict):
        raise ModelFormatError(f"{path}: top level must be an object")
    try:
        input_dim = int(raw["input_dim"])
        raw_layers = raw["layers"]
    except KeyError as exc:
        raise ModelFormatError(f"{path}: missing required field {exc.args[0]!r}") from exc
    if not isinstance(raw_layers, list) or not raw_layers:
        raise ModelFormatError(f"{path}: 'layers' must be a nonempty list")

    layers = []
    for i, entry in enumerate(raw_layers):
        where = f"{path}: layers[{i}]"
        if not isinstance(entry, dict):
            raise ModelFormatError(f"{where}: expected an object")
        if entry.get("type", "dense") != "dense":
            raise ModelFormatError(f"{where}: unsupported layer type {entry.get('type')!r}")
        try:
            weights = np.asarray(entry["weights"], dtype=np.float64)
            bias = np.asarray(entry["bias"], dtype=np.float64)
            activation = entry["activation"]
        except KeyError as exc:
            raise ModelFormatError(f"{where}: missing field {exc.args[0]!r}") from exc
        except (TypeError, ValueError) as exc:
            raise ModelFormatError(f"{where}: malformed numeric data ({exc})") from exc
        try:
            layers.append(DenseLayer(weights=weights, bias=bias, activation=activation))
        except ModelFormatError as exc:
            raise ModelFormatError(f"{where}: {exc}") from exc

    return ClassifierModel(input_dim=input_dim, output_dim=layers[-1].rows, layers=tuple(layers))


class InProcessOracle:
    """Oracle view of a ClassifierModel with an atomic query counter."""

    def __init__(self, model: ClassifierModel):
        self.model = model
        self._count = 0
        self._lock = threading.Lock()

    @property
    def input_dim(self) -> int:
        return self.model.input_dim

    @property
    def output_dim(self) -> int:
        return self.model.output_dim

    @property
    def query_count(self) -> int:
        return self._count

    def forward_batch(self, points: np.ndarray) -> np.ndarray:
        scores = self.model.forward_batch(points)
        with self._lock:
            self._count += scores.shape[0]
        return scores

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("forward expects a single input vector")
        return self.forward_batch(x[None, :])[0]

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


class ExternalOracle:
    """Classifier reached over a child process's stdin/stdout.

    Wire protocol (UTF-8, newline terminated):
      "DIM"                -> "m n"
      "EVAL k" + k input lines -> exactly k lines of n scores each.
    Replies of any other shape raise OracleProtocolError. Wire access is
    serialized internally, so concurrent callers see consistent batches.
    """

    def __init__(self, command, cwd=None):
        if isinstance(command, str):
            command = shlex.split(command)
        self.command = list(command)
        self._lock = threading.Lock()
        self._count = 0
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
                cwd=cwd,
            )
        except OSError as exc:
            raise OracleProtocolError(f"cannot start oracle {self.command}: {exc}") from exc
        try:
            reply = self._transact("DIM", 1)[0].split()
            try:
                if len(reply) != 2:
                    raise ValueError("expected two integers")
                self.input_dim = int(reply[0])
                self.output_dim = int(reply[1])
                if self.input_dim < 1 or self.output_dim < 1:
                    raise ValueError("dimensions must be positive")
            except ValueError as exc:
                raise OracleProtocolError(f"bad DIM reply {reply!r}: {exc}") from exc
        except OracleProtocolError:
            self.close()
            raise

    @property
    def query_count(self) -> int:
        return self._count

    def _transact(self, request: str, reply_lines: int, payload: list[str] | None = None) -> list[str]:
        proc = self._proc
        if proc.poll() is not None:
            raise OracleProtocolError(f"oracle process exited with code {proc.returncode}")
        try:
            proc.stdin.write(request + "\n")
            if payload:
                proc.stdin.write("\n".join(payload) + "\n")
            proc.stdin.flush()
            out = []
            for _ in range(reply_lines):
                line = proc.stdout.readline()
                if line == "":
                    raise OracleProtocolError("oracle closed its output mid-reply")
                out.append(line.rstrip("\n"))
            return out
        except (BrokenPipeError, OSError) as exc:
            raise OracleProtocolError(f"oracle I/O failure: {exc}") from exc

    def forward_batch(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != self.input_dim:
            raise ValueError(f"expected batch of shape (k, {self.input_dim}), got {points.shape}")
        if not np.all(np.isfinite(points)):
            raise ValueError("oracle inputs must be finite")
        k = points.shape[0]
        payload = [" ".join(format(v, ".17g") for v in row) for row in points]
        with self._lock:
            lines = self._transact(f"EVAL {k}", k, payload)
            self._count += k
        scores = np.empty((k, self.output_dim), dtype=np.float64)
        for i, line in enumerate(lines):
            parts = line.split()
            if len(parts) != self.output_dim:
                raise OracleProtocolError(
                    f"reply line {i} has {len(parts)} values, expected {self.output_dim}"
                )
            try:
                scores[i] = [float(p) for p in parts]
            except ValueError as exc:
                raise OracleProtocolError(f"non-numeric value in reply line {i}: {line!r}") from exc
        if not np.all(np.isfinite(scores)):
            raise OracleProtocolError("oracle reply contains NaN or infinity")
        return scores

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("forward expects a single input vector")
        return self.forward_batch(x[None, :])[0]

    def close(self) -> None:
        proc = getattr(self, "_proc", None)
        if proc is None:
            return
        try:
            if proc.stdin:
                proc.stdin.close()
            proc.wait(timeout=5)
        except Exception:
            proc.kill()
            proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def forward(oracle, x: np.ndarray) -> np.ndarray:
    """Evaluate the classifier once; deterministic for a fixed oracle."""
    return oracle.forward(np.asarray(x, dtype=np.float64))


def classify(oracle, x: np.ndarray) -> int:
    """1-based argmax label; ties go to the smallest index."""
    scores = forward(oracle, x)
    return int(np.argmax(scores)) + 1


def rival_labels(n: int, label: int) -> tuple[int, ...]:
    """All 1-based labels except ``label``, ascending."""
    if not 1 <= label <= n:
        raise ValueError(f"label must be in [1, {n}], got {label}")
    return tuple(i for i in range(1, n + 1) if i != label)


def _diffs_from_scores(scores: np.ndarray, label: int) -> np.ndarray:
    n = scores.shape[1]
    idx = [i for i in range(n) if i != label - 1]
    return scores[:, idx] - scores[:, [label - 1]]


def score_difference(oracle, x: np.ndarray, label: int) -> tuple[np.ndarray, tuple[int, ...]]:
    """Targeted score differences f_i - f_label for i != label.

    Returns the length n-1 vector in ascending i order together with the
    matching rival labels. All components negative means x is classified
    as ``label`` with a margin.
    """
    labels = rival_labels(oracle.output_dim, label)
    scores = forward(oracle, x)
    return _diffs_from_scores(scores[None, :], label)[0], labels


def score_difference_batch(oracle, points: np.ndarray, label: int) -> np.ndarray:
    """Matrix of targeted score differences, one row per point."""
    rival_labels(oracle.output_dim, label)
    scores = oracle.forward_batch(points)
    return _diffs_from_scores(scores, label)


def untargeted_score_difference(oracle, x: np.ndarray, label: int) -> float:
    """f_label minus the best rival score; positive means correctly classified."""
    return float(untargeted_score_difference_batch(oracle, np.asarray(x, dtype=np.float64)[None, :], label)[0])


def untargeted_score_difference_batch(oracle, points: np.ndarray, label: int) -> np.ndarray:
    n = oracle.output_dim
    if n < 2:
        raise ValueError("untargeted score difference needs at least two classes")
    rival_labels(n, label)
    scores = oracle.forward_batch(points)
    idx = [i for i in range(n) if i != label - 1]
    return scores[:, label - 1] - scores[:, idx].max(axis=1)
