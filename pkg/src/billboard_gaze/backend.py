"""Opaque tensor-function backends for the detector and embedding graphs.

Two backends:

* ``graph_runtime`` wraps a serialized ONNX graph via onnxruntime (optional
  dependency, imported lazily).
* ``stub`` is a deterministic model-free stand-in: outputs are a pure
  function of (output spec, input bytes, seed), so pipeline tests exercise
  the real data flow without any weights.

A handle may be shared across workers; ``forward`` is safe to call
concurrently and concurrent calls match sequential results bit for bit.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class BackendError(RuntimeError):
    """Raised when a model graph cannot be loaded or executed."""


@dataclass(frozen=True)
class TensorSpec:
    """Name, shape and dtype of one model input or output; -1 marks a dynamic dim."""

    name: str
    shape: tuple[int, ...]
    dtype: str = "f32"

    def __post_init__(self):
        if len(self.shape) < 1:
            raise ValueError("tensor rank must be >= 1")
        if sum(1 for d in self.shape if d == -1) > 1:
            raise ValueError("at most one dynamic dim supported")
        if self.dtype != "f32":
            raise ValueError(f"unsupported dtype: {self.dtype}")

    def conforms(self, shape: tuple[int, ...]) -> bool:
        if len(shape) != len(self.shape):
            return False
        return all(s == -1 or s == a for s, a in zip(self.shape, shape))


@dataclass
class ModelHandle:
    """A loaded model graph exposed as a named-tensor function."""

    input_specs: list[TensorSpec]
    output_specs: list[TensorSpec]
    backend_kind: str
    _runner: object = field(repr=False, default=None)

    def spec_for_input(self, name: str) -> TensorSpec:
        for s in self.input_specs:
            if s.name == name:
                return s
        raise ValueError(f"unknown input: {name}")


def _check_inputs(model: ModelHandle, inputs: dict[str, np.ndarray]) -> None:
    expected = {s.name for s in model.input_specs}
    if set(inputs) != expected:
        raise ValueError(f"input names {sorted(inputs)} != expected {sorted(expected)}")
    for name, arr in inputs.items():
        spec = model.spec_for_input(name)
        if arr.dtype != np.float32:
            raise ValueError(f"input {name} must be float32, got {arr.dtype}")
        if not spec.conforms(arr.shape):
            raise ValueError(f"input {name} shape {arr.shape} does not match spec {spec.shape}")


def forward(model: ModelHandle, inputs: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Run the graph on named f32 tensors, returning named f32 tensors.

    Output shapes are checked against the handle's output specs.
    """
    _check_inputs(model, inputs)
    outputs = model._runner(inputs)
    for spec in model.output_specs:
        arr = outputs[spec.name]
        if not spec.conforms(arr.shape):
            raise BackendError(f"output {spec.name} shape {arr.shape} violates spec {spec.shape}")
    return outputs


# --- stub backend -----------------------------------------------------------

STUB_DETECTOR = "stub:detector"
STUB_EMBEDDER = "stub:embedder"


def _stub_rng(seed: int, out_name: str, inputs: dict[str, np.ndarray]) -> np.random.Generator:
    h = hashlib.blake2b(digest_size=8)
    h.update(int(seed).to_bytes(8, "little", signed=True))
    h.update(out_name.encode())
    for name in sorted(inputs):
        h.update(name.encode())
        h.update(np.ascontiguousarray(inputs[name]).tobytes())
    return np.random.Generator(np.random.PCG64(int.from_bytes(h.digest(), "little")))


def _stub_head(rng: np.random.Generator, shape: tuple[int, ...], side: int) -> np.ndarray:
    """Detection-head shaped output: mostly background plus a few confident boxes."""
    _, k, a = shape
    out = np.empty((1, k, a), dtype=np.float64)
    out[0, 0, :] = rng.uniform(0.0, side, a)              # cx
    out[0, 1, :] = rng.uniform(0.0, side, a)              # cy
    out[0, 2, :] = rng.uniform(0.5, 5.0, a)               # w, background-sized
    out[0, 3, :] = rng.uniform(0.5, 5.0, a)
    out[0, 4:, :] = rng.uniform(0.0, 0.12, (k - 4, a))    # low scores everywhere
    n_hits = int(rng.integers(2, 6))
    idx = rng.choice(a, size=n_hits, replace=False)
    out[0, 0, idx] = rng.uniform(0.12, 0.88, n_hits) * side
    out[0, 1, idx] = rng.uniform(0.12, 0.88, n_hits) * side
    out[0, 2, idx] = rng.uniform(0.08, 0.30, n_hits) * side
    out[0, 3, idx] = rng.uniform(0.06, 0.22, n_hits) * side
    out[0, 4, idx] = rng.uniform(0.55, 0.95, n_hits)
    return out.astype(np.float32)


def _make_stub_runner(model_seed: int, input_specs, output_specs):
    def run(inputs: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        outputs = {}
        for spec in output_specs:
            rng = _stub_rng(model_seed, spec.name, inputs)
            if len(spec.shape) == 3 and spec.shape[1] >= 5:
                side = inputs[input_specs[0].name].shape[-1]
                outputs[spec.name] = _stub_head(rng, spec.shape, side)
            else:
                outputs[spec.name] = (rng.standard_normal(spec.shape) * 0.5).astype(np.float32)
        return outputs

    return run


def _head_anchor_count(side: int) -> int:
    # Three stride-8/16/32 feature maps, the export convention of the model family.
    return (side // 8) ** 2 + (side // 16) ** 2 + (side // 32) ** 2


def stub_detector_model(seed: int = 0, input_size: int = 640) -> ModelHandle:
    """Detector-shaped stub: input (1,3,S,S), output (1,5,A) for one class."""
    if input_size % 32 != 0:
        raise ValueError("input_size must be a multiple of 32")
    inputs = [TensorSpec("images", (1, 3, input_size, input_size))]
    outputs = [TensorSpec("output0", (1, 5, _head_anchor_count(input_size)))]
    return ModelHandle(inputs, outputs, "stub", _make_stub_runner(seed, inputs, outputs))


def stub_embedding_model(seed: int = 0, input_size: int = 224, dim: int = 384) -> ModelHandle:
    """Embedder-shaped stub: input (1,3,224,224), output a 384-wide vector."""
    inputs = [TensorSpec("images", (1, 3, input_size, input_size))]
    outputs = [TensorSpec("embedding", (1, dim))]
    return ModelHandle(inputs, outputs, "stub", _make_stub_runner(seed, inputs, outputs))


# --- onnx graph backend -----------------------------------------------------

def _onnx_specs(nodes) -> list[TensorSpec]:
    specs = []
    for node in nodes:
        if node.type != "tensor(float)":
            raise BackendError(f"unsupported dtype for {node.name}: {node.type}")
        shape = tuple(d if isinstance(d, int) else -1 for d in node.shape)
        specs.append(TensorSpec(node.name, shape))
    return specs


def _load_onnx(path: Path) -> ModelHandle:
    try:
        import onnxruntime as ort
    except ImportError as exc:
        raise BackendError(
            "graph_runtime backend requires onnxruntime; "
            "install the [onnx] extra or use backend=stub"
        ) from exc
    try:
        session = ort.InferenceSession(str(path), providers=["CPUExecutionProvider"])
    except Exception as exc:
        raise BackendError(f"cannot load model graph {path}: {exc}") from exc
    input_specs = _onnx_specs(session.get_inputs())
    output_specs = _onnx_specs(session.get_outputs())
    out_names = [s.name for s in output_specs]

    def run(inputs: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        try:
            results = session.run(out_names, inputs)
        except Exception as exc:
            raise BackendError(f"graph execution failed: {exc}") from exc
        return dict(zip(out_names, results))

    return ModelHandle(input_specs, output_specs, "graph_runtime", run)


def load_model(
    path: str | Path,
    kind: str = "graph_runtime",
    stub_seed: int = 0,
    input_size: int = 640,
) -> ModelHandle:
    """Load a serialized model graph, or build a stub handle.

    For ``kind="stub"`` the path selects the stub flavour: ``stub:detector``
    or ``stub:embedder``; input_size applies to the detector flavour only.
    """
    if kind == "stub":
        name = str(path)
        if name == STUB_DETECTOR:
            return stub_detector_model(stub_seed, input_size)
        if name == STUB_EMBEDDER:
            return stub_embedding_model(stub_seed)
        raise ValueError(f"unknown stub model {name!r}; use {STUB_DETECTOR} or {STUB_EMBEDDER}")
    if kind != "graph_runtime":
        raise ValueError(f"unknown backend kind: {kind}")
    path = Path(path)
    if not path.is_file():
        raise BackendError(f"model file not found: {path}")
    return _load_onnx(path)
