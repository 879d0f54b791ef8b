"""Dense float64 tensor helpers, attention primitives and checkpoint I/O.

Tensors are ``torch.Tensor`` in float64; torch's autograd records the tape.
Everything here is deterministic on CPU given the same seed.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
import torch
import torch.nn.functional as F

DTYPE = torch.float64

torch.set_default_dtype(DTYPE)


class NonFiniteError(FloatingPointError):
    """A tensor picked up a NaN or Inf."""


class NonDeterministicError(RuntimeError):
    pass


def check_finite(x: torch.Tensor, where: str = "tensor") -> torch.Tensor:
    if not bool(torch.isfinite(x).all()):
        raise NonFiniteError(f"non-finite values in {where}")
    return x


# --------------------------------------------------------------------------
# Seeded RNG


_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _splitmix_block(state: int, n: int) -> np.ndarray:
    """Outputs n+1 .. of a SplitMix64 stream whose counter is ``state``."""
    with np.errstate(over="ignore"):
        steps = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(state) + steps * _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


class SeededRng:
    """SplitMix64 stream (Steele, Lea & Flood 2014).

    Pure integer arithmetic, so the stream is bit-identical on every platform.
    Floats take the top 53 bits; normals use Box-Muller.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._state = self.seed

    def next_u64(self, n: int) -> np.ndarray:
        out = _splitmix_block(self._state, n)
        self._state = (self._state + n * int(_GOLDEN)) & _MASK64
        return out

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        n = 1 if size is None else int(np.prod(size))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        u = low + (high - low) * u
        return float(u[0]) if size is None else u.reshape(size)

    def normal(self, size) -> np.ndarray:
        n = int(np.prod(size))
        m = (n + 1) // 2
        u1 = 1.0 - self.uniform(m)  # (0, 1]
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        return z[:n].reshape(size)

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in [low, high)."""
        if high <= low:
            raise ValueError("empty integer range")
        return low + int(self.next_u64(1)[0] % np.uint64(high - low))

    def choice(self, seq):
        return seq[self.integers(0, len(seq))]

    def permutation(self, n: int) -> list[int]:
        items = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integers(0, i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def child(self, key: int | str) -> "SeededRng":
        """Independent stream derived from this seed and a key."""
        if isinstance(key, str):
            key = int.from_bytes(key.encode()[:8].ljust(8, b"\0"), "little") ^ len(key)
        mixed = _splitmix_block((self.seed ^ (int(key) * 0x2545F4914F6CDD1D)) & _MASK64, 1)
        return SeededRng(int(mixed[0]))


# --------------------------------------------------------------------------
# Primitives


def softmax(x: torch.Tensor, axis: int = -1) -> torch.Tensor:
    check_finite(x, "softmax input")
    shifted = x - x.amax(dim=axis, keepdim=True).detach()
    e = torch.exp(shifted)
    return e / e.sum(dim=axis, keepdim=True)


def scaled_dot_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """softmax(q k^T / sqrt(d)) v over the last two axes; leading axes batch."""
    if k.shape[-2] == 0:
        raise ValueError("attention over an empty key set")
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ValueError(f"attention shape mismatch q={tuple(q.shape)} k={tuple(k.shape)} v={tuple(v.shape)}")
    # scaling q is cheaper than scaling the (n_q, n_k) score matrix
    scores = (q * (1.0 / math.sqrt(q.shape[-1]))) @ k.transpose(-1, -2)
    # torch.softmax subtracts the row max internally; checking the small output is cheaper than the scores
    return check_finite(torch.softmax(scores, dim=-1) @ v, "attention output")


def _frequencies(d: int) -> np.ndarray:
    return 1.0 / (10000.0 ** (np.arange(0, d, 2) / d))


def sinusoidal_pe_1d(positions, d: int) -> torch.Tensor:
    """Interleaved sin/cos: channel 2m is sin(p w_m), 2m+1 is cos(p w_m)."""
    if d <= 0 or d % 2:
        raise ValueError(f"1-D positional encoding needs an even channel count, got {d}")
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 1)
    angles = pos * _frequencies(d)[None, :]
    out = np.empty((pos.shape[0], d))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return torch.from_numpy(out)


def sinusoidal_pe_2d(rows, cols, d: int) -> torch.Tensor:
    """First half of the channels encodes the row, second half the column."""
    if d <= 0 or d % 4:
        raise ValueError(f"2-D positional encoding needs channels divisible by 4, got {d}")
    return torch.cat([sinusoidal_pe_1d(rows, d // 2), sinusoidal_pe_1d(cols, d // 2)], dim=-1)


def sinusoidal_pe(t: int, ij: tuple[int, int], d: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Temporal and spatial encodings for one token: (e[t], e[i, j])."""
    return sinusoidal_pe_1d([t], d)[0], sinusoidal_pe_2d([ij[0]], [ij[1]], d)[0]


def grid_pe(h: int, w: int, d: int) -> torch.Tensor:
    """2-D encoding for every cell of an h x w grid, shape (h*w, d)."""
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return sinusoidal_pe_2d(ii.ravel(), jj.ravel(), d)


def linear(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    return F.linear(x, weight, bias)


def layer_norm(x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    return F.layer_norm(x, x.shape[-1:], eps=eps)


def gelu(x: torch.Tensor) -> torch.Tensor:
    return F.gelu(x)


# --------------------------------------------------------------------------
# Gradient checking


def grad_check(
    f: Callable[[], torch.Tensor],
    params: Iterable[torch.Tensor],
    h: float = 1e-6,
    max_coords: int | None = None,
    rng: SeededRng | None = None,
    floor: float | None = None,
) -> float:
    """Worst relative error between autograd and central differences.

    ``f`` takes no arguments and reads ``params`` (leaf tensors with
    requires_grad) by closure. ``max_coords`` limits the number of probed
    coordinates per parameter, picked with ``rng``. ``floor`` bounds the
    denominator of the relative error from below. By default it is 1e5 times
    the round-off of a central difference (eps*|f|/h), so exact-zero
    gradients such as attention key biases are not scored on noise while
    any gradient above the floor is still held to the full tolerance.
    """
    if not 1e-6 <= h <= 1e-4:
        raise ValueError("finite-difference step must lie in [1e-6, 1e-4]")
    params = list(params)
    for p in params:
        p.grad = None
    loss = f()
    again = f()
    if loss.item() != again.item():
        raise NonDeterministicError("objective changed between identical evaluations")
    loss.backward()
    if floor is None:
        floor = 1e5 * float(torch.finfo(loss.dtype).eps) * max(abs(loss.item()), 1.0) / h
    analytic = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for p in params]
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params, analytic):
            flat = p.view(-1)
            coords = range(flat.numel())
            if max_coords is not None and flat.numel() > max_coords:
                coords = (rng or SeededRng(0)).permutation(flat.numel())[:max_coords]
            for i in coords:
                orig = flat[i].item()
                flat[i] = orig + h
                up = f().item()
                flat[i] = orig - h
                down = f().item()
                flat[i] = orig
                numeric = (up - down) / (2 * h)
                a = g.view(-1)[i].item()
                err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
                worst = max(worst, err)
    return worst


# --------------------------------------------------------------------------
# Checkpoints: <stem>.json manifest beside <stem>.bin (little-endian float64)


CHECKPOINT_FORMAT = "samwise-ckpt-v1"


def _paths(path: str | Path) -> tuple[Path, Path]:
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".json", ".bin") else path
    return stem.with_suffix(".json"), stem.with_suffix(".bin")


def save_checkpoint(path, tensors: dict[str, torch.Tensor], meta: dict | None = None) -> Path:
    manifest_path, blob_path = _paths(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    entries = {}
    offset = 0
    chunks = []
    for name in sorted(tensors):
        t = tensors[name].detach().cpu()
        # ascontiguousarray promotes 0-d arrays to 1-d, so keep the tensor's own shape
        arr = np.ascontiguousarray(t.numpy(), dtype="<f8")
        entries[name] = {"shape": list(t.shape), "offset": offset}
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    blob_path.write_bytes(b"".join(chunks))
    manifest = {"format": CHECKPOINT_FORMAT, "dtype": "<f8", "blob": blob_path.name,
                "nbytes": offset, "params": entries, "meta": meta or {}}
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest_path


def load_checkpoint(path) -> tuple[dict[str, torch.Tensor], dict]:
    manifest_path, _ = _paths(path)
    if not manifest_path.exists():
        raise FileNotFoundError(f"checkpoint manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{manifest_path}: unknown checkpoint format {manifest.get('format')!r}")
    blob = (manifest_path.parent / manifest["blob"]).read_bytes()
    if len(blob) != manifest["nbytes"]:
        raise ValueError(f"{manifest_path.parent / manifest['blob']}: expected {manifest['nbytes']} bytes, got {len(blob)}")
    tensors = {}
    for name, entry in manifest["params"].items():
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=entry["offset"])
        tensors[name] = torch.from_numpy(arr.astype(np.float64).reshape(tuple(entry["shape"])))
    return tensors, manifest["meta"]
