import math
import os
from collections.abc import Iterator
from logging import getLogger

import numpy as np

from joint_annotator.diffcore.tensor import Tensor
from joint_annotator.misc import CheckpointError, ShapeError
from joint_annotator.vars import ADAM_EPS, BETAS, MANIFEST_FILE, PAYLOAD_FILE, WEIGHT_DECAY

logger = getLogger(__name__)


class ParamStore:
    """名前付きパラメータと、AdamWの1次・2次モーメント、ステップ数を保持します。"""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.step = 0

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ShapeError(f"duplicated parameter name: {name}")
        param = Tensor(data, requires_grad=True, name=name)
        self._params[name] = param
        self._moments[name] = (np.zeros_like(param.data), np.zeros_like(param.data))
        return param

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def moments(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        return self._moments[name]

    def zero_grad(self):
        for param in self._params.values():
            param.zero_grad()

    def grad_norm(self) -> float:
        return math.sqrt(
            sum(float(np.sum(p.grad * p.grad)) for p in self._params.values())  # type: ignore
        )

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def restore(self, values: dict[str, np.ndarray]):
        for name, data in values.items():
            if self._params[name].shape != data.shape:
                raise ShapeError(f"restore: {name} {self._params[name].shape} vs {data.shape}")
            self._params[name].data[...] = data

    def save(self, directory: str):
        """マニフェスト（名前・形・バイトオフセット）とリトルエンディアンfloat64のペイロードを書き出します。"""
        offset = 0
        lines: list[str] = []
        with open(os.path.join(directory, PAYLOAD_FILE), "wb") as f:
            for name, param in self._params.items():
                payload = param.data.astype("<f8").tobytes()
                shape = ",".join(str(s) for s in param.shape)
                lines.append(f"{name}\t{shape}\t{offset}")
                f.write(payload)
                offset += len(payload)
        with open(os.path.join(directory, MANIFEST_FILE), "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")

    def load(self, directory: str):
        """`save()`で書き出したパラメータを、登録済みのパラメータへ読み込みます。"""
        try:
            with open(os.path.join(directory, MANIFEST_FILE), "r", encoding="utf-8") as f:
                manifest = [line.rstrip("\n").split("\t") for line in f if line.strip()]
            with open(os.path.join(directory, PAYLOAD_FILE), "rb") as f:
                payload = f.read()
        except OSError as err:
            raise CheckpointError(f"cannot read parameters from {directory}: {err}") from err

        seen: set[str] = set()
        for name, shape_text, offset_text in manifest:
            if name not in self._params:
                raise CheckpointError(f"unknown parameter in manifest: {name}")
            shape = tuple(int(s) for s in shape_text.split(",") if s)
            if shape != self._params[name].shape:
                raise CheckpointError(
                    f"shape mismatch for {name}: {shape} vs {self._params[name].shape}"
                )
            count = int(np.prod(shape, dtype=np.int64))
            values = np.frombuffer(payload, dtype="<f8", count=count, offset=int(offset_text))
            self._params[name].data[...] = values.reshape(shape)
            seen.add(name)

        if missing := set(self._params) - seen:
            raise CheckpointError(f"parameters missing from checkpoint: {sorted(missing)}")


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape: tuple[int, ...]):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def embedding_normal(rng: np.random.Generator, shape: tuple[int, ...], std: float = 0.01):
    return rng.normal(0.0, std, size=shape)


def clip_grad_norm(store: ParamStore, max_norm: float) -> float:
    norm = store.grad_norm()
    if norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        for _, param in store.items():
            param.grad *= factor  # type: ignore
        logger.debug(f"clip_grad_norm: {norm=:.4f} clipped to {max_norm}")
    return norm


def adamw_step(
    store: ParamStore,
    lr: float,
    betas: tuple[float, float] = BETAS,
    eps: float = ADAM_EPS,
    weight_decay: float = WEIGHT_DECAY,
):
    """重み減衰を分離したAdam（AdamW）の更新を1ステップ適用します。勾配はそのまま残します。"""
    store.step += 1
    beta1, beta2 = betas
    correction1 = 1.0 - beta1**store.step
    correction2 = 1.0 - beta2**store.step

    for name, param in store.items():
        grad = param.grad
        m, v = store.moments(name)
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad  # type: ignore
        if weight_decay:
            param.data *= 1.0 - lr * weight_decay
        param.data -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
