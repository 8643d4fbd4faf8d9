"""Kernel functions for the SVM classifiers."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class KernelKind(str, enum.Enum):
    LINEAR = "linear"
    POLY = "poly"
    RBF = "rbf"
    SIGMOID = "sigmoid"


@dataclass(frozen=True)
class KernelSpec:
    kind: KernelKind = KernelKind.RBF
    gamma: float = 0.1
    degree: int = 3
    coef0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind(str(getattr(self.kind, "value", self.kind)).lower()))
        if self.kind is not KernelKind.LINEAR and not self.gamma > 0:
            raise ValueError(f"{self.kind.value} kernel needs gamma > 0")
        if self.degree < 1:
            raise ValueError("polynomial degree must be >= 1")

    def effective(self) -> "KernelSpec":
        """Canonical form: parameters the kernel ignores are reset, so equal
        kernels compare equal (a linear kernel with any gamma is one kernel)."""
        if self.kind is KernelKind.LINEAR:
            return KernelSpec(KernelKind.LINEAR, 1.0, 3, 0.0)
        if self.kind is KernelKind.RBF:
            return KernelSpec(KernelKind.RBF, self.gamma, 3, 0.0)
        if self.kind is KernelKind.SIGMOID:
            return KernelSpec(KernelKind.SIGMOID, self.gamma, 3, self.coef0)
        return self

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "gamma": self.gamma, "degree": self.degree, "coef0": self.coef0}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(d["kind"], float(d["gamma"]), int(d["degree"]), float(d["coef0"]))


def gram(spec: KernelSpec, A, B) -> np.ndarray:
    """Kernel matrix ``K[a, b] = k(A[a], B[b])``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if spec.kind is KernelKind.RBF:
        sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * (A @ B.T)
        return np.exp(-spec.gamma * np.maximum(sq, 0.0))
    dot = A @ B.T
    if spec.kind is KernelKind.LINEAR:
        return dot
    if spec.kind is KernelKind.POLY:
        return (spec.gamma * dot + spec.coef0) ** spec.degree
    return np.tanh(spec.gamma * dot + spec.coef0)


def kernel_eval(spec: KernelSpec, x, z) -> float:
    x = np.asarray(x, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    if x.shape != z.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {z.shape[0]}")
    if spec.kind is KernelKind.RBF:
        d = x - z
        return float(np.exp(-spec.gamma * (d @ d)))
    dot = float(x @ z)
    if spec.kind is KernelKind.LINEAR:
        return dot
    if spec.kind is KernelKind.POLY:
        return (spec.gamma * dot + spec.coef0) ** spec.degree
    return float(np.tanh(spec.gamma * dot + spec.coef0))
