"""Asymmetric kernels evaluated on nonnegative scaled distances u = d / h."""

from dataclasses import dataclass

import numpy as np

KERNEL_FAMILIES = ("epanechnikov", "gaussian", "uniform")


def epanechnikov(u):
    u = np.asarray(u, dtype=float)
    return np.where(u < 1.0, 0.75 * (1.0 - u * u), 0.0)


def gaussian(u):
    u = np.asarray(u, dtype=float)
    return np.exp(-0.5 * u * u) / np.sqrt(2 * np.pi)


def uniform(u):
    u = np.asarray(u, dtype=float)
    return np.where(u < 1.0, 1.0, 0.0)


_FUNCS = {"epanechnikov": epanechnikov, "gaussian": gaussian, "uniform": uniform}


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family; Epanechnikov and uniform are supported on [0, 1)."""

    family: str = "epanechnikov"

    def __post_init__(self):
        family = str(self.family).lower()
        if family not in _FUNCS:
            raise ValueError(f"unknown kernel {self.family!r}; choose from {KERNEL_FAMILIES}")
        object.__setattr__(self, "family", family)

    @property
    def compact(self):
        return self.family != "gaussian"

    def __call__(self, u):
        return _FUNCS[self.family](u)

    def weights(self, distances, bandwidth):
        """L(d / h) with h broadcast against ``distances``."""
        distances = np.asarray(distances, dtype=float)
        return self(distances / bandwidth)


def as_kernel(kernel) -> KernelSpec:
    return kernel if isinstance(kernel, KernelSpec) else KernelSpec(kernel)
