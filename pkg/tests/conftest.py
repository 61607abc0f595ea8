from __future__ import annotations

import numpy as np
import pytest

from sdeasym.core_model import SdeSystem


class RandomSmoothSystem:
    """``a(x) = A x + s * sin(P x + c)``, ``b(x) = B0 + sum_j cos(x_j) B1[j]``."""

    def __init__(self, n: int, m: int, rng: np.random.Generator):
        self.n, self.m = n, m
        self.A = rng.normal(size=(n, n))
        self.P = rng.normal(size=(n, n))
        self.c = rng.normal(size=n)
        self.s = rng.uniform(0.2, 1.0)
        self.B0 = rng.normal(size=(n, m))
        self.B1 = 0.3 * rng.normal(size=(n, n, m))

    def drift(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.A.T + self.s * np.sin(x @ self.P.T + self.c)

    def diffusion(self, x):
        x = np.asarray(x, dtype=float)
        return self.B0 + np.einsum("...j,jik->...ik", np.cos(x), self.B1)

    def system(self) -> SdeSystem:
        return SdeSystem(self.n, self.m, self.drift, self.diffusion, "random")


@pytest.fixture
def random_system_factory():
    return RandomSmoothSystem


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
