import numpy as np
import pytest

from core.geometry import BoundaryPoint, Isometry, ModelPoint


def random_isometry(rng: np.random.Generator, d: int = 2, spread: float = 1.5) -> Isometry:
    """A unit-determinant matrix with moderate entries (real for d=2, complex for d=3)."""
    def entry():
        if d == 2:
            return rng.uniform(-spread, spread)
        return complex(rng.uniform(-spread, spread), rng.uniform(-spread, spread))

    while True:
        a, b, c = entry(), entry(), entry()
        if abs(a) > 0.3:
            return Isometry.from_entries(a, b, c, (1 + b * c) / a, dimension=d)


def random_point(rng: np.random.Generator, d: int = 2, max_norm: float = 0.9) -> ModelPoint:
    v = rng.normal(size=d)
    return ModelPoint.from_coords(v / np.linalg.norm(v) * rng.uniform(0.0, max_norm))


def random_boundary(rng: np.random.Generator, d: int = 2) -> BoundaryPoint:
    return BoundaryPoint.normalized(rng.normal(size=d))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def write_config(tmp_path):
    """Writes a run config into tmp_path, pointing its output there too."""
    def _write(body: str, name: str = "run.cfg") -> str:
        path = tmp_path / name
        path.write_text(body, encoding="utf-8")
        return str(path)
    return _write
