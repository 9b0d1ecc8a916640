import sys
from pathlib import Path

import numpy as np
import pytest

# src 下的模块按模块名互相导入
src_path = Path(__file__).parent.parent / 'src'
sys.path.insert(0, str(src_path))

from boundary_estimators import Sample  # noqa: E402
from simulation import DgpConfig, simulate_sample  # noqa: E402


@pytest.fixture
def null_sample():
    """原假设下的数据生成过程，n=1000，d=2"""
    return simulate_sample(DgpConfig(n=1000, d=2, rho=0.5, seed=20240601))


@pytest.fixture
def uniform_sample():
    """X 在 [-1, 1] 上等距，两个协变量"""
    x = np.linspace(-1.0, 1.0, 401)
    rng = np.random.default_rng(7)
    z = np.column_stack([1.0 + x + rng.normal(0, 0.1, x.size),
                         rng.normal(0, 1.0, x.size)])
    return Sample(x=x, z=z, names=("z1", "z2"))


@pytest.fixture
def small_dataset(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("x,z1\n0.1,1.0\n-0.2,2.0\n", encoding="utf-8")
    return path
