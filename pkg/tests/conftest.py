import numpy as np
import pytest

from wsseg.core import PointCloud, SceneSpec, generate_scene


def brute_knn(points, q, k):
    """Exhaustive scan ordered by (squared distance, index)."""
    points = np.asarray(points, dtype=np.float64)
    dx = points[:, 0] - q[0]
    dy = points[:, 1] - q[1]
    dz = points[:, 2] - q[2]
    d = dx * dx + dy * dy + dz * dz
    order = np.lexsort((np.arange(len(points)), d))
    return order[: min(k, len(points))]


def central_diff(f, x, h=1e-5):
    """Central finite differences of scalar f over every entry of x."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_scene():
    return generate_scene(SceneSpec(num_points=2000, num_classes=4, seed=3))


def random_cloud(rng, n, num_classes=4, labels=True):
    pos = rng.uniform(-1, 1, size=(n, 3))
    col = rng.uniform(0, 1, size=(n, 3))
    lab = rng.integers(0, num_classes, size=n) if labels else None
    return PointCloud(pos, col, lab, num_classes)


# acceptance criteria report one line each in the terminal summary
_CRITERIA = []


@pytest.fixture
def criterion():
    def record(number, title, ok, detail=""):
        _CRITERIA.append((number, title, bool(ok), detail))
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(_CRITERIA, key=lambda r: (r[0], r[1])):
        extra = f" ({detail})" if detail else ""
        terminalreporter.write_line(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title}{extra}")
