from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from arsl_bench.dataset_ingest import DatasetKind, DatasetManifest, LabelMap, SampleRef

_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, text = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        # A parametrized criterion passes only if every case does.
        if _criteria.get(number, ("",))[0] != "FAIL":
            _criteria[number] = (status, text)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        status, text = _criteria[number]
        terminalreporter.write_line(f"[{status}] AC{number:02d} {text}")


def write_png(path: Path, pixels: np.ndarray) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(pixels, dtype=np.uint8)).save(path)
    return path


def fake_manifest(counts, names=None, kind=DatasetKind.SYNTHETIC) -> DatasetManifest:
    """Manifest over non-existent files; enough for balancing and splitting."""
    names = names or [f"c{i}" for i in range(len(counts))]
    label_map = LabelMap(kind, tuple(sorted(names)))
    root = Path("/nonexistent")
    samples = []
    for idx, name in enumerate(label_map.names):
        for j in range(counts[idx]):
            key = f"{name}/{j:04d}.png"
            samples.append(SampleRef(root / key, key, name, idx))
    return DatasetManifest(kind, root, label_map, tuple(samples))


@pytest.fixture
def png(tmp_path):
    def _make(name, pixels):
        return write_png(tmp_path / name, pixels)

    return _make
