import os
from pathlib import Path

import pytest


def dataset_dir() -> Path:
    return Path(os.environ.get("DGLFRM_DATA", "data"))


def require_dataset(name: str) -> Path:
    """Skip the calling test unless the named citation dataset is on disk."""
    root = dataset_dir() / name
    edges = root / "edges.txt"
    if not edges.exists():
        pytest.skip(
            f"{name} dataset not present under {root} "
            f"(run scripts/fetch_citation_data.py on a networked machine, "
            f"or point DGLFRM_DATA at a prepared data directory)"
        )
    return root


@pytest.fixture
def cora_dir() -> Path:
    return require_dataset("cora")


@pytest.fixture
def citeseer_dir() -> Path:
    return require_dataset("citeseer")
