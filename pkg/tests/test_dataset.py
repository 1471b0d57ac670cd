import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from pbrflow.dataset import DatasetManifest, make_dataset
from pbrflow.errors import RejectedInput


def tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_counts_and_distinct_seeds(tmp_path):
    m = make_dataset(count=16, seed=3, resolution=64, views_per_material=1, out_path=tmp_path / "ds")
    assert len(m.records) == 16
    assert len({r["material_seed"] for r in m.records}) == 16


def test_views_share_split(tmp_path):
    m = make_dataset(count=4, seed=5, resolution=64, views_per_material=4, out_path=tmp_path / "ds")
    assert len(m.records) == 16
    by_mat = {}
    for r in m.records:
        by_mat.setdefault(r["material_seed"], set()).add(r["split"])
    assert len(by_mat) == 4
    for splits in by_mat.values():
        assert len(splits) == 1


def test_split_fractions_at_16(tmp_path):
    m = make_dataset(count=16, seed=9, resolution=64, views_per_material=1, out_path=tmp_path / "ds")
    counts = {s: len(m.split(s)) for s in ("train", "val", "test")}
    assert counts == {"train": 14, "val": 1, "test": 1}


def test_regeneration_bit_identical(tmp_path):
    make_dataset(count=3, seed=11, resolution=64, views_per_material=2, out_path=tmp_path / "a")
    make_dataset(count=3, seed=11, resolution=64, views_per_material=2, out_path=tmp_path / "b")
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")


def test_refuses_nonempty_without_overwrite(tmp_path):
    out = tmp_path / "ds"
    make_dataset(count=1, seed=0, resolution=64, views_per_material=1, out_path=out)
    with pytest.raises(RejectedInput):
        make_dataset(count=1, seed=0, resolution=64, views_per_material=1, out_path=out)
    make_dataset(count=1, seed=0, resolution=64, views_per_material=1, out_path=out, overwrite=True)


def test_load_pair_roundtrip(tmp_path):
    m = make_dataset(count=2, seed=21, resolution=64, views_per_material=1, out_path=tmp_path / "ds")
    image, triplet, mask = m.load_pair(m.records[0])
    assert image.shape == (64, 64, 3)
    assert triplet.albedo.shape == (64, 64, 3)
    assert triplet.metallic.shape == (64, 64, 1)
    assert mask.dtype == bool and mask.shape == (64, 64, 1)
    # 16-bit quantization bound on the stored maps
    from pbrflow.materials import gen_material

    ref = gen_material(m.records[0]["material_seed"], 64)
    assert np.abs(triplet.albedo - ref.albedo).max() <= 0.5 / 65535 * 1.01 + 1e-6


def test_manifest_reload_matches(tmp_path):
    m = make_dataset(count=2, seed=2, resolution=64, views_per_material=2, out_path=tmp_path / "ds")
    loaded = DatasetManifest.load(tmp_path / "ds")
    assert loaded.records == m.records


def test_layout_files_exist(tmp_path):
    m = make_dataset(count=1, seed=4, resolution=64, views_per_material=1, out_path=tmp_path / "ds")
    pair_dir = tmp_path / "ds" / "pairs" / m.records[0]["id"]
    for name in ("image.png", "albedo.png", "metallic.png", "roughness.png", "mask.png"):
        assert (pair_dir / name).exists()
    assert (tmp_path / "ds" / "manifest.json").exists()


def test_invalid_count_rejected(tmp_path):
    with pytest.raises(RejectedInput):
        make_dataset(count=0, seed=0, resolution=64, views_per_material=1, out_path=tmp_path / "ds")
