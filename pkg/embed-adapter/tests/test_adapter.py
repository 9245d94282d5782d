"""Adapter tests.

Output files are validated by reading them back with the memory engine
(vimem) — the consumer of record for the formats — never by trusting the
writer's own code.
"""
import json
import struct
from pathlib import Path

import numpy as np
import pytest
import torch
from PIL import Image

import vimem
from embed_adapter import (
    Backbone,
    BackboneSpec,
    VisionTransformer,
    extract_global,
    extract_patches,
    extract_patches_dir,
    list_images,
    normalize_state_dict,
    preprocess,
)
from embed_adapter.cli import main as cli_main

# small trunk; every test that embeds uses this unless it needs 224 input
TINY = dict(model="tiny-random", resolution=32, patch_size=16, dim=32, depth=2, heads=2, seed=7)


def tiny_spec(**overrides) -> BackboneSpec:
    return BackboneSpec(**{**TINY, **overrides})


def save_images(root: Path, colors) -> list[Path]:
    paths = []
    for i, color in enumerate(colors):
        p = root / f"img_{i:03d}.png"
        Image.new("RGB", (40, 30), color).save(p)
        paths.append(p)
    return paths


# ---------------------------------------------------------------- global


def test_five_images_give_count_five_store(tmp_path):
    save_images(tmp_path, [(i * 40, 10, 200 - i * 30) for i in range(5)])
    out = extract_global(tmp_path, tiny_spec(), tmp_path / "g.vmem")
    store = vimem.read_store(out)
    assert len(store) == 5
    assert store.dim == 32
    assert store.ids.tolist() == [0, 1, 2, 3, 4]
    assert (store.labels == -1).all()
    assert not store.normalized


def test_same_directory_twice_is_byte_identical(tmp_path):
    save_images(tmp_path, [(200, 30, 40), (5, 150, 99), (0, 0, 0)])
    a = extract_global(tmp_path, tiny_spec(), tmp_path / "a.vmem")
    b = extract_global(tmp_path, tiny_spec(), tmp_path / "b.vmem")
    assert a.read_bytes() == b.read_bytes()


def test_duplicate_image_rows_nearly_parallel(tmp_path):
    img = Image.new("RGB", (40, 30), (17, 180, 64))
    img.save(tmp_path / "first.png")
    img.save(tmp_path / "second.png")
    store = vimem.read_store(extract_global(tmp_path, tiny_spec(), tmp_path / "d.vmem"))
    u, v = store.vectors
    cos = float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))
    assert cos >= 0.999


def test_ids_follow_sorted_filename_order(tmp_path):
    # z and a share pixels; the matching rows must sit at sorted positions
    dup = Image.new("RGB", (40, 30), (250, 250, 3))
    dup.save(tmp_path / "z_last.png")
    dup.save(tmp_path / "a_first.png")
    Image.new("RGB", (40, 30), (3, 3, 250)).save(tmp_path / "m_mid.png")
    store = vimem.read_store(extract_global(tmp_path, tiny_spec(), tmp_path / "o.vmem"))
    manifest = vimem.read_manifest(tmp_path / "o.vmem")
    assert manifest["files"] == ["a_first.png", "m_mid.png", "z_last.png"]
    assert np.array_equal(store.vectors[0], store.vectors[2])
    assert not np.array_equal(store.vectors[0], store.vectors[1])


def test_unreadable_images_are_a_hard_error_listing_each(tmp_path):
    save_images(tmp_path, [(9, 9, 9)])
    (tmp_path / "broken_a.png").write_bytes(b"not a png")
    (tmp_path / "broken_b.jpg").write_bytes(b"also not")
    with pytest.raises(RuntimeError, match="2 of 3 images unreadable") as err:
        extract_global(tmp_path, tiny_spec(), tmp_path / "x.vmem")
    assert "broken_a.png" in str(err.value) and "broken_b.jpg" in str(err.value)
    assert not (tmp_path / "x.vmem").exists()


def test_empty_or_missing_directory_rejected(tmp_path):
    with pytest.raises(FileNotFoundError, match="no image files"):
        list_images(tmp_path)
    with pytest.raises(FileNotFoundError, match="not a directory"):
        list_images(tmp_path / "absent")


def test_non_image_files_are_ignored(tmp_path):
    save_images(tmp_path, [(1, 2, 3), (4, 5, 6)])
    (tmp_path / "manifest.jsonl").write_text("{}\n")
    assert len(list_images(tmp_path)) == 2


def test_pool_variants_both_valid_but_different(tmp_path):
    save_images(tmp_path, [(220, 40, 10)])
    cls = vimem.read_store(extract_global(tmp_path, tiny_spec(), tmp_path / "c.vmem", pool="class"))
    mean = vimem.read_store(extract_global(tmp_path, tiny_spec(), tmp_path / "m.vmem", pool="mean"))
    assert cls.dim == mean.dim == 32
    assert not np.array_equal(cls.vectors, mean.vectors)
    with pytest.raises(ValueError, match="pooling"):
        extract_global(tmp_path, tiny_spec(), tmp_path / "p.vmem", pool="max")


def test_batching_changes_nothing_beyond_kernel_jitter(tmp_path):
    # different batch shapes pick different blocked-sum kernels; results
    # must agree to float32 noise, and a repeated batch size is bitwise
    save_images(tmp_path, [(i * 17 % 256, i * 41 % 256, i * 89 % 256) for i in range(7)])
    a = extract_global(tmp_path, tiny_spec(), tmp_path / "b1.vmem", batch_size=2)
    b = extract_global(tmp_path, tiny_spec(), tmp_path / "b2.vmem", batch_size=7)
    c = extract_global(tmp_path, tiny_spec(), tmp_path / "b3.vmem", batch_size=2)
    va, vb = vimem.read_store(a).vectors, vimem.read_store(b).vectors
    np.testing.assert_allclose(va, vb, atol=1e-5)
    assert a.read_bytes() == c.read_bytes()


def test_manifest_records_spec_and_preprocessing(tmp_path):
    save_images(tmp_path, [(8, 80, 160)])
    out = extract_global(tmp_path, tiny_spec(), tmp_path / "g.vmem")
    doc = vimem.read_manifest(out)
    assert doc["dim"] == 32 and doc["count"] == 1
    assert doc["backbone"]["patch_size"] == 16
    assert doc["backbone"]["model"] == "tiny-random"
    assert "imagenet-norm" in doc["backbone"]["preprocessing"]
    assert doc["pool"] == "class"


# ---------------------------------------------------------------- patches


def test_224_input_with_patch_16_gives_14x14_grid(tmp_path):
    Image.new("RGB", (60, 60), (120, 30, 210)).save(tmp_path / "a.png")
    spec = tiny_spec(resolution=224, depth=1)
    out = extract_patches(tmp_path / "a.png", spec, tmp_path / "a.vgrd", image_id=5)
    grid = vimem.read_grid(out)
    assert (grid.rows, grid.cols) == (14, 14)
    assert grid.dim == 32
    assert grid.image_id == 5


def test_constant_color_interior_patches_nearly_parallel(tmp_path):
    # threshold tuned on this fixed trunk (seed 7); white stays far from
    # the normalization zero-point, so content dominates position
    Image.new("RGB", (50, 40), (255, 255, 255)).save(tmp_path / "w.png")
    spec = tiny_spec(resolution=224, depth=1)
    grid = vimem.read_grid(extract_patches(tmp_path / "w.png", spec, tmp_path / "w.vgrd"))
    interior = grid.patches[1:-1, 1:-1].reshape(-1, grid.dim).astype(np.float64)
    unit = interior / np.linalg.norm(interior, axis=1, keepdims=True)
    assert (unit @ unit.T).min() >= 0.99


def test_patches_dir_writes_one_grid_per_image(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    save_images(src, [(250, 0, 0), (0, 250, 0), (0, 0, 250)])
    out = tmp_path / "grids"
    written = extract_patches_dir(src, tiny_spec(), out)
    assert [w.name for w in written] == ["img_000.vgrd", "img_001.vgrd", "img_002.vgrd"]
    for i, w in enumerate(written):
        g = vimem.read_grid(w)
        assert (g.rows, g.cols, g.dim) == (2, 2, 32)
        assert g.image_id == i
    listing = json.loads((out / "grids.json").read_text())
    assert listing["count"] == 3


def test_unreadable_image_fails_patch_extraction(tmp_path):
    (tmp_path / "bad.png").write_bytes(b"nope")
    with pytest.raises(RuntimeError, match="unreadable"):
        extract_patches(tmp_path / "bad.png", tiny_spec(), tmp_path / "bad.vgrd")


# ---------------------------------------------------------------- weights


def _reference_model_and_file(tmp_path, nest=False):
    model = VisionTransformer(32, 16, 32, 2, 2)
    model.seeded_init_(3)
    sd = model.state_dict()
    if nest:
        sd = {"teacher": {f"module.backbone.{k}": v for k, v in sd.items()}}
        sd["teacher"]["module.head.mlp.weight"] = torch.zeros(4, 4)
    path = tmp_path / "w.pth"
    torch.save(sd, path)
    return model, path


def test_raw_state_dict_loads_and_matches_source(tmp_path):
    model, path = _reference_model_and_file(tmp_path)
    spec = tiny_spec(model=str(path))
    x = np.random.default_rng(1).standard_normal((2, 3, 32, 32)).astype(np.float32)
    cls, patches = Backbone(spec).run(x)
    with torch.no_grad():
        ref_cls, ref_patches = model(torch.from_numpy(x))
    assert np.array_equal(cls, ref_cls.numpy())
    assert np.array_equal(patches, ref_patches.numpy())


def test_nested_checkpoint_with_prefixes_and_head_loads(tmp_path):
    model, path = _reference_model_and_file(tmp_path, nest=True)
    x = np.random.default_rng(2).standard_normal((1, 3, 32, 32)).astype(np.float32)
    cls, _ = Backbone(tiny_spec(model=str(path))).run(x)
    with torch.no_grad():
        ref_cls, _ = model(torch.from_numpy(x))
    assert np.array_equal(cls, ref_cls.numpy())


def test_declared_dim_must_match_weights(tmp_path):
    _, path = _reference_model_and_file(tmp_path)
    with pytest.raises(ValueError, match="declared dim 64 does not match weights dim 32"):
        Backbone(tiny_spec(model=str(path), dim=64))


def test_declared_resolution_must_match_pos_embed(tmp_path):
    _, path = _reference_model_and_file(tmp_path)
    with pytest.raises(ValueError, match="32-pixel input"):
        Backbone(tiny_spec(model=str(path), resolution=64))


def test_garbage_state_dict_rejected():
    with pytest.raises(ValueError, match="state dict"):
        normalize_state_dict({"unrelated": torch.zeros(3)})
    with pytest.raises(ValueError, match="state dict"):
        normalize_state_dict([1, 2, 3])


def test_onnx_route_probes_for_runtime(tmp_path):
    (tmp_path / "model.onnx").write_bytes(b"\x08")
    try:
        import onnxruntime  # noqa: F401
        pytest.skip("onnxruntime installed; probe path not exercised")
    except ImportError:
        pass
    with pytest.raises(RuntimeError, match="onnxruntime is not installed"):
        Backbone(tiny_spec(model=str(tmp_path / "model.onnx")))


def test_spec_validation():
    with pytest.raises(ValueError, match="not divisible"):
        BackboneSpec(resolution=30, patch_size=16)
    spec = tiny_spec()
    assert spec.grid == 2
    assert "resize-32x32" in spec.preprocessing


# ---------------------------------------------------------------- engine + cli


def test_engine_classifies_adapter_output(tmp_path):
    # red-ish vs blue-ish images must be linearly separated enough for
    # cosine knn with k=1 to match same-color neighbors
    reds = [(200 + i, 10, 10) for i in range(4)]
    blues = [(10, 10, 200 + i) for i in range(4)]
    save_images(tmp_path, reds + blues)
    store = vimem.read_store(extract_global(tmp_path, tiny_spec(), tmp_path / "e.vmem"))
    relabeled = vimem.make_store(store.ids, store.vectors, [0] * 4 + [1] * 4)
    for i in range(8):
        rest = vimem.remove_records(vimem.new_memory(relabeled), [i]).store
        assert vimem.classify(rest, store.vectors[i], 1).label == (0 if i < 4 else 1)


def test_cli_global_and_patches(tmp_path, capsys):
    src = tmp_path / "imgs"
    src.mkdir()
    save_images(src, [(240, 20, 20), (20, 20, 240)])
    args = ["--model", "tiny-random", "--resolution", "32", "--patch-size", "16",
            "--dim", "32", "--depth", "2", "--heads", "2", "--seed", "7"]
    assert cli_main(["extract", *args, "--images", str(src),
                     "--out", str(tmp_path / "cli.vmem")]) == 0
    store = vimem.read_store(tmp_path / "cli.vmem")
    assert len(store) == 2 and store.dim == 32

    assert cli_main(["extract", *args, "--images", str(src),
                     "--out", str(tmp_path / "grids"), "--patches"]) == 0
    grids = sorted((tmp_path / "grids").glob("*.vgrd"))
    assert len(grids) == 2
    assert vimem.read_grid(grids[0]).rows == 2

    code = cli_main(["extract", *args, "--images", str(tmp_path / "missing"),
                     "--out", str(tmp_path / "no.vmem")])
    assert code == 1
    assert "not a directory" in capsys.readouterr().err


def test_cli_library_equivalence(tmp_path):
    src = tmp_path / "imgs"
    src.mkdir()
    save_images(src, [(5, 200, 100)])
    cli_main(["extract", "--model", "tiny-random", "--resolution", "32",
              "--patch-size", "16", "--dim", "32", "--depth", "2", "--heads", "2",
              "--seed", "7", "--images", str(src), "--out", str(tmp_path / "a.vmem")])
    extract_global(src, tiny_spec(), tmp_path / "b.vmem")
    assert (tmp_path / "a.vmem").read_bytes() == (tmp_path / "b.vmem").read_bytes()


# ---------------------------------------------------------------- formats


def test_vmem_header_layout(tmp_path):
    from embed_adapter.formats import write_vmem
    vecs = np.arange(6, dtype=np.float32).reshape(2, 3)
    write_vmem(tmp_path / "h.vmem", vecs)
    blob = (tmp_path / "h.vmem").read_bytes()
    magic, version, dim, count, flags = struct.unpack_from("<4sIIQI", blob)
    assert (magic, version, dim, count, flags) == (b"VMEM", 1, 3, 2, 0)
    rec_id, label = struct.unpack_from("<Qq", blob, 24)
    assert (rec_id, label) == (0, -1)


def test_vgrd_header_layout(tmp_path):
    from embed_adapter.formats import write_vgrd
    write_vgrd(tmp_path / "h.vgrd", np.zeros((2, 3, 4), dtype=np.float32), image_id=9)
    blob = (tmp_path / "h.vgrd").read_bytes()
    assert struct.unpack_from("<4sIIIIQ", blob) == (b"VGRD", 1, 4, 2, 3, 9)
    assert len(blob) == 28 + 2 * 3 * 4 * 4
