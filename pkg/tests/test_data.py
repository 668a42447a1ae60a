import numpy as np
import pytest
from PIL import Image

from mbanet.data import (
    AugmentationConfig,
    augment_train,
    export_split,
    flip,
    load_image,
    load_split,
    make_split,
    make_synthetic_dataset,
    prepare_eval,
    scan_dataset,
)
from mbanet.data.augment import resize
from mbanet.data.dataset import IdentityDataset, ImageRecord
from mbanet.errors import ConfigError, DataError


def fake_dataset(counts):
    """In-memory dataset: counts[k] images for identity k (no files needed for splitting)."""
    records = []
    names = [f"{k:04d}" for k in range(len(counts))]
    for label, (name, n) in enumerate(zip(names, counts)):
        records += [ImageRecord(f"/fake/{name}/{j}.png", name, label) for j in range(n)]
    return IdentityDataset("/fake", records, names)


def write_tree(root, n_ids=3, n_imgs=4, size=8):
    rng = np.random.default_rng(0)
    for k in range(n_ids):
        (root / f"p{k}").mkdir(parents=True)
        for j in range(n_imgs):
            Image.fromarray(rng.integers(0, 255, (size, size, 3), dtype=np.uint8)).save(root / f"p{k}" / f"{j}.png")
    return root


# ------------------------------------------------------------------ scanning
def test_scan_folders(tmp_path):
    ds = scan_dataset(write_tree(tmp_path / "d"))
    assert len(ds) == 12
    assert sorted({r.label for r in ds.records}) == [0, 1, 2]
    assert ds.records[0].size == (8, 8)


def test_rescan_is_deterministic(tmp_path):
    root = write_tree(tmp_path / "d")
    a, b = scan_dataset(root), scan_dataset(root)
    assert [r.path for r in a.records] == [r.path for r in b.records]
    assert [str(r.path) for r in a.records] == sorted(str(r.path) for r in a.records)


def test_scan_manifest_missing_file(tmp_path):
    write_tree(tmp_path / "d")
    manifest = tmp_path / "d" / "list.txt"
    manifest.write_text("p0/0.png\tA\np0/ghost.png\tA\np1/0.png\tB\n")
    with pytest.raises(DataError, match="ghost.png"):
        scan_dataset(manifest, layout="manifest")


def test_scan_manifest(tmp_path):
    root = write_tree(tmp_path / "d")
    manifest = root / "list.txt"
    manifest.write_text("p1/0.png\tB\tdorsal-right\np0/0.png\tA\tdorsal-right\n")
    ds = scan_dataset(manifest, layout="manifest")
    assert [r.identity for r in ds.records] == ["A", "B"]
    assert ds.records[0].subset == "dorsal-right"


def test_scan_errors(tmp_path):
    with pytest.raises(DataError, match="does not exist"):
        scan_dataset(tmp_path / "nope")
    root = write_tree(tmp_path / "d")
    (root / "empty_id").mkdir()
    with pytest.raises(DataError, match="empty_id"):
        scan_dataset(root)


def test_unreadable_images_listed(tmp_path):
    root = write_tree(tmp_path / "d")
    (root / "p0" / "broken.png").write_bytes(b"not a png")
    with pytest.raises(DataError, match="broken.png"):
        scan_dataset(root)


# ------------------------------------------------------------------ splitting
def test_143_identities_halve_72_71():
    split = make_split(fake_dataset([5] * 143), seed=0)
    assert split.num_train_identities == 72
    assert len(split.test_identities) == 71


@pytest.mark.parametrize("n,train", [(146, 73), (151, 76), (502, 251)])
def test_other_subset_halvings(n, train):
    assert make_split(fake_dataset([3] * n)).num_train_identities == train


def test_four_identities_two_images():
    split = make_split(fake_dataset([2, 2, 2, 2]))
    assert len(split.gallery) == 2 and len(split.query) == 2


def test_split_deterministic_and_partition():
    ds = fake_dataset([4, 5, 6, 3, 7, 2])
    a, b = make_split(ds, seed=3, repetition=2), make_split(ds, seed=3, repetition=2)
    assert a.gallery == b.gallery and a.validation == b.validation
    sets = [set(r.path for r in getattr(a, role)) for role in ("train", "validation", "gallery", "query")]
    assert sum(len(s) for s in sets) == len(ds)
    assert len(set().union(*sets)) == len(ds)
    gallery_ids = [r.identity for r in a.gallery]
    assert len(gallery_ids) == len(set(gallery_ids))
    assert {r.identity for r in a.query} <= set(gallery_ids)
    assert {r.identity for r in a.validation} <= set(a.train_identities)


def test_repetitions_share_halving_but_vary_draws():
    ds = fake_dataset([6] * 20)
    splits = [make_split(ds, seed=0, repetition=r) for r in range(10)]
    assert all(s.train_identities == splits[0].train_identities for s in splits)
    assert len({tuple(r.path for r in s.gallery) for s in splits}) > 1
    assert len({tuple(r.path for r in s.validation) for s in splits}) > 1


def test_single_image_test_identity_warns(caplog):
    split = make_split(fake_dataset([3, 3, 3, 1]))
    assert any("single image" in m for m in caplog.messages)
    assert sum(r.identity == "0003" for r in split.gallery) == 1
    assert not any(r.identity == "0003" for r in split.query)


def test_needs_two_identities():
    with pytest.raises(DataError):
        make_split(fake_dataset([5]))


def test_distractors_gallery_only():
    extra = [ImageRecord(f"/fake/d/{j}.png", "junk", 0) for j in range(3)]
    split = make_split(fake_dataset([3, 3, 3, 3]), distractors=extra)
    assert len(split.gallery) == 5
    labels = split.retrieval_labels(split.gallery)
    assert (labels == -1).sum() == 3


def test_export_load_round_trip(tmp_path):
    ds = fake_dataset([3, 4, 3, 5])
    extra = [ImageRecord("/fake/d/0.png", "junk", 0)]
    split = make_split(ds, seed=1, repetition=4, distractors=extra)
    export_split(split, tmp_path / "split.txt")
    back = load_split(tmp_path / "split.txt")
    assert (back.seed, back.repetition) == (1, 4)
    for role in ("train", "validation", "gallery", "query"):
        assert [r.identity for r in getattr(back, role)] == [r.identity for r in getattr(split, role)]
    assert len(back.distractors) == 1
    assert back.train_identities == split.train_identities


def test_closed_set_split_covers_all_identities():
    split = make_split(fake_dataset([4] * 6), closed_set=True)
    assert split.train_identities == split.test_identities
    assert len(split.gallery) == 6 and len(split.query) == 18


# --------------------------------------------------------------- augmentation
@pytest.fixture
def img():
    return np.random.default_rng(1).integers(0, 256, (50, 40, 3), dtype=np.uint8)


def test_output_shape_and_dtype(img):
    cfg = AugmentationConfig(resize=36, crop=32)
    a = augment_train(img, cfg, np.random.default_rng(0))
    b = prepare_eval(img, cfg)
    assert a.shape == b.shape == (3, 32, 32)
    assert a.dtype == b.dtype == np.float32


def test_degenerate_train_equals_center_crop_eval(img):
    cfg = AugmentationConfig(resize=36, crop=32, flip_p=0.0, brightness=0, contrast=0, saturation=0,
                             crop_mode="center")
    out = augment_train(img, cfg, np.random.default_rng(0))
    manual = resize(img, 36)[2:34, 2:34]
    expected = (manual - np.array(cfg.mean, np.float32)) / np.array(cfg.std, np.float32)
    np.testing.assert_allclose(out, expected.transpose(2, 0, 1), rtol=1e-6)


def test_normalization_zero_mean(img):
    const = np.empty((8, 8, 3), dtype=np.uint8)
    const[...] = [51, 102, 204]
    cfg = AugmentationConfig(resize=8, crop=8, mean=(0.2, 0.4, 0.8))
    np.testing.assert_allclose(prepare_eval(const, cfg).mean(axis=(1, 2)), 0.0, atol=1e-6)


def test_flip_involution(img):
    assert np.array_equal(flip(flip(img)), img)


def test_augmentation_reproducible(img):
    cfg = AugmentationConfig(resize=36, crop=32)
    a = augment_train(img, cfg, np.random.default_rng([1, 2, 3]))
    b = augment_train(img, cfg, np.random.default_rng([1, 2, 3]))
    assert a.tobytes() == b.tobytes()


def test_crop_larger_than_resize_rejected():
    with pytest.raises(ConfigError):
        AugmentationConfig(resize=300, crop=324)


def test_undecodable_and_grayscale(tmp_path):
    (tmp_path / "bad.png").write_bytes(b"junk")
    with pytest.raises(DataError):
        load_image(tmp_path / "bad.png")
    Image.fromarray(np.zeros((4, 4), dtype=np.uint8)).save(tmp_path / "g.png")
    with pytest.warns(UserWarning, match="grayscale"):
        assert load_image(tmp_path / "g.png").shape == (4, 4, 3)


def test_synthetic_dataset(tmp_path):
    root = make_synthetic_dataset(tmp_path / "toy", num_identities=3, images_per_identity=4, size=16)
    ds = scan_dataset(root)
    assert len(ds) == 12 and ds.identities == ["id_000", "id_001", "id_002"]
    assert load_image(ds.records[0].path).shape == (16, 16, 3)
