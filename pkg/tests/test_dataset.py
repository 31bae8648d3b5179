import json
import warnings

import numpy as np
import pytest

from cobbnet import anglesio, dataset, imaging
from cobbnet.dataset import DatasetError, InputKind, Record, make_batches, scan, split, synth_generate
from cobbnet.geometry import cobb_angles, rasterize_mask, read_landmarks, write_landmarks
from cobbnet.tensor import Shape2D
from conftest import spine_from_tilts

SIZE = Shape2D(64, 32)


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    synth_generate(6, 3, SIZE, out)
    return out


def test_scan_empty(tmp_path):
    assert scan(tmp_path) == []


def test_scan_sorted_records(synth_dir):
    recs = scan(synth_dir)
    assert [r.id for r in recs] == [f"synth_{i:04d}" for i in range(6)]
    assert all(r.angles is not None and r.landmarks is not None for r in recs)


def test_scan_computes_missing_angles(tmp_path):
    lm = spine_from_tilts([3.0 * k for k in range(17)], size=SIZE, half_w=5, half_h=1)
    for sub in ("images", "landmarks"):
        (tmp_path / sub).mkdir()
    imaging.save_pgm(tmp_path / "images" / "a.pgm", imaging.GrayImage(np.ones((64, 32)), 255))
    write_landmarks(tmp_path / "landmarks" / "a.csv", lm)
    (rec,) = scan(tmp_path)
    assert rec.angles == cobb_angles(lm).angles


def test_scan_rejects(tmp_path):
    (tmp_path / "images").mkdir()
    (tmp_path / "landmarks").mkdir()
    img = imaging.GrayImage(np.ones((4, 4)), 255)
    imaging.save_pgm(tmp_path / "images" / "bare.pgm", img)
    imaging.save_pgm(tmp_path / "images" / "broken.pgm", img)
    (tmp_path / "landmarks" / "broken.csv").write_text("1,2\n")
    rejects = []
    assert scan(tmp_path, rejects=rejects) == []
    assert [r["id"] for r in rejects] == ["bare", "broken"]
    assert len(scan(tmp_path, training=False)) == 2
    dataset.write_rejects(tmp_path / "rejects.jsonl", rejects)
    lines = (tmp_path / "rejects.jsonl").read_text().splitlines()
    assert [json.loads(x)["id"] for x in lines] == ["bare", "broken"]


def fake_records(n):
    return [Record(f"r{i:03d}", None) for i in range(n)]


def test_split_sizes_and_partition():
    recs = fake_records(609)
    tr, va = split(recs, 481, seed=5)
    assert (len(tr), len(va)) == (481, 128)
    ids = [r.id for r in tr + va]
    assert sorted(ids) == [r.id for r in recs]
    assert not {r.id for r in tr} & {r.id for r in va}
    assert dataset.train_count_for(609) == 481


def test_split_edge_and_determinism():
    recs = fake_records(10)
    tr, va = split(recs, 10)
    assert len(tr) == 10 and va == []
    assert split(recs, 4, seed=2) == split(recs, 4, seed=2)
    with pytest.raises(DatasetError):
        split(recs, 11)


def test_batch_sizes(synth_dir):
    recs = scan(synth_dir)[:5]
    sizes = [len(b.ids) for b in make_batches(recs, "img", SIZE, 2)]
    assert sizes == [2, 2, 1]


def test_batch_contents(synth_dir):
    recs = scan(synth_dir)
    for kind in InputKind:
        for b in make_batches(recs, kind, SIZE, 4):
            assert b.inputs.shape[1:] == (kind.channels, 64, 32)
            assert np.all((b.targets >= 0) & (b.targets <= 1))
            by_id = {r.id: r for r in recs}
            for rid, t in zip(b.ids, b.targets):
                assert np.max(np.abs(t * 90 - np.array(by_id[rid].angles))) <= 1e-9


def test_mask_kind_values(synth_dir):
    recs = scan(synth_dir)
    (b,) = list(make_batches(recs, "mask", SIZE, 8, shuffle=False))
    assert b.inputs.shape[1] == 1
    assert set(np.unique(b.inputs).tolist()) <= {0.0, 0.5, 1.0}
    expected = rasterize_mask(read_landmarks(recs[0].landmarks), SIZE) / 2.0
    assert np.array_equal(b.inputs[0, 0], expected)


def test_img_kind_is_equalized_then_normalized(synth_dir):
    rec = scan(synth_dir)[0]
    raw = imaging.load_pgm(rec.image)
    expected = imaging.normalize_max(imaging.hist_equalize(raw)).pixels
    x = dataset.prepare(rec, "img", SIZE)
    assert np.array_equal(x[0], expected)
    assert x.max() == 1.0


def test_resized_inputs(synth_dir):
    rec = scan(synth_dir)[0]
    x = dataset.prepare(rec, "img+mask", Shape2D(32, 16))
    assert x.shape == (2, 32, 16)


@pytest.mark.filterwarnings("ignore::cobbnet.geometry.LandmarkWarning")
def test_batches_deterministic(synth_dir):
    recs = scan(synth_dir)
    aug = imaging.AugmentParams(seed=4)

    def stream(epoch):
        return [(b.ids, b.inputs) for b in make_batches(recs, "img+mask", SIZE, 4, aug, seed=1, epoch=epoch)]

    a, b, c = stream(0), stream(0), stream(1)
    assert all(x[0] == y[0] and np.array_equal(x[1], y[1]) for x, y in zip(a, b))
    assert any(x[0] != y[0] or not np.array_equal(x[1], y[1]) for x, y in zip(a, c))


def test_mask_without_landmarks_rejected(tmp_path):
    (tmp_path / "images").mkdir()
    (tmp_path / "angles").mkdir()
    imaging.save_pgm(tmp_path / "images" / "x.pgm", imaging.GrayImage(np.ones((64, 32)), 255))
    anglesio.write_triple(tmp_path / "angles" / "x.csv", (1, 2, 3))
    recs = scan(tmp_path)
    rejects = []
    assert list(make_batches(recs, "mask", SIZE, 2, rejects=rejects)) == []
    assert rejects[0]["id"] == "x" and "landmarks" in rejects[0]["reason"]
    (b,) = make_batches(recs, "img", SIZE, 2)
    assert b.targets.tolist() == [[1 / 90, 2 / 90, 3 / 90]]


def test_batch_size_validated(synth_dir):
    with pytest.raises(DatasetError):
        list(make_batches(scan(synth_dir), "img", SIZE, 0))


def test_synth_reproducible(tmp_path):
    synth_generate(2, 9, SIZE, tmp_path / "a")
    synth_generate(2, 9, SIZE, tmp_path / "b")
    for sub, ext in (("images", "pgm"), ("landmarks", "csv"), ("angles", "csv")):
        for i in range(2):
            name = f"synth_{i:04d}.{ext}"
            assert (tmp_path / "a" / sub / name).read_bytes() == (tmp_path / "b" / sub / name).read_bytes()


def test_synth_self_consistent(tmp_path):
    recs = synth_generate(20, 1, SIZE, tmp_path)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        for r in recs:
            lm = read_landmarks(r.landmarks)
            lm.check_order()
            rasterize_mask(lm, SIZE)
            t = r.angles
            assert all(0 <= v <= 90 for v in t) and t.mt >= t.pt and t.mt >= t.tl
            assert np.max(np.abs(np.array(cobb_angles(lm).angles) - np.array(t))) <= 1e-6
            img = imaging.load_pgm(r.image)
            assert img.pixels.shape == (64, 32) and img.maxval == 255


def test_synth_rejects_zero():
    with pytest.raises(DatasetError):
        synth_generate(0, 0, SIZE, "/nonexistent")
