import numpy as np
import pytest
from PIL import Image

from lungkit.errors import ImageFormatError, ManifestError
from lungkit.raster import as_raster, load_image, load_manifest, luma, save_image


def write_pgm(path, header, payload):
    path.write_bytes(header + bytes(payload))
    return path


def test_p5_bytes_pass_through(tmp_path):
    f = write_pgm(tmp_path / "a.pgm", b"P5\n2 2\n255\n", [0, 128, 255, 7])
    img = load_image(f)
    assert img.dtype == np.uint8
    assert img.tolist() == [[0, 128], [255, 7]]


def test_pgm_header_comments(tmp_path):
    f = write_pgm(tmp_path / "c.pgm", b"P5 # made by hand\n3 1\n# depth\n255\n", [1, 2, 3])
    assert load_image(f).tolist() == [[1, 2, 3]]


def test_round_trip_payload(tmp_path, rng):
    img = rng.integers(0, 256, (7, 5), dtype=np.uint8)
    save_image(img, tmp_path / "x.pgm")
    back = load_image(tmp_path / "x.pgm")
    assert np.array_equal(back, img)
    save_image(back, tmp_path / "y.pgm")
    assert (tmp_path / "x.pgm").read_bytes() == (tmp_path / "y.pgm").read_bytes()


def test_single_pixel_round_trip(tmp_path):
    save_image(np.array([[42]], np.uint8), tmp_path / "p.pgm")
    assert load_image(tmp_path / "p.pgm").tolist() == [[42]]


def test_mask_encoding(tmp_path):
    m = np.zeros((4, 4), bool)
    m[0, 0] = m[1, 2] = m[3, 3] = True
    save_image(m, tmp_path / "m.pgm")
    out = load_image(tmp_path / "m.pgm")
    assert np.count_nonzero(out == 255) == 3 and np.count_nonzero(out) == 3
    save_image(np.zeros((3, 3), bool), tmp_path / "e.pgm")
    assert not load_image(tmp_path / "e.pgm").any()


def test_rgb_png_luma(tmp_path):
    Image.fromarray(np.full((1, 1, 3), (10, 20, 30), np.uint8), "RGB").save(tmp_path / "c.png")
    # 0.299*10 + 0.587*20 + 0.114*30 = 18.15
    assert load_image(tmp_path / "c.png").tolist() == [[18]]


def test_gray_png_and_png_save(tmp_path, rng):
    img = rng.integers(0, 256, (6, 9), dtype=np.uint8)
    save_image(img, tmp_path / "g.png")
    assert np.array_equal(load_image(tmp_path / "g.png"), img)


def test_luma_is_identity_on_gray():
    v = np.arange(256, dtype=np.uint8)
    assert np.array_equal(luma(np.stack([v, v, v], -1)), v)


@pytest.mark.parametrize(
    "header,payload,msg",
    [
        (b"P5\n2 2\n65535\n", [0] * 8, "bit depth"),
        (b"P5\n0 2\n255\n", [], "zero-area"),
        (b"P5\n2 2\n255\n", [1, 2, 3], "truncated"),
        (b"P5\n2 x\n255\n", [0] * 4, "malformed"),
        (b"P5\n2", [], "malformed"),
    ],
)
def test_pgm_errors(tmp_path, header, payload, msg):
    f = write_pgm(tmp_path / "bad.pgm", header, payload)
    with pytest.raises(ImageFormatError, match=msg):
        load_image(f)


def test_missing_and_foreign_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_image(tmp_path / "nope.pgm")
    (tmp_path / "t.txt").write_text("hello")
    with pytest.raises(ImageFormatError):
        load_image(tmp_path / "t.txt")


def test_as_raster_validation():
    assert as_raster(np.array([[True, False]])).tolist() == [[255, 0]]
    assert as_raster(np.array([[3.0, 4.0]])).dtype == np.uint8
    with pytest.raises(ImageFormatError):
        as_raster(np.array([[300]]))
    with pytest.raises(ImageFormatError):
        as_raster(np.zeros(4))


def _populate(root, per_class):
    for name in ("cancerous", "normal"):
        (root / name).mkdir(parents=True)
        for i in range(per_class):
            (root / name / f"{name[0]}{i:04d}.pgm").write_bytes(b"P5\n1 1\n255\n\x00")


def test_manifest_832_image_directory(tmp_path):
    _populate(tmp_path, 416)
    man = load_manifest(tmp_path)
    assert man.class_counts == {1: 416, 0: 416}
    assert len(man) == 832
    assert [str(p) for p in man.paths] == sorted(str(p) for p in man.paths)


def test_manifest_empty_directory(tmp_path):
    with pytest.raises(ManifestError, match="empty dataset"):
        load_manifest(tmp_path)


def test_manifest_csv(tmp_path):
    (tmp_path / "m.csv").write_text("path,label\na.png,1\nb.png,0\n")
    man = load_manifest(tmp_path / "m.csv")
    assert len(man) == 2 and man.class_counts == {1: 1, 0: 1}
    assert man.paths[0] == tmp_path / "a.png"


def test_manifest_csv_rejects_bad_rows(tmp_path):
    (tmp_path / "m.csv").write_text("path,label\na.png,maybe\n")
    with pytest.raises(ManifestError, match="label"):
        load_manifest(tmp_path / "m.csv")
    (tmp_path / "d.csv").write_text("path,label\na.png,1\na.png,0\n")
    with pytest.raises(ManifestError, match="duplicate"):
        load_manifest(tmp_path / "d.csv")
