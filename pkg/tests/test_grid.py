import io
import json

import numpy as np
import pytest
from PIL import Image

from dragwarp.errors import (
    BadMagic,
    DecodeError,
    DimensionMismatch,
    HeaderParse,
    NonFiniteValue,
    PayloadTruncated,
)
from dragwarp.grid import (
    DragPair,
    FeatureGrid,
    PcddParams,
    dragspec_from_json,
    image_to_grid,
    grid_to_image,
    luminance_depth,
    mask_from_png,
    mask_to_png,
    params_from_json,
    read_fgrid,
    validate_grid,
    write_fgrid,
)


def png_bytes(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(pixels.astype(np.uint8), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def test_validate_well_formed():
    grid = FeatureGrid.from_flat(2, 2, 1, [1, 2, 3, 4])
    validate_grid(grid)  # must not raise


def test_validate_length_mismatch():
    with pytest.raises(DimensionMismatch):
        FeatureGrid.from_flat(2, 2, 1, [1, 2, 3])


def test_validate_nan_rejected():
    with pytest.raises(NonFiniteValue):
        FeatureGrid.from_flat(1, 1, 1, [float("nan")])


def test_fgrid_round_trip_small():
    grid = FeatureGrid.from_flat(3, 3, 2, list(range(18)))
    again = read_fgrid(write_fgrid(grid))
    assert np.array_equal(again.data, grid.data)
    assert (again.height, again.width, again.depth_dim) == (3, 3, 2)


def test_fgrid_round_trip_random_grids_bit_exact():
    rng = np.random.default_rng(7)
    for _ in range(50):
        h, w, d = rng.integers(1, 8, size=3)
        # values chosen representable in f32 so narrowing is lossless
        data = rng.standard_normal((h, w, d)).astype(np.float32).astype(np.float64)
        grid = FeatureGrid(data)
        blob = write_fgrid(grid)
        again = read_fgrid(blob)
        assert np.array_equal(again.data, grid.data)
        assert write_fgrid(again) == blob


def test_fgrid_payload_truncated():
    blob = write_fgrid(FeatureGrid.from_flat(2, 2, 1, [1, 2, 3, 4]))
    with pytest.raises(PayloadTruncated):
        read_fgrid(blob[:-3])


def test_fgrid_zero_dimension_rejected():
    header = json.dumps({"h": 1, "w": 1, "d": 0, "dtype": "f32"}).encode()
    with pytest.raises(HeaderParse):
        read_fgrid(b"FGRD\n" + header + b"\n")


def test_fgrid_bad_magic():
    with pytest.raises(BadMagic):
        read_fgrid(b"NOPE\n{}\n")


def test_fgrid_header_garbage():
    with pytest.raises(HeaderParse):
        read_fgrid(b"FGRD\nnot json\n")


def test_image_to_grid_white_pixel():
    grid = image_to_grid(png_bytes(np.full((1, 1, 3), 255)))
    assert grid.data.shape == (1, 1, 3)
    assert np.allclose(grid.data, 1.0)
    assert luminance_depth(grid).values[0, 0] == pytest.approx(1.0)


def test_luminance_red_pixel():
    px = np.zeros((1, 1, 3), dtype=np.uint8)
    px[0, 0, 0] = 255
    depth = luminance_depth(image_to_grid(png_bytes(px)))
    assert depth.values[0, 0] == pytest.approx(0.299)


def test_truncated_png_rejected():
    blob = png_bytes(np.zeros((4, 4, 3)))
    with pytest.raises(DecodeError):
        image_to_grid(blob[:20])


def test_luminance_stays_in_unit_interval():
    rng = np.random.default_rng(3)
    for _ in range(20):
        grid = FeatureGrid(rng.random((5, 4, 3)))
        vals = luminance_depth(grid).values
        assert vals.min() >= 0.0 and vals.max() <= 1.0


def test_grid_png_round_trip():
    rng = np.random.default_rng(11)
    pixels = rng.integers(0, 256, size=(6, 5, 3))
    grid = image_to_grid(png_bytes(pixels))
    assert np.array_equal(
        np.asarray(Image.open(io.BytesIO(grid_to_image(grid)))), pixels
    )


def test_mask_png_nonzero_true():
    bits = np.zeros((3, 3), dtype=bool)
    bits[1, 2] = True
    mask = mask_from_png(mask_to_png(type("M", (), {"bits": bits})()))
    assert np.array_equal(mask.bits, bits)


def test_params_defaults_and_aliases():
    params = params_from_json({"d_O": 5, "alpha": 0.5})
    assert params.d_o == 5.0
    assert params.alpha == 0.5
    assert params.beta == 0.7  # untouched default
    with pytest.raises(HeaderParse):
        params_from_json({"bogus": 1})


def test_params_invariants():
    with pytest.raises(DimensionMismatch):
        PcddParams(dp_min=10, dp_max=10)
    with pytest.raises(DimensionMismatch):
        PcddParams(d_shield=-1)


def test_dragspec_inline_mask():
    import base64

    bits = np.zeros((2, 2), dtype=bool)
    bits[0, 0] = True
    png = mask_to_png(type("M", (), {"bits": bits})())
    spec = dragspec_from_json({
        "pairs": [{"handle": [0, 0], "target": [1, 0]}],
        "mask": {"png_base64": base64.b64encode(png).decode()},
        "params": {"alpha": 1.0},
    })
    assert spec.pairs == (DragPair(handle=(0.0, 0.0), target=(1.0, 0.0)),)
    assert spec.params.alpha == 1.0
    assert spec.mask.bits[0, 0]


def test_dragspec_rejects_unknown_keys():
    with pytest.raises(HeaderParse):
        dragspec_from_json({"pairs": [{"handle": [0, 0], "target": [1, 1]}], "mask": {}, "oops": 1})


def test_dragspec_requires_pairs():
    with pytest.raises(HeaderParse):
        dragspec_from_json({"pairs": [], "mask": {}})
