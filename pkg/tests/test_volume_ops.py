import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage as ndi

from pulmofuse import synth
from pulmofuse.errors import AllUninformative, DegenerateRange, SpecOutOfRange
from pulmofuse.nifti_io import Volume
from pulmofuse.volume_ops import (
    AugmentationSpec,
    apply_augmentation,
    clip_scale_hu,
    crop_uninformative_slices,
    encode_pgm,
    project_sum,
    random_augmentation,
    to_uint8,
)


def hu_volume(values):
    return Volume(np.asarray(values, dtype=np.float32).reshape(1, 1, -1))


@pytest.mark.parametrize("hu,expected", [(-1500, 0.0), (0, 0.5), (250, 0.625), (1000, 1.0),
                                         (4000, 1.0), (-1000, 0.0)])
def test_clip_scale_values(hu, expected):
    assert clip_scale_hu(hu_volume([hu])).data[0, 0, 0] == expected


def test_clip_scale_degenerate():
    with pytest.raises(DegenerateRange):
        clip_scale_hu(hu_volume([0]), 10, 10)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-3000, 3000, allow_nan=False), min_size=2, max_size=30))
def test_clip_scale_monotone_and_idempotent(values):
    vals = np.sort(np.asarray(values, dtype=np.float32))
    out = clip_scale_hu(hu_volume(vals)).data.ravel()
    assert (np.diff(out) >= 0).all()
    assert out.min() >= 0 and out.max() <= 1
    again = clip_scale_hu(Volume(out.reshape(1, 1, -1)), 0.0, 1.0).data.ravel()
    np.testing.assert_array_equal(again, out)


def test_crop_leading_and_trailing():
    data = np.full((4, 4, 12), -1024, dtype=np.int16)
    data[:, :, 3:10] = 40
    data[0, 0, 3] = -1024
    vol = Volume(data, (0.7, 0.7, 1.0))
    cropped, rec = crop_uninformative_slices(vol)
    assert rec.kept[2] == (3, 10)
    assert cropped.shape == (4, 4, 7)
    # world position of the first kept slice is preserved
    np.testing.assert_allclose(cropped.affine[:3, 3], vol.affine[:3, :3] @ [0, 0, 3])
    restored = rec.uncrop(cropped.data, fill=-1024)
    np.testing.assert_array_equal(restored, data)


def test_crop_identity_when_nothing_to_remove():
    data = np.zeros((2, 2, 5), dtype=np.int16)
    data[0, 0, 0] = 5
    data[1, 1, 4] = 5
    cropped, rec = crop_uninformative_slices(Volume(data))
    assert rec.kept[2] == (0, 5)
    np.testing.assert_array_equal(cropped.data, data)


def test_crop_all_uninformative():
    with pytest.raises(AllUninformative):
        crop_uninformative_slices(Volume(np.full((3, 3, 3), 7, dtype=np.int16)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 4), st.integers(0, 4))
def test_crop_record_round_trip(seed, lead, trail):
    rng = np.random.default_rng(seed)
    inner = rng.integers(-900, 900, size=(3, 4, 5)).astype(np.int16)
    inner[0, 0, [0, -1]] = 500  # boundary slices of the interior stay informative
    data = np.full((3, 4, 5 + lead + trail), -1000, dtype=np.int16)
    data[:, :, lead:lead + 5] = inner
    cropped, rec = crop_uninformative_slices(Volume(data))
    restored = rec.uncrop(cropped.data, fill=-1000)
    assert restored.shape == data.shape
    np.testing.assert_array_equal(restored, data)


@pytest.fixture(scope="module")
def smooth_cylinder():
    spec = synth.cylinder_preset(radius=5.0, length=30.0, noise_sigma=0.0)
    hu, _, _ = synth.rasterize_phantom(spec)
    norm = clip_scale_hu(hu).data.astype(np.float64)
    return Volume(ndi.gaussian_filter(norm, 1.0).astype(np.float32), hu.spacing)


def test_augmentation_identity(smooth_cylinder):
    out = apply_augmentation(smooth_cylinder, AugmentationSpec())
    np.testing.assert_array_equal(out.data, smooth_cylinder.data)


def test_flip_is_involution(smooth_cylinder):
    spec = AugmentationSpec(flip_axes=("x",))
    once = apply_augmentation(smooth_cylinder, spec)
    np.testing.assert_array_equal(once.data, smooth_cylinder.data[::-1])
    twice = apply_augmentation(once, spec)
    np.testing.assert_array_equal(twice.data, smooth_cylinder.data)


def test_rotation_round_trip_error(smooth_cylinder):
    for axis in ("x", "z"):
        fwd = apply_augmentation(smooth_cylinder, AugmentationSpec(rotation_degrees=30,
                                                                   rotation_axis=axis))
        back = apply_augmentation(fwd, AugmentationSpec(rotation_degrees=-30,
                                                        rotation_axis=axis))
        mae = np.abs(back.data.astype(np.float64) - smooth_cylinder.data).mean()
        assert mae <= 0.02, (axis, mae)


def test_intensity_shift_in_hu_units():
    vol = Volume(np.full((2, 2, 2), 0.5, dtype=np.float32))
    out = apply_augmentation(vol, AugmentationSpec(intensity_shift_hu=10))
    np.testing.assert_allclose(out.data, 0.505, rtol=1e-6)
    top = apply_augmentation(Volume(np.ones((2, 2, 2), dtype=np.float32)),
                             AugmentationSpec(intensity_shift_hu=10))
    assert top.data.max() == 1.0


@pytest.mark.parametrize("spec", [
    AugmentationSpec(rotation_degrees=31),
    AugmentationSpec(intensity_shift_hu=-10.5),
    AugmentationSpec(flip_axes=("w",)),
    AugmentationSpec(rotation_axis="q"),
])
def test_augmentation_out_of_range(spec):
    with pytest.raises(SpecOutOfRange):
        apply_augmentation(Volume(np.zeros((2, 2, 2), dtype=np.float32)), spec)


def test_augmentation_reproducible(smooth_cylinder):
    spec = random_augmentation(99)
    assert spec == random_augmentation(99)
    a = apply_augmentation(smooth_cylinder, spec)
    b = apply_augmentation(smooth_cylinder, spec)
    assert a.data.tobytes() == b.data.tobytes()
    assert -30 <= spec.rotation_degrees <= 30 and abs(spec.intensity_shift_hu) <= 10


def test_project_all_ones():
    img = project_sum(Volume(np.ones((4, 4, 4), dtype=np.uint8)), "axial")
    np.testing.assert_array_equal(img, np.full((4, 4), 4.0))


def test_project_single_voxel():
    data = np.zeros((3, 4, 5), dtype=np.uint8)
    data[1, 2, 3] = 1
    vol = Volume(data)
    assert project_sum(vol, "axial")[1, 2] == 1
    assert project_sum(vol, "coronal")[1, 3] == 1
    assert project_sum(vol, "sagittal")[2, 3] == 1
    for plane in ("axial", "coronal", "sagittal"):
        assert np.count_nonzero(project_sum(vol, plane)) == 1


def test_projection_conserves_sum(y_phantom):
    _, hu, gt, _ = y_phantom
    vol = hu.with_data(gt)
    total = int(gt.astype(np.int64).sum())
    for plane in ("axial", "coronal", "sagittal"):
        assert project_sum(vol, plane).sum() == total


def test_pgm_encoding():
    img = np.array([[0.0, 1.0], [2.0, 4.0], [3.0, 3.0]])
    raw = encode_pgm(img)
    header, pixels = raw[:11], raw[11:]
    assert header == b"P5\n3 2\n255\n"
    np.testing.assert_array_equal(np.frombuffer(pixels, np.uint8).reshape(2, 3),
                                  to_uint8(img).T)
    assert to_uint8(img).max() == 255 and to_uint8(img).min() == 0
