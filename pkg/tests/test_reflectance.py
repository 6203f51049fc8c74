import numpy as np
import pytest

from probelight.errors import FormatError, UsageError
from probelight.geometry import build_layout
from probelight.reflectance import (
    BRDF_DIFFUSE,
    lambertian_basis,
    load_field,
    mirror_basis,
    phong_basis,
    resample_field,
    save_field,
)

LAYOUT = build_layout(32)
ORACLE_LAYOUT = build_layout(256)  # dense quadrature for energy oracles


def uniform_response(field):
    """Rendered sphere under a uniform unit-radiance environment."""
    return field.basis.sum(axis=0)


def hemisphere_cosine_quadrature(normal, layout):
    """Dense-quadrature irradiance of a uniform unit environment."""
    cos = np.clip(layout.valid_directions @ normal, 0.0, None)
    return float(cos @ layout.valid_solid_angles)


class TestMirrorBasis:
    def test_one_hot_structure_and_value(self):
        field = mirror_basis(LAYOUT)
        nonzero = field.basis[field.basis > 0]
        assert np.all(nonzero == np.float32(0.827))
        per_dir = field.basis.reshape(field.basis.shape[0], -1, 3)
        # exactly one nonzero pixel per direction, in each channel
        assert np.all((per_dir > 0).sum(axis=1) == 1)

    def test_total_energy(self):
        field = mirror_basis(LAYOUT)
        total = field.basis.sum(dtype=np.float64)
        assert total == pytest.approx(0.827 * LAYOUT.n_valid * 3, rel=1e-6)

    def test_basis_pixel_matches_direction_index(self):
        field = mirror_basis(LAYOUT)
        for i in (0, 100, 500, LAYOUT.n_valid - 1):
            v, u = LAYOUT.valid_uv[i]
            assert field.basis[i, v, u, 0] == np.float32(0.827)

    @pytest.mark.parametrize("bad", [0.0, -0.1, 1.5])
    def test_reflectivity_range(self, bad):
        with pytest.raises(UsageError):
            mirror_basis(LAYOUT, bad)


class TestLambertianBasis:
    def test_formula_at_sample_pixels(self):
        # independent recomputation of the shading formula
        field = lambertian_basis(LAYOUT, 32)
        rng = np.random.default_rng(3)
        x = (np.arange(32) + 0.5) / 32 * 2 - 1
        for _ in range(20):
            i = rng.integers(0, LAYOUT.n_valid)
            v, u = rng.integers(0, 32, size=2)
            nx, ny = x[u], -x[v]
            r2 = nx * nx + ny * ny
            if r2 >= 1.0:
                expected = 0.0
            else:
                n = np.array([nx, ny, np.sqrt(1 - r2)])
                d = LAYOUT.valid_directions[i]
                expected = (
                    0.345 / np.pi * max(0.0, n @ d) * LAYOUT.valid_solid_angles[i]
                )
            assert field.basis[i, v, u, 0] == pytest.approx(expected, abs=1e-9)

    def test_back_facing_contributions_zero(self):
        field = lambertian_basis(LAYOUT, 32)
        # center pixel normal ~ +z; directions pointing away contribute 0
        behind = LAYOUT.valid_directions[:, 2] < -0.9
        center = field.basis[behind, 15:17, 15:17, :]
        assert np.all(center == 0.0)

    def test_uniform_environment_reflects_albedo(self):
        # oracle: dense numerical quadrature at resolution 256
        field = lambertian_basis(LAYOUT, 32)
        resp = uniform_response(field)
        x = (np.arange(32) + 0.5) / 32 * 2 - 1
        xg, yg = np.meshgrid(x, -x)
        nz2 = 1 - xg**2 - yg**2
        interior = nz2 > np.sin(np.deg2rad(20)) ** 2  # >= 20 deg from grazing
        assert np.all(np.abs(resp[interior] - 0.345) <= 0.03 * 0.345)
        # center pixel cross-checked against the dense oracle
        n_center = np.array([x[16], -x[16], np.sqrt(1 - 2 * x[16] ** 2)])
        oracle = 0.345 / np.pi * hemisphere_cosine_quadrature(
            n_center, ORACLE_LAYOUT
        )
        assert resp[16, 16, 0] == pytest.approx(oracle, rel=0.02)

    def test_nonnegative(self):
        assert np.all(lambertian_basis(LAYOUT, 32).basis >= 0)


class TestPhongBasis:
    def test_lobe_peak_value(self):
        # pixel i's reflection vector is exactly direction i when the sphere
        # resolution equals the probe resolution, so with point quadrature
        # (supersample=1) the peak entry is the formula value exactly
        field = phong_basis(LAYOUT, 32, supersample=1)
        i = LAYOUT.n_valid // 2
        v, u = LAYOUT.valid_uv[i]
        expected = 0.644 * (66.0 / (2 * np.pi)) * LAYOUT.valid_solid_angles[i]
        assert field.basis[i, v, u, 0] == pytest.approx(expected, rel=1e-6)

    def test_uniform_environment_center_pixel(self):
        # oracle: normalized-lobe integral, dense quadrature at 256
        field = phong_basis(LAYOUT, 32)
        resp = uniform_response(field)
        assert resp[16, 16, 0] == pytest.approx(0.644, rel=0.05)
        x = (np.arange(32) + 0.5) / 32 * 2 - 1
        n = np.array([x[16], -x[16], np.sqrt(1 - 2 * x[16] ** 2)])
        r = 2 * n[2] * n
        r[2] = 2 * n[2] ** 2 - 1
        cos = np.clip(ORACLE_LAYOUT.valid_directions @ r, 0, None)
        oracle = (
            0.644 * (66 / (2 * np.pi)) * (cos**64 @ ORACLE_LAYOUT.valid_solid_angles)
        )
        assert resp[16, 16, 0] == pytest.approx(oracle, rel=0.02)

    def test_energy_within_5pct_away_from_grazing(self):
        field = phong_basis(LAYOUT, 32)
        resp = uniform_response(field)
        x = (np.arange(32) + 0.5) / 32 * 2 - 1
        xg, yg = np.meshgrid(x, -x)
        nz2 = 1 - xg**2 - yg**2
        interior = nz2 > np.sin(np.deg2rad(20)) ** 2
        assert np.all(np.abs(resp[interior] - 0.644) <= 0.05 * 0.644)

    def test_large_exponent_approaches_one_hot(self):
        # sweep oracle: dominant pixel carries >= 99% of each direction's
        # energy. Near the disc rim, neighboring pixels' reflection vectors
        # all collapse toward (0,0,-1), so the delta-lobe limit only holds
        # for interior directions.
        field = phong_basis(LAYOUT, 32, exponent=4096, supersample=1)
        flat = field.basis.reshape(field.basis.shape[0], -1, 3)[..., 0]
        dominant = flat.max(axis=1) / np.maximum(flat.sum(axis=1), 1e-30)
        interior = LAYOUT.valid_directions[:, 2] > -0.7
        assert np.all(dominant[interior] >= 0.99)


class TestResampleField:
    def test_identity_at_exact_directions(self):
        # delta-lobe limit. Directions with z near -1 cluster together (the
        # whole disc rim maps toward (0,0,-1)) and can never separate, so
        # identity is checked on the front hemisphere.
        rng = np.random.default_rng(7)
        imgs = rng.random((LAYOUT.n_valid, 8, 8, 3))
        samples = [
            (LAYOUT.valid_directions[i], imgs[i]) for i in range(LAYOUT.n_valid)
        ]
        field = resample_field(samples, LAYOUT, lobe_exponent=4096)
        front = LAYOUT.valid_directions[:, 2] > 0.0
        err = np.abs(field.basis - imgs.astype(np.float32))[front]
        assert err.mean() <= 0.01 * imgs[front].mean()

    def test_single_sample_weight_concentration(self):
        d = np.array([0.3, 0.2, 1.0])
        d /= np.linalg.norm(d)
        img = np.full((8, 8, 3), 2.0)
        field = resample_field([(d, img)], LAYOUT, lobe_exponent=64)
        # all target weight sums to 1: resampled total equals the sample total
        total_in = img.sum()
        total_out = field.basis.sum(dtype=np.float64)
        assert total_out == pytest.approx(total_in, rel=1e-6)
        # weight concentrates near d: pixels >30 deg away get ~nothing
        w = field.basis.reshape(LAYOUT.n_valid, -1).sum(axis=1) / total_in
        far = LAYOUT.valid_directions @ d < np.cos(np.deg2rad(30))
        assert w[far].sum() < 0.01

    def test_total_energy_preserved(self):
        rng = np.random.default_rng(11)
        dirs = rng.normal(size=(40, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        imgs = rng.random((40, 8, 8, 3))
        field = resample_field(
            [(dirs[i], imgs[i]) for i in range(40)], LAYOUT
        )
        assert field.basis.sum(dtype=np.float64) == pytest.approx(
            imgs.sum(), rel=0.02
        )

    def test_led_sphere_of_lambertian_matches_analytic(self):
        # oracle: lambertian_basis; samples on a ~12 degree grid
        dirs = []
        step = np.deg2rad(12.0)
        n_rings = int(np.pi / step)
        for k in range(n_rings + 1):
            lat = -np.pi / 2 + k * step
            n_on_ring = max(1, int(round(2 * np.pi * np.cos(lat) / step)))
            for j in range(n_on_ring):
                lon = 2 * np.pi * j / n_on_ring
                dirs.append(
                    [
                        np.cos(lat) * np.cos(lon),
                        np.cos(lat) * np.sin(lon),
                        np.sin(lat),
                    ]
                )
        dirs = np.array(dirs)
        share = 4 * np.pi / len(dirs)  # each LED covers this solid angle

        x = (np.arange(32) + 0.5) / 32 * 2 - 1
        xg, yg = np.meshgrid(x, -x)
        nz = np.sqrt(np.clip(1 - xg**2 - yg**2, 0, None))
        normals = np.stack([xg, yg, nz], axis=-1)
        inside = (xg**2 + yg**2) < 1

        samples = []
        for d in dirs:
            img = 0.345 / np.pi * np.clip(normals @ d, 0, None) * share
            img = np.where(inside, img, 0.0)
            samples.append((d, np.repeat(img[..., None], 3, axis=-1)))

        field = resample_field(samples, LAYOUT, lobe_exponent=64)
        ref = lambertian_basis(LAYOUT, 32)
        err = np.abs(field.basis.astype(np.float64) - ref.basis)
        assert err.mean() <= 0.05 * ref.basis.mean()

    def test_empty_sample_list_rejected(self):
        with pytest.raises(UsageError):
            resample_field([], LAYOUT)


class TestFieldFile:
    def test_round_trip_bit_exact(self, tmp_path):
        field = lambertian_basis(LAYOUT, 16)
        path = tmp_path / "diffuse.rfld"
        save_field(path, field)
        loaded = load_field(path)
        assert loaded.brdf_id == BRDF_DIFFUSE
        assert loaded.sphere_resolution == 16
        assert loaded.reflectivity == pytest.approx(0.345, abs=1e-7)
        assert np.array_equal(loaded.basis, field.basis)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.rfld"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(FormatError):
            load_field(path)

    def test_truncated_file_rejected(self, tmp_path):
        field = mirror_basis(build_layout(8))
        path = tmp_path / "m.rfld"
        save_field(path, field)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(FormatError):
            load_field(path)
