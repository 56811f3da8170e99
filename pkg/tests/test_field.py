import json
import math

import numpy as np
import pytest

from meancurv import (
    DiscreteSet,
    NEG_INF,
    ScalarField,
    ShapeSpec,
    SizingError,
    UndefinedCellError,
    make_grid,
    mollify_field,
    sample_function,
    set_geometry,
    superlevel_set,
)
from meancurv.field import (
    ISOPERIMETRIC_CONSTANT,
    TOL_ISO,
    isoperimetric_floor,
    mollifier_kernel,
)

from conftest import cone_formula


class TestMakeGrid:
    def test_unit_disk_interior_count(self):
        grid, mask = make_grid(ShapeSpec.disk((0, 0), 1.0), 64)
        expect = math.pi / grid.h ** 2
        assert abs(mask.interior_count - expect) / expect < 0.02

    def test_interval_layout(self):
        grid, mask = make_grid(ShapeSpec.interval(-1, 1), 100)
        assert grid.extents == (201,)
        assert int(mask.boundary.sum()) == 2
        assert grid.axis_centers(0)[0] == -1.0
        assert grid.axis_centers(0)[-1] == 1.0

    def test_rectangle_full_mask_perimeter(self):
        grid, mask = make_grid(ShapeSpec.rectangle(0, 1, 0, 1), 32)
        s = DiscreteSet(grid=grid, member=mask.interior.copy(), mask=mask)
        assert abs(s.geometry().perimeter - 4.0) <= 2 * grid.h

    def test_degenerate_shape_rejected(self):
        with pytest.raises(SizingError):
            make_grid(ShapeSpec.disk((0, 0), 0.05), 16)
        with pytest.raises(SizingError):
            make_grid(ShapeSpec.disk((0, 0), 1.0), 4)

    def test_mask_invariants(self):
        for shape in (ShapeSpec.disk((0, 0), 1.0),
                      ShapeSpec.annulus((0, 0), 0.4, 1.0),
                      ShapeSpec.rectangle(0, 1.2, 0, 0.7)):
            grid, mask = make_grid(shape, 32)
            mask.validate()
            assert not (mask.interior & mask.boundary).any()
            # the discrete boundary hugs the true boundary to within one cell
            sd = shape.signed_distance(grid.points())
            assert np.abs(sd[mask.boundary]).max() <= grid.h * math.sqrt(2) + 1e-12


class TestSampleFunction:
    def test_zero(self, unit_disk_64):
        grid, mask = unit_disk_64
        u = sample_function(lambda p: np.zeros(len(p)), grid, mask)
        assert (u.values[mask.region] == 0).all()

    def test_cone_exact_at_centers(self, unit_disk_64):
        grid, mask = unit_disk_64
        u = sample_function(cone_formula, grid, mask)
        pts = grid.points()[mask.region]
        assert np.allclose(u.values[mask.region], np.hypot(pts[:, 0], pts[:, 1]),
                           rtol=0, atol=0)

    def test_nan_rejected_with_cell(self, unit_disk_64):
        grid, mask = unit_disk_64

        def bad(p):
            out = np.zeros(len(p))
            out[p[:, 0] > 0.9] = np.nan
            return out

        with pytest.raises(UndefinedCellError):
            sample_function(bad, grid, mask)

    def test_neg_inf_requires_extended(self, unit_disk_64):
        grid, mask = unit_disk_64

        def dip(p):
            out = np.zeros(len(p))
            out[np.hypot(p[:, 0], p[:, 1]) < 0.05] = NEG_INF
            return out

        with pytest.raises(UndefinedCellError):
            sample_function(dip, grid, mask)
        u = sample_function(dip, grid, mask, extended=True)
        assert u.neg_inf_fraction() > 0

    def test_uc_jump_across_unit_circle(self):
        grid, mask = make_grid(ShapeSpec.disk((0, 0), 1.5), 64)
        a = b = 2.0
        delta = sigma = 0.25
        c = 0.5

        def uc(p):
            r = np.hypot(p[:, 0], p[:, 1])
            out = np.where(r >= 1.0, a * np.maximum(r - 1, 0) ** delta,
                           -b * (1 - np.minimum(r, 1.0)) ** sigma - c)
            return out

        u = sample_function(uc, grid, mask)
        r = np.hypot(grid.points()[..., 0], grid.points()[..., 1])
        just_in = mask.interior & (r < 1.0) & (r > 1.0 - 2 * grid.h)
        just_out = mask.interior & (r >= 1.0) & (r < 1.0 + 2 * grid.h)
        assert u.values[just_in].max() < -c + 0.2
        assert u.values[just_out].min() > -0.2


class TestMollify:
    def test_kernel_sums_to_one(self):
        for n in (1, 2):
            w = mollifier_kernel(n, 1 / 64, 0.1)
            assert abs(w.sum() - 1.0) < 1e-13

    def test_constant_preserved(self, unit_disk_64):
        grid, mask = unit_disk_64
        u = sample_function(lambda p: np.full(len(p), 2.5), grid, mask)
        out = mollify_field(u, 0.1)
        have = out.defined
        assert have.any()
        assert np.abs(out.values[have] - 2.5).max() < 1e-10

    def test_1d_cone_exact_away_from_kink(self, interval_100):
        grid, mask = interval_100
        u = sample_function(lambda p: np.abs(p[:, 0]), grid, mask)
        eps = 0.1
        out = mollify_field(u, eps)
        x = grid.axis_centers(0)
        far = out.defined & (np.abs(x) > 2 * eps)
        assert np.abs(out.values[far] - np.abs(x[far])).max() < 1e-12
        low = out.defined
        assert (out.values[low] >= np.abs(x[low]) - 1e-12).all()

    def test_sandwich(self, cone_64):
        out = mollify_field(cone_64, 0.08)
        have = out.defined
        assert out.values[have].min() >= cone_64.values[have].min() - 0.08
        assert out.values[have].max() <= np.nanmax(cone_64.values) + 1e-12

    def test_under_resolved_rejected(self, unit_disk_64):
        grid, mask = unit_disk_64
        u = sample_function(lambda p: np.zeros(len(p)), grid, mask)
        with pytest.raises(SizingError):
            mollify_field(u, grid.h)

    def test_region_shrinks(self, cone_64, unit_disk_64):
        grid, mask = unit_disk_64
        out = mollify_field(cone_64, 0.1)
        assert int(out.defined.sum()) < int(cone_64.defined.sum())
        assert out.provenance == "mollified"


class TestSuperlevelSet:
    def test_radial_disk(self, cone_64, unit_disk_64):
        grid, mask = unit_disk_64
        u = cone_64.with_values(1.0 - cone_64.values)
        s = superlevel_set(u, mask, 0.5, r=1.0)
        assert abs(s.volume - math.pi / 4) < 0.02 * math.pi / 4 + 2 * grid.h

    def test_above_max_empty(self, cone_64, unit_disk_64):
        grid, mask = unit_disk_64
        s = superlevel_set(cone_64, mask, 10.0, r=0.9)
        assert s.is_empty() and s.volume == 0.0

    def test_full_clipped_ball(self, unit_disk_64):
        grid, mask = unit_disk_64
        u = sample_function(lambda p: np.zeros(len(p)), grid, mask)
        s = superlevel_set(u, mask, -1.0, r=0.7)
        geo = s.geometry()
        assert geo.gamma_bdy == 0.0
        assert abs(geo.gamma_int - 2 * math.pi * 0.7) < 0.02 * 2 * math.pi * 0.7

    def test_monotone_nesting(self, cone_64, unit_disk_64):
        grid, mask = unit_disk_64
        u = cone_64.with_values(1.0 - cone_64.values)
        outer = superlevel_set(u, mask, 0.3, r=0.9)
        inner = superlevel_set(u, mask, 0.5, r=0.7)
        assert outer.contains(inner)


class TestSetGeometry:
    def test_circle_perimeter_2pct(self):
        grid, mask = make_grid(ShapeSpec.disk((0, 0), 1.0), 128)
        u = sample_function(lambda p: 1 - np.hypot(p[:, 0], p[:, 1]), grid, mask)
        s = superlevel_set(u, mask, 0.5, r=1.0)
        assert abs(s.geometry().perimeter - math.pi) < 0.02 * math.pi

    def test_perimeter_first_order_convergence(self):
        errs = []
        for res in (32, 64, 128):
            grid, mask = make_grid(ShapeSpec.disk((0, 0), 1.0), res)
            u = sample_function(lambda p: 1 - np.hypot(p[:, 0], p[:, 1]), grid, mask)
            s = superlevel_set(u, mask, 0.5, r=1.0)
            errs.append(abs(s.geometry().perimeter - math.pi))
        assert errs[1] <= errs[0] / 2 + 1e-4
        assert errs[2] <= errs[1] / 2 + 1e-4

    def test_single_cell_diamond(self, unit_disk_64):
        grid, mask = unit_disk_64
        member = np.zeros(grid.shape, bool)
        center = tuple(e // 2 for e in grid.extents)
        member[center] = True
        s = DiscreteSet(grid=grid, member=member, mask=mask)
        assert abs(s.geometry().perimeter - 2 * math.sqrt(2) * grid.h) < 1e-12

    def test_isoperimetric_floor_on_smooth_sets(self, unit_disk_64):
        grid, mask = unit_disk_64
        u = sample_function(lambda p: 1 - np.hypot(p[:, 0], p[:, 1]), grid, mask)
        for t in (0.2, 0.4, 0.6):
            s = superlevel_set(u, mask, t, r=1.0)
            assert s.geometry().perimeter >= isoperimetric_floor(s) * (1 - TOL_ISO)

    def test_1d_geometry(self, interval_100):
        grid, mask = interval_100
        u = sample_function(lambda p: 1 - np.abs(p[:, 0]), grid, mask)
        s = superlevel_set(u, mask, 0.5, r=0.9)
        geo = s.geometry()
        assert geo.perimeter == 2.0
        assert abs(geo.volume - 1.0) <= 2 * grid.h


class TestSerialization:
    def test_round_trip_with_specials(self, unit_disk_64):
        grid, mask = unit_disk_64
        vals = np.full(grid.shape, np.nan)
        vals[mask.region] = 1.5
        idx = tuple(np.argwhere(mask.interior)[0])
        vals[idx] = NEG_INF
        u = ScalarField(grid=grid, values=vals, provenance="sampled", extended=True)
        blob = json.dumps(u.to_json())
        v = ScalarField.from_json(json.loads(blob))
        assert v.grid == u.grid
        assert np.isneginf(v.values[idx])
        both = ~np.isnan(u.values)
        assert np.array_equal(v.values[both], u.values[both])
        assert json.loads(blob)["values"].count("-inf") == 1
