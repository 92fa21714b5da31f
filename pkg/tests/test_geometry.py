"""Geometry: membership, lattice windows, set covariance, subsample enumeration."""

import math

import numpy as np
import pytest

from latblock import (
    Region,
    SubsampleSpec,
    Template,
    contains,
    enumerate_nol,
    enumerate_ol,
    lattice_sites,
    overlap_count,
    parse_template,
    set_covariance,
    set_covariance_exact,
)
from latblock.errors import (
    ConfigError,
    DimensionMismatch,
    EmptySubsampleSet,
    NonIntegerScaleWarning,
)
from latblock.geometry import nol_subregion_windows


def all_templates_2d():
    return [
        Template.hypercube(2),
        Template.rotated_rectangle(0.7854, 0.7071, 0.7071),
        Template.circle(0.5),
        Template.right_triangle(),
        Template.isoceles_triangle(),
        Template.trapezoid(0.3, 0.6),
        Template.regular_hexagon(0.5),
        Template.parallelogram(1.2, 0.6, 0.5),
    ]


def all_templates_3d():
    return [Template.sphere(0.5), Template.cylinder(0.4, 0.9)]


# ---------------------------------------------------------------------------
# membership
# ---------------------------------------------------------------------------


def test_hypercube_half_open():
    t = Template.hypercube(2)
    assert contains(t, (0.5, 0.5))
    assert not contains(t, (-0.5, 0.0))
    assert contains(t, (0.0, 0.0))


def test_circle_closed_boundary():
    t = Template.circle(0.5)
    assert contains(t, (0.5, 0.0))
    assert not contains(t, (0.5000001, 0.0))


def test_right_triangle_above_hypotenuse():
    t = Template.right_triangle()
    # hypotenuse is x + y = 0; (0.3, 0.3) lies above it
    assert not contains(t, (0.3, 0.3))
    assert contains(t, (0.3, -0.3))
    assert contains(t, (0.0, 0.0))


def test_dimension_mismatch_rejected():
    t = Template.hypercube(2)
    with pytest.raises(DimensionMismatch):
        contains(t, (0.1, 0.1, 0.1))


def test_parameter_validation():
    with pytest.raises(ConfigError):
        Template.circle(0.6)
    with pytest.raises(ConfigError):
        Template.regular_hexagon(0.51)
    with pytest.raises(ConfigError):
        Template.trapezoid(0.6, 0.3)
    with pytest.raises(ConfigError):
        Template.parallelogram(0.0, 0.5, 0.5)
    with pytest.raises(ConfigError):
        Template.rotated_rectangle(0.3, 1.2, 0.4)  # does not fit the unit cell


@pytest.mark.parametrize("template", all_templates_2d() + all_templates_3d())
def test_templates_fit_unit_cell_and_cover_origin(template):
    lo, hi = template.geom.bbox()
    assert np.all(lo >= -0.5 - 1e-9) and np.all(hi <= 0.5 + 1e-9)
    # origin belongs to the closure for every registered shape
    assert template.geom.contains(np.zeros((1, template.d)))[0] or contains(
        template, np.zeros(template.d)
    )


def test_template_grammar_round_trip():
    for spec in [
        "hypercube:d=2",
        "circle:r=0.5",
        "rotrect:theta=0.7854,l1=0.7071,l2=0.7071",
        "hex:l=0.5",
        "trapezoid:b1=0.3,b2=0.6",
        "sphere:r=0.5",
        "cylinder:r=0.4,h=0.9",
        "righttri",
        "isotri",
        "parallelogram:gamma=1.2,l1=0.6,l2=0.5",
    ]:
        t = parse_template(spec)
        again = parse_template(t.spec_string())
        assert again.kind == t.kind
        assert again.volume() == pytest.approx(t.volume(), rel=1e-12)
    with pytest.raises(ConfigError):
        parse_template("pentagon:n=5")
    with pytest.raises(ConfigError):
        parse_template("circle:radius=0.5")


# ---------------------------------------------------------------------------
# lattice windows
# ---------------------------------------------------------------------------


def test_lattice_sites_hypercube_10x10():
    w = lattice_sites(Region(Template.hypercube(2), (10, 10)))
    assert w.n_sites == 100
    assert w.sites.min() == -4 and w.sites.max() == 5


def test_lattice_sites_circle_scale_2():
    w = lattice_sites(Region(Template.circle(0.5), (2, 2)))
    assert w.n_sites == 5
    assert sorted(map(tuple, w.sites.tolist())) == [
        (-1, 0),
        (0, -1),
        (0, 0),
        (0, 1),
        (1, 0),
    ]


@pytest.mark.parametrize("radius", [5, 13, 20, 25])
def test_lattice_sites_pythagorean_boundaries_exact(radius):
    # boundary sites like (5, 12) on the radius-13 disk must not be lost to
    # division rounding
    w = lattice_sites(Region(Template.circle(0.5), (2 * radius, 2 * radius)))
    exact = sum(
        1
        for x in range(-radius, radius + 1)
        for y in range(-radius, radius + 1)
        if x * x + y * y <= radius * radius
    )
    assert w.n_sites == exact


def test_lattice_sites_lex_order_and_distinct():
    w = lattice_sites(Region(Template.circle(0.5), (9, 9)))
    rows = list(map(tuple, w.sites.tolist()))
    assert rows == sorted(rows)
    assert len(set(rows)) == len(rows)


@pytest.mark.parametrize("template", all_templates_2d())
def test_site_count_density_limit_2d(template):
    vol = template.volume()
    for lam in (16, 48):
        w = lattice_sites(Region(template, (lam,) * 2))
        assert w.n_sites / lam**2 == pytest.approx(vol, abs=4.0 / lam)


@pytest.mark.parametrize("template", all_templates_2d() + all_templates_3d())
def test_boundary_error_stays_bounded(template):
    d = template.d
    vol = template.volume()
    lams = (8, 16, 32, 64) if d == 2 else (8, 16, 32)
    ratios = []
    for lam in lams:
        w = lattice_sites(Region(template, (lam,) * d))
        ratios.append(abs(w.n_sites - vol * lam**d) / lam ** (d - 1))
    # boundary discrepancy normalized by surface order stays bounded
    assert max(ratios) < 8.0


def test_lattice_shift_honored():
    w = lattice_sites(Region(Template.hypercube(1), (4,), (0.5,)))
    # sites z with z + 1/2 in (-2, 2]: z in {-2, -1, 0, 1}
    assert w.sites.ravel().tolist() == [-2, -1, 0, 1]


# ---------------------------------------------------------------------------
# set covariance
# ---------------------------------------------------------------------------


def test_set_covariance_hypercube_values():
    t = Template.hypercube(2)
    assert set_covariance(t, (0.0, 0.0)) == 1.0
    assert set_covariance(t, (0.5, 0.0)) == 0.5
    assert set_covariance(t, (0.3, 0.2)) == pytest.approx(0.7 * 0.8, rel=1e-15)


def test_set_covariance_circle_lens_oracle():
    # lens area 2 r^2 acos(t/2r) - (t/2) sqrt(4r^2 - t^2) at r=1/2, t=1/2
    r, t = 0.5, 0.5
    lens = 2 * r * r * math.acos(t / (2 * r)) - 0.5 * t * math.sqrt(4 * r * r - t * t)
    assert lens == pytest.approx(0.30709242465, abs=1e-9)
    circ = Template.circle(0.5)
    assert set_covariance_exact(circ, (0.5, 0.0)) == pytest.approx(lens, rel=1e-14)
    quad = set_covariance(circ, (0.5, 0.0))
    assert quad == pytest.approx(lens, abs=2e-3)


def test_set_covariance_sphere_matches_quadrature():
    sph = Template.sphere(0.5)
    exact = set_covariance_exact(sph, (0.3, 0.1, 0.2))
    quad = set_covariance(sph, (0.3, 0.1, 0.2))
    assert quad == pytest.approx(exact, abs=5e-3)


@pytest.mark.parametrize("template", all_templates_2d() + all_templates_3d())
def test_set_covariance_properties(template):
    rng = np.random.default_rng(0)
    d = template.d
    vol = template.volume()
    diam = template.diameter()
    for _ in range(20):
        x = rng.uniform(-1, 1, size=d)
        g = set_covariance_exact(template, x)
        g_neg = set_covariance_exact(template, -x)
        assert g == pytest.approx(g_neg, abs=1e-12)
        assert -1e-12 <= g <= vol + 1e-12
    far = np.zeros(d)
    far[0] = diam + 0.01
    assert set_covariance_exact(template, far) == 0.0
    assert set_covariance_exact(template, np.zeros(d)) == pytest.approx(vol, rel=1e-12)


# ---------------------------------------------------------------------------
# overlap counts
# ---------------------------------------------------------------------------


def test_overlap_count_examples():
    t = Template.hypercube(2)
    assert overlap_count(t, 3, (0, 0)) == 9
    assert overlap_count(t, 3, (1, 0)) == 6
    assert overlap_count(t, 3, (4, 0)) == 0


def test_overlap_count_far_translate_every_shape():
    for template in all_templates_2d():
        k = int(math.ceil(4 * template.diameter())) + 1
        assert overlap_count(template, 4, (k, 0)) == 0


def test_overlap_count_symmetric_and_bounded():
    t = Template.circle(0.5)
    n = overlap_count(t, 5, (0, 0))
    for k in [(1, 0), (1, 1), (2, 1), (0, 3)]:
        c = overlap_count(t, 5, k)
        assert c == overlap_count(t, 5, tuple(-x for x in k))
        assert c <= n


def test_overlap_count_monotone_hypercube():
    t = Template.hypercube(2)
    prev = overlap_count(t, 6, (0, 0))
    for k1 in range(1, 7):
        cur = overlap_count(t, 6, (k1, 0))
        assert cur <= prev
        prev = cur


# ---------------------------------------------------------------------------
# subsample enumeration
# ---------------------------------------------------------------------------


def test_enumerate_ol_hypercube_examples():
    reg = Region(Template.hypercube(2), (10, 10))
    idx = enumerate_ol(reg, SubsampleSpec(Template.hypercube(2), 4.0, "ol"))
    assert idx.n_subsamples == 49
    assert idx.offsets.min() == -3 and idx.offsets.max() == 3
    assert int(idx.counts[0]) == 16

    whole = enumerate_ol(reg, SubsampleSpec(Template.hypercube(2), 10.0, "ol"))
    assert whole.n_subsamples == 1
    assert whole.offsets.tolist() == [[0, 0]]


def test_enumerate_ol_origin_member():
    reg = Region(Template.circle(0.5), (18, 18))
    idx = enumerate_ol(reg, SubsampleSpec(Template.circle(0.5), 6.0, "ol"))
    assert [0, 0] in idx.offsets.tolist()


def test_enumerate_ol_density_limit():
    t = Template.circle(0.5)
    errs = []
    for lam in (24, 48, 96):
        idx = enumerate_ol(Region(t, (lam, lam)), SubsampleSpec(t, 4.0, "ol"))
        errs.append(abs(idx.n_subsamples / lam**2 - t.volume()))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.09


def test_enumerate_nol_hypercube_examples():
    reg = Region(Template.hypercube(2), (10, 10))
    idx3 = enumerate_nol(reg, SubsampleSpec(Template.hypercube(2), 3.0, "nol"))
    assert idx3.n_subsamples == 9
    assert idx3.offsets.min() == -1 and idx3.offsets.max() == 1
    idx4 = enumerate_nol(reg, SubsampleSpec(Template.hypercube(2), 4.0, "nol"))
    assert idx4.n_subsamples == 1


def test_enumerate_nol_equal_counts_integer_scale():
    reg = Region(Template.hypercube(2), (14, 18))
    idx = enumerate_nol(reg, SubsampleSpec(Template.hypercube(2), 3.0, "nol"))
    assert np.all(idx.counts == idx.counts[0])
    assert int(idx.counts[0]) == 9


def test_enumerate_nol_non_integer_scale_warns():
    reg = Region(Template.hypercube(2), (12, 12))
    with pytest.warns(NonIntegerScaleWarning):
        idx = enumerate_nol(reg, SubsampleSpec(Template.hypercube(2), 2.5, "nol"))
    assert idx.n_subsamples >= 2


def test_enumeration_pure_and_deterministic():
    reg = Region(Template.regular_hexagon(0.5), (20, 20))
    spec = SubsampleSpec(Template.circle(0.5), 4.0, "ol")
    a = enumerate_ol(reg, spec)
    b = enumerate_ol(reg, spec)
    assert np.array_equal(a.offsets, b.offsets)
    assert np.array_equal(a.counts, b.counts)


@pytest.mark.parametrize(
    "region_t,sub_t",
    [
        (Template.hypercube(2), Template.circle(0.5)),
        (Template.circle(0.5), Template.hypercube(2)),
        (Template.regular_hexagon(0.5), Template.regular_hexagon(0.5)),
        (Template.right_triangle(), Template.right_triangle()),
    ],
)
def test_ol_offsets_site_containment(region_t, sub_t):
    reg = Region(region_t, (16, 16))
    window = set(map(tuple, lattice_sites(reg).sites.tolist()))
    spec = SubsampleSpec(sub_t, 4.0, "ol")
    idx = enumerate_ol(reg, spec)
    base = lattice_sites(Region(sub_t, (4.0, 4.0))).sites
    for off in idx.offsets:
        for s in base:
            assert tuple((off + s).tolist()) in window


def test_nol_subregions_inside_region():
    reg = Region(Template.circle(0.5), (18, 18))
    spec = SubsampleSpec(Template.circle(0.5), 4.0, "nol")
    idx = enumerate_nol(reg, spec)
    window = set(map(tuple, lattice_sites(reg).sites.tolist()))
    for w in nol_subregion_windows(reg, spec, idx.offsets):
        for s in w.sites:
            assert tuple(s.tolist()) in window


def test_empty_subsample_set():
    reg = Region(Template.hypercube(2), (4, 4))
    with pytest.raises(EmptySubsampleSet):
        enumerate_ol(reg, SubsampleSpec(Template.hypercube(2), 5.0, "ol"))
