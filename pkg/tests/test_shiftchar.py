import csv

import numpy as np
import pytest

from proadaptive.dataset import SimConfig, generate_simulated
from proadaptive.partition import batch_by_quarter
from proadaptive.shiftchar import (BatchPdf, conditional_pdf_concat, conditional_pdfs, distance_matrix, estimate_pdf,
                                   igt_project, js_distance, prevalence_series, write_prevalence,
                                   write_projection)


@pytest.fixture(scope="module")
def sim_batches():
    return batch_by_quarter(generate_simulated(SimConfig(samples_per_quarter=2000, seed=0)))


# --- prevalence ------------------------------------------------------------

def test_prevalence_trivial(tmp_path):
    prev = prevalence_series([np.ones(5), np.array([], dtype=int), np.array([0, 1])])
    assert prev[0] == 1.0 and np.isnan(prev[1]) and prev[2] == 0.5
    write_prevalence(prev, tmp_path / "p.csv")
    rows = list(csv.reader(open(tmp_path / "p.csv")))
    assert rows[0] == ["batch", "p_positive"] and rows[2] == ["1", ""]


def test_prevalence_follows_generator_prior(sim_batches):
    cfg = SimConfig()
    prev = prevalence_series(sim_batches)
    expected = cfg.prior(np.arange(16) / 15)
    se = np.sqrt(expected * (1 - expected) / 2000)
    assert np.all(np.abs(prev - expected) < 4 * se)
    assert np.polyfit(np.arange(16), prev, 1)[0] > 0


# --- densities -------------------------------------------------------------

def test_pdf_normalization_and_identity():
    rng = np.random.default_rng(0)
    vals = [rng.normal(size=300), rng.normal(1, 2, size=500)]
    pdfs = estimate_pdf(vals + [vals[0].copy()])
    for p in pdfs:
        assert abs(p.masses.sum() - 1) < 1e-12 and np.all(p.masses > 0)
        assert np.all(np.diff(p.bin_edges) > 0) and len(p.masses) == 50
    assert np.array_equal(pdfs[0].masses, pdfs[2].masses)


def test_pdf_constant_pool_error():
    with pytest.raises(ValueError, match="constant"):
        estimate_pdf([np.ones(4), np.ones(3)])


def test_empty_batch_is_uniform_and_flagged():
    pdfs = estimate_pdf([np.array([0.0, 1.0]), np.array([])], bins=4)
    assert pdfs[1].degenerate and np.allclose(pdfs[1].masses, 0.25)


def test_conditional_shape_and_mirror():
    rng = np.random.default_rng(1)
    n = 10_000
    x = np.r_[rng.normal(2, 1, n), rng.normal(-2, 1, n)]
    y = np.r_[np.zeros(n, int), np.ones(n, int)]
    edges = np.linspace(-7, 7, 51)
    pdf = conditional_pdf_concat(x, y, edges)
    assert pdf.masses.shape == (100,) and abs(pdf.masses.sum() - 1) < 1e-12 and not pdf.degenerate
    p0, p1 = pdf.masses[:50] * 2, pdf.masses[50:] * 2
    # oracle: the generator is symmetric under x -> -x with the classes swapped
    assert js_distance(p0[::-1], p1) < 0.05


def test_conditional_missing_class_flagged():
    pdf = conditional_pdf_concat([0.0, 1.0, 2.0], [0, 0, 0], np.linspace(0, 2, 5))
    assert pdf.degenerate and np.allclose(pdf.masses[4:], 0.125)


# --- Jensen-Shannon --------------------------------------------------------

def random_pmf(rng, k=20):
    p = rng.random(k) ** 3
    p[rng.random(k) < 0.2] = 0
    p[0] += 1e-3
    return p / p.sum()


def test_js_identity_symmetry_disjoint():
    rng = np.random.default_rng(2)
    for _ in range(100):
        p, q = random_pmf(rng), random_pmf(rng)
        assert js_distance(p, p) == 0.0
        assert abs(js_distance(p, q) - js_distance(q, p)) <= 1e-15
        assert 0 <= js_distance(p, q) <= 1
    assert js_distance([0.5, 0.5, 0, 0], [0, 0, 0.3, 0.7]) == 1.0


def test_js_triangle_inequality():
    rng = np.random.default_rng(3)
    for _ in range(100):
        p, q, r = (random_pmf(rng) for _ in range(3))
        assert js_distance(p, r) <= js_distance(p, q) + js_distance(q, r) + 1e-12


def test_js_against_scipy_entropy():
    from scipy.stats import entropy

    rng = np.random.default_rng(4)
    p, q = random_pmf(rng), random_pmf(rng)
    m = (p + q) / 2
    ref = np.sqrt(0.5 * entropy(p, m, base=2) + 0.5 * entropy(q, m, base=2))
    assert js_distance(p, q) == pytest.approx(ref, abs=1e-14)


def test_js_mismatch_errors():
    a = BatchPdf(0, np.linspace(0, 1, 3), np.array([0.5, 0.5]))
    b = BatchPdf(1, np.linspace(0, 2, 3), np.array([0.5, 0.5]))
    with pytest.raises(ValueError, match="different bins"):
        js_distance(a, b)
    with pytest.raises(ValueError):
        js_distance([1.0], [0.5, 0.5])


def test_js_gaussian_sampling_noise():
    # oracle: repeated simulation of two unit-Gaussian batches of 10^4, plus the small-sample
    # expansion E[d] ~ sqrt(K_eff / (4 n ln 2)) with K_eff the number of occupied bins minus one
    rng = np.random.default_rng(5)
    n, d = 10_000, []
    for _ in range(40):
        pdfs = estimate_pdf([rng.normal(size=n), rng.normal(size=n)])
        d.append(js_distance(*pdfs))
        k_eff = np.sum(pdfs[0].masses + pdfs[1].masses > 1e-5) - 1
    assert np.mean(d) < 0.05
    assert np.mean(d) == pytest.approx(np.sqrt(k_eff / (4 * n * np.log(2))), rel=0.15)


def test_distance_matrix_properties(sim_batches):
    vals = [b.X[:, 0] for b in sim_batches]
    D = distance_matrix(estimate_pdf(vals))
    assert D.shape == (16, 16) and np.array_equal(D, D.T)
    assert np.all(np.diag(D) == 0) and D.min() >= 0 and D.max() <= 1


# --- MDS -------------------------------------------------------------------

def test_three_point_line():
    D = np.array([[0, 1, 2], [1, 0, 1], [2, 1, 0]], dtype=float)
    proj = igt_project(D, 2)
    # oracle: double-centre by hand, leading eigenpair of [[4/3,0,-4/3],[0,0,0],[-4/3,0,4/3]] is (8/3, (1,0,-1)/sqrt2)
    assert np.allclose(proj.coordinates[:, 0], [1, 0, -1], atol=1e-12)
    assert np.allclose(proj.coordinates[:, 1], 0, atol=1e-7)
    assert proj.eigenvalues[0] == pytest.approx(2.0)


def test_all_zero_distances():
    proj = igt_project(np.zeros((4, 4)), 2)
    assert np.all(proj.coordinates == 0)


def test_planar_round_trip():
    rng = np.random.default_rng(6)
    for dims in (2, 3):
        pts = rng.normal(size=(12, dims))
        D = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        proj = igt_project(D, dims)
        E = np.linalg.norm(proj.coordinates[:, None] - proj.coordinates[None], axis=-1)
        assert np.abs(E - D).max() < 1e-9
        assert np.abs(proj.coordinates.mean(axis=0)).max() < 1e-9


def test_sign_convention_deterministic():
    rng = np.random.default_rng(7)
    pts = rng.normal(size=(6, 2))
    D = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    a, b = igt_project(D), igt_project(D.copy())
    assert np.array_equal(a.coordinates, b.coordinates)
    for k in range(2):
        col = a.coordinates[:, k]
        assert col[np.flatnonzero(np.abs(col) > 1e-12)[0]] > 0


def test_mds_errors():
    with pytest.raises(ValueError, match="at least 3"):
        igt_project(np.zeros((2, 2)), 2)
    with pytest.raises(ValueError):
        igt_project(np.array([[0, 1, 1], [2, 0, 1], [1, 1, 0]], dtype=float))


def test_simulated_marginal_returns(sim_batches):
    # the class-mixture marginal is mirrored in time, so the last quarter resembles the first
    vals = [b.X[:, 0] for b in sim_batches]
    proj = igt_project(distance_matrix(estimate_pdf(vals)), 2)
    assert proj.embedded_distance(0, 15) < proj.embedded_distance(0, 7)


def test_simulated_conditionals_swap(sim_batches):
    vals, labels = [b.X[:, 0] for b in sim_batches], [b.y for b in sim_batches]
    D = distance_matrix(conditional_pdfs(vals, labels))
    # the class means cross, so conditionals drift monotonically away from the first quarter
    assert D[0, 15] > D[0, 7] > D[0, 1]


def test_write_projection(tmp_path):
    proj = igt_project(np.array([[0, 1, 2], [1, 0, 1], [2, 1, 0]], dtype=float))
    write_projection(proj, ["2020-Q1", "2020-Q2", "2020-Q3"], tmp_path / "p.csv")
    rows = list(csv.reader(open(tmp_path / "p.csv")))
    assert rows[0] == ["batch_index", "period_label", "dim1", "dim2"] and len(rows) == 4
