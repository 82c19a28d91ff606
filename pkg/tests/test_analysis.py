import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from denstrack import _loops
from denstrack.analysis import (
    INIT_WORD, McConfig, _loglog_fit, convergence_study, fit_rate, inverse_cdf_sampler,
    mc_density, mc_terminal_states, ou_reference, weak_gap_demo,
)
from denstrack.errors import ConfigError, DomainError, ResolutionError, UnsupportedError
from denstrack.grid import (
    Bump, Cauchy, Gaussian, GridDensity, GridSpec, Uniform, gaussian_cell_masses,
    l1_distance, l1_norm,
)
from denstrack.kernel import ou_exact_law, ou_iterated_params
from denstrack.model import affine, sine_diffusion

OU = affine(0.0, -1.0, 1.0)


def em_law_on_grid(grid, n, mean0=0.0, var0=1e-4, b=-1.0, sigma=1.0, t=1.0):
    p = ou_iterated_params(b, sigma, t, n)
    masses, leaked = gaussian_cell_masses(grid, p.alpha_n * mean0,
                                          p.alpha_n ** 2 * var0 + 0.5 * p.beta_n_sq)
    return GridDensity(grid, masses / grid.cell_volume, leaked)


# -- rate fits --------------------------------------------------------------

NS = [8, 16, 32, 64, 128]


def test_fit_rate_power_laws():
    slope, r2 = fit_rate([(n, 1.0 / n) for n in NS])
    assert slope == pytest.approx(1.0, abs=1e-6) and r2 == pytest.approx(1.0)
    slope, intercept, _ = _loglog_fit(NS, [4.0 / n for n in NS])
    assert slope == pytest.approx(1.0, abs=1e-12) and intercept == pytest.approx(math.log(4), abs=1e-12)
    assert fit_rate([(n, n ** -2.0) for n in NS])[0] == pytest.approx(2.0, abs=1e-12)
    assert fit_rate([(n, 0.3) for n in NS])[0] == pytest.approx(0.0, abs=1e-12)


def test_fit_rate_drops_zero_errors():
    rows = [(4, 0.0)] + [(n, 2.0 / n) for n in NS]
    assert fit_rate(rows)[0] == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(DomainError):
        fit_rate([(8, 0.1), (16, 0.05), (32, 0.0)])


@given(st.floats(0.1, 3.0), st.floats(1e-3, 1e3))
def test_fit_rate_recovers_exponent(p, c):
    assert fit_rate([(n, c * n ** -p) for n in NS])[0] == pytest.approx(p, abs=1e-9)


# -- convergence studies ----------------------------------------------------

def test_fine_grid_study_small():
    g = GridSpec(-5, 5, 256)
    model = sine_diffusion(0.0, -1.0, 1.0, 0.5)
    table = convergence_study(model, Gaussian(0, 0.5), g, 1.0, [2, 4, 8], reference="fine-grid")
    assert [r.n for r in table.rows] == [2, 4, 8]
    assert table.strictly_decreasing
    assert all(r.error >= 0 for r in table.rows)
    assert table.config["n_ref"] == 64
    assert table.fitted_rate == pytest.approx(1.0, abs=0.2)


def test_study_reference_errors():
    g = GridSpec(-5, 5, 64)
    with pytest.raises(ConfigError):
        convergence_study(sine_diffusion(), Gaussian(0, 1), g, 1.0, [4, 8, 16])
    with pytest.raises(ConfigError):
        convergence_study(affine(0.5, -1, 1), Gaussian(0, 1), g, 1.0, [4, 8, 16])
    with pytest.raises(ConfigError):
        convergence_study(OU, Gaussian(0, 1), g, 1.0, [4, 8], reference="fine-grid", n_ref=32)
    with pytest.raises(ConfigError):
        convergence_study(OU, Gaussian(0, 1), g, 1.0, [4, 8], reference="bogus")
    with pytest.raises(ConfigError):
        convergence_study(OU, Uniform(0, 1), g, 1.0, [4, 8, 16])


def test_two_rows_give_no_rate(tmp_path):
    g = GridSpec(-6, 6, 256)
    with pytest.warns(UserWarning, match="no rate"):
        table = convergence_study(OU, Gaussian(0, 0.25), g, 1.0, [8, 16])
    assert table.fitted_rate is None and len(table.rows) == 2
    table.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "n,error,seconds" and len(lines) == 3
    table.write_sidecar(tmp_path / "t.json")
    side = json.loads((tmp_path / "t.json").read_text())
    assert side["fitted_rate"] is None and set(side["leakage"]) == {"8", "16"}


def test_ou_reference_gaussian_and_cauchy():
    g = GridSpec(-8, 8, 512)
    ref = ou_reference(Gaussian(0.5, 0.25), g, -1.0, 1.0, 1.0)
    mean, var = ou_exact_law(-1.0, 1.0, 1.0, Gaussian(0.5, 0.25))
    assert l1_norm(ref) + ref.leaked_mass == pytest.approx(1.0, abs=1e-12)
    x = g.axis_centers(0)
    assert np.sum(x * ref.values) * g.cell_volume == pytest.approx(mean, abs=1e-6)
    cref = ou_reference(Cauchy(0, 1), g, -1.0, 1.0, 1.0)
    assert np.all(cref.values >= 0)
    # the reference starts from the box-restricted Cauchy density; the contracting
    # drift keeps that mass inside, so only the initial outside mass is missing
    start_out = 1 - 2 * math.atan(8) / math.pi
    assert cref.leaked_mass == pytest.approx(start_out, abs=1e-9)
    assert l1_norm(cref) + cref.leaked_mass == pytest.approx(1.0, abs=1e-9)


# -- Monte Carlo ------------------------------------------------------------

def test_mc_config_validation():
    with pytest.raises(DomainError):
        McConfig(9_999, 10)
    with pytest.raises(DomainError):
        McConfig(10_000, 0)


def test_mc_degenerate_dynamics_is_initial_histogram():
    g = GridSpec(-1, 2, 60)
    frozen = affine(0.0, 0.0, 0.0, allow_degenerate=True)
    cfg = McConfig(20_000, 3, seed=11)
    x = np.concatenate(list(mc_terminal_states(frozen, Uniform(0.0, 1.0), 1.0, cfg, g)))
    key = _loops.seed_key(11)
    u = _loops.uniform_words(key, 0, 20_000, INIT_WORD)
    assert np.array_equal(x[:, 0], u)
    dens = mc_density(frozen, Uniform(0.0, 1.0), 1.0, cfg, g)
    counts, _ = np.histogram(u, bins=g.axis_edges(0))
    assert np.allclose(dens.values * cfg.paths * g.cell_volume, counts)


def test_mc_ou_moments():
    cfg = McConfig(400_000, 64, seed=3)
    x = np.concatenate(list(mc_terminal_states(OU, Gaussian(0.0, 1e-4), 1.0, cfg)))[:, 0]
    p = ou_iterated_params(-1.0, 1.0, 1.0, 64)
    em_var = 1e-4 * p.alpha_n ** 2 + 0.5 * p.beta_n_sq
    se_mean = math.sqrt(em_var / cfg.paths)
    se_var = em_var * math.sqrt(2.0 / (cfg.paths - 1))
    assert abs(x.mean()) < 3 * se_mean
    assert abs(x.var(ddof=1) - em_var) < 3 * se_var
    exact_var = (1 - math.exp(-2)) / 2 + 1e-4 * math.exp(-2)
    assert abs(x.var(ddof=1) - exact_var) < 3 * se_var + abs(em_var - exact_var)
    assert exact_var == pytest.approx(0.432, abs=1e-3)


def test_mc_determinism_and_accounting():
    g = GridSpec(-1.0, 1.0, 40)
    cfg = McConfig(30_000, 8, seed=5, block=7_000)
    a = mc_density(OU, Gaussian(0, 0.25), 1.0, cfg, g)
    b = mc_density(OU, Gaussian(0, 0.25), 1.0, McConfig(30_000, 8, seed=5, block=30_000), g)
    c = mc_density(OU, Gaussian(0, 0.25), 1.0, McConfig(30_000, 8, seed=6), g)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    assert a.leaked_mass > 0.05
    assert l1_norm(a) + a.leaked_mass == pytest.approx(1.0, abs=1e-12)


def test_mc_error_shrinks_with_paths():
    g = GridSpec(-3, 3, 60)
    ref = em_law_on_grid(g, 16)
    wins = 0
    for seed in range(10):
        small = mc_density(OU, Gaussian(0, 1e-4), 1.0, McConfig(10_000, 16, seed), g)
        big = mc_density(OU, Gaussian(0, 1e-4), 1.0, McConfig(1_000_000, 16, seed + 100), g)
        wins += l1_distance(big, ref) < l1_distance(small, ref)
    assert wins >= 6


def test_samplers():
    u = np.array([[0.5], [0.75], [0.25]])
    cauchy = inverse_cdf_sampler(Cauchy(1.0, 2.0))(u)[:, 0]
    assert cauchy == pytest.approx([1.0, 3.0, -1.0])
    gauss = inverse_cdf_sampler(Gaussian(-1.0, 4.0))(u)[:, 0]
    assert gauss[0] == pytest.approx(-1.0) and gauss[1] == pytest.approx(-1.0 + 2 * 0.6744897501960817)
    g = GridSpec(-3, 3, 300)
    s = inverse_cdf_sampler(Bump(0.0, 1.0), g)
    rng = np.random.default_rng(0)
    pts = s(rng.random((50_000, s.n_uniforms)))[:, 0]
    assert np.all(np.abs(pts) <= 1.0 + g.spacing[0])
    assert abs(pts.mean()) < 0.01
    with pytest.raises(UnsupportedError):
        inverse_cdf_sampler(Bump(0.0, 1.0))


# -- weak versus L1 ---------------------------------------------------------

def test_weak_gap_values():
    one = weak_gap_demo(1)
    assert one.l1_gap == pytest.approx(2 / math.pi, abs=1e-4)
    assert one.charfn_gaps[1] == pytest.approx(0.5, abs=1e-4)
    g8, g64 = weak_gap_demo(8), weak_gap_demo(64)
    assert g64.charfn_gaps[0] < g8.charfn_gaps[0]
    assert g8.l1_gap == pytest.approx(2 / math.pi, abs=1e-4)


def test_weak_gap_resolution_errors():
    with pytest.raises(ResolutionError):
        weak_gap_demo(4, GridSpec(-0.5, 1.5, 1024))
    with pytest.raises(ResolutionError):
        weak_gap_demo(1, GridSpec(0.1, 1.5, 4096))
    with pytest.raises(ResolutionError):
        weak_gap_demo(1, GridSpec(-0.5003, 1.5, 2048))
