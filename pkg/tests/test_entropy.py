import math

import numpy as np
import pytest
import torch

from lvcodec.entropy import (
    FactorizedPrior,
    LIKELIHOOD_FLOOR,
    build_gaussian_tables,
    gaussian_interval_likelihood,
    likelihood_to_bits,
    lower_bound,
    make_scale_table,
    quantize_pmf_to_cdf,
    snap_scale_indices,
)
from lvcodec.errors import NumericError
from lvcodec.rangecoder import TOTAL


def phi(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


class TestScaleTable:
    def test_endpoints_and_monotone(self):
        t = make_scale_table()
        assert t[0] == 0.11 and t[-1] == 256.0 and len(t) == 64
        assert np.all(np.diff(t) > 0)

    def test_snap_rounds_up(self):
        table = torch.tensor([0.11, 0.2, 0.5, 1.0])
        scales = torch.tensor([0.11, 0.12, 0.5, 0.7, 99.0])
        idx = snap_scale_indices(scales, table)
        assert idx.tolist() == [0, 1, 2, 3, 3]


class TestGaussianLikelihood:
    def test_single_symbol_oracle(self):
        # oracle: error-function evaluation of the interval mass
        lik = gaussian_interval_likelihood(torch.zeros(1), torch.ones(1))
        expected = phi(0.5) - phi(-0.5)
        assert lik.item() == pytest.approx(expected, rel=1e-6)
        bits = likelihood_to_bits(lik)
        assert bits.item() == pytest.approx(-math.log2(expected), rel=1e-6)

    def test_bits_monotone_in_scale(self):
        scales = torch.linspace(0.11, 200.0, 50)
        lik = gaussian_interval_likelihood(torch.zeros(50), scales)
        bits = -torch.log2(lik.clamp_min(LIKELIHOOD_FLOOR))
        assert (bits[1:] >= bits[:-1] - 1e-6).all()

    def test_likelihood_floor_caps_bits(self):
        lik = gaussian_interval_likelihood(torch.tensor([1e6]), torch.tensor([0.11]))
        bits = likelihood_to_bits(lik)
        assert bits.item() <= 24.0 + 1e-6

    def test_nonfinite_rejected(self):
        with pytest.raises(NumericError):
            likelihood_to_bits(torch.tensor([float("nan")]))


class TestLowerBound:
    def test_gradient_pass_through(self):
        x = torch.tensor([0.5, 2.0], requires_grad=True)
        y = lower_bound(x, 1.0)
        assert y.tolist() == [1.0, 2.0]
        y.sum().backward()
        # below the bound, only gradients that push the value up pass
        assert x.grad.tolist() == [0.0, 1.0]
        x2 = torch.tensor([0.5], requires_grad=True)
        (-lower_bound(x2, 1.0)).sum().backward()
        assert x2.grad.tolist() == [-1.0]


class TestPmfQuantization:
    def test_uniform_four_is_exact_quarters(self):
        table = quantize_pmf_to_cdf(np.full(4, 0.25))
        assert table.cdf == (0, 16384, 32768, 49152, 65536)

    def test_edges_and_total(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            pmf = rng.random(rng.integers(1, 200)) + 1e-9
            t = quantize_pmf_to_cdf(pmf)
            assert t.cdf[0] == 0 and t.cdf[-1] == TOTAL
            assert all(b > a for a, b in zip(t.cdf, t.cdf[1:]))

    def test_tiny_masses_keep_frequency_one(self):
        pmf = np.array([1.0, 1e-15, 1e-15])
        t = quantize_pmf_to_cdf(pmf)
        freqs = np.diff(t.cdf)
        assert freqs[1] == 1 and freqs[2] == 1
        assert freqs.sum() == TOTAL


class TestGaussianTables:
    def test_smallest_scale_concentrates_on_zero(self):
        tables = build_gaussian_tables([0.11])
        t = tables[0]
        freqs = np.diff(t.cdf)
        zero_mass = freqs[-t.offset] / TOTAL
        assert zero_mass >= 0.99

    def test_supports_scale_with_sigma(self):
        tables = build_gaussian_tables(make_scale_table())
        widths = [t.num_symbols for t in tables]
        assert all(b >= a for a, b in zip(widths, widths[1:]))
        assert widths[0] == 3  # +-1 around zero at the 0.11 floor
        # widest support covers ~6.1 sigma at scale 256
        assert widths[-1] >= 2 * int(256 * 6) + 1

    def test_every_table_normalized(self):
        for t in build_gaussian_tables(make_scale_table()):
            assert t.cdf[0] == 0 and t.cdf[-1] == TOTAL


class TestFactorizedPrior:
    def test_likelihood_shape_and_range(self):
        torch.manual_seed(0)
        prior = FactorizedPrior(8)
        z = torch.randn(2, 8, 4, 4)
        lik = prior.likelihood(z)
        assert lik.shape == z.shape
        assert (lik > 0).all() and (lik <= 1).all()

    def test_likelihood_sums_to_one_over_integers(self):
        torch.manual_seed(1)
        prior = FactorizedPrior(4)
        grid = torch.arange(-512, 513, dtype=torch.float32)
        z = grid.view(1, 1, 1, -1).repeat(1, 4, 1, 1)
        total = prior.likelihood(z).sum(dim=-1)
        assert torch.allclose(total, torch.ones_like(total), atol=1e-4)

    def test_tables_match_likelihood(self):
        torch.manual_seed(2)
        prior = FactorizedPrior(6)
        tables = prior.build_tables()
        assert len(tables) == 6
        for c, t in enumerate(tables):
            assert t.min_symbol <= -1 and t.max_symbol >= 1
            # quantized mass at 0 close to the continuous interval mass
            z = torch.zeros(1, 6, 1, 1)
            lik0 = float(prior.likelihood(z)[0, c])
            freq0 = (t.cdf[-t.offset + 1] - t.cdf[-t.offset]) / TOTAL
            assert freq0 == pytest.approx(lik0, abs=2e-3)

    def test_gradients_flow(self):
        torch.manual_seed(3)
        prior = FactorizedPrior(3)
        z = torch.randn(1, 3, 2, 2, requires_grad=True)
        bits = likelihood_to_bits(prior.likelihood(z))
        bits.backward()
        assert z.grad is not None and torch.isfinite(z.grad).all()
