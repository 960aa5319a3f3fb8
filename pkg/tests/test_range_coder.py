#!/usr/bin/env python3
"""
Unit Tests for the range coder
"I found a moon rock in my nose!" - Ralph Wiggum
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from entropy_model import (
    CdfTable,
    GaussianParams,
    build_cdf_tables,
    clamp_to_tables,
    round_half_away,
    table_rate_bits,
)
from errors import ContractError, DecodeError, SymbolOutOfRangeError
from range_coder import RangeEncoder, decode_symbols, encode_symbols
from tensor import Tensor


def random_stream(n, seed, precision=16):
    """Tables from random Gaussians plus symbols drawn from them"""
    rng = np.random.default_rng(seed)
    mu = rng.normal(scale=3.0, size=n)
    sigma = rng.uniform(0.05, 8.0, size=n)
    table = build_cdf_tables(GaussianParams(mu=Tensor(mu), sigma=Tensor(sigma)), precision=precision)
    symbols, _ = clamp_to_tables(round_half_away(mu + sigma * rng.normal(size=n)), table)
    return symbols, table


def rows(table, start, stop):
    """Tables start .. stop-1 as a table of their own"""
    return CdfTable(
        lo=table.lo[start:stop], sizes=table.sizes[start:stop], cdf=table.cdf[start:stop],
        precision=table.precision, shape=(stop - start,),
    )


class TestRalphWiggumRoundTrip:
    """
    Lossless coding
    "I'm learnding!" - Ralph
    """

    @pytest.mark.parametrize("seed", range(6))
    def test_random_round_trip_unpossible(self, seed):
        """Test decode(encode(s)) == s - That's unpossible!"""
        symbols, table = random_stream(400, seed)
        data = encode_symbols(symbols, table)
        np.testing.assert_array_equal(decode_symbols(data, table, len(symbols)), symbols)

    @pytest.mark.slow
    @pytest.mark.parametrize("seed", range(100, 150))
    def test_many_round_trips_wookie(self, seed):
        """Test a larger batch of random streams - I bent my Wookie!"""
        symbols, table = random_stream(1500, seed, precision=int(8 + seed % 9))
        data = encode_symbols(symbols, table)
        np.testing.assert_array_equal(decode_symbols(data, table, len(symbols)), symbols)

    @pytest.mark.parametrize("streams", [2_000, pytest.param(100_000, marks=pytest.mark.slow)])
    def test_short_random_streams_idaho(self, streams):
        """Test many short streams under random tables and precisions - I'm Idaho!"""
        rng = np.random.default_rng(streams)
        remaining = streams
        while remaining:
            batch = min(remaining, 2_000)
            lengths = rng.integers(1, 13, size=batch)
            total = int(lengths.sum())
            precision = int(rng.integers(8, 25))
            mu = rng.normal(scale=5.0, size=total)
            sigma = np.exp(rng.uniform(np.log(0.05), np.log(40.0), size=total))
            table = build_cdf_tables(GaussianParams(mu=Tensor(mu), sigma=Tensor(sigma)), precision=precision)
            # half the symbols anywhere in their window, half from the model
            uniform = table.lo + (rng.uniform(size=total) * table.sizes).astype(np.int64)
            drawn, _ = clamp_to_tables(round_half_away(mu + sigma * rng.normal(size=total)), table)
            symbols = np.where(rng.uniform(size=total) < 0.5, uniform, drawn)

            start = 0
            for length in lengths.tolist():
                part = rows(table, start, start + length)
                stream = symbols[start:start + length]
                decoded = decode_symbols(encode_symbols(stream, part), part, length)
                assert np.array_equal(decoded, stream), (precision, start, length)
                start += length
            remaining -= batch

    @pytest.mark.parametrize("precision", [8, 12, 24])
    def test_precisions_learnding(self, precision):
        """Test the edges of the supported precisions - I'm learnding!"""
        symbols, table = random_stream(300, 7, precision=precision)
        data = encode_symbols(symbols, table)
        np.testing.assert_array_equal(decode_symbols(data, table, len(symbols)), symbols)

    def test_empty_stream_banana(self):
        """Test zero symbols encode and decode cleanly - Go banana!"""
        _, table = random_stream(4, 0)
        data = encode_symbols([], table)
        assert decode_symbols(data, table, 0).shape == (0,)

    def test_certain_symbols_cost_nothing_idaho(self):
        """Test near-deterministic symbols compress to almost nothing - I'm Idaho!"""
        n = 2000
        table = build_cdf_tables(GaussianParams(mu=Tensor(np.zeros(n)), sigma=Tensor(np.full(n, 0.05))))
        data = encode_symbols(np.zeros(n, dtype=np.int64), table)
        assert len(data) < 16
        np.testing.assert_array_equal(decode_symbols(data, table, n), np.zeros(n))

    def test_encoding_is_deterministic_viking(self):
        """Test identical input gives identical bytes - Sleep! That's where I'm a Viking!"""
        symbols, table = random_stream(200, 3)
        assert encode_symbols(symbols, table) == encode_symbols(symbols, table)


class TestRalphWiggumRate:
    """
    Code length
    "My cat's breath smells like cat food." - Ralph
    """

    def test_rate_is_tight_unpossible(self):
        """Test the stream costs at most 1% over the ideal plus a constant - That's unpossible!"""
        symbols, table = random_stream(10_000, 11)
        ideal = table_rate_bits(symbols, table)
        actual = 8 * len(encode_symbols(symbols, table))
        assert actual <= 1.01 * ideal + 128


class TestRalphWiggumErrors:
    """
    Contracts and corruption
    "It tastes like burning!" - Ralph
    """

    def test_symbol_outside_window_burning(self):
        """Test out-of-window symbols are refused - It tastes like burning!"""
        symbols, table = random_stream(10, 1)
        symbols = symbols.copy()
        symbols[4] = table.hi[4] + 1
        with pytest.raises(SymbolOutOfRangeError):
            encode_symbols(symbols, table)

    def test_too_many_symbols_wookie(self):
        """Test more symbols than tables - I bent my Wookie!"""
        symbols, table = random_stream(5, 2)
        with pytest.raises(ContractError):
            encode_symbols(np.concatenate([symbols, symbols]), table)
        with pytest.raises(ContractError):
            decode_symbols(b"", table, 6)

    def test_truncated_stream_learnding(self):
        """Test a stream cut in half is rejected - I'm learnding!"""
        symbols, table = random_stream(2000, 5)
        data = encode_symbols(symbols, table)
        assert len(data) > 40
        with pytest.raises(DecodeError):
            decode_symbols(data[: len(data) // 2], table, len(symbols))

    def test_trailing_garbage_viking(self):
        """Test appended bytes are rejected - Sleep! That's where I'm a Viking!"""
        symbols, table = random_stream(500, 6)
        data = encode_symbols(symbols, table) + bytes(range(1, 17))
        with pytest.raises(DecodeError):
            decode_symbols(data, table, len(symbols))

    def test_encoder_finishes_once_banana(self):
        """Test finish() cannot run twice - Go banana!"""
        encoder = RangeEncoder(16)
        encoder.encode(0, 1 << 15)
        encoder.finish()
        with pytest.raises(ContractError):
            encoder.finish()

    def test_invalid_interval_idaho(self):
        """Test zero-width or overflowing intervals - I'm Idaho!"""
        encoder = RangeEncoder(8)
        with pytest.raises(ContractError):
            encoder.encode(10, 0)
        with pytest.raises(ContractError):
            encoder.encode(250, 10)
