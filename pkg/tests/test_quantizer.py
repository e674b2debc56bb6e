import numpy as np
import pytest

from vqvc.errors import ConfigError, CorruptStreamError
from vqvc import quantizer as Q


def rand_book(rng, k, d):
    return Q.Codebook(rng.normal(size=(k, d)).astype(np.float32))


class TestQuantize:
    def test_exact_codeword_hits_its_index(self):
        rng = np.random.default_rng(0)
        book = rand_book(rng, 16, 4)
        assert Q.quantize(book.codewords[5], book) == 5

    def test_tie_breaks_to_lowest_index(self):
        z = np.zeros((8, 3), np.float32)
        z[2] = [1, 1, 1]
        z[7] = [1, 1, 1]
        book = Q.Codebook(z + 0.0)
        assert Q.quantize(np.array([1, 1, 1], np.float32), book) == 2

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        book = rand_book(rng, 257, 8)
        vecs = rng.normal(size=(1000, 8)).astype(np.float32)
        got = Q.quantize_batch(vecs, book)
        ref = np.argmin(((vecs[:, None, :].astype(np.float64)
                          - book.codewords[None].astype(np.float64)) ** 2
                         ).sum(-1), axis=1)
        assert np.array_equal(got, ref)

    def test_dim_mismatch(self):
        book = rand_book(np.random.default_rng(0), 4, 3)
        with pytest.raises(Exception):
            Q.quantize(np.zeros(5, np.float32), book)


class TestDequantize:
    def test_lookup_identity(self):
        rng = np.random.default_rng(2)
        book = rand_book(rng, 32, 6)
        for k in (0, 7, 31):
            idx = Q.quantize(book.codewords[k], book)
            assert np.array_equal(Q.dequantize(idx, book), book.codewords[k])

    def test_out_of_range_raises(self):
        book = rand_book(np.random.default_rng(0), 8, 2)
        with pytest.raises(CorruptStreamError):
            Q.dequantize(8, book)

    def test_idempotent_round_trip(self):
        rng = np.random.default_rng(3)
        book = rand_book(rng, 64, 4)
        vecs = rng.normal(size=(200, 4)).astype(np.float32)
        idx = Q.quantize_batch(vecs, book)
        again = Q.quantize_batch(Q.dequantize_batch(idx, book), book)
        assert np.array_equal(idx, again)

    def test_dequantize_is_a_pure_gather(self):
        # structural: the looked-up rows are byte-identical to the table rows
        rng = np.random.default_rng(4)
        book = rand_book(rng, 16, 8)
        idx = rng.integers(0, 16, 50)
        out = Q.dequantize_batch(idx, book)
        for row, i in zip(out, idx):
            assert row.tobytes() == book.codewords[i].tobytes()


class TestMcvq:
    def test_halves_quantized_independently(self):
        rng = np.random.default_rng(5)
        books = (rand_book(rng, 9, 1), rand_book(rng, 9, 1))
        z = rng.normal(size=(2, 3, 3)).astype(np.float32)
        idx, z_hat = Q.mcvq_quantize(z, books)
        for bi in range(2):
            ref = Q.quantize_batch(z[bi].reshape(-1, 1), books[bi])
            assert np.array_equal(idx[bi].ravel(), ref)

    def test_exact_cover_reconstructs_bitwise(self):
        rng = np.random.default_rng(6)
        z = rng.normal(size=(4, 2, 2)).astype(np.float32)
        half_vecs_a = z[:2].reshape(2, -1).T
        half_vecs_b = z[2:].reshape(2, -1).T
        books = (Q.Codebook(half_vecs_a), Q.Codebook(half_vecs_b))
        _, z_hat = Q.mcvq_quantize(z, books)
        assert np.array_equal(z_hat, z)

    def test_shape_contract(self):
        rng = np.random.default_rng(7)
        books = (rand_book(rng, 4, 3), rand_book(rng, 4, 3))
        idx, z_hat = Q.mcvq_quantize(rng.normal(size=(6, 5, 7)).astype(np.float32), books)
        assert idx.shape == (2, 5, 7)
        assert z_hat.shape == (6, 5, 7)

    def test_odd_channels_rejected(self):
        rng = np.random.default_rng(8)
        books = (rand_book(rng, 4, 1), rand_book(rng, 4, 1))
        with pytest.raises(ConfigError):
            Q.mcvq_quantize(np.zeros((3, 2, 2), np.float32), books)


def fitted_books(rng, spec=Q.CodebookSpec((16, 8, 4)), n=4, c=8, hw=16):
    latents = [rng.normal(size=(c, hw, hw)).astype(np.float32) for _ in range(n)]
    return latents, Q.fit_codebooks(latents, spec, seed=0)


class TestMultistage:
    def test_stage_grid_shapes(self):
        rng = np.random.default_rng(9)
        latents, books = fitted_books(rng)
        grid, _ = Q.multistage_quantize(latents[0], books)
        assert [s.shape for s in grid.stages] == [(2, 8, 8), (2, 4, 4), (2, 2, 2)]

    def test_zero_codebooks_zero_latent(self):
        books = Q.CodebookSet([
            (Q.Codebook(np.zeros((4, 2), np.float32)),
             Q.Codebook(np.zeros((4, 2), np.float32)))
            for _ in range(3)])
        grid, y_hat = Q.multistage_quantize(np.zeros((4, 16, 16), np.float32), books)
        assert np.array_equal(y_hat, np.zeros((4, 16, 16), np.float32))
        assert all((s == 0).all() for s in grid.stages)

    def test_encoder_and_decoder_share_the_path(self):
        rng = np.random.default_rng(10)
        latents, books = fitted_books(rng)
        grid, y_hat = Q.multistage_quantize(latents[1], books)
        assert np.array_equal(Q.multistage_dequantize(grid, books), y_hat)

    def test_more_stages_never_hurt(self):
        rng = np.random.default_rng(11)
        latents, books = fitted_books(rng, n=6)
        held_out = rng.normal(size=(8, 16, 16)).astype(np.float32)
        grid, _ = Q.multistage_quantize(held_out, books)
        errs = []
        for stages in (1, 2, 3):
            rec = Q.multistage_dequantize(grid, books, stages=stages)
            errs.append(float(((held_out - rec) ** 2).sum()))
        assert errs[2] <= errs[1] <= errs[0]

    def test_corrupt_index_detected(self):
        rng = np.random.default_rng(12)
        latents, books = fitted_books(rng)
        grid, _ = Q.multistage_quantize(latents[0], books)
        grid.stages[0][0, 0, 0] = books.stages[0][0].size   # == K, invalid
        with pytest.raises(CorruptStreamError):
            Q.multistage_dequantize(grid, books)

    def test_index_widths(self):
        assert Q.CodebookSpec((8192, 2048, 512)).index_widths == (13, 11, 9)
        assert Q.CodebookSpec((8, 2048, 512)).index_widths == (3, 11, 9)
        assert Q.index_width(1) == 1


class TestFitCodebooks:
    def test_k1_is_the_mean(self):
        rng = np.random.default_rng(13)
        data = rng.normal(size=(100, 3)).astype(np.float64)
        centers, warned = Q.kmeans_fit(data, 1, seed=0)
        assert not warned
        assert np.allclose(centers[0], data.mean(0), atol=1e-5)

    def test_two_separated_clusters(self):
        rng = np.random.default_rng(14)
        a = rng.normal(0.0, 0.05, size=(50, 2))
        b = rng.normal(5.0, 0.05, size=(50, 2))
        centers, _ = Q.kmeans_fit(np.concatenate([a, b]), 2, seed=0)
        centers = centers[np.argsort(centers[:, 0])]
        assert np.allclose(centers[0], a.mean(0), atol=1e-3)
        assert np.allclose(centers[1], b.mean(0), atol=1e-3)

    def test_duplicate_fallback_sets_warning(self):
        data = np.tile(np.array([[1.0, 2.0]]), (10, 1))
        centers, warned = Q.kmeans_fit(data, 4, seed=0)
        assert warned
        assert centers.shape == (4, 2)

    def test_fitting_beats_random_codewords(self):
        rng = np.random.default_rng(15)
        latents, books = fitted_books(rng, n=8)
        random_books = Q.CodebookSet([
            (Q.Codebook(rng.normal(size=(k, 4)).astype(np.float32)),
             Q.Codebook(rng.normal(size=(k, 4)).astype(np.float32)))
            for k in (16, 8, 4)])

        def batch_mse(bset):
            total = 0.0
            for y in latents:
                _, y_hat = Q.multistage_quantize(y, bset)
                total += float(((y - y_hat) ** 2).mean())
            return total

        assert batch_mse(books) <= 0.8 * batch_mse(random_books)
