import numpy as np
import pytest

from mrisr.classify import ClassifierConfig, PatchClass, measurement_matrix_for
from mrisr.cs import omp_solve
from mrisr.dictionary import (
    DictionaryPair,
    FeatureBank,
    TrainingPair,
    _omp_code_matrix,
    build_training_set,
    feature_dim,
    load_dictionary,
    lr_feature_operator,
    save_dictionary,
    standalone_patch_feature,
    train_dictionary_pair,
)
from mrisr.errors import (
    DegenerateDataError,
    DictionaryFormatError,
    InsufficientDataError,
)
from mrisr.image import DegradationModel, Image
from mrisr.phantom import phantom

# several training cases intentionally use small atom counts
pytestmark = pytest.mark.filterwarnings("ignore:dictionary has")


def naive_stencil_responses(neigh, out_size):
    """Direct-loop oracle for the four stencil responses over the core patch."""
    margin = (neigh.shape[0] - out_size) // 2
    padded = neigh
    gh = np.zeros((out_size, out_size))
    gv = np.zeros((out_size, out_size))
    lh = np.zeros((out_size, out_size))
    lv = np.zeros((out_size, out_size))

    def at(r, c):
        r = min(max(r, 0), padded.shape[0] - 1)
        c = min(max(c, 0), padded.shape[1] - 1)
        return padded[r, c]

    for i in range(out_size):
        for j in range(out_size):
            r, c = i + margin, j + margin
            gh[i, j] = at(r, c + 1) - at(r, c - 1)
            gv[i, j] = at(r + 1, c) - at(r - 1, c)
            lh[i, j] = at(r, c + 2) - 2 * at(r, c) + at(r, c - 2)
            lv[i, j] = at(r + 2, c) - 2 * at(r, c) + at(r - 2, c)
    return np.concatenate([gh.ravel(), gv.ravel(), lh.ravel(), lv.ravel()])


def orthogonal_pairs(k, hr_dim=25, lr_dim=100, seed=0):
    """K mutually orthogonal training vectors (zero feature parts)."""
    rng = np.random.default_rng(seed)
    scales = rng.uniform(1.0, 4.0, k)
    pairs = []
    for i in range(k):
        hr = np.zeros(hr_dim)
        hr[i] = scales[i]
        pairs.append(TrainingPair(hr, np.zeros(lr_dim), PatchClass.SMOOTH))
    return pairs


@pytest.fixture(scope="module")
def phantom_buckets():
    cfg = ClassifierConfig(seed=3)
    phi = measurement_matrix_for(cfg)
    images = [phantom(96, 96, "disks", seed=s).image for s in (11, 12)]
    model = DegradationModel.default(2)
    return build_training_set(
        images, model, cfg, phi, patch_size=5, per_class_cap=2000, stride=1, seed=3
    )


class TestFeatureOperator:
    def test_constant_patch_zero_feature(self):
        neigh = np.full((9, 9), 50.0)
        assert np.array_equal(lr_feature_operator(neigh, 5), np.zeros(100))

    def test_ramp_gradient_response(self):
        # horizontal ramp of slope 1: d/dx responses are 2, vertical are 0
        neigh = np.tile(np.arange(9.0), (9, 1))
        feat = lr_feature_operator(neigh, 5).reshape(4, 25)
        assert np.allclose(feat[0], 2.0)  # right minus left
        assert np.allclose(feat[1], 0.0)
        assert np.allclose(feat[2], 0.0)  # second difference of a line
        assert np.allclose(feat[3], 0.0)

    def test_matches_naive_oracle(self, rng):
        neigh = rng.uniform(0, 255, (9, 9))
        got = lr_feature_operator(neigh, 5)
        want = naive_stencil_responses(neigh, 5)
        assert np.max(np.abs(got - want)) < 1e-12

    def test_margin_too_small_rejected(self):
        with pytest.raises(ValueError):
            lr_feature_operator(np.zeros((7, 7)), 5)

    def test_bank_matches_operator_in_interior(self, rng):
        data = rng.uniform(0, 255, (20, 20))
        bank = FeatureBank(data)
        r, c = 6, 7
        got = bank.patch_feature((r, c), 5)
        want = lr_feature_operator(data[r - 2 : r + 7, c - 2 : c + 7], 5)
        assert np.max(np.abs(got - want)) < 1e-12

    def test_standalone_identity_mode(self, rng):
        values = rng.uniform(0, 255, (5, 5))
        feat = standalone_patch_feature(values, "identity")
        assert np.allclose(feat, (values - values.mean()).ravel())
        assert feature_dim(5, "identity") == 25

    def test_identity_bank(self, rng):
        data = rng.uniform(0, 255, (12, 12))
        bank = FeatureBank(data, "identity")
        got = bank.patch_feature((3, 4), 5)
        want = standalone_patch_feature(data[3:8, 4:9], "identity")
        assert np.allclose(got, want)


class TestBuildTrainingSet:
    def test_constant_corpus_insufficient(self):
        cfg = ClassifierConfig(seed=0)
        phi = measurement_matrix_for(cfg)
        img = Image(np.full((40, 40), 90.0))
        with pytest.raises(InsufficientDataError) as err:
            build_training_set([img], DegradationModel.default(2), cfg, phi)
        assert err.value.patch_class in (PatchClass.TEXTURE, PatchClass.EDGE)

    def test_phantom_fills_all_buckets(self, phantom_buckets):
        for pc in PatchClass:
            assert len(phantom_buckets[pc]) > 0

    def test_cap_limits_buckets(self):
        cfg = ClassifierConfig(seed=0)
        phi = measurement_matrix_for(cfg)
        images = [phantom(96, 96, "disks", seed=1).image]
        buckets = build_training_set(
            images, DegradationModel.default(2), cfg, phi, per_class_cap=10
        )
        assert all(len(v) <= 10 for v in buckets.values())

    def test_hr_patches_mean_removed(self, phantom_buckets):
        sample = phantom_buckets[PatchClass.EDGE][0]
        assert abs(sample.hr_vector.mean()) < 1e-12

    def test_image_too_small_rejected(self):
        cfg = ClassifierConfig(seed=0)
        phi = measurement_matrix_for(cfg)
        with pytest.raises(ValueError):
            build_training_set(
                [Image(np.zeros((10, 10)))], DegradationModel.default(2), cfg, phi
            )


class TestOmpCodeMatrix:
    def test_matches_omp_solve_per_column(self, rng):
        D = rng.standard_normal((30, 12))
        D /= np.linalg.norm(D, axis=0)
        V = rng.standard_normal((30, 8))
        X = _omp_code_matrix(D, V, sparsity=3)
        for i in range(V.shape[1]):
            ref = omp_solve(D, V[:, i], 3)
            assert np.max(np.abs(X[:, i] - ref.coefficients)) < 1e-10


class TestTraining:
    def test_orthogonal_vectors_exact(self):
        pairs = orthogonal_pairs(16)
        pair = train_dictionary_pair(pairs, k=16, sparsity=1, iterations=3, seed=0)
        stacked = pair.stacked()
        V = np.stack(
            [np.concatenate([p.hr_vector / 5.0, p.lr_feature / 10.0]) for p in pairs],
            axis=1,
        )
        X = _omp_code_matrix(stacked, V, 1)
        err = np.linalg.norm(V - stacked @ X)
        assert err < 1e-10

    def test_zero_iterations_is_seeded_sample(self):
        pairs = orthogonal_pairs(8)
        a = train_dictionary_pair(pairs, k=8, sparsity=1, iterations=0, seed=5)
        b = train_dictionary_pair(pairs, k=8, sparsity=1, iterations=0, seed=5)
        assert a == b
        # every atom is a normalized training vector
        stacked = a.stacked()
        V = np.stack(
            [np.concatenate([p.hr_vector / 5.0, p.lr_feature / 10.0]) for p in pairs],
            axis=1,
        )
        Vn = V / np.linalg.norm(V, axis=0)
        for j in range(8):
            dots = np.abs(Vn.T @ stacked[:, j])
            assert dots.max() > 1 - 1e-10

    def test_atom_norms_unit(self, phantom_buckets):
        pairs = phantom_buckets[PatchClass.EDGE][:200]
        pair = train_dictionary_pair(pairs, k=32, sparsity=3, iterations=4, seed=1)
        norms = np.linalg.norm(pair.stacked(), axis=0)
        assert np.max(np.abs(norms - 1.0)) < 1e-10

    def test_objective_halves_on_phantom_corpus(self, phantom_buckets):
        pairs = phantom_buckets[PatchClass.EDGE]
        pairs = pairs[: min(len(pairs), 2000)]
        trained = train_dictionary_pair(pairs, k=64, sparsity=3, iterations=20, seed=2)
        assert trained.meta.final_error <= 0.5 * trained.meta.initial_error

    def test_determinism(self, phantom_buckets):
        pairs = phantom_buckets[PatchClass.SMOOTH][:150]
        a = train_dictionary_pair(pairs, k=24, sparsity=2, iterations=3, seed=9)
        b = train_dictionary_pair(pairs, k=24, sparsity=2, iterations=3, seed=9)
        assert a == b

    def test_insufficient_samples(self):
        pairs = orthogonal_pairs(4)
        with pytest.raises(InsufficientDataError) as err:
            train_dictionary_pair(pairs, k=16, sparsity=1, iterations=1, seed=0)
        assert err.value.needed == 16

    def test_all_zero_samples_degenerate(self):
        pairs = [
            TrainingPair(np.zeros(25), np.zeros(100), PatchClass.SMOOTH)
            for _ in range(20)
        ]
        with pytest.raises(DegenerateDataError):
            train_dictionary_pair(pairs, k=8, sparsity=1, iterations=1, seed=0)

    def test_mixed_classes_rejected(self):
        pairs = orthogonal_pairs(8)
        bad = TrainingPair(pairs[0].hr_vector, pairs[0].lr_feature, PatchClass.EDGE)
        with pytest.raises(ValueError):
            train_dictionary_pair(pairs + [bad], k=4, sparsity=1, iterations=1, seed=0)

    def test_undercomplete_warns(self):
        pairs = orthogonal_pairs(16)
        with pytest.warns(UserWarning):
            train_dictionary_pair(pairs, k=16, sparsity=1, iterations=0, seed=0)


class TestSaveLoad:
    def make_pair(self, rng, k=32, patch_size=5):
        hr_dim = patch_size * patch_size
        lr_dim = 4 * hr_dim
        stacked = rng.standard_normal((hr_dim + lr_dim, k))
        stacked /= np.linalg.norm(stacked, axis=0)
        dh = stacked[:hr_dim] * np.sqrt(hr_dim)
        dl = stacked[hr_dim:] * np.sqrt(lr_dim)
        return DictionaryPair(PatchClass.TEXTURE, dh, dl, patch_size, 2, 77)

    def test_round_trip_bit_exact(self, tmp_path, rng):
        pair = self.make_pair(rng)
        path = tmp_path / "t.dict"
        save_dictionary(pair, path)
        again = load_dictionary(path)
        assert again == pair
        assert again.patch_class is PatchClass.TEXTURE
        assert again.seed == 77 and again.scale == 2 and again.patch_size == 5

    def test_truncated_rejected(self, tmp_path, rng):
        pair = self.make_pair(rng)
        path = tmp_path / "t.dict"
        save_dictionary(pair, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(DictionaryFormatError):
            load_dictionary(path)

    def test_bad_magic_rejected(self, tmp_path, rng):
        pair = self.make_pair(rng)
        path = tmp_path / "t.dict"
        save_dictionary(pair, path)
        blob = bytearray(path.read_bytes())
        blob[0] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(DictionaryFormatError):
            load_dictionary(path)

    def test_corrupted_payload_rejected(self, tmp_path, rng):
        pair = self.make_pair(rng)
        path = tmp_path / "t.dict"
        save_dictionary(pair, path)
        blob = bytearray(path.read_bytes())
        blob[60] ^= 0x01
        path.write_bytes(bytes(blob))
        with pytest.raises(DictionaryFormatError):
            load_dictionary(path)

    def test_full_size_header_surfaced(self, tmp_path, rng):
        hr_dim, lr_dim, k = 25, 100, 512
        stacked = rng.standard_normal((hr_dim + lr_dim, k))
        stacked /= np.linalg.norm(stacked, axis=0)
        pair = DictionaryPair(
            PatchClass.SMOOTH,
            stacked[:hr_dim] * np.sqrt(hr_dim),
            stacked[hr_dim:] * np.sqrt(lr_dim),
            5,
            2,
            123,
        )
        path = tmp_path / "big.dict"
        save_dictionary(pair, path)
        again = load_dictionary(path)
        assert (again.k, again.patch_size, again.scale) == (512, 5, 2)
