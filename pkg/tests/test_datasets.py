import numpy as np
import pytest
from scipy.stats import hypergeom

from uqbench import container, datasets, kl, mmt
from uqbench.errors import (
    BlowUpBudgetExceeded,
    CorruptFile,
    DimensionMismatch,
    FormatVersionMismatch,
    InsufficientRows,
)


def small_meta(seed=0, m=1, z_star=3.0, **mmt_kw):
    params = dict(grid_size=64, t_end=0.5, dt=0.01)
    params.update(mmt_kw)
    return datasets.GenerationMeta(
        seed=seed, z_star=z_star, kernel=kl.KernelSpec(grid_size=64), mmt=mmt.MMTParams(**params), m=m
    )


@pytest.fixture(scope="module")
def small():
    return datasets.generate(small_meta(), 40)


def test_generate_shapes(small):
    assert small.inputs.shape == (40, 2)
    assert small.outputs.shape == (40,)
    assert small.functional_inputs.shape == (40, 128)
    assert len(small.quarantine) == 0


def test_functional_trace_is_real_then_imaginary(small):
    basis = kl.eigendecompose(small.meta.kernel, small.meta.m)
    u0 = kl.synthesize_field(basis, small.inputs[5])
    np.testing.assert_allclose(small.functional_inputs[5, :64], u0.real, atol=1e-15)
    np.testing.assert_allclose(small.functional_inputs[5, 64:], u0.imag, atol=1e-15)


def test_outputs_match_direct_simulation(small):
    basis = kl.eigendecompose(small.meta.kernel, small.meta.m)
    _, y = mmt.simulate(small.inputs[7], basis, small.meta.mmt)
    assert y == pytest.approx(small.outputs[7], abs=1e-12)


def test_round_trip_exact(tmp_path, small):
    path = tmp_path / "d.uqb"
    datasets.save(small, path)
    assert datasets.load(path) == small


def test_round_trip_with_fields(tmp_path):
    ds = datasets.generate(small_meta(), 5, export_fields=True)
    path = tmp_path / "d.uqb"
    datasets.save(ds, path)
    back = datasets.load(path)
    assert back == ds and back.final_fields.dtype == complex


def test_empty_dataset_round_trip(tmp_path):
    ds = datasets.generate(small_meta(), 0)
    path = tmp_path / "e.uqb"
    datasets.save(ds, path)
    back = datasets.load(path)
    assert len(back) == 0 and back == ds


def test_same_seed_gives_identical_files(tmp_path):
    a, b = tmp_path / "a.uqb", tmp_path / "b.uqb"
    datasets.save(datasets.generate(small_meta(seed=4), 20), a)
    datasets.save(datasets.generate(small_meta(seed=4), 20), b)
    assert container.file_digest(a) == container.file_digest(b)


def test_regeneration_from_loaded_meta(tmp_path, small):
    path = tmp_path / "d.uqb"
    datasets.save(small, path)
    meta = datasets.load(path).meta
    again = datasets.generate(meta, len(small))
    np.testing.assert_allclose(again.outputs, small.outputs, atol=1e-12)


def test_corrupt_and_future_files(tmp_path, small):
    path = tmp_path / "d.uqb"
    datasets.save(small, path)
    data = path.read_bytes()
    (tmp_path / "t.uqb").write_bytes(data[: len(data) // 2])
    with pytest.raises(CorruptFile):
        datasets.load(tmp_path / "t.uqb")
    future = data.replace(b'"version":1', b'"version":9', 1)
    (tmp_path / "f.uqb").write_bytes(future)
    with pytest.raises(FormatVersionMismatch):
        datasets.load(tmp_path / "f.uqb")


def test_load_rejects_other_kinds(tmp_path):
    container.write(tmp_path / "x.uqb", "surrogate", {}, {})
    with pytest.raises(CorruptFile):
        datasets.load(tmp_path / "x.uqb")


def test_quarantine_accounting(monkeypatch):
    real = mmt.simulate_batch

    def flaky(alphas, basis, params, threads=1, keep_fields=False):
        u0, final, y, blown, times = real(alphas, basis, params, threads, keep_fields)
        blown[3] = True
        times[3] = 0.25
        return u0, final, y, blown, times

    monkeypatch.setattr(datasets, "simulate_batch", flaky)
    ds = datasets.generate(small_meta(), 200)
    assert len(ds) + len(ds.quarantine) == 200
    assert ds.quarantine[0, -1] == 0.25
    with pytest.raises(BlowUpBudgetExceeded):
        datasets.generate(small_meta(), 50)


def test_dataset_invariants():
    meta = small_meta()
    with pytest.raises(DimensionMismatch):
        datasets.Dataset(np.zeros((3, 2)), np.zeros(2), meta)
    with pytest.raises(ValueError):
        datasets.Dataset(np.array([[np.nan, 0.0]]), np.zeros(1), meta)
    with pytest.raises(ValueError):
        small_meta(z_star=0.0)


def test_meta_dict_round_trip():
    meta = small_meta(seed=9, m=2)
    assert datasets.GenerationMeta.from_dict(meta.to_dict()) == meta


def test_split_sizes_and_disjointness():
    sp = datasets.split(1000, 25, 0)
    assert len(sp.train_indices) == 25 and len(sp.val_indices) == 975
    assert set(sp.train_indices).isdisjoint(sp.val_indices)
    assert sorted(np.concatenate([sp.train_indices, sp.val_indices])) == list(range(1000))


def test_split_deterministic_and_edge_cases(small):
    a, b = datasets.split(small, 10, 3), datasets.split(small, 10, 3)
    np.testing.assert_array_equal(a.train_indices, b.train_indices)
    assert len(datasets.split(small, len(small) - 1, 0).val_indices) == 1
    for bad in (0, len(small)):
        with pytest.raises(InsufficientRows):
            datasets.split(small, bad, 0)


def test_split_overlap_is_hypergeometric():
    n, k, pairs = 1000, 100, 400
    overlaps = [
        len(np.intersect1d(datasets.split(n, k, 2 * i).train_indices, datasets.split(n, k, 2 * i + 1).train_indices))
        for i in range(pairs)
    ]
    dist = hypergeom(n, k, k)
    se = np.sqrt(dist.var() / pairs)
    assert abs(np.mean(overlaps) - dist.mean()) < 3 * se
