"""Ingestion, validation, and round-trip tests for the dataset container."""

import numpy as np
import pytest

from growthmix.data import (
    DimensionMismatch,
    FullyMissingSubject,
    InconsistentSubscaleMap,
    MissingCovariateValue,
    NonIncreasingTimes,
    OutOfRangeCategory,
    load_dataset,
    load_dataset_dir,
    missing_rates,
    save_dataset_dir,
)
from conftest import write_dataset_files


def test_wellformed_fixture_dims(paper_shaped_files):
    ds = load_dataset(*paper_shaped_files)
    assert ds.dims == (5, 14, 4, 35, 5, 8, 2, 6, 7)
    assert ds.Y.shape == (4, 5, 35)
    assert ds.Y[ds.Y >= 0].max() <= 4 and ds.Y[ds.Y >= 0].min() >= 0
    assert ds.mask.z_missing[0, 3]
    assert ds.mask.y_missing[1, 2, 4]
    assert np.isnan(ds.Z[0, 3])


def test_out_of_range_category(tmp_path):
    paths = write_dataset_files(tmp_path, y_override={(2, 1, 6): 7})
    with pytest.raises(OutOfRangeCategory, match=r"time 3, subject 2, item 7"):
        load_dataset(*paths)


def test_fully_missing_subject_in_z(tmp_path):
    paths = write_dataset_files(tmp_path, z_missing=[(2, t) for t in range(14)])
    with pytest.raises(FullyMissingSubject, match="subject 3"):
        load_dataset(*paths)


def test_fully_missing_subject_in_y(tmp_path):
    missing = [(t, 4, j) for t in range(4) for j in range(35)]
    paths = write_dataset_files(tmp_path, y_missing=missing)
    with pytest.raises(FullyMissingSubject, match="subject 5"):
        load_dataset(*paths)


def test_non_increasing_times(tmp_path):
    times = list(np.linspace(1, 9, 14))
    times[5] = times[4]
    paths = write_dataset_files(tmp_path, z_times=times)
    with pytest.raises(NonIncreasingTimes):
        load_dataset(*paths)


def test_unknown_subscale(tmp_path):
    subscale = [1] * 34 + [9]
    domain = [1] * 35
    paths = write_dataset_files(tmp_path, subscale=subscale, domain=domain, n_s=8)
    with pytest.raises(Exception, match="subscale id 9"):
        load_dataset(*paths)


def test_inconsistent_subscale_domain_map(tmp_path):
    subscale = [1] * 18 + [2] * 17
    domain = [1] * 17 + [2] + [2] * 17  # item 18 puts subscale 1 into domain 2
    paths = write_dataset_files(tmp_path, subscale=subscale, domain=domain)
    with pytest.raises(InconsistentSubscaleMap):
        load_dataset(*paths)


def test_dimension_mismatch_reports_file(tmp_path):
    paths = write_dataset_files(tmp_path)
    text = paths[0].read_text().splitlines()
    paths[0].write_text("\n".join(text[:-1]) + "\n")  # drop one subject row
    with pytest.raises(DimensionMismatch, match="z.csv"):
        load_dataset(*paths)


def test_missing_covariate_rejected(tmp_path):
    paths = write_dataset_files(tmp_path)
    lines = paths[2].read_text().splitlines()
    parts = lines[2].split(",")
    parts[3] = "NA"
    lines[2] = ",".join(parts)
    paths[2].write_text("\n".join(lines) + "\n")
    with pytest.raises(MissingCovariateValue, match="subject 2"):
        load_dataset(*paths)


def test_missing_rates_no_missing(tmp_path):
    ds = load_dataset(*write_dataset_files(tmp_path))
    z_rate, y_rates = missing_rates(ds)
    assert z_rate == 0.0
    np.testing.assert_array_equal(y_rates, np.zeros(4))


def test_missing_rates_single_cell(tmp_path):
    ds = load_dataset(*write_dataset_files(tmp_path, z_missing=[(1, 2)]))
    z_rate, _ = missing_rates(ds)
    assert z_rate == pytest.approx(1 / 70)


def test_missing_rates_paper_like_fixture(tmp_path):
    # Counts chosen so the per-time rates land on the reported values.
    N, J = 100, 35
    rng = np.random.default_rng(12)
    targets = (0.006, 0.0351, 0.0538, 0.0071)
    y_missing = []
    for t, rate in enumerate(targets):
        k = round(rate * N * J)
        cells = rng.choice(N * J, size=k, replace=False)
        y_missing += [(t, int(c) // J, int(c) % J) for c in cells]
    ds = load_dataset(*write_dataset_files(tmp_path, N=N, y_missing=y_missing))
    _, y_rates = missing_rates(ds)
    np.testing.assert_allclose(y_rates, targets, atol=2e-4)


def test_round_trip_identity(tmp_path):
    ds = load_dataset(
        *write_dataset_files(tmp_path / "a", z_missing=[(0, 1), (3, 8)], y_missing=[(0, 0, 0)])
    )
    save_dataset_dir(ds, tmp_path / "b")
    ds2 = load_dataset_dir(tmp_path / "b")
    assert ds.dims == ds2.dims
    np.testing.assert_array_equal(ds.mask.z_missing, ds2.mask.z_missing)
    np.testing.assert_array_equal(ds.mask.y_missing, ds2.mask.y_missing)
    np.testing.assert_array_equal(ds.Y, ds2.Y)
    obs = ~ds.mask.z_missing
    np.testing.assert_array_equal(ds.Z[obs], ds2.Z[obs])
    np.testing.assert_array_equal(ds.X_Z, ds2.X_Z)
    np.testing.assert_array_equal(ds.X_Y, ds2.X_Y)
    np.testing.assert_array_equal(ds.Z_times, ds2.Z_times)
    np.testing.assert_array_equal(ds.subscale, ds2.subscale)
    np.testing.assert_array_equal(ds.domain, ds2.domain)
    assert ds.xz_names == ds2.xz_names


def test_validation_is_total_on_malformed_meta(tmp_path):
    paths = write_dataset_files(tmp_path)
    paths[4].write_text('{"dims": {"N": 5}}')
    with pytest.raises(Exception, match="missing required key"):
        load_dataset(*paths)
