import numpy as np
import pytest
from sklearn.base import clone

from dasp.autodiff import load_tensors
from dasp.dsp import stft
from dasp.pipelines import (
    Denoiser,
    DoaNetwork,
    EventDetector,
    Separator,
    SpeakerEmbedder,
    SpeakerRecord,
    SpeakerRegistry,
    SynthSpec,
    TrainingDivergedError,
    angular_error,
    best_permutation_si_sdr,
    circular_array,
    circular_peaks,
    context_stack,
    estimate_doa,
    evaluate_doa,
    identify_embedding,
    ideal_mask_separation,
    si_sdr_db,
    snr_db,
    speaker_enroll,
    speaker_identify,
    synth_generate,
    train_denoiser,
    train_doa,
    train_sed,
    train_separator,
    train_speaker,
)
from dasp.spatial import ArrayScene, Direction, simulate_scene


# synthetic data


def test_denoise_spec_snr_is_exact():
    ds = synth_generate(SynthSpec("denoise", n_clips=10, snr_db=0.0, seed=3))
    for s, v in zip(ds.targets, ds.noise):
        assert abs(snr_db(s, v)) < 0.1
    ds = synth_generate(SynthSpec("denoise", n_clips=3, snr_db=-5.0, seed=3))
    assert abs(snr_db(ds.targets[0], ds.noise[0]) + 5.0) < 0.1


def test_sed_density_zero_is_silent():
    ds = synth_generate(SynthSpec("sed", n_clips=12, density=0.0))
    assert not ds.frame_labels.any() and not ds.clip_labels.any()


@pytest.mark.parametrize("task", ["denoise", "separate", "sed", "speaker", "doa"])
def test_identical_seeds_identical_datasets(task):
    a = synth_generate(SynthSpec(task, n_clips=4, seed=11, n_sources=1 if task == "doa" else 2))
    b = synth_generate(SynthSpec(task, n_clips=4, seed=11, n_sources=1 if task == "doa" else 2))
    c = synth_generate(SynthSpec(task, n_clips=4, seed=12, n_sources=1 if task == "doa" else 2))
    assert a.inputs.tobytes() == b.inputs.tobytes()
    assert a.inputs.tobytes() != c.inputs.tobytes()


def test_sed_frame_labels_align_with_stft_grid():
    ds = synth_generate(SynthSpec("sed", n_clips=2, density=1.0))
    T = stft(ds.inputs[0], 256, 128, rate=8000).frames.shape[0]
    assert ds.frame_labels.shape == (2, T, 2)
    assert np.array_equal(ds.clip_labels, ds.frame_labels.max(axis=1))


def test_split_is_disjoint_and_seeded():
    ds = synth_generate(SynthSpec("speaker", n_clips=20))
    tr, te = ds.split()
    assert len(tr) == 16 and len(te) == 4
    assert not set(tr) & set(te)
    assert np.array_equal(ds.split()[0], tr)


def test_bad_spec_rejected():
    with pytest.raises(ValueError):
        SynthSpec("karaoke")
    with pytest.raises(ValueError):
        SynthSpec("separate", n_sources=5)
    with pytest.raises(ValueError):
        SynthSpec("sed", density=1.5)


def test_context_stack_repeats_edges():
    f = np.arange(4.0)[:, None]
    out = context_stack(f, 1)
    assert out.tolist() == [[0, 0, 1], [0, 1, 2], [1, 2, 3], [2, 3, 3]]


# denoising


def test_oracle_wiener_beats_noisy_on_every_clip():
    ds = synth_generate(SynthSpec("denoise", n_clips=10, seed=1))
    model = Denoiser()
    for s, v, x in zip(ds.targets, ds.noise, ds.inputs):
        assert si_sdr_db(s, model.oracle(s, v)) > si_sdr_db(s, x)


def test_trained_denoiser_improves_and_respects_training_metric_bound():
    ds = synth_generate(SynthSpec("denoise", n_clips=60, seed=2))
    model, metrics = train_denoiser(ds, epochs=4)
    assert np.mean(metrics["gain"]) >= 5
    assert np.all(metrics["enhanced"] > metrics["noisy"])
    # on the training metric the oracle gains are optimal
    _, te = ds.split()
    F, H, _, _ = model._frames(ds, te)
    from dasp.autodiff import Tensor
    from dasp.losses import mask_bce

    out = model.model_(Tensor(model.scaler_.transform(F).T))
    assert float(mask_bce(H.T, out).data) >= float(mask_bce(H.T, Tensor(H.T)).data)


def test_zero_noise_masks_pass_active_bins():
    ds = synth_generate(SynthSpec("denoise", n_clips=30, snr_db=np.inf, seed=4))
    model, _ = train_denoiser(ds, epochs=8)
    _, te = ds.split()
    vals = []
    for n in te:
        m = model.predict_mask(ds.inputs[n])
        S = stft(ds.targets[n], 256, 128, rate=8000).power
        vals.append(m[S > 1e-3 * S.max()])
    assert np.mean(np.concatenate(vals)) >= 0.9


def test_divergence_aborts_with_state_dump(tmp_path):
    ds = synth_generate(SynthSpec("denoise", n_clips=6, seed=5))
    model = Denoiser(lr=np.inf, epochs=2)
    dump = tmp_path / "state.dten"
    with pytest.raises(TrainingDivergedError) as info:
        model.fit(ds, dump_path=dump)
    assert dump.exists()
    saved = load_tensors(dump)
    assert set(saved) == set(info.value.state)
    assert all(np.all(np.isfinite(v)) for v in saved.values())


def test_unknown_loss_kind():
    ds = synth_generate(SynthSpec("denoise", n_clips=4))
    with pytest.raises(ValueError):
        Denoiser(loss="l7").fit(ds)


def test_estimators_clone():
    for est in (Denoiser(context=3), Separator(n_sources=3), EventDetector(aggregation="mean"), SpeakerEmbedder(dim=8), DoaNetwork(sigma=0.1)):
        twin = clone(est)
        assert twin.get_params() == est.get_params()


def test_training_is_reproducible():
    ds = synth_generate(SynthSpec("denoise", n_clips=10, seed=6))
    _, a = train_denoiser(ds, epochs=2)
    _, b = train_denoiser(ds, epochs=2)
    assert np.array_equal(a["enhanced"], b["enhanced"])


# separation


def test_ideal_masks_separate_disjoint_bands():
    ds = synth_generate(SynthSpec("separate", n_clips=5, seed=0))
    for x, stems in zip(ds.inputs, ds.targets):
        scores, _ = best_permutation_si_sdr(stems, ideal_mask_separation(x, stems, 8000))
        assert scores.min() >= 30


def test_separator_pit_training_and_stem_order_invariance():
    ds = synth_generate(SynthSpec("separate", n_clips=60, seed=1))
    model, metrics = train_separator(ds, epochs=10)
    assert metrics["si_sdr"].min() >= 10
    swapped = synth_generate(SynthSpec("separate", n_clips=60, seed=1))
    swapped.targets = swapped.targets[:, ::-1].copy()
    _, metrics_sw = train_separator(swapped, epochs=10)
    assert metrics_sw["pit_loss"] == pytest.approx(metrics["pit_loss"], rel=1e-6)


def test_separator_rejects_wrong_stem_count():
    ds = synth_generate(SynthSpec("separate", n_clips=4, n_sources=3))
    with pytest.raises(ValueError):
        Separator(n_sources=2).fit(ds)


# event detection


@pytest.fixture(scope="module")
def sed_runs():
    ds = synth_generate(SynthSpec("sed", n_clips=120, seed=0))
    return ds, train_sed(ds, "linear_softmax"), train_sed(ds, "mean")


def test_sed_linear_softmax_frame_auc(sed_runs):
    _, (_, metrics), _ = sed_runs
    assert metrics["frame_auc"] >= 0.9


def test_sed_mean_aggregation_worse_on_short_events(sed_runs):
    _, (_, lin), (_, mean) = sed_runs
    assert lin["class_auc"][0] - mean["class_auc"][0] > 0


def test_sed_negative_clips_stay_low(sed_runs):
    _, (model, _), _ = sed_runs
    silent = synth_generate(SynthSpec("sed", n_clips=10, density=0.0, seed=9))
    probs = np.stack([model.frame_probabilities(x) for x in silent.inputs])
    assert probs.mean() < 0.05


def test_sed_decisions_shape(sed_runs):
    ds, (model, _), _ = sed_runs
    dec = model.predict(ds.inputs[0])
    assert dec.shape == ds.frame_labels[0].shape and set(np.unique(dec)) <= {0, 1}


# speaker


@pytest.fixture(scope="module")
def speaker_run():
    ds = synth_generate(SynthSpec("speaker", n_clips=60, snr_db=20, seed=0))
    return ds, train_speaker(ds, steps=150)


def test_speaker_identical_audio_scores_one(speaker_run):
    ds, (model, _) = speaker_run
    reg = SpeakerRegistry()
    reg.add(speaker_enroll(ds.inputs[0], model, "a"))
    reg.add(speaker_enroll(ds.inputs[1], model, "b"))
    res = speaker_identify(ds.inputs[0], reg, model, threshold=0.5)
    assert res.speaker_id == "a"
    assert abs(res.score - 1.0) < 1e-12


def test_speaker_top1(speaker_run):
    _, (_, metrics) = speaker_run
    assert metrics["top1"] >= 0.9


def test_orthogonal_registry_gives_none():
    reg = SpeakerRegistry()
    for i in range(3):
        reg.add(SpeakerRecord(f"s{i}", np.eye(4)[i]))
    res = identify_embedding(np.eye(4)[3], reg, 0.5)
    assert res.speaker_id is None and res.defined and res.score == 0


def test_empty_registry_undefined():
    res = identify_embedding(np.ones(3), SpeakerRegistry())
    assert res.speaker_id is None and not res.defined and np.isnan(res.score)


def test_speaker_record_requires_unit_norm():
    with pytest.raises(ValueError):
        SpeakerRecord("x", np.array([1.0, 1.0]))


# DOA


def test_doa_single_source_within_one_cell():
    ds = synth_generate(SynthSpec("doa", n_clips=10, n_sources=1, snr_db=20, duration=0.5, seed=1))
    assert evaluate_doa(ds)["error"].max() <= 5


def test_doa_two_sources_ninety_degrees_apart():
    rng = np.random.default_rng(0)
    geo = circular_array(4)
    srcs = [(Direction.from_degrees(40.0), rng.standard_normal(4000)), (Direction.from_degrees(130.0), rng.standard_normal(4000))]
    obs, _ = simulate_scene(ArrayScene(geo, srcs, noise_std=0.1, rate=8000), 256, 128, seed=1)
    peaks = estimate_doa(obs, geo).peaks(2)
    assert sorted(angular_error(peaks, 40).tolist())[0] <= 5
    assert sorted(angular_error(peaks, 130).tolist())[0] <= 5


def test_circular_peaks_wraps():
    v = np.array([5.0, 1, 0, 1, 3, 1, 0, 4])
    assert list(circular_peaks(v)) == [0, 4]


def test_doa_network_matches_classical():
    ds = synth_generate(SynthSpec("doa", n_clips=100, n_sources=1, snr_db=20, duration=0.5, seed=2))
    model, net = train_doa(ds, epochs=20)
    _, te = ds.split()
    classical = evaluate_doa(ds, idx=te)
    assert np.all(angular_error(net["estimate"], classical["estimate"]) <= 5)


def test_doa_unknown_method():
    ds = synth_generate(SynthSpec("doa", n_clips=1, n_sources=1))
    obs, _ = simulate_scene(ds.scenes[0], 256, 128)
    with pytest.raises(ValueError):
        estimate_doa(obs, ds.scenes[0].geometry, "music")
    with pytest.raises(ValueError):
        estimate_doa(obs, ds.scenes[0].geometry, "network")


def test_doa_posterior_columns_sum_to_one():
    ds = synth_generate(SynthSpec("doa", n_clips=1, n_sources=1, duration=0.25))
    obs, _ = simulate_scene(ds.scenes[0], 256, 128)
    post = estimate_doa(obs, ds.scenes[0].geometry, "correlation").posterior
    assert np.allclose(post.sum(axis=0), 1.0)
