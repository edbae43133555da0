"""Sidecar acceptance: probe round-trip quality and fixture compatibility."""

from __future__ import annotations

import time
from contextlib import contextmanager

import numpy as np
import torch

from thinkgate.answers import load_dataset
from thinkgate.backend import MockBackend
from thinkgate.harness import CachingBackend, GenerationCache, RunConfig, phase_generate, phase_score
from thinkgate.scorers import load_mlp_weights, mlp_forward
from thinkgate_sidecar import DumpJob, ProbeTrainConfig, export_logprob_dump, export_weights, train_probe

from conftest import N_QUESTIONS
from test_train import DIM, gaussian_blobs


@contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException:
        print(f"FAIL  {name}")
        raise
    print(f"PASS  {name}")


def test_probe_round_trip(tmp_path):
    with criterion("probe round-trip (train, export, core import, forward match)"):
        store, labels = gaussian_blobs(tmp_path)
        result = train_probe(store, labels, ProbeTrainConfig(epochs=60, seed=3, val_fraction=0.5))
        assert result.val_accuracy >= 0.95, "separable blobs below 0.95 validation accuracy"

        path = export_weights(result.net, tmp_path / "probe.json")
        loaded = load_mlp_weights(path)
        rng = np.random.default_rng(7)
        held_out = rng.normal(size=(10, DIM)).astype(np.float32)
        sidecar_out = result.net.predict_proba(torch.from_numpy(held_out)).numpy()
        for row, expected in zip(held_out, sidecar_out):
            core_out = mlp_forward(loaded, row.astype(np.float64))
            assert abs(core_out - float(expected)) < 1e-5

        values = list(labels.values())
        rng.shuffle(values)
        shuffled = dict(zip(labels.keys(), values))
        chance = train_probe(store, shuffled, ProbeTrainConfig(epochs=60, seed=3, val_fraction=0.5))
        assert abs(chance.val_accuracy - 0.5) <= 0.1, "shuffled labels left chance band"


def test_fixture_compatibility(handle, dataset_path, tmp_path):
    with criterion("sidecar-dumped fixture runs the core pipeline with zero misses"):
        out = tmp_path / "fixture.jsonl"
        job = DumpJob(dataset_path=str(dataset_path), out_path=str(out), seed=5)
        export_logprob_dump(job, handle)

        config = RunConfig.from_dict(
            {
                "dataset_path": str(dataset_path),
                "cache_dir": str(tmp_path / "cache"),
                "out_dir": str(tmp_path / "out"),
                "backend": "mock",
                "fixture_path": str(out),
                "seed": job.seed,
                "scorers": [k.value for k in job.scorers],
            }
        )
        questions = load_dataset(config.dataset_path)
        caching = CachingBackend(
            MockBackend.from_file(out), GenerationCache(config.cache_dir)
        )
        report = phase_generate(config, questions, caching)
        assert report.errors == 0
        scores = phase_score(config, questions, caching)
        n_rows = sum(len(per_q) for per_q in scores.values())
        assert n_rows == N_QUESTIONS * len(job.scorers)
