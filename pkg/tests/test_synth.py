import json

import numpy as np
import pytest

from gaitkit.errors import ConfigError
from gaitkit.prep import read_pgm
from gaitkit.skelmap import read_pose_jsonl
from gaitkit.synth import SyntheticSpec, generate, identity_parameters, render_silhouette, walker_pose


class TestSpec:
    def test_rejects_unknown_keys(self):
        with pytest.raises(ConfigError):
            SyntheticSpec.from_dict({"identities": 2, "foo": 1})

    def test_rejects_nonpositive_counts(self):
        with pytest.raises(ConfigError):
            SyntheticSpec(identities=0)

    def test_rejects_unknown_modality(self):
        with pytest.raises(ConfigError):
            SyntheticSpec(modality="rgb")


class TestWalker:
    def test_pose_shape_and_confidence(self):
        p = identity_parameters(SyntheticSpec(identities=4), seed=0)[0]
        kps = walker_pose(p, 3)
        assert kps.shape == (17, 3)
        assert (kps[:, 2] == 1.0).all()

    def test_identity_parameters_distinct(self):
        params = identity_parameters(SyntheticSpec(identities=8), seed=0)
        for key in ("thigh", "torso", "leg_amp"):
            vals = [p[key] for p in params]
            assert len(set(np.round(vals, 6))) == len(vals)

    def test_silhouette_contains_foreground(self):
        p = identity_parameters(SyntheticSpec(identities=2), seed=1)[0]
        img = render_silhouette(walker_pose(p, 0), p["thickness"])
        assert img.dtype == np.uint8
        assert (img == 255).sum() > 200

    def test_periodicity(self):
        p = identity_parameters(SyntheticSpec(identities=2), seed=2)[0]
        a = walker_pose(p, 5)
        b = walker_pose(p, 5 + p["cycle"])
        np.testing.assert_array_equal(a, b)


class TestGenerate:
    def test_counts_and_layout(self, tmp_path):
        spec = SyntheticSpec(identities=3, sequences=2, frames=8, modality="both", noise=0.2)
        summary = generate(spec, tmp_path, seed=5)
        assert summary == {"pose_sequences": 6, "silhouette_sequences": 6}
        pose_files = sorted((tmp_path / "poses").rglob("*.jsonl"))
        assert len(pose_files) == 6
        leaf = tmp_path / "sils" / "0001" / "seq-00" / "000"
        assert len(list(leaf.glob("frame-*.pgm"))) == 8
        img = read_pgm(leaf / "frame-0000.pgm")
        assert img.ndim == 2

    def test_pose_only_modality(self, tmp_path):
        spec = SyntheticSpec(identities=2, sequences=1, frames=4, modality="pose")
        summary = generate(spec, tmp_path, seed=5)
        assert summary == {"pose_sequences": 2, "silhouette_sequences": 0}
        assert not (tmp_path / "sils").exists()

    def test_same_seed_bit_identical(self, tmp_path):
        spec = SyntheticSpec(identities=2, sequences=2, frames=6, modality="both", noise=0.3)
        generate(spec, tmp_path / "a", seed=9)
        generate(spec, tmp_path / "b", seed=9)
        for rel in sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file()):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel

    def test_noise_zero_sequences_differ_only_by_phase(self, tmp_path):
        spec = SyntheticSpec(identities=1, sequences=2, frames=24, modality="pose", noise=0.0)
        generate(spec, tmp_path, seed=11)
        meta = json.loads((tmp_path / "dataset.json").read_text())
        seqs = {s["condition"]: s for s in meta["sequences"]}
        cycle = seqs["seq-00"]["cycle"]
        shift = (seqs["seq-01"]["phase"] - seqs["seq-00"]["phase"]) % cycle
        a = read_pose_jsonl(tmp_path / "poses" / "0001" / "seq-00" / "000.jsonl")
        b = read_pose_jsonl(tmp_path / "poses" / "0001" / "seq-01" / "000.jsonl")
        for t in range(len(b) - shift):
            np.testing.assert_array_equal(b[t], a[(t + shift) % len(a)])

    def test_dataset_manifest_written(self, tmp_path):
        spec = SyntheticSpec(identities=2, sequences=1, frames=4, modality="pose")
        generate(spec, tmp_path, seed=0)
        meta = json.loads((tmp_path / "dataset.json").read_text())
        assert meta["spec"]["identities"] == 2
        assert len(meta["sequences"]) == 2
