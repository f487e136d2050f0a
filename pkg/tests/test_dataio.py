import itertools
import json

import numpy as np
import pytest

from rgbdpose import dataio
from rgbdpose.errors import DataError
from rgbdpose.skeleton import FULL14, REDUCED10
from rgbdpose.types import (
    AnnotationSet, BBox, FrameAnnotation, Joint, Joint3d, Pose, Pose3d, RgbdFrame,
)


def make_frame(rng, h=40, w=48, index=0):
    rgb = rng.integers(0, 255, (h, w, 3)).astype(np.uint8)
    depth = rng.integers(500, 4000, (h, w)).astype(np.uint16)
    return RgbdFrame(rgb=rgb, depth=depth, index=index)


def full_pose(offset=0.0, score=0.0):
    joints = tuple(Joint(part_id=i, x=10.0 + i + offset, y=20.0 + 2 * i + offset)
                   for i in range(14))
    return Pose(joints=joints, skeleton_kind="full14", total_score=score)


class TestFrames:
    def test_size_mismatch_rejected(self, rng):
        rgb = rng.integers(0, 255, (40, 48, 3)).astype(np.uint8)
        depth = rng.integers(0, 4000, (40, 50)).astype(np.uint16)
        with pytest.raises(DataError, match=r"(40, 48).*(40, 50)"):
            RgbdFrame(rgb=rgb, depth=depth, index=0)

    def test_sequence_roundtrip_order(self, rng, tmp_path):
        frames = [make_frame(rng, index=i) for i in range(3)]
        pairs = [dataio.write_frame(tmp_path, f"f{i}", f) for i, f in enumerate(frames)]
        dataio.write_manifest(tmp_path, pairs)
        loaded = list(dataio.load_sequence(tmp_path))
        assert [f.index for f in loaded] == [0, 1, 2]
        for a, b in zip(frames, loaded):
            assert (a.rgb == b.rgb).all()
            assert (a.depth == b.depth).all()

    def test_manifest_permutations_preserved(self, rng, tmp_path):
        """Stream order equals manifest order for every 5-frame permutation."""
        frames = [make_frame(rng, index=i) for i in range(5)]
        pairs = [dataio.write_frame(tmp_path, f"f{i}", f) for i, f in enumerate(frames)]
        markers = [f.depth[0, 0] for f in frames]
        for perm in itertools.permutations(range(5)):
            dataio.write_manifest(tmp_path, [pairs[i] for i in perm])
            loaded = list(dataio.load_sequence(tmp_path))
            assert [f.depth[0, 0] for f in loaded] == [markers[i] for i in perm]

    def test_missing_depth_file_reported(self, rng, tmp_path):
        frame = make_frame(rng)
        rgb_rel, depth_rel = dataio.write_frame(tmp_path, "f0", frame)
        (tmp_path / depth_rel).unlink()
        dataio.write_manifest(tmp_path, [(rgb_rel, depth_rel)])
        with pytest.raises(FileNotFoundError, match=depth_rel):
            list(dataio.load_sequence(tmp_path))

    def test_320x240_accepted(self, rng, tmp_path):
        rgb = rng.integers(0, 255, (240, 320, 3)).astype(np.uint8)
        depth = rng.integers(500, 4000, (240, 320)).astype(np.uint16)
        pair = dataio.write_frame(tmp_path, "f0", RgbdFrame(rgb, depth, 0))
        dataio.write_manifest(tmp_path, [pair])
        (frame,) = dataio.load_sequence(tmp_path)
        assert frame.width == 320 and frame.height == 240


class TestAnnotations:
    def write(self, tmp_path, records):
        path = tmp_path / "annotations.json"
        path.write_text(json.dumps(records))
        return path

    def ann_record(self, frame, names, h=100, w=60):
        return {"frame": frame, "bbox": {"h": h, "w": w},
                "joints": [{"part": n, "x": float(i), "y": float(2 * i)}
                           for i, n in enumerate(names)]}

    def test_two_frames_fourteen_joints(self, tmp_path):
        path = self.write(tmp_path, [self.ann_record(0, FULL14.names),
                                     self.ann_record(1, FULL14.names)])
        ann = dataio.load_annotations(path)
        assert len(ann) == 2
        assert ann.skeleton_kind == "full14"

    def test_thirteen_joints_rejected(self, tmp_path):
        rec = self.ann_record(0, FULL14.names)
        rec["joints"] = rec["joints"][:13]
        path = self.write(tmp_path, [self.ann_record(0, FULL14.names), rec])
        with pytest.raises(DataError):
            dataio.load_annotations(path, skeleton=FULL14)

    def test_empty_list_ok(self, tmp_path):
        path = self.write(tmp_path, [])
        ann = dataio.load_annotations(path)
        assert len(ann) == 0

    def test_roundtrip_identity(self, tmp_path):
        path = self.write(tmp_path, [self.ann_record(0, REDUCED10.names),
                                     self.ann_record(4, REDUCED10.names)])
        ann = dataio.load_annotations(path)
        out = tmp_path / "copy.json"
        dataio.write_annotations(ann, out)
        again = dataio.load_annotations(out)
        assert again == ann

    def test_non_increasing_frames_rejected(self):
        entry = FrameAnnotation(frame=2, bbox=BBox(10, 10), pose=full_pose())
        with pytest.raises(DataError):
            AnnotationSet(entries=(entry, entry))


class TestPoseJson:
    def test_write_counts(self, tmp_path):
        joints = tuple(Joint(part_id=i, x=float(i), y=float(i)) for i in range(10))
        pose = Pose(joints=joints, skeleton_kind="reduced10")
        path = tmp_path / "poses.json"
        dataio.write_pose_json([(0, pose)], path)
        records = json.loads(path.read_text())
        assert len(records) == 1
        assert len(records[0]["joints"]) == 10

    def test_roundtrip_identity_2d(self, rng, tmp_path):
        poses = [(i, full_pose(offset=rng.uniform(0, 5), score=float(rng.normal())))
                 for i in range(3)]
        path = tmp_path / "poses.json"
        dataio.write_pose_json(poses, path)
        assert dataio.read_pose_json(path) == poses

    def test_roundtrip_identity_3d_with_missing_z(self, tmp_path):
        joints = tuple(
            Joint3d(part_id=i, x=1.5 * i, y=2.25 * i, z=None if i == 3 else 1000.0 + i)
            for i in range(14))
        pose = Pose3d(joints=joints, skeleton_kind="full14", total_score=1.25)
        path = tmp_path / "poses.json"
        dataio.write_pose_json([(7, pose)], path)
        assert dataio.read_pose_json(path) == [(7, pose)]

    def test_score_precision_preserved(self, tmp_path):
        pose = full_pose(score=8.49)
        path = tmp_path / "poses.json"
        dataio.write_pose_json([(0, pose)], path)
        (_, loaded), = dataio.read_pose_json(path)
        assert loaded.total_score == 8.49

    def test_empty_pose_list(self, tmp_path):
        path = tmp_path / "poses.json"
        dataio.write_pose_json([], path)
        assert dataio.read_pose_json(path) == []

    def test_unwritable_path(self):
        pose = full_pose()
        with pytest.raises(IOError):
            dataio.write_pose_json([(0, pose)], "/nonexistent-dir/poses.json")
