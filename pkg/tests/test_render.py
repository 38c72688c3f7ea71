import numpy as np
import pytest
from PIL import Image

from reactgen.errors import ConfigError
from reactgen.motion import InteractionPair, MotionSequence
from reactgen.render import ACTOR_COLOR, BACKGROUND, REACTOR_COLOR, canvas_transform, render_motion
from reactgen.rotations import default_skeleton

SKEL = default_skeleton()
K = SKEL.joint_count


def still(frames, shift=(0.0, 0.0, 0.0)):
    return MotionSequence(np.zeros((frames, 3 * K)), np.zeros((frames, 3)), np.tile(shift, (frames, 1)))


def identity_joints(shift=(0.0, 0.0, 0.0)):
    """World joints of the rest pose by accumulating offsets along the parent chain."""
    pos = np.zeros((K, 3))
    for j, p in enumerate(SKEL.parents):
        pos[j] = np.asarray(shift) if p < 0 else pos[p] + np.asarray(SKEL.offsets[j])
    return pos


def test_identity_pose_pixels_match_hand_projection(tmp_path):
    seq = still(1)
    render_motion(seq, SKEL, tmp_path, axis="xz", size=128)
    img = np.asarray(Image.open(tmp_path / "frame_00000.png"))
    project = canvas_transform(identity_joints(), 128, "xz")
    for c, r in np.rint(project(identity_joints())).astype(int):
        assert tuple(img[r, c]) == ACTOR_COLOR
    assert tuple(img[0, 0]) == BACKGROUND


def test_views_differ(tmp_path):
    render_motion(still(1), SKEL, tmp_path / "xz", axis="xz", size=96)
    render_motion(still(1), SKEL, tmp_path / "xy", axis="xy", size=96)
    a = np.asarray(Image.open(tmp_path / "xz" / "frame_00000.png"))
    b = np.asarray(Image.open(tmp_path / "xy" / "frame_00000.png"))
    assert not np.array_equal(a, b)


def test_one_png_per_frame_and_both_people_drawn(tmp_path):
    pair = InteractionPair(still(60), still(60, (1.0, 0.0, 0.0)))
    paths = render_motion(pair, SKEL, tmp_path, size=64)
    assert len(paths) == 60 and len(list(tmp_path.glob("frame_*.png"))) == 60
    img = np.asarray(Image.open(paths[-1]))
    colors = {tuple(v) for v in img.reshape(-1, 3)}
    assert ACTOR_COLOR in colors and REACTOR_COLOR in colors


def test_bad_axis_and_size(tmp_path):
    with pytest.raises(ConfigError):
        render_motion(still(1), SKEL, tmp_path, axis="zz")
    with pytest.raises(ConfigError):
        render_motion(still(1), SKEL, tmp_path, size=10)
