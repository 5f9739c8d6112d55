import pytest

from crackbench.config import PipelineConfig, load_config, parse_config
from crackbench.errors import ConfigInvalid

GOOD = """\
[classes]
labels = ["D00", "D10", "D20", "D40"]

[crop]
height = 330

[blackout]
lower = [127, 36, 33]
upper = [179, 255, 255]

[merge]
rules = { D00 = "crack", D10 = "crack", D20 = "crack", D40 = "pothole" }

[split]
ratios = [0.7, 0.2, 0.1]
seed = 42

[eval]
iou_threshold = 0.5
ap_method = "101"
"""


def test_defaults():
    cfg = load_config(None)
    assert cfg == PipelineConfig()
    assert cfg.crop.target_height == 420
    assert cfg.hsv_range.lower == (127, 36, 33)


def test_parse_good():
    cfg = parse_config(GOOD, "good.toml")
    assert cfg.labels == ("D00", "D10", "D20", "D40")
    assert cfg.crop_height == 330 and cfg.seed == 42 and cfg.ap_method == "101"
    assert cfg.merge_rule().classes.labels == ("crack", "pothole")


def test_load_from_file(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text(GOOD)
    assert load_config(path).seed == 42


def test_missing_file(tmp_path):
    with pytest.raises(ConfigInvalid):
        load_config(tmp_path / "nope.toml")


@pytest.mark.parametrize(
    "text,line,fragment",
    [
        ("[split]\nseed = 1\nratios = [0.5, 0.2, 0.1]\n", 3, "ratios"),
        ("[eval]\n\niou_threshold = 1.5\n", 3, "iou_threshold"),
        ("[crop]\nheight = 0\n", 2, "height"),
        ("[blackout]\nlower = [200, 0, 0]\n", 2, "lower"),
        ("[classes]\nlabels = [\"a\", \"a\"]\n", 2, "labels"),
        ("[eval]\nap_method = \"11\"\n", 2, "ap_method"),
        ("[merge]\nrules = { X = \"y\" }\n", 2, "rules"),
        ("[split]\nseed = -1\n", 2, "seed"),
        ("[split]\nbogus = 1\n", 2, "bogus"),
    ],
)
def test_errors_name_line_and_key(text, line, fragment):
    with pytest.raises(ConfigInvalid) as info:
        parse_config(text, "c.toml")
    assert info.value.source == f"c.toml:{line}"
    assert fragment in str(info.value)
    assert info.value.category == "config"


def test_unknown_table():
    with pytest.raises(ConfigInvalid, match="unknown table"):
        parse_config("[nope]\nx = 1\n")


def test_bad_toml():
    with pytest.raises(ConfigInvalid):
        parse_config("[split\n")


def test_wrong_type():
    with pytest.raises(ConfigInvalid, match="seed"):
        parse_config("[split]\nseed = \"x\"\n")


def test_override_validates():
    cfg = PipelineConfig()
    assert cfg.override(seed=7, iou_threshold=None).seed == 7
    with pytest.raises(ConfigInvalid):
        cfg.override(iou_threshold=0)
