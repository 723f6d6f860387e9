from pathlib import Path
from dotenv import dotenv_values, load_dotenv
import os

from .errors import InputError

load_dotenv()

#LOGGING
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()
LOG_FORMAT = os.getenv("LOG_FORMAT", "%(asctime)s %(levelname)s %(name)s: %(message)s")
LOG_SLOW_STEPS = os.getenv("LOG_SLOW_STEPS", "true").lower() == "true"
SLOW_STEP_THRESHOLD_MS = int(os.getenv("SLOW_STEP_THRESHOLD_MS", "2000"))

# Run registry; empty means a sqlite file next to the outputs
DATABASE_URL = os.getenv("DATABASE_URL")
DEFAULT_OUT_DIR = Path(os.getenv("DUALSHOT_OUT_DIR", "runs"))

DEFAULT_SEED = int(os.getenv("DUALSHOT_SEED", "0"))
DEFAULT_THREADS = int(os.getenv("DUALSHOT_THREADS", str(os.cpu_count() or 1)))

# "0.1,0.2" switches encode/decode to SSD variances
BOX_VARIANCES = tuple(
    float(v) for v in os.getenv("BOX_VARIANCES", "").split(",") if v.strip()
) or None
ANCHOR_RATIO_MODE = os.getenv("ANCHOR_RATIO_MODE", "width").lower()
ROUND_CONTAIN = os.getenv("ROUND_CONTAIN", "false").lower() == "true"

# Full-size detector constants
INPUT_SIZE = 640
ANCHOR_STRIDES = (4, 8, 16, 32, 64, 128)
ANCHOR_SCALES = (16, 32, 64, 128, 256, 512)
ANCHOR_RATIO = 1.5
MATCH_THRESHOLD = 0.4
TRADITIONAL_MATCH_THRESHOLD = 0.35
NMS_OVERLAP = 0.3
TOP_PRE_NMS = 5000
TOP_POST_NMS = 750
SCORE_PREFILTER = 0.01

# Keys accepted by --config files, grouped by the object they configure
CONFIG_KEYS = {
    "net": {
        "input_size", "backbone_channels", "fem_channels", "use_fem", "seed",
        "fem_dilation", "ratio_mode", "init_gain", "pixel_mean",
    },
    "train": {
        "lr", "lr_schedule", "momentum", "weight_decay", "batch", "steps",
        "log_every", "use_pal", "match_threshold", "force_best",
        "warmup_steps", "warmup_ratio", "clip_norm",
    },
    "aug": {
        "p_anchor_sampling", "anchor_scale_set", "use_iam", "restrict_scale_choice",
    },
    "loss": {"beta", "lambda", "neg_pos_ratio", "eq2_literal_grouping"},
}


def read_config_file(path) -> dict:
    """Parse a `key = value` config file into {section: {key: raw string}}."""
    config_path = Path(path)
    if not config_path.is_file():
        raise InputError(f"config file not found: {config_path}")
    values = dotenv_values(config_path)
    sections = {name: {} for name in CONFIG_KEYS}
    for key, value in values.items():
        normalized = key.strip().lower()
        for section, keys in CONFIG_KEYS.items():
            if normalized in keys:
                sections[section][normalized] = (value or "").strip()
                break
        else:
            raise InputError(f"{config_path}: unknown config key {key!r}")
    return sections
