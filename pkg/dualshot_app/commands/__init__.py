from .anchors import anchors_group
from .augment import augment_preview
from .evaluate import evaluate
from .gradcheck import gradcheck
from .registry import runs_group
from .stats import match_stats
from .train import predict_cmd, train_toy

ALL_COMMANDS = (
    anchors_group,
    match_stats,
    augment_preview,
    gradcheck,
    train_toy,
    predict_cmd,
    evaluate,
    runs_group,
)

__all__ = ["ALL_COMMANDS"]
