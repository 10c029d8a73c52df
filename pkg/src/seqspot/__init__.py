"""Small-footprint streaming keyword spotter.

A frame-labeled recurrent detector with an attention-pooling baseline,
a causal PCEN mel front-end, a streaming decoder with probability
smoothing, and an ROC harness reporting FRR at a false-alarm budget.
"""

__version__ = "0.1.0"

from .features import FrameSpec, FrontendConfig, PcenConfig, Waveform
from .labeling import Alignment, KeywordSpec, LabelSequence, labels_from_alignment
from .models import AttentionModel, EncoderConfig, Seq2SeqModel, param_count
from .streaming import StreamingDecoder, TriggerEvent, run_stream

__all__ = [
    "Alignment",
    "AttentionModel",
    "EncoderConfig",
    "FrameSpec",
    "FrontendConfig",
    "KeywordSpec",
    "LabelSequence",
    "PcenConfig",
    "Seq2SeqModel",
    "StreamingDecoder",
    "TriggerEvent",
    "Waveform",
    "labels_from_alignment",
    "param_count",
    "run_stream",
]
