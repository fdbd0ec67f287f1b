"""Video captioning with multi-scale temporal attention, visual-action
semantic attention, a temporal objects-action graph transformer and
teacher-to-student distillation, on a small numpy autodiff kernel."""

from .caption_model import Vocabulary, beam_decode, build_vocab, decoder_forward, greedy_decode
from .features import CaptionRecord, FeatureBundle, load_bundle, save_bundle, synth_dataset, synth_generate
from .graph import build_action_graph, build_object_graph, graph_transformer_encode, merge_graphs
from .metrics import bleu4, cider, evaluate, rouge_l
from .numerics import Tape, Tensor
from .semantic_aware import visual_action_attention
from .temporal_attention import AttentionParams, WindowConfig, fuse_long_short, long_term_attention, short_term_attention
from .training import TrainConfig, infer, train

__version__ = "0.1.0"
