"""Speech-prefixed masked language model: frozen conv audio features are
aggregated into two prefix vectors that a BERT-style encoder reads next to
the text tokens."""
from .audio import ConvStackConfig, FrameSequence, Waveform, conv_frontend, load_wav, write_wav
from .config import PREFIX_COUNT, ModelConfig, base_profile, toy_profile
from .encoder import AssembledInput, EncoderOutput, assemble, cls_regression, encode, mlm_logits, mlm_loss
from .laa import PrefixPair, attention_profile, laa_forward
from .params import ParameterStore, init_params
from .vocab import Vocab, build_vocab

__version__ = "0.1.0"
