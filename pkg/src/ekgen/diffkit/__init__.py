from .tensor import (Tensor, ShapeMismatch, as_tensor, concat, stack, softmax,
                     log_softmax, cross_entropy_label_smoothed, l2_distance,
                     layer_norm, embedding_lookup, parameter, zeros, use_dtype,
                     current_dtype)
from .nn import (Module, Linear, LSTMCell, lstm_cell, BiLSTM, bilstm_sequence,
                 MultiHeadAttention, multi_head_attention, FeedForward,
                 LayerNorm, TransformerEncoderLayer, TransformerDecoderLayer,
                 causal_mask, sinusoidal_positions)
from .optim import Adam, lr_schedule
from .gradcheck import grad_check, GradCheckReport
from .checkpoint import save_arrays, load_arrays, CheckpointError, MAGIC, EMBED_MAGIC
