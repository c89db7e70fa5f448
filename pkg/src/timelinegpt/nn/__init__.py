from timelinegpt.nn.autodiff import NonFiniteError, gamma_log_pdf, grad_check
from timelinegpt.nn.model import ModelConfig, ModelOutput, TimelineGPT, attention_mask
from timelinegpt.nn.losses import (IGNORE_INDEX, AttSupervision, LossBreakdown, extract_representation,
                                   loss_gradient_error, td_loss, total_loss, tte_loss)
from timelinegpt.nn.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
