from .denoiser import WindowDenoiser, alignment_mask
from .sampler import GeneratedSequence, denoise_window, sample_offsets, sample_sequence, window_plan
from .schedule import NoiseSchedule, make_schedule, q_sample
from .training import LatentDiffusion, TrainingSequence, ldm_loss, sample_windows, train_ldm, window_mse

__all__ = [
    "GeneratedSequence", "LatentDiffusion", "NoiseSchedule", "TrainingSequence", "WindowDenoiser",
    "alignment_mask", "denoise_window", "ldm_loss", "make_schedule", "q_sample", "sample_offsets",
    "sample_sequence", "sample_windows", "train_ldm", "window_mse", "window_plan",
]
