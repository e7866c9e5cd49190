"""Discrete speech units: encode audio into unit, duration and pitch
streams, code them into compact bitstreams, resynthesize audio, probe for
speaker information and continue unit sequences with an n-gram model."""
from __future__ import annotations

from .audio import Waveform, read_wav, resample, write_wav
from .codec import (Bitstream, UnigramModel, bitrate_entropy, bitrate_fixed, bitrate_report, decode_bitstream,
                    encode_bitstream, fit_unigram)
from .errors import UnitCodecError
from .features import PRESETS, FeatureConfig, FeatureSequence, export_features, import_features, log_mel, mfcc
from .pitch import PitchTrack, SpeakerStats, normalize_per_speaker, normalize_prefix, speaker_stats, track_pitch
from .quantizer import Codebook, UnitSequence, distortion, kmeans_train, quantize
from .streams import EncodedUtterance, align_pitch, dedup, inflate
from .unitlm import NGramModel, continue_speech, perplexity, sample_continuation, train_ngram
from .vocoder import SynthesisConfig, griffin_lim, mel_to_linear, resynthesize, units_to_features

__version__ = "0.1.0"
