"""Ambisonics scene simulation, binaural decoding, and corpus tooling.

The pieces compose into a pipeline: sample a scene geometry, simulate
its ambisonic room response, render it through a fitted binaural
decoder, and mix training pairs or loudspeaker-based evaluation stimuli
from the result. `binscene.cli` drives the whole chain from a YAML
config; everything is importable on its own.
"""

__version__ = "0.1.0"

from .audioio import read_json, read_wav, write_json, write_wav
from .config import ConfigError, PipelineConfig, load_config
from .decoder import (BinauralDecoder, LoudspeakerLayout, LsDecoder,
                      decode_bilateral, decode_binaural, fit_bimagls,
                      fit_inphase_decoder, load_decoder, normalize_feeds,
                      pad_ambisonics_order, resample_decoder, save_decoder)
from .grids import lebedev_grid, min_degree_grid
from .hrtf import (HrtfSet, IirFilter, coupling_compensation_fit, crop_direct,
                   delta_hrtf_set, lfe_extend, load_hrtf_set,
                   pure_delay_hrtf_set, rigid_sphere_hrtf_set, save_hrtf_set)
from .metrics import (MetricReport, MetricRow, align_xcorr, best_ear,
                      evaluate_set, make_external_metric, normalize_level,
                      sisdr)
from .mixgen import (AugmentationSpec, CorpusJob, CorpusRenderError,
                     DatasetManifest, UtteranceRecord, augment_noise,
                     build_eval_scene, build_training_example,
                     generate_corpus, select_chunk, weight_snr_binaural)
from .room import (AmbiRir, HeadPose, RoomSpec, estimate_t60,
                   rt60_to_reflectivity, simulate_ambi_rir)
from .scene import SceneSpec, eval_scene_presets, record_rng, sample_scene
from .shmath import (ShVector, SphericalDirection, eval_real_sh,
                     rotate_to_head_frame, sh_matrix, taper_weights)
from .signals import AmbiSignal, BinauralSignal, convolve_channels
