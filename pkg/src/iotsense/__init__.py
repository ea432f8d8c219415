"""Spectrum occupancy sensing and interference modelling for IoT bands."""
from ._backend import BACKEND
from .clustering import DbscanParams, PointSet, auto_cluster, dbscan
from .detection import (NoiseCalibration, OccupancyGrid, analytic_pd_rayleigh, analytic_pfa,
                        binarize, calibrate_noise, threshold_from_pfa)
from .frames import Frame, FrameSet, duty_cycle, estimate_occupancy
from .models import (ChannelModel, TemporalModel, arrival_rate, generator_matrix,
                     normalized_traffic, transition_probabilities)
from .pipeline import sense
from .simulator import TrafficSpec, generate_traffic, roc_sweep, synthesize_psd
from .spectrogram import IQRecording, Spectrogram, SpectrogramConfig, compute_spectrogram

__version__ = "0.1.0"
