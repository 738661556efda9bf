"""Crash hotspot screening with NB and conditional-GAN empirical Bayes."""

from .cgan import CganModel, TrainConfig, train
from .data import ModelForm, SiteRecord, SiteTable, load_sites, save_sites
from .eb import EbEstimate, eb_cgan, eb_nb, eb_table
from .metrics import MetricReport, evaluate
from .nbglm import NbModel, fit_nb, nb_pmf
from .screening import ScreeningReport, compare, rank_sites
from .simgen import SimConfig, generate_sites

__version__ = "0.1.0"

__all__ = [
    "CganModel", "EbEstimate", "MetricReport", "ModelForm", "NbModel", "ScreeningReport",
    "SimConfig", "SiteRecord", "SiteTable", "TrainConfig", "compare", "eb_cgan", "eb_nb",
    "eb_table", "evaluate", "fit_nb", "generate_sites", "load_sites", "nb_pmf", "rank_sites",
    "save_sites", "train",
]
