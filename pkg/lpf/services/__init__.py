# lpf/services/__init__.py

"""
Services: synthetic world, factorization, aggregation, training and metrics
"""
from .aggregators import (AggregationResult, AttentionAggregator, attention_weights,
                          init_attention, learned_aggregate, robustness_bound,
                          spn_aggregate, uniform_aggregate)
from .factorizer import (Decoder, SoftFactor, bayes_decoder, confidence_weight, decode,
                         estimate_factor, factorize_entity, mc_error_bound, oracle_factor,
                         sample_latents)
from .metrics import (InfoBoundReport, ReliabilityTable, UncertaintyBreakdown,
                      calibration_bound, concentration_constant, ece, fit_inverse_sqrt,
                      info_bound_report, max_calibration_error, sample_complexity,
                      uncertainty_decomposition)
from .trainer import (TrainConfig, TrainReport, effective_dimension, gradient_check,
                      pac_bayes_bound, stability_bound, train)
from .world import (AggDataset, Entity, World, WorldConfig, build_world, corrupt_entity,
                    make_agg_dataset, measure_correlation, sample_entity)

__all__ = [
    "AggDataset",
    "AggregationResult",
    "AttentionAggregator",
    "Decoder",
    "Entity",
    "InfoBoundReport",
    "ReliabilityTable",
    "SoftFactor",
    "TrainConfig",
    "TrainReport",
    "UncertaintyBreakdown",
    "World",
    "WorldConfig",
    "attention_weights",
    "bayes_decoder",
    "build_world",
    "calibration_bound",
    "concentration_constant",
    "confidence_weight",
    "corrupt_entity",
    "decode",
    "ece",
    "effective_dimension",
    "estimate_factor",
    "factorize_entity",
    "fit_inverse_sqrt",
    "gradient_check",
    "info_bound_report",
    "init_attention",
    "learned_aggregate",
    "make_agg_dataset",
    "max_calibration_error",
    "mc_error_bound",
    "measure_correlation",
    "oracle_factor",
    "pac_bayes_bound",
    "robustness_bound",
    "sample_complexity",
    "sample_entity",
    "sample_latents",
    "spn_aggregate",
    "stability_bound",
    "train",
    "uncertainty_decomposition",
    "uniform_aggregate",
]
