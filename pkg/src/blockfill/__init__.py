"""Block matrix completion under combinatorial distribution shift."""
from .balancing import (balance_embeddings, balanced_factorization, cov_bal, proj_bal, psi_bal,
                        sep_rank, sep_rank_from_sigmas)
from .datagen import (GroundTruthInstance, KappaReport, compute_kappas, make_example,
                      make_instance_exp, make_instance_poly, make_instance_random,
                      make_uniform_blocks, sample_labeled, sample_unlabeled)
from .embeddings import EmbeddingPair
from .erm import (DiagnosticsTrace, ErmConfig, Objective, SolverConfig, dim_reduce, distill_fit,
                  erm_double_stage, estimate_covariances, fit_factorized)
from .errors import (BlockfillError, IllConditioned, InapplicableTheorem, InvalidInput,
                     NoAdmissibleRank, RankDeficient)
from .partition import Partition, partition_constants, partition_report, well_tempered_partition
from .risk import (RiskReport, block_risks, conditioning_check, coverage_inequalities, delta_errors,
                   risk, risk_r, risk_report, spectral_event_check)
from .spectral import (SpectralSummary, orthogonal_procrustes, relative_gap, summarize,
                       svd_perturbation_check, tail_norm, truncated_svd)

__version__ = "0.1.0"
