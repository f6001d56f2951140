"""Block-term knowledge-graph embeddings: partitioned embeddings scored by small Tucker cores."""

from .data import (DatasetError, TripleStore, Vocabulary, augment_inverse_relations,
                   load_dataset, load_dataset_dir, write_split)
from .efficiency import (EfficiencyReport, efficiency, efficiency_report, expressiveness,
                         optimal_partition_size, param_count)
from .evaluation import (Direction, MetricsReport, RankResult, evaluate, evaluate_bruteforce,
                         filtered_rank, rank_triple)
from .model import (CheckpointError, ConfigError, FixedCore, ModelConfig, ModelState, Site,
                    SiteConfig, forward_score, forward_scores_1N, forward_scores_heads,
                    init_model, load_checkpoint, make_fixed_core, save_checkpoint)
from .scoring import (ShapeError, block_diagonal_score, matching_matrix, mei_score,
                      rescal_score, sparse_tucker_score, trilinear_score, tucker_score_local)
from .training import (LossMode, TrainConfig, TrainingDiverged, adam_step, backward,
                       init_optimizer, l3_penalty, loss_binary_ce, loss_softmax_1N,
                       negative_sample, train)

__version__ = "0.1.0"
