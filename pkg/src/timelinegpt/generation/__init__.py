from timelinegpt.generation.sampler import (DemographicPromptSampler, SampledSequence, SamplingConfig, load_experts,
                                            next_token_distribution, sample_sequence)
from timelinegpt.generation.pool import ExpertCounts, SyntheticCorpus, generate_pool
from timelinegpt.generation.convert import (ConversionReport, SummaryStats, convert_to_tables, repair_truncated,
                                            summary_stats)
