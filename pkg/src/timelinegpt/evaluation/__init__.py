from timelinegpt.evaluation.metrics import BootstrapResult, auprc, auroc, binary_report, bootstrap, report_frame
from timelinegpt.evaluation.cohorts import (CohortSpec, LabeledExample, PathwayResult, history_until, labeled_cohort,
                                            pathway_cohort, read_cohort, write_cohort)
from timelinegpt.evaluation.fidelity import cohort_concept_prevalence, concept_prevalence, prevalence_report
from timelinegpt.evaluation.probing import (ProbeResult, bow_baseline, bow_features, bow_matrix, concept_vocabulary,
                                            fit_logistic, linear_probe, sequence_representations, split_examples)
