from .classification import AurocResult, auroc, binary_auroc, classify_generated, preprocess_for_classifier
from .fidelity import (
    ClassifierFeatureExtractor,
    FeatureSet,
    GaussianStats,
    RandomProjectionExtractor,
    extract_features,
    fid,
    fit_gaussian,
    frechet_distance,
    get_extractor,
    register_extractor,
)
from .msssim import diversity_by_token_length, intra_prompt_diversity, ms_ssim
from .oracle import ClassifierHyperparams, OracleClassifier, toy_label_matrix, train_classifier
from .probe import chexpert_at_10, chexpert_at_k, forgetting_probe, text_embeddings
from .report import EvalReport, read_table, write_table
from .retrieval import RetrievalPool, image_text_retrieve, rank_candidates, retrieval_precision_at_k
from .text import bleu4, fact_ent, fact_entnli, label_f1, rouge_l, toy_captioner, toy_ner, toy_nli
