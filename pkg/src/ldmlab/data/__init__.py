from .filtering import (
    FilterResult,
    Splits,
    build_corpus,
    cap_no_finding,
    count_table,
    filter_reports,
    make_splits,
)
from .grammar import (
    CHEXPERT_CLASSES,
    FINDING_CLASSES,
    TOY_CLASSES,
    Finding,
    label_extract,
    parse_findings,
)
from .manifest import read_manifest, write_manifest
from .records import CorpusSpec, ReportRecord, corpus_fingerprint
from .toy import general_corpus_generate, render_toy_image, toy_corpus_generate
