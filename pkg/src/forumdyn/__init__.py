"""Forum discussion dynamics: topics, weekly series, joint segmentation,
and derived analytics."""

from .corpus import (
    IngestReport,
    ProcessedCorpus,
    RawPost,
    Vocabulary,
    ingest,
    load_stopwords,
    preprocess,
    select_forums,
)
from .lda import LdaHyperparams, TopicModel, infer_doc, perplexity, top_words, train_lda
from .timeseries import ForumSeries, WeekRange, build_series, global_week_range
from .bphmm import (
    BPHMMModel,
    McmcConfig,
    StateSequence,
    TransitionModel,
    decode,
    fit_bphmm,
    sample_ibp,
    seq_loglik,
    viterbi,
)
from .analysis import (
    AnomalyReport,
    Dendrogram,
    SimilarityMatrix,
    VolatilityReport,
    activity_peaks,
    anomaly_report,
    cluster,
    cross_entropy_series,
    rare_states,
    similarity_matrix,
    smooth,
    transition_events,
    volatility_hmm,
    volatility_report,
)

__version__ = "0.1.0"
