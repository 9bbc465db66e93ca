class AppConfig:
    """Application configuration constants"""

    # Numerics
    RNG_ALGORITHM = "PCG64"
    DEFAULT_SEED = 1234
    FINITE_DIFF_STEP = 1e-5
    LOG_FLOOR = 1e-10  # coverage floor inside the log
    NORMALIZATION_TOLERANCE = 1e-9

    # Oracle guards
    BRUTE_FORCE_MAX_FRAMES = 8
    BRUTE_FORCE_MAX_LABELS = 5
    BRUTE_FORCE_MAX_SYMBOLS = 4
    EXHAUSTIVE_MAX_CANDIDATES = 10 ** 6

    # Attention validation
    ATTENTION_ROW_TOLERANCE = 1e-6

    # Decoding defaults
    DEFAULT_BEAM_WIDTH = 8
    DEFAULT_MAX_SYMBOLS_PER_STEP = 10
    DEFAULT_MAX_OUTPUT_LEN = 64

    # Language model
    DEFAULT_LM_ORDER = 4
    DEFAULT_LM_K = 0.1
    LM_FORMAT_VERSION = 1
    SENTENCE_START = "<s>"
    SENTENCE_END = "</s>"
    WORD_BOUNDARY = " "

    # Network
    MODEL_FORMAT_VERSION = 1
    MODEL_MAGIC = "TRANSDUCER-MODEL"
    DEFAULT_CONV_KERNEL = 5
    DEFAULT_CONV_CHANNELS = 4
    FORWARD_ONLY_PARITY = 0.15

    # Dataset files
    DATASET_FORMAT_VERSION = 1
    DATASET_SPLITS = ("train", "dev", "test")
    DATASET_SUFFIX = ".utts"
    LM_CORPUS_FILE = "lm_corpus.txt"
    PROTOTYPES_FILE = "prototypes.csv"

    # Experiment configs
    CONFIG_DIR = "config"
    DEFAULT_EXPERIMENT_CONFIG = "config/experiment_defaults.json"
    SMOKE_EXPERIMENT_CONFIG = "config/smoke_experiment.json"
    DEFAULT_OUT_DIR = "./runs"

    # Report settings
    CSV_FLOAT_FORMAT = "%.6f"
    PGM_MAX_VALUE = 255
    MODEL_KINDS = ("ctc", "rnnt", "attention")

    # CLI exit codes
    EXIT_OK = 0
    EXIT_VALIDATION = 2
    EXIT_NUMERICAL = 3

    # Environment overrides (read through python-dotenv)
    ENV_LOG_LEVEL = "TRANSDUCER_LOG_LEVEL"
    ENV_OUT_DIR = "TRANSDUCER_OUT_DIR"
    ENV_SEED = "TRANSDUCER_SEED"
    DEFAULT_LOG_LEVEL = "INFO"
    LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
