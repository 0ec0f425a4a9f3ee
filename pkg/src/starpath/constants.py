"""Starpath project-wide constants: file formats, thresholds, output names and exit codes."""

from __future__ import annotations

# ── Trace file format ────────────────────────────────────────────────
TRACE_MAGIC = b"SPTH"
TRACE_VERSION = 2
TRACE_SUFFIX = ".spth"
TRACE_META_SUFFIX = ".meta.json"
# Seeds are stored as signed 64-bit fields.
SEED_LIMIT = 2 ** 63

# ── IDX (MNIST) file format, big-endian ──────────────────────────────
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

# ── Numerical thresholds ─────────────────────────────────────────────
DIVERGENCE_THRESHOLD = 1e12
PLANTED_TOLERANCE = 1e-12
AUDIT_TOLERANCE = 1e-9
REPLAY_TOLERANCE = 1e-9
DEFAULT_EPS_LOSS = 1e-3
FD_STEP = 1e-5

# ── Recording defaults ───────────────────────────────────────────────
DEFAULT_RECORD_EVERY = 10

# ── Report files (CSV schemas are part of the public contract) ──────
EPOCHS_CSV = "epochs.csv"
ITERS_CSV = "iters.csv"
AUDITS_CSV = "audits.csv"
SUBSEQ_CSV = "subsequences.csv"
REPORT_JSON = "report.json"

EPOCHS_HEADER = ["epoch", "e_B", "dist", "full_loss", "variance", "weight_norm"]
ITERS_HEADER = ["k", "epoch", "t", "xi", "e_k", "component_loss"]
AUDITS_HEADER = ["epoch", "checked", "vacuous", "violated", "slack_used"]
SUBSEQ_HEADER = ["v", "epoch", "post_update", "pre_update"]
ALT_EPOCHS_HEADER = ["epoch", "e_B"]

# ── Plot files ───────────────────────────────────────────────────────
DISTANCE_SVG = "distance.svg"
RESIDUAL_SVG = "residual.svg"
FRACTION_SVG = "fraction.svg"
NORM_SVG = "norm.svg"
SUBSEQ_SVG = "subsequence.svg"

# ── Environment ──────────────────────────────────────────────────────
ENV_PREFIX = "STARPATH"
ENV_OUTPUT_DIR = "STARPATH_OUT"
ENV_MNIST_DIR = "STARPATH_MNIST_DIR"

# ── CLI exit codes ───────────────────────────────────────────────────
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_FINGERPRINT = 4
EXIT_MISSING_REPORT = 5
