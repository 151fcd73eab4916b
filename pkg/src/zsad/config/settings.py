import os
from dotenv import load_dotenv
load_dotenv()
# ---- Backbone ----
ZSAD_WEIGHTS_PATH = os.environ.get("ZSAD_WEIGHTS_PATH")    # used when the run config gives none
ZSAD_DEVICE = os.environ.get("ZSAD_DEVICE", "cpu")
MOCK_ENCODER_SEED = 0

# ---- Data loading ----
ZSAD_NUM_WORKERS = int(os.environ.get("ZSAD_NUM_WORKERS", "0"))
MANIFEST_VERSION = 1

# ---- Outputs ----
ZSAD_OUTPUT_DIR = os.environ.get("ZSAD_OUTPUT_DIR", "out")
CHECKPOINT_VERSION = 1
CHECKPOINT_MAGIC = b"ZSADPRM1"
CHECKPOINT_FILE = "prompts.ckpt"
TRAIN_LOG_FILE = "train_log.jsonl"
CONFIG_SNAPSHOT_FILE = "resolved_config.yaml"
REPORT_JSON_FILE = "report.json"
REPORT_TABLE_FILE = "report.txt"

# ---- Scoring ----
PROBABILITY_CLAMP = 1e-7

# ---- Mock backbone ----
# The two-way softmax saturates on the mock at 0.0042.
MOCK_TEMPERATURE = 0.07
MOCK_RESOLUTION = 224
MOCK_EMBED_DIM = 64
