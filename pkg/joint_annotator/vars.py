# model sizes
SOFT_TAG_DIM = 100
FFNN_DIM = 400
ENCODER_DIM = 64
ENCODER_LAYERS = 2
BPE_MERGES = 200

# optimization (AdamW, batch 32, 40 epochs, lr 1e-5, λ1 = 0.4, λ2 = 0.2)
LEARNING_RATE = 1e-5
LAMBDA_POS = 0.4
LAMBDA_NER = 0.2
BATCH_SIZE = 32
EPOCHS = 40
BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
WEIGHT_DECAY = 0.01

# labels
ROOT_INDEX = 0
OUTSIDE = "O"
PUNCT_TAG = "CH"
PAD = "<pad>"
UNK = "<unk>"
MISSING = "_"

# checkpoint layout
CONFIG_FILE = "config.yaml"
SCORES_FILE = "scores.json"
MANIFEST_FILE = "params.txt"
PAYLOAD_FILE = "params.bin"
MERGES_FILE = "merges.txt"
VOCAB_DIR = "vocab"
