import sys

from joint_annotator import cli
from joint_annotator.config import load_config

if __name__ == "__main__":
    load_config()
    sys.exit(cli.main(sys.argv[1:]))
