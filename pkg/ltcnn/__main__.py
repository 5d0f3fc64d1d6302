import sys

from ltcnn.cli import main

sys.exit(main())
